#include <cstdint>
#include <cstdlib>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "imglong/configio.hpp"
#include "imglong/dataio.hpp"
#include "imglong/pipeline.hpp"

namespace {

int usage(std::ostream& os, int rc) {
    os << "usage: imglong <subcommand> [options]\n"
          "\n"
          "subcommands:\n"
          "  generate      sample latents, render images, simulate trajectories\n"
          "  select-dims   rank latent dimensions by trajectory influence\n"
          "  fit-eb        empirical Bayes estimates for every subject and noise level\n"
          "  train         fit one ridge predictor per noise level\n"
          "  predict       score the test split with the trained predictors\n"
          "  evaluate      metrics, bootstrap CIs and the NLL table\n"
          "  pipeline      all of the above in order\n"
          "  verify        re-check dataset checksums against the manifest\n"
          "\n"
          "options:\n"
          "  --config FILE   JSON run configuration (defaults apply otherwise)\n"
          "  --seed N        override the master seed\n"
          "  --out DIR       override the output directory\n"
          "  --levels CSV    override the sigma2 level set, e.g. 0,1,9\n"
          "  --subjects N    override the subject count\n"
          "  --check         evaluate/pipeline only: exit 3 unless report gates pass\n";
    return rc;
}

std::vector<double> parse_levels(const std::string& csv) {
    std::vector<double> out;
    std::string token;
    std::istringstream is(csv);
    while (std::getline(is, token, ','))
        out.push_back(imglong::dataio::detail::parse_real(token, "--levels"));
    if (out.empty()) throw std::invalid_argument("--levels: empty level list");
    return out;
}

long long parse_count(const std::string& s, const char* flag) {
    return imglong::dataio::detail::parse_id(s, flag);
}

struct cli_args {
    std::string subcommand;
    std::optional<std::string> config_file;
    std::optional<std::uint64_t> seed;
    std::optional<std::string> out;
    std::optional<std::vector<double>> levels;
    std::optional<long long> subjects;
    bool check = false;
};

cli_args parse_args(int argc, char** argv) {
    cli_args args;
    args.subcommand = argv[1];
    for (int i = 2; i < argc; ++i) {
        const std::string flag = argv[i];
        auto value = [&]() -> std::string {
            if (i + 1 >= argc) throw std::invalid_argument(flag + " needs a value");
            return argv[++i];
        };
        if (flag == "--config")
            args.config_file = value();
        else if (flag == "--seed")
            args.seed = static_cast<std::uint64_t>(parse_count(value(), "--seed"));
        else if (flag == "--out")
            args.out = value();
        else if (flag == "--levels")
            args.levels = parse_levels(value());
        else if (flag == "--subjects")
            args.subjects = parse_count(value(), "--subjects");
        else if (flag == "--check")
            args.check = true;
        else
            throw std::invalid_argument("unknown option " + flag);
    }
    return args;
}

imglong::config::run_config resolve_config(const cli_args& args) {
    imglong::config::run_config cfg;
    if (args.config_file) cfg = imglong::config::load_config(*args.config_file);
    if (args.seed) cfg.master_seed = *args.seed;
    if (args.out) cfg.out_dir = *args.out;
    if (args.levels) cfg.levels.levels = *args.levels;
    if (args.subjects) cfg.n_subjects = *args.subjects;
    cfg.validate();
    return cfg;
}

int report_gates(const imglong::config::run_config& cfg) {
    const auto failures = imglong::pipeline::check_gates(cfg);
    if (failures.empty()) {
        std::cout << "all report gates passed\n";
        return 0;
    }
    for (const auto& f : failures) std::cerr << "gate failed: " << f << '\n';
    return 3;
}

int run(const cli_args& args) {
    namespace pl = imglong::pipeline;

    if (args.check && args.subcommand != "evaluate" && args.subcommand != "pipeline")
        throw std::invalid_argument("--check only applies to evaluate and pipeline");

    const auto cfg = resolve_config(args);

    if (args.subcommand == "generate") {
        pl::cmd_generate(cfg);
    } else if (args.subcommand == "select-dims") {
        pl::cmd_select_dims(cfg);
    } else if (args.subcommand == "fit-eb") {
        const auto summary = pl::cmd_fit_eb(cfg);
        if (summary.fraction_converged() < pl::eb_convergence_threshold) {
            std::cerr << "error: empirical Bayes convergence "
                      << summary.fraction_converged() << " below threshold "
                      << pl::eb_convergence_threshold << '\n';
            return 2;
        }
    } else if (args.subcommand == "train") {
        pl::cmd_train(cfg);
    } else if (args.subcommand == "predict") {
        pl::cmd_predict(cfg);
    } else if (args.subcommand == "evaluate") {
        const auto report = pl::cmd_evaluate(cfg);
        std::cout << imglong::metrics::report_to_text(report);
        if (args.check) return report_gates(cfg);
    } else if (args.subcommand == "pipeline") {
        const auto report = pl::cmd_pipeline(cfg);
        std::cout << imglong::metrics::report_to_text(report);
        if (args.check) return report_gates(cfg);
    } else if (args.subcommand == "verify") {
        const auto paths = pl::run_paths::at(cfg.out_dir);
        const auto ds = imglong::dataio::read_dataset(paths.dataset, true);
        std::cout << "dataset ok: " << ds.info().total() << " subjects, "
                  << ds.info().levels.size() << " levels, "
                  << ds.info().inventory.size() << " files verified\n";
    } else {
        std::cerr << "unknown subcommand '" << args.subcommand << "'\n";
        return usage(std::cerr, 1);
    }
    return 0;
}

} // namespace

int main(int argc, char** argv) {
    if (argc < 2) return usage(std::cerr, 1);
    const std::string first = argv[1];
    if (first == "--help" || first == "-h" || first == "help") return usage(std::cout, 0);

    try {
        return run(parse_args(argc, argv));
    } catch (const std::logic_error& ex) {
        std::cerr << "error: " << ex.what() << '\n';
        return 1;
    } catch (const std::exception& ex) {
        std::cerr << "error: " << ex.what() << '\n';
        return 2;
    }
}
