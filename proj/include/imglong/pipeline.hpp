#pragma once

#include <algorithm>
#include <array>
#include <atomic>
#include <cmath>
#include <cstdint>
#include <cstdlib>
#include <exception>
#include <filesystem>
#include <functional>
#include <iomanip>
#include <iostream>
#include <map>
#include <mutex>
#include <sstream>
#include <stdexcept>
#include <string>
#include <thread>
#include <unordered_map>
#include <vector>

#include <nlohmann/json.hpp>

#include "imglong/configio.hpp"
#include "imglong/dataio.hpp"
#include "imglong/errors.hpp"
#include "imglong/estimation.hpp"
#include "imglong/metrics.hpp"
#include "imglong/nlme.hpp"
#include "imglong/predictor.hpp"
#include "imglong/renderer.hpp"
#include "imglong/rng.hpp"
#include "imglong/sampling.hpp"

namespace imglong::pipeline {

namespace fsys = std::filesystem;

struct run_paths {
    fsys::path root;
    fsys::path dataset;
    fsys::path config_copy;
    fsys::path selection;
    fsys::path eta_approx;
    fsys::path eb_summary;
    fsys::path models_dir;
    fsys::path training;
    fsys::path predictions;
    fsys::path report_json;
    fsys::path report_text;

    static run_paths at(const std::string& out_dir) {
        run_paths p;
        p.root = out_dir;
        p.dataset = p.root / "dataset";
        p.config_copy = p.root / "config.json";
        p.selection = p.root / "selection.json";
        p.eta_approx = p.root / "eta_approx.csv";
        p.eb_summary = p.root / "eb_summary.json";
        p.models_dir = p.root / "models";
        p.training = p.models_dir / "training.json";
        p.predictions = p.root / "predictions.csv";
        p.report_json = p.root / "report.json";
        p.report_text = p.root / "report.txt";
        return p;
    }
};

inline std::string level_tag(double sigma2) {
    std::ostringstream os;
    os << sigma2;
    return os.str();
}

inline void progress(const std::string& line) { std::cerr << line << '\n'; }

namespace detail {

inline int worker_count(std::size_t n) {
    int k = 0;
    if (const char* env = std::getenv("IMGLONG_THREADS")) k = std::atoi(env);
    if (k <= 0) k = static_cast<int>(std::thread::hardware_concurrency());
    if (k <= 0) k = 1;
    if (n > 0 && static_cast<std::size_t>(k) > n) k = static_cast<int>(n);
    return k;
}

// worker pool over [0, n); fn(i) must touch only slot i of preallocated outputs,
// so results are identical for any worker count
template <typename Fn>
void parallel_for(std::size_t n, Fn&& fn, const std::string& label = {},
                  std::size_t report_every = 0) {
    const int workers = worker_count(n);
    std::atomic<std::size_t> next{0};
    std::atomic<std::size_t> done{0};
    std::mutex io_mx;
    std::mutex err_mx;
    std::exception_ptr first_error;

    auto body = [&] {
        for (;;) {
            const std::size_t i = next.fetch_add(1);
            if (i >= n) return;
            try {
                fn(i);
            } catch (...) {
                std::lock_guard lock(err_mx);
                if (!first_error) first_error = std::current_exception();
                next.store(n);
                return;
            }
            const std::size_t finished = done.fetch_add(1) + 1;
            if (report_every > 0 && finished % report_every == 0) {
                std::lock_guard lock(io_mx);
                std::cerr << label << ' ' << finished << '/' << n << '\n';
            }
        }
    };

    if (workers == 1) {
        body();
    } else {
        std::vector<std::thread> pool;
        pool.reserve(static_cast<std::size_t>(workers));
        for (int t = 0; t < workers; ++t) pool.emplace_back(body);
        for (auto& t : pool) t.join();
    }
    if (first_error) std::rethrow_exception(first_error);
}

} // namespace detail

// --- dimension selection --------------------------------------------------

struct selection_result {
    render::influence_ranking method1;
    render::influence_ranking method2;
    bool agree = false;
    std::array<int, 3> chosen{}; // method-2 top-3, ascending
};

inline selection_result run_selection(const config::run_config& cfg) {
    cfg.validate();

    const auto enc_latents = sampling::sample_latents(
        cfg.method1_n, cfg.renderer.latent_dim,
        derive_seed(cfg.master_seed, "select-encoder", 0));
    std::vector<image> enc_images(enc_latents.size());
    detail::parallel_for(enc_latents.size(), [&](std::size_t i) {
        enc_images[i] = render::render(enc_latents[i], cfg.renderer);
    });
    const auto enc = render::fit_encoder(enc_images, enc_latents, 1.0, cfg.feature_downsample);

    selection_result sel;
    sel.method1 = render::method1_influence(static_cast<std::size_t>(cfg.method1_n),
                                            cfg.renderer, enc,
                                            derive_seed(cfg.master_seed, "select-m1", 0));
    sel.method2 = render::method2_influence(static_cast<std::size_t>(cfg.method2_n),
                                            cfg.renderer,
                                            derive_seed(cfg.master_seed, "select-m2", 0));

    auto m1 = sel.method1.top3();
    auto m2 = sel.method2.top3();
    std::sort(m1.begin(), m1.end());
    std::sort(m2.begin(), m2.end());
    sel.agree = (m1 == m2);
    sel.chosen = m2;
    return sel;
}

inline void write_selection(const selection_result& sel, const std::string& digest,
                            const fsys::path& path) {
    nlohmann::json j;
    j["schema"] = "imglong-selection/1";
    j["config_digest"] = digest;
    j["method1"] = {{"scores", sel.method1.per_dim_score},
                    {"ranked", sel.method1.ranked_dims},
                    {"top3", sel.method1.top3()}};
    j["method2"] = {{"scores", sel.method2.per_dim_score},
                    {"ranked", sel.method2.ranked_dims},
                    {"top3", sel.method2.top3()}};
    j["agree"] = sel.agree;
    j["chosen_eta_indices"] = sel.chosen;
    dataio::atomic_write(path, j.dump(2) + "\n");
}

inline selection_result cmd_select_dims(const config::run_config& cfg) {
    const auto paths = run_paths::at(cfg.out_dir);
    fsys::create_directories(paths.root);
    auto sel = run_selection(cfg);
    write_selection(sel, config::config_digest(cfg), paths.selection);
    progress("select-dims: chosen eta indices " + std::to_string(sel.chosen[0]) + "," +
             std::to_string(sel.chosen[1]) + "," + std::to_string(sel.chosen[2]) +
             (sel.agree ? " (methods agree)" : " (METHODS DISAGREE)"));
    return sel;
}

// explicit indices win; otherwise reuse an on-disk selection for the same
// config digest, and only recompute when neither is available
inline std::array<int, 3> resolve_eta_indices(const config::run_config& cfg) {
    if (!cfg.auto_eta_indices()) return cfg.eta_indices;
    const auto paths = run_paths::at(cfg.out_dir);
    if (fsys::exists(paths.selection)) {
        try {
            const auto j = nlohmann::json::parse(dataio::read_file_bytes(paths.selection));
            if (j.at("config_digest").get<std::string>() == config::config_digest(cfg))
                return j.at("chosen_eta_indices").get<std::array<int, 3>>();
        } catch (const std::exception&) {
            // fall through to a fresh selection
        }
    }
    return run_selection(cfg).chosen;
}

// --- generation -----------------------------------------------------------

inline dataio::manifest cmd_generate(const config::run_config& cfg) {
    cfg.validate();
    const auto paths = run_paths::at(cfg.out_dir);
    fsys::create_directories(paths.root);

    {
        // provenance copy; out_dir omitted so the same run is byte-identical anywhere
        nlohmann::json j = config::to_json(cfg);
        j.erase("out_dir");
        dataio::atomic_write(paths.config_copy, j.dump(2) + "\n");
    }

    const auto indices = resolve_eta_indices(cfg);
    const auto n = static_cast<std::size_t>(cfg.n_subjects);
    const auto grid = cfg.grid();

    dataio::dataset_content content;
    content.master_seed = cfg.master_seed;
    content.config_digest = config::config_digest(cfg);
    content.eta_indices = indices;
    content.levels = cfg.levels.levels;

    const auto latents = sampling::sample_latents(
        cfg.n_subjects, cfg.renderer.latent_dim, derive_seed(cfg.master_seed, "gen-latents", 0));
    content.ids.resize(n);
    content.latents.resize(n);
    content.images.resize(n);
    content.eta.resize(n);
    detail::parallel_for(
        n,
        [&](std::size_t i) {
            content.ids[i] = static_cast<long long>(i);
            content.latents[i] = latents[i].values;
            content.images[i] = render::render(latents[i], cfg.renderer);
            content.eta[i] =
                sampling::extract_eta(latents[i], indices, static_cast<long long>(i)).values;
        },
        "generate: rendered", std::max<std::size_t>(1, n / 5));

    content.eta_hat.resize(cfg.levels.levels.size());
    content.observations.resize(cfg.levels.levels.size());
    for (std::size_t l = 0; l < cfg.levels.levels.size(); ++l) {
        const double sigma2 = cfg.levels.levels[l];
        const auto hat_seed = derive_seed(cfg.master_seed, "eta-hat", l);
        const auto obs_seed = derive_seed(cfg.master_seed, "obs-noise", l);
        auto& hats = content.eta_hat[l];
        auto& obs_level = content.observations[l];
        hats.resize(n);
        obs_level.resize(n);
        detail::parallel_for(n, [&](std::size_t i) {
            const auto id = static_cast<long long>(i);
            sampling::eta_t eta;
            eta.values = content.eta[i];
            eta.subject_id = id;
            const auto hat = sampling::perturb_eta(
                eta, sigma2, derive_seed(hat_seed, "subject", static_cast<std::uint64_t>(i)));
            hats[i] = hat.values;
            const auto traj = nlme::simulate(hat.values, {}, grid);
            auto obs = nlme::observe(
                traj, cfg.sigma_eps,
                derive_seed(obs_seed, "subject", static_cast<std::uint64_t>(i)));
            obs.subject_id = id;
            obs.sigma2 = sigma2;
            obs_level[i] = std::move(obs);
        });
        progress("generate: simulated level sigma2=" + level_tag(sigma2));
    }

    content.splits = dataio::split(content.ids, cfg.split, cfg.master_seed);

    const auto manifest = dataio::write_dataset(content, paths.dataset);
    progress("generate: dataset committed (" + std::to_string(manifest.total()) +
             " subjects, " + std::to_string(manifest.levels.size()) + " levels)");
    return manifest;
}

// --- empirical Bayes ------------------------------------------------------

struct eb_level_summary {
    double sigma2 = 0.0;
    long long n = 0;
    long long converged = 0;
};

struct eb_summary {
    std::vector<eb_level_summary> levels;

    long long total() const {
        long long t = 0;
        for (const auto& l : levels) t += l.n;
        return t;
    }
    long long total_converged() const {
        long long t = 0;
        for (const auto& l : levels) t += l.converged;
        return t;
    }
    double fraction_converged() const {
        return total() == 0 ? 1.0
                            : static_cast<double>(total_converged()) /
                                  static_cast<double>(total());
    }
};

inline constexpr double eb_convergence_threshold = 0.99;

inline eb_summary cmd_fit_eb(const config::run_config& cfg) {
    cfg.validate();
    const auto paths = run_paths::at(cfg.out_dir);
    const auto ds = dataio::read_dataset(paths.dataset);
    const auto ids = ds.all_ids();
    const auto& levels = ds.info().levels;
    if (!ids.empty())
        ds.observations(ids.front(), levels.front()); // materialize the cache before workers

    est::prior pr; // standard normal random effects
    est::optimizer_options opts;
    opts.top_k = cfg.eb_top_k;

    std::ostringstream csv;
    csv << std::setprecision(17)
        << "id,sigma2,eta_approx1,eta_approx2,eta_approx3,converged,objective,n_evals\n";

    eb_summary summary;
    for (double sigma2 : levels) {
        std::vector<est::eb_result> results(ids.size());
        detail::parallel_for(
            ids.size(),
            [&](std::size_t i) {
                results[i] =
                    est::empirical_bayes(ds.observations(ids[i], sigma2), pr, cfg.sigma_eps,
                                         opts);
            },
            "fit-eb: sigma2=" + level_tag(sigma2) + " fitted",
            std::max<std::size_t>(1, ids.size() / 4));

        eb_level_summary level{sigma2, 0, 0};
        for (std::size_t i = 0; i < ids.size(); ++i) {
            const auto& eb = results[i];
            csv << ids[i] << ',' << sigma2 << ',' << eb.eta_approx[0] << ','
                << eb.eta_approx[1] << ',' << eb.eta_approx[2] << ','
                << (eb.converged ? 1 : 0) << ',' << eb.objective << ',' << eb.n_evals << '\n';
            ++level.n;
            level.converged += eb.converged;
        }
        summary.levels.push_back(level);
    }

    dataio::atomic_write(paths.eta_approx, csv.str());

    nlohmann::json j;
    j["schema"] = "imglong-eb-summary/1";
    j["config_digest"] = config::config_digest(cfg);
    j["per_level"] = nlohmann::json::array();
    for (const auto& l : summary.levels)
        j["per_level"].push_back(
            {{"sigma2", l.sigma2}, {"n", l.n}, {"converged", l.converged}});
    j["total"] = summary.total();
    j["total_converged"] = summary.total_converged();
    j["fraction_converged"] = summary.fraction_converged();
    dataio::atomic_write(paths.eb_summary, j.dump(2) + "\n");

    progress("fit-eb: " + std::to_string(summary.total_converged()) + "/" +
             std::to_string(summary.total()) + " fits converged");
    return summary;
}

// --- shared stage-output readers ------------------------------------------

struct eta_approx_table {
    std::map<std::pair<double, long long>, std::array<double, 3>> values;

    const std::array<double, 3>& at(long long id, double sigma2, const char* stage) const {
        const auto it = values.find({sigma2, id});
        if (it == values.end())
            throw std::invalid_argument(std::string(stage) +
                                        ": missing eta_approx for subject " +
                                        std::to_string(id) + " at sigma2 " + level_tag(sigma2));
        return it->second;
    }
};

inline eta_approx_table load_eta_approx(const fsys::path& path) {
    const auto table = dataio::detail::read_csv(
        path, "id,sigma2,eta_approx1,eta_approx2,eta_approx3,converged,objective,n_evals");
    eta_approx_table out;
    for (const auto& row : table.rows) {
        const long long id = dataio::detail::parse_id(row[0], "eta_approx.csv");
        const double sigma2 = dataio::detail::parse_real(row[1], "eta_approx.csv");
        out.values[{sigma2, id}] = {dataio::detail::parse_real(row[2], "eta_approx.csv"),
                                    dataio::detail::parse_real(row[3], "eta_approx.csv"),
                                    dataio::detail::parse_real(row[4], "eta_approx.csv")};
    }
    return out;
}

inline std::map<std::pair<double, long long>, std::array<double, 3>>
load_predictions(const fsys::path& path) {
    const auto table =
        dataio::detail::read_csv(path, "id,sigma2,eta_pred1,eta_pred2,eta_pred3");
    std::map<std::pair<double, long long>, std::array<double, 3>> out;
    for (const auto& row : table.rows) {
        const long long id = dataio::detail::parse_id(row[0], "predictions.csv");
        const double sigma2 = dataio::detail::parse_real(row[1], "predictions.csv");
        out[{sigma2, id}] = {dataio::detail::parse_real(row[2], "predictions.csv"),
                             dataio::detail::parse_real(row[3], "predictions.csv"),
                             dataio::detail::parse_real(row[4], "predictions.csv")};
    }
    return out;
}

inline std::unordered_map<long long, image> load_images(const dataio::dataset_handle& ds,
                                                        const std::vector<long long>& ids) {
    std::unordered_map<long long, image> out;
    out.reserve(ids.size());
    for (long long id : ids) out.emplace(id, ds.load_image(id));
    return out;
}

// --- training -------------------------------------------------------------

inline fsys::path model_path(const run_paths& paths, double sigma2) {
    return paths.models_dir / ("model_s" + level_tag(sigma2) + ".txt");
}

inline void cmd_train(const config::run_config& cfg) {
    cfg.validate();
    const auto paths = run_paths::at(cfg.out_dir);
    const auto ds = dataio::read_dataset(paths.dataset);
    const auto approx = load_eta_approx(paths.eta_approx);

    const auto train_ids = ds.split_ids("train");
    const auto val_ids = ds.split_ids("val");
    if (train_ids.empty() || val_ids.empty())
        throw std::invalid_argument("train: empty train or val split");

    auto train_images_by_id = load_images(ds, train_ids);
    const auto val_images_by_id = load_images(ds, val_ids);
    std::vector<image> train_images;
    train_images.reserve(train_ids.size());
    for (long long id : train_ids) train_images.push_back(std::move(train_images_by_id[id]));

    fsys::create_directories(paths.models_dir);
    nlohmann::json log;
    log["schema"] = "imglong-training/1";
    log["config_digest"] = config::config_digest(cfg);
    log["per_level"] = nlohmann::json::array();

    for (double sigma2 : ds.info().levels) {
        std::vector<std::array<double, 3>> targets;
        targets.reserve(train_ids.size());
        for (long long id : train_ids) targets.push_back(approx.at(id, sigma2, "train"));

        pred::train_metadata meta;
        meta.seed = cfg.master_seed;
        meta.sigma2 = sigma2;

        double best_mse = std::numeric_limits<double>::infinity();
        double best_lambda = cfg.lambda_grid.front();
        pred::predictor_model best_model;
        nlohmann::json lambda_log = nlohmann::json::array();
        for (double lambda : cfg.lambda_grid) {
            auto model =
                pred::train(train_images, targets, lambda, cfg.feature_downsample, meta);
            double sse = 0.0;
            for (long long id : val_ids) {
                const auto p = pred::predict(model, val_images_by_id.at(id));
                const auto& t = approx.at(id, sigma2, "train");
                for (std::size_t k = 0; k < 3; ++k) sse += (p[k] - t[k]) * (p[k] - t[k]);
            }
            const double val_mse = sse / (3.0 * static_cast<double>(val_ids.size()));
            lambda_log.push_back({{"lambda", lambda}, {"val_mse", val_mse}});
            if (val_mse < best_mse) {
                best_mse = val_mse;
                best_lambda = lambda;
                best_model = std::move(model);
            }
        }

        pred::save_model(best_model, model_path(paths, sigma2));
        log["per_level"].push_back(
            {{"sigma2", sigma2},
             {"chosen_lambda", best_lambda},
             {"val_mse", best_mse},
             {"train_mse", (best_model.training_mse[0] + best_model.training_mse[1] +
                            best_model.training_mse[2]) /
                               3.0},
             {"grid", lambda_log}});
        progress("train: sigma2=" + level_tag(sigma2) + " lambda=" + level_tag(best_lambda) +
                 " val_mse=" + std::to_string(best_mse));
    }
    dataio::atomic_write(paths.training, log.dump(2) + "\n");
}

// --- prediction -----------------------------------------------------------

inline void cmd_predict(const config::run_config& cfg) {
    cfg.validate();
    const auto paths = run_paths::at(cfg.out_dir);
    const auto ds = dataio::read_dataset(paths.dataset);
    const auto test_ids = ds.split_ids("test");
    if (test_ids.empty()) throw std::invalid_argument("predict: empty test split");
    const auto test_images = load_images(ds, test_ids);

    std::ostringstream csv;
    csv << std::setprecision(17) << "id,sigma2,eta_pred1,eta_pred2,eta_pred3\n";
    for (double sigma2 : ds.info().levels) {
        const auto path = model_path(paths, sigma2);
        if (!fsys::exists(path))
            throw std::invalid_argument("predict: no model for sigma2 " + level_tag(sigma2) +
                                        " (expected " + path.string() + ")");
        const auto model = pred::load_model(path);
        for (long long id : test_ids) {
            const auto p = pred::predict(model, test_images.at(id));
            csv << id << ',' << sigma2 << ',' << p[0] << ',' << p[1] << ',' << p[2] << '\n';
        }
        progress("predict: sigma2=" + level_tag(sigma2) + " scored " +
                 std::to_string(test_ids.size()) + " subjects");
    }
    dataio::atomic_write(paths.predictions, csv.str());
}

// --- evaluation -----------------------------------------------------------

inline metrics::eval_report cmd_evaluate(const config::run_config& cfg) {
    cfg.validate();
    const auto paths = run_paths::at(cfg.out_dir);
    const auto ds = dataio::read_dataset(paths.dataset);
    const auto approx = load_eta_approx(paths.eta_approx);
    const auto preds = load_predictions(paths.predictions);
    const auto test_ids = ds.split_ids("test");
    if (test_ids.size() < 2) throw std::invalid_argument("evaluate: test split too small");

    std::vector<metrics::level_artifacts> artifacts;
    std::vector<est::level_scoring_inputs> scoring;
    for (double sigma2 : ds.info().levels) {
        metrics::level_artifacts art;
        est::level_scoring_inputs inputs;
        art.sigma2 = inputs.sigma2 = sigma2;
        for (long long id : test_ids) {
            const auto& hat = ds.eta_hat(id, sigma2);
            const auto pit = preds.find({sigma2, id});
            if (pit == preds.end())
                throw std::invalid_argument("evaluate: missing prediction for subject " +
                                            std::to_string(id) + " at sigma2 " +
                                            level_tag(sigma2));
            const auto& app = approx.at(id, sigma2, "evaluate");
            art.eta_hat.push_back(hat);
            art.eta_pred.push_back(pit->second);
            art.eta_approx.push_back(app);
            inputs.eta_hat.push_back(hat);
            inputs.eta_pred.push_back(pit->second);
            inputs.eta_approx.push_back(app);
            inputs.obs.push_back(ds.observations(id, sigma2));
        }
        artifacts.push_back(std::move(art));
        scoring.push_back(std::move(inputs));
    }

    progress("evaluate: scoring trajectories for the NLL table");
    const auto nll_rows = est::nll_table(scoring, derive_seed(cfg.master_seed, "nll-table", 0),
                                         {}, cfg.grid(), cfg.sigma_eps);

    sampling::noise_level_set expected;
    expected.levels = ds.info().levels;
    auto report = metrics::build_report(std::move(artifacts),
                                        derive_seed(cfg.master_seed, "report", 0), nll_rows,
                                        ds.info().config_digest, expected);

    dataio::atomic_write(paths.report_json, metrics::report_to_json(report).dump(2) + "\n");
    dataio::atomic_write(paths.report_text, metrics::report_to_text(report));
    progress("evaluate: report written");
    return report;
}

// --- composed run and structural gates ------------------------------------

inline metrics::eval_report cmd_pipeline(const config::run_config& cfg) {
    struct stage {
        const char* name;
        std::function<void()> fn;
    };
    metrics::eval_report report;
    eb_summary eb;
    const std::vector<stage> stages{
        {"select-dims", [&] { cmd_select_dims(cfg); }},
        {"generate", [&] { cmd_generate(cfg); }},
        {"fit-eb",
         [&] {
             eb = cmd_fit_eb(cfg);
             if (eb.fraction_converged() < eb_convergence_threshold)
                 throw numerical_error("empirical Bayes convergence " +
                                       std::to_string(eb.fraction_converged()) +
                                       " below threshold " +
                                       std::to_string(eb_convergence_threshold));
         }},
        {"train", [&] { cmd_train(cfg); }},
        {"predict", [&] { cmd_predict(cfg); }},
        {"evaluate", [&] { report = cmd_evaluate(cfg); }},
    };
    for (const auto& s : stages) {
        try {
            s.fn();
        } catch (const std::exception& ex) {
            throw std::runtime_error(std::string("pipeline stage ") + s.name + " failed: " +
                                     ex.what());
        }
    }
    return report;
}

// cheap structural gates over the on-disk report, for --check mode
inline std::vector<std::string> check_gates(const config::run_config& cfg) {
    const auto paths = run_paths::at(cfg.out_dir);
    std::vector<std::string> failures;

    nlohmann::json report;
    try {
        report = nlohmann::json::parse(dataio::read_file_bytes(paths.report_json));
    } catch (const std::exception& ex) {
        failures.push_back(std::string("report.json unreadable: ") + ex.what());
        return failures;
    }

    const auto& rows = report.at("metrics");
    const std::size_t n_levels = cfg.levels.levels.size();
    if (rows.size() != 3 * n_levels) {
        failures.push_back("expected " + std::to_string(3 * n_levels) +
                           " metric rows, found " + std::to_string(rows.size()));
        return failures;
    }

    std::vector<double> hat_pred_r2, hat_approx_r2, fractions, sigmas;
    for (const auto& row : rows) {
        const std::string cmp = row.at("comparison").get<std::string>();
        if (cmp == "eta_hat vs eta_pred") {
            sigmas.push_back(row.at("sigma2").get<double>());
            hat_pred_r2.push_back(row.at("r2").get<double>());
            fractions.push_back(row.at("fraction_of_max").get<double>());
        } else if (cmp == "eta_hat vs eta_approx") {
            hat_approx_r2.push_back(row.at("r2").get<double>());
        }
    }

    for (std::size_t i = 1; i < hat_pred_r2.size(); ++i)
        if (!(hat_pred_r2[i] < hat_pred_r2[i - 1]))
            failures.push_back("R2(eta_hat, eta_pred) not strictly decreasing at sigma2=" +
                               level_tag(sigmas[i]));
    for (std::size_t i = 0; i < fractions.size(); ++i)
        if (sigmas[i] <= 18.0 && !(fractions[i] >= 0.5))
            failures.push_back("fraction_of_max " + std::to_string(fractions[i]) +
                               " below 0.5 at sigma2=" + level_tag(sigmas[i]));
    if (!hat_approx_r2.empty()) {
        const auto [lo, hi] = std::minmax_element(hat_approx_r2.begin(), hat_approx_r2.end());
        if (*hi - *lo >= 0.02)
            failures.push_back("R2(eta_hat, eta_approx) varies by " +
                               std::to_string(*hi - *lo) + " across levels (limit 0.02)");
    }

    for (const auto& row : report.at("nll")) {
        const double predicted = row.at("predicted").get<double>();
        const double average = row.at("average").get<double>();
        const double random = row.at("random").get<double>();
        if (!(predicted < average && average < random))
            failures.push_back("NLL ordering violated at sigma2=" +
                               level_tag(row.at("sigma2").get<double>()));
    }

    try {
        const auto eb = nlohmann::json::parse(dataio::read_file_bytes(paths.eb_summary));
        const double frac = eb.at("fraction_converged").get<double>();
        if (frac < eb_convergence_threshold)
            failures.push_back("EB convergence fraction " + std::to_string(frac) + " below " +
                               std::to_string(eb_convergence_threshold));
    } catch (const std::exception& ex) {
        failures.push_back(std::string("eb_summary.json unreadable: ") + ex.what());
    }

    return failures;
}

} // namespace imglong::pipeline
