#pragma once

#include <array>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <set>
#include <stdexcept>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "imglong/dataio.hpp"
#include "imglong/nlme.hpp"
#include "imglong/renderer.hpp"
#include "imglong/rng.hpp"
#include "imglong/sampling.hpp"

namespace imglong::config {

struct run_config {
    long long n_subjects = 5000;
    render::render_config renderer;
    std::array<int, 3> eta_indices{-1, -1, -1}; // all -1: pick by influence ranking
    sampling::noise_level_set levels;
    double sigma_eps = 0.01;
    std::vector<double> grid_times = nlme::default_grid().times;

    long long method1_n = 2000;
    long long method2_n = 2000;

    std::vector<double> lambda_grid{0.01, 0.1, 1.0, 10.0, 100.0, 1000.0, 10000.0};
    int feature_downsample = 4;
    int eb_top_k = 4;

    dataio::split_spec split{.train = 0.65, .val = 0.10, .test = 0.25};
    std::uint64_t master_seed = 1729;
    std::string out_dir = "runs/desk";

    bool auto_eta_indices() const { return eta_indices == std::array<int, 3>{-1, -1, -1}; }

    nlme::time_grid grid() const {
        nlme::time_grid g;
        g.times = grid_times;
        return g;
    }

    void validate() const {
        if (n_subjects < 1) throw std::invalid_argument("config: n_subjects must be >= 1");
        renderer.validate();
        levels.validate();
        if (!(sigma_eps > 0.0) || !std::isfinite(sigma_eps))
            throw std::invalid_argument("config: sigma_eps must be positive");
        grid().validate();
        if (!auto_eta_indices()) {
            for (int k = 0; k < 3; ++k) {
                if (eta_indices[k] < 0 || eta_indices[k] >= renderer.latent_dim)
                    throw std::invalid_argument("config: eta index out of range");
                for (int l = k + 1; l < 3; ++l)
                    if (eta_indices[k] == eta_indices[l])
                        throw std::invalid_argument("config: duplicate eta index");
            }
        }
        if (method1_n < 1 || method2_n < 1)
            throw std::invalid_argument("config: selection sample sizes must be >= 1");
        if (lambda_grid.empty()) throw std::invalid_argument("config: empty lambda grid");
        for (double l : lambda_grid)
            if (!(l >= 0.0) || !std::isfinite(l))
                throw std::invalid_argument("config: lambda grid values must be finite and >= 0");
        if (feature_downsample < 1 || renderer.height % feature_downsample != 0 ||
            renderer.width % feature_downsample != 0)
            throw std::invalid_argument("config: downsample must divide the image dimensions");
        if (eb_top_k < 0) throw std::invalid_argument("config: eb_top_k must be >= 0");
        if (split.exact) {
            if (split.n_train + split.n_val + split.n_test != n_subjects)
                throw std::invalid_argument("config: exact split counts must sum to n_subjects");
        } else {
            split.validate(static_cast<std::size_t>(n_subjects));
        }
        if (out_dir.empty()) throw std::invalid_argument("config: out_dir must not be empty");
    }
};

inline nlohmann::json to_json(const run_config& cfg) {
    nlohmann::json j;
    j["n_subjects"] = cfg.n_subjects;
    j["renderer"] = {
        {"height", cfg.renderer.height},
        {"width", cfg.renderer.width},
        {"latent_dim", cfg.renderer.latent_dim},
        {"background", cfg.renderer.background},
        {"controlled_dims", cfg.renderer.controlled_dims},
    };
    auto& bands = j["renderer"]["bands"] = nlohmann::json::array();
    for (const auto& b : cfg.renderer.bands)
        bands.push_back({{"center_frac", b.center_frac},
                         {"width_px", b.width_px},
                         {"base_luminance", b.base_luminance},
                         {"g_pos", b.g_pos},
                         {"g_tilt", b.g_tilt},
                         {"g_curv", b.g_curv},
                         {"g_lum", b.g_lum}});
    j["eta_indices"] = cfg.eta_indices;
    j["levels"] = cfg.levels.levels;
    j["sigma_eps"] = cfg.sigma_eps;
    j["grid_times"] = cfg.grid_times;
    j["method1_n"] = cfg.method1_n;
    j["method2_n"] = cfg.method2_n;
    j["lambda_grid"] = cfg.lambda_grid;
    j["feature_downsample"] = cfg.feature_downsample;
    j["eb_top_k"] = cfg.eb_top_k;
    if (cfg.split.exact)
        j["split"] = {{"exact", true},
                      {"n_train", cfg.split.n_train},
                      {"n_val", cfg.split.n_val},
                      {"n_test", cfg.split.n_test}};
    else
        j["split"] = {{"train", cfg.split.train}, {"val", cfg.split.val},
                      {"test", cfg.split.test}};
    j["master_seed"] = cfg.master_seed;
    j["out_dir"] = cfg.out_dir;
    return j;
}

inline run_config from_json(const nlohmann::json& j) {
    static const std::set<std::string> known{
        "n_subjects", "renderer",  "eta_indices",        "levels",   "sigma_eps",
        "grid_times", "method1_n", "method2_n",          "lambda_grid",
        "feature_downsample",      "eb_top_k",           "split",    "master_seed",
        "out_dir"};
    for (const auto& [key, value] : j.items())
        if (!known.count(key))
            throw std::invalid_argument("config: unknown key '" + key + "'");

    run_config cfg;
    try {
        cfg.n_subjects = j.value("n_subjects", cfg.n_subjects);
        if (j.contains("renderer")) {
            const auto& r = j.at("renderer");
            static const std::set<std::string> rknown{"height",          "width", "latent_dim",
                                                      "background",      "bands",
                                                      "controlled_dims"};
            for (const auto& [key, value] : r.items())
                if (!rknown.count(key))
                    throw std::invalid_argument("config: unknown renderer key '" + key + "'");
            cfg.renderer.height = r.value("height", cfg.renderer.height);
            cfg.renderer.width = r.value("width", cfg.renderer.width);
            cfg.renderer.latent_dim = r.value("latent_dim", cfg.renderer.latent_dim);
            cfg.renderer.background = r.value("background", cfg.renderer.background);
            if (r.contains("controlled_dims"))
                cfg.renderer.controlled_dims = r.at("controlled_dims").get<std::array<int, 8>>();
            if (r.contains("bands")) {
                const auto& bands = r.at("bands");
                if (bands.size() != 2)
                    throw std::invalid_argument("config: renderer needs exactly two bands");
                for (std::size_t b = 0; b < 2; ++b) {
                    auto& bc = cfg.renderer.bands[b];
                    bc.center_frac = bands[b].value("center_frac", bc.center_frac);
                    bc.width_px = bands[b].value("width_px", bc.width_px);
                    bc.base_luminance = bands[b].value("base_luminance", bc.base_luminance);
                    bc.g_pos = bands[b].value("g_pos", bc.g_pos);
                    bc.g_tilt = bands[b].value("g_tilt", bc.g_tilt);
                    bc.g_curv = bands[b].value("g_curv", bc.g_curv);
                    bc.g_lum = bands[b].value("g_lum", bc.g_lum);
                }
            }
        }
        if (j.contains("eta_indices"))
            cfg.eta_indices = j.at("eta_indices").get<std::array<int, 3>>();
        if (j.contains("levels")) cfg.levels.levels = j.at("levels").get<std::vector<double>>();
        cfg.sigma_eps = j.value("sigma_eps", cfg.sigma_eps);
        if (j.contains("grid_times"))
            cfg.grid_times = j.at("grid_times").get<std::vector<double>>();
        cfg.method1_n = j.value("method1_n", cfg.method1_n);
        cfg.method2_n = j.value("method2_n", cfg.method2_n);
        if (j.contains("lambda_grid"))
            cfg.lambda_grid = j.at("lambda_grid").get<std::vector<double>>();
        cfg.feature_downsample = j.value("feature_downsample", cfg.feature_downsample);
        cfg.eb_top_k = j.value("eb_top_k", cfg.eb_top_k);
        if (j.contains("split")) {
            const auto& s = j.at("split");
            if (s.value("exact", false)) {
                cfg.split.exact = true;
                cfg.split.n_train = s.at("n_train").get<long long>();
                cfg.split.n_val = s.at("n_val").get<long long>();
                cfg.split.n_test = s.at("n_test").get<long long>();
            } else {
                cfg.split.train = s.value("train", cfg.split.train);
                cfg.split.val = s.value("val", cfg.split.val);
                cfg.split.test = s.value("test", cfg.split.test);
            }
        }
        cfg.master_seed = j.value("master_seed", cfg.master_seed);
        cfg.out_dir = j.value("out_dir", cfg.out_dir);
    } catch (const nlohmann::json::exception& ex) {
        throw std::invalid_argument(std::string("config: malformed value: ") + ex.what());
    }
    return cfg;
}

inline run_config load_config(const std::filesystem::path& path) {
    nlohmann::json j;
    try {
        j = nlohmann::json::parse(dataio::read_file_bytes(path));
    } catch (const nlohmann::json::exception& ex) {
        throw std::invalid_argument(path.string() + ": not valid JSON: " + ex.what());
    }
    return from_json(j);
}

inline void save_config(const run_config& cfg, const std::filesystem::path& path) {
    dataio::atomic_write(path, to_json(cfg).dump(2) + "\n");
}

// stable across machines and runs; out_dir deliberately excluded so the same
// experiment written to two places carries the same digest
inline std::string config_digest(const run_config& cfg) {
    nlohmann::json j = to_json(cfg);
    j.erase("out_dir");
    return dataio::checksum_hex(fnv1a64(j.dump()));
}

} // namespace imglong::config
