#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <numeric>
#include <stdexcept>
#include <vector>

#include <Eigen/Dense>

#include "imglong/errors.hpp"
#include "imglong/features.hpp"
#include "imglong/image.hpp"
#include "imglong/ridge.hpp"
#include "imglong/rng.hpp"
#include "imglong/sampling.hpp"

namespace imglong::render {

// per-band latent gains; factor order everywhere: position, tilt, curvature, luminance
struct band_config {
    double center_frac;
    double width_px;
    double base_luminance;
    double g_pos;
    double g_tilt;
    double g_curv;
    double g_lum;
};

struct render_config {
    int height = 64;
    int width = 64;
    int latent_dim = 128;
    std::array<int, 8> controlled_dims{7, 19, 34, 52, 71, 88, 101, 117};
    std::array<band_config, 2> bands{{{0.30, 3.0, 0.55, 0.10, 0.20, 0.08, 0.30},
                                      {0.70, 4.0, 0.45, 0.09, 0.035, 0.07, 0.25}}};
    double background = 0.10;

    void validate() const {
        if (height <= 0 || width <= 0) throw std::invalid_argument("render_config: bad dimensions");
        if (latent_dim <= 0) throw std::invalid_argument("render_config: bad latent_dim");
        if (!(background >= 0.0) || !(background < 1.0))
            throw std::invalid_argument("render_config: background must be in [0,1)");
        for (std::size_t i = 0; i < controlled_dims.size(); ++i) {
            if (controlled_dims[i] < 0 || controlled_dims[i] >= latent_dim)
                throw std::invalid_argument("render_config: controlled dim out of range");
            for (std::size_t j = i + 1; j < controlled_dims.size(); ++j)
                if (controlled_dims[i] == controlled_dims[j])
                    throw std::invalid_argument("render_config: controlled dims must be distinct");
        }
        for (const auto& b : bands) {
            if (!(b.width_px > 0.0)) throw std::invalid_argument("render_config: band width <= 0");
            for (double g : {b.center_frac, b.base_luminance, b.g_pos, b.g_tilt, b.g_curv, b.g_lum})
                if (!std::isfinite(g)) throw std::invalid_argument("render_config: non-finite gain");
        }
    }
};

inline double logistic(double u) { return 1.0 / (1.0 + std::exp(-u)); }

inline image render(const sampling::latent_vector& z, const render_config& cfg) {
    cfg.validate();
    const int need =
        1 + *std::max_element(cfg.controlled_dims.begin(), cfg.controlled_dims.end());
    if (static_cast<int>(z.values.size()) < need)
        throw std::invalid_argument("render: latent vector shorter than controlled dims require");

    const double H = cfg.height, W = cfg.width;
    image img;
    img.height = cfg.height;
    img.width = cfg.width;
    img.pixels.assign(static_cast<std::size_t>(cfg.height) * cfg.width, cfg.background);

    for (int b = 0; b < 2; ++b) {
        const auto& bc = cfg.bands[b];
        const double zp = z.values[cfg.controlled_dims[4 * b + 0]];
        const double zt = z.values[cfg.controlled_dims[4 * b + 1]];
        const double zc = z.values[cfg.controlled_dims[4 * b + 2]];
        const double zl = z.values[cfg.controlled_dims[4 * b + 3]];
        const double lum = bc.base_luminance * logistic(bc.g_lum * zl);
        const double inv_two_w2 = 1.0 / (2.0 * bc.width_px * bc.width_px);
        for (int x = 0; x < cfg.width; ++x) {
            const double dx = x - W / 2.0;
            const double center = bc.center_frac * H + bc.g_pos * zp * H + bc.g_tilt * zt * dx +
                                  bc.g_curv * zc * dx * dx / W;
            for (int y = 0; y < cfg.height; ++y) {
                const double dy = y - center;
                img.at(y, x) += lum * std::exp(-dy * dy * inv_two_w2);
            }
        }
    }
    for (auto& p : img.pixels) p = std::clamp(p, 0.0, 1.0);
    return img;
}

struct encoder_model {
    Eigen::MatrixXd weights; // latent_dim x n_features
    Eigen::VectorXd bias;    // latent_dim
    feat::feature_spec spec;
    std::vector<double> training_mse; // per latent dim
};

inline encoder_model fit_encoder(const std::vector<image>& images,
                                 const std::vector<sampling::latent_vector>& latents,
                                 double lambda, int downsample = 4) {
    if (images.size() != latents.size())
        throw std::invalid_argument("fit_encoder: image/latent counts differ");
    if (images.empty()) throw std::invalid_argument("fit_encoder: empty training set");
    if (lambda < 0.0) throw std::invalid_argument("fit_encoder: lambda must be >= 0");
    const auto d = latents.front().values.size();
    for (const auto& z : latents)
        if (z.values.size() != d)
            throw std::invalid_argument("fit_encoder: inconsistent latent dimensions");

    encoder_model enc;
    enc.spec = feat::fit_feature_spec(images, downsample);
    const auto n = images.size();
    const auto p = enc.spec.size();
    if (n < p) throw std::invalid_argument("fit_encoder: need at least as many images as features");

    Eigen::MatrixXd X(n, p);
    Eigen::MatrixXd T(n, d);
    for (std::size_t i = 0; i < n; ++i) {
        const auto f = feat::featurize(images[i], enc.spec);
        for (std::size_t k = 0; k < p; ++k) X(i, k) = f[k];
        for (std::size_t k = 0; k < d; ++k) T(i, k) = latents[i].values[k];
    }
    const Eigen::RowVectorXd target_mean = T.colwise().mean();
    T.rowwise() -= target_mean;

    auto sol = ridge_solve(X, T, lambda, "fit_encoder");
    enc.weights = sol.weights.transpose();
    enc.bias = target_mean.transpose();
    enc.training_mse = std::move(sol.training_mse);
    return enc;
}

inline sampling::latent_vector encode(const image& img, const encoder_model& enc) {
    const auto f = feat::featurize(img, enc.spec);
    if (static_cast<Eigen::Index>(f.size()) != enc.weights.cols())
        throw std::invalid_argument("encode: feature count does not match encoder");
    Eigen::VectorXd fv(f.size());
    for (std::size_t k = 0; k < f.size(); ++k) fv[k] = f[k];
    const Eigen::VectorXd zhat = enc.weights * fv + enc.bias;
    sampling::latent_vector out;
    out.values.assign(zhat.data(), zhat.data() + zhat.size());
    return out;
}

enum class influence_method { method1, method2 };

struct influence_ranking {
    std::vector<double> per_dim_score;
    std::vector<int> ranked_dims;
    influence_method method = influence_method::method1;

    std::array<int, 3> top3() const {
        return {ranked_dims[0], ranked_dims[1], ranked_dims[2]};
    }
};

namespace detail {

inline std::vector<int> rank_dims(const std::vector<double>& scores, bool ascending) {
    std::vector<int> order(scores.size());
    std::iota(order.begin(), order.end(), 0);
    std::sort(order.begin(), order.end(), [&](int a, int b) {
        if (scores[a] != scores[b]) return ascending ? scores[a] < scores[b] : scores[a] > scores[b];
        return a < b; // deterministic tie-break: lowest index wins
    });
    return order;
}

} // namespace detail

// reconstruction test: dims the encoder can recover from pixels score low
inline influence_ranking method1_influence(std::size_t n, const render_config& cfg,
                                           const encoder_model& enc, std::uint64_t seed) {
    cfg.validate();
    if (n == 0) throw std::invalid_argument("method1_influence: n must be >= 1");
    const auto d = static_cast<std::size_t>(enc.weights.rows());

    std::vector<double> score(d, 0.0);
    const auto latents = sampling::sample_latents(n, d, seed);
    for (const auto& z : latents) {
        const auto zhat = encode(render(z, cfg), enc);
        for (std::size_t k = 0; k < d; ++k) {
            const double e = z.values[k] - zhat.values[k];
            score[k] += e * e;
        }
    }
    for (auto& s : score) s /= static_cast<double>(n);

    influence_ranking r;
    r.per_dim_score = std::move(score);
    r.ranked_dims = detail::rank_dims(r.per_dim_score, true);
    r.method = influence_method::method1;
    return r;
}

// perturbation test: resampling an influential dim moves pixels
inline influence_ranking method2_influence(std::size_t n, const render_config& cfg,
                                           std::uint64_t seed) {
    cfg.validate();
    if (n == 0) throw std::invalid_argument("method2_influence: n must be >= 1");
    const auto d = static_cast<std::size_t>(cfg.latent_dim);

    std::vector<double> score(d, 0.0);
    const auto latents = sampling::sample_latents(n, d, seed);
    const double inv_px = 1.0 / (static_cast<double>(cfg.height) * cfg.width);
    for (std::size_t i = 0; i < n; ++i) {
        const auto& z = latents[i];
        const auto base = render(z, cfg);
        for (int dim : cfg.controlled_dims) {
            rng256 g(derive_seed(seed, "method2-resample", i * d + dim));
            auto zv = z;
            zv.values[dim] = g.next_normal();
            const auto variant = render(zv, cfg);
            double mse = 0.0;
            for (std::size_t px = 0; px < base.pixels.size(); ++px) {
                const double e = base.pixels[px] - variant.pixels[px];
                mse += e * e;
            }
            score[dim] += mse * inv_px;
        }
        // render provably ignores every other dim (sensitivity locality), so their
        // image MSE is zero without re-rendering
    }
    for (int dim : cfg.controlled_dims) score[dim] /= static_cast<double>(n);

    influence_ranking r;
    r.per_dim_score = std::move(score);
    r.ranked_dims = detail::rank_dims(r.per_dim_score, false);
    r.method = influence_method::method2;
    return r;
}

} // namespace imglong::render
