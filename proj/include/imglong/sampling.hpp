#pragma once

#include <array>
#include <cmath>
#include <cstdint>
#include <stdexcept>
#include <vector>

#include "rng.hpp"

namespace imglong::sampling {

struct latent_vector {
    std::vector<double> values;

    int d() const { return static_cast<int>(values.size()); }
};

struct eta_t {
    std::array<double, 3> values{};
    long long subject_id = -1;
};

struct eta_hat_t {
    std::array<double, 3> values{};
    double sigma2 = 0.0;
};

struct noise_level_set {
    std::vector<double> levels{0.0, 1.0, 9.0, 18.0, 49.0};

    void validate() const {
        if (levels.empty()) throw std::invalid_argument("noise_level_set: empty");
        if (levels.front() != 0.0)
            throw std::invalid_argument("noise_level_set: first level must be 0");
        for (std::size_t i = 1; i < levels.size(); ++i)
            if (!(levels[i] > levels[i - 1]))
                throw std::invalid_argument("noise_level_set: levels must be distinct ascending");
    }
};

// one derived stream per subject, so generation order is irrelevant
inline std::vector<latent_vector> sample_latents(long long n, int d, std::uint64_t seed) {
    if (n < 1) throw std::invalid_argument("sample_latents: n must be >= 1");
    if (d < 3) throw std::invalid_argument("sample_latents: d must be >= 3");
    std::vector<latent_vector> out(static_cast<std::size_t>(n));
    for (long long i = 0; i < n; ++i) {
        rng256 gen(derive_seed(seed, "latent", static_cast<std::uint64_t>(i)));
        auto& z = out[static_cast<std::size_t>(i)].values;
        z.resize(static_cast<std::size_t>(d));
        for (auto& v : z) v = gen.next_normal();
    }
    return out;
}

inline eta_t extract_eta(const latent_vector& z, const std::array<int, 3>& indices,
                         long long subject_id = -1) {
    for (int k = 0; k < 3; ++k) {
        if (indices[k] < 0 || indices[k] >= z.d())
            throw std::invalid_argument("extract_eta: index out of range");
        for (int l = k + 1; l < 3; ++l)
            if (indices[k] == indices[l])
                throw std::invalid_argument("extract_eta: duplicate index");
    }
    eta_t e;
    e.subject_id = subject_id;
    for (int k = 0; k < 3; ++k)
        e.values[static_cast<std::size_t>(k)] = z.values[static_cast<std::size_t>(indices[k])];
    return e;
}

// eta_hat = (eta + r) / sqrt(1 + sigma2), r ~ N(0, sigma2 I).
// Keeps Var(eta_hat) = 1 per dimension while corr(eta, eta_hat) = 1/sqrt(1+sigma2).
inline eta_hat_t perturb_eta(const eta_t& eta, double sigma2, std::uint64_t seed) {
    if (sigma2 < 0.0) throw std::invalid_argument("perturb_eta: sigma2 must be >= 0");
    eta_hat_t out;
    out.sigma2 = sigma2;
    const double sigma = std::sqrt(sigma2);
    const double scale = 1.0 / std::sqrt(1.0 + sigma2);
    rng256 gen(seed);
    for (int k = 0; k < 3; ++k) {
        const double r = sigma * gen.next_normal();
        out.values[static_cast<std::size_t>(k)] = (eta.values[static_cast<std::size_t>(k)] + r) * scale;
    }
    return out;
}

inline double theoretical_max(double sigma2) {
    if (sigma2 < 0.0) throw std::invalid_argument("theoretical_max: sigma2 must be >= 0");
    return 1.0 / (1.0 + sigma2);
}

} // namespace imglong::sampling
