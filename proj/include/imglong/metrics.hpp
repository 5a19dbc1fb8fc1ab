#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <iomanip>
#include <limits>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "imglong/estimation.hpp"
#include "imglong/rng.hpp"
#include "imglong/sampling.hpp"

namespace imglong::metrics {

using triple = std::array<double, 3>;
using triples = std::vector<triple>;

namespace detail {

inline void check_pair(const triples& a, const triples& b, const char* who,
                       std::size_t min_n = 1) {
    if (a.size() != b.size())
        throw std::invalid_argument(std::string(who) + ": input sizes differ");
    if (a.size() < min_n)
        throw std::invalid_argument(std::string(who) + ": need at least " +
                                    std::to_string(min_n) + " subjects");
}

} // namespace detail

// pooled over all n x 3 entries
inline double mse(const triples& a, const triples& b) {
    detail::check_pair(a, b, "mse");
    double sum = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i)
        for (std::size_t k = 0; k < 3; ++k) {
            const double d = a[i][k] - b[i][k];
            sum += d * d;
        }
    return sum / (3.0 * static_cast<double>(a.size()));
}

inline triple mse_per_dim(const triples& a, const triples& b) {
    detail::check_pair(a, b, "mse_per_dim");
    triple out{};
    for (std::size_t i = 0; i < a.size(); ++i)
        for (std::size_t k = 0; k < 3; ++k) {
            const double d = a[i][k] - b[i][k];
            out[k] += d * d;
        }
    for (auto& v : out) v /= static_cast<double>(a.size());
    return out;
}

// 1 - SSE/SST pooled over entries, SST around per-dimension means
inline double r_squared(const triples& reference, const triples& candidate) {
    detail::check_pair(reference, candidate, "r_squared", 2);
    triple mean{};
    for (const auto& r : reference)
        for (std::size_t k = 0; k < 3; ++k) mean[k] += r[k];
    for (auto& m : mean) m /= static_cast<double>(reference.size());

    double sse = 0.0, sst = 0.0;
    for (std::size_t i = 0; i < reference.size(); ++i)
        for (std::size_t k = 0; k < 3; ++k) {
            const double e = reference[i][k] - candidate[i][k];
            const double t = reference[i][k] - mean[k];
            sse += e * e;
            sst += t * t;
        }
    if (sst <= 0.0) throw std::domain_error("r_squared: reference variance is zero");
    return 1.0 - sse / sst;
}

inline triple r_squared_per_dim(const triples& reference, const triples& candidate) {
    detail::check_pair(reference, candidate, "r_squared_per_dim", 2);
    triple mean{}, sse{}, sst{};
    for (const auto& r : reference)
        for (std::size_t k = 0; k < 3; ++k) mean[k] += r[k];
    for (auto& m : mean) m /= static_cast<double>(reference.size());
    for (std::size_t i = 0; i < reference.size(); ++i)
        for (std::size_t k = 0; k < 3; ++k) {
            const double e = reference[i][k] - candidate[i][k];
            const double t = reference[i][k] - mean[k];
            sse[k] += e * e;
            sst[k] += t * t;
        }
    triple out{};
    for (std::size_t k = 0; k < 3; ++k) {
        if (sst[k] <= 0.0)
            throw std::domain_error("r_squared_per_dim: reference variance is zero in dimension " +
                                    std::to_string(k));
        out[k] = 1.0 - sse[k] / sst[k];
    }
    return out;
}

inline double fraction_of_max(double r2, double sigma2) { return r2 * (1.0 + sigma2); }

struct interval {
    double low = 0.0;
    double high = 0.0;
};

namespace detail {

// quantile with linear interpolation on the sorted sample (R type 7)
inline double quantile_sorted(const std::vector<double>& sorted, double q) {
    const double h = q * static_cast<double>(sorted.size() - 1);
    const auto lo = static_cast<std::size_t>(std::floor(h));
    const auto hi = std::min(lo + 1, sorted.size() - 1);
    const double w = h - std::floor(h);
    return (1.0 - w) * sorted[lo] + w * sorted[hi];
}

template <class Stat>
interval percentile_bootstrap(std::size_t n, std::uint64_t seed, int resamples, double level,
                              Stat&& stat) {
    if (n < 2) throw std::invalid_argument("bootstrap_ci: need at least 2 subjects");
    if (resamples < 1) throw std::invalid_argument("bootstrap_ci: resamples must be >= 1");
    if (!(level > 0.0 && level < 1.0))
        throw std::invalid_argument("bootstrap_ci: level must be in (0, 1)");

    std::vector<double> stats(static_cast<std::size_t>(resamples));
    std::vector<std::size_t> idx(n);
    for (int r = 0; r < resamples; ++r) {
        rng256 gen(derive_seed(seed, "bootstrap", static_cast<std::uint64_t>(r)));
        for (auto& i : idx) i = static_cast<std::size_t>(gen.next_u64() % n);
        stats[static_cast<std::size_t>(r)] = stat(idx);
    }
    std::sort(stats.begin(), stats.end());
    const double alpha = 1.0 - level;
    return {quantile_sorted(stats, alpha / 2.0), quantile_sorted(stats, 1.0 - alpha / 2.0)};
}

} // namespace detail

enum class pair_metric { mse, r2 };

inline interval bootstrap_ci(const triples& reference, const triples& candidate, pair_metric m,
                             std::uint64_t seed, int resamples = 1000, double level = 0.95) {
    detail::check_pair(reference, candidate, "bootstrap_ci", 2);
    triples ref_r(reference.size()), cand_r(reference.size());
    return detail::percentile_bootstrap(
        reference.size(), seed, resamples, level, [&](const std::vector<std::size_t>& idx) {
            for (std::size_t i = 0; i < idx.size(); ++i) {
                ref_r[i] = reference[idx[i]];
                cand_r[i] = candidate[idx[i]];
            }
            return m == pair_metric::mse ? mse(ref_r, cand_r) : r_squared(ref_r, cand_r);
        });
}

inline interval bootstrap_mean_ci(const std::vector<double>& values, std::uint64_t seed,
                                  int resamples = 1000, double level = 0.95) {
    return detail::percentile_bootstrap(values.size(), seed, resamples, level,
                                        [&](const std::vector<std::size_t>& idx) {
                                            double sum = 0.0;
                                            for (std::size_t i : idx) sum += values[i];
                                            return sum / static_cast<double>(idx.size());
                                        });
}

struct level_artifacts {
    double sigma2 = 0.0;
    triples eta_hat;    // scoring reference
    triples eta_pred;   // image-based predictions
    triples eta_approx; // empirical-Bayes estimates
};

struct metric_row {
    double sigma2 = 0.0;
    std::string comparison; // reference vs candidate
    double mse = 0.0;
    double mse_low = 0.0;
    double mse_high = 0.0;
    double r2 = 0.0;
    double r2_low = 0.0;
    double r2_high = 0.0;
    triple mse_dims{};
    triple r2_dims{};
    double theoretical_max = 1.0;
    double fraction = std::numeric_limits<double>::quiet_NaN(); // eta_hat vs eta_pred only
};

struct eval_report {
    std::vector<metric_row> rows; // three comparisons per level, levels ascending
    std::vector<est::nll_row> nll_rows;
    std::string config_digest;
    std::uint64_t seed = 0;
    int bootstrap_resamples = 1000;
    double ci_level = 0.95;
};

inline eval_report build_report(std::vector<level_artifacts> levels, std::uint64_t seed,
                                std::vector<est::nll_row> nll_rows = {},
                                std::string config_digest = {},
                                const sampling::noise_level_set& expected = {},
                                int resamples = 1000, double level = 0.95) {
    expected.validate();
    std::vector<double> missing;
    for (double want : expected.levels) {
        std::size_t hits = 0;
        for (const auto& l : levels) hits += (l.sigma2 == want);
        if (hits == 0) missing.push_back(want);
        if (hits > 1)
            throw std::invalid_argument("build_report: duplicate sigma2 level " +
                                        std::to_string(want));
    }
    if (!missing.empty()) {
        std::ostringstream os;
        os << "build_report: missing sigma2 levels:";
        for (double m : missing) os << ' ' << m;
        throw std::invalid_argument(os.str());
    }
    for (const auto& l : levels) {
        bool known = false;
        for (double want : expected.levels) known |= (l.sigma2 == want);
        if (!known)
            throw std::invalid_argument("build_report: unexpected sigma2 level " +
                                        std::to_string(l.sigma2));
        if (l.eta_hat.size() < 2 || l.eta_hat.size() != l.eta_pred.size() ||
            l.eta_hat.size() != l.eta_approx.size())
            throw std::invalid_argument("build_report: per-level arrays must align, n >= 2");
    }
    std::sort(levels.begin(), levels.end(),
              [](const level_artifacts& a, const level_artifacts& b) {
                  return a.sigma2 < b.sigma2;
              });

    eval_report report;
    report.nll_rows = std::move(nll_rows);
    report.config_digest = std::move(config_digest);
    report.seed = seed;
    report.bootstrap_resamples = resamples;
    report.ci_level = level;

    for (std::size_t li = 0; li < levels.size(); ++li) {
        const auto& art = levels[li];
        const std::array<std::pair<const char*, std::pair<const triples*, const triples*>>, 3>
            comparisons{{{"eta_hat vs eta_pred", {&art.eta_hat, &art.eta_pred}},
                         {"eta_hat vs eta_approx", {&art.eta_hat, &art.eta_approx}},
                         {"eta_approx vs eta_pred", {&art.eta_approx, &art.eta_pred}}}};
        for (std::size_t ci = 0; ci < comparisons.size(); ++ci) {
            const auto& [name, pair] = comparisons[ci];
            const auto& [ref, cand] = pair;
            metric_row row;
            row.sigma2 = art.sigma2;
            row.comparison = name;
            row.mse = mse(*ref, *cand);
            row.r2 = r_squared(*ref, *cand);
            row.mse_dims = mse_per_dim(*ref, *cand);
            row.r2_dims = r_squared_per_dim(*ref, *cand);
            row.theoretical_max = sampling::theoretical_max(art.sigma2);
            const std::uint64_t tag = li * 8 + ci;
            const auto mse_ci = bootstrap_ci(*ref, *cand, pair_metric::mse,
                                             derive_seed(seed, "report-mse-ci", tag), resamples,
                                             level);
            const auto r2_ci = bootstrap_ci(*ref, *cand, pair_metric::r2,
                                            derive_seed(seed, "report-r2-ci", tag), resamples,
                                            level);
            row.mse_low = mse_ci.low;
            row.mse_high = mse_ci.high;
            row.r2_low = r2_ci.low;
            row.r2_high = r2_ci.high;
            if (ci == 0) row.fraction = fraction_of_max(row.r2, art.sigma2);
            report.rows.push_back(std::move(row));
        }
    }
    return report;
}

inline nlohmann::json report_to_json(const eval_report& report) {
    nlohmann::json j;
    j["schema"] = "imglong-eval-report/1";
    j["seed"] = report.seed;
    j["config_digest"] = report.config_digest;
    j["bootstrap_resamples"] = report.bootstrap_resamples;
    j["ci_level"] = report.ci_level;
    j["metrics"] = nlohmann::json::array();
    for (const auto& row : report.rows) {
        nlohmann::json r;
        r["sigma2"] = row.sigma2;
        r["comparison"] = row.comparison;
        r["mse"] = row.mse;
        r["mse_ci"] = {row.mse_low, row.mse_high};
        r["r2"] = row.r2;
        r["r2_ci"] = {row.r2_low, row.r2_high};
        r["mse_per_dim"] = row.mse_dims;
        r["r2_per_dim"] = row.r2_dims;
        r["theoretical_max"] = row.theoretical_max;
        r["fraction_of_max"] = row.fraction; // NaN serializes as null
        j["metrics"].push_back(std::move(r));
    }
    j["nll"] = nlohmann::json::array();
    for (const auto& row : report.nll_rows) {
        nlohmann::json r;
        r["sigma2"] = row.sigma2;
        r["true"] = row.nll_true;
        r["predicted"] = row.nll_predicted;
        r["approximate"] = row.nll_approximate;
        r["average"] = row.nll_average;
        r["random"] = row.nll_random;
        j["nll"].push_back(std::move(r));
    }
    return j;
}

inline std::string report_to_text(const eval_report& report) {
    std::ostringstream os;
    os << std::fixed << std::setprecision(4);
    os << "Prediction metrics (bootstrap " << report.bootstrap_resamples << " resamples, "
       << std::setprecision(0) << 100.0 * report.ci_level << "% CI)\n"
       << std::setprecision(4);
    os << std::left << std::setw(8) << "sigma2" << std::setw(26) << "comparison" << std::right
       << std::setw(10) << "mse" << std::setw(20) << "mse CI" << std::setw(10) << "r2"
       << std::setw(20) << "r2 CI" << std::setw(10) << "max" << std::setw(10) << "fraction"
       << '\n';
    for (const auto& row : report.rows) {
        std::ostringstream mci, rci;
        mci << std::fixed << std::setprecision(4) << '[' << row.mse_low << ", " << row.mse_high
            << ']';
        rci << std::fixed << std::setprecision(4) << '[' << row.r2_low << ", " << row.r2_high
            << ']';
        os << std::left << std::setw(8) << row.sigma2 << std::setw(26) << row.comparison
           << std::right << std::setw(10) << row.mse << std::setw(20) << mci.str()
           << std::setw(10) << row.r2 << std::setw(20) << rci.str() << std::setw(10)
           << row.theoretical_max;
        if (std::isnan(row.fraction))
            os << std::setw(10) << "-";
        else
            os << std::setw(10) << row.fraction;
        os << '\n';
    }
    if (!report.nll_rows.empty()) {
        os << "\nConditional NLL of trajectories (mean per subject)\n";
        os << std::left << std::setw(8) << "sigma2" << std::right << std::setw(14) << "true"
           << std::setw(14) << "predicted" << std::setw(14) << "approximate" << std::setw(14)
           << "average" << std::setw(16) << "random" << '\n';
        for (const auto& row : report.nll_rows)
            os << std::left << std::setw(8) << row.sigma2 << std::right << std::setw(14)
               << row.nll_true << std::setw(14) << row.nll_predicted << std::setw(14)
               << row.nll_approximate << std::setw(14) << row.nll_average << std::setw(16)
               << row.nll_random << '\n';
    }
    return os.str();
}

} // namespace imglong::metrics
