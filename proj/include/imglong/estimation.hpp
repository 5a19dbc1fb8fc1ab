#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <iostream>
#include <limits>
#include <numbers>
#include <stdexcept>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "imglong/errors.hpp"
#include "imglong/neldermead.hpp"
#include "imglong/nlme.hpp"
#include "imglong/rng.hpp"

namespace imglong::est {

using eta3 = std::array<double, 3>;

class prior {
public:
    prior() : prior(Eigen::Matrix3d::Identity()) {}

    explicit prior(const Eigen::Matrix3d& omega) : omega_(omega) {
        if ((omega - omega.transpose()).cwiseAbs().maxCoeff() > 1e-12)
            throw std::invalid_argument("prior: omega must be symmetric");
        Eigen::LLT<Eigen::Matrix3d> llt(omega);
        if (llt.info() != Eigen::Success)
            throw std::invalid_argument("prior: omega must be positive definite");
        omega_inv_ = llt.solve(Eigen::Matrix3d::Identity());
        const Eigen::Matrix3d L = llt.matrixL();
        log_det_ = 2.0 * std::log(L(0, 0) * L(1, 1) * L(2, 2));
    }

    const Eigen::Matrix3d& omega() const { return omega_; }
    double log_det() const { return log_det_; }

    double quad(const eta3& eta) const {
        const Eigen::Vector3d v(eta[0], eta[1], eta[2]);
        return v.dot(omega_inv_ * v);
    }

    // ½ηᵀΩ⁻¹η + ½ln((2π)³ det Ω)
    double neg_log_density_term(const eta3& eta) const {
        return 0.5 * quad(eta) + 0.5 * (3.0 * std::log(2.0 * std::numbers::pi) + log_det_);
    }

private:
    Eigen::Matrix3d omega_;
    Eigen::Matrix3d omega_inv_;
    double log_det_ = 0.0;
};

struct optimizer_options {
    int max_iter = 2000;
    double spread_tol = 1e-10;
    double simplex_step = 0.5;
    // 0 refines every start; k > 0 ranks the 28 starts by objective and runs
    // the simplex only from the best k
    int top_k = 0;
};

struct eb_result {
    eta3 eta_approx{};
    double objective = std::numeric_limits<double>::infinity();
    bool converged = false;
    long n_evals = 0;
};

inline double neg_log_joint(const eta3& eta, const nlme::observation_set& obs,
                            const prior& pr, double sigma_eps) {
    if (!(sigma_eps > 0.0))
        throw std::invalid_argument("neg_log_joint: sigma_eps must be positive");
    if (obs.times.size() != obs.y.size())
        throw std::invalid_argument("neg_log_joint: observation times/values length mismatch");

    double data_term = 0.0;
    if (!obs.times.empty()) {
        nlme::time_grid grid{obs.times};
        const auto traj = nlme::solve_ode(nlme::params_from_eta(eta, {}), {}, grid, {});
        const double inv_two_var = 1.0 / (2.0 * sigma_eps * sigma_eps);
        const double log_norm = 0.5 * std::log(2.0 * std::numbers::pi * sigma_eps * sigma_eps);
        for (std::size_t j = 0; j < obs.y.size(); ++j) {
            const double r = obs.y[j] - traj.C[j];
            data_term += r * r * inv_two_var + log_norm;
        }
    }
    return data_term + pr.neg_log_density_term(eta);
}

namespace detail {

inline std::vector<eta3> multistart_points() {
    std::vector<eta3> starts;
    starts.reserve(28);
    starts.push_back({0.0, 0.0, 0.0});
    for (int a = -1; a <= 1; ++a)
        for (int b = -1; b <= 1; ++b)
            for (int c = -1; c <= 1; ++c) {
                if (a == 0 && b == 0 && c == 0) continue;
                starts.push_back({double(a), double(b), double(c)});
            }
    return starts;
}

} // namespace detail

inline eb_result empirical_bayes(const nlme::observation_set& obs, const prior& pr,
                                 double sigma_eps, const optimizer_options& opts = {}) {
    if (obs.times.empty())
        throw std::invalid_argument("empirical_bayes: need at least one observation");

    eb_result res;
    auto objective = [&](const eta3& eta) -> double {
        ++res.n_evals;
        try {
            return neg_log_joint(eta, obs, pr, sigma_eps);
        } catch (const numerical_error&) {
            return std::numeric_limits<double>::infinity();
        }
    };

    auto starts = detail::multistart_points();
    std::vector<double> start_vals(starts.size());
    for (std::size_t i = 0; i < starts.size(); ++i) start_vals[i] = objective(starts[i]);

    std::vector<std::size_t> order(starts.size());
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
    std::stable_sort(order.begin(), order.end(),
                     [&](std::size_t a, std::size_t b) { return start_vals[a] < start_vals[b]; });

    if (!std::isfinite(start_vals[order[0]])) {
        // every start already fails the solver; report the untouched center point
        res.eta_approx = {0.0, 0.0, 0.0};
        res.converged = false;
        return res;
    }

    std::size_t n_refine = starts.size();
    if (opts.top_k > 0) n_refine = std::min<std::size_t>(opts.top_k, starts.size());

    nm::options nm_opts;
    nm_opts.max_iter = opts.max_iter;
    nm_opts.spread_tol = opts.spread_tol;
    nm_opts.step = opts.simplex_step;

    bool best_converged = false;
    for (std::size_t r = 0; r < n_refine; ++r) {
        const auto& x0 = starts[order[r]];
        if (!std::isfinite(start_vals[order[r]])) continue;
        auto run = nm::minimize<3>(objective, x0, nm_opts);
        if (run.fx < res.objective) {
            res.objective = run.fx;
            res.eta_approx = run.x;
            best_converged = run.converged;
        }
    }
    res.converged = best_converged && std::isfinite(res.objective);
    return res;
}

struct laplace_diagnostics {
    eta3 eta_star{};
    double objective_at_star = 0.0;
    bool eb_converged = false;
    bool hessian_pd = false;
};

inline double laplace_marginal_nll(const nlme::observation_set& obs, const prior& pr,
                                   double sigma_eps, laplace_diagnostics* diag = nullptr,
                                   const optimizer_options& opts = {}) {
    eta3 star{0.0, 0.0, 0.0};
    bool eb_ok = true;
    if (!obs.times.empty()) {
        const auto eb = empirical_bayes(obs, pr, sigma_eps, opts);
        star = eb.eta_approx;
        eb_ok = eb.converged;
        if (!eb_ok)
            std::cerr << "warning: laplace_marginal_nll on subject " << obs.subject_id
                      << ": empirical Bayes did not converge, using best point found\n";
    }
    // with no observations the objective is the prior alone and its minimum is exactly 0

    auto f = [&](const eta3& eta) { return neg_log_joint(eta, obs, pr, sigma_eps); };
    const double f0 = f(star);

    const double h = 1e-4;
    Eigen::Matrix3d H;
    for (int i = 0; i < 3; ++i) {
        eta3 p = star, m = star;
        p[i] += h;
        m[i] -= h;
        H(i, i) = (f(p) - 2.0 * f0 + f(m)) / (h * h);
    }
    for (int i = 0; i < 3; ++i)
        for (int j = i + 1; j < 3; ++j) {
            eta3 pp = star, pm = star, mp = star, mm = star;
            pp[i] += h; pp[j] += h;
            pm[i] += h; pm[j] -= h;
            mp[i] -= h; mp[j] += h;
            mm[i] -= h; mm[j] -= h;
            H(i, j) = H(j, i) = (f(pp) - f(pm) - f(mp) + f(mm)) / (4.0 * h * h);
        }

    const double m1 = H(0, 0);
    const double m2 = H(0, 0) * H(1, 1) - H(0, 1) * H(1, 0);
    const double det = H.determinant();
    const bool pd = m1 > 0.0 && m2 > 0.0 && det > 0.0;

    if (diag) {
        diag->eta_star = star;
        diag->objective_at_star = f0;
        diag->eb_converged = eb_ok;
        diag->hessian_pd = pd;
    }

    double abs_det = std::abs(det);
    if (!pd) {
        std::cerr << "warning: laplace_marginal_nll on subject " << obs.subject_id
                  << ": Hessian at the mode is not positive definite (det " << det
                  << "), value uses |det|\n";
        if (abs_det < 1e-300)
            throw numerical_error("laplace_marginal_nll: singular Hessian at the mode");
    }

    return f0 + 0.5 * std::log(abs_det) - 1.5 * std::log(2.0 * std::numbers::pi);
}

inline double conditional_nll(const nlme::trajectory& reference,
                              const std::vector<double>& candidate_values,
                              double sigma_eps = 0.01) {
    if (reference.C.size() != candidate_values.size())
        throw std::invalid_argument("conditional_nll: candidate length does not match reference grid");
    if (!(sigma_eps > 0.0))
        throw std::invalid_argument("conditional_nll: sigma_eps must be positive");
    const double inv_two_var = 1.0 / (2.0 * sigma_eps * sigma_eps);
    const double log_norm = 0.5 * std::log(2.0 * std::numbers::pi * sigma_eps * sigma_eps);
    double acc = 0.0;
    for (std::size_t j = 0; j < candidate_values.size(); ++j) {
        const double r = reference.C[j] - candidate_values[j];
        acc += r * r * inv_two_var + log_norm;
    }
    return acc;
}

struct nll_row {
    double sigma2 = 0.0;
    double nll_true = 0.0;
    double nll_predicted = 0.0;
    double nll_approximate = 0.0;
    double nll_average = 0.0;
    double nll_random = 0.0;
};

// everything needed to score one noise level of the test split
struct level_scoring_inputs {
    double sigma2 = 0.0;
    std::vector<eta3> eta_hat;                    // latents that generated the data
    std::vector<nlme::observation_set> obs;       // noisy observations on the grid
    std::vector<eta3> eta_pred;                   // predictor output
    std::vector<eta3> eta_approx;                 // empirical Bayes estimates
};

inline std::vector<nll_row> nll_table(const std::vector<level_scoring_inputs>& levels,
                                      std::uint64_t seed,
                                      const nlme::fixed_effects& fx = {},
                                      const nlme::time_grid& grid = nlme::default_grid(),
                                      double sigma_eps = 0.01) {
    if (levels.empty()) throw std::invalid_argument("nll_table: no levels");
    const std::size_t n = levels.front().eta_hat.size();
    for (const auto& lv : levels) {
        if (lv.eta_hat.size() != n || lv.obs.size() != n || lv.eta_pred.size() != n ||
            lv.eta_approx.size() != n || n == 0)
            throw std::invalid_argument("nll_table: subject sets not aligned across inputs");
        for (const auto& o : lv.obs)
            if (o.times.size() != grid.times.size())
                throw std::invalid_argument("nll_table: observations not on the scoring grid");
    }

    const auto average_traj = nlme::simulate({0.0, 0.0, 0.0}, fx, grid);

    std::vector<nll_row> rows;
    rows.reserve(levels.size());
    for (std::size_t li = 0; li < levels.size(); ++li) {
        const auto& lv = levels[li];
        nll_row row;
        row.sigma2 = lv.sigma2;
        for (std::size_t i = 0; i < n; ++i) {
            const auto reference = nlme::simulate(lv.eta_hat[i], fx, grid);
            row.nll_true += conditional_nll(reference, lv.obs[i].y, sigma_eps);
            row.nll_predicted +=
                conditional_nll(reference, nlme::simulate(lv.eta_pred[i], fx, grid).C, sigma_eps);
            row.nll_approximate +=
                conditional_nll(reference, nlme::simulate(lv.eta_approx[i], fx, grid).C, sigma_eps);
            row.nll_average += conditional_nll(reference, average_traj.C, sigma_eps);

            rng256 r(derive_seed(seed, "nll-random", li * 1000003ull + i));
            eta3 fresh{r.next_normal(), r.next_normal(), r.next_normal()};
            row.nll_random += conditional_nll(reference, nlme::simulate(fresh, fx, grid).C, sigma_eps);
        }
        const double inv_n = 1.0 / static_cast<double>(n);
        row.nll_true *= inv_n;
        row.nll_predicted *= inv_n;
        row.nll_approximate *= inv_n;
        row.nll_average *= inv_n;
        row.nll_random *= inv_n;
        rows.push_back(row);
    }
    return rows;
}

} // namespace imglong::est
