#pragma once

#include <array>
#include <cmath>
#include <cstdint>
#include <sstream>
#include <stdexcept>
#include <vector>

#include "errors.hpp"
#include "ode.hpp"
#include "rng.hpp"

namespace imglong::nlme {

struct structural_params {
    double Ka;   // absorption rate
    double Imax; // maximal elimination rate
    double IC50; // half-saturation concentration
};

struct fixed_effects {
    double Ka_base = 1.0;
    double Imax_base = 2.1;
    double IC50_base = 0.4;
    double D0 = 1.0;
    double C0 = 0.0;
};

struct time_grid {
    std::vector<double> times;

    void validate() const {
        if (times.empty()) throw std::invalid_argument("time_grid: empty");
        double prev = 0.0;
        for (double t : times) {
            if (!(t > prev) || !std::isfinite(t))
                throw std::invalid_argument("time_grid: times must be strictly increasing and positive");
            prev = t;
        }
    }
};

// 21 observations at t = 0.5, 1.0, ..., 10.5
inline time_grid default_grid() {
    time_grid g;
    g.times.reserve(21);
    for (int j = 1; j <= 21; ++j) g.times.push_back(0.5 * j);
    return g;
}

struct trajectory {
    time_grid grid;
    std::vector<double> D;
    std::vector<double> C;
};

struct observation_set {
    long long subject_id = -1;
    double sigma2 = 0.0; // association level this subject's eta_hat came from
    std::vector<double> times;
    std::vector<double> y;
};

inline structural_params params_from_eta(const std::array<double, 3>& eta_hat,
                                         const fixed_effects& fx = {}) {
    return {fx.Ka_base * std::exp(eta_hat[0]),
            fx.Imax_base * std::exp(eta_hat[1]),
            fx.IC50_base * std::exp(eta_hat[2])};
}

inline trajectory solve_ode(const structural_params& p, const fixed_effects& fx,
                            const time_grid& grid, const ode::tolerances& tol = {}) {
    grid.validate();
    if (!(p.Ka > 0.0) || !(p.Imax > 0.0) || !(p.IC50 > 0.0))
        throw std::invalid_argument("solve_ode: structural params must be positive");

    auto rhs = [&p](double, const std::array<double, 2>& y) {
        const double elim = p.Imax * y[1] / (p.IC50 + y[1]);
        return std::array<double, 2>{-p.Ka * y[0], p.Ka * y[0] - elim};
    };

    std::vector<std::array<double, 2>> vals;
    try {
        ode::dopri5<2>(rhs, {fx.D0, fx.C0}, 0.0, grid.times, vals, tol);
    } catch (const numerical_error& e) {
        std::ostringstream why;
        why << e.what() << " [Ka=" << p.Ka << " Imax=" << p.Imax << " IC50=" << p.IC50 << "]";
        throw numerical_error(why.str());
    }

    trajectory tr;
    tr.grid = grid;
    tr.D.reserve(vals.size());
    tr.C.reserve(vals.size());
    for (const auto& v : vals) {
        tr.D.push_back(v[0]);
        tr.C.push_back(std::max(v[1], 0.0)); // roundoff can graze below zero near washout
    }
    return tr;
}

inline trajectory simulate(const std::array<double, 3>& eta_hat, const fixed_effects& fx,
                           const time_grid& grid, const ode::tolerances& tol = {},
                           double eta_clamp = 5.0) {
    std::array<double, 3> e = eta_hat;
    for (auto& x : e) {
        if (x > eta_clamp) x = eta_clamp;
        if (x < -eta_clamp) x = -eta_clamp;
    }
    return solve_ode(params_from_eta(e, fx), fx, grid, tol);
}

inline observation_set observe(const trajectory& traj, double sigma_eps, std::uint64_t seed) {
    if (sigma_eps < 0.0) throw std::invalid_argument("observe: sigma_eps must be >= 0");
    observation_set obs;
    obs.times = traj.grid.times;
    obs.y.reserve(traj.C.size());
    rng256 gen(seed);
    for (double c : traj.C) obs.y.push_back(c + sigma_eps * gen.next_normal());
    return obs;
}

} // namespace imglong::nlme
