#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstddef>
#include <functional>

namespace imglong::nm {

struct options {
    int max_iter = 2000;
    double spread_tol = 1e-10; // stop when max-min objective over the simplex drops below
    double step = 0.5;         // initial simplex edge
};

template <std::size_t N>
struct result {
    std::array<double, N> x{};
    double fx = 0.0;
    int iterations = 0;
    long evals = 0;
    bool converged = false;
};

// standard downhill simplex (reflection 1, expansion 2, contraction 1/2, shrink 1/2)
template <std::size_t N, typename F>
result<N> minimize(F&& f, const std::array<double, N>& x0, const options& opt = {}) {
    constexpr std::size_t M = N + 1;
    std::array<std::array<double, N>, M> xs;
    std::array<double, M> fs;
    result<N> res;

    xs[0] = x0;
    for (std::size_t i = 1; i < M; ++i) {
        xs[i] = x0;
        xs[i][i - 1] += opt.step;
    }
    for (std::size_t i = 0; i < M; ++i) {
        fs[i] = f(xs[i]);
        ++res.evals;
    }

    std::array<std::size_t, M> ord;
    for (std::size_t i = 0; i < M; ++i) ord[i] = i;

    for (res.iterations = 0; res.iterations < opt.max_iter; ++res.iterations) {
        std::sort(ord.begin(), ord.end(), [&](std::size_t a, std::size_t b) { return fs[a] < fs[b]; });
        const std::size_t best = ord[0], worst = ord[M - 1], second_worst = ord[M - 2];

        if (std::isfinite(fs[best]) && fs[worst] - fs[best] < opt.spread_tol) {
            res.converged = true;
            break;
        }

        std::array<double, N> centroid{};
        for (std::size_t i = 0; i < M; ++i) {
            if (i == worst) continue;
            for (std::size_t k = 0; k < N; ++k) centroid[k] += xs[i][k];
        }
        for (auto& c : centroid) c /= static_cast<double>(N);

        auto blend = [&](double coef) {
            std::array<double, N> p;
            for (std::size_t k = 0; k < N; ++k)
                p[k] = centroid[k] + coef * (xs[worst][k] - centroid[k]);
            return p;
        };

        const auto refl = blend(-1.0);
        const double f_refl = f(refl);
        ++res.evals;

        if (f_refl < fs[best]) {
            const auto exp_pt = blend(-2.0);
            const double f_exp = f(exp_pt);
            ++res.evals;
            if (f_exp < f_refl) {
                xs[worst] = exp_pt;
                fs[worst] = f_exp;
            } else {
                xs[worst] = refl;
                fs[worst] = f_refl;
            }
        } else if (f_refl < fs[second_worst]) {
            xs[worst] = refl;
            fs[worst] = f_refl;
        } else {
            const bool outside = f_refl < fs[worst];
            const auto con = blend(outside ? -0.5 : 0.5);
            const double f_con = f(con);
            ++res.evals;
            if (f_con < std::min(f_refl, fs[worst])) {
                xs[worst] = con;
                fs[worst] = f_con;
            } else {
                // shrink toward the best vertex
                for (std::size_t i = 0; i < M; ++i) {
                    if (i == best) continue;
                    for (std::size_t k = 0; k < N; ++k)
                        xs[i][k] = xs[best][k] + 0.5 * (xs[i][k] - xs[best][k]);
                    fs[i] = f(xs[i]);
                    ++res.evals;
                }
            }
        }
    }

    std::size_t best = 0;
    for (std::size_t i = 1; i < M; ++i)
        if (fs[i] < fs[best]) best = i;
    res.x = xs[best];
    res.fx = fs[best];
    return res;
}

} // namespace imglong::nm
