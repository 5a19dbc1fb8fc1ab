#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstddef>
#include <sstream>
#include <vector>

#include "errors.hpp"

namespace imglong::ode {

struct tolerances {
    double rtol = 1e-8;
    double atol = 1e-10;
};

// Dormand-Prince 5(4) with FSAL and 4th-order-accurate dense output.
// Integrates y' = f(t, y) from t0 through the last requested output time
// and fills outputs via the continuous extension of each accepted step.
template <std::size_t N, typename F>
void dopri5(F&& f, std::array<double, N> y, double t0,
            const std::vector<double>& out_times,
            std::vector<std::array<double, N>>& out_values,
            const tolerances& tol = {}) {
    static constexpr double c2 = 1.0 / 5, c3 = 3.0 / 10, c4 = 4.0 / 5, c5 = 8.0 / 9;
    static constexpr double a21 = 1.0 / 5;
    static constexpr double a31 = 3.0 / 40, a32 = 9.0 / 40;
    static constexpr double a41 = 44.0 / 45, a42 = -56.0 / 15, a43 = 32.0 / 9;
    static constexpr double a51 = 19372.0 / 6561, a52 = -25360.0 / 2187,
                            a53 = 64448.0 / 6561, a54 = -212.0 / 729;
    static constexpr double a61 = 9017.0 / 3168, a62 = -355.0 / 33, a63 = 46732.0 / 5247,
                            a64 = 49.0 / 176, a65 = -5103.0 / 18656;
    static constexpr double b1 = 35.0 / 384, b3 = 500.0 / 1113, b4 = 125.0 / 192,
                            b5 = -2187.0 / 6784, b6 = 11.0 / 84;
    static constexpr double e1 = 71.0 / 57600, e3 = -71.0 / 16695, e4 = 71.0 / 1920,
                            e5 = -17253.0 / 339200, e6 = 22.0 / 525, e7 = -1.0 / 40;
    static constexpr double d1 = -12715105075.0 / 11282082432.0,
                            d3 = 87487479700.0 / 32700410799.0,
                            d4 = -10690763975.0 / 1880347072.0,
                            d5 = 701980252875.0 / 199316789632.0,
                            d6 = -1453857185.0 / 822651844.0,
                            d7 = 69997945.0 / 29380423.0;

    out_values.assign(out_times.size(), {});
    if (out_times.empty()) return;
    const double t_end = out_times.back();
    if (t_end <= t0) {
        for (std::size_t i = 0; i < out_times.size(); ++i) out_values[i] = y;
        return;
    }

    auto err_norm = [&](const std::array<double, N>& y0, const std::array<double, N>& y1,
                        const std::array<double, N>& e) {
        double sum = 0.0;
        for (std::size_t i = 0; i < N; ++i) {
            const double sc = tol.atol + tol.rtol * std::max(std::abs(y0[i]), std::abs(y1[i]));
            const double q = e[i] / sc;
            sum += q * q;
        }
        return std::sqrt(sum / N);
    };

    double t = t0;
    std::array<double, N> k1 = f(t, y);

    // conservative first step from the rhs magnitude at t0
    double h = 1e-6;
    {
        double ny = 0.0, nk = 0.0;
        for (std::size_t i = 0; i < N; ++i) {
            ny = std::max(ny, std::abs(y[i]));
            nk = std::max(nk, std::abs(k1[i]));
        }
        if (nk > 0.0) h = std::clamp(0.01 * (ny + tol.atol) / nk, 1e-8, 1e-2);
    }

    std::size_t next_out = 0;
    std::array<double, N> k2, k3, k4, k5, k6, k7, ynew, yerr, ytmp;
    long rejected_in_a_row = 0;

    while (next_out < out_times.size()) {
        // output times already reached up to fp slack are served directly
        while (next_out < out_times.size() && out_times[next_out] <= t + std::abs(t) * 1e-13) {
            out_values[next_out] = y;
            ++next_out;
        }
        if (next_out >= out_times.size()) break;
        if (t + h > t_end) h = t_end - t;
        if (!(h > std::abs(t) * 1e-14 + 1e-300)) {
            std::ostringstream why;
            why << "dopri5: step size underflow at t=" << t << " (h=" << h << ")";
            throw numerical_error(why.str());
        }

        for (std::size_t i = 0; i < N; ++i) ytmp[i] = y[i] + h * a21 * k1[i];
        k2 = f(t + c2 * h, ytmp);
        for (std::size_t i = 0; i < N; ++i) ytmp[i] = y[i] + h * (a31 * k1[i] + a32 * k2[i]);
        k3 = f(t + c3 * h, ytmp);
        for (std::size_t i = 0; i < N; ++i)
            ytmp[i] = y[i] + h * (a41 * k1[i] + a42 * k2[i] + a43 * k3[i]);
        k4 = f(t + c4 * h, ytmp);
        for (std::size_t i = 0; i < N; ++i)
            ytmp[i] = y[i] + h * (a51 * k1[i] + a52 * k2[i] + a53 * k3[i] + a54 * k4[i]);
        k5 = f(t + c5 * h, ytmp);
        for (std::size_t i = 0; i < N; ++i)
            ytmp[i] = y[i] + h * (a61 * k1[i] + a62 * k2[i] + a63 * k3[i] + a64 * k4[i] + a65 * k5[i]);
        k6 = f(t + h, ytmp);
        for (std::size_t i = 0; i < N; ++i)
            ynew[i] = y[i] + h * (b1 * k1[i] + b3 * k3[i] + b4 * k4[i] + b5 * k5[i] + b6 * k6[i]);
        k7 = f(t + h, ynew);
        for (std::size_t i = 0; i < N; ++i)
            yerr[i] = h * (e1 * k1[i] + e3 * k3[i] + e4 * k4[i] + e5 * k5[i] + e6 * k6[i] + e7 * k7[i]);

        const double err = err_norm(y, ynew, yerr);
        if (err <= 1.0) {
            rejected_in_a_row = 0;
            // dense output over [t, t+h] for every requested time inside
            while (next_out < out_times.size() && out_times[next_out] <= t + h + 1e-14) {
                const double theta = std::clamp((out_times[next_out] - t) / h, 0.0, 1.0);
                for (std::size_t i = 0; i < N; ++i) {
                    const double dy = ynew[i] - y[i];
                    const double r3 = h * k1[i] - dy;
                    const double r4 = dy - h * k7[i] - r3;
                    const double r5 = h * (d1 * k1[i] + d3 * k3[i] + d4 * k4[i] + d5 * k5[i] +
                                           d6 * k6[i] + d7 * k7[i]);
                    out_values[next_out][i] =
                        y[i] + theta * (dy + (1.0 - theta) * (r3 + theta * (r4 + (1.0 - theta) * r5)));
                }
                ++next_out;
            }
            t += h;
            y = ynew;
            k1 = k7; // FSAL
            const double grow = err > 0.0 ? 0.9 * std::pow(err, -0.2) : 10.0;
            h *= std::clamp(grow, 0.2, 10.0);
        } else {
            if (++rejected_in_a_row > 60) {
                std::ostringstream why;
                why << "dopri5: no acceptable step at t=" << t << " (err=" << err << ")";
                throw numerical_error(why.str());
            }
            h *= std::max(0.2, 0.9 * std::pow(err, -0.2));
        }
    }
}

// classic fixed-step RK4; the brute-force oracle for the adaptive path
template <std::size_t N, typename F>
void rk4_fixed(F&& f, std::array<double, N> y, double t0, double h,
               const std::vector<double>& out_times,
               std::vector<std::array<double, N>>& out_values) {
    out_values.assign(out_times.size(), {});
    std::size_t next_out = 0;
    std::array<double, N> k1, k2, k3, k4, ytmp;
    // step index kept as an integer so t carries no accumulated drift
    for (long long step = 0; next_out < out_times.size(); ++step) {
        const double t = t0 + static_cast<double>(step) * h;
        while (next_out < out_times.size() && out_times[next_out] <= t + h * 0.5) {
            out_values[next_out] = y;
            ++next_out;
        }
        if (next_out >= out_times.size()) break;
        k1 = f(t, y);
        for (std::size_t i = 0; i < N; ++i) ytmp[i] = y[i] + 0.5 * h * k1[i];
        k2 = f(t + 0.5 * h, ytmp);
        for (std::size_t i = 0; i < N; ++i) ytmp[i] = y[i] + 0.5 * h * k2[i];
        k3 = f(t + 0.5 * h, ytmp);
        for (std::size_t i = 0; i < N; ++i) ytmp[i] = y[i] + h * k3[i];
        k4 = f(t + h, ytmp);
        for (std::size_t i = 0; i < N; ++i)
            y[i] += h / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]);
    }
}

} // namespace imglong::ode
