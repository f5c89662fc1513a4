#pragma once

#include <algorithm>
#include <cmath>
#include <stdexcept>
#include <utility>
#include <vector>

#include "mras/sensing.hpp"
#include "mras/types.hpp"

namespace mras {

struct BaselineConfig {
    double lambda = 0.1;      // l1 weight
    int max_iters = 200;
    double tol = 1e-6;        // relative-change stopping threshold
    int omp_max_groups = 6;
    int lipschitz_iters = 100;  // power-method iterations
};

/// Complex soft threshold: magnitude shrinkage with the phase preserved;
/// exactly zero when |z| <= thr.
inline Complex soft_threshold(Complex z, double thr) {
    const double a = std::abs(z);
    if (a <= thr) return {0.0, 0.0};
    return z * ((a - thr) / a);
}

namespace detail {

inline void state_axpy(DelayAngularState& y, double a, const DelayAngularState& x) {
    for (size_t n = 0; n < y.blocks.size(); ++n) y.blocks[n] += a * x.blocks[n];
}

inline double state_inner(const DelayAngularState& a, const DelayAngularState& b) {
    double s = 0.0;
    for (size_t n = 0; n < a.blocks.size(); ++n) s += real_inner(a.blocks[n], b.blocks[n]);
    return s;
}

inline void refresh_active(DelayAngularState& x) {
    for (size_t n = 0; n < x.blocks.size(); ++n) x.active[n] = x.blocks[n].isZero(0.0) ? 0 : 1;
}

}  // namespace detail

/// Largest eigenvalue of A^H A by power iteration (the Lipschitz constant of
/// the least-squares gradient). Errors out if the estimate has not settled.
inline double estimate_lipschitz(const SensingEnsemble& ens, int iters) {
    if (iters < 2) throw std::invalid_argument("estimate_lipschitz: iters >= 2 required");
    Rng rng(0x1195c417u);
    auto v = DelayAngularState::zeros(ens.n_devices(), ens.M(), ens.D());
    for (auto& b : v.blocks)
        for (Index j = 0; j < b.cols(); ++j)
            for (Index i = 0; i < b.rows(); ++i) b(i, j) = complex_gaussian(rng);
    detail::refresh_active(v);

    double lambda = 0.0, prev = -1.0;
    for (int k = 0; k < iters; ++k) {
        auto w = adjoint(ens, forward(ens, v));
        lambda = std::sqrt(w.squared_norm());
        if (lambda <= 0.0) throw std::runtime_error("estimate_lipschitz: null operator");
        for (auto& b : w.blocks) b /= lambda;
        v = std::move(w);
        if (k > 2 && std::abs(lambda - prev) <= 1e-3 * lambda) return lambda;
        prev = lambda;
    }
    if (std::abs(lambda - prev) > 1e-2 * lambda)
        throw std::runtime_error("estimate_lipschitz: power iteration did not converge");
    return lambda;
}

/// Monotone FISTA on the vectorized lasso
///   min (1/2)||A(X) - Y||_F^2 + lambda ||X||_1
/// with entrywise complex soft thresholding and adaptive restart.
inline DelayAngularState fista_solve(const SensingEnsemble& ens, const CMat& y,
                                     const BaselineConfig& cfg) {
    if (cfg.lambda < 0.0) throw std::invalid_argument("fista_solve: lambda >= 0 required");
    const double lip = 1.02 * estimate_lipschitz(ens, cfg.lipschitz_iters);
    const double step = 1.0 / lip;
    const double thr = cfg.lambda * step;

    auto objective = [&](const DelayAngularState& x) {
        double l1 = 0.0;
        for (const auto& b : x.blocks) l1 += b.cwiseAbs().sum();
        return 0.5 * (forward(ens, x) - y).squaredNorm() + cfg.lambda * l1;
    };

    auto x = DelayAngularState::zeros(ens.n_devices(), ens.M(), ens.D());
    auto x_prev = x;
    auto momentum = x;  // the extrapolated point
    double t_k = 1.0;
    double f_x = objective(x);

    for (int k = 0; k < cfg.max_iters; ++k) {
        // Proximal gradient step from the extrapolated point.
        const CMat residual = forward(ens, momentum) - y;
        auto grad = adjoint(ens, residual);
        auto z = momentum;
        for (size_t n = 0; n < z.blocks.size(); ++n) {
            z.blocks[n] -= step * grad.blocks[n];
            for (Index j = 0; j < z.blocks[n].cols(); ++j)
                for (Index i = 0; i < z.blocks[n].rows(); ++i)
                    z.blocks[n](i, j) = soft_threshold(z.blocks[n](i, j), thr);
        }
        detail::refresh_active(z);
        const double f_z = objective(z);

        x_prev = std::move(x);
        double t_next = 0.5 * (1.0 + std::sqrt(1.0 + 4.0 * t_k * t_k));
        const bool accepted = f_z <= f_x;
        if (accepted) {
            x = std::move(z);
            f_x = f_z;
        } else {
            // Monotone correction: keep the best iterate and restart momentum.
            x = x_prev;
            t_k = 1.0;
            t_next = 1.0;
        }

        momentum = x;
        const double gamma = (t_k - 1.0) / t_next;
        detail::state_axpy(momentum, gamma, x);
        detail::state_axpy(momentum, -gamma, x_prev);
        t_k = t_next;

        if (accepted && k > 0) {
            double dx = 0.0, nx = 0.0;
            for (size_t n = 0; n < x.blocks.size(); ++n) {
                dx += (x.blocks[n] - x_prev.blocks[n]).squaredNorm();
                nx += x.blocks[n].squaredNorm();
            }
            if (std::sqrt(dx) <= cfg.tol * std::max(1.0, std::sqrt(nx))) break;
        }
    }
    detail::refresh_active(x);
    return x;
}

namespace detail {

// Ridge-regularized normal equations on the selected groups, solved by
// conjugate gradient in operator form (never materializes the Gram matrix).
inline DelayAngularState least_squares_on_support(const SensingEnsemble& ens, const CMat& y,
                                                  const std::vector<Index>& support,
                                                  double ridge) {
    auto restrict_support = [&](DelayAngularState& st) {
        std::vector<std::uint8_t> keep(st.blocks.size(), 0);
        for (Index n : support) keep[static_cast<size_t>(n)] = 1;
        for (size_t n = 0; n < st.blocks.size(); ++n)
            if (!keep[n]) st.blocks[n].setZero();
        refresh_active(st);
    };
    auto normal_op = [&](const DelayAngularState& v) {
        auto w = adjoint(ens, forward(ens, v));
        restrict_support(w);
        state_axpy(w, ridge, v);
        return w;
    };

    auto b = adjoint(ens, y);
    restrict_support(b);

    auto x = DelayAngularState::zeros(ens.n_devices(), ens.M(), ens.D());
    auto r = b;
    auto p = r;
    double rs = state_inner(r, r);
    const double rs0 = rs;
    constexpr int kMaxCg = 400;
    for (int k = 0; k < kMaxCg && rs > 1e-20 * std::max(1.0, rs0); ++k) {
        refresh_active(p);
        auto ap = normal_op(p);
        const double alpha = rs / state_inner(p, ap);
        state_axpy(x, alpha, p);
        state_axpy(r, -alpha, ap);
        const double rs_new = state_inner(r, r);
        if (rs_new <= 1e-24 * std::max(1.0, rs0)) break;
        for (size_t n = 0; n < p.blocks.size(); ++n)
            p.blocks[n] = r.blocks[n] + (rs_new / rs) * p.blocks[n];
        rs = rs_new;
    }
    refresh_active(x);
    return x;
}

}  // namespace detail

/// Greedy group pursuit: repeatedly selects the device with the largest
/// residual correlation energy ||B_bar^H R A_n^H||_F, then refits all selected
/// groups by least squares. Support sets are nested across iterations.
inline DelayAngularState gomp_solve(const SensingEnsemble& ens, const CMat& y,
                                    const BaselineConfig& cfg) {
    if (cfg.omp_max_groups < 0 || cfg.omp_max_groups > ens.n_devices())
        throw std::invalid_argument("gomp_solve: omp_max_groups must be in [0, N]");
    constexpr double kRidge = 1e-10;

    auto x = DelayAngularState::zeros(ens.n_devices(), ens.M(), ens.D());
    if (y.isZero(0.0)) return x;

    std::vector<Index> support;
    std::vector<std::uint8_t> in_support(static_cast<size_t>(ens.n_devices()), 0);
    CMat residual = y;
    double res_norm = residual.norm();

    for (int k = 0; k < cfg.omp_max_groups; ++k) {
        const CMat bh_res = ens.B_bar.adjoint() * residual;
        Index best = -1;
        double best_energy = -1.0;
        for (Index n = 0; n < ens.n_devices(); ++n) {
            if (in_support[static_cast<size_t>(n)]) continue;
            const double e = (bh_res * ens.A[static_cast<size_t>(n)].adjoint()).squaredNorm();
            if (e > best_energy) {
                best_energy = e;
                best = n;
            }
        }
        if (best < 0) break;
        support.push_back(best);
        in_support[static_cast<size_t>(best)] = 1;

        x = detail::least_squares_on_support(ens, y, support, kRidge);
        residual = y - forward(ens, x);

        const double new_norm = residual.norm();
        if (new_norm >= (1.0 - cfg.tol) * res_norm) break;  // residual stagnation
        res_norm = new_norm;
    }
    return x;
}

}  // namespace mras
