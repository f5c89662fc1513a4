#pragma once

#include <cmath>
#include <limits>
#include <ostream>
#include <stdexcept>
#include <utility>
#include <vector>

#include "mras/manifold.hpp"
#include "mras/sensing.hpp"
#include "mras/types.hpp"

namespace mras {

enum class LineSearch { FixedStep, Backtracking };

struct SolverConfig {
    double nu = 0.3;           // sparsity weight
    double rho = 1.0 / 0.039;  // smoothing sharpness
    int L_max = 2;             // per-device rank ceiling
    double mu = 1e-2;          // step size (fixed, or initial trial for backtracking)
    int max_iters = 200;
    double grad_tol = 1e-6;    // early exit when grad norm <= grad_tol * initial grad norm
    double omega = 3.0;        // truncation scale of the spectral initialization
    LineSearch line_search = LineSearch::FixedStep;
    double v1 = 0.1;           // activity detector ratio
    std::ostream* progress = nullptr;  // optional CSV stream: iter,objective,grad_norm,step
};

struct SolveResult {
    FactorPoint factors;
    DelayAngularState blocks;
    std::vector<CMat> channels;  // M x B per device
    std::vector<Index> detected;
    std::vector<double> objective_trace;
    std::vector<double> grad_norm_trace;
    std::vector<double> step_trace;
    int iterations = 0;
    bool init_fallback = false;
};

/// |x| - ln(1 + rho|x|)/rho: nonnegative, differentiable at 0, and approaching
/// |x| as rho grows.
inline double smoothed_abs(Complex x, double rho) {
    if (rho <= 0.0) throw std::invalid_argument("smoothed_abs: rho > 0 required");
    const double a = std::abs(x);
    return a - std::log1p(rho * a) / rho;
}

namespace detail {

struct SolveEval {
    std::vector<CMat> X;  // per-device J_n R_n^H
    CMat residual;        // sum_n B_bar X_n A_n - Y
    double data_term = 0.0;
    double penalty = 0.0;

    double f() const { return data_term + penalty; }
};

inline SolveEval evaluate(const SensingEnsemble& ens, const FactorPoint& s, const CMat& y,
                          const SolverConfig& cfg) {
    SolveEval ev;
    ev.X.reserve(s.S.size());
    ev.residual = -y;
    for (Index n = 0; n < s.n_devices(); ++n) {
        ev.X.push_back(s.reconstruct(n));
        ev.residual.noalias() += (ens.B_bar * ev.X.back()) * ens.A[static_cast<size_t>(n)];
        if (cfg.nu > 0.0) {
            double p = 0.0;
            for (Index j = 0; j < ev.X.back().cols(); ++j)
                for (Index i = 0; i < ev.X.back().rows(); ++i)
                    p += smoothed_abs(ev.X.back()(i, j), cfg.rho);
            ev.penalty += cfg.nu * p;
        }
    }
    ev.data_term = 0.5 * ev.residual.squaredNorm();
    return ev;
}

// Ambient gradient paired with the metric: for any direction xi,
// d/dh f(S + h xi)|_0 = metric(grad, xi). Per device, with E = B_bar^H Xi A_n^H
// and W the entrywise penalty gradient nu*rho*x/(1 + rho|x|),
//   top rows:    (E + W) R_n
//   bottom rows: (E + W)^H J_n.
inline TangentDirection gradient_from_eval(const SensingEnsemble& ens, const FactorPoint& s,
                                           const SolveEval& ev, const SolverConfig& cfg) {
    TangentDirection g;
    g.xi.reserve(s.S.size());
    const CMat bh_res = ens.B_bar.adjoint() * ev.residual;  // M x B_p, shared
    const Index m = s.m_antennas;
    const Index d = s.n_delay();
    for (Index n = 0; n < s.n_devices(); ++n) {
        CMat e = bh_res * ens.A[static_cast<size_t>(n)].adjoint();  // M x D
        if (cfg.nu > 0.0) {
            const CMat& x = ev.X[static_cast<size_t>(n)];
            for (Index j = 0; j < d; ++j)
                for (Index i = 0; i < m; ++i)
                    e(i, j) += cfg.nu * cfg.rho * x(i, j) / (1.0 + cfg.rho * std::abs(x(i, j)));
        }
        CMat block(m + d, s.rank());
        block.topRows(m).noalias() = e * s.R(n);
        block.bottomRows(d).noalias() = e.adjoint() * s.J(n);
        g.xi.push_back(std::move(block));
    }
    return g;
}

}  // namespace detail

/// Smoothed objective: (1/2)||sum_n B_bar (J_n R_n^H) A_n - Y||_F^2
/// + nu * sum_n sum_ij smoothed_abs((J_n R_n^H)_ij, rho).
inline double objective(const FactorPoint& s, const SensingEnsemble& ens, const CMat& y,
                        const SolverConfig& cfg) {
    if (s.m_antennas != ens.M() || s.n_delay() != ens.D() || s.n_devices() != ens.n_devices())
        throw std::invalid_argument("objective: factor shape does not match ensemble");
    return detail::evaluate(ens, s, y, cfg).f();
}

/// Ambient gradient of the objective; metric(grad, xi) equals the directional
/// derivative along xi.
inline TangentDirection euclidean_gradient(const FactorPoint& s, const SensingEnsemble& ens,
                                           const CMat& y, const SolverConfig& cfg) {
    const auto ev = detail::evaluate(ens, s, y, cfg);
    return detail::gradient_from_eval(ens, s, ev, cfg);
}

/// Horizontal projection of half the ambient gradient (the quotient-geometry
/// update direction; the factor is absorbed by the step size).
inline TangentDirection riemannian_gradient(const FactorPoint& s, const SensingEnsemble& ens,
                                            const CMat& y, const SolverConfig& cfg) {
    TangentDirection g = euclidean_gradient(s, ens, y, cfg);
    for (auto& x : g.xi) x *= 0.5;
    return project_horizontal(s, g);
}

/// Zeroes the large-magnitude outliers: keeps entries with
/// |y_lm| <= (omega / (M_p B_p)) * sum |y_lm|.
inline CMat truncate_measurements(const CMat& y, double omega) {
    const double thr =
        omega / static_cast<double>(y.rows() * y.cols()) * y.cwiseAbs().sum();
    CMat out = y;
    for (Index j = 0; j < y.cols(); ++j)
        for (Index i = 0; i < y.rows(); ++i)
            if (std::abs(out(i, j)) > thr) out(i, j) = Complex(0.0, 0.0);
    return out;
}

/// Truncated spectral initialization: per device the rank-L_max truncated SVD
/// of B_bar^H Y_tru A_n^H / (M_p B_p), split as J = U sqrt(Sigma),
/// R = V sqrt(Sigma). The 1/(M_p B_p) factor makes the back-projection an
/// unbiased estimate of the device state (E[B_bar^H B_bar] = M_p I and
/// A_n A_n^H averages to B_p I), which puts the starting point on the right
/// scale. Singular values below 1e-8 are padded to keep full column rank. An
/// all-zero truncated measurement falls back to a small random full-rank point.
inline FactorPoint truncated_init(const SensingEnsemble& ens, const CMat& y,
                                  const SolverConfig& cfg, Rng* rng = nullptr,
                                  bool* used_fallback = nullptr) {
    constexpr double kSvFloor = 1e-8;
    const CMat y_tru = truncate_measurements(y, cfg.omega);
    if (used_fallback) *used_fallback = false;

    if (y_tru.isZero(0.0)) {
        if (used_fallback) *used_fallback = true;
        Rng fallback_rng(0x5eedu);
        Rng& r = rng ? *rng : fallback_rng;
        FactorPoint s;
        s.m_antennas = ens.M();
        s.S.reserve(static_cast<size_t>(ens.n_devices()));
        for (Index n = 0; n < ens.n_devices(); ++n) {
            CMat f(ens.M() + ens.D(), cfg.L_max);
            do {
                for (Index j = 0; j < f.cols(); ++j)
                    for (Index i = 0; i < f.rows(); ++i) f(i, j) = 1e-2 * complex_gaussian(r);
            } while (!full_column_rank(f));
            s.S.push_back(std::move(f));
        }
        return s;
    }

    auto spectra = adjoint(ens, y_tru);
    const double scale = 1.0 / static_cast<double>(ens.M_p() * ens.B_p());
    for (auto& b : spectra.blocks) b *= scale;
    return factor_from_state(spectra, cfg.L_max, kSvFloor);
}

/// Activity detector: devices whose block energy is at least v1 times the
/// largest block energy. Scale equivariant; empty when everything is zero.
inline std::vector<Index> detect_activity(const DelayAngularState& blocks, double v1) {
    if (!(v1 > 0.0) || !(v1 < 1.0))
        throw std::invalid_argument("detect_activity: v1 in (0, 1) required");
    double max_e = 0.0;
    std::vector<double> energy(static_cast<size_t>(blocks.n_devices()));
    for (Index n = 0; n < blocks.n_devices(); ++n) {
        energy[static_cast<size_t>(n)] = blocks.blocks[static_cast<size_t>(n)].squaredNorm();
        max_e = std::max(max_e, energy[static_cast<size_t>(n)]);
    }
    std::vector<Index> detected;
    if (max_e <= 0.0) return detected;
    for (Index n = 0; n < blocks.n_devices(); ++n)
        if (energy[static_cast<size_t>(n)] >= v1 * max_e) detected.push_back(n);
    return detected;
}

inline std::vector<Index> detect_activity(const SolveResult& result, double v1) {
    return detect_activity(result.blocks, v1);
}

/// Riemannian conjugate gradient (Polak-Ribiere+ with projection transport)
/// on the product quotient geometry, from the truncated spectral
/// initialization. Stops after max_iters or when the gradient norm falls
/// below grad_tol times its initial value.
inline SolveResult solve(const SensingEnsemble& ens, const CMat& y, const SolverConfig& cfg,
                         Rng& rng) {
    if (cfg.max_iters < 0) throw std::invalid_argument("solve: max_iters >= 0 required");
    if (!(cfg.mu > 0.0)) throw std::invalid_argument("solve: mu > 0 required");

    SolveResult res;
    res.factors = truncated_init(ens, y, cfg, &rng, &res.init_fallback);

    auto eval = detail::evaluate(ens, res.factors, y, cfg);
    if (!std::isfinite(eval.f())) throw std::runtime_error("solve: non-finite initial objective");

    auto grad = project_horizontal(
        res.factors, [&] {
            auto g = detail::gradient_from_eval(ens, res.factors, eval, cfg);
            for (auto& x : g.xi) x *= 0.5;
            return g;
        }());
    double grad_norm = grad.norm();
    const double grad_floor = cfg.grad_tol * grad_norm;

    res.objective_trace.push_back(eval.f());
    res.grad_norm_trace.push_back(grad_norm);
    if (cfg.progress) *cfg.progress << "iter,objective,grad_norm,step\n"
                                    << 0 << ',' << eval.f() << ',' << grad_norm << ",0\n";

    TangentDirection dir = grad;
    for (auto& x : dir.xi) x = -x;

    constexpr double kArmijoC = 1e-4;
    constexpr int kMaxHalvings = 30;
    double warm_step = cfg.mu;

    int t = 0;
    for (; t < cfg.max_iters; ++t) {
        if (grad_norm <= grad_floor) break;

        double slope = metric(res.factors, grad, dir);
        if (slope >= 0.0) {  // not a descent direction; restart with steepest descent
            for (Index n = 0; n < dir.n_devices(); ++n)
                dir.xi[static_cast<size_t>(n)] = -grad.xi[static_cast<size_t>(n)];
            slope = -grad_norm * grad_norm;
        }

        FactorPoint next;
        detail::SolveEval next_eval;
        double used_step = 0.0;
        bool accepted = false;

        if (cfg.line_search == LineSearch::FixedStep) {
            next = retract(res.factors, dir, cfg.mu);
            next_eval = detail::evaluate(ens, next, y, cfg);
            used_step = cfg.mu;
            accepted = true;
        } else {
            for (int pass = 0; pass < 2 && !accepted; ++pass) {
                double trial = warm_step;
                for (int h = 0; h <= kMaxHalvings; ++h) {
                    FactorPoint cand = retract(res.factors, dir, trial);
                    auto cand_eval = detail::evaluate(ens, cand, y, cfg);
                    if (cand_eval.f() <= eval.f() + kArmijoC * trial * slope) {
                        next = std::move(cand);
                        next_eval = std::move(cand_eval);
                        used_step = trial;
                        accepted = true;
                        break;
                    }
                    trial *= 0.5;
                }
                if (!accepted && pass == 0) {  // retry once along steepest descent
                    for (Index n = 0; n < dir.n_devices(); ++n)
                        dir.xi[static_cast<size_t>(n)] = -grad.xi[static_cast<size_t>(n)];
                    slope = -grad_norm * grad_norm;
                }
            }
            if (!accepted) break;  // numerical floor; no decrease found
            warm_step = 2.0 * used_step;
        }

        if (!std::isfinite(next_eval.f()))
            throw std::runtime_error("solve: objective became non-finite (diverging step?)");

        auto next_grad = project_horizontal(
            next, [&] {
                auto g = detail::gradient_from_eval(ens, next, next_eval, cfg);
                for (auto& x : g.xi) x *= 0.5;
                return g;
            }());
        const double next_grad_norm = next_grad.norm();

        // Polak-Ribiere+ with projection transport.
        const auto grad_t = transport(res.factors, next, grad);
        TangentDirection diff = next_grad;
        for (Index n = 0; n < diff.n_devices(); ++n)
            diff.xi[static_cast<size_t>(n)] -= grad_t.xi[static_cast<size_t>(n)];
        const double denom = grad_norm * grad_norm;
        const double beta =
            denom > 0.0 ? std::max(0.0, metric(next, next_grad, diff) / denom) : 0.0;

        const auto dir_t = transport(res.factors, next, dir);
        for (Index n = 0; n < dir.n_devices(); ++n)
            dir.xi[static_cast<size_t>(n)] =
                -next_grad.xi[static_cast<size_t>(n)] + beta * dir_t.xi[static_cast<size_t>(n)];

        res.factors = std::move(next);
        eval = std::move(next_eval);
        grad = std::move(next_grad);
        grad_norm = next_grad_norm;

        res.objective_trace.push_back(eval.f());
        res.grad_norm_trace.push_back(grad_norm);
        res.step_trace.push_back(used_step);
        if (cfg.progress) *cfg.progress << (t + 1) << ',' << eval.f() << ',' << grad_norm << ','
                                        << used_step << '\n';
    }
    res.iterations = t;

    res.blocks = res.factors.to_state();
    res.channels.reserve(static_cast<size_t>(ens.n_devices()));
    for (Index n = 0; n < ens.n_devices(); ++n)
        res.channels.push_back(ens.dicts.A_theta * res.blocks.blocks[static_cast<size_t>(n)] *
                               ens.dicts.A_tau.adjoint());
    res.detected = detect_activity(res.blocks, cfg.v1);
    return res;
}

}  // namespace mras
