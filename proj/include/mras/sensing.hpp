#pragma once

#include <algorithm>
#include <cmath>
#include <numbers>
#include <span>
#include <stdexcept>
#include <utility>
#include <vector>

#include "mras/channel.hpp"
#include "mras/types.hpp"

namespace mras {

/// Per-device state blocks X_n (M x D) with activity indicators. The stacked
/// matrix X = [X_1 ... X_N] is never materialized except where a test needs it.
struct DelayAngularState {
    std::vector<CMat> blocks;
    std::vector<std::uint8_t> active;

    static DelayAngularState zeros(Index n_devices, Index m_antennas, Index n_delay) {
        DelayAngularState st;
        st.blocks.assign(static_cast<size_t>(n_devices), CMat::Zero(m_antennas, n_delay));
        st.active.assign(static_cast<size_t>(n_devices), 0);
        return st;
    }

    Index n_devices() const { return static_cast<Index>(blocks.size()); }
    Index M() const { return blocks.empty() ? 0 : blocks.front().rows(); }
    Index D() const { return blocks.empty() ? 0 : blocks.front().cols(); }

    void set_block(Index n, CMat x) {
        blocks[static_cast<size_t>(n)] = std::move(x);
        active[static_cast<size_t>(n)] =
            blocks[static_cast<size_t>(n)].isZero(0.0) ? 0 : 1;
    }

    double squared_norm() const {
        double s = 0.0;
        for (const auto& b : blocks) s += b.squaredNorm();
        return s;
    }

    /// Stacked M x (D*N) view, for small-instance tests only.
    CMat stacked() const {
        CMat x(M(), D() * n_devices());
        for (Index n = 0; n < n_devices(); ++n)
            x.middleCols(n * D(), D()) = blocks[static_cast<size_t>(n)];
        return x;
    }
};

/// Measurement ensemble of Eq.-style model Y = sum_n B_bar X_n A_n + Z:
/// random antenna/subcarrier selections, unit-modulus pilots, and the derived
/// per-device matrices. Immutable after construction.
struct SensingEnsemble {
    Dictionaries dicts;
    std::vector<Index> antenna_sel;     // M_p distinct rows of A_theta
    std::vector<Index> subcarrier_sel;  // B_p distinct rows of A_tau
    CMat pilots;                        // B_p x N, |pilots(i,n)| = 1
    CMat B_bar;                         // M_p x M
    std::vector<CMat> A;                // per device, D x B_p

    Index M() const { return dicts.M(); }
    Index B() const { return dicts.B(); }
    Index D() const { return dicts.D; }
    Index M_p() const { return B_bar.rows(); }
    Index B_p() const { return pilots.rows(); }
    Index n_devices() const { return static_cast<Index>(A.size()); }
};

namespace detail {

// First k entries of a Fisher-Yates shuffle of 0..n-1, sorted.
inline std::vector<Index> sample_without_replacement(Rng& rng, Index n, Index k) {
    std::vector<Index> idx(static_cast<size_t>(n));
    for (Index i = 0; i < n; ++i) idx[static_cast<size_t>(i)] = i;
    for (Index i = 0; i < k; ++i) {
        std::uniform_int_distribution<Index> pick(i, n - 1);
        std::swap(idx[static_cast<size_t>(i)], idx[static_cast<size_t>(pick(rng))]);
    }
    idx.resize(static_cast<size_t>(k));
    std::sort(idx.begin(), idx.end());
    return idx;
}

}  // namespace detail

/// Draws the sampling matrices (uniform subsets without replacement) and
/// uniform-phase unit-modulus pilots, then precomputes B_bar and every A_n.
inline SensingEnsemble generate_ensemble(Rng& rng, const Dictionaries& dicts, Index n_devices,
                                         Index m_p, Index b_p) {
    const Index M = dicts.M();
    const Index B = dicts.B();
    if (m_p < 1 || m_p > M) throw std::invalid_argument("generate_ensemble: need 1 <= M_p <= M");
    if (b_p < 1 || b_p > B) throw std::invalid_argument("generate_ensemble: need 1 <= B_p <= B");
    if (n_devices < 1) throw std::invalid_argument("generate_ensemble: N >= 1 required");

    SensingEnsemble ens;
    ens.dicts = dicts;
    ens.antenna_sel = detail::sample_without_replacement(rng, M, m_p);
    ens.subcarrier_sel = detail::sample_without_replacement(rng, B, b_p);

    ens.pilots.resize(b_p, n_devices);
    std::uniform_real_distribution<double> phase(0.0, 2.0 * std::numbers::pi);
    for (Index n = 0; n < n_devices; ++n)
        for (Index i = 0; i < b_p; ++i) {
            const double w = phase(rng);
            ens.pilots(i, n) = Complex(std::cos(w), std::sin(w));
        }

    ens.B_bar.resize(m_p, M);
    for (Index i = 0; i < m_p; ++i)
        ens.B_bar.row(i) = dicts.A_theta.row(ens.antenna_sel[static_cast<size_t>(i)]);

    // A_n = A_tau^H P_T diag(alpha_n): pick B_p rows of A_tau, conjugate-transpose,
    // then scale column i by the pilot symbol alpha_n[i].
    CMat a_tau_sel(b_p, dicts.D);
    for (Index i = 0; i < b_p; ++i)
        a_tau_sel.row(i) = dicts.A_tau.row(ens.subcarrier_sel[static_cast<size_t>(i)]);
    const CMat a_tau_sel_h = a_tau_sel.adjoint();  // D x B_p

    ens.A.reserve(static_cast<size_t>(n_devices));
    for (Index n = 0; n < n_devices; ++n)
        ens.A.push_back(a_tau_sel_h * ens.pilots.col(n).asDiagonal());
    return ens;
}

/// Noiseless measurement map: sum_n B_bar X_n A_n. Linear in X.
inline CMat forward(const SensingEnsemble& ens, const DelayAngularState& x) {
    if (x.n_devices() != ens.n_devices() || x.M() != ens.M() || x.D() != ens.D())
        throw std::invalid_argument("forward: state shape does not match ensemble");
    CMat y = CMat::Zero(ens.M_p(), ens.B_p());
    for (Index n = 0; n < ens.n_devices(); ++n) {
        if (!x.active[static_cast<size_t>(n)]) continue;
        y.noalias() += (ens.B_bar * x.blocks[static_cast<size_t>(n)]) * ens.A[static_cast<size_t>(n)];
    }
    return y;
}

/// Adjoint of the measurement map under Re Tr(A^H B): block n is B_bar^H Y A_n^H.
inline DelayAngularState adjoint(const SensingEnsemble& ens, const CMat& y) {
    if (y.rows() != ens.M_p() || y.cols() != ens.B_p())
        throw std::invalid_argument("adjoint: measurement shape does not match ensemble");
    DelayAngularState st = DelayAngularState::zeros(ens.n_devices(), ens.M(), ens.D());
    const CMat bhy = ens.B_bar.adjoint() * y;  // M x B_p, shared across devices
    for (Index n = 0; n < ens.n_devices(); ++n)
        st.set_block(n, bhy * ens.A[static_cast<size_t>(n)].adjoint());
    return st;
}

/// Adds circular complex Gaussian noise with per-entry variance
/// sigma^2 = ||Y||_F^2 / (M_p B_p 10^(snr/10)). Returns the noisy matrix and sigma^2.
inline std::pair<CMat, double> add_noise(Rng& rng, const CMat& y, double snr_db) {
    if (std::isinf(snr_db) && snr_db > 0) return {y, 0.0};
    const double sig = y.squaredNorm();
    if (sig <= 0.0) throw std::invalid_argument("add_noise: zero signal with finite SNR");
    const double sigma2 =
        sig / (static_cast<double>(y.rows() * y.cols()) * std::pow(10.0, snr_db / 10.0));
    const double scale = std::sqrt(sigma2);
    CMat out = y;
    for (Index j = 0; j < y.cols(); ++j)
        for (Index i = 0; i < y.rows(); ++i) out(i, j) += scale * complex_gaussian(rng);
    return {out, sigma2};
}

/// Sparse-group budget and rank budget of the recovery problem, plus the
/// spread/path ranges they are built from.
struct SGLProfile {
    long long u = 0;  // sparse-group budget
    int r = 1;        // rank budget
    int p_min = 1, p_max = 1;
    int L_min = 1, L_max = 1;
    double t = 2.0;   // concentration threshold parameter
    double delta = 0.0;
};

/// Sparse-group norm: sum of p_n^2 L_n over devices with a nonzero block.
/// Scale-invariant in each block (indicator based).
inline long long sg_norm(const DelayAngularState& x, std::span<const int> p_per_device,
                         std::span<const int> paths_per_device) {
    if (static_cast<Index>(p_per_device.size()) != x.n_devices() ||
        static_cast<Index>(paths_per_device.size()) != x.n_devices())
        throw std::invalid_argument("sg_norm: per-device parameter size mismatch");
    long long s = 0;
    for (Index n = 0; n < x.n_devices(); ++n) {
        if (x.blocks[static_cast<size_t>(n)].isZero(0.0)) continue;
        const long long p = p_per_device[static_cast<size_t>(n)];
        s += p * p * paths_per_device[static_cast<size_t>(n)];
    }
    return s;
}

/// Uniform-profile convenience overload (p_min == p_max, L_min == L_max).
inline long long sg_norm(const DelayAngularState& x, const SGLProfile& profile) {
    if (profile.p_min != profile.p_max || profile.L_min != profile.L_max)
        throw std::invalid_argument("sg_norm: profile overload requires a uniform profile");
    std::vector<int> p(static_cast<size_t>(x.n_devices()), profile.p_max);
    std::vector<int> l(static_cast<size_t>(x.n_devices()), profile.L_max);
    return sg_norm(x, p, l);
}

/// Measurement-count bound (right-hand side of the recovery condition), with
/// the unspecified leading constant exposed as kappa1. Used for qualitative
/// scaling curves only.
inline double theorem1_bound(const SGLProfile& profile, Index n_devices, Index n_delay,
                             Index m_antennas, double kappa1 = 1.0) {
    if (profile.p_min <= 0 || profile.L_min <= 0)
        throw std::invalid_argument("theorem1_bound: p_min, L_min must be positive");
    const double pl = static_cast<double>(profile.p_max) * profile.L_max;
    const double u_bar =
        (1.0 + (profile.t - 1.0) * profile.p_max * profile.p_max * profile.L_max) *
        static_cast<double>(profile.u);
    const double theta =
        u_bar / (static_cast<double>(profile.p_min) * profile.p_min * profile.L_min);

    const double n = static_cast<double>(n_devices);
    const double d = static_cast<double>(n_delay);
    double bound = (static_cast<double>(m_antennas) + 1.0) * profile.r;
    if (theta > 0.0) {
        bound += theta * std::log(n / theta) + theta;
        bound += theta * pl * std::log(d / pl) + theta * pl;
        bound += theta * pl * profile.r;
    }
    return kappa1 * bound;
}

/// Empirical concentration summary of the (normalized) measurement map over
/// random sparse-group low-rank inputs. rho = ||A(X)||_F^2 / ||X||_F^2 after
/// scaling the map so the pilot-batch mean of rho is 1.
struct RipSummary {
    long long trials = 0;
    long long u = 0;
    int r = 1;
    Index B_p = 0;
    Index M_p = 0;
    double mean_rho = 0.0;
    double max_dev = 0.0;       // max |rho - 1| (second moment)
    double tail_frac = 0.0;     // fraction with rho - 1 >= t
    double max_dev_sqrt = 0.0;  // max |sqrt(rho) - 1| (first moment)
    double norm_scale = 1.0;    // the 1/mean pilot normalization applied
};

namespace detail {

inline DelayAngularState random_sparse_group_input(Rng& rng, const SensingEnsemble& ens,
                                                   const SGLProfile& profile) {
    const long long group_cost =
        static_cast<long long>(profile.p_max) * profile.p_max * profile.L_max;
    const Index k_active =
        std::max<Index>(1, static_cast<Index>(profile.u / std::max<long long>(1, group_cost)));
    const auto groups = sample_without_replacement(rng, ens.n_devices(),
                                                   std::min(k_active, ens.n_devices()));
    auto x = DelayAngularState::zeros(ens.n_devices(), ens.M(), ens.D());
    for (Index g : groups) {
        auto dev = synthesize_device(rng, ens.M(), ens.D(), profile.L_max, profile.p_max);
        x.set_block(g, std::move(dev.delay_angular));
    }
    const double norm = std::sqrt(x.squared_norm());
    for (auto& b : x.blocks) b /= norm;
    return x;
}

}  // namespace detail

inline RipSummary rip_probe(Rng& rng, const SensingEnsemble& ens, const SGLProfile& profile,
                            long long trials) {
    if (trials < 1) throw std::invalid_argument("rip_probe: trials >= 1 required");

    constexpr int kPilotBatch = 64;
    double pilot_mean = 0.0;
    for (int i = 0; i < kPilotBatch; ++i) {
        const auto x = detail::random_sparse_group_input(rng, ens, profile);
        pilot_mean += forward(ens, x).squaredNorm() / x.squared_norm();
    }
    pilot_mean /= kPilotBatch;
    if (pilot_mean <= 0.0) throw std::runtime_error("rip_probe: degenerate pilot batch");

    RipSummary s;
    s.trials = trials;
    s.u = profile.u;
    s.r = profile.r;
    s.B_p = ens.B_p();
    s.M_p = ens.M_p();
    s.norm_scale = 1.0 / pilot_mean;

    double sum_rho = 0.0;
    long long tail = 0;
    for (long long i = 0; i < trials; ++i) {
        const auto x = detail::random_sparse_group_input(rng, ens, profile);
        const double rho =
            s.norm_scale * forward(ens, x).squaredNorm() / x.squared_norm();
        sum_rho += rho;
        s.max_dev = std::max(s.max_dev, std::abs(rho - 1.0));
        s.max_dev_sqrt = std::max(s.max_dev_sqrt, std::abs(std::sqrt(rho) - 1.0));
        if (rho - 1.0 >= profile.t) ++tail;
    }
    s.mean_rho = sum_rho / static_cast<double>(trials);
    s.tail_frac = static_cast<double>(tail) / static_cast<double>(trials);
    return s;
}

}  // namespace mras
