#pragma once

#include <cmath>
#include <numbers>
#include <stdexcept>
#include <utility>
#include <vector>

#include "mras/types.hpp"

namespace mras {

/// Angle response of a uniform linear array: element m is exp(-j 2*pi*m*theta).
inline CVec steering_angle(double theta, Index m_antennas) {
    if (m_antennas < 1) throw std::invalid_argument("steering_angle: M >= 1 required");
    CVec a(m_antennas);
    for (Index m = 0; m < m_antennas; ++m) {
        const double phase = -2.0 * std::numbers::pi * static_cast<double>(m) * theta;
        a(m) = Complex(std::cos(phase), std::sin(phase));
    }
    return a;
}

/// Delay response over B subcarriers: element b is exp(-j 2*pi*b*tau/T_s),
/// i.e. a geometric phase progression in the subcarrier index.
inline CVec steering_delay(double tau, double t_symbol, Index n_subcarriers) {
    if (n_subcarriers < 1) throw std::invalid_argument("steering_delay: B >= 1 required");
    if (t_symbol <= 0.0) throw std::invalid_argument("steering_delay: T_s > 0 required");
    CVec b(n_subcarriers);
    for (Index k = 0; k < n_subcarriers; ++k) {
        const double phase = -2.0 * std::numbers::pi * static_cast<double>(k) * tau / t_symbol;
        b(k) = Complex(std::cos(phase), std::sin(phase));
    }
    return b;
}

/// Angle/delay dictionaries sampled on the uniform grids 0, 1/M, ..., (M-1)/M
/// and 0, T_s/B, ..., (D-1)T_s/B with D = floor(gamma*B).
struct Dictionaries {
    CMat A_theta;  // M x M
    CMat A_tau;    // B x D
    Index D = 0;
    double T_s = 1.0;
    double gamma = 1.0;

    Index M() const { return A_theta.rows(); }
    Index B() const { return A_tau.rows(); }
};

inline Dictionaries build_dictionaries(Index m_antennas, Index n_subcarriers, double gamma,
                                       double t_symbol) {
    if (m_antennas < 1 || n_subcarriers < 1)
        throw std::invalid_argument("build_dictionaries: M, B >= 1 required");
    if (!(gamma > 0.0) || gamma > 1.0)
        throw std::invalid_argument("build_dictionaries: gamma in (0, 1] required");
    if (t_symbol <= 0.0) throw std::invalid_argument("build_dictionaries: T_s > 0 required");

    Dictionaries d;
    d.T_s = t_symbol;
    d.gamma = gamma;
    // Small epsilon so that gamma = D/B reproduces D despite rounding.
    d.D = static_cast<Index>(std::floor(gamma * static_cast<double>(n_subcarriers) + 1e-9));

    d.A_theta.resize(m_antennas, m_antennas);
    for (Index k = 0; k < m_antennas; ++k)
        d.A_theta.col(k) = steering_angle(static_cast<double>(k) / static_cast<double>(m_antennas),
                                          m_antennas);

    d.A_tau.resize(n_subcarriers, d.D);
    for (Index k = 0; k < d.D; ++k)
        d.A_tau.col(k) = steering_delay(static_cast<double>(k) * t_symbol /
                                            static_cast<double>(n_subcarriers),
                                        t_symbol, n_subcarriers);
    return d;
}

/// One scattering cluster: mean angle/delay plus the gain block it occupies on
/// the delay-angular grid. `gains` is p_ang x p_del and must have no all-zero
/// row or column (the footprint is exactly p_ang x p_del).
struct ClusterSpec {
    double mean_angle = 0.0;  // in [0, 1)
    double mean_delay = 0.0;  // in [0, gamma*T_s]
    CMat gains;

    Index p_ang() const { return gains.rows(); }
    Index p_del() const { return gains.cols(); }

    /// Rank-one cluster from an angular and a delay gain vector.
    static ClusterSpec rank_one(double theta, double tau, const CVec& angle_gains,
                                const CVec& delay_gains) {
        ClusterSpec c;
        c.mean_angle = theta;
        c.mean_delay = tau;
        c.gains = angle_gains * delay_gains.transpose();
        return c;
    }
};

/// Grid placement of one synthesized block (block-synthesis path).
struct BlockPlacement {
    Index row = 0;  // top row of the block
    Index col = 0;  // leftmost column
    Index size = 0; // p (blocks are p x p)
};

/// Ground-truth channel of one device. `delay_angular` is always populated;
/// `physical` (M x B) is filled by the physical-synthesis path or by
/// attach_physical. `clusters` is populated by the physical path, `blocks`
/// by the grid block path.
struct DeviceChannel {
    std::vector<ClusterSpec> clusters;
    std::vector<BlockPlacement> blocks;
    CMat delay_angular;  // M x D
    CMat physical;       // M x B, may be empty
    bool support_clipped = false;

    Index n_paths() const {
        return static_cast<Index>(clusters.empty() ? blocks.size() : clusters.size());
    }
};

namespace detail {

// Uniformly random pairwise-disjoint intervals [r_i, r_i + p) inside [0, extent).
// Rejection sampling; feasibility (count*p <= extent) is the caller's precondition.
inline std::vector<Index> disjoint_offsets(Rng& rng, Index extent, Index p, Index count,
                                           int max_attempts) {
    std::uniform_int_distribution<Index> pick(0, extent - p);
    std::vector<Index> offs(count);
    for (int attempt = 0; attempt < max_attempts; ++attempt) {
        for (Index i = 0; i < count; ++i) offs[i] = pick(rng);
        bool ok = true;
        for (Index i = 0; ok && i < count; ++i)
            for (Index j = i + 1; ok && j < count; ++j)
                if (std::abs(offs[i] - offs[j]) < p) ok = false;
        if (ok) return offs;
    }
    throw std::runtime_error("synthesize_device: block placement failed after bounded retries");
}

}  // namespace detail

/// Draws a block-sparse low-rank device state: L_n rank-one p x p blocks at
/// uniformly random positions with pairwise disjoint row and column ranges,
/// normalized to unit Frobenius norm and scaled by an amplitude drawn
/// uniformly from [amp_lo, amp_hi]. Entries outside the blocks are exactly zero.
inline DeviceChannel synthesize_device(Rng& rng, Index m_antennas, Index n_delay, Index paths,
                                       Index p, double amp_lo = 1.0, double amp_hi = 1.0) {
    if (paths < 1 || p < 1) throw std::invalid_argument("synthesize_device: L_n, p >= 1 required");
    if (paths * p > std::min(m_antennas, n_delay))
        throw std::invalid_argument("synthesize_device: L_n*p <= min(M, D) required");
    if (amp_hi < amp_lo) throw std::invalid_argument("synthesize_device: bad amplitude range");

    constexpr int kMaxAttempts = 100000;
    const auto rows = detail::disjoint_offsets(rng, m_antennas, p, paths, kMaxAttempts);
    const auto cols = detail::disjoint_offsets(rng, n_delay, p, paths, kMaxAttempts);

    DeviceChannel dev;
    dev.delay_angular = CMat::Zero(m_antennas, n_delay);
    dev.blocks.reserve(static_cast<size_t>(paths));
    for (Index l = 0; l < paths; ++l) {
        const CVec u = complex_gaussian_vector(rng, p);
        const CVec v = complex_gaussian_vector(rng, p);
        dev.delay_angular.block(rows[l], cols[l], p, p) = u * v.transpose();
        dev.blocks.push_back({rows[l], cols[l], p});
    }

    const double norm = dev.delay_angular.norm();
    std::uniform_real_distribution<double> amp(amp_lo, amp_hi);
    dev.delay_angular *= amp(rng) / norm;
    return dev;
}

inline void attach_physical(DeviceChannel& dev, const Dictionaries& dicts) {
    dev.physical = dicts.A_theta * dev.delay_angular * dicts.A_tau.adjoint();
}

/// Builds a device channel from explicit clusters: each cluster's gain block is
/// placed with its angular support centered at the grid bin nearest mean_angle
/// and its delay support at the bin nearest mean_delay*B/T_s. Supports falling
/// off the grid are clipped and flagged.
inline DeviceChannel synthesize_device_physical(Rng& /*rng*/, const Dictionaries& dicts,
                                                const std::vector<ClusterSpec>& clusters) {
    const Index M = dicts.M();
    const Index D = dicts.D;
    DeviceChannel dev;
    dev.clusters = clusters;
    dev.delay_angular = CMat::Zero(M, D);

    for (const auto& c : clusters) {
        if (c.p_ang() < 1 || c.p_del() < 1)
            throw std::invalid_argument("synthesize_device_physical: empty gain block");
        // Nearest grid bins; the angle grid k/M is periodic, the delay grid is not.
        Index a0 = static_cast<Index>(std::llround(c.mean_angle * static_cast<double>(M)));
        a0 = ((a0 % M) + M) % M;
        const Index d0 = static_cast<Index>(
            std::llround(c.mean_delay * static_cast<double>(dicts.B()) / dicts.T_s));

        const Index r_start = a0 - (c.p_ang() - 1) / 2;
        const Index c_start = d0 - (c.p_del() - 1) / 2;
        for (Index i = 0; i < c.p_ang(); ++i) {
            for (Index j = 0; j < c.p_del(); ++j) {
                const Index r = r_start + i;
                const Index cc = c_start + j;
                if (r < 0 || r >= M || cc < 0 || cc >= D) {
                    dev.support_clipped = true;
                    continue;
                }
                dev.delay_angular(r, cc) += c.gains(i, j);
            }
        }
    }
    attach_physical(dev, dicts);
    return dev;
}

/// Numerical rank: count of singular values above tol_ratio * sigma_max.
inline Index numerical_rank(const CMat& x, double tol_ratio = 1e-10) {
    if (x.size() == 0) return 0;
    Eigen::JacobiSVD<CMat> svd(x);
    const auto& s = svd.singularValues();
    if (s.size() == 0 || s(0) <= 0.0) return 0;
    Index r = 0;
    for (Index i = 0; i < s.size(); ++i)
        if (s(i) > tol_ratio * s(0)) ++r;
    return r;
}

}  // namespace mras
