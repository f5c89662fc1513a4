#pragma once

#include <stdexcept>
#include <utility>
#include <vector>

#include "mras/sensing.hpp"
#include "mras/types.hpp"

namespace mras {

/// Point on the product of non-compact Stiefel manifolds: one (M+D) x L factor
/// per device, full column rank. The top M rows of S_n form J_n, the bottom D
/// rows form R_n, and the device state is recovered as X_n = J_n R_n^H.
/// The equivalence class is S_n ~ S_n Q_n for unitary Q_n; the reconstruction
/// is invariant under it.
struct FactorPoint {
    std::vector<CMat> S;
    Index m_antennas = 0;

    Index n_devices() const { return static_cast<Index>(S.size()); }
    Index n_delay() const { return S.empty() ? 0 : S.front().rows() - m_antennas; }
    Index rank() const { return S.empty() ? 0 : S.front().cols(); }

    auto J(Index n) const { return S[static_cast<size_t>(n)].topRows(m_antennas); }
    auto R(Index n) const { return S[static_cast<size_t>(n)].bottomRows(n_delay()); }

    CMat reconstruct(Index n) const { return J(n) * R(n).adjoint(); }

    DelayAngularState to_state() const {
        auto st = DelayAngularState::zeros(n_devices(), m_antennas, n_delay());
        for (Index n = 0; n < n_devices(); ++n) st.set_block(n, reconstruct(n));
        return st;
    }
};

/// Ambient or tangent direction: one (M+D) x L matrix per device.
struct TangentDirection {
    std::vector<CMat> xi;

    Index n_devices() const { return static_cast<Index>(xi.size()); }

    static TangentDirection zeros_like(const FactorPoint& s) {
        TangentDirection d;
        d.xi.reserve(s.S.size());
        for (const auto& f : s.S) d.xi.push_back(CMat::Zero(f.rows(), f.cols()));
        return d;
    }

    double norm() const {
        double s = 0.0;
        for (const auto& x : xi) s += x.squaredNorm();
        return std::sqrt(s);
    }
};

/// Riemannian metric: sum_n (1/2) Tr(xi^H eta + eta^H xi) = sum_n Re Tr(xi^H eta).
inline double metric(const FactorPoint& s, const TangentDirection& a, const TangentDirection& b) {
    if (a.n_devices() != s.n_devices() || b.n_devices() != s.n_devices())
        throw std::invalid_argument("metric: device count mismatch");
    double m = 0.0;
    for (Index n = 0; n < s.n_devices(); ++n) {
        const auto& x = a.xi[static_cast<size_t>(n)];
        const auto& y = b.xi[static_cast<size_t>(n)];
        if (x.rows() != y.rows() || x.cols() != y.cols())
            throw std::invalid_argument("metric: direction shape mismatch");
        m += real_inner(x, y);
    }
    return m;
}

inline bool full_column_rank(const CMat& s, double tol_ratio = 1e-12) {
    Eigen::JacobiSVD<CMat> svd(s);
    const auto& sv = svd.singularValues();
    if (sv.size() < s.cols() || sv(0) <= 0.0) return false;
    return sv(sv.size() - 1) > tol_ratio * sv(0);
}

/// Solves G B + B G = S^H xi - xi^H S for the Gram matrix G = S^H S, via the
/// eigendecomposition G = U diag(lambda) U^H:
///   B = U ( (U^H RHS U) ./ (lambda_a + lambda_b) ) U^H.
/// The right-hand side is skew-Hermitian, hence so is B.
inline CMat solve_lyapunov(const CMat& s_n, const CMat& xi_n) {
    const CMat gram = s_n.adjoint() * s_n;
    Eigen::SelfAdjointEigenSolver<CMat> eig(gram);
    if (eig.info() != Eigen::Success)
        throw std::runtime_error("solve_lyapunov: eigendecomposition failed");
    const auto& lambda = eig.eigenvalues();
    if (lambda(0) <= 1e-14 * std::max(1.0, lambda(lambda.size() - 1)))
        throw std::runtime_error("solve_lyapunov: rank-deficient factor (singular Gram matrix)");

    const CMat rhs = s_n.adjoint() * xi_n - xi_n.adjoint() * s_n;
    CMat c = eig.eigenvectors().adjoint() * rhs * eig.eigenvectors();
    for (Index a = 0; a < c.rows(); ++a)
        for (Index b = 0; b < c.cols(); ++b) c(a, b) /= lambda(a) + lambda(b);
    return eig.eigenvectors() * c * eig.eigenvectors().adjoint();
}

/// Projection of an ambient direction onto the horizontal space at S_n:
/// xi - S_n B with B from the Lyapunov equation. Removes the vertical
/// component {S_n Omega : Omega skew-Hermitian}; idempotent.
inline CMat project_horizontal_block(const CMat& s_n, const CMat& xi_n) {
    return xi_n - s_n * solve_lyapunov(s_n, xi_n);
}

inline TangentDirection project_horizontal(const FactorPoint& s, const TangentDirection& xi) {
    TangentDirection out;
    out.xi.reserve(s.S.size());
    for (Index n = 0; n < s.n_devices(); ++n)
        out.xi.push_back(
            project_horizontal_block(s.S[static_cast<size_t>(n)], xi.xi[static_cast<size_t>(n)]));
    return out;
}

/// Affine update S + step*xi with a rank guard: if any factor loses full
/// column rank the whole step is halved, up to 20 times.
inline FactorPoint retract(const FactorPoint& s, const TangentDirection& xi, double step) {
    if (xi.n_devices() != s.n_devices())
        throw std::invalid_argument("retract: device count mismatch");
    double h = step;
    for (int attempt = 0; attempt <= 20; ++attempt) {
        FactorPoint out;
        out.m_antennas = s.m_antennas;
        out.S.reserve(s.S.size());
        bool ok = true;
        for (Index n = 0; n < s.n_devices(); ++n) {
            CMat cand = s.S[static_cast<size_t>(n)] + h * xi.xi[static_cast<size_t>(n)];
            if (!full_column_rank(cand)) {
                ok = false;
                break;
            }
            out.S.push_back(std::move(cand));
        }
        if (ok) return out;
        h *= 0.5;
    }
    throw std::runtime_error("retract: persistent rank loss after 20 step halvings");
}

/// Projection transport: re-project the direction onto the horizontal space at
/// the new point.
inline TangentDirection transport(const FactorPoint& /*s_old*/, const FactorPoint& s_new,
                                  const TangentDirection& eta) {
    return project_horizontal(s_new, eta);
}

/// Balanced factorization of a state via rank-L truncated SVD. Ground-truth
/// helper for tests and initialization checks; singular values below the floor
/// are padded so the factors keep full column rank.
inline FactorPoint factor_from_state(const DelayAngularState& x, Index rank,
                                     double sv_floor = 1e-8) {
    FactorPoint s;
    s.m_antennas = x.M();
    s.S.reserve(static_cast<size_t>(x.n_devices()));
    for (Index n = 0; n < x.n_devices(); ++n) {
        Eigen::JacobiSVD<CMat> svd(x.blocks[static_cast<size_t>(n)],
                                   Eigen::ComputeThinU | Eigen::ComputeThinV);
        CMat f(x.M() + x.D(), rank);
        for (Index l = 0; l < rank; ++l) {
            const double sv = l < svd.singularValues().size()
                                  ? std::max(svd.singularValues()(l), sv_floor)
                                  : sv_floor;
            const double root = std::sqrt(sv);
            f.col(l).head(x.M()) = root * svd.matrixU().col(l);
            f.col(l).tail(x.D()) = root * svd.matrixV().col(l);
        }
        s.S.push_back(std::move(f));
    }
    return s;
}

}  // namespace mras
