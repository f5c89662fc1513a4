#pragma once

#include <Eigen/Dense>
#include <complex>
#include <cstdint>
#include <random>

namespace mras {

using Complex = std::complex<double>;
using CMat = Eigen::MatrixXcd;
using CVec = Eigen::VectorXcd;
using Index = Eigen::Index;
using Rng = std::mt19937_64;

/// Circularly symmetric complex Gaussian CN(0,1): re and im each N(0, 1/2).
inline Complex complex_gaussian(Rng& rng) {
    static constexpr double kHalfStd = 0.70710678118654752440;  // 1/sqrt(2)
    std::normal_distribution<double> n(0.0, kHalfStd);
    const double re = n(rng);
    const double im = n(rng);
    return {re, im};
}

inline CVec complex_gaussian_vector(Rng& rng, Index n) {
    CVec v(n);
    for (Index i = 0; i < n; ++i) v(i) = complex_gaussian(rng);
    return v;
}

/// Real inner product Re Tr(A^H B). This is the metric all tangent-space
/// pairings in the library use.
inline double real_inner(const CMat& a, const CMat& b) {
    return a.cwiseProduct(b.conjugate()).sum().real();
}

}  // namespace mras
