#include <catch2/catch_amalgamated.hpp>

#include <numbers>
#include <sstream>

#include "mras/solver.hpp"

using namespace mras;

namespace {

CMat random_cmat(Rng& rng, Index rows, Index cols) {
    CMat m(rows, cols);
    for (Index j = 0; j < cols; ++j)
        for (Index i = 0; i < rows; ++i) m(i, j) = complex_gaussian(rng);
    return m;
}

FactorPoint random_point(Rng& rng, const SensingEnsemble& ens, Index rank) {
    FactorPoint s;
    s.m_antennas = ens.M();
    for (Index n = 0; n < ens.n_devices(); ++n)
        s.S.push_back(random_cmat(rng, ens.M() + ens.D(), rank));
    return s;
}

TangentDirection random_direction(Rng& rng, const FactorPoint& s) {
    TangentDirection d;
    for (const auto& f : s.S) d.xi.push_back(random_cmat(rng, f.rows(), f.cols()));
    return d;
}

CMat random_unitary(Rng& rng, Index n) {
    Eigen::HouseholderQR<CMat> qr(random_cmat(rng, n, n));
    return qr.householderQ() * CMat::Identity(n, n);
}

SensingEnsemble small_ensemble(std::uint64_t seed, Index m = 4, Index b = 16, double gamma = 0.25,
                               Index n = 3, Index m_p = 3, Index b_p = 6) {
    const auto dicts = build_dictionaries(m, b, gamma, 1.0);
    Rng rng(seed);
    return generate_ensemble(rng, dicts, n, m_p, b_p);
}

// Scalar-loop objective oracle: no matrix products, no shared code with the
// implementation path beyond the ensemble contents.
double objective_oracle(const FactorPoint& s, const SensingEnsemble& ens, const CMat& y,
                        const SolverConfig& cfg) {
    const Index m_p = ens.M_p(), b_p = ens.B_p(), m = ens.M(), d = ens.D();
    double data = 0.0;
    for (Index l = 0; l < m_p; ++l)
        for (Index q = 0; q < b_p; ++q) {
            Complex acc = -y(l, q);
            for (Index n = 0; n < ens.n_devices(); ++n) {
                for (Index k = 0; k < m; ++k)
                    for (Index dd = 0; dd < d; ++dd) {
                        Complex x_kd(0, 0);
                        for (Index r = 0; r < s.rank(); ++r)
                            x_kd += s.S[static_cast<size_t>(n)](k, r) *
                                    std::conj(s.S[static_cast<size_t>(n)](m + dd, r));
                        acc += ens.B_bar(l, k) * x_kd * ens.A[static_cast<size_t>(n)](dd, q);
                    }
            }
            data += 0.5 * std::norm(acc);
        }
    double pen = 0.0;
    for (Index n = 0; n < ens.n_devices(); ++n)
        for (Index k = 0; k < m; ++k)
            for (Index dd = 0; dd < d; ++dd) {
                Complex x_kd(0, 0);
                for (Index r = 0; r < s.rank(); ++r)
                    x_kd += s.S[static_cast<size_t>(n)](k, r) *
                            std::conj(s.S[static_cast<size_t>(n)](m + dd, r));
                const double a = std::abs(x_kd);
                pen += cfg.nu * (a - std::log(1.0 + cfg.rho * a) / cfg.rho);
            }
    return data + pen;
}

}  // namespace

TEST_CASE("smoothed_abs") {
    CHECK(smoothed_abs(Complex(0, 0), 2.0) == 0.0);

    // x = 1, rho = 1: 1 - ln 2
    CHECK(smoothed_abs(Complex(1, 0), 1.0) == Catch::Approx(1.0 - std::log(2.0)).epsilon(1e-12));

    SECTION("approaches |x| as rho grows") {
        const Complex x(0.3, -0.4);  // |x| = 0.5
        CHECK(std::abs(smoothed_abs(x, 1e9) - 0.5) < 1e-7);
    }

    SECTION("nonnegative") {
        Rng rng(1);
        for (int t = 0; t < 100; ++t) {
            const Complex x = complex_gaussian(rng);
            CHECK(smoothed_abs(x, 25.0) >= 0.0);
        }
    }
}

TEST_CASE("objective") {
    const auto ens = small_ensemble(3);
    Rng rng(4);
    SolverConfig cfg;
    cfg.L_max = 2;

    SECTION("zero at a noiseless ground truth with nu = 0") {
        auto truth = DelayAngularState::zeros(ens.n_devices(), ens.M(), ens.D());
        for (Index n = 0; n < ens.n_devices(); ++n) {
            auto dev = synthesize_device(rng, ens.M(), ens.D(), 2, 2);
            truth.set_block(n, std::move(dev.delay_angular));
        }
        const CMat y = forward(ens, truth);
        const auto s = factor_from_state(truth, 2);
        SolverConfig ls = cfg;
        ls.nu = 0.0;
        CHECK(objective(s, ens, y, ls) < 1e-18 * std::max(1.0, y.squaredNorm()));
    }

    SECTION("nu = 0 reduces to the half squared residual") {
        const auto s = random_point(rng, ens, 2);
        const CMat y = random_cmat(rng, ens.M_p(), ens.B_p());
        SolverConfig ls = cfg;
        ls.nu = 0.0;
        const CMat res = forward(ens, s.to_state()) - y;
        CHECK(objective(s, ens, y, ls) ==
              Catch::Approx(0.5 * res.squaredNorm()).epsilon(1e-10));
    }

    SECTION("matches the scalar-loop oracle") {
        const auto s = random_point(rng, ens, 2);
        const CMat y = random_cmat(rng, ens.M_p(), ens.B_p());
        const double f = objective(s, ens, y, cfg);
        const double f_oracle = objective_oracle(s, ens, y, cfg);
        CHECK(std::abs(f - f_oracle) <= 1e-10 * std::max(1.0, std::abs(f_oracle)));
    }

    SECTION("invariant under per-device unitary rotations") {
        const auto s = random_point(rng, ens, 2);
        const CMat y = random_cmat(rng, ens.M_p(), ens.B_p());
        FactorPoint rot = s;
        for (auto& f : rot.S) f = f * random_unitary(rng, f.cols());
        const double f0 = objective(s, ens, y, cfg);
        const double f1 = objective(rot, ens, y, cfg);
        CHECK(std::abs(f0 - f1) <= 1e-10 * std::max(1.0, std::abs(f0)));
    }
}

TEST_CASE("euclidean gradient against central differences") {
    const auto ens = small_ensemble(5);
    SolverConfig cfg;
    cfg.L_max = 2;
    Rng rng(6);

    SECTION("vanishes at a noiseless ground truth with nu = 0") {
        auto truth = DelayAngularState::zeros(ens.n_devices(), ens.M(), ens.D());
        for (Index n = 0; n < ens.n_devices(); ++n) {
            auto dev = synthesize_device(rng, ens.M(), ens.D(), 2, 2);
            truth.set_block(n, std::move(dev.delay_angular));
        }
        const CMat y = forward(ens, truth);
        const auto s = factor_from_state(truth, 2);
        SolverConfig ls = cfg;
        ls.nu = 0.0;
        const auto g = euclidean_gradient(s, ens, y, ls);
        CHECK(g.norm() < 1e-9);
    }

    SECTION("finite differences match the metric pairing on 20 directions") {
        const auto s = random_point(rng, ens, 2);
        const CMat y = random_cmat(rng, ens.M_p(), ens.B_p());
        const auto g = euclidean_gradient(s, ens, y, cfg);
        const double h = 1e-6;
        for (int t = 0; t < 20; ++t) {
            auto xi = random_direction(rng, s);
            double norm = 0.0;
            for (const auto& x : xi.xi) norm += x.squaredNorm();
            for (auto& x : xi.xi) x /= std::sqrt(norm);

            FactorPoint plus = s, minus = s;
            for (Index n = 0; n < s.n_devices(); ++n) {
                plus.S[static_cast<size_t>(n)] += h * xi.xi[static_cast<size_t>(n)];
                minus.S[static_cast<size_t>(n)] -= h * xi.xi[static_cast<size_t>(n)];
            }
            const double fd =
                (objective(plus, ens, y, cfg) - objective(minus, ens, y, cfg)) / (2.0 * h);
            const double pair = metric(s, g, xi);
            CHECK(std::abs(fd - pair) <= 1e-5 * std::max(1.0, std::abs(fd)));
        }
    }

    SECTION("data-term gradient is linear in the residual") {
        const auto s = random_point(rng, ens, 2);
        SolverConfig ls = cfg;
        ls.nu = 0.0;
        const CMat f_s = forward(ens, s.to_state());
        const CMat y = random_cmat(rng, ens.M_p(), ens.B_p());
        const double c = 3.5;
        // pick measurements so the residual scales by exactly c
        const CMat y_scaled = f_s - c * (f_s - y);
        const auto g1 = euclidean_gradient(s, ens, y, ls);
        const auto g2 = euclidean_gradient(s, ens, y_scaled, ls);
        for (Index n = 0; n < s.n_devices(); ++n)
            CHECK((g2.xi[static_cast<size_t>(n)] - c * g1.xi[static_cast<size_t>(n)]).norm() <=
                  1e-10 * g1.xi[static_cast<size_t>(n)].norm() * c);
    }
}

TEST_CASE("riemannian gradient") {
    const auto ens = small_ensemble(7);
    SolverConfig cfg;
    cfg.L_max = 2;
    Rng rng(8);
    const auto s = random_point(rng, ens, 2);
    const CMat y = random_cmat(rng, ens.M_p(), ens.B_p());

    SECTION("zero euclidean gradient maps to zero") {
        // measurements equal to the model output and nu = 0: stationary point
        SolverConfig ls = cfg;
        ls.nu = 0.0;
        const CMat y_fit = forward(ens, s.to_state());
        const auto g = riemannian_gradient(s, ens, y_fit, ls);
        CHECK(g.norm() < 1e-9);
    }

    SECTION("output is horizontal") {
        const auto g = riemannian_gradient(s, ens, y, cfg);
        for (Index n = 0; n < s.n_devices(); ++n) {
            const auto& f = s.S[static_cast<size_t>(n)];
            const auto& x = g.xi[static_cast<size_t>(n)];
            const CMat skew = f.adjoint() * x - x.adjoint() * f;
            CHECK(skew.norm() <= 1e-10 * std::max(1.0, x.norm()));
        }
    }

    SECTION("equivariant under per-device rotations") {
        const auto g = riemannian_gradient(s, ens, y, cfg);
        FactorPoint rot = s;
        std::vector<CMat> q;
        for (auto& f : rot.S) {
            q.push_back(random_unitary(rng, f.cols()));
            f = f * q.back();
        }
        const auto g_rot = riemannian_gradient(rot, ens, y, cfg);
        for (Index n = 0; n < s.n_devices(); ++n) {
            const CMat expect = g.xi[static_cast<size_t>(n)] * q[static_cast<size_t>(n)];
            CHECK((g_rot.xi[static_cast<size_t>(n)] - expect).norm() <=
                  1e-8 * std::max(1.0, expect.norm()));
        }
    }
}

TEST_CASE("measurement truncation") {
    SECTION("uniform magnitudes survive any omega >= 1") {
        Rng rng(9);
        CMat y(4, 6);
        for (Index j = 0; j < 6; ++j)
            for (Index i = 0; i < 4; ++i) {
                const Complex g = complex_gaussian(rng);
                y(i, j) = g / std::abs(g);  // unit magnitude, random phase
            }
        CHECK((truncate_measurements(y, 1.0) - y).norm() == 0.0);
        CHECK((truncate_measurements(y, 3.0) - y).norm() == 0.0);
    }

    SECTION("outliers above the scaled mean are zeroed") {
        CMat y = CMat::Constant(3, 3, Complex(1, 0));
        y(1, 1) = Complex(100, 0);
        const CMat t = truncate_measurements(y, 2.0);
        CHECK(t(1, 1) == Complex(0, 0));
        CHECK(t(0, 0) == Complex(1, 0));
    }
}

TEST_CASE("truncated spectral initialization") {
    SolverConfig cfg;
    cfg.L_max = 2;

    SECTION("single active device under full sampling aligns with the truth") {
        const auto dicts = build_dictionaries(16, 64, 0.5, 1.0);
        Rng rng(10);
        const auto ens = generate_ensemble(rng, dicts, 4, 16, 64);
        auto truth = DelayAngularState::zeros(4, 16, dicts.D);
        auto dev = synthesize_device(rng, 16, dicts.D, 2, 2);
        truth.set_block(2, std::move(dev.delay_angular));
        const CMat y = forward(ens, truth);

        const auto s0 = truncated_init(ens, y, cfg);
        const CMat x0 = s0.reconstruct(2);
        // subspace angle between the column spaces of the init and the truth
        Eigen::JacobiSVD<CMat> svd_t(truth.blocks[2], Eigen::ComputeThinU);
        Eigen::JacobiSVD<CMat> svd_0(x0, Eigen::ComputeThinU);
        const CMat overlap =
            svd_t.matrixU().leftCols(2).adjoint() * svd_0.matrixU().leftCols(2);
        Eigen::JacobiSVD<CMat> svd_o(overlap);
        const double cos_angle = svd_o.singularValues().minCoeff();
        CHECK(std::acos(std::min(1.0, cos_angle)) < 30.0 * std::numbers::pi / 180.0);
    }

    SECTION("all-zero measurements fall back to a random full-rank point") {
        const auto ens = small_ensemble(11);
        bool fallback = false;
        const auto s0 =
            truncated_init(ens, CMat::Zero(ens.M_p(), ens.B_p()), cfg, nullptr, &fallback);
        CHECK(fallback);
        for (const auto& f : s0.S) CHECK(full_column_rank(f));
    }

    SECTION("factors always have full column rank") {
        const auto ens = small_ensemble(12);
        Rng rng(13);
        const CMat y = random_cmat(rng, ens.M_p(), ens.B_p());
        const auto s0 = truncated_init(ens, y, cfg);
        for (const auto& f : s0.S) CHECK(full_column_rank(f));
    }
}

TEST_CASE("activity detector") {
    auto blocks = DelayAngularState::zeros(3, 2, 2);

    SECTION("single nonzero block is the singleton answer") {
        CMat b = CMat::Zero(2, 2);
        b(0, 0) = Complex(3, 0);
        blocks.set_block(1, b);
        const auto k = detect_activity(blocks, 0.1);
        REQUIRE(k.size() == 1);
        CHECK(k[0] == 1);
    }

    SECTION("energies 1.0 / 0.05 / 0.2 at v1 = 0.1 select devices 0 and 2") {
        CMat b = CMat::Zero(2, 2);
        b(0, 0) = Complex(1, 0);
        blocks.set_block(0, b);
        b(0, 0) = Complex(std::sqrt(0.05), 0);
        blocks.set_block(1, b);
        b(0, 0) = Complex(std::sqrt(0.2), 0);
        blocks.set_block(2, b);
        const auto k = detect_activity(blocks, 0.1);
        REQUIRE(k.size() == 2);
        CHECK(k[0] == 0);
        CHECK(k[1] == 2);
    }

    SECTION("scale equivariance") {
        CMat b = CMat::Zero(2, 2);
        b(0, 0) = Complex(1, 0);
        blocks.set_block(0, b);
        b(0, 0) = Complex(0.5, 0);
        blocks.set_block(2, b);
        const auto k1 = detect_activity(blocks, 0.1);
        for (Index n = 0; n < 3; ++n)
            blocks.set_block(n, 7.25 * blocks.blocks[static_cast<size_t>(n)]);
        const auto k2 = detect_activity(blocks, 0.1);
        CHECK(k1 == k2);
    }

    SECTION("all-zero estimate yields the empty set") {
        CHECK(detect_activity(blocks, 0.1).empty());
    }
}

TEST_CASE("solve") {
    SECTION("noiseless single device recovers the measurements") {
        const auto dicts = build_dictionaries(8, 32, 0.25, 1.0);
        Rng rng(14);
        const auto ens = generate_ensemble(rng, dicts, 3, 8, 16);
        auto truth = DelayAngularState::zeros(3, 8, dicts.D);
        auto dev = synthesize_device(rng, 8, dicts.D, 2, 2);
        truth.set_block(0, std::move(dev.delay_angular));
        const CMat y = forward(ens, truth);

        SolverConfig cfg;
        cfg.L_max = 2;
        cfg.nu = 0.0;
        cfg.max_iters = 500;
        cfg.line_search = LineSearch::Backtracking;
        cfg.grad_tol = 1e-12;
        Rng solver_rng(15);
        const auto res = solve(ens, y, cfg, solver_rng);
        const double rel = (forward(ens, res.blocks) - y).norm() / y.norm();
        CHECK(rel <= 1e-3);
    }

    SECTION("max_iters = 0 returns the initialization") {
        const auto ens = small_ensemble(16);
        Rng rng(17);
        const CMat y = random_cmat(rng, ens.M_p(), ens.B_p());
        SolverConfig cfg;
        cfg.L_max = 2;
        cfg.max_iters = 0;
        Rng solver_rng(18);
        const auto res = solve(ens, y, cfg, solver_rng);
        const auto s0 = truncated_init(ens, y, cfg);
        for (Index n = 0; n < ens.n_devices(); ++n)
            CHECK((res.factors.S[static_cast<size_t>(n)] - s0.S[static_cast<size_t>(n)]).norm() ==
                  0.0);
        CHECK(res.iterations == 0);
    }

    SECTION("objective trace is nonincreasing under backtracking") {
        const auto ens = small_ensemble(19, 6, 24, 0.5, 4, 5, 12);
        Rng rng(20);
        auto truth = DelayAngularState::zeros(4, 6, ens.D());
        auto dev = synthesize_device(rng, 6, ens.D(), 2, 2);
        truth.set_block(1, std::move(dev.delay_angular));
        auto noisy = add_noise(rng, forward(ens, truth), 20.0);

        SolverConfig cfg;
        cfg.L_max = 2;
        cfg.max_iters = 60;
        cfg.line_search = LineSearch::Backtracking;
        Rng solver_rng(21);
        const auto res = solve(ens, noisy.first, cfg, solver_rng);
        for (size_t i = 1; i < res.objective_trace.size(); ++i)
            CHECK(res.objective_trace[i] <= res.objective_trace[i - 1] + 1e-12);
    }

    SECTION("progress stream emits the CSV schema") {
        const auto ens = small_ensemble(22);
        Rng rng(23);
        const CMat y = random_cmat(rng, ens.M_p(), ens.B_p());
        SolverConfig cfg;
        cfg.L_max = 2;
        cfg.max_iters = 3;
        cfg.line_search = LineSearch::Backtracking;
        std::ostringstream progress;
        cfg.progress = &progress;
        Rng solver_rng(24);
        solve(ens, y, cfg, solver_rng);
        CHECK(progress.str().rfind("iter,objective,grad_norm,step\n", 0) == 0);
    }
}
