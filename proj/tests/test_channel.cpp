#include <catch2/catch_amalgamated.hpp>

#include <set>

#include "mras/channel.hpp"

using namespace mras;

namespace {
const Complex kJ(0.0, 1.0);
}

TEST_CASE("steering_angle matches hand-evaluated phases") {
    // theta = 0: all ones
    const CVec a0 = steering_angle(0.0, 4);
    for (Index m = 0; m < 4; ++m) CHECK(std::abs(a0(m) - Complex(1.0, 0.0)) < 1e-15);

    // theta = 0.5, M = 2: exp(-j*pi) = -1
    const CVec a1 = steering_angle(0.5, 2);
    CHECK(std::abs(a1(0) - Complex(1.0, 0.0)) < 1e-15);
    CHECK(std::abs(a1(1) - Complex(-1.0, 0.0)) < 1e-15);

    // theta = 0.25, M = 4: exp(-j*pi/2*m) walks 1, -j, -1, j
    const CVec a2 = steering_angle(0.25, 4);
    CHECK(std::abs(a2(0) - Complex(1.0, 0.0)) < 1e-12);
    CHECK(std::abs(a2(1) - (-kJ)) < 1e-12);
    CHECK(std::abs(a2(2) - Complex(-1.0, 0.0)) < 1e-12);
    CHECK(std::abs(a2(3) - kJ) < 1e-12);

    CHECK_THROWS_AS(steering_angle(0.0, 0), std::invalid_argument);
}

TEST_CASE("steering_delay matches hand-evaluated phases") {
    const CVec b0 = steering_delay(0.0, 1.0, 3);
    for (Index k = 0; k < 3; ++k) CHECK(std::abs(b0(k) - Complex(1.0, 0.0)) < 1e-15);

    const CVec b1 = steering_delay(0.5, 1.0, 2);
    CHECK(std::abs(b1(1) - Complex(-1.0, 0.0)) < 1e-15);

    const CVec b2 = steering_delay(0.25, 1.0, 4);
    CHECK(std::abs(b2(1) - (-kJ)) < 1e-12);
    CHECK(std::abs(b2(2) - Complex(-1.0, 0.0)) < 1e-12);
    CHECK(std::abs(b2(3) - kJ) < 1e-12);
}

TEST_CASE("build_dictionaries grids and unitarity") {
    SECTION("2x4 by hand: a(0) and a(1/2)") {
        const auto d = build_dictionaries(2, 4, 1.0, 1.0);
        REQUIRE(d.D == 4);
        CHECK(std::abs(d.A_theta(0, 0) - Complex(1, 0)) < 1e-15);
        CHECK(std::abs(d.A_theta(1, 0) - Complex(1, 0)) < 1e-15);
        CHECK(std::abs(d.A_theta(0, 1) - Complex(1, 0)) < 1e-15);
        CHECK(std::abs(d.A_theta(1, 1) - Complex(-1, 0)) < 1e-15);
    }

    SECTION("delay spread D = 64 at B = 1300") {
        const auto d = build_dictionaries(4, 1300, 64.0 / 1300.0, 1.0);
        CHECK(d.D == 64);
        CHECK(d.A_tau.rows() == 1300);
        CHECK(d.A_tau.cols() == 64);
    }

    SECTION("degenerate 1x1") {
        const auto d = build_dictionaries(1, 1, 1.0, 1.0);
        REQUIRE(d.D == 1);
        CHECK(std::abs(d.A_theta(0, 0) - Complex(1, 0)) < 1e-15);
        CHECK(std::abs(d.A_tau(0, 0) - Complex(1, 0)) < 1e-15);
    }

    SECTION("A_theta^H A_theta = M I") {
        const auto d = build_dictionaries(8, 16, 0.5, 1.0);
        const CMat g = d.A_theta.adjoint() * d.A_theta;
        CHECK((g - 8.0 * CMat::Identity(8, 8)).cwiseAbs().maxCoeff() < 1e-10);
    }

    SECTION("gamma out of range rejected") {
        CHECK_THROWS_AS(build_dictionaries(2, 4, 0.0, 1.0), std::invalid_argument);
        CHECK_THROWS_AS(build_dictionaries(2, 4, 1.5, 1.0), std::invalid_argument);
    }
}

namespace {

// Independent census: connected components of the nonzero mask, as bounding
// boxes. Used to verify block structure without trusting the synthesizer's
// own placement records.
struct Box {
    Index r0, r1, c0, c1;
};

std::vector<Box> nonzero_boxes(const CMat& x) {
    const Index m = x.rows(), d = x.cols();
    std::vector<std::vector<bool>> seen(m, std::vector<bool>(d, false));
    std::vector<Box> boxes;
    for (Index i = 0; i < m; ++i)
        for (Index j = 0; j < d; ++j) {
            if (seen[i][j] || x(i, j) == Complex(0, 0)) continue;
            // flood fill over 4-neighbors
            Box b{i, i, j, j};
            std::vector<std::pair<Index, Index>> stack{{i, j}};
            seen[i][j] = true;
            while (!stack.empty()) {
                auto [r, c] = stack.back();
                stack.pop_back();
                b.r0 = std::min(b.r0, r);
                b.r1 = std::max(b.r1, r);
                b.c0 = std::min(b.c0, c);
                b.c1 = std::max(b.c1, c);
                const Index dr[] = {1, -1, 0, 0}, dc[] = {0, 0, 1, -1};
                for (int k = 0; k < 4; ++k) {
                    const Index rr = r + dr[k], cc = c + dc[k];
                    if (rr < 0 || rr >= m || cc < 0 || cc >= d) continue;
                    if (seen[rr][cc] || x(rr, cc) == Complex(0, 0)) continue;
                    seen[rr][cc] = true;
                    stack.emplace_back(rr, cc);
                }
            }
            boxes.push_back(b);
        }
    return boxes;
}

Index count_nonzero_rows(const CMat& x) {
    Index c = 0;
    for (Index i = 0; i < x.rows(); ++i)
        if (!x.row(i).isZero(0.0)) ++c;
    return c;
}

Index count_nonzero_cols(const CMat& x) {
    Index c = 0;
    for (Index j = 0; j < x.cols(); ++j)
        if (!x.col(j).isZero(0.0)) ++c;
    return c;
}

}  // namespace

TEST_CASE("synthesize_device places disjoint rank-one blocks") {
    SECTION("three 3x3 blocks on the 19x19 grid") {
        Rng rng(1);
        const auto dev = synthesize_device(rng, 19, 19, 3, 3);
        const auto boxes = nonzero_boxes(dev.delay_angular);
        REQUIRE(boxes.size() == 3);
        for (const auto& b : boxes) {
            CHECK(b.r1 - b.r0 + 1 == 3);
            CHECK(b.c1 - b.c0 + 1 == 3);
        }
        CHECK(numerical_rank(dev.delay_angular) <= 3);
    }

    SECTION("single 1x1 block is one entry of rank one") {
        Rng rng(3);
        const auto dev = synthesize_device(rng, 4, 4, 1, 1);
        Index nnz = 0;
        for (Index i = 0; i < 4; ++i)
            for (Index j = 0; j < 4; ++j)
                if (dev.delay_angular(i, j) != Complex(0, 0)) ++nnz;
        CHECK(nnz == 1);
        CHECK(numerical_rank(dev.delay_angular) == 1);
    }

    SECTION("structural predicates at seed 7") {
        Rng rng(7);
        const auto dev = synthesize_device(rng, 8, 8, 2, 2);
        CHECK(count_nonzero_rows(dev.delay_angular) <= 4);
        CHECK(count_nonzero_cols(dev.delay_angular) <= 4);
        CHECK(numerical_rank(dev.delay_angular) <= 2);
        CHECK(std::abs(dev.delay_angular.norm() - 1.0) < 1e-12);
    }

    SECTION("amplitude range scales the norm") {
        Rng rng(11);
        const auto dev = synthesize_device(rng, 8, 8, 1, 2, 2.0, 2.0);
        CHECK(std::abs(dev.delay_angular.norm() - 2.0) < 1e-12);
    }

    SECTION("infeasible packing rejected") {
        Rng rng(2);
        CHECK_THROWS_AS(synthesize_device(rng, 3, 3, 2, 2), std::invalid_argument);
    }

    SECTION("same seed, same channel") {
        Rng a(42), b(42);
        const auto da = synthesize_device(a, 16, 16, 2, 3);
        const auto db = synthesize_device(b, 16, 16, 2, 3);
        CHECK((da.delay_angular - db.delay_angular).norm() == 0.0);
    }
}

TEST_CASE("synthesize_device_physical places clusters at nearest bins") {
    const auto dicts = build_dictionaries(4, 8, 1.0, 1.0);
    Rng rng(5);

    SECTION("unit point cluster at the origin gives a(0) b(0)^H") {
        CVec g1(1), g2(1);
        g1 << Complex(1, 0);
        g2 << Complex(1, 0);
        const auto dev = synthesize_device_physical(
            rng, dicts, {ClusterSpec::rank_one(0.0, 0.0, g1, g2)});
        CHECK(std::abs(dev.delay_angular(0, 0) - Complex(1, 0)) < 1e-15);
        CHECK(dev.delay_angular.cwiseAbs().sum() == 1.0);
        const CMat expect = steering_angle(0.0, 4) * steering_delay(0.0, 1.0, 8).adjoint();
        CHECK((dev.physical - expect).norm() < 1e-12);
        CHECK_FALSE(dev.support_clipped);
    }

    SECTION("two clusters with disjoint support give rank two") {
        CVec g(1);
        g << Complex(1, 0);
        const auto dev = synthesize_device_physical(
            rng, dicts,
            {ClusterSpec::rank_one(0.0, 0.0, g, g),
             ClusterSpec::rank_one(0.5, 3.0 / 8.0, g, g)});
        CHECK(numerical_rank(dev.delay_angular) == 2);
    }

    SECTION("theta = 0.5 with M = 2 lands on bin 1") {
        const auto d2 = build_dictionaries(2, 4, 1.0, 1.0);
        CVec g(1);
        g << Complex(1, 0);
        const auto dev =
            synthesize_device_physical(rng, d2, {ClusterSpec::rank_one(0.5, 0.0, g, g)});
        CHECK(std::abs(dev.delay_angular(1, 0) - Complex(1, 0)) < 1e-15);
        CHECK(dev.delay_angular(0, 0) == Complex(0, 0));
    }

    SECTION("support beyond the delay grid is clipped and flagged") {
        CVec g(2);
        g << Complex(1, 0), Complex(1, 0);
        // delay bin 7 with p_del = 2 wants bins {6, 7, 8}-ish; D = 8 clips it
        const auto dev = synthesize_device_physical(
            rng, dicts, {ClusterSpec::rank_one(0.0, 7.5 / 8.0, g, g)});
        CHECK(dev.support_clipped);
    }
}

TEST_CASE("delay-angular to physical round trip") {
    const auto dicts = build_dictionaries(8, 32, 0.5, 1.0);
    Rng rng(9);
    auto dev = synthesize_device(rng, 8, dicts.D, 2, 2);
    attach_physical(dev, dicts);

    // independent elementwise evaluation of A_theta * X * A_tau^H
    CMat expect = CMat::Zero(8, 32);
    for (Index i = 0; i < 8; ++i)
        for (Index b = 0; b < 32; ++b) {
            Complex acc(0, 0);
            for (Index k = 0; k < 8; ++k)
                for (Index l = 0; l < dicts.D; ++l)
                    acc += dicts.A_theta(i, k) * dev.delay_angular(k, l) *
                           std::conj(dicts.A_tau(b, l));
            expect(i, b) = acc;
        }
    CHECK((dev.physical - expect).norm() / expect.norm() < 1e-10);
}
