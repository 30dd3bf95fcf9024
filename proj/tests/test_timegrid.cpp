// Dyadic grid families: point formulas, bit-exact nesting, coarse-index
// mapping, and mesh diagnostics.
#include <doctest.h>

#include <cmath>
#include <stdexcept>

#include "bsde/timegrid.hpp"

using namespace bsde;

TEST_SUITE("timegrid") {

TEST_CASE("uniform level 2 points") {
    GridFamily fam(1.0, 1.0);
    GridPtr g = fam.grid(2);
    REQUIRE(g->t.size() == 5);
    CHECK(g->t[0] == 0.0);
    CHECK(g->t[1] == 0.25);
    CHECK(g->t[2] == 0.5);
    CHECK(g->t[3] == 0.75);
    CHECK(g->t[4] == 1.0);
    CHECK(g->steps() == 4);
    CHECK(g->dt(1) == 0.25);
}

TEST_CASE("graded beta=0.5 level 1: interior point 1-(1/2)^2") {
    GridFamily fam(1.0, 0.5);
    GridPtr g = fam.grid(1);
    REQUIRE(g->t.size() == 3);
    CHECK(g->t[0] == 0.0);
    // independently evaluated: t_1 = T - T (1 - 1/2)^(1/0.5) = 1 - 0.25
    CHECK(g->t[1] == doctest::Approx(0.75).epsilon(1e-15));
    CHECK(g->t[2] == 1.0);
}

TEST_CASE("graded beta=1 coincides with uniform bit for bit") {
    GridFamily graded(1.0, 1.0);
    GridFamily uniform(1.0, 1.0);
    GridPtr a = graded.grid(3), b = uniform.grid(3);
    for (std::size_t i = 0; i < a->t.size(); ++i) CHECK(a->t[i] == b->t[i]);
}

TEST_CASE("endpoints and strict monotonicity, both families") {
    for (double beta : {1.0, 0.5, 0.3}) {
        GridFamily fam(2.5, beta);
        for (int k = 0; k <= 10; ++k) {
            GridPtr g = fam.grid(k);
            CHECK(g->t.front() == 0.0);
            CHECK(g->t.back() == 2.5);
            for (int i = 0; i < g->steps(); ++i) CHECK(g->t[std::size_t(i)] < g->t[std::size_t(i) + 1]);
        }
    }
}

TEST_CASE("nesting is bit-exact up to k=10, both families") {
    for (double beta : {1.0, 0.5}) {
        GridFamily fam(1.0, beta);
        for (int k = 1; k <= 10; ++k) {
            GridPtr fine = fam.grid(k), coarse = fam.grid(k - 1);
            for (int j = 0; j <= coarse->steps(); ++j)
                CHECK(coarse->t[std::size_t(j)] == fine->t[std::size_t(2 * j)]);
        }
    }
}

TEST_CASE("mesh bounds with family constants") {
    // Upper bound: max dt <= (T/beta) 2^-k holds for every level (convexity of
    // the grading map).  Lower bound: min dt * 2^k decreases with k for beta<1,
    // so the family constant c is taken at the finest tested level; with that
    // c the bound holds across the whole tested range.
    const int k_max = 10;
    for (double beta : {1.0, 0.5}) {
        GridFamily fam(1.0, beta);
        double c = 1e300;
        for (int k = 1; k <= k_max; ++k) {
            GridPtr g = fam.grid(k);
            double lo = 1e300, hi = 0.0;
            for (int i = 0; i < g->steps(); ++i) {
                lo = std::min(lo, g->dt(i));
                hi = std::max(hi, g->dt(i));
            }
            CHECK(hi <= (1.0 / beta) * std::pow(2.0, -k) * (1 + 1e-12));
            c = std::min(c, lo * std::pow(2.0, k));
        }
        CHECK(c > 0.0);
        for (int k = 1; k <= k_max; ++k) {
            GridPtr g = fam.grid(k);
            for (int i = 0; i < g->steps(); ++i)
                CHECK(g->dt(i) >= c * std::pow(2.0, -k) * (1 - 1e-12));
        }
    }
}

TEST_CASE("uniform increments are exactly T/2^k") {
    GridFamily fam(1.0, 1.0);
    for (int k = 0; k <= 8; ++k) {
        GridPtr g = fam.grid(k);
        for (int i = 0; i < g->steps(); ++i)
            CHECK(g->dt(i) == doctest::Approx(std::pow(2.0, -k)).epsilon(1e-14));
    }
}

TEST_CASE("alpha on the uniform grid") {
    GridFamily fam(1.0, 1.0);
    CHECK(alpha(*fam.grid(3), *fam.grid(2), 5) == 2);
    for (int k = 1; k <= 6; ++k) {
        CHECK(alpha(*fam.grid(k), *fam.grid(k - 1), 0) == 0);
        CHECK(alpha(*fam.grid(k), *fam.grid(k - 1), 1 << k) == 1 << (k - 1));
    }
}

TEST_CASE("alpha on the graded grid: early fine points map to 0") {
    GridFamily fam(1.0, 0.5);
    // t^(1)_1 = 0.75 exceeds t^(2)_1 = 1 - (3/4)^2 = 0.4375, so alpha = 0.
    CHECK(fam.grid(2)->t[1] == doctest::Approx(0.4375).epsilon(1e-15));
    CHECK(alpha(*fam.grid(2), *fam.grid(1), 1) == 0);
}

TEST_CASE("alpha consistency for k<=10, both families") {
    // coarse.t[alpha(i)] <= fine.t[i] < coarse.t[alpha(i)+1], and even fine
    // indices map to exactly half (nesting).
    for (double beta : {1.0, 0.5}) {
        GridFamily fam(1.0, beta);
        for (int k = 1; k <= 10; ++k) {
            const TimeGrid& f = *fam.grid(k);
            const TimeGrid& c = *fam.grid(k - 1);
            for (int i = 0; i <= f.steps(); ++i) {
                int a = alpha(f, c, i);
                REQUIRE(a >= 0);
                REQUIRE(a <= c.steps());
                CHECK(c.t[std::size_t(a)] <= f.t[std::size_t(i)]);
                if (a < c.steps()) CHECK(f.t[std::size_t(i)] < c.t[std::size_t(a) + 1]);
                if (i % 2 == 0) CHECK(a == i / 2);
            }
        }
    }
}

TEST_CASE("grid diagnostics: uniform k=3, theta_L=1") {
    GridFamily fam(1.0, 1.0);
    GridDiag d = grid_diagnostics(*fam.grid(3), 1.0);
    CHECK(d.C_pi == doctest::Approx(0.125).epsilon(1e-14));
    CHECK(d.R_pi == doctest::Approx(1.0).epsilon(1e-14));
}

TEST_CASE("grid diagnostics: graded beta=0.5 k=2 theta_L=0.5 vs direct evaluation") {
    GridFamily fam(1.0, 0.5);
    const TimeGrid& g = *fam.grid(2);
    double c_pi = 0.0, r_pi = 0.0;
    for (int i = 0; i < g.steps(); ++i)
        c_pi = std::max(c_pi, g.dt(i) / std::pow(1.0 - g.t[std::size_t(i)], 1.0 - 0.5));
    for (int i = 0; i + 1 < g.steps(); ++i) r_pi = std::max(r_pi, g.dt(i) / g.dt(i + 1));
    GridDiag d = grid_diagnostics(g, 0.5);
    CHECK(d.C_pi == doctest::Approx(c_pi).epsilon(1e-13));
    CHECK(d.R_pi == doctest::Approx(r_pi).epsilon(1e-13));
}

TEST_CASE("grid diagnostics: uniform C_pi halves when the level refines") {
    GridFamily fam(1.0, 1.0);
    for (int k = 1; k <= 8; ++k) {
        GridDiag a = grid_diagnostics(*fam.grid(k), 1.0);
        GridDiag b = grid_diagnostics(*fam.grid(k + 1), 1.0);
        CHECK(b.C_pi == doctest::Approx(0.5 * a.C_pi).epsilon(1e-13));
    }
}

TEST_CASE("parameter validation") {
    CHECK_THROWS_AS(GridFamily(1.0, 0.0), std::invalid_argument);
    CHECK_THROWS_AS(GridFamily(1.0, 1.5), std::invalid_argument);
    CHECK_THROWS_AS(GridFamily(-1.0, 1.0), std::invalid_argument);
    GridFamily fam(1.0, 1.0);
    CHECK_THROWS_AS(fam.grid(kMaxLevel + 1), std::invalid_argument);
    CHECK_THROWS_AS(fam.grid(-1), std::invalid_argument);
}

} // TEST_SUITE
