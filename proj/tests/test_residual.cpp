// Multistep solvers on per-time-point clouds: driver composition, the
// zero-terminal residual solve, the split assembly, single-point refits, and
// the smallness diagnostics.
#include <doctest.h>

#include <cmath>
#include <cstdint>
#include <vector>

#include "bsde/common.hpp"
#include "bsde/evaluation.hpp"
#include "bsde/problems.hpp"
#include "bsde/residual.hpp"

using namespace bsde;

namespace {

BasisFactory constant_factory(int d) {
    return [d](int, int, FitRole) { return make_constant_basis(d); };
}

// A degenerate but valid proxy: constant value/gradient fits at every time.
LevelSolution constant_proxy(const GridFamily& fam, int k, int d, int q, double yval,
                             double zval) {
    LevelSolution sol;
    sol.k = k;
    sol.q = q;
    sol.grid = fam.grid(k);
    sol.phi = [yval](const double*) { return yval; };
    BasisPtr basis = make_constant_basis(d);
    Fitted fy;
    fy.basis = basis;
    fy.coef = Eigen::MatrixXd::Constant(1, 1, yval);
    Fitted fz;
    fz.basis = basis;
    fz.coef = Eigen::MatrixXd::Constant(1, q, zval);
    sol.y.assign(std::size_t(1 << k), fy);
    sol.z.assign(std::size_t(1 << k), fz);
    return sol;
}

} // namespace

TEST_SUITE("residual") {

TEST_CASE("proxy driver adds the fitted value and gradient to the arguments") {
    GridFamily fam(1.0, 1.0);
    LevelSolution proxy = constant_proxy(fam, 2, 1, 1, 2.0, 0.5);
    Driver f = [](double, const double*, double y, const double* z) { return y + 10.0 * z[0]; };
    StepDriver g = proxy_driver(f, proxy);
    double x = 0.3, xn = 0.4, zj = 0.25;
    // f(t, x, ynext + proxyY(xnext), zj + proxyZ(xj)) = (1 + 2) + 10 (0.25 + 0.5)
    CHECK(g(1, &x, &xn, 1.0, &zj) == doctest::Approx(3.0 + 7.5).epsilon(1e-14));

    StepDriver raw = raw_driver(f, fam.grid(2));
    CHECK(raw(1, &x, &xn, 1.0, &zj) == doctest::Approx(1.0 + 2.5).epsilon(1e-14));
}

TEST_CASE("driver substitution: f(y) = y against a constant-c proxy value") {
    GridFamily fam(1.0, 1.0);
    const double c = 4.0;
    LevelSolution proxy = constant_proxy(fam, 1, 1, 1, c, 0.0);
    Driver f = [](double, const double*, double y, const double*) { return y; };
    StepDriver g = proxy_driver(f, proxy);
    double x = 0.0, z = 0.0;
    for (double ynext : {-1.0, 0.0, 2.5}) CHECK(g(0, &x, &x, ynext, &z) == c + ynext);
}

TEST_CASE("good-deal driver is h |z_2| with h = 0.2") {
    auto pw = gooddeal_problem();
    REQUIRE(bool(pw.problem.f));
    double x[2] = {1.0, 1.0};
    double z[2] = {0.3, -0.7};
    CHECK(pw.problem.f(0.5, x, 99.0, z) == doctest::Approx(0.2 * 0.7).epsilon(1e-14));
    z[1] = 0.4;
    CHECK(pw.problem.f(0.1, x, -5.0, z) == doctest::Approx(0.2 * 0.4).epsilon(1e-14));
    CHECK(pw.problem.lipschitz_f == doctest::Approx(0.2).epsilon(1e-14));
}

TEST_CASE("zero driver: the residual solve is exactly the zero function") {
    auto pw = sine_problem();
    GridFamily fam(1.0, 1.0);
    Driver zero = [](double, const double*, double, const double*) { return 0.0; };
    LevelSolution proxy = constant_proxy(fam, 2, 1, 1, 0.7, 0.3);
    auto res = solve_residual(pw.problem.model, fam, 2, {5000}, zero, proxy,
                              hermite_bases(fam, 5), 7);
    for (int i = 0; i < 4; ++i)
        for (double x : {-1.0, 0.0, 2.0}) {
            double z;
            CHECK(res.y_at(i, &x) == 0.0);
            res.z_at(i, &x, &z);
            CHECK(z == 0.0);
        }
    // the terminal index of a zero-terminal solve is the zero function too
    double x = 0.5;
    CHECK(res.y_at(4, &x) == 0.0);
}

TEST_CASE("split with a zero driver equals the linear part bit for bit") {
    auto pw = sine_problem();
    GridFamily fam(1.0, 1.0);
    auto bases = hermite_bases(fam, 5);
    auto levels = solve_multilevel(pw.problem.model, fam, 2, {8000, 4000, 2000},
                                   pw.problem.phi, bases, 11);
    Driver zero = [](double, const double*, double, const double*) { return 0.0; };
    auto res = solve_residual(pw.problem.model, fam, 2, {4000}, zero, levels.back(), bases, 13);
    SplitSolution split = assemble_split(levels.back(), res);
    for (int i = 0; i < 4; ++i)
        for (double x : {-0.8, 0.0, 1.2}) {
            double zs, zl;
            CHECK(split.y_at(i, &x) == levels.back().y_at(i, &x)); // + exact 0.0
            split.z_at(i, &x, &zs);
            levels.back().z_at(i, &x, &zl);
            CHECK(zs == zl);
        }
}

TEST_CASE("split evaluation is the sum of its parts") {
    auto pw = gooddeal_problem();
    GridFamily fam(pw.problem.T, 1.0);
    auto bases = geometric_cell_bases(pw.problem.model, fam, 6);
    auto levels = solve_multilevel(pw.problem.model, fam, 2, {8000, 8000, 8000},
                                   pw.problem.phi, bases, 17);
    auto res = solve_residual(pw.problem.model, fam, 2, {8000}, pw.problem.f, levels.back(),
                              bases, 19);
    SplitSolution split = assemble_split(levels.back(), res);
    for (int i = 0; i < 4; ++i) {
        double x[2] = {1.05, 0.95};
        double zt[2], zl[2], zr[2];
        CHECK(split.y_at(i, x) - levels.back().y_at(i, x) ==
              doctest::Approx(res.y_at(i, x)).epsilon(1e-12));
        split.z_at(i, x, zt);
        levels.back().z_at(i, x, zl);
        res.z_at(i, x, zr);
        for (int c = 0; c < 2; ++c)
            CHECK(zt[c] - zl[c] == doctest::Approx(zr[c]).epsilon(1e-12));
    }
    // a nonzero driver produced a genuinely nonzero residual
    double x[2] = {1.0, 1.0};
    CHECK(std::abs(res.y_at(0, x)) > 1e-4);
}

TEST_CASE("constant driver f = 1: the residual value is the remaining time") {
    auto pw = sine_problem();
    GridFamily fam(1.0, 1.0);
    Driver one = [](double, const double*, double, const double*) { return 1.0; };
    LevelSolution proxy = constant_proxy(fam, 2, 1, 1, 0.0, 0.0);
    const std::size_t M = 100000;
    auto res = solve_residual(pw.problem.model, fam, 2, {M}, one, proxy,
                              constant_factory(1), 23);
    double x = 0.3, z;
    const TimeGrid& g = *fam.grid(2);
    // responses are deterministic sums of step widths, so the fit is exact
    for (int i = 0; i < 4; ++i)
        CHECK(res.y_at(i, &x) == doctest::Approx(1.0 - g.t[std::size_t(i)]).epsilon(1e-10));
    // gradient responses are centred: |z| within 4 standard errors of 0
    res.z_at(0, &x, &z);
    CHECK(std::abs(z) <= 4.0 * (1.0 - g.t[1]) / std::sqrt(g.dt(0) * double(M)));
}

TEST_CASE("full baseline with zero driver matches the level-0 start values") {
    // Formulas coincide with the zero-driver start solve; the clouds live in
    // different seed domains, so agreement is statistical, not bitwise.
    Model m = brownian_model(1, {0.0});
    GridFamily fam(1.0, 1.0);
    TerminalFn ident = [](const double* x) { return x[0]; };
    Driver zero = [](double, const double*, double, const double*) { return 0.0; };
    const std::size_t M = 400000;
    auto full = solve_lsmdp_full(m, fam, 0, {M}, ident, zero, constant_factory(1), 29);
    auto lvl0 = solve_multilevel(m, fam, 0, {M}, ident, constant_factory(1), 29);
    double x = 0.0, za, zb;
    const double band = 8.0 / std::sqrt(double(M)); // two independent 4-se bands
    CHECK(std::abs(full.y_at(0, &x) - lvl0[0].y_at(0, &x)) <= band);
    full.z_at(0, &x, &za);
    lvl0[0].z_at(0, &x, &zb);
    CHECK(std::abs(za - zb) <= 2.0 * band);
}

TEST_CASE("full baseline on a constant payoff stays constant") {
    Model m = brownian_model(1, {0.0});
    GridFamily fam(1.0, 1.0);
    const double c = 2.0;
    TerminalFn phi = [c](const double*) { return c; };
    Driver zero = [](double, const double*, double, const double*) { return 0.0; };
    auto sol = solve_lsmdp_full(m, fam, 2, {30000}, phi, zero, constant_factory(1), 31);
    for (int i = 0; i < 4; ++i) {
        double x = 0.4, z;
        CHECK(sol.y_at(i, &x) == doctest::Approx(c).epsilon(1e-12));
        sol.z_at(i, &x, &z);
        CHECK(std::abs(z) <= 4.0 * c / std::sqrt(fam.grid(2)->dt(i) * 30000));
    }
}

TEST_CASE("full baseline reproduces a driver-coupled closed form") {
    // With f(t, x, y, z) = y/2 every fit stays a multiple of sin(x):
    // E[sin(X + dW) | X] = sin(X) e^{-dt/2}, so the backward recursion has
    // coefficients a_N = 1, a_i = e^{-(N-i)dt/2}
    //                          + (dt/2) sum_{j>i} a_j e^{-(j-i)dt/2}.
    // At k = 4 (dt = 1/16) that gives a_8 = 0.9961806, i.e.
    // y_8(0.3) = 0.29439 and (since the gradient response carries the same
    // driver sum) z_8(0.3) = a_8 cos(0.3) = 0.95169, computed independently.
    auto pw = sine_problem();
    GridFamily fam(1.0, 1.0);
    Driver half = [](double, const double*, double y, const double*) { return 0.5 * y; };
    auto bases = hermite_bases(fam, 7);
    auto sol = solve_lsmdp_full(pw.problem.model, fam, 4, {200000}, pw.problem.phi, half,
                                bases, 37);
    double x = 0.3, z;
    CHECK(sol.y_at(8, &x) == doctest::Approx(0.29439).epsilon(0.02));
    sol.z_at(8, &x, &z);
    CHECK(z == doctest::Approx(0.95169).epsilon(0.02));
}

TEST_CASE("refitting one time point reproduces the original fits bit for bit") {
    auto pw = sine_problem();
    GridFamily fam(1.0, 1.0);
    auto bases = hermite_bases(fam, 5);
    Driver half = [](double, const double*, double y, const double*) { return 0.5 * y; };
    auto sol = solve_lsmdp_full(pw.problem.model, fam, 2, {5000}, pw.problem.phi, half, bases,
                                21);
    LevelSolution copy = sol;
    auto drv = raw_driver(half, fam.grid(2));
    for (int i : {1, 0}) {
        refit_time_point(pw.problem.model, i, 5000, drv, bases, 21, copy);
        CHECK((copy.y[std::size_t(i)].coef - sol.y[std::size_t(i)].coef).cwiseAbs().maxCoeff() ==
              0.0);
        CHECK((copy.z[std::size_t(i)].coef - sol.z[std::size_t(i)].coef).cwiseAbs().maxCoeff() ==
              0.0);
    }
}

TEST_CASE("per-time-point schedules are honoured and validated") {
    auto pw = sine_problem();
    GridFamily fam(1.0, 1.0);
    auto bases = hermite_bases(fam, 3);
    Driver zero = [](double, const double*, double, const double*) { return 0.0; };
    // one entry per time point works
    Schedule per_point{3000, 2000, 1500, 1000};
    auto sol = solve_lsmdp_full(pw.problem.model, fam, 2, per_point, pw.problem.phi, zero,
                                bases, 41);
    double x = 0.1;
    CHECK(std::isfinite(sol.y_at(0, &x)));
    // wrong length rejected
    CHECK_THROWS_AS(solve_lsmdp_full(pw.problem.model, fam, 2, {100, 100}, pw.problem.phi,
                                     zero, bases, 41),
                    ConfigError);
    CHECK_THROWS_AS(solve_lsmdp_full(pw.problem.model, fam, 2, {100, 100, 0, 100},
                                     pw.problem.phi, zero, bases, 41),
                    ConfigError);
}

TEST_CASE("residual truncation bounds follow the stated envelopes") {
    GridFamily fam(1.0, 1.0);
    const double c_x = 2.0, theta = 1.0, theta_l = 0.5;
    BoundFn val = residual_value_bound(fam, c_x, theta, theta_l);
    BoundFn grad = residual_gradient_bound(fam, c_x, theta, theta_l);
    const TimeGrid& g = *fam.grid(3);
    for (int i = 0; i < 8; ++i) {
        const double want = c_x * std::pow(1.0 - g.t[std::size_t(i)], 0.5 * (theta + theta_l));
        CHECK(val(3, i) == doctest::Approx(want).epsilon(1e-12));
        CHECK(grad(3, i) == doctest::Approx(want / g.dt(i)).epsilon(1e-12));
    }
}

TEST_CASE("smallness report composes the mesh diagnostics") {
    GridFamily fam(1.0, 1.0);
    const TimeGrid& g = *fam.grid(5);
    SmallnessReport r = smallness_report(g, 2, 0.2, 1.0);
    GridDiag d = grid_diagnostics(g, 1.0);
    CHECK(r.c_pi == doctest::Approx(d.C_pi).epsilon(1e-14));
    CHECK(r.r_pi == doctest::Approx(d.R_pi).epsilon(1e-14));
    CHECK(r.lhs == doctest::Approx(d.C_pi * 0.2 * 0.2 * std::max(d.R_pi, 1.0)).epsilon(1e-12));
    const double want_thr =
        1.0 / (384.0 * (2.0 * 2 + 2.0 * std::exp(0.5)) * 2.0);
    CHECK(r.threshold == doctest::Approx(want_thr).epsilon(1e-12));
    CHECK(r.satisfied == (r.lhs <= r.threshold));
}

} // TEST_SUITE
