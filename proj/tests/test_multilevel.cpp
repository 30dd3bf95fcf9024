// Zero-driver solvers: the level-0 start values, the control-variated
// backward recursion, the single-cloud baseline, truncation bounds,
// determinism, and the work-schedule calibrator.
#include <doctest.h>

#include <cmath>
#include <cstdint>
#include <vector>

#include "bsde/common.hpp"
#include "bsde/evaluation.hpp"
#include "bsde/multilevel.hpp"
#include "bsde/parallel.hpp"
#include "bsde/problems.hpp"

using namespace bsde;

namespace {

BasisFactory constant_factory(int d) {
    return [d](int, int, FitRole) { return make_constant_basis(d); };
}

// Fig-style schedule: top level M_k = base K 2^k, doubling toward coarser
// levels, so level j gets base K 2^(2k-j).
Schedule doubling_schedule(int k, std::size_t base_k) {
    Schedule M(std::size_t(k) + 1);
    for (int j = 0; j <= k; ++j) M[std::size_t(j)] = base_k << (2 * k - j);
    return M;
}

struct ThreadGuard {
    int saved;
    ThreadGuard() : saved(par::threads()) {}
    ~ThreadGuard() { par::set_threads(saved); }
};

} // namespace

TEST_SUITE("multilevel") {

TEST_CASE("level 0 on a constant payoff: value exact, gradient noise-bounded") {
    Model m = brownian_model(1, {0.0});
    GridFamily fam(1.0, 1.0);
    const double c = 2.5;
    const std::size_t M0 = 40000;
    TerminalFn phi = [c](const double*) { return c; };
    auto levels = solve_multilevel(m, fam, 0, {M0}, phi, constant_factory(1), 17);
    REQUIRE(levels.size() == 1);
    double x = 0.3, z;
    CHECK(levels[0].y_at(0, &x) == doctest::Approx(c).epsilon(1e-12));
    levels[0].z_at(0, &x, &z);
    CHECK(std::abs(z) <= 4.0 * c / std::sqrt(1.0 * double(M0)));
}

TEST_CASE("level 0 on the identity payoff: mean and scaled second moment") {
    Model m = brownian_model(1, {0.0});
    GridFamily fam(1.0, 1.0);
    const std::size_t M0 = 1000000;
    TerminalFn ident = [](const double* x) { return x[0]; };
    auto levels = solve_multilevel(m, fam, 0, {M0}, ident, constant_factory(1), 23);
    double x = 0.0, z;
    // y = sample mean of W_T ~ 0 +- 4 sqrt(T/M); z = mean of W_T^2/T ~ 1,
    // var(W_T^2/T) = 2 so the band is 4 sqrt(2/M)
    CHECK(std::abs(levels[0].y_at(0, &x)) <= 4.0 * std::sqrt(1.0 / double(M0)));
    levels[0].z_at(0, &x, &z);
    CHECK(std::abs(z - 1.0) <= 4.0 * std::sqrt(2.0 / double(M0)));
}

TEST_CASE("level 0 with a single path reproduces that sample's payoff") {
    Model m = brownian_model(1, {0.0});
    GridFamily fam(1.0, 1.0);
    TerminalFn ident = [](const double* x) { return x[0]; };
    TerminalFn sine = [](const double* x) { return std::sin(x[0]); };
    // same seed, same cloud: the sine fit must be exactly sin(identity fit)
    auto a = solve_multilevel(m, fam, 0, {1}, ident, constant_factory(1), 5);
    auto b = solve_multilevel(m, fam, 0, {1}, sine, constant_factory(1), 5);
    double x = 0.0;
    CHECK(b[0].y_at(0, &x) == std::sin(a[0].y_at(0, &x)));
}

TEST_CASE("constant payoff propagates through the levels") {
    auto pw = sine_problem();
    GridFamily fam(1.0, 1.0);
    const double c = 1.0;
    TerminalFn phi = [c](const double*) { return c; };
    auto bases = hermite_bases(fam, 5);
    auto levels = solve_multilevel(pw.problem.model, fam, 3, {20000, 20000, 20000, 20000}, phi,
                                   bases, 29);
    const LevelSolution& top = levels.back();
    for (int i = 0; i < 8; ++i) {
        for (double x : {-0.5, 0.0, 0.8}) {
            double z;
            CHECK(top.y_at(i, &x) == doctest::Approx(c).epsilon(0.05));
            top.z_at(i, &x, &z);
            CHECK(std::abs(z) <= 0.05);
        }
    }
}

TEST_CASE("control variate shrinks the time-0 response variance at k = 6") {
    auto pw = sine_problem();
    GridFamily fam(1.0, 1.0);
    auto bases = hermite_bases(fam, 7);
    Schedule M = doubling_schedule(6, 40 * 8);
    M.back() = 100000; // probe the top level with a large cloud
    std::vector<std::array<double, 2>> probe;
    SolveOptions opt;
    opt.var_probe = &probe;
    solve_multilevel(pw.problem.model, fam, 6, M, pw.problem.phi, bases, 31, opt);
    REQUIRE(probe.size() == 7);
    // [0]: variance of the control-variated response; [1]: raw terminal value
    CHECK(probe[6][0] <= probe[6][1]);
    // and the shrinkage is substantial, not marginal
    CHECK(probe[6][0] <= 0.5 * probe[6][1]);
}

TEST_CASE("exact control limit: linear payoff fits y(x) = x at level 1") {
    // With basisY spanning the true value function (constant+linear = Hermite
    // degree 1) and the level-0 control close to the true z = 1, the level-1
    // value fit recovers E[W_T | W_t] = W_t.
    Model m = brownian_model(1, {0.0});
    GridFamily fam(1.0, 1.0);
    TerminalFn ident = [](const double* x) { return x[0]; };
    auto bases = hermite_bases(fam, 1);
    auto levels = solve_multilevel(m, fam, 1, {200000, 100000}, ident, bases, 37);
    for (double x : {-1.0, 0.2, 0.7}) {
        CHECK(levels[1].y_at(1, &x) == doctest::Approx(x).epsilon(0.03));
        double z;
        levels[1].z_at(1, &x, &z);
        CHECK(z == doctest::Approx(1.0).epsilon(0.08));
    }
}

TEST_CASE("sine problem tracks the published convergence line at k = 4, 5") {
    auto pw = sine_problem();
    GridFamily fam(1.0, 1.0);
    auto bases = hermite_bases(fam, 7);
    SolveOptions opt;
    opt.y_bound = constant_bound(pw.problem.c_phi);
    opt.z_bound = gradient_bound(fam, pw.problem.c_x, pw.problem.theta);
    for (int k : {4, 5}) {
        auto levels = solve_multilevel(pw.problem.model, fam, k, doubling_schedule(k, 40 * 8),
                                       pw.problem.phi, bases, 1234, opt);
        auto rep = global_mse(evaluator(levels.back(), "ML"), pw.closed, pw.problem.model,
                              fam.grid(k), 100000, 77);
        const double line = -0.88 * k - 5.0;
        CHECK(std::log2(rep.combined) <= line + 2.5);
        CHECK(std::log2(rep.combined) >= line - 3.5);
    }
}

TEST_CASE("terminal index evaluates the terminal function symbolically") {
    auto pw = sine_problem();
    GridFamily fam(1.0, 1.0);
    auto bases = hermite_bases(fam, 3);
    auto ml = solve_multilevel(pw.problem.model, fam, 2, {4000, 2000, 1000}, pw.problem.phi,
                               bases, 3);
    auto dp = solve_lsmdp_terminal(pw.problem.model, fam, 2, 2000, pw.problem.phi, bases, 3);
    double x = 0.77;
    CHECK(ml.back().y_at(4, &x) == std::sin(0.77));
    CHECK(dp.y_at(4, &x) == std::sin(0.77));
}

TEST_CASE("single-cloud baseline: constant payoff and determinism") {
    GridFamily fam(1.0, 1.0);
    Model m = brownian_model(1, {0.0});
    const double c = 3.0;
    TerminalFn phi = [c](const double*) { return c; };
    auto sol = solve_lsmdp_terminal(m, fam, 3, 50000, phi, constant_factory(1), 41);
    for (int i = 0; i < 8; ++i) {
        double x = 0.1, z;
        CHECK(sol.y_at(i, &x) == doctest::Approx(c).epsilon(1e-12));
        sol.z_at(i, &x, &z);
        CHECK(std::abs(z) <= 4.0 * c / std::sqrt(fam.grid(3)->dt(i) * 50000));
    }
}

TEST_CASE("identical seeds give bit-identical solutions for any thread count") {
    ThreadGuard g;
    auto pw = sine_problem();
    GridFamily fam(1.0, 1.0);
    auto bases = hermite_bases(fam, 5);
    par::set_threads(1);
    auto a = solve_multilevel(pw.problem.model, fam, 3, {30000, 20000, 10000, 5000},
                              pw.problem.phi, bases, 99);
    par::set_threads(6);
    auto b = solve_multilevel(pw.problem.model, fam, 3, {30000, 20000, 10000, 5000},
                              pw.problem.phi, bases, 99);
    REQUIRE(a.size() == b.size());
    for (std::size_t k = 0; k < a.size(); ++k) {
        REQUIRE(a[k].y.size() == b[k].y.size());
        for (std::size_t i = 0; i < a[k].y.size(); ++i) {
            CHECK((a[k].y[i].coef - b[k].y[i].coef).cwiseAbs().maxCoeff() == 0.0);
            CHECK((a[k].z[i].coef - b[k].z[i].coef).cwiseAbs().maxCoeff() == 0.0);
        }
    }
}

TEST_CASE("a deeper solve extends the shallower one level by level") {
    auto pw = sine_problem();
    GridFamily fam(1.0, 1.0);
    auto bases = hermite_bases(fam, 3);
    auto deep = solve_multilevel(pw.problem.model, fam, 3, {4000, 2000, 1000, 500},
                                 pw.problem.phi, bases, 11);
    auto shallow = solve_multilevel(pw.problem.model, fam, 2, {4000, 2000, 1000},
                                    pw.problem.phi, bases, 11);
    for (std::size_t k = 0; k < shallow.size(); ++k)
        for (std::size_t i = 0; i < shallow[k].y.size(); ++i) {
            CHECK((deep[k].y[i].coef - shallow[k].y[i].coef).cwiseAbs().maxCoeff() == 0.0);
            CHECK((deep[k].z[i].coef - shallow[k].z[i].coef).cwiseAbs().maxCoeff() == 0.0);
        }
}

TEST_CASE("truncation bounds cap the fitted functions everywhere") {
    auto pw = sine_problem();
    GridFamily fam(1.0, 1.0);
    auto bases = hermite_bases(fam, 7);
    SolveOptions opt;
    opt.y_bound = constant_bound(1.0);      // |sin| <= 1
    opt.z_bound = constant_bound(1.0);      // |cos e^...| <= 1
    auto sol = solve_lsmdp_terminal(pw.problem.model, fam, 3, 5000, pw.problem.phi, bases, 43,
                                    opt);
    for (int i = 0; i < 8; ++i)
        for (double x : {-30.0, -3.0, 0.0, 3.0, 30.0}) {
            double z;
            CHECK(std::abs(sol.y_at(i, &x)) <= 1.0);
            sol.z_at(i, &x, &z);
            CHECK(std::abs(z) <= 1.0);
        }
}

TEST_CASE("gradient bound grows toward the horizon when theta < 1") {
    GridFamily fam(1.0, 1.0);
    BoundFn b = gradient_bound(fam, 2.0, 0.5);
    // C_X (T - t)^(-(1-theta)/2) = 2 (1 - t)^(-1/4)
    CHECK(b(3, 0) == doctest::Approx(2.0).epsilon(1e-12));
    CHECK(b(3, 4) == doctest::Approx(2.0 * std::pow(0.5, -0.25)).epsilon(1e-12));
    CHECK(b(3, 7) > b(3, 4));
    BoundFn flat = gradient_bound(fam, 2.0, 1.0);
    CHECK(flat(3, 7) == doctest::Approx(2.0).epsilon(1e-12));
}

TEST_CASE("schedule validation") {
    auto pw = sine_problem();
    GridFamily fam(1.0, 1.0);
    auto bases = hermite_bases(fam, 3);
    CHECK_THROWS_AS(
        solve_multilevel(pw.problem.model, fam, 2, {100, 100}, pw.problem.phi, bases, 1),
        ConfigError); // needs k+1 entries
    CHECK_THROWS_AS(
        solve_multilevel(pw.problem.model, fam, 1, {100, 0}, pw.problem.phi, bases, 1),
        ConfigError); // zero paths
    CHECK_THROWS_AS(solve_lsmdp_terminal(pw.problem.model, fam, 2, 0, pw.problem.phi, bases, 1),
                    ConfigError);
}

TEST_CASE("calibrated schedules follow the stated growth laws") {
    GridFamily fam(1.0, 1.0);
    const int k = 6, d = 1;
    auto a = calibrate_schedule(fam, k, 1.0 / 64, d);
    auto b = calibrate_schedule(fam, k, 1.0 / 128, d);
    REQUIRE(a.M.size() == std::size_t(k) + 1);
    // halving eps multiplies the top path count by about 2^(1+d/2) = 2^1.5
    const double growth = double(b.M.back()) / double(a.M.back());
    CHECK(growth >= 2.5);
    CHECK(growth <= 3.2);
    // basis-size target at t = 0 with unit constants: ceil(eps^-1/2 T^-1/2)
    CHECK(a.K[std::size_t(k)][0] == std::size_t(std::ceil(std::sqrt(64.0))));
    CHECK(b.K[std::size_t(k)][0] == std::size_t(std::ceil(std::sqrt(128.0))));
    // work bookkeeping matches its own schedule
    double w = 0.0;
    for (int j = 0; j <= k; ++j) w += double(a.M[std::size_t(j)]) * double(1 << j);
    CHECK(a.work_multilevel == doctest::Approx(w).epsilon(1e-12));
    CHECK(a.work_single == doctest::Approx(double(a.M_single) * (1 << k)).epsilon(1e-12));
    // cost orders evaluated at eps: ml/single ratio is eps ln(1/eps + 1)
    const double eps = 1.0 / 256;
    auto c = calibrate_schedule(fam, 8, eps, d);
    CHECK(c.order_multilevel / c.order_single ==
          doctest::Approx(eps * std::log(1.0 / eps + 1.0)).epsilon(1e-12));
    CHECK(c.order_full > c.order_residual);
}

} // TEST_SUITE
