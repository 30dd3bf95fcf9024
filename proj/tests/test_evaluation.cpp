// Error measurement on independent evaluation clouds: exactness on the
// oracle itself, calibrated offsets, regression slopes on synthetic and real
// convergence data, and the projection-bias probe.
#include <doctest.h>

#include <cmath>
#include <cstdint>
#include <vector>

#include "bsde/common.hpp"
#include "bsde/evaluation.hpp"
#include "bsde/multilevel.hpp"
#include "bsde/problems.hpp"

using namespace bsde;

namespace {

SolveOptions sine_options(const ProblemWithOracle& pw, const GridFamily& fam) {
    SolveOptions opt;
    opt.y_bound = constant_bound(pw.problem.c_phi);
    opt.z_bound = gradient_bound(fam, pw.problem.c_x, pw.problem.theta);
    return opt;
}

} // namespace

TEST_SUITE("evaluation") {

TEST_CASE("evaluating the oracle against itself gives zero error") {
    auto pw = sine_problem();
    GridFamily fam(pw.problem.T, 1.0);
    GridPtr g = fam.grid(3);
    auto self = oracle_evaluator(pw.closed, g, "ORACLE");
    auto rep = global_mse(self, pw.closed, pw.problem.model, g, 20000, 5);
    CHECK(rep.mseY_max == 0.0);
    CHECK(rep.mseY_avg == 0.0);
    CHECK(rep.mseY_t0 == 0.0);
    CHECK(rep.mseZ_sum == 0.0);
    CHECK(rep.combined == 0.0);
    CHECK(rep.scheme == "ORACLE");
    CHECK(rep.k == 3);
    CHECK(rep.m_eval == 20000);
}

TEST_CASE("a constant value offset is measured exactly") {
    auto pw = sine_problem();
    GridFamily fam(pw.problem.T, 1.0);
    GridPtr g = fam.grid(3);
    auto self = oracle_evaluator(pw.closed, g, "ORACLE");
    SchemeEval off = self;
    off.y = [base = self.y](int i, const double* x) { return base(i, x) + 0.1; };
    auto rep = global_mse(off, pw.closed, pw.problem.model, g, 20000, 5);
    CHECK(rep.mseY_max == doctest::Approx(0.01).epsilon(1e-12));
    CHECK(rep.mseY_avg == doctest::Approx(0.01).epsilon(1e-12));
    CHECK(rep.mseY_t0 == doctest::Approx(0.01).epsilon(1e-12));
    CHECK(rep.mseZ_sum == 0.0); // gradient untouched
    CHECK(rep.combined == rep.mseY_max + rep.mseZ_sum);
}

TEST_CASE("synthetic geometric decay regresses to slope -1 exactly") {
    auto runner = [](int k, std::uint64_t) {
        ErrorReport r;
        r.k = k;
        r.combined = std::pow(2.0, -double(k));
        return r;
    };
    auto st = convergence_study(runner, 2, 6, {1});
    CHECK(st.slope == doctest::Approx(-1.0).epsilon(1e-12));
    CHECK(std::abs(st.intercept) <= 1e-10);
    CHECK(st.points.size() == 5);
    CHECK(st.reports.size() == 5);
    // fewer than three levels cannot support a slope estimate
    CHECK_THROWS_AS(convergence_study(runner, 2, 3, {1}), ConfigError);
}

TEST_CASE("multilevel errors track the published decay; single-cloud stays flat") {
    auto pw = sine_problem();
    const Model& model = pw.problem.model;
    GridFamily fam(pw.problem.T, 1.0);
    auto bases = hermite_bases(fam, 7);
    SolveOptions opt = sine_options(pw, fam);
    const int K = 8;

    std::vector<double> mdp1_log2;
    for (int k = 3; k <= 5; ++k) {
        Schedule M(std::size_t(k) + 1);
        for (int j = 0; j <= k; ++j) M[std::size_t(j)] = std::size_t(40 * K) << (2 * k - j);
        auto levels = solve_multilevel(model, fam, k, M, pw.problem.phi, bases, 1234, opt);
        auto rep = global_mse(evaluator(levels.back(), "ML"), pw.closed, model, fam.grid(k),
                              100000, 77);
        const double line = -0.88 * k - 5.0;
        CHECK(std::log2(rep.combined) >= line - 3.5);
        CHECK(std::log2(rep.combined) <= line + 2.5);

        auto sol = solve_lsmdp_terminal(model, fam, k, std::size_t(40 * K) << k,
                                        pw.problem.phi, bases, 4321, opt);
        auto rep1 = global_mse(evaluator(sol, "MDP1"), pw.closed, model, fam.grid(k), 100000,
                               77);
        mdp1_log2.push_back(std::log2(rep1.combined));
    }
    // least-squares slope over k = 3, 4, 5: centred abscissa {-1, 0, 1}
    const double slope = (mdp1_log2[2] - mdp1_log2[0]) / 2.0;
    CHECK(slope >= -0.5);
    CHECK(slope <= 0.3);
}

TEST_CASE("error evaluators own their data beyond the source's lifetime") {
    auto pw = sine_problem();
    GridFamily fam(pw.problem.T, 1.0);
    SchemeEval ev;
    {
        auto levels = solve_multilevel(pw.problem.model, fam, 2, {4000, 2000, 1000},
                                       pw.problem.phi, hermite_bases(fam, 5), 9);
        ev = evaluator(levels.back(), "ML");
    } // source destroyed here
    double x = 0.4, z;
    CHECK(std::isfinite(ev.y(1, &x)));
    ev.z(1, &x, &z);
    CHECK(std::isfinite(z));
    CHECK(ev.q == 1);
    CHECK(ev.tag == "ML");
}

TEST_CASE("reported standard errors shrink like the square root of the cloud") {
    // A linear-in-x value offset gives squared errors 0.01 x^2, whose sample
    // mean has a smooth, finite-variance distribution: the classic 1/sqrt(m)
    // law is visible without solver noise on top.
    auto pw = sine_problem();
    GridFamily fam(pw.problem.T, 1.0);
    GridPtr g = fam.grid(3);
    auto self = oracle_evaluator(pw.closed, g, "ORACLE");
    SchemeEval off = self;
    off.y = [base = self.y](int i, const double* x) { return base(i, x) + 0.1 * x[0]; };
    auto small = global_mse(off, pw.closed, pw.problem.model, g, 5000, 31);
    auto large = global_mse(off, pw.closed, pw.problem.model, g, 80000, 31);
    REQUIRE(small.seY_max > 0.0);
    REQUIRE(large.seY_max > 0.0);
    CHECK(large.seZ_sum == 0.0); // gradient untouched
    const double ratio = small.seY_max / large.seY_max; // expect ~4 = sqrt(16)
    CHECK(ratio >= 2.8);
    CHECK(ratio <= 5.6);
}

TEST_CASE("projection bias probe: exact spans, variances, and cell refinement") {
    auto pw = sine_problem();
    const Model& model = pw.problem.model;

    // a constant target lies in the constant span: zero bias
    auto cb = make_constant_basis(1);
    CHECK(empirical_bias(cb, [](const double*) { return 2.5; }, model, 1.0, 10000, 3) <=
          1e-12);

    // best constant fit of x under N(0, 1) leaves exactly Var(x) = 1
    double b1 = empirical_bias(cb, [](const double* x) { return x[0]; }, model, 1.0, 100000,
                               3);
    CHECK(b1 == doctest::Approx(1.0).epsilon(0.05));

    // halving uniform cells on a fixed box divides the squared bias of a
    // Lipschitz target by about four
    auto uniform_cells = [](int n) {
        std::vector<double> bp(std::size_t(n) + 1);
        for (int j = 0; j <= n; ++j) bp[std::size_t(j)] = -4.0 + 8.0 * j / n;
        HypercubeSpec spec;
        spec.breakpoints = {bp};
        spec.box_lo = {-4.0};
        spec.box_hi = {4.0};
        return make_hypercube_basis(spec);
    };
    auto lip = [](const double* x) { return std::abs(x[0]); };
    double u8 = empirical_bias(uniform_cells(8), lip, model, 1.0, 200000, 3);
    double u16 = empirical_bias(uniform_cells(16), lip, model, 1.0, 200000, 3);
    CHECK(u8 / u16 >= 2.5);
    CHECK(u8 / u16 <= 6.0);

    // the adaptive cell layout also refines, if not at the exact dyadic rate
    GridFamily fam(1.0, 1.0);
    double c8 = empirical_bias(brownian_cell_bases(fam, 1, 8)(4, 8, FitRole::value), lip,
                               model, 1.0, 200000, 3);
    double c16 = empirical_bias(brownian_cell_bases(fam, 1, 16)(4, 8, FitRole::value), lip,
                                model, 1.0, 200000, 3);
    CHECK(c16 < c8);
}

} // TEST_SUITE
