// Benchmark problems and their value oracles: anchor values, closed-vs-brute
// agreement, the degenerate exchange-option limit, basis factory shapes, and
// the numerical reference builder for the nonlinear problem.
#include <doctest.h>

#include <cmath>
#include <cstdio>
#include <vector>

#include "bsde/common.hpp"
#include "bsde/forward.hpp"
#include "bsde/problems.hpp"
#include "bsde/rng.hpp"

using namespace bsde;

TEST_SUITE("problems") {

TEST_CASE("sine closed form hits its anchor values") {
    auto pw = sine_problem();
    CHECK(pw.problem.T == 1.0);
    CHECK(pw.problem.model.d == 1);
    double x = 0.3;
    CHECK(pw.closed.y(1.0, &x) == std::sin(0.3)); // terminal slice is the payoff
    double x0 = 0.0;
    CHECK(pw.closed.y(0.0, &x0) == 0.0);
    double z0;
    pw.closed.z(0.0, &x0, &z0);
    CHECK(z0 == doctest::Approx(std::exp(-0.5)).epsilon(1e-14));
    double xh = std::acos(-1.0) / 2.0, zh;
    pw.closed.z(0.3, &xh, &zh);
    CHECK(std::abs(zh) <= 1e-12);
}

TEST_CASE("sine closed and brute oracles agree pointwise") {
    auto pw = sine_problem();
    double x = 0.3;
    CHECK(pw.closed.y(0.5, &x) == doctest::Approx(pw.brute.y(0.5, &x)).epsilon(1e-12));
    double zc, zb;
    pw.closed.z(0.5, &x, &zc);
    pw.brute.z(0.5, &x, &zb);
    CHECK(zc == doctest::Approx(zb).epsilon(1e-12));
}

TEST_CASE("oracle cross-validation within published tolerances") {
    for (const char* name : {"sine", "product", "gooddeal"}) {
        CAPTURE(name);
        auto pw = problem_by_name(name);
        OracleCheck chk = validate_oracles(pw, 20, 99);
        CHECK(chk.points == 20);
        CHECK(chk.max_rel_y <= 1e-3);
        CHECK(chk.max_rel_z <= 1e-3);
        CHECK(chk.max_rel_fd <= 1e-4);
    }
}

TEST_CASE("zero-driver values are martingales along simulated paths") {
    auto sine = sine_problem();
    double d1 = martingale_defect(sine, 3, 20000, 11);
    CHECK(d1 >= 0.0);
    CHECK(d1 <= 1.0);
    auto prod = product_problem();
    double d2 = martingale_defect(prod, 3, 20000, 12);
    CHECK(d2 >= 0.0);
    CHECK(d2 <= 1.0);
}

TEST_CASE("product oracle: value and gradient in closed form") {
    auto pw = product_problem();
    CHECK(pw.problem.model.d == 3);
    CHECK(pw.problem.model.q == 3);
    double x[3] = {1.0, 2.0, 3.0};
    CHECK(pw.closed.y(0.5, x) == 6.0);
    CHECK(pw.brute.y(0.5, x) == doctest::Approx(6.0).epsilon(1e-12));
    double z[3];
    pw.closed.z(0.5, x, z);
    CHECK(z[0] == doctest::Approx(6.0).epsilon(1e-14));
    CHECK(z[1] == doctest::Approx(3.0).epsilon(1e-14));
    CHECK(z[2] == doctest::Approx(2.0).epsilon(1e-14));
    // a zero coordinate kills the value and all but its own gradient slot
    double x0[3] = {0.0, 2.0, 3.0};
    CHECK(pw.closed.y(0.2, x0) == 0.0);
    pw.closed.z(0.2, x0, z);
    CHECK(z[0] == doctest::Approx(6.0).epsilon(1e-14));
    CHECK(z[1] == 0.0);
    CHECK(z[2] == 0.0);
}

TEST_CASE("good-deal payoff and published start values") {
    auto pw = gooddeal_problem();
    CHECK(pw.problem.T == 1.0);
    CHECK(pw.problem.model.d == 2);
    double at_money[2] = {1.0, 1.0};
    CHECK(pw.problem.phi(at_money) == 0.0);
    double in_money[2] = {1.0, 1.5};
    CHECK(pw.problem.phi(in_money) == 0.5);
    CHECK(pw.closed.y(0.0, at_money) == doctest::Approx(0.308220).epsilon(1e-5));
    double z0[2];
    pw.closed.z(0.0, at_money, z0);
    CHECK(z0[0] == doctest::Approx(-0.021731).epsilon(1e-3));
    CHECK(z0[1] == doctest::Approx(0.351683).epsilon(1e-4));
    CHECK(pw.brute.y(0.0, at_money) == doctest::Approx(pw.closed.y(0.0, at_money)).epsilon(1e-5));
}

TEST_CASE("spread payoff mean matches the exchange-option formula") {
    // The hedged asset carries a 0.1 drift in the forward model, so the
    // time-T spread expectation is the exchange-option value with forward
    // F = e^{0.1} and spread volatility^2 = 0.25 + 0.25 - 2 (0.6) (0.25).
    auto pw = gooddeal_problem();
    const std::size_t M = 1000000;
    std::vector<double> xs(M * 2);
    fill_marginal(pw.problem.model, 1.0, 77, rng::cloud_id(rng::Domain::test, 77), 0, M,
                  xs.data());
    double acc = 0.0, acc2 = 0.0;
    for (std::size_t i = 0; i < M; ++i) {
        double v = std::max(xs[2 * i + 1] - xs[2 * i], 0.0);
        acc += v;
        acc2 += v * v;
    }
    const double mean = acc / double(M);
    const double se = std::sqrt((acc2 / double(M) - mean * mean) / double(M));
    const double F = std::exp(0.1), sig = std::sqrt(0.2);
    auto N = [](double v) { return 0.5 * std::erfc(-v / std::sqrt(2.0)); };
    const double d1 = (std::log(F) + 0.5 * sig * sig) / sig, d2 = d1 - sig;
    const double margrabe = F * N(d1) - N(d2);
    CHECK(margrabe == doctest::Approx(0.243382).epsilon(1e-5));
    CHECK(std::abs(mean - margrabe) <= 4.0 * se);
}

TEST_CASE("basis factories expose the documented shapes") {
    GridFamily fam(1.0, 1.0);

    auto hb = hermite_bases(fam, 7);
    auto h = hb(3, 4, FitRole::value);
    CHECK(h->dim() == 8);
    CHECK(h->ambient() == 1);
    CHECK(h.get() == hb(3, 4, FitRole::gradient).get()); // shared cache per (k, i)
    CHECK(hb(3, 0, FitRole::value)->dim() == 1);         // degenerate start cloud
    CHECK_THROWS_AS(hb(3, 9, FitRole::value), ConfigError);

    auto cb = brownian_cell_bases(fam, 3, 8);
    auto c = cb(4, 7, FitRole::value);
    CHECK(c->dim() == 512);
    CHECK(c->ambient() == 3);
    CHECK(c->partitioned());
    CHECK(cb(4, 0, FitRole::value)->dim() == 1);

    auto ab = brownian_affine_bases(fam, 3, 5, 1e-3);
    CHECK(ab(4, 7, FitRole::value)->dim() == 500); // (1 + 3) * 5^3

    auto pw = gooddeal_problem();
    auto gb = geometric_cell_bases(pw.problem.model, fam, 50, 5e-4);
    auto g = gb(5, 16, FitRole::value);
    CHECK(g->dim() == 2500);
    CHECK(g->ambient() == 2);
    CHECK(g->partitioned());
}

TEST_CASE("small reference build round-trips and passes its own gate") {
    auto pw = gooddeal_problem();
    auto rc = build_gooddeal_reference(2, 40000, 3, 77, 20000, 12, 6);
    auto rf = build_gooddeal_reference(3, 40000, 3, 77, 20000, 12, 6);
    const double closed = pw.closed.y(0.0, pw.problem.model.x0.data());
    CHECK(rc.y0 == doctest::Approx(closed).epsilon(0.02));
    CHECK(rf.y0 == doctest::Approx(closed).epsilon(0.02));
    REQUIRE(rf.deltas.size() >= 2);
    CHECK(rf.deltas.back() < rf.deltas.front()); // fixed-point iteration contracts

    const char* path = "picard_ref_small.csv";
    save_reference(rf, path);
    auto rl = load_reference(path);
    std::remove(path);
    CHECK(rl.k == rf.k);
    CHECK(rl.y0 == rf.y0);
    CHECK(rl.z0 == rf.z0);
    CHECK(rl.deltas == rf.deltas);
    REQUIRE(rl.rows.size() == rf.rows.size());
    CHECK(rl.rows[3].mean_y == rf.rows[3].mean_y);
    CHECK(rl.rows[3].mean_z == rf.rows[3].mean_z);

    OracleStatus st = gooddeal_agreement(rc, rf, pw, 0.05);
    CHECK(st.verified);
    CHECK(st.tol == 0.05);
    CHECK(!st.message.empty());
}

TEST_CASE("production references, when present, certify the closed oracle") {
    auto load_any = [](const char* name) -> NumericalReference {
        for (const char* dir : {"data/", "../data/", "/root/proj/data/"}) {
            try {
                return load_reference(std::string(dir) + name);
            } catch (const Error&) {
            }
        }
        throw ConfigError("not found");
    };
    NumericalReference k6, k7;
    try {
        k6 = load_any("gooddeal_reference_k6.csv");
        k7 = load_any("gooddeal_reference_k7.csv");
    } catch (const Error&) {
        MESSAGE("production reference files not found; skipping certification");
        return;
    }
    auto pw = gooddeal_problem();
    OracleStatus st = gooddeal_agreement(k6, k7, pw); // default tolerance
    CHECK(st.verified);
    CHECK(st.rel_y0 <= st.tol);
    CHECK(st.max_rel_mean_y <= st.tol);
}

TEST_CASE("problem lookup by name") {
    CHECK(problem_by_name("sine").problem.name == "sine");
    CHECK(problem_by_name("product").problem.name == "product");
    CHECK(problem_by_name("gooddeal").problem.name == "gooddeal");
    CHECK_THROWS_AS(problem_by_name("unknown"), ConfigError);
}

} // TEST_SUITE
