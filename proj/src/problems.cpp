#include "bsde/problems.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <map>
#include <mutex>
#include <sstream>
#include <utility>

#include <Eigen/Dense>

#include "bsde/common.hpp"
#include "bsde/kernels.hpp"
#include "bsde/parallel.hpp"

namespace bsde {

using kern::normal_icdf;

namespace {

double normal_cdf(double x) { return 0.5 * std::erfc(-x / std::sqrt(2.0)); }

// Gauss-Hermite rule for the weight e^{-g^2}: sum w_i f(g_i) ~ int f e^{-g^2}.
// Nodes/weights via Golub-Welsch: eigen-decomposition of the symmetric Jacobi
// matrix with off-diagonal sqrt(i/2); weight = sqrt(pi) * (first eigenvector
// component)^2.  E[f(G)] for G ~ N(0,1) is then sum w_i f(sqrt(2) g_i) / sqrt(pi).
struct QuadRule {
    std::vector<double> node, weight;
};

const QuadRule& gauss_hermite(int n) {
    static std::mutex mu;
    static std::map<int, QuadRule> cache; // node-based: references stay valid
    std::lock_guard<std::mutex> lock(mu);
    auto it = cache.find(n);
    if (it != cache.end()) return it->second;
    Eigen::MatrixXd jac = Eigen::MatrixXd::Zero(n, n);
    for (int i = 1; i < n; ++i) jac(i, i - 1) = jac(i - 1, i) = std::sqrt(0.5 * i);
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(jac);
    QuadRule r;
    r.node.resize(std::size_t(n));
    r.weight.resize(std::size_t(n));
    const double spi = std::sqrt(std::acos(-1.0));
    for (int i = 0; i < n; ++i) {
        r.node[std::size_t(i)] = es.eigenvalues()(i);
        const double v0 = es.eigenvectors()(0, i);
        r.weight[std::size_t(i)] = spi * v0 * v0;
    }
    return cache.emplace(n, std::move(r)).first->second;
}

constexpr double kSqrt2 = 1.4142135623730951;

// ---------------------------------------------------------------------------
// gooddeal closed form.
//
// With S driftless and H drift-adjusted to gamma_tilde = gamma + h sigma_h
// sqrt(1-rho^2), the value of (H_T - S_T)^+ is an exchange-option formula in
// the forward F = hst e^{gamma_tilde tau} with spread volatility
// sigma_bar^2 = sigma_s^2 + sigma_h^2 - 2 rho sigma_s sigma_h:
//   u = F N(d1) - s N(d2),  d1 = ln(F/s)/(sigma_bar sqrt(tau)) + ...,
// and the identity F n(d1) = s n(d2) collapses the deltas to
//   du/ds = -N(d2),  du/dhst = e^{gamma_tilde tau} N(d1).
// The drift adjustment is the linearisation of the h |z_2| driver; z_2 =
// hst sigma_h sqrt(1-rho^2) e^{gamma_tilde tau} N(d1) >= 0 keeps it
// self-consistent, and the numerical reference (below) checks it.

struct GoodDealParams {
    double sigma_s = 0.5, sigma_h = 0.5, rho = 0.6, gamma = 0.1, h = 0.2;
    double rho_perp() const { return std::sqrt(1.0 - rho * rho); }
    double drift_adj() const { return gamma + h * sigma_h * rho_perp(); }
    double spread_vol() const {
        return std::sqrt(sigma_s * sigma_s + sigma_h * sigma_h - 2.0 * rho * sigma_s * sigma_h);
    }
};

struct GoodDealD {
    double f = 0.0, d1 = 0.0, d2 = 0.0;
};

GoodDealD gooddeal_d(const GoodDealParams& p, double tau, double s, double hst) {
    GoodDealD r;
    r.f = hst * std::exp(p.drift_adj() * tau);
    const double sd = p.spread_vol() * std::sqrt(tau);
    r.d1 = std::log(r.f / s) / sd + 0.5 * sd;
    r.d2 = r.d1 - sd;
    return r;
}

double gooddeal_value(const GoodDealParams& p, double tau, double s, double hst) {
    tau = std::max(tau, 1e-12); // continuous extension at maturity
    s = std::max(s, 1e-300);
    hst = std::max(hst, 1e-300);
    const GoodDealD d = gooddeal_d(p, tau, s, hst);
    return d.f * normal_cdf(d.d1) - s * normal_cdf(d.d2);
}

void gooddeal_gradient(const GoodDealParams& p, double tau, double s, double hst, double* out) {
    tau = std::max(tau, 1e-12);
    s = std::max(s, 1e-300);
    hst = std::max(hst, 1e-300);
    const GoodDealD d = gooddeal_d(p, tau, s, hst);
    const double nd1 = normal_cdf(d.d1), nd2 = normal_cdf(d.d2);
    const double eg = std::exp(p.drift_adj() * tau);
    out[0] = -s * p.sigma_s * nd2 + hst * p.sigma_h * p.rho * eg * nd1;
    out[1] = hst * p.sigma_h * p.rho_perp() * eg * nd1;
}

// Brute-force value: outer Gauss-Hermite over the factor g1 shared by S and
// H; conditionally on g1, S_T is a constant and H_T is lognormal, so the
// inner expectation is a one-dimensional call formula.  No exchange-option
// algebra is involved, only iterated conditioning.
double gooddeal_value_quad(const GoodDealParams& p, double tau, double s, double hst) {
    tau = std::max(tau, 1e-12);
    const auto& r = gauss_hermite(80);
    const double st = std::sqrt(tau);
    const double beta = p.sigma_h * p.rho_perp() * st;
    double acc = 0.0;
    for (std::size_t i = 0; i < r.node.size(); ++i) {
        const double g = kSqrt2 * r.node[i];
        const double s_t = s * std::exp(-0.5 * p.sigma_s * p.sigma_s * tau + p.sigma_s * st * g);
        const double a =
            hst * std::exp((p.drift_adj() - 0.5 * p.sigma_h * p.sigma_h) * tau + p.sigma_h * p.rho * st * g);
        double cond;
        if (beta < 1e-14) {
            cond = std::max(a - s_t, 0.0);
        } else {
            const double dm = std::log(a / s_t) / beta;
            cond = a * std::exp(0.5 * beta * beta) * normal_cdf(dm + beta) - s_t * normal_cdf(dm);
        }
        acc += r.weight[i] * cond;
    }
    return acc / std::sqrt(std::acos(-1.0));
}


// Grid time for a (level, index) pair, bounds-checked: callers may ask for
// any stored point including the terminal one.
double grid_time(const GridFamily& family, int k, int i) {
    GridPtr g = family.grid(k);
    if (i < 0 || i > g->steps()) throw ConfigError("basis factory: time index out of range");
    return g->t[std::size_t(i)];
}

// Shared caching wrapper: one basis per (level, time index), same pointer for
// both fit roles so solvers can share a Gram matrix.
BasisFactory cached_factory(std::function<BasisPtr(int, int)> build) {
    struct State {
        std::mutex mu;
        std::map<std::pair<int, int>, BasisPtr> cache;
    };
    auto state = std::make_shared<State>();
    return [state, build = std::move(build)](int k, int i, FitRole) -> BasisPtr {
        std::lock_guard<std::mutex> lock(state->mu);
        auto key = std::make_pair(k, i);
        auto it = state->cache.find(key);
        if (it != state->cache.end()) return it->second;
        BasisPtr b = build(k, i);
        state->cache.emplace(key, b);
        return b;
    };
}

// Equiprobable marginal cells of a geometric model at time t: per-axis
// breakpoints at exp-transformed normal quantiles, edge cells unbounded.
BasisPtr geometric_quantile_cells(const Model& model, double t, int cells) {
    if (t <= 0.0) return make_constant_basis(model.d);
    HypercubeSpec spec;
    spec.breakpoints.resize(std::size_t(model.d));
    for (int a = 0; a < model.d; ++a) {
        const double m = (model.mu[std::size_t(a)] - 0.5 * model.lam2[std::size_t(a)]) * t;
        const double sd = std::sqrt(model.lam2[std::size_t(a)] * t);
        auto& bp = spec.breakpoints[std::size_t(a)];
        bp.reserve(std::size_t(cells - 1));
        for (int j = 1; j < cells; ++j)
            bp.push_back(model.x0[std::size_t(a)] * std::exp(m + sd * normal_icdf(double(j) / cells)));
    }
    return make_hypercube_basis(std::move(spec));
}

} // namespace

// ---------------------------------------------------------------------------
// Problems.

ProblemWithOracle sine_problem() {
    ProblemWithOracle pw;
    Problem& p = pw.problem;
    p.name = "sine";
    p.model = brownian_model(1, {0.0});
    p.T = 1.0;
    p.phi = [](const double* x) { return std::sin(x[0]); };
    p.c_phi = 1.0; // sup |sin|
    p.c_x = 1.0;   // sup |cos(x) e^{-(T-t)/2}|
    const double T = p.T;

    pw.closed.kind = OracleKind::closed_form;
    pw.closed.q = 1;
    pw.closed.y = [T](double t, const double* x) { return std::sin(x[0]) * std::exp(-0.5 * (T - t)); };
    pw.closed.z = [T](double t, const double* x, double* out) {
        out[0] = std::cos(x[0]) * std::exp(-0.5 * (T - t));
    };

    pw.brute.kind = OracleKind::brute_force;
    pw.brute.q = 1;
    pw.brute.y = [T](double t, const double* x) {
        const auto& r = gauss_hermite(64);
        const double s = std::sqrt(2.0 * std::max(T - t, 0.0));
        double acc = 0.0;
        for (std::size_t i = 0; i < r.node.size(); ++i)
            acc += r.weight[i] * std::sin(x[0] + s * r.node[i]);
        return acc / std::sqrt(std::acos(-1.0));
    };
    pw.brute.z = [T](double t, const double* x, double* out) {
        const auto& r = gauss_hermite(64);
        const double s = std::sqrt(2.0 * std::max(T - t, 0.0));
        double acc = 0.0;
        for (std::size_t i = 0; i < r.node.size(); ++i)
            acc += r.weight[i] * std::cos(x[0] + s * r.node[i]);
        out[0] = acc / std::sqrt(std::acos(-1.0));
    };
    return pw;
}

ProblemWithOracle product_problem() {
    ProblemWithOracle pw;
    Problem& p = pw.problem;
    p.name = "product";
    p.model = brownian_model(3, {0.0, 0.0, 0.0});
    p.T = 1.0;
    p.phi = [](const double* x) { return x[0] * x[1] * x[2]; };
    const double T = p.T;

    // E prod (x_i + W_i) factorises over independent coordinates, so the
    // value is the running product and each gradient drops one factor.
    pw.closed.kind = OracleKind::closed_form;
    pw.closed.q = 3;
    pw.closed.y = [](double, const double* x) { return x[0] * x[1] * x[2]; };
    pw.closed.z = [](double, const double* x, double* out) {
        out[0] = x[1] * x[2];
        out[1] = x[0] * x[2];
        out[2] = x[0] * x[1];
    };

    // Full tensor quadrature of the 3-d transition law; no independence
    // factorisation, so it cross-checks the closed form honestly.
    pw.brute.kind = OracleKind::brute_force;
    pw.brute.q = 3;
    pw.brute.y = [T](double t, const double* x) {
        const auto& r = gauss_hermite(16);
        const int n = static_cast<int>(r.node.size());
        const double s = std::sqrt(2.0 * std::max(T - t, 0.0));
        double acc = 0.0;
        for (int a = 0; a < n; ++a)
            for (int b = 0; b < n; ++b)
                for (int c = 0; c < n; ++c)
                    acc += r.weight[std::size_t(a)] * r.weight[std::size_t(b)] * r.weight[std::size_t(c)] *
                           (x[0] + s * r.node[std::size_t(a)]) * (x[1] + s * r.node[std::size_t(b)]) *
                           (x[2] + s * r.node[std::size_t(c)]);
        const double pi = std::acos(-1.0);
        return acc / (pi * std::sqrt(pi));
    };
    pw.brute.z = [T](double t, const double* x, double* out) {
        const auto& r = gauss_hermite(16);
        const int n = static_cast<int>(r.node.size());
        const double s = std::sqrt(2.0 * std::max(T - t, 0.0));
        const double pi = std::acos(-1.0);
        for (int drop = 0; drop < 3; ++drop) {
            const int j0 = drop == 0 ? 1 : 0;
            const int j1 = drop == 2 ? 1 : 2;
            double acc = 0.0;
            for (int a = 0; a < n; ++a)
                for (int b = 0; b < n; ++b)
                    acc += r.weight[std::size_t(a)] * r.weight[std::size_t(b)] *
                           (x[j0] + s * r.node[std::size_t(a)]) * (x[j1] + s * r.node[std::size_t(b)]);
            out[drop] = acc / pi;
        }
    };
    return pw;
}

ProblemWithOracle gooddeal_problem() {
    const GoodDealParams gd;
    ProblemWithOracle pw;
    Problem& p = pw.problem;
    p.name = "gooddeal";
    p.model = geometric_model({1.0, 1.0}, {0.0, gd.gamma}, {gd.sigma_s, gd.sigma_h},
                              {1.0, 0.0, gd.rho, gd.rho_perp()}, 2);
    p.T = 1.0;
    p.phi = [](const double* x) { return std::max(x[1] - x[0], 0.0); };
    p.f = [gd](double, const double*, double, const double* z) { return gd.h * std::abs(z[1]); };
    p.lipschitz_f = gd.h;
    const double T = p.T;

    pw.closed.kind = OracleKind::closed_form;
    pw.closed.q = 2;
    pw.closed.y = [gd, T](double t, const double* x) { return gooddeal_value(gd, T - t, x[0], x[1]); };
    pw.closed.z = [gd, T](double t, const double* x, double* out) {
        gooddeal_gradient(gd, T - t, x[0], x[1], out);
    };

    pw.brute.kind = OracleKind::brute_force;
    pw.brute.q = 2;
    pw.brute.y = [gd, T](double t, const double* x) { return gooddeal_value_quad(gd, T - t, x[0], x[1]); };
    pw.brute.z = [gd, T](double t, const double* x, double* out) {
        // Finite-difference state gradient of the quadrature value, mapped
        // through the diffusion: z_c = sum_a du/dx_a x_a loading[a, c].
        const double tau = T - t;
        double grad[2];
        for (int a = 0; a < 2; ++a) {
            const double hh = 1e-5 * (1.0 + std::abs(x[a]));
            double xp[2] = {x[0], x[1]}, xm[2] = {x[0], x[1]};
            xp[a] += hh;
            xm[a] -= hh;
            grad[a] = (gooddeal_value_quad(gd, tau, xp[0], xp[1]) -
                       gooddeal_value_quad(gd, tau, xm[0], xm[1])) /
                      (2.0 * hh);
        }
        out[0] = grad[0] * x[0] * gd.sigma_s + grad[1] * x[1] * gd.sigma_h * gd.rho;
        out[1] = grad[1] * x[1] * gd.sigma_h * gd.rho_perp();
    };
    return pw;
}

ProblemWithOracle problem_by_name(const std::string& name) {
    if (name == "sine") return sine_problem();
    if (name == "product") return product_problem();
    if (name == "gooddeal") return gooddeal_problem();
    throw ConfigError("unknown problem '" + name + "' (expected sine, product, or gooddeal)");
}

// ---------------------------------------------------------------------------
// Basis factories.

BasisFactory hermite_bases(const GridFamily& family, int degree) {
    if (degree < 0) throw ConfigError("hermite degree must be >= 0");
    return cached_factory(
        [family, degree](int k, int i) { return make_hermite_basis(degree, grid_time(family, k, i)); });
}

BasisFactory brownian_cell_bases(const GridFamily& family, int d, int cells_per_dim) {
    if (d < 1 || cells_per_dim < 1) throw ConfigError("cell basis needs d >= 1 and cells >= 1");
    return cached_factory([family, d, cells_per_dim](int k, int i) -> BasisPtr {
        const double t = grid_time(family, k, i);
        if (t <= 0.0) return make_constant_basis(d);
        const double st = std::sqrt(t);
        HypercubeSpec spec;
        spec.breakpoints.resize(std::size_t(d));
        for (int a = 0; a < d; ++a) {
            auto& bp = spec.breakpoints[std::size_t(a)];
            bp.reserve(std::size_t(cells_per_dim - 1));
            for (int j = 1; j < cells_per_dim; ++j)
                bp.push_back(st * normal_icdf(double(j) / cells_per_dim));
        }
        return make_hypercube_basis(std::move(spec));
    });
}

BasisFactory brownian_affine_bases(const GridFamily& family, int d, int cells_per_dim,
                                   double mass_cut) {
    if (d < 1 || cells_per_dim < 1) throw ConfigError("affine basis needs d >= 1 and cells >= 1");
    if (!(mass_cut > 0.0 && mass_cut < 0.5)) throw ConfigError("mass_cut must lie in (0, 0.5)");
    return cached_factory([family, d, cells_per_dim, mass_cut](int k, int i) -> BasisPtr {
        const double t = grid_time(family, k, i);
        if (t <= 0.0) return make_constant_basis(d);
        const double st = std::sqrt(t);
        HypercubeSpec spec;
        spec.breakpoints.resize(std::size_t(d));
        spec.box_lo.resize(std::size_t(d));
        spec.box_hi.resize(std::size_t(d));
        for (int a = 0; a < d; ++a) {
            auto& bp = spec.breakpoints[std::size_t(a)];
            bp.reserve(std::size_t(cells_per_dim - 1));
            for (int j = 1; j < cells_per_dim; ++j)
                bp.push_back(st * normal_icdf(double(j) / cells_per_dim));
            spec.box_lo[std::size_t(a)] = st * normal_icdf(mass_cut);
            spec.box_hi[std::size_t(a)] = st * normal_icdf(1.0 - mass_cut);
        }
        return make_local_affine_basis(std::move(spec));
    });
}

BasisFactory geometric_cell_bases(const Model& model, const GridFamily& family,
                                  int cells_per_dim, double mass_cut) {
    if (model.kind != Model::Kind::geometric)
        throw ConfigError("geometric_cell_bases needs a geometric model");
    if (cells_per_dim < 1) throw ConfigError("cell basis needs cells >= 1");
    if (!(mass_cut > 0.0 && mass_cut < 0.5)) throw ConfigError("mass_cut must lie in (0, 0.5)");
    return cached_factory([model, family, cells_per_dim, mass_cut](int k, int i) -> BasisPtr {
        const double t = grid_time(family, k, i);
        if (t <= 0.0) return make_constant_basis(model.d);
        HypercubeSpec spec;
        spec.breakpoints.resize(std::size_t(model.d));
        for (int a = 0; a < model.d; ++a) {
            const double m = (model.mu[std::size_t(a)] - 0.5 * model.lam2[std::size_t(a)]) * t;
            const double sd = std::sqrt(model.lam2[std::size_t(a)] * t);
            const double x0 = model.x0[std::size_t(a)];
            const double lo = x0 * std::exp(m + sd * normal_icdf(mass_cut));
            const double hi = x0 * std::exp(m + sd * normal_icdf(1.0 - mass_cut));
            auto& bp = spec.breakpoints[std::size_t(a)];
            bp.reserve(std::size_t(cells_per_dim - 1));
            for (int j = 1; j < cells_per_dim; ++j)
                bp.push_back(lo + (hi - lo) * double(j) / cells_per_dim);
        }
        return make_hypercube_basis(std::move(spec));
    });
}

// ---------------------------------------------------------------------------
// Oracle cross-validation.

OracleCheck validate_oracles(const ProblemWithOracle& pw, int points, std::uint64_t seed) {
    const Model& model = pw.problem.model;
    const double T = pw.problem.T;
    const int d = model.d, q = pw.closed.q;
    if (q != pw.brute.q) throw ConfigError("oracles disagree on gradient dimension");
    OracleCheck chk;
    chk.points = points;
    const std::size_t ud = std::size_t(d), uq = std::size_t(q);
    std::vector<double> x(ud), xp(ud), xm(ud);
    std::vector<double> zc(uq), zb(uq), zfd(uq);
    std::vector<double> grad(ud);
    const std::uint64_t tcloud = rng::cloud_id(rng::Domain::test, 7, 0);
    const std::uint64_t xcloud = rng::cloud_id(rng::Domain::test, 7, 1);
    for (int j = 0; j < points; ++j) {
        const double u = rng::uniform01(seed, tcloud, std::uint32_t(j), rng::pack(rng::Stream::aux, 0, 0));
        const double t = T * (0.05 + 0.9 * u);
        fill_marginal(model, t, seed, xcloud, std::size_t(j), 1, x.data());

        const double yc = pw.closed.y(t, x.data());
        const double yb = pw.brute.y(t, x.data());
        chk.max_rel_y = std::max(chk.max_rel_y, std::abs(yc - yb) / std::max(std::abs(yb), 1e-8));

        pw.closed.z(t, x.data(), zc.data());
        pw.brute.z(t, x.data(), zb.data());
        double nd = 0.0, nb = 0.0, nc = 0.0;
        for (int c = 0; c < q; ++c) {
            nd += (zc[std::size_t(c)] - zb[std::size_t(c)]) * (zc[std::size_t(c)] - zb[std::size_t(c)]);
            nb += zb[std::size_t(c)] * zb[std::size_t(c)];
            nc += zc[std::size_t(c)] * zc[std::size_t(c)];
        }
        chk.max_rel_z = std::max(chk.max_rel_z, std::sqrt(nd) / std::max(std::sqrt(nb), 1e-8));

        // Finite differences of the closed value, mapped through the diffusion.
        for (int a = 0; a < d; ++a) {
            const double hh = 1e-5 * (1.0 + std::abs(x[std::size_t(a)]));
            xp = x;
            xm = x;
            xp[std::size_t(a)] += hh;
            xm[std::size_t(a)] -= hh;
            grad[std::size_t(a)] = (pw.closed.y(t, xp.data()) - pw.closed.y(t, xm.data())) / (2.0 * hh);
        }
        for (int c = 0; c < q; ++c) {
            double acc = 0.0;
            if (model.kind == Model::Kind::geometric) {
                for (int a = 0; a < d; ++a)
                    acc += grad[std::size_t(a)] * x[std::size_t(a)] *
                           model.loading[std::size_t(a) * std::size_t(q) + std::size_t(c)];
            } else {
                acc = grad[std::size_t(c)]; // unit diffusion
            }
            zfd[std::size_t(c)] = acc;
        }
        double nfd = 0.0;
        for (int c = 0; c < q; ++c)
            nfd += (zc[std::size_t(c)] - zfd[std::size_t(c)]) * (zc[std::size_t(c)] - zfd[std::size_t(c)]);
        chk.max_rel_fd = std::max(chk.max_rel_fd, std::sqrt(nfd) / std::max(std::sqrt(nc), 1e-8));
    }
    return chk;
}

double martingale_defect(const ProblemWithOracle& pw, int k, std::size_t paths,
                         std::uint64_t seed) {
    const Model& model = pw.problem.model;
    GridFamily family(pw.problem.T, 1.0);
    GridPtr grid = family.grid(k);
    const int N = grid->steps(), d = model.d;
    const std::size_t nslots = std::size_t(par::threads());
    std::vector<std::vector<double>> ssum(nslots), ssq(nslots);
    for (auto& v : ssum) v.assign(std::size_t(N), 0.0);
    for (auto& v : ssq) v.assign(std::size_t(N), 0.0);
    std::vector<double> sum(std::size_t(N), 0.0), sq(std::size_t(N), 0.0);

    CloudKey key{seed, rng::cloud_id(rng::Domain::test, 8, std::uint64_t(k))};
    stream_paths(
        model, *grid, paths, key,
        [&](std::size_t slot, std::size_t, std::size_t, std::size_t n, const double* states) {
            auto& ls = ssum[slot];
            auto& lq = ssq[slot];
            std::fill(ls.begin(), ls.end(), 0.0);
            std::fill(lq.begin(), lq.end(), 0.0);
            for (int i = 0; i < N; ++i) {
                const double* xi = states + std::size_t(i) * n * std::size_t(d);
                const double* xn = states + std::size_t(i + 1) * n * std::size_t(d);
                const double ti = grid->t[std::size_t(i)], tn = grid->t[std::size_t(i) + 1];
                for (std::size_t m = 0; m < n; ++m) {
                    const double delta = pw.closed.y(tn, xn + m * std::size_t(d)) -
                                         pw.closed.y(ti, xi + m * std::size_t(d));
                    ls[std::size_t(i)] += delta;
                    lq[std::size_t(i)] += delta * delta;
                }
            }
        },
        [&](std::size_t slot, std::size_t) {
            for (int i = 0; i < N; ++i) {
                sum[std::size_t(i)] += ssum[slot][std::size_t(i)];
                sq[std::size_t(i)] += ssq[slot][std::size_t(i)];
            }
            std::fill(ssum[slot].begin(), ssum[slot].end(), 0.0);
            std::fill(ssq[slot].begin(), ssq[slot].end(), 0.0);
        });

    const double mm = double(paths);
    double worst = 0.0;
    for (int i = 0; i < N; ++i) {
        const double mean = sum[std::size_t(i)] / mm;
        const double var = std::max(sq[std::size_t(i)] - mm * mean * mean, 0.0) / (mm - 1.0);
        const double se = std::sqrt(var / mm);
        if (se <= 0.0) continue; // degenerate step: mean is exact
        worst = std::max(worst, std::abs(mean) / (4.0 * se));
    }
    return worst;
}

// ---------------------------------------------------------------------------
// Numerical reference for the gooddeal problem.

NumericalReference build_gooddeal_reference(int k, std::size_t paths, int iterations,
                                            std::uint64_t seed, std::size_t eval_paths,
                                            int value_cells, int gradient_cells) {
    if (k < 1 || k > kMaxLevel) throw ConfigError("reference level out of range");
    if (iterations < 1) throw ConfigError("reference needs at least one Picard pass");
    if (paths < 2 || eval_paths < 2) throw ConfigError("reference needs paths");
    if (value_cells < 1 || gradient_cells < 1) throw ConfigError("reference needs cells");

    ProblemWithOracle pw = gooddeal_problem();
    const Model& model = pw.problem.model;
    const int d = model.d, q = model.q, N = 1 << k;
    const double h_coeff = pw.problem.lipschitz_f;
    GridFamily family(pw.problem.T, 1.0);
    GridPtr grid = family.grid(k);

    const std::size_t un = std::size_t(N);
    std::vector<BasisPtr> by(un), bz(un);
    for (int i = 0; i < N; ++i) {
        by[std::size_t(i)] = geometric_quantile_cells(model, grid->t[std::size_t(i)], value_cells);
        bz[std::size_t(i)] = geometric_quantile_cells(model, grid->t[std::size_t(i)], gradient_cells);
    }

    NumericalReference ref;
    ref.k = k;
    ref.T = pw.problem.T;
    ref.paths = paths;
    ref.iterations = iterations;
    ref.seed = seed;
    ref.eval_paths = eval_paths;
    ref.eval_seed = seed;
    ref.value_cells = value_cells;
    ref.gradient_cells = gradient_cells;

    const CloudKey key{seed, rng::cloud_id(rng::Domain::reference, std::uint64_t(k), 0)};
    const std::size_t nslots = std::size_t(par::threads());
    const std::size_t bs = par::block_size(paths);

    std::vector<Fitted> yfit(un), zfit(un);
    bool have_z = false; // first pass runs with a zero driver
    double y0 = 0.0;

    for (int pass = 0; pass < iterations; ++pass) {
        std::vector<FitAccumulator> accY, accZ;
        accY.reserve(std::size_t(N));
        accZ.reserve(std::size_t(N));
        for (int i = 0; i < N; ++i) {
            accY.emplace_back(by[std::size_t(i)], 1);
            accZ.emplace_back(bz[std::size_t(i)], q);
        }
        std::vector<std::vector<double>> sdw(nslots), stail(nslots), srespz(nslots);
        for (auto& v : sdw) v.resize(bs * std::size_t(q));
        for (auto& v : stail) v.resize(bs);
        for (auto& v : srespz) v.resize(bs * std::size_t(q));

        stream_paths(
            model, *grid, paths, key,
            [&](std::size_t slot, std::size_t, std::size_t m0, std::size_t n, const double* states) {
                double* dw = sdw[slot].data();
                double* tail = stail[slot].data();
                double* respz = srespz[slot].data();
                double zv[8];
                const double* xN = states + std::size_t(N) * n * std::size_t(d);
                for (std::size_t m = 0; m < n; ++m) tail[m] = pw.problem.phi(xN + m * std::size_t(d));
                for (int i = N - 1; i >= 0; --i) {
                    const double* xi = states + std::size_t(i) * n * std::size_t(d);
                    const double dti = grid->dt(i);
                    fill_increments(key.seed, key.id, *grid, i, q, m0, n, dw);
                    for (std::size_t m = 0; m < n; ++m)
                        for (int c = 0; c < q; ++c)
                            respz[m * std::size_t(q) + std::size_t(c)] =
                                tail[m] * dw[m * std::size_t(q) + std::size_t(c)] / dti;
                    accZ[std::size_t(i)].compute(slot, xi, respz, n);
                    if (have_z) {
                        const Fitted& zprev = zfit[std::size_t(i)];
                        for (std::size_t m = 0; m < n; ++m) {
                            zprev.eval(xi + m * std::size_t(d), zv);
                            tail[m] += h_coeff * std::abs(zv[1]) * dti;
                        }
                    }
                    accY[std::size_t(i)].compute(slot, xi, tail, n);
                }
            },
            [&](std::size_t slot, std::size_t) {
                for (int i = 0; i < N; ++i) {
                    accY[std::size_t(i)].commit(slot);
                    accZ[std::size_t(i)].commit(slot);
                }
            });

        for (int i = 0; i < N; ++i) {
            yfit[std::size_t(i)] = accY[std::size_t(i)].solve();
            zfit[std::size_t(i)] = accZ[std::size_t(i)].solve();
        }
        have_z = true;
        const double y0_pass = yfit[0].eval1(model.x0.data());
        if (pass > 0) ref.deltas.push_back(std::abs(y0_pass - y0));
        y0 = y0_pass;
    }

    ref.y0 = y0;
    ref.z0.assign(std::size_t(q), 0.0);
    zfit[0].eval(model.x0.data(), ref.z0.data());

    // Cloud averages of the final fits on fresh marginal samples.
    const std::size_t chunk = 65536;
    std::vector<double> xs(chunk * std::size_t(d));
    ref.rows.resize(std::size_t(N));
    for (int i = 0; i < N; ++i) {
        ReferenceRow row;
        row.i = i;
        row.t = grid->t[std::size_t(i)];
        row.mean_z.assign(std::size_t(q), 0.0);
        double sy = 0.0, sabs = 0.0, sneg = 0.0;
        std::vector<double> szs(std::size_t(q), 0.0);
        double zv[8];
        const std::uint64_t mcloud =
            rng::cloud_id(rng::Domain::reference, std::uint64_t(k), std::uint64_t(i), 1);
        for (std::size_t m0 = 0; m0 < eval_paths; m0 += chunk) {
            const std::size_t n = std::min(chunk, eval_paths - m0);
            fill_marginal(model, row.t, ref.eval_seed, mcloud, m0, n, xs.data());
            for (std::size_t m = 0; m < n; ++m) {
                const double* x = xs.data() + m * std::size_t(d);
                sy += yfit[std::size_t(i)].eval1(x);
                zfit[std::size_t(i)].eval(x, zv);
                for (int c = 0; c < q; ++c) szs[std::size_t(c)] += zv[c];
                sabs += std::abs(zv[1]);
                sneg += std::max(-zv[1], 0.0);
            }
        }
        const double mm = double(eval_paths);
        row.mean_y = sy / mm;
        for (int c = 0; c < q; ++c) row.mean_z[std::size_t(c)] = szs[std::size_t(c)] / mm;
        row.mean_abs_z2 = sabs / mm;
        row.mean_neg_z2 = sneg / mm;
        ref.rows[std::size_t(i)] = std::move(row);
    }
    return ref;
}

// ---------------------------------------------------------------------------
// CSV round trip.

namespace {

std::string fmt17(double v) {
    char buf[40];
    std::snprintf(buf, sizeof buf, "%.17g", v);
    return buf;
}

std::vector<std::string> split_csv(const std::string& line) {
    std::vector<std::string> out;
    std::string cur;
    for (char ch : line) {
        if (ch == ',') {
            out.push_back(cur);
            cur.clear();
        } else if (ch != '\r') {
            cur += ch;
        }
    }
    out.push_back(cur);
    return out;
}

double parse_double(const std::string& s, const std::string& what) {
    try {
        std::size_t pos = 0;
        const double v = std::stod(s, &pos);
        if (pos != s.size()) throw std::invalid_argument(s);
        return v;
    } catch (const std::exception&) {
        throw ConfigError("reference file: bad number '" + s + "' in " + what);
    }
}

} // namespace

void save_reference(const NumericalReference& ref, const std::string& path) {
    const std::filesystem::path fp(path);
    if (fp.has_parent_path()) {
        std::error_code ec;
        std::filesystem::create_directories(fp.parent_path(), ec);
        if (ec)
            throw ConfigError("cannot create directory '" + fp.parent_path().string() +
                              "': " + ec.message());
    }
    std::ofstream out(path);
    if (!out) throw ConfigError("cannot open reference file for writing: " + path);
    const int q = ref.rows.empty() ? int(ref.z0.size()) : int(ref.rows.front().mean_z.size());
    out << "key,value\n";
    out << "kind,gooddeal-reference\n";
    out << "k," << ref.k << "\n";
    out << "T," << fmt17(ref.T) << "\n";
    out << "paths," << ref.paths << "\n";
    out << "iterations," << ref.iterations << "\n";
    out << "seed," << ref.seed << "\n";
    out << "eval_paths," << ref.eval_paths << "\n";
    out << "eval_seed," << ref.eval_seed << "\n";
    out << "value_cells," << ref.value_cells << "\n";
    out << "gradient_cells," << ref.gradient_cells << "\n";
    out << "y0," << fmt17(ref.y0) << "\n";
    for (double v : ref.z0) out << "z0," << fmt17(v) << "\n";
    for (double v : ref.deltas) out << "delta," << fmt17(v) << "\n";
    out << "\n";
    out << "i,t,mean_y";
    for (int c = 0; c < q; ++c) out << ",mean_z_" << (c + 1);
    out << ",mean_abs_z2,mean_neg_z2\n";
    for (const ReferenceRow& row : ref.rows) {
        out << row.i << "," << fmt17(row.t) << "," << fmt17(row.mean_y);
        for (double v : row.mean_z) out << "," << fmt17(v);
        out << "," << fmt17(row.mean_abs_z2) << "," << fmt17(row.mean_neg_z2) << "\n";
    }
    if (!out) throw ConfigError("failed writing reference file: " + path);
}

NumericalReference load_reference(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot open reference file: " + path);
    NumericalReference ref;
    std::string line;
    bool saw_kind = false;
    // Metadata block up to the blank line.
    while (std::getline(in, line)) {
        if (line.empty() || line == "\r") break;
        const auto f = split_csv(line);
        if (f.size() != 2) throw ConfigError("reference file: bad metadata line '" + line + "'");
        const std::string& kkey = f[0];
        const std::string& val = f[1];
        if (kkey == "key") continue; // header
        if (kkey == "kind") {
            if (val != "gooddeal-reference") throw ConfigError("reference file: unexpected kind " + val);
            saw_kind = true;
        } else if (kkey == "k") {
            ref.k = int(parse_double(val, "k"));
        } else if (kkey == "T") {
            ref.T = parse_double(val, "T");
        } else if (kkey == "paths") {
            ref.paths = std::size_t(parse_double(val, "paths"));
        } else if (kkey == "iterations") {
            ref.iterations = int(parse_double(val, "iterations"));
        } else if (kkey == "seed") {
            ref.seed = std::uint64_t(parse_double(val, "seed"));
        } else if (kkey == "eval_paths") {
            ref.eval_paths = std::size_t(parse_double(val, "eval_paths"));
        } else if (kkey == "eval_seed") {
            ref.eval_seed = std::uint64_t(parse_double(val, "eval_seed"));
        } else if (kkey == "value_cells") {
            ref.value_cells = int(parse_double(val, "value_cells"));
        } else if (kkey == "gradient_cells") {
            ref.gradient_cells = int(parse_double(val, "gradient_cells"));
        } else if (kkey == "y0") {
            ref.y0 = parse_double(val, "y0");
        } else if (kkey == "z0") {
            ref.z0.push_back(parse_double(val, "z0"));
        } else if (kkey == "delta") {
            ref.deltas.push_back(parse_double(val, "delta"));
        } else {
            throw ConfigError("reference file: unknown metadata key '" + kkey + "'");
        }
    }
    if (!saw_kind) throw ConfigError("reference file: missing kind marker: " + path);
    if (ref.k < 1 || ref.k > kMaxLevel) throw ConfigError("reference file: bad level");
    // Row table.
    if (!std::getline(in, line)) throw ConfigError("reference file: missing row header");
    const auto header = split_csv(line);
    if (header.size() < 6 || header[0] != "i" || header[1] != "t")
        throw ConfigError("reference file: bad row header '" + line + "'");
    const int q = int(header.size()) - 5;
    while (std::getline(in, line)) {
        if (line.empty() || line == "\r") continue;
        const auto f = split_csv(line);
        if (int(f.size()) != 5 + q) throw ConfigError("reference file: bad row '" + line + "'");
        ReferenceRow row;
        row.i = int(parse_double(f[0], "row index"));
        row.t = parse_double(f[1], "row time");
        row.mean_y = parse_double(f[2], "mean_y");
        row.mean_z.resize(std::size_t(q));
        for (int c = 0; c < q; ++c)
            row.mean_z[std::size_t(c)] = parse_double(f[std::size_t(3 + c)], "mean_z");
        row.mean_abs_z2 = parse_double(f[std::size_t(3 + q)], "mean_abs_z2");
        row.mean_neg_z2 = parse_double(f[std::size_t(4 + q)], "mean_neg_z2");
        ref.rows.push_back(std::move(row));
    }
    if (int(ref.rows.size()) != (1 << ref.k))
        throw ConfigError("reference file: row count does not match the level");
    for (int i = 0; i < int(ref.rows.size()); ++i)
        if (ref.rows[std::size_t(i)].i != i)
            throw ConfigError("reference file: rows out of order");
    return ref;
}

// ---------------------------------------------------------------------------
// Agreement between the closed form and the numerical reference.

namespace {

// Cloud means of the closed-form value/gradient over the same regenerated
// marginal samples the reference aggregates used (paired comparison).
void closed_means(const NumericalReference& ref, const ProblemWithOracle& pw,
                  std::vector<double>& my, std::vector<std::vector<double>>& mz) {
    const Model& model = pw.problem.model;
    const int d = model.d, q = pw.closed.q, N = 1 << ref.k;
    GridFamily family(ref.T, 1.0);
    GridPtr grid = family.grid(ref.k);
    my.assign(std::size_t(N), 0.0);
    mz.assign(std::size_t(q), std::vector<double>(std::size_t(N), 0.0));
    const std::size_t chunk = 65536;
    std::vector<double> xs(chunk * std::size_t(d));
    const std::size_t uq = std::size_t(q);
    std::vector<double> zv(uq);
    for (int i = 0; i < N; ++i) {
        const double t = grid->t[std::size_t(i)];
        const std::uint64_t mcloud =
            rng::cloud_id(rng::Domain::reference, std::uint64_t(ref.k), std::uint64_t(i), 1);
        double sy = 0.0;
        std::vector<double> sz(std::size_t(q), 0.0);
        for (std::size_t m0 = 0; m0 < ref.eval_paths; m0 += chunk) {
            const std::size_t n = std::min(chunk, ref.eval_paths - m0);
            fill_marginal(model, t, ref.eval_seed, mcloud, m0, n, xs.data());
            for (std::size_t m = 0; m < n; ++m) {
                const double* x = xs.data() + m * std::size_t(d);
                sy += pw.closed.y(t, x);
                pw.closed.z(t, x, zv.data());
                for (int c = 0; c < q; ++c) sz[std::size_t(c)] += zv[std::size_t(c)];
            }
        }
        const double mm = double(ref.eval_paths);
        my[std::size_t(i)] = sy / mm;
        for (int c = 0; c < q; ++c) mz[std::size_t(c)][std::size_t(i)] = sz[std::size_t(c)] / mm;
    }
}

} // namespace

OracleStatus gooddeal_agreement(const NumericalReference& coarse, const NumericalReference& fine,
                                const ProblemWithOracle& pw, double tol) {
    if (fine.k != coarse.k + 1)
        throw ConfigError("agreement needs two references one level apart (fine = coarse + 1)");
    if (fine.T != coarse.T) throw ConfigError("agreement references disagree on the horizon");
    const int q = pw.closed.q;
    if (int(fine.rows.size()) != (1 << fine.k) || int(coarse.rows.size()) != (1 << coarse.k))
        throw ConfigError("agreement references have incomplete rows");

    OracleStatus st;
    st.tol = tol;
    const Model& model = pw.problem.model;
    const double y0c = pw.closed.y(0.0, model.x0.data());

    std::vector<double> myf, myc;
    std::vector<std::vector<double>> mzf, mzc;
    closed_means(fine, pw, myf, mzf);
    closed_means(coarse, pw, myc, mzc);

    // Richardson-extrapolated value at time 0.
    st.rel_y0 = std::abs((2.0 * fine.y0 - coarse.y0) / y0c - 1.0);

    // Paired per-time value gaps, extrapolated on the coarse grid's times.
    GridFamily family(fine.T, 1.0);
    GridPtr gf = family.grid(fine.k);
    GridPtr gc = family.grid(coarse.k);
    const int Nc = 1 << coarse.k;
    for (int i = 0; i < Nc; ++i) {
        const double df = fine.rows[std::size_t(2 * i)].mean_y - myf[std::size_t(2 * i)];
        const double dc = coarse.rows[std::size_t(i)].mean_y - myc[std::size_t(i)];
        const double gap = 2.0 * df - dc;
        const double den = std::max(std::abs(myf[std::size_t(2 * i)]), 0.1 * std::abs(y0c));
        st.max_rel_mean_y = std::max(st.max_rel_mean_y, std::abs(gap) / den);
    }

    // dt-integrated gradient gaps per component.
    for (int c = 0; c < q; ++c) {
        double gap_f = 0.0, gap_c = 0.0, closed_int = 0.0;
        for (int i = 0; i < (1 << fine.k); ++i) {
            const double dt = gf->dt(i);
            gap_f += dt * (fine.rows[std::size_t(i)].mean_z[std::size_t(c)] - mzf[std::size_t(c)][std::size_t(i)]);
            closed_int += dt * mzf[std::size_t(c)][std::size_t(i)];
        }
        for (int i = 0; i < Nc; ++i)
            gap_c += gc->dt(i) *
                     (coarse.rows[std::size_t(i)].mean_z[std::size_t(c)] - mzc[std::size_t(c)][std::size_t(i)]);
        const double gap = 2.0 * gap_f - gap_c;
        const double den = std::max(std::abs(closed_int), std::abs(y0c));
        st.max_rel_int_z = std::max(st.max_rel_int_z, std::abs(gap) / den);
    }

    // Sign mass of the fitted z_2 from the fine reference.
    double neg = 0.0, mag = 0.0;
    for (int i = 0; i < (1 << fine.k); ++i) {
        const double dt = gf->dt(i);
        neg += dt * fine.rows[std::size_t(i)].mean_neg_z2;
        mag += dt * fine.rows[std::size_t(i)].mean_abs_z2;
    }
    st.z2_negativity = mag > 0.0 ? neg / mag : 0.0;

    st.verified = st.rel_y0 <= tol && st.max_rel_mean_y <= tol && st.max_rel_int_z <= tol &&
                  st.z2_negativity <= 0.05;
    std::ostringstream msg;
    msg << (st.verified ? "verified" : "UNVERIFIED") << ": rel_y0=" << st.rel_y0
        << " max_rel_mean_y=" << st.max_rel_mean_y << " max_rel_int_z=" << st.max_rel_int_z
        << " z2_negativity=" << st.z2_negativity << " tol=" << tol;
    st.message = msg.str();
    return st;
}

} // namespace bsde
