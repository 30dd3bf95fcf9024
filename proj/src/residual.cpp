#include "bsde/residual.hpp"

#include "bsde/common.hpp"
#include "bsde/parallel.hpp"
#include "bsde/regression.hpp"
#include "bsde/rng.hpp"

#include <algorithm>
#include <cmath>
#include <memory>
#include <string>
#include <vector>

namespace bsde {
namespace {

double bound_of(const BoundFn& f, int k, int i) { return f ? f(k, i) : kInf; }

void log_fit(const SolveOptions& opt, int k, int i, FitRole role, const FitDiagnostics& d) {
    if (opt.fit_log) opt.fit_log->push_back({k, i, role, d});
}

// Expand a one-entry or per-time-point schedule to exactly N entries.
std::vector<std::size_t> expand_schedule(const Schedule& M, int N) {
    std::vector<std::size_t> out;
    if (M.size() == 1)
        out.assign(std::size_t(N), M[0]);
    else if (M.size() == std::size_t(N))
        out = M;
    else
        throw ConfigError("multistep schedule must have one entry or one per time point");
    for (std::size_t v : out)
        if (v == 0) throw ConfigError("multistep schedule entries must be positive");
    return out;
}

// The driver integrated over the cloud's steps strictly after i, started at
// the terminal value: O_{Y,i+1} along path m.  Fits at indices > i must be
// final; the value at the last index is the solution's terminal function.
double tail_response(const LevelSolution& sol, const TimePointCloud& cloud, int i,
                     std::size_t m, const StepDriver& driver, double* zbuf) {
    const TimeGrid& g = *sol.grid;
    const int N = g.steps();
    const int d = int(cloud.dim());
    const std::size_t off = m * std::size_t(d);
    double tail = sol.phi(cloud.state(N) + off);
    for (int j = i + 1; j < N; ++j) {
        const double* xj = cloud.state(j) + off;
        const double* xn = cloud.state(j + 1) + off;
        const double ynext = (j + 1 == N) ? sol.phi(xn) : sol.y[std::size_t(j) + 1].eval1(xn);
        sol.z[std::size_t(j)].eval(xj, zbuf);
        tail += driver(j, xj, xn, ynext, zbuf) * g.dt(j);
    }
    return tail;
}

// Both fits at time point i on that point's own cloud.  Gradient first: its
// responses are the tail scaled by the step's increment.  The value fit then
// adds the i-th driver term, evaluated with the just-fitted gradient.
void fit_time_point(const Model& model, int k, int i, std::size_t Mi, const StepDriver& driver,
                    const BasisFactory& bases, std::uint64_t seed, const SolveOptions& opt,
                    LevelSolution& sol) {
    const int d = model.d, q = model.q, N = sol.grid->steps();
    const double dti = sol.grid->dt(i);
    const CloudKey key{seed,
                       rng::cloud_id(rng::Domain::per_time, std::uint64_t(k), std::uint64_t(i))};
    const TimePointCloud cloud = TimePointCloud::simulate(model, sol.grid, i, Mi, key, opt.mode);

    check_budget(Mi * sizeof(double), "multistep tail responses (i=" + std::to_string(i) + ")");
    std::vector<double> tails(Mi);

    FitAccumulator accZ(bases(k, i, FitRole::gradient), q);
    par::ordered_blocks(
        Mi,
        [&](std::size_t slot, std::size_t, std::size_t b0, std::size_t b1) {
            const std::size_t n = b1 - b0;
            thread_local std::vector<double> dw, resp, zbuf;
            dw.resize(n * std::size_t(q));
            resp.resize(n * std::size_t(q));
            zbuf.resize(std::size_t(q));
            cloud.dw(i, b0, n, dw.data());
            for (std::size_t m = 0; m < n; ++m) {
                const double tail = tail_response(sol, cloud, i, b0 + m, driver, zbuf.data());
                tails[b0 + m] = tail;
                for (int c = 0; c < q; ++c)
                    resp[m * std::size_t(q) + std::size_t(c)] =
                        dw[m * std::size_t(q) + std::size_t(c)] * tail / dti;
            }
            accZ.compute(slot, cloud.state(i) + b0 * std::size_t(d), resp.data(), n);
        },
        [&](std::size_t slot, std::size_t) { accZ.commit(slot); });
    FitDiagnostics dZ;
    sol.z[std::size_t(i)] = accZ.solve(bound_of(opt.z_bound, k, i), &dZ);
    log_fit(opt, k, i, FitRole::gradient, dZ);

    FitAccumulator accY(bases(k, i, FitRole::value), 1);
    par::ordered_blocks(
        Mi,
        [&](std::size_t slot, std::size_t, std::size_t b0, std::size_t b1) {
            const std::size_t n = b1 - b0;
            thread_local std::vector<double> resp, zbuf;
            resp.resize(n);
            zbuf.resize(std::size_t(q));
            for (std::size_t m = 0; m < n; ++m) {
                const std::size_t off = (b0 + m) * std::size_t(d);
                const double* xi = cloud.state(i) + off;
                const double* xn = cloud.state(i + 1) + off;
                const double ynext =
                    (i + 1 == N) ? sol.phi(xn) : sol.y[std::size_t(i) + 1].eval1(xn);
                sol.z[std::size_t(i)].eval(xi, zbuf.data());
                resp[m] = tails[b0 + m] + driver(i, xi, xn, ynext, zbuf.data()) * dti;
            }
            accY.compute(slot, cloud.state(i) + b0 * std::size_t(d), resp.data(), n);
        },
        [&](std::size_t slot, std::size_t) { accY.commit(slot); });
    FitDiagnostics dY;
    sol.y[std::size_t(i)] = accY.solve(bound_of(opt.y_bound, k, i), &dY);
    log_fit(opt, k, i, FitRole::value, dY);
}

} // namespace

StepDriver proxy_driver(const Driver& f, const LevelSolution& proxy) {
    if (!f) throw ConfigError("proxy driver: driver is required");
    if (!proxy.grid || proxy.y.size() != std::size_t(proxy.grid->steps()))
        throw ConfigError("proxy driver: proxy solution is incomplete");
    auto p = std::make_shared<const LevelSolution>(proxy);
    return [f, p](int j, const double* xj, const double* xnext, double y, const double* z) {
        thread_local std::vector<double> zp;
        zp.resize(std::size_t(p->q));
        p->z_at(j, xj, zp.data());
        const double yp = p->y_at(j + 1, xnext);
        for (int c = 0; c < p->q; ++c) zp[std::size_t(c)] += z[c];
        return f(p->grid->t[std::size_t(j)], xj, yp + y, zp.data());
    };
}

StepDriver raw_driver(const Driver& f, GridPtr grid) {
    if (!f) throw ConfigError("raw driver: driver is required");
    if (!grid) throw ConfigError("raw driver: grid is required");
    return [f, grid](int j, const double* xj, const double*, double ynext, const double* zj) {
        return f(grid->t[std::size_t(j)], xj, ynext, zj);
    };
}

LevelSolution solve_multistep(const Model& model, const GridFamily& family, int k,
                              const Schedule& M, const TerminalFn& terminal,
                              const StepDriver& driver, const BasisFactory& bases,
                              std::uint64_t seed, const SolveOptions& opt) {
    if (!driver) throw ConfigError("multistep solve: driver is required");
    if (!bases) throw ConfigError("multistep solve: basis factory is required");
    GridPtr grid = family.grid(k);
    const int N = grid->steps();
    const std::vector<std::size_t> Ms = expand_schedule(M, N);

    LevelSolution sol;
    sol.k = k;
    sol.q = model.q;
    sol.grid = grid;
    sol.phi = terminal ? terminal : TerminalFn([](const double*) { return 0.0; });
    sol.y.resize(std::size_t(N));
    sol.z.resize(std::size_t(N));
    for (int i = N - 1; i >= 0; --i)
        fit_time_point(model, k, i, Ms[std::size_t(i)], driver, bases, seed, opt, sol);
    return sol;
}

LevelSolution solve_residual(const Model& model, const GridFamily& family, int k,
                             const Schedule& M, const Driver& f, const LevelSolution& proxy,
                             const BasisFactory& bases, std::uint64_t seed,
                             const SolveOptions& opt) {
    if (!f) throw ConfigError("residual solve: driver is required");
    GridPtr grid = family.grid(k);
    if (proxy.k != k || !proxy.grid || proxy.grid->t != grid->t)
        throw ConfigError("residual solve: proxy solution is on a different grid");
    if (proxy.q != model.q)
        throw ConfigError("residual solve: proxy solution has a different noise dimension");
    return solve_multistep(model, family, k, M, TerminalFn(), proxy_driver(f, proxy), bases,
                           seed, opt);
}

LevelSolution solve_lsmdp_full(const Model& model, const GridFamily& family, int k,
                               const Schedule& M, const TerminalFn& phi, const Driver& f,
                               const BasisFactory& bases, std::uint64_t seed,
                               const SolveOptions& opt) {
    if (!phi) throw ConfigError("full solve: terminal condition is required");
    return solve_multistep(model, family, k, M, phi, raw_driver(f, family.grid(k)), bases, seed,
                           opt);
}

void refit_time_point(const Model& model, int i, std::size_t M, const StepDriver& driver,
                      const BasisFactory& bases, std::uint64_t seed, LevelSolution& partial,
                      const SolveOptions& opt) {
    if (!driver) throw ConfigError("time-point refit: driver is required");
    if (!bases) throw ConfigError("time-point refit: basis factory is required");
    if (!partial.grid || !partial.phi) throw ConfigError("time-point refit: solution is incomplete");
    const int N = partial.grid->steps();
    if (i < 0 || i >= N) throw ConfigError("time-point refit: index out of range");
    if (partial.y.size() != std::size_t(N) || partial.z.size() != std::size_t(N))
        throw ConfigError("time-point refit: solution is incomplete");
    if (M == 0) throw ConfigError("time-point refit: path count must be positive");
    fit_time_point(model, partial.k, i, M, driver, bases, seed, opt, partial);
}

double SplitSolution::y_at(int i, const double* x) const {
    return linear.y_at(i, x) + residual.y_at(i, x);
}

void SplitSolution::z_at(int i, const double* x, double* out) const {
    linear.z_at(i, x, out);
    thread_local std::vector<double> buf;
    buf.resize(std::size_t(linear.q));
    residual.z_at(i, x, buf.data());
    for (int c = 0; c < linear.q; ++c) out[c] += buf[std::size_t(c)];
}

SplitSolution assemble_split(const LevelSolution& linear, const LevelSolution& residual) {
    if (!linear.grid || !residual.grid || linear.k != residual.k || linear.q != residual.q ||
        linear.grid->t != residual.grid->t)
        throw ConfigError("split assembly: parts are on different grids");
    return SplitSolution{linear, residual};
}

BoundFn residual_value_bound(const GridFamily& family, double c_x, double theta,
                             double theta_l) {
    if (!(c_x > 0.0)) throw ConfigError("residual value bound: scale must be positive");
    if (!(theta > 0.0) || theta > 1.0 || !(theta_l > 0.0) || theta_l > 1.0)
        throw ConfigError("residual value bound: exponents must be in (0, 1]");
    const double e = (theta_l + theta) / 2.0;
    return [family, c_x, e](int k, int i) {
        const TimeGrid& g = *family.grid(k);
        return c_x * std::pow(g.T - g.t[std::size_t(i)], e);
    };
}

BoundFn residual_gradient_bound(const GridFamily& family, double c_x, double theta,
                                double theta_l) {
    if (!(c_x > 0.0)) throw ConfigError("residual gradient bound: scale must be positive");
    if (!(theta > 0.0) || theta > 1.0 || !(theta_l > 0.0) || theta_l > 1.0)
        throw ConfigError("residual gradient bound: exponents must be in (0, 1]");
    const double e = (theta_l + theta) / 2.0;
    return [family, c_x, e](int k, int i) {
        const TimeGrid& g = *family.grid(k);
        return c_x * std::pow(g.T - g.t[std::size_t(i)], e) / g.dt(i);
    };
}

SmallnessReport smallness_report(const TimeGrid& g, int q, double l_f, double theta_l) {
    if (q < 1) throw ConfigError("smallness report: noise dimension must be >= 1");
    if (!(l_f >= 0.0)) throw ConfigError("smallness report: Lipschitz constant must be >= 0");
    const GridDiag diag = grid_diagnostics(g, theta_l);
    SmallnessReport r;
    r.c_pi = diag.C_pi;
    r.r_pi = diag.R_pi;
    r.lhs = diag.C_pi * l_f * l_f * std::max(diag.R_pi, 1.0);
    r.threshold =
        1.0 / (384.0 * (2.0 * q + (1.0 + g.T) * std::exp(g.T / 2.0)) * (1.0 + g.T));
    r.satisfied = r.lhs <= r.threshold;
    return r;
}

} // namespace bsde
