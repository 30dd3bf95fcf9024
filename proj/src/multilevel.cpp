#include "bsde/multilevel.hpp"

#include "bsde/common.hpp"
#include "bsde/parallel.hpp"

#include <cmath>
#include <cstring>

namespace bsde {

double LevelSolution::y_at(int i, const double* x) const {
    const int N = grid->steps();
    if (i == N) return phi(x);
    if (i < 0 || i > N) throw Error("level solution: time index out of range");
    return y[std::size_t(i)].eval1(x);
}

void LevelSolution::z_at(int i, const double* x, double* out) const {
    if (i < 0 || i >= grid->steps()) throw Error("level solution: gradient index out of range");
    z[std::size_t(i)].eval(x, out);
}

namespace {

constexpr int kMaxQ = 64;

double bound_of(const BoundFn& f, int k, int i) { return f ? f(k, i) : kInf; }

void log_fit(const SolveOptions& opt, int k, int i, FitRole role, const FitDiagnostics& d) {
    if (opt.fit_log) opt.fit_log->push_back({k, i, role, d});
}

// Deterministic blockwise sum/sum-of-squares tallies for the variance probe.
struct VarTally {
    std::vector<double> s1, s2;
    double S1 = 0, S2 = 0;
    explicit VarTally(std::size_t slots) : s1(slots, 0), s2(slots, 0) {}
    void set(std::size_t slot, const double* v, std::size_t n) {
        double a = 0, b = 0;
        for (std::size_t j = 0; j < n; ++j) {
            a += v[j];
            b += v[j] * v[j];
        }
        s1[slot] = a;
        s2[slot] = b;
    }
    void fold(std::size_t slot) {
        S1 += s1[slot];
        S2 += s2[slot];
    }
    double variance(std::size_t M) const {
        const double m = S1 / double(M);
        return S2 / double(M) - m * m;
    }
};

// Level 0: constant fits on a single-step cloud.  The value fit is the mean
// terminal value; the gradient fit is the mean of the terminal value times
// the scaled Brownian increment.
LevelSolution build_level0(const Model& model, const GridFamily& family, std::size_t M0,
                           const TerminalFn& phi, std::uint64_t seed, const SolveOptions& opt,
                           std::array<double, 2>* probe) {
    auto g = family.grid(0);
    const int d = model.d, q = model.q;
    const double T = g->T;
    CloudKey key{seed, rng::cloud_id(rng::Domain::level, 0)};
    auto cloud = LevelCloud::simulate(model, g, nullptr, M0, key, opt.mode);

    FitAccumulator acc(make_constant_basis(d), 1 + q);
    VarTally tally(std::size_t(par::threads()));
    par::ordered_blocks(
        M0,
        [&](std::size_t slot, std::size_t, std::size_t b0, std::size_t b1) {
            const std::size_t n = b1 - b0;
            thread_local std::vector<double> resp, dw, pv;
            if (resp.size() < n * std::size_t(1 + q)) resp.resize(n * std::size_t(1 + q));
            if (dw.size() < n * std::size_t(q)) dw.resize(n * std::size_t(q));
            if (pv.size() < n) pv.resize(n);
            const double* xT = cloud.state(1) + b0 * std::size_t(d);
            cloud.fine_dw(0, b0, n, dw.data());
            for (std::size_t j = 0; j < n; ++j) {
                const double p = phi(xT + j * std::size_t(d));
                pv[j] = p;
                resp[j * std::size_t(1 + q)] = p;
                for (int c = 0; c < q; ++c)
                    resp[j * std::size_t(1 + q) + 1 + std::size_t(c)] =
                        p * dw[j * std::size_t(q) + std::size_t(c)] / T;
            }
            acc.compute(slot, cloud.state(0) + b0 * std::size_t(d), resp.data(), n);
            if (probe) tally.set(slot, pv.data(), n);
        },
        [&](std::size_t slot, std::size_t) {
            acc.commit(slot);
            if (probe) tally.fold(slot);
        });

    LevelSolution sol;
    sol.k = 0;
    sol.q = q;
    sol.grid = g;
    sol.phi = phi;
    sol.y.resize(1);
    sol.z.resize(1);
    const Eigen::MatrixXd rhs = acc.rhs_t();
    FitDiagnostics dY, dZ;
    sol.y[0] = acc.solve_with_rhs(rhs.topRows(1), bound_of(opt.y_bound, 0, 0), &dY);
    sol.z[0] = acc.solve_with_rhs(rhs.bottomRows(q), bound_of(opt.z_bound, 0, 0), &dZ);
    log_fit(opt, 0, 0, FitRole::value, dY);
    log_fit(opt, 0, 0, FitRole::gradient, dZ);
    if (probe) {
        const double v = tally.variance(M0);
        *probe = {v, v}; // the level-0 response is the raw terminal value
    }
    return sol;
}

// Level k >= 1: backward sweep over the fine grid with the previous level's
// gradient fits as control variate.  The per-path control sum grows by one
// coarse term each time the fine index crosses a coarse grid point.
LevelSolution build_level(const Model& model, const GridFamily& family, int k, std::size_t Mk,
                          const TerminalFn& phi, const BasisFactory& bases, std::uint64_t seed,
                          const LevelSolution& prev, const SolveOptions& opt,
                          std::array<double, 2>* probe) {
    auto g = family.grid(k);
    auto gc = family.grid(k - 1);
    const int N = g->steps(), Nc = gc->steps(), d = model.d, q = model.q;
    CloudKey key{seed, rng::cloud_id(rng::Domain::level, std::uint64_t(k))};
    auto cloud = LevelCloud::simulate(model, g, gc, Mk, key, opt.mode);

    check_budget(2 * Mk * sizeof(double), "level responses (k=" + std::to_string(k) + ")");
    std::vector<double> phiX(Mk), ctl(Mk, 0.0);
    par::for_blocks(Mk, [&](std::size_t, std::size_t b0, std::size_t b1) {
        const double* xT = cloud.state(N);
        for (std::size_t m = b0; m < b1; ++m) phiX[m] = phi(xT + m * std::size_t(d));
    });

    LevelSolution sol;
    sol.k = k;
    sol.q = q;
    sol.grid = g;
    sol.phi = phi;
    sol.y.resize(std::size_t(N));
    sol.z.resize(std::size_t(N));

    const std::size_t nslots = std::size_t(par::threads());
    VarTally respTally(nslots), phiTally(nslots);

    int J = Nc;
    for (int i = N - 1; i >= 0; --i) {
        // Fold coarse control terms for every coarse index now strictly above
        // the last coarse grid point at or before t_i.
        const int Ji = i / 2 + 1;
        while (J > Ji) {
            --J;
            const Fitted& zc = prev.z[std::size_t(J)];
            const double* Xc = cloud.coarse_state(J);
            par::for_blocks(Mk, [&](std::size_t, std::size_t b0, std::size_t b1) {
                const std::size_t n = b1 - b0;
                thread_local std::vector<double> dwc;
                if (dwc.size() < n * std::size_t(q)) dwc.resize(n * std::size_t(q));
                cloud.coarse_dw(J, b0, n, dwc.data());
                double zb[kMaxQ];
                for (std::size_t j = 0; j < n; ++j) {
                    const std::size_t m = b0 + j;
                    zc.eval(Xc + m * std::size_t(d), zb);
                    double acc = 0;
                    for (int c = 0; c < q; ++c) acc += zb[c] * dwc[j * std::size_t(q) + std::size_t(c)];
                    ctl[m] += acc;
                }
            });
        }

        const double* Xi = cloud.state(i);
        const bool want_probe = probe && i == 0;

        // Value fit.
        FitAccumulator accY(bases(k, i, FitRole::value), 1);
        par::ordered_blocks(
            Mk,
            [&](std::size_t slot, std::size_t, std::size_t b0, std::size_t b1) {
                const std::size_t n = b1 - b0;
                thread_local std::vector<double> resp;
                if (resp.size() < n) resp.resize(n);
                for (std::size_t j = 0; j < n; ++j) resp[j] = phiX[b0 + j] - ctl[b0 + j];
                accY.compute(slot, Xi + b0 * std::size_t(d), resp.data(), n);
                if (want_probe) {
                    respTally.set(slot, resp.data(), n);
                    phiTally.set(slot, phiX.data() + b0, n);
                }
            },
            [&](std::size_t slot, std::size_t) {
                accY.commit(slot);
                if (want_probe) {
                    respTally.fold(slot);
                    phiTally.fold(slot);
                }
            });
        FitDiagnostics dY;
        sol.y[std::size_t(i)] = accY.solve(bound_of(opt.y_bound, k, i), &dY);
        log_fit(opt, k, i, FitRole::value, dY);

        // Gradient fit: scaled increment times the centred value response.
        const Fitted& yi = sol.y[std::size_t(i)];
        FitAccumulator accZ(bases(k, i, FitRole::gradient), q);
        const double dt = g->dt(i);
        par::ordered_blocks(
            Mk,
            [&](std::size_t slot, std::size_t, std::size_t b0, std::size_t b1) {
                const std::size_t n = b1 - b0;
                thread_local std::vector<double> dw, resp;
                if (dw.size() < n * std::size_t(q)) dw.resize(n * std::size_t(q));
                if (resp.size() < n * std::size_t(q)) resp.resize(n * std::size_t(q));
                cloud.fine_dw(i, b0, n, dw.data());
                for (std::size_t j = 0; j < n; ++j) {
                    const std::size_t m = b0 + j;
                    const double r = phiX[m] - ctl[m] - yi.eval1(Xi + m * std::size_t(d));
                    for (int c = 0; c < q; ++c)
                        resp[j * std::size_t(q) + std::size_t(c)] =
                            dw[j * std::size_t(q) + std::size_t(c)] / dt * r;
                }
                accZ.compute(slot, Xi + b0 * std::size_t(d), resp.data(), n);
            },
            [&](std::size_t slot, std::size_t) { accZ.commit(slot); });
        FitDiagnostics dZ;
        sol.z[std::size_t(i)] = accZ.solve(bound_of(opt.z_bound, k, i), &dZ);
        log_fit(opt, k, i, FitRole::gradient, dZ);
    }

    if (probe) *probe = {respTally.variance(Mk), phiTally.variance(Mk)};
    return sol;
}

} // namespace

std::vector<LevelSolution> solve_multilevel(const Model& model, const GridFamily& family,
                                            int k_final, const Schedule& M, const TerminalFn& phi,
                                            const BasisFactory& bases, std::uint64_t seed,
                                            const SolveOptions& opt) {
    if (k_final < 0) throw ConfigError("multilevel solve: final level must be >= 0");
    if (M.size() != std::size_t(k_final) + 1)
        throw ConfigError("multilevel solve: schedule must list one path count per level 0.." +
                          std::to_string(k_final));
    for (std::size_t j = 0; j < M.size(); ++j)
        if (M[j] == 0) throw ConfigError("multilevel solve: path counts must be positive");
    if (!phi) throw ConfigError("multilevel solve: terminal function is required");
    if (k_final >= 1 && !bases) throw ConfigError("multilevel solve: basis factory is required");
    if (model.q > kMaxQ) throw ConfigError("multilevel solve: q exceeds the supported maximum");

    if (opt.var_probe) opt.var_probe->assign(std::size_t(k_final) + 1, {0, 0});
    auto probe_at = [&](int k) -> std::array<double, 2>* {
        return opt.var_probe ? &(*opt.var_probe)[std::size_t(k)] : nullptr;
    };

    std::vector<LevelSolution> levels;
    levels.reserve(std::size_t(k_final) + 1);
    levels.push_back(build_level0(model, family, M[0], phi, seed, opt, probe_at(0)));
    for (int k = 1; k <= k_final; ++k)
        levels.push_back(build_level(model, family, k, M[std::size_t(k)], phi, bases, seed,
                                     levels.back(), opt, probe_at(k)));
    return levels;
}

LevelSolution solve_lsmdp_terminal(const Model& model, const GridFamily& family, int k,
                                   std::size_t M, const TerminalFn& phi,
                                   const BasisFactory& bases, std::uint64_t seed,
                                   const SolveOptions& opt) {
    if (k < 0) throw ConfigError("single-cloud solve: level must be >= 0");
    if (M == 0) throw ConfigError("single-cloud solve: path count must be positive");
    if (!phi) throw ConfigError("single-cloud solve: terminal function is required");
    if (!bases) throw ConfigError("single-cloud solve: basis factory is required");
    if (model.q > kMaxQ) throw ConfigError("single-cloud solve: q exceeds the supported maximum");

    auto g = family.grid(k);
    const int N = g->steps(), d = model.d, q = model.q;

    // One accumulator per time point, alive for the whole streamed pass; the
    // value and gradient fits share it when the factory returns one basis.
    struct TimeFit {
        BasisPtr bY, bZ;
        bool shared = false;
        std::unique_ptr<FitAccumulator> acc;  // shared (arity 1+q) or value-only
        std::unique_ptr<FitAccumulator> accZ; // separate gradient accumulator
    };
    std::vector<TimeFit> fits{std::size_t(N)};
    const std::size_t nslots = std::size_t(par::threads());
    std::size_t tally_bytes = 0;
    for (int i = 0; i < N; ++i) {
        auto& f = fits[std::size_t(i)];
        f.bY = bases(k, i, FitRole::value);
        f.bZ = bases(k, i, FitRole::gradient);
        f.shared = f.bY == f.bZ;
        const std::size_t KY = std::size_t(f.bY->dim()), KZ = std::size_t(f.bZ->dim());
        if (f.shared)
            tally_bytes += (nslots + 1) * (KY * KY + KY * std::size_t(1 + q)) * sizeof(double);
        else
            tally_bytes += (nslots + 1) *
                           (KY * KY + KY + KZ * KZ + KZ * std::size_t(q)) * sizeof(double);
    }
    check_budget(tally_bytes, "single-cloud solver tallies (k=" + std::to_string(k) + ")");
    for (auto& f : fits) {
        if (f.shared) {
            f.acc = std::make_unique<FitAccumulator>(f.bY, 1 + q);
        } else {
            f.acc = std::make_unique<FitAccumulator>(f.bY, 1);
            f.accZ = std::make_unique<FitAccumulator>(f.bZ, q);
        }
    }

    CloudKey key{seed, rng::cloud_id(rng::Domain::level, std::uint64_t(k))};
    stream_paths(
        model, *g, M, key,
        [&](std::size_t slot, std::size_t, std::size_t m0, std::size_t n, const double* states) {
            thread_local std::vector<double> phib, dw, resp;
            if (phib.size() < n) phib.resize(n);
            if (dw.size() < n * std::size_t(q)) dw.resize(n * std::size_t(q));
            if (resp.size() < n * std::size_t(1 + q)) resp.resize(n * std::size_t(1 + q));
            const double* xT = states + std::size_t(N) * n * std::size_t(d);
            for (std::size_t j = 0; j < n; ++j) phib[j] = phi(xT + j * std::size_t(d));
            for (int i = 0; i < N; ++i) {
                auto& f = fits[std::size_t(i)];
                const double* Xi = states + std::size_t(i) * n * std::size_t(d);
                fill_increments(key.seed, key.id, *g, i, q, m0, n, dw.data());
                const double dt = g->dt(i);
                if (f.shared) {
                    for (std::size_t j = 0; j < n; ++j) {
                        resp[j * std::size_t(1 + q)] = phib[j];
                        for (int c = 0; c < q; ++c)
                            resp[j * std::size_t(1 + q) + 1 + std::size_t(c)] =
                                phib[j] * dw[j * std::size_t(q) + std::size_t(c)] / dt;
                    }
                    f.acc->compute(slot, Xi, resp.data(), n);
                } else {
                    f.acc->compute(slot, Xi, phib.data(), n);
                    for (std::size_t j = 0; j < n; ++j)
                        for (int c = 0; c < q; ++c)
                            resp[j * std::size_t(q) + std::size_t(c)] =
                                phib[j] * dw[j * std::size_t(q) + std::size_t(c)] / dt;
                    f.accZ->compute(slot, Xi, resp.data(), n);
                }
            }
        },
        [&](std::size_t slot, std::size_t) {
            for (auto& f : fits) {
                f.acc->commit(slot);
                if (f.accZ) f.accZ->commit(slot);
            }
        },
        opt.mode);

    LevelSolution sol;
    sol.k = k;
    sol.q = q;
    sol.grid = g;
    sol.phi = phi;
    sol.y.resize(std::size_t(N));
    sol.z.resize(std::size_t(N));
    for (int i = 0; i < N; ++i) {
        auto& f = fits[std::size_t(i)];
        FitDiagnostics dY, dZ;
        if (f.shared) {
            const Eigen::MatrixXd rhs = f.acc->rhs_t();
            sol.y[std::size_t(i)] =
                f.acc->solve_with_rhs(rhs.topRows(1), bound_of(opt.y_bound, k, i), &dY);
            sol.z[std::size_t(i)] =
                f.acc->solve_with_rhs(rhs.bottomRows(q), bound_of(opt.z_bound, k, i), &dZ);
        } else {
            sol.y[std::size_t(i)] = f.acc->solve(bound_of(opt.y_bound, k, i), &dY);
            sol.z[std::size_t(i)] = f.accZ->solve(bound_of(opt.z_bound, k, i), &dZ);
        }
        log_fit(opt, k, i, FitRole::value, dY);
        log_fit(opt, k, i, FitRole::gradient, dZ);
    }
    return sol;
}

CalibratedSchedule calibrate_schedule(const GridFamily& family, int k, double eps, int d,
                                      double theta, double c_K, double c_M) {
    if (k < 0) throw ConfigError("calibration: level must be >= 0");
    if (!(eps > 0) || !std::isfinite(eps)) throw ConfigError("calibration: eps must be positive");
    if (d < 1) throw ConfigError("calibration: dimension must be >= 1");
    if (!(theta > 0) || theta > 1) throw ConfigError("calibration: theta must be in (0, 1]");
    if (!(c_K > 0) || !(c_M > 0)) throw ConfigError("calibration: constants must be positive");

    auto ceil_count = [](double v) -> std::size_t {
        if (!(v >= 1.0)) return 1;
        if (v > 9e18) throw ConfigError("calibration: requested count overflows");
        return static_cast<std::size_t>(std::ceil(v));
    };

    CalibratedSchedule cs;
    cs.k = k;
    cs.M.resize(std::size_t(k) + 1);
    cs.K.resize(std::size_t(k) + 1);
    // Cell diameter (T-t)^{1-theta/2} sqrt(eps) matches the gradient's
    // Lipschitz scale, giving K ~ (T-t)^{-(2-theta)d/2} eps^{-d/2} cells.
    const double kexp = (2.0 - theta) * double(d) / 2.0;
    auto K_of = [&](const TimeGrid& g, int i) {
        const double tau = g.T - g.t[std::size_t(i)];
        return ceil_count(c_K * std::pow(tau, -kexp) * std::pow(eps, -double(d) / 2.0));
    };
    for (int j = 0; j <= k; ++j) {
        auto g = family.grid(j);
        const int Nj = g->steps();
        cs.K[std::size_t(j)].resize(std::size_t(Nj));
        for (int i = 0; i < Nj; ++i) cs.K[std::size_t(j)][std::size_t(i)] = K_of(*g, i);
        // Per-level accuracy target: eps at the top, the level's own time
        // step below (each level only has to feed the next one's controls).
        const double target = (j == k) ? eps : std::ldexp(1.0, -j);
        const double Kedge = double(cs.K[std::size_t(j)][std::size_t(Nj - 1)]);
        cs.M[std::size_t(j)] = ceil_count(c_M * double(std::max(j, 1)) / target * Kedge);
        cs.work_multilevel += double(cs.M[std::size_t(j)]) * double(Nj);
    }
    {
        auto g = family.grid(k);
        const double Kedge = double(cs.K[std::size_t(k)][std::size_t(g->steps() - 1)]);
        cs.M_single = ceil_count(c_M / eps * double(g->steps()) * Kedge);
        cs.work_single = double(cs.M_single) * double(g->steps());
    }
    const double lg = std::log(1.0 / eps + 1.0);
    cs.order_multilevel = lg * std::pow(eps, -2.0 - double(d));
    cs.order_single = std::pow(eps, -3.0 - double(d));
    cs.order_residual = std::pow(eps, -4.0 - double(d) / 2.0) * std::pow(lg, double(d));
    cs.order_full = std::pow(eps, -4.0 - double(d)) * std::pow(lg, double(d));
    return cs;
}

BoundFn constant_bound(double c) {
    if (!(c > 0.0)) throw ConfigError("constant bound: cap must be positive");
    return [c](int, int) { return c; };
}

BoundFn gradient_bound(const GridFamily& family, double c_x, double theta) {
    if (!(c_x > 0.0)) throw ConfigError("gradient bound: scale must be positive");
    if (!(theta > 0.0) || theta > 1.0) throw ConfigError("gradient bound: theta must be in (0, 1]");
    return [family, c_x, theta](int k, int i) {
        const TimeGrid& g = *family.grid(k);
        const double tau = g.T - g.t[std::size_t(i)];
        return c_x / std::pow(tau, (1.0 - theta) / 2.0);
    };
}

} // namespace bsde
