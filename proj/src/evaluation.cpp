#include "bsde/evaluation.hpp"

#include <algorithm>
#include <cmath>
#include <memory>

#include "bsde/common.hpp"
#include "bsde/parallel.hpp"
#include "bsde/regression.hpp"

namespace bsde {

SchemeEval evaluator(LevelSolution sol, std::string tag) {
    auto s = std::make_shared<const LevelSolution>(std::move(sol));
    SchemeEval e;
    e.tag = std::move(tag);
    e.q = s->q;
    e.y = [s](int i, const double* x) { return s->y_at(i, x); };
    e.z = [s](int i, const double* x, double* out) { s->z_at(i, x, out); };
    return e;
}

SchemeEval evaluator(SplitSolution sol, std::string tag) {
    auto s = std::make_shared<const SplitSolution>(std::move(sol));
    SchemeEval e;
    e.tag = std::move(tag);
    e.q = s->linear.q;
    e.y = [s](int i, const double* x) { return s->y_at(i, x); };
    e.z = [s](int i, const double* x, double* out) { s->z_at(i, x, out); };
    return e;
}

SchemeEval oracle_evaluator(const ReferenceOracle& oracle, GridPtr grid, std::string tag) {
    SchemeEval e;
    e.tag = std::move(tag);
    e.q = oracle.q;
    e.y = [oracle, grid](int i, const double* x) { return oracle.y(grid->t[std::size_t(i)], x); };
    e.z = [oracle, grid](int i, const double* x, double* out) {
        oracle.z(grid->t[std::size_t(i)], x, out);
    };
    return e;
}

ErrorReport global_mse(const SchemeEval& approx, const ReferenceOracle& oracle,
                       const Model& model, GridPtr grid, std::size_t m_eval,
                       std::uint64_t seed, std::uint64_t salt) {
    if (!approx.y || !approx.z) throw ConfigError("global_mse: approx evaluators missing");
    if (!oracle.y || !oracle.z) throw ConfigError("global_mse: reference oracle unavailable");
    if (approx.q != oracle.q) throw ConfigError("global_mse: gradient dimensions disagree");
    if (m_eval < 2) throw ConfigError("global_mse: need at least two evaluation paths");
    const int N = grid->steps(), d = model.d, q = oracle.q;
    const std::size_t un = std::size_t(N);

    const std::size_t nslots = std::size_t(par::threads());
    // Per-slot partials: sum and sum-of-squares of the per-path squared
    // deviations, per time index, for y and z.
    struct Part {
        std::vector<double> y1, y2, z1, z2;
    };
    std::vector<Part> parts(nslots);
    for (auto& p : parts) {
        p.y1.assign(un, 0.0);
        p.y2.assign(un, 0.0);
        p.z1.assign(un, 0.0);
        p.z2.assign(un, 0.0);
    }
    std::vector<double> y1(un, 0.0), y2(un, 0.0), z1(un, 0.0), z2(un, 0.0);

    const CloudKey key{seed, rng::cloud_id(rng::Domain::eval, std::uint64_t(grid->k), 0, salt)};
    stream_paths(
        model, *grid, m_eval, key,
        [&](std::size_t slot, std::size_t, std::size_t, std::size_t n, const double* states) {
            Part& p = parts[slot];
            std::fill(p.y1.begin(), p.y1.end(), 0.0);
            std::fill(p.y2.begin(), p.y2.end(), 0.0);
            std::fill(p.z1.begin(), p.z1.end(), 0.0);
            std::fill(p.z2.begin(), p.z2.end(), 0.0);
            double zh[8], zo[8];
            for (int i = 0; i < N; ++i) {
                const double* xi = states + std::size_t(i) * n * std::size_t(d);
                const double ti = grid->t[std::size_t(i)];
                for (std::size_t m = 0; m < n; ++m) {
                    const double* x = xi + m * std::size_t(d);
                    const double dy = approx.y(i, x) - oracle.y(ti, x);
                    const double sy = dy * dy;
                    p.y1[std::size_t(i)] += sy;
                    p.y2[std::size_t(i)] += sy * sy;
                    approx.z(i, x, zh);
                    oracle.z(ti, x, zo);
                    double sz = 0.0;
                    for (int c = 0; c < q; ++c) sz += (zh[c] - zo[c]) * (zh[c] - zo[c]);
                    p.z1[std::size_t(i)] += sz;
                    p.z2[std::size_t(i)] += sz * sz;
                }
            }
        },
        [&](std::size_t slot, std::size_t) {
            Part& p = parts[slot];
            for (std::size_t i = 0; i < un; ++i) {
                y1[i] += p.y1[i];
                y2[i] += p.y2[i];
                z1[i] += p.z1[i];
                z2[i] += p.z2[i];
            }
        });

    ErrorReport rep;
    rep.scheme = approx.tag;
    rep.k = grid->k;
    rep.m_eval = m_eval;
    rep.seed = seed;
    rep.points.resize(un);
    const double mm = double(m_eval);
    int argmax = 0;
    double se_quad = 0.0;
    for (int i = 0; i < N; ++i) {
        TimePointError& tp = rep.points[std::size_t(i)];
        tp.i = i;
        tp.t = grid->t[std::size_t(i)];
        tp.dt = grid->dt(i);
        tp.mseY = y1[std::size_t(i)] / mm;
        tp.mseZ = z1[std::size_t(i)] / mm;
        const double vy = std::max(y2[std::size_t(i)] / mm - tp.mseY * tp.mseY, 0.0);
        const double vz = std::max(z2[std::size_t(i)] / mm - tp.mseZ * tp.mseZ, 0.0);
        tp.seY = std::sqrt(vy / mm);
        tp.seZ = std::sqrt(vz / mm);
        if (tp.mseY > rep.points[std::size_t(argmax)].mseY) argmax = i;
        rep.mseY_avg += tp.mseY / double(N);
        rep.mseZ_sum += tp.mseZ * tp.dt;
        se_quad += tp.seZ * tp.dt * tp.seZ * tp.dt;
    }
    rep.mseY_max = rep.points[std::size_t(argmax)].mseY;
    rep.seY_max = rep.points[std::size_t(argmax)].seY;
    rep.mseY_t0 = rep.points[0].mseY;
    rep.seZ_sum = std::sqrt(se_quad);
    rep.combined = rep.mseY_max + rep.mseZ_sum;
    return rep;
}

ConvergenceStudy convergence_study(
    const std::function<ErrorReport(int k, std::uint64_t seed)>& runner, int k_lo, int k_hi,
    const std::vector<std::uint64_t>& seeds,
    const std::function<double(const ErrorReport&)>& metric) {
    if (!runner) throw ConfigError("convergence_study: runner missing");
    if (k_hi - k_lo + 1 < 3) throw ConfigError("convergence_study: need at least three levels");
    if (seeds.empty()) throw ConfigError("convergence_study: need at least one seed");
    const auto value =
        metric ? metric : [](const ErrorReport& r) { return r.combined; };

    ConvergenceStudy st;
    for (int k = k_lo; k <= k_hi; ++k) {
        double acc = 0.0;
        for (std::uint64_t s : seeds) {
            st.reports.push_back(runner(k, s));
            acc += value(st.reports.back());
        }
        StudyPoint pt;
        pt.k = k;
        pt.log2n = double(k);
        pt.mse = acc / double(seeds.size());
        if (!(pt.mse > 0.0)) throw ConfigError("convergence_study: metric must be positive");
        pt.log2mse = std::log2(pt.mse);
        st.points.push_back(pt);
    }

    // Ordinary least squares of log2mse on log2n.
    const double n = double(st.points.size());
    double sx = 0.0, sy = 0.0, sxx = 0.0, sxy = 0.0;
    for (const StudyPoint& p : st.points) {
        sx += p.log2n;
        sy += p.log2mse;
        sxx += p.log2n * p.log2n;
        sxy += p.log2n * p.log2mse;
    }
    const double det = n * sxx - sx * sx;
    st.slope = (n * sxy - sx * sy) / det;
    st.intercept = (sy - st.slope * sx) / n;
    for (StudyPoint& p : st.points) p.residual = p.log2mse - (st.slope * p.log2n + st.intercept);
    return st;
}

double empirical_bias(const BasisPtr& basis, const std::function<double(const double*)>& target,
                      const Model& model, double t, std::size_t m_probe, std::uint64_t seed) {
    if (!basis || !target) throw ConfigError("empirical_bias: basis and target required");
    if (m_probe < 2) throw ConfigError("empirical_bias: need at least two probe points");
    const int d = model.d;
    check_budget(m_probe * std::size_t(d + 1) * sizeof(double), "bias probe cloud");
    std::vector<double> xs(m_probe * std::size_t(d)), ys(m_probe);
    const std::uint64_t cloud = rng::cloud_id(rng::Domain::probe, 0, 0, 9);
    const std::size_t chunk = 65536;
    for (std::size_t m0 = 0; m0 < m_probe; m0 += chunk) {
        const std::size_t n = std::min(chunk, m_probe - m0);
        fill_marginal(model, t, seed, cloud, m0, n, xs.data() + m0 * std::size_t(d));
    }
    for (std::size_t m = 0; m < m_probe; ++m) ys[m] = target(xs.data() + m * std::size_t(d));
    const Fitted fit = basis->partitioned()
                           ? partition_fit(basis, xs.data(), ys.data(), m_probe, 1)
                           : ols_fit(basis, xs.data(), ys.data(), m_probe, 1);
    double acc = 0.0;
    for (std::size_t m = 0; m < m_probe; ++m) {
        const double r = ys[m] - fit.eval1(xs.data() + m * std::size_t(d));
        acc += r * r;
    }
    return acc / double(m_probe);
}

} // namespace bsde
