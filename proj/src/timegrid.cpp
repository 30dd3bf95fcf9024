#include "bsde/timegrid.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <mutex>
#include <stdexcept>
#include <string>

namespace bsde {

struct GridFamily::Cache {
    std::mutex mu;
    std::map<int, GridPtr> grids;
};

GridFamily::GridFamily(double T, double beta) : T_(T), beta_(beta), cache_(std::make_shared<Cache>()) {
    if (!(T > 0.0) || !std::isfinite(T))
        throw std::invalid_argument("grid horizon must be positive and finite");
    if (!(beta > 0.0) || beta > 1.0)
        throw std::invalid_argument("grading exponent must lie in (0, 1]");
}

namespace {

GridPtr build(double T, double beta, int k) {
    if (k < 0 || k > kMaxLevel)
        throw std::invalid_argument("grid level must lie in [0, " + std::to_string(kMaxLevel) +
                                    "], got " + std::to_string(k));
    auto g = std::make_shared<TimeGrid>();
    g->k = k;
    g->T = T;
    g->beta = beta;
    const int n = 1 << k;
    g->t.resize(std::size_t(n) + 1);
    const double inv = 1.0 / beta;
    for (int i = 0; i <= n; ++i) {
        // i/2^k and 1 - i/2^k are exact dyadic doubles (k <= 20 < 52 bits),
        // which makes points of level k-1 bitwise equal to the even-indexed
        // points of level k.
        const double r = std::ldexp(static_cast<double>(i), -k);
        g->t[std::size_t(i)] = (beta == 1.0) ? T * r : T - T * std::pow(1.0 - r, inv);
    }
    g->t[0] = 0.0;           // pow may produce -0 contributions; pin the ends
    g->t[std::size_t(n)] = T;
    for (int i = 0; i < n; ++i)
        if (!(g->t[std::size_t(i)] < g->t[std::size_t(i) + 1]))
            throw std::invalid_argument("grid points must be strictly increasing");
    return g;
}

} // namespace

GridPtr GridFamily::grid(int k) const {
    std::lock_guard<std::mutex> lk(cache_->mu);
    auto it = cache_->grids.find(k);
    if (it != cache_->grids.end()) return it->second;
    GridPtr g = build(T_, beta_, k);
    if (k >= 1) {
        // Assert bit-exact nesting against the next coarser level.
        GridPtr c;
        auto cit = cache_->grids.find(k - 1);
        c = (cit != cache_->grids.end()) ? cit->second : build(T_, beta_, k - 1);
        for (int j = 0; j <= c->steps(); ++j)
            if (c->t[std::size_t(j)] != g->t[std::size_t(2 * j)])
                throw std::logic_error("grid nesting violated; this is a bug");
        cache_->grids.emplace(k - 1, c);
    }
    cache_->grids.emplace(k, g);
    return g;
}

int alpha(const TimeGrid& fine, const TimeGrid& coarse, int i) {
    if (coarse.k >= fine.k)
        throw std::invalid_argument("alpha requires a strictly coarser grid");
    if (i < 0 || i > fine.steps())
        throw std::invalid_argument("alpha index out of range");
    const double ti = fine.t[std::size_t(i)];
    auto it = std::upper_bound(coarse.t.begin(), coarse.t.end(), ti);
    return static_cast<int>(it - coarse.t.begin()) - 1;
}

GridDiag grid_diagnostics(const TimeGrid& g, double theta_L) {
    if (!(theta_L > 0.0) || theta_L > 1.0)
        throw std::invalid_argument("theta_L must lie in (0, 1]");
    GridDiag d;
    const int n = g.steps();
    for (int i = 0; i < n; ++i) {
        const double rem = g.T - g.t[std::size_t(i)];
        d.C_pi = std::max(d.C_pi, g.dt(i) / std::pow(rem, 1.0 - theta_L));
        if (i + 1 < n) d.R_pi = std::max(d.R_pi, g.dt(i) / g.dt(i + 1));
    }
    return d;
}

} // namespace bsde
