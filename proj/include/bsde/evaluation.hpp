#pragma once
// Global mean-squared-error reports, convergence studies, and empirical bias
// diagnostics.
//
// The global error of a fitted solution against a reference oracle is
//   max_i mean |y_hat_i - y(t_i, X_i)|^2  +  sum_i mean |z_hat_i - z|^2 dt_i,
// estimated on a fresh evaluation cloud drawn from its own seed domain so it
// is independent of every training cloud.  Reports carry per-time-point
// breakdowns with standard errors, plus alternative Y aggregations (time
// average, time 0) so orderings can be checked under any aggregation
// convention.

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "bsde/forward.hpp"
#include "bsde/problems.hpp"
#include "bsde/residual.hpp"

namespace bsde {

// Scheme-agnostic evaluator pair: value and gradient at (time index, state).
// Must be safe to call concurrently.
struct SchemeEval {
    std::string tag; // ML | MDP | MDP1 | MDP2 | SPLIT | ...
    int q = 1;
    std::function<double(int i, const double* x)> y;
    std::function<void(int i, const double* x, double* out)> z;
};

// Wrappers copy the solution into shared state, so the evaluator may outlive
// the original object.
SchemeEval evaluator(LevelSolution sol, std::string tag);
SchemeEval evaluator(SplitSolution sol, std::string tag);
// Oracle viewed as an evaluator on a grid (exact-oracle self-test support).
SchemeEval oracle_evaluator(const ReferenceOracle& oracle, GridPtr grid, std::string tag);

struct TimePointError {
    int i = 0;
    double t = 0.0, dt = 0.0;
    double mseY = 0.0, mseZ = 0.0; // mean squared deviations at time i
    double seY = 0.0, seZ = 0.0;   // standard errors of those means
};

struct ErrorReport {
    std::string scheme;
    int k = 0;
    std::size_t m_eval = 0;
    std::uint64_t seed = 0;
    std::vector<TimePointError> points; // i = 0..2^k - 1
    double mseY_max = 0.0;  // max over i
    double mseY_avg = 0.0;  // average over i
    double mseY_t0 = 0.0;   // i = 0
    double mseZ_sum = 0.0;  // sum_i mseZ_i dt_i
    double combined = 0.0;  // mseY_max + mseZ_sum
    double seY_max = 0.0;   // standard error at the maximising index
    double seZ_sum = 0.0;   // error propagation through the weighted sum
};

// Monte Carlo estimate of the global error of `approx` against `oracle` on a
// fresh cloud of m_eval paths (evaluation seed domain, salted).  Gradient
// deviations use the Euclidean norm over components.
ErrorReport global_mse(const SchemeEval& approx, const ReferenceOracle& oracle,
                       const Model& model, GridPtr grid, std::size_t m_eval,
                       std::uint64_t seed, std::uint64_t salt = 0);

// Least-squares line through (log2 N, log2 metric) where the metric of level
// k averages runner(k, seed) over the given seeds.  The default metric is the
// combined global error.  Needs at least three levels.
struct StudyPoint {
    int k = 0;
    double log2n = 0.0;    // = k
    double mse = 0.0;      // seed-averaged metric
    double log2mse = 0.0;
    double residual = 0.0; // log2mse - fitted line
};

struct ConvergenceStudy {
    double slope = 0.0, intercept = 0.0;
    std::vector<StudyPoint> points;
    std::vector<ErrorReport> reports; // every (k, seed) run, in run order
};

ConvergenceStudy convergence_study(
    const std::function<ErrorReport(int k, std::uint64_t seed)>& runner, int k_lo, int k_hi,
    const std::vector<std::uint64_t>& seeds,
    const std::function<double(const ErrorReport&)>& metric = {});

// Best-approximation error (bias floor) of a basis for a target function at
// one time: regresses target(x) on the basis over a marginal probe cloud at
// time t and returns the residual mean square.
double empirical_bias(const BasisPtr& basis, const std::function<double(const double*)>& target,
                      const Model& model, double t, std::size_t m_probe, std::uint64_t seed);

} // namespace bsde
