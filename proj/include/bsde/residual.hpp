#pragma once
// Multistep least-squares solvers on independent per-time-point clouds.
//
// One engine serves two callers: the zero-terminal solve, whose driver is the
// problem driver composed with an already-fitted proxy solution, and the
// non-split baseline, which carries the terminal condition and the raw driver
// through every regression.  The backward loop fits each time point on its
// own cloud; responses integrate the driver along that cloud's paths by
// re-evaluating the already-fitted functions at later times.  Within a time
// point the gradient fit comes first (its responses use later steps only) and
// the value fit then adds the current step's driver term using the
// just-fitted, truncated gradient.

#include <cstdint>
#include <functional>

#include "bsde/forward.hpp"
#include "bsde/multilevel.hpp"
#include "bsde/timegrid.hpp"

namespace bsde {

// Problem driver f(t, x, y, z); z has q components.
using Driver = std::function<double(double t, const double* x, double y, const double* z)>;

// One step's integrand along a simulated path: g(j, x_j, x_next, ynext, zj),
// where ynext is the value function at j+1 evaluated at x_next and zj is the
// gradient function at j evaluated at x_j (q components).  The step index is
// passed so drivers with time-dependent weights can apply them themselves.
using StepDriver = std::function<double(int j, const double* xj, const double* xnext,
                                        double ynext, const double* zj)>;

// The problem driver composed with a fitted proxy: the proxy value at the
// next state and the proxy gradient at the current state are added to the
// (y, z) arguments before f is evaluated.  Closes over a shared copy of the
// fitted functions, so the argument may go out of scope.
StepDriver proxy_driver(const Driver& f, const LevelSolution& proxy);

// The problem driver as a step integrand with no proxy: y and z pass through.
StepDriver raw_driver(const Driver& f, GridPtr grid);

// Backward multistep solve with one independent cloud per time point.  The
// schedule has either a single entry (used at every time point) or one entry
// per time point.  An empty `terminal` means the zero function, and the
// returned solution evaluates to it at the last index.  Truncation caps come
// from opt.y_bound / opt.z_bound as elsewhere; opt.var_probe is a facility of
// the zero-driver solvers and is ignored here.
LevelSolution solve_multistep(const Model& model, const GridFamily& family, int k,
                              const Schedule& M, const TerminalFn& terminal,
                              const StepDriver& driver, const BasisFactory& bases,
                              std::uint64_t seed, const SolveOptions& opt = {});

// Zero-terminal solve whose driver is f composed with `proxy` (fitted on the
// same grid).  With f identically zero every response vanishes and the
// returned functions are exactly zero.
LevelSolution solve_residual(const Model& model, const GridFamily& family, int k,
                             const Schedule& M, const Driver& f, const LevelSolution& proxy,
                             const BasisFactory& bases, std::uint64_t seed,
                             const SolveOptions& opt = {});

// Non-split baseline: the terminal condition plus the raw driver enter every
// regression directly.
LevelSolution solve_lsmdp_full(const Model& model, const GridFamily& family, int k,
                               const Schedule& M, const TerminalFn& phi, const Driver& f,
                               const BasisFactory& bases, std::uint64_t seed,
                               const SolveOptions& opt = {});

// Redo the two fits at one time point, reusing that point's cloud (same seed
// and path count as the original solve) and the fitted functions strictly
// after it: partial.y[j] / partial.z[j] for j > i must be valid, and the
// entries at i are overwritten.  The backward recursion reads nothing else,
// so a refit reproduces the original fits bit for bit; tests use this to pin
// down the dependence structure.
void refit_time_point(const Model& model, int i, std::size_t M, const StepDriver& driver,
                      const BasisFactory& bases, std::uint64_t seed, LevelSolution& partial,
                      const SolveOptions& opt = {});

// The pointwise sum of a zero-driver part and a zero-terminal part fitted on
// the same grid.  Holds copies, so the inputs may go out of scope.
struct SplitSolution {
    LevelSolution linear;    // zero-driver part (carries the terminal condition)
    LevelSolution residual;  // zero-terminal part (carries the driver)

    int k() const { return linear.k; }
    double y_at(int i, const double* x) const;
    void z_at(int i, const double* x, double* out) const;
};

SplitSolution assemble_split(const LevelSolution& linear, const LevelSolution& residual);

// Truncation bound builders for the zero-terminal solve.  Both capture the
// family by value (grids are shared, so copies are cheap):
//   value:    C_X * (T - t^k_i)^((theta_l + theta)/2)
//   gradient: the value bound divided by dt^k_i
BoundFn residual_value_bound(const GridFamily& family, double c_x, double theta,
                             double theta_l);
BoundFn residual_gradient_bound(const GridFamily& family, double c_x, double theta,
                                double theta_l);

// Sufficient-condition report for the multistep contraction: compares
//   C_pi * L_f^2 * max(R_pi, 1)
// against 1 / (384 * (2q + (1+T) e^{T/2}) * (1+T)).  The constants entering
// the true condition are unknown in general, so this is informational only;
// the solvers never refuse to run on its account.
struct SmallnessReport {
    double c_pi = 0.0;
    double r_pi = 1.0;
    double lhs = 0.0;
    double threshold = 0.0;
    bool satisfied = false;
};

SmallnessReport smallness_report(const TimeGrid& g, int q, double l_f, double theta_l);

} // namespace bsde
