#pragma once
// Multilevel value/gradient solver for the zero-driver dynamic-programming
// equations, plus the single-cloud baseline it is compared against.
//
// Both schemes fit, on refining dyadic grids, the conditional expectation of
// a terminal value (y) and its scaled-increment projection (z).  The
// multilevel solver re-uses the previous level's gradient fits as a
// martingale control variate: the response at level k subtracts the coarse
// increments weighted by the coarse z-fit, which removes most of the
// response variance and lets path counts shrink as levels refine.

#include <array>
#include <cstdint>
#include <functional>
#include <vector>

#include "bsde/forward.hpp"
#include "bsde/regression.hpp"
#include "bsde/timegrid.hpp"

namespace bsde {

// Terminal value function x (d doubles) -> scalar.
using TerminalFn = std::function<double(const double*)>;

enum class FitRole { value, gradient };

// Basis choice per (level, time index, role).  Return the *same* shared
// pointer for both roles to let solvers share one Gram matrix per fit point.
using BasisFactory = std::function<BasisPtr(int k, int i, FitRole role)>;

// Componentwise clamp bound per (level, time index); return kInf (or leave
// the function empty) to disable.
using BoundFn = std::function<double(int k, int i)>;

// Fits for one grid level: y[i], z[i] for i = 0..N-1 with N = 2^k; the value
// at i = N is the terminal function itself.
struct LevelSolution {
    int k = 0;
    int q = 1;
    GridPtr grid;
    TerminalFn phi;
    std::vector<Fitted> y;
    std::vector<Fitted> z;

    double y_at(int i, const double* x) const;
    void z_at(int i, const double* x, double* out) const;
};

struct FitLogEntry {
    int k = 0, i = 0;
    FitRole role = FitRole::value;
    FitDiagnostics diag;
};

struct SolveOptions {
    CoupleMode mode = CoupleMode::exact;
    BoundFn y_bound;
    BoundFn z_bound;
    std::vector<FitLogEntry>* fit_log = nullptr;
    // Per level: sample variance of the level's time-0 value response and of
    // the raw terminal value on the same cloud (control-variate probe).
    std::vector<std::array<double, 2>>* var_probe = nullptr;
};

// Path counts per level, index j = 0..k.
using Schedule = std::vector<std::size_t>;

// Truncation bound builders for SolveOptions: a constant cap for value fits,
// and the gradient cap C_X / (T - t^k_i)^((1-theta)/2), which grows toward
// the terminal time (constant when theta = 1).  The family is captured by
// value; grids are shared, so the copy is cheap.
BoundFn constant_bound(double c);
BoundFn gradient_bound(const GridFamily& family, double c_x, double theta = 1.0);

// Multilevel solve up to level k_final.  Level 0 fits constants on its own
// cloud; level k >= 1 simulates a coupled cloud on grids (k, k-1) and fits
//   y_i  <-  Phi(X_N) - sum_{j>alpha(i)} z^{k-1}_j(X^{k-1}_j) . dW^{k-1}_j
//   z_i  <-  (dW_i / dt_i) (y-response - y_i(X_i))
// backward in i, value fit before gradient fit.  Returns levels 0..k_final
// (prefixes are complete solutions of their own level).
std::vector<LevelSolution> solve_multilevel(const Model& model, const GridFamily& family,
                                            int k_final, const Schedule& M, const TerminalFn& phi,
                                            const BasisFactory& bases, std::uint64_t seed,
                                            const SolveOptions& opt = {});

// Single-cloud baseline for the same equations: on one streamed cloud of M
// paths, y_i fits Phi(X_N) and z_i fits Phi(X_N) dW_i / dt_i, every i in one
// pass (no control variates).  This is the plain dynamic-programming scheme
// specialised to a zero driver, where responses collapse to the terminal
// value and one shared cloud suffices.
LevelSolution solve_lsmdp_terminal(const Model& model, const GridFamily& family, int k,
                                   std::size_t M, const TerminalFn& phi,
                                   const BasisFactory& bases, std::uint64_t seed,
                                   const SolveOptions& opt = {});

// Work-schedule calibration for a target accuracy eps in dimension d (theta
// is the terminal-regularity exponent; 1 = Lipschitz): per-level path counts,
// per-(level, time) basis-size targets, concrete path-step work counts, and
// the asymptotic cost orders evaluated at eps for the comparison table.
struct CalibratedSchedule {
    int k = 0;
    Schedule M;                              // multilevel path counts, j = 0..k
    std::vector<std::vector<std::size_t>> K; // [j][i] basis-size targets
    std::size_t M_single = 0;                // single-cloud baseline path count
    double work_multilevel = 0.0;            // sum_j M_j 2^j (path-steps)
    double work_single = 0.0;                // M_single 2^k
    // Cost orders at eps, unit constants: multilevel linear part, single-cloud
    // baseline, residual part, and the non-split full scheme.
    double order_multilevel = 0.0; // ln(1/eps + 1) eps^{-2-d}
    double order_single = 0.0;     // eps^{-3-d}
    double order_residual = 0.0;   // eps^{-4-d/2} ln(1/eps + 1)^d
    double order_full = 0.0;       // eps^{-4-d}   ln(1/eps + 1)^d
};

CalibratedSchedule calibrate_schedule(const GridFamily& family, int k, double eps, int d,
                                      double theta = 1.0, double c_K = 1.0, double c_M = 1.0);

} // namespace bsde
