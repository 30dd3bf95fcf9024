#pragma once
// Benchmark problems with independent reference solutions.
//
// Three problems exercise the solvers end to end:
//   sine     1-d Brownian motion, terminal sin(x), zero driver.  Smooth,
//            bounded, with an exact closed form at every grid time.
//   product  3-d Brownian motion, terminal x1*x2*x3, zero driver.  The value
//            process is the running product, the gradient drops one factor.
//   gooddeal 2-d correlated geometric model, terminal (x2 - x1)^+, driver
//            h |z_2|: the upper good-deal price bound of a spread claim on a
//            traded asset S = x1 and a non-traded index H = x2.
//
// Each problem carries two oracles built by different routes: a closed form
// and a brute-force integrator (Gauss-Hermite quadrature of the transition
// law).  Tests cross-validate the two before either is trusted.  The
// gooddeal closed form additionally rests on a sign argument (the optimal
// kernel never flips the |z_2| linearisation), so it is gated at run time
// against a dense-grid numerical reference built by Picard iteration; see
// NumericalReference below.

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "bsde/forward.hpp"
#include "bsde/multilevel.hpp"
#include "bsde/residual.hpp"

namespace bsde {

enum class OracleKind { closed_form, brute_force };

// Reference solution: value y(t, x) and gradient z(t, x) with q components
// (the volatility-weighted spatial gradient, matching what the solvers fit).
struct ReferenceOracle {
    OracleKind kind = OracleKind::closed_form;
    int q = 1;
    std::function<double(double t, const double* x)> y;
    std::function<void(double t, const double* x, double* out)> z;
};

// A benchmark problem: forward model, horizon, terminal value, driver (empty
// means zero), and the constants the truncation/bound builders need.  c_phi
// and c_x stay infinite for unbounded payoffs, which keeps truncation off.
struct Problem {
    std::string name;
    Model model;
    double T = 1.0;
    TerminalFn phi;
    Driver f;                  // empty: zero driver
    double c_phi = kInf;       // sup |phi| where finite (value-fit cap)
    double c_x = kInf;         // gradient cap scale where finite
    double lipschitz_f = 0.0;  // Lipschitz constant of the driver in (y, z)
    double theta = 1.0;        // terminal-regularity exponent in (0, 1]
    double theta_l = 1.0;      // driver time-regularity exponent in (0, 1]
};

struct ProblemWithOracle {
    Problem problem;
    ReferenceOracle closed; // closed form
    ReferenceOracle brute;  // independent brute-force integrator
};

ProblemWithOracle sine_problem();
ProblemWithOracle product_problem();
ProblemWithOracle gooddeal_problem();
// "sine" | "product" | "gooddeal"; throws ConfigError otherwise.
ProblemWithOracle problem_by_name(const std::string& name);

// ---------------------------------------------------------------------------
// Basis factories used by the benchmark experiments.  All of them return the
// same shared basis for the value and gradient roles at a given (level, time)
// so solvers can share one Gram matrix, and all fall back to a constant basis
// at time index 0 (the start state is deterministic).

// Normalised Hermite polynomials of the stated degree, scaled to the
// Brownian marginal at each grid time.  1-d models only.
BasisFactory hermite_bases(const GridFamily& family, int degree);

// Indicator cells over an equiprobable hypercube partition of the Brownian
// marginal N(0, t I_d): per-axis breakpoints at exact normal quantiles
// j/cells, edge cells unbounded (a partition of R^d).
BasisFactory brownian_cell_bases(const GridFamily& family, int d, int cells_per_dim);

// Local affine functions on the same equiprobable construction, but clipped
// to the quantile box [q(mass_cut), q(1 - mass_cut)] per axis: outside the
// box the prediction vanishes.
BasisFactory brownian_affine_bases(const GridFamily& family, int d, int cells_per_dim,
                                   double mass_cut = 1e-3);

// Indicator cells of uniform width per axis spanning the marginal quantile
// box [q(mass_cut), q(1 - mass_cut)] of a geometric model at each grid time,
// edge cells unbounded.  Axis marginals are lognormal, so quantiles are
// exp-transformed normal quantiles.
BasisFactory geometric_cell_bases(const Model& model, const GridFamily& family,
                                  int cells_per_dim, double mass_cut = 5e-4);

// ---------------------------------------------------------------------------
// Oracle cross-validation.

// Compares the two oracles of a problem at `points` states sampled from the
// model marginal at uniformly drawn interior times, and checks the closed
// gradient against a finite-difference sigma^T grad of the closed value.
// Relative errors use the Euclidean norm over gradient components.
struct OracleCheck {
    double max_rel_y = 0.0;  // closed vs brute value
    double max_rel_z = 0.0;  // closed vs brute gradient (norm-relative)
    double max_rel_fd = 0.0; // closed gradient vs finite-difference gradient
    int points = 0;
};
OracleCheck validate_oracles(const ProblemWithOracle& pw, int points, std::uint64_t seed);

// Zero-driver problems: y(t_i, X_i) must be a martingale along simulated
// paths.  Returns the worst |mean step change| / (4 standard errors) over
// the grid of level k; values <= 1 are consistent with the martingale
// property at the 4-sigma level.
double martingale_defect(const ProblemWithOracle& pw, int k, std::size_t paths,
                         std::uint64_t seed);

// ---------------------------------------------------------------------------
// Dense-grid numerical reference for the gooddeal problem.
//
// Picard iteration on frozen drivers: pass r solves the zero-coupling
// dynamic program whose source term is h |z_2^(r-1)(t, x)| evaluated through
// the previous pass's fitted gradient, over one shared path cloud that is
// regenerated identically every pass (a deterministic fixed-point
// iteration).  Value fits use an equiprobable marginal partition with
// value_cells^2 cells, gradient fits a coarser one with gradient_cells^2
// cells (gradient responses carry a 1/dt variance factor, so their cells
// need more paths each).  After the final pass, cloud averages of the fitted
// value and gradient are recorded on a fresh marginal sample at every grid
// time; those aggregates, not the fits, are what is persisted and compared.

struct ReferenceRow {
    int i = 0;          // grid time index
    double t = 0.0;
    double mean_y = 0.0;            // cloud mean of the fitted value
    std::vector<double> mean_z;     // cloud means of the fitted gradient
    double mean_abs_z2 = 0.0;       // cloud mean of |z_2|
    double mean_neg_z2 = 0.0;       // cloud mean of max(-z_2, 0)
};

struct NumericalReference {
    int k = 0;                    // grid level (N = 2^k steps)
    double T = 1.0;
    std::size_t paths = 0;        // training cloud size
    int iterations = 0;           // Picard passes
    std::uint64_t seed = 0;       // training cloud seed
    std::size_t eval_paths = 0;   // aggregate-sample size per time
    std::uint64_t eval_seed = 0;  // aggregate-sample seed
    int value_cells = 0, gradient_cells = 0; // cells per axis
    double y0 = 0.0;              // fitted value at time 0
    std::vector<double> z0;       // fitted gradient at time 0
    std::vector<double> deltas;   // |change of y0| per Picard pass
    std::vector<ReferenceRow> rows; // one per grid time index 0..N-1
};

NumericalReference build_gooddeal_reference(int k, std::size_t paths, int iterations,
                                            std::uint64_t seed,
                                            std::size_t eval_paths = 200000,
                                            int value_cells = 60, int gradient_cells = 15);

// CSV round trip ("key,value" metadata block, blank line, row table).
void save_reference(const NumericalReference& ref, const std::string& path);
NumericalReference load_reference(const std::string& path);

// Agreement between the closed form and the numerical reference.  Two
// references one level apart are combined by Richardson extrapolation
// (2 * fine - coarse on the coarse grid's times) to cancel the first-order
// time-discretisation bias before comparing:
//   rel_y0          |extrapolated y0 / closed Y_0 - 1|
//   max_rel_mean_y  worst per-time relative gap of cloud-mean values
//   max_rel_int_z   per-component gap of dt-integrated cloud-mean gradients,
//                   relative to max(|closed integral|, |closed Y_0|)
//   z2_negativity   dt-integrated mass of negative fitted z_2 relative to
//                   the integrated |z_2| (sign check of the linearisation)
// `verified` applies the acceptance gate: rel_y0 and max_rel_mean_y within
// tol, max_rel_int_z within tol, z2_negativity small.  The closed-form side
// is averaged over the same regenerated marginal samples, so the comparison
// is paired and regression noise, not sampling noise, dominates.
struct OracleStatus {
    bool verified = false;
    double rel_y0 = 0.0;
    double max_rel_mean_y = 0.0;
    double max_rel_int_z = 0.0;
    double z2_negativity = 0.0;
    double tol = 5e-3;
    std::string message;
};
OracleStatus gooddeal_agreement(const NumericalReference& coarse,
                                const NumericalReference& fine,
                                const ProblemWithOracle& pw, double tol = 5e-3);

} // namespace bsde
