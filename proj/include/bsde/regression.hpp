#pragma once
// Least-squares regression on function bases.
//
// A Basis maps a state x in R^d to K feature values.  Fits minimise the
// empirical mean square error over a sample cloud; the solution is the
// normal-equation one, made deterministic by the blockwise ordered
// accumulation from parallel.hpp.  Partitioned bases (indicator hypercubes,
// cellwise affine) bypass the dense path: their Gram matrix is block diagonal
// and each cell is solved independently (per-cell means for indicators).
// Empty cells contribute the zero function.
//
// Fitted functions carry an optional componentwise clamp: values are capped
// to [-L, L].  Composing truncations keeps the smallest cap.

#include <Eigen/Dense>

#include <cstddef>
#include <memory>
#include <string>
#include <vector>

#include "bsde/common.hpp"

namespace bsde {

class Basis {
public:
    virtual ~Basis() = default;
    virtual int dim() const = 0;     // number of coefficients K
    virtual int ambient() const = 0; // state dimension d
    // Dense feature row; out has dim() entries.  Partitioned bases write
    // zeros except in the active cell's block.
    virtual void features(const double* x, double* out) const = 0;

    // Partition fast path.
    virtual bool partitioned() const { return false; }
    virtual int cells() const { return 0; }
    virtual int cell_width() const { return 0; }              // local functions per cell
    virtual int cell_of(const double*) const { return -1; }   // -1: outside any cell
    virtual void cell_features(const double*, double*) const {}

    virtual std::string describe() const = 0;
};

using BasisPtr = std::shared_ptr<const Basis>;

// K = 1, feature identically 1.  Used at deterministic time points (t = 0).
BasisPtr make_constant_basis(int d);

// Indicator functions of a hypercube partition.  Axis a is cut at the given
// interior breakpoints; cells on the boundary of the axis extend to +-inf
// unless a finite box is supplied, in which case states outside the box fall
// in no cell (prediction 0 there).
struct HypercubeSpec {
    std::vector<std::vector<double>> breakpoints; // per axis, strictly increasing
    std::vector<double> box_lo, box_hi;           // empty = unbounded partition
    std::vector<std::vector<double>> centers;     // per axis, cells() entries; optional
};
BasisPtr make_hypercube_basis(HypercubeSpec spec);

// Cellwise affine functions 1, x_1 - c_1, ..., x_d - c_d on the same
// geometry (cell_width = 1 + d).  Centers default to cell midpoints (edge
// cells: the finite breakpoint) unless the spec provides them.
BasisPtr make_local_affine_basis(HypercubeSpec spec);

// Probabilists' Hermite polynomials scaled for the marginal at time t:
// feature j is He_j(x / sqrt(t)) / sqrt(j!), orthonormal under N(0, t).
// t = 0 degenerates to the constant basis.  One-dimensional states only.
BasisPtr make_hermite_basis(int degree, double t);

// --- fitted functions -------------------------------------------------------

struct Fitted {
    BasisPtr basis;
    Eigen::MatrixXd coef;  // dim() x arity
    double clamp = kInf;

    int arity() const { return static_cast<int>(coef.cols()); }
    void eval(const double* x, double* out) const; // out[arity()]
    double eval1(const double* x) const;           // arity() == 1 convenience
};

// Componentwise truncation; composing keeps the tighter cap.
Fitted truncate(Fitted f, double L);

struct FitDiagnostics {
    std::size_t samples = 0;
    bool jittered = false;        // diagonal jitter was needed
    bool pseudo_inverse = false;  // eigenvalue fallback was needed
    double rel_residual = 0.0;    // ||G a - b|| / (||G|| ||a|| + ||b||), dense path
    double min_cell_mass = 1.0;   // partition path: smallest occupied-cell share
    int empty_cells = 0;
};

// Deterministic streaming accumulator.  Drive it with par::ordered_blocks:
// compute(slot,...) featurises a block and accumulates into slot scratch;
// commit(slot) folds the scratch into the master tallies in block order.
class FitAccumulator {
public:
    FitAccumulator(BasisPtr basis, int arity);
    ~FitAccumulator();
    FitAccumulator(FitAccumulator&&) noexcept;
    FitAccumulator& operator=(FitAccumulator&&) = delete;

    // X: n x d row-major states; Y: n x arity responses.
    void compute(std::size_t slot, const double* X, const double* Y, std::size_t n);
    void commit(std::size_t slot);

    // Solve the normal equations.  Dense path: LDLT, then jitter retry, then
    // eigen-decomposition pseudo-inverse (minimum-norm), with a residual
    // check between stages.  Partition path: independent per-cell solves.
    Fitted solve(double clamp = kInf, FitDiagnostics* diag = nullptr) const;

    // Re-solve with different responses but the same Gram matrix: the Y
    // tallies are replaced by the given (arity x K) right-hand side.  Used
    // when several regressions share one cloud and basis.
    Fitted solve_with_rhs(const Eigen::MatrixXd& rhs_t, double clamp,
                          FitDiagnostics* diag = nullptr) const;
    Eigen::MatrixXd rhs_t() const; // current arity x K right-hand side

private:
    struct Impl;
    std::unique_ptr<Impl> impl_;
};

// One-call fits over in-memory samples (tests, small problems, oracles).
Fitted ols_fit(BasisPtr basis, const double* X, const double* Y, std::size_t M, int arity,
               double clamp = kInf, FitDiagnostics* diag = nullptr);
// Same, but requires a partitioned basis (per-cell solve path).
Fitted partition_fit(BasisPtr basis, const double* X, const double* Y, std::size_t M,
                     int arity, double clamp = kInf, FitDiagnostics* diag = nullptr);

// Equiprobable hypercube partition from a probe sample of the marginal:
// per-axis breakpoints at empirical quantiles.  Throws ConfigError if an
// axis is degenerate (coinciding quantiles).  min_cell_mass is the smallest
// cell's share of the probe.
struct PartitionBuild {
    HypercubeSpec spec;
    BasisPtr indicator;
    BasisPtr affine;
    double min_cell_mass = 0.0;
};
PartitionBuild equiprobable_partition(const double* probe, std::size_t Mp, int d,
                                      const std::vector<int>& cells_per_axis);

} // namespace bsde
