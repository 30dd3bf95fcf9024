#pragma once
// Forward state models and simulated clouds.
//
// Three model kinds: arithmetic Brownian (X = x0 + W, d = q), geometric
// Brownian with correlated factors (exact log-normal stepping), and a generic
// Euler scheme with user drift/diffusion callbacks.
//
// Clouds store *states only*; Brownian increments are regenerated on demand
// from the counter RNG (same sub-stream that produced them), which halves the
// memory of the largest runs.  A level cloud couples a fine grid with the
// next coarser one:
//   - exact / euler-subsample: the coarse path is the even-indexed subsample
//     of the fine path (coarse and fine states agree bitwise at shared times);
//   - euler-coupled: an independently stepped coarse chain driven by the
//     summed fine increments (states at shared times differ; kept for
//     studying that discrepancy).
// Coarse increments are always the sum of the two fine increments they span.

#include <cstdint>
#include <functional>
#include <memory>
#include <vector>

#include "bsde/rng.hpp"
#include "bsde/timegrid.hpp"

namespace bsde {

struct Model {
    enum class Kind { brownian, geometric, euler };
    Kind kind = Kind::brownian;
    int d = 1, q = 1;
    std::vector<double> x0;

    // geometric: X_c' = X_c (mu_c dt + row_c(loading) . dW); loading row c is
    // sigma_c times a unit-norm factor row, lam2 its squared norm.
    std::vector<double> mu, loading, lam2;

    // euler: out buffers are d (drift) and d*q row-major (diffusion).
    std::function<void(double, const double*, double*)> drift;
    std::function<void(double, const double*, double*)> diffusion;

    bool exact() const { return kind != Kind::euler; }
};

Model brownian_model(int d, std::vector<double> x0);
// factors: d x q row-major, rows with unit Euclidean norm (checked to 1e-12).
Model geometric_model(std::vector<double> x0, std::vector<double> mu,
                      std::vector<double> sigma, std::vector<double> factors, int q);
Model euler_model(int d, int q, std::vector<double> x0,
                  std::function<void(double, const double*, double*)> drift,
                  std::function<void(double, const double*, double*)> diffusion);

enum class CoupleMode { exact, euler_subsample, euler_coupled };

struct CloudKey {
    std::uint64_t seed = 0;
    std::uint64_t id = 0; // from rng::cloud_id
};

// Brownian increments of step i for paths [m0, m0+n), scaled by sqrt(dt_i),
// laid out n x q row-major.  Pure function of (seed, cloud, grid, i).
void fill_increments(std::uint64_t seed, std::uint64_t cloud, const TimeGrid& g, int i,
                     int q, std::size_t m0, std::size_t n, double* out);

// M paths over a fine grid, optionally coupled to the next coarser grid.
class LevelCloud {
public:
    static LevelCloud simulate(const Model& model, GridPtr fine, GridPtr coarse,
                               std::size_t M, CloudKey key,
                               CoupleMode mode = CoupleMode::exact);

    const Model& model() const { return model_; }
    const TimeGrid& fine() const { return *fine_; }
    const TimeGrid* coarse() const { return coarse_.get(); }
    std::size_t paths() const { return M_; }
    CloudKey key() const { return key_; }
    CoupleMode mode() const { return mode_; }

    // States at fine time index i: M x d row-major.
    const double* state(int i) const;
    // States at coarse time index j (subsample view unless euler-coupled).
    const double* coarse_state(int j) const;
    // True when coarse states are bitwise the fine states at shared times.
    bool shared_states_bitequal() const { return mode_ != CoupleMode::euler_coupled; }

    // Increment regeneration; out is n x q, scaled by the step width.
    void fine_dw(int i, std::size_t m0, std::size_t n, double* out) const;
    void coarse_dw(int j, std::size_t m0, std::size_t n, double* out) const;

    // Serialisation (header + raw state arrays); see io.hpp for the format.
    void dump(const std::string& path) const;
    static LevelCloud restore(const std::string& path, const Model& model, GridPtr fine,
                              GridPtr coarse);

private:
    LevelCloud() = default;
    Model model_;
    GridPtr fine_, coarse_;
    std::size_t M_ = 0;
    CloudKey key_;
    CoupleMode mode_ = CoupleMode::exact;
    std::vector<double> states_;        // (N+1) x M x d
    std::vector<double> coarse_states_; // euler-coupled only: (N/2+1) x M x d
};

// M paths living on [t_i0, T]: the start state is drawn by one exact
// transition when the model allows it (dedicated init sub-stream), otherwise
// by unstored Euler steps from time 0.  Stores states for indices i0..N.
class TimePointCloud {
public:
    static TimePointCloud simulate(const Model& model, GridPtr grid, int i0, std::size_t M,
                                   CloudKey key, CoupleMode mode = CoupleMode::exact);

    int start_index() const { return i0_; }
    std::size_t paths() const { return M_; }
    int dim() const { return model_.d; }
    const double* state(int i) const; // i in [i0, N]
    // Increments of step i (>= i0), n x q, scaled by sqrt(dt_i).
    void dw(int i, std::size_t m0, std::size_t n, double* out) const;

private:
    TimePointCloud() = default;
    Model model_;
    GridPtr grid_;
    int i0_ = 0;
    std::size_t M_ = 0;
    CloudKey key_;
    std::vector<double> states_; // (N - i0 + 1) x M x d
};

// Streams full paths without storing a cloud.  For each fixed-size path
// block, compute(slot, block, m0, n, states) receives the block's states for
// all time indices, laid out time-major: states + i*(n*d) is the n x d matrix
// at time i.  compute runs concurrently into per-slot scratch; commit(slot,
// block) runs in strict block order, so reductions are deterministic for any
// thread count.  mode picks the stepping (exact needs an exact model).
void stream_paths(const Model& model, const TimeGrid& g, std::size_t M, CloudKey key,
                  const std::function<void(std::size_t, std::size_t, std::size_t,
                                           std::size_t, const double*)>& compute,
                  const std::function<void(std::size_t, std::size_t)>& commit,
                  CoupleMode mode = CoupleMode::exact);

// Draw the model marginal at time t (one exact transition from x0) for paths
// [m0, m0+n) of the aux sub-stream; out is n x d.  Exact models only.
void fill_marginal(const Model& model, double t, std::uint64_t seed, std::uint64_t cloud,
                   std::size_t m0, std::size_t n, double* out);

} // namespace bsde
