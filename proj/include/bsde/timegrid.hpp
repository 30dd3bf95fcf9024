#pragma once
// Dyadic refinement grids on [0, T].
//
// Level k has 2^k + 1 points.  The graded family concentrates points near the
// horizon:  t_i = T - T (1 - i/2^k)^(1/beta), beta in (0,1]; beta = 1 is the
// uniform grid and is computed as T * (i/2^k) so the two families coincide
// bit for bit.  Because i/2^k and 1 - i/2^k are exact dyadic doubles and pow
// is a pure function, level k-1 points equal the even-indexed level-k points
// exactly; construction asserts this, so coupled coarse/fine passes never see
// drift between independently built levels.

#include <memory>
#include <vector>

namespace bsde {

inline constexpr int kMaxLevel = 20;

struct TimeGrid {
    int k = 0;          // refinement level, N = 2^k steps
    double T = 1.0;     // horizon
    double beta = 1.0;  // grading exponent (1 = uniform)
    std::vector<double> t; // 2^k + 1 points, t.front() = 0, t.back() = T

    int steps() const { return 1 << k; }
    double dt(int i) const { return t[std::size_t(i) + 1] - t[std::size_t(i)]; }
};

using GridPtr = std::shared_ptr<const TimeGrid>;

// A family of nested grids over a fixed horizon; grid(k) is built once and
// cached.  Throws std::invalid_argument on bad parameters or k > kMaxLevel.
class GridFamily {
public:
    GridFamily(double T, double beta);
    GridPtr grid(int k) const;
    double horizon() const { return T_; }
    double grading() const { return beta_; }
    bool uniform() const { return beta_ == 1.0; }

private:
    double T_, beta_;
    struct Cache;
    std::shared_ptr<Cache> cache_;
};

// Index of the last coarse point at or before fine point i:
// alpha(i) = max{ j : coarse.t[j] <= fine.t[i] }.  Binary search; relies on
// the bit-exact nesting above for exact ties.  Requires coarse.k < fine.k.
int alpha(const TimeGrid& fine, const TimeGrid& coarse, int i);

// Mesh diagnostics used by schedule calibration and the smallness report:
//   C_pi = sup_{i<N} dt_i / (T - t_i)^(1 - theta_L)
//   R_pi = sup_{i<N-1} dt_i / dt_{i+1}   (1 for k = 0)
struct GridDiag {
    double C_pi = 0.0;
    double R_pi = 1.0;
};
GridDiag grid_diagnostics(const TimeGrid& g, double theta_L);

} // namespace bsde
