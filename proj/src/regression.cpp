#include "bsde/regression.hpp"

#include "bsde/kernels.hpp"
#include "bsde/parallel.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <sstream>

namespace bsde {

// --- bases -------------------------------------------------------------—---

namespace {

class ConstantBasis final : public Basis {
public:
    explicit ConstantBasis(int d) : d_(d) {}
    int dim() const override { return 1; }
    int ambient() const override { return d_; }
    void features(const double*, double* out) const override { out[0] = 1.0; }
    bool partitioned() const override { return true; }
    int cells() const override { return 1; }
    int cell_width() const override { return 1; }
    int cell_of(const double*) const override { return 0; }
    void cell_features(const double*, double* out) const override { out[0] = 1.0; }
    std::string describe() const override { return "constant"; }

private:
    int d_;
};

// Shared partition geometry for indicator and affine variants.
struct Geometry {
    std::vector<std::vector<double>> bp;      // interior breakpoints per axis
    std::vector<double> lo, hi;               // optional box (empty: unbounded)
    std::vector<std::vector<double>> centers; // per axis, axis_cells entries
    std::vector<int> axis_cells;
    std::vector<int> stride;
    int d = 0, ncells = 1;

    explicit Geometry(HypercubeSpec spec) {
        d = static_cast<int>(spec.breakpoints.size());
        if (d == 0) throw ConfigError("hypercube partition needs at least one axis");
        bp = std::move(spec.breakpoints);
        lo = std::move(spec.box_lo);
        hi = std::move(spec.box_hi);
        if (!lo.empty() && (static_cast<int>(lo.size()) != d || static_cast<int>(hi.size()) != d))
            throw ConfigError("partition box must have one bound per axis");
        for (auto& b : bp) {
            if (!std::is_sorted(b.begin(), b.end()) ||
                std::adjacent_find(b.begin(), b.end()) != b.end())
                throw ConfigError("partition breakpoints must be strictly increasing");
        }
        axis_cells.resize(std::size_t(d));
        stride.resize(std::size_t(d));
        for (int a = 0; a < d; ++a) axis_cells[std::size_t(a)] = static_cast<int>(bp[std::size_t(a)].size()) + 1;
        // Row-major cell index: last axis fastest.
        int s = 1;
        for (int a = d - 1; a >= 0; --a) {
            stride[std::size_t(a)] = s;
            s *= axis_cells[std::size_t(a)];
        }
        ncells = s;

        if (spec.centers.empty()) {
            // Geometric defaults: cell midpoints, edge cells anchored at their
            // finite breakpoint (0 if the axis has no breakpoints at all).
            centers.resize(std::size_t(d));
            for (int a = 0; a < d; ++a) {
                const auto& b = bp[std::size_t(a)];
                auto& c = centers[std::size_t(a)];
                c.resize(std::size_t(axis_cells[std::size_t(a)]));
                for (int j = 0; j < axis_cells[std::size_t(a)]; ++j) {
                    const bool has_l = j > 0, has_r = j < static_cast<int>(b.size());
                    if (has_l && has_r) c[std::size_t(j)] = 0.5 * (b[std::size_t(j - 1)] + b[std::size_t(j)]);
                    else if (has_r) c[std::size_t(j)] = b[std::size_t(j)];
                    else if (has_l) c[std::size_t(j)] = b[std::size_t(j - 1)];
                    else c[std::size_t(j)] = 0.0;
                }
            }
        } else {
            if (static_cast<int>(spec.centers.size()) != d)
                throw ConfigError("partition centers must cover every axis");
            centers = std::move(spec.centers);
            for (int a = 0; a < d; ++a)
                if (static_cast<int>(centers[std::size_t(a)].size()) != axis_cells[std::size_t(a)])
                    throw ConfigError("partition centers must have one entry per cell");
        }
    }

    // Boundary points belong to the cell on their right (cells are closed on
    // the left).  Returns -1 outside an explicit box.
    int locate(const double* x) const {
        int idx = 0;
        for (int a = 0; a < d; ++a) {
            const double v = x[a];
            if (!lo.empty() && (v < lo[std::size_t(a)] || v > hi[std::size_t(a)])) return -1;
            const auto& b = bp[std::size_t(a)];
            const int j = static_cast<int>(std::upper_bound(b.begin(), b.end(), v) - b.begin());
            idx += j * stride[std::size_t(a)];
        }
        return idx;
    }

    void axis_indices(int cell, int* out) const {
        for (int a = 0; a < d; ++a) {
            out[a] = cell / stride[std::size_t(a)];
            cell %= stride[std::size_t(a)];
        }
    }
};

class HypercubeBasis final : public Basis {
public:
    explicit HypercubeBasis(HypercubeSpec spec) : g_(std::move(spec)) {}
    int dim() const override { return g_.ncells; }
    int ambient() const override { return g_.d; }
    void features(const double* x, double* out) const override {
        std::fill(out, out + g_.ncells, 0.0);
        const int c = g_.locate(x);
        if (c >= 0) out[c] = 1.0;
    }
    bool partitioned() const override { return true; }
    int cells() const override { return g_.ncells; }
    int cell_width() const override { return 1; }
    int cell_of(const double* x) const override { return g_.locate(x); }
    void cell_features(const double*, double* out) const override { out[0] = 1.0; }
    std::string describe() const override {
        std::ostringstream os;
        os << "hypercube-indicator[";
        for (int a = 0; a < g_.d; ++a) os << (a ? "x" : "") << g_.axis_cells[std::size_t(a)];
        os << (g_.lo.empty() ? ",unbounded]" : ",boxed]");
        return os.str();
    }
    const Geometry& geometry() const { return g_; }

private:
    Geometry g_;
};

class LocalAffineBasis final : public Basis {
public:
    explicit LocalAffineBasis(HypercubeSpec spec) : g_(std::move(spec)), cw_(1 + g_.d) {}
    int dim() const override { return g_.ncells * cw_; }
    int ambient() const override { return g_.d; }
    void features(const double* x, double* out) const override {
        std::fill(out, out + dim(), 0.0);
        const int c = g_.locate(x);
        if (c >= 0) cell_features_at(c, x, out + std::size_t(c) * cw_);
    }
    bool partitioned() const override { return true; }
    int cells() const override { return g_.ncells; }
    int cell_width() const override { return cw_; }
    int cell_of(const double* x) const override { return g_.locate(x); }
    void cell_features(const double* x, double* out) const override {
        const int c = g_.locate(x);
        cell_features_at(c >= 0 ? c : 0, x, out);
    }
    std::string describe() const override {
        std::ostringstream os;
        os << "hypercube-affine[";
        for (int a = 0; a < g_.d; ++a) os << (a ? "x" : "") << g_.axis_cells[std::size_t(a)];
        os << (g_.lo.empty() ? ",unbounded]" : ",boxed]");
        return os.str();
    }

private:
    void cell_features_at(int cell, const double* x, double* out) const {
        out[0] = 1.0;
        int ai[16];
        g_.axis_indices(cell, ai);
        for (int a = 0; a < g_.d; ++a)
            out[1 + a] = x[a] - g_.centers[std::size_t(a)][std::size_t(ai[a])];
    }
    Geometry g_;
    int cw_;
};

class HermiteBasis final : public Basis {
public:
    HermiteBasis(int degree, double t) : deg_(degree), t_(t), inv_sqrt_t_(1.0 / std::sqrt(t)) {
        scale_.resize(std::size_t(deg_) + 1);
        double fact = 1.0;
        for (int j = 0; j <= deg_; ++j) {
            if (j > 0) fact *= j;
            scale_[std::size_t(j)] = 1.0 / std::sqrt(fact);
        }
    }
    int dim() const override { return deg_ + 1; }
    int ambient() const override { return 1; }
    void features(const double* x, double* out) const override {
        // Probabilists' Hermite recurrence in the normalised variable.
        const double s = x[0] * inv_sqrt_t_;
        double hm = 0.0, h = 1.0;
        out[0] = scale_[0];
        for (int j = 1; j <= deg_; ++j) {
            const double hn = s * h - (j - 1) * hm;
            hm = h;
            h = hn;
            out[j] = h * scale_[std::size_t(j)];
        }
    }
    std::string describe() const override {
        std::ostringstream os;
        os << "hermite[deg=" << deg_ << ",t=" << t_ << "]";
        return os.str();
    }

private:
    int deg_;
    double t_, inv_sqrt_t_;
    std::vector<double> scale_;
};

} // namespace

BasisPtr make_constant_basis(int d) {
    if (d < 1) throw ConfigError("state dimension must be positive");
    return std::make_shared<ConstantBasis>(d);
}

BasisPtr make_hypercube_basis(HypercubeSpec spec) {
    return std::make_shared<HypercubeBasis>(std::move(spec));
}

BasisPtr make_local_affine_basis(HypercubeSpec spec) {
    auto b = std::make_shared<LocalAffineBasis>(std::move(spec));
    if (b->ambient() > 15) throw ConfigError("affine cells support at most 15 axes");
    return b;
}

BasisPtr make_hermite_basis(int degree, double t) {
    if (degree < 0) throw ConfigError("polynomial degree must be >= 0");
    if (t < 0.0) throw ConfigError("time must be >= 0");
    if (t == 0.0 || degree == 0) return make_constant_basis(1);
    return std::make_shared<HermiteBasis>(degree, t);
}

// --- fitted functions --------------------------------------------------—---

void Fitted::eval(const double* x, double* out) const {
    const int a = arity();
    if (basis->partitioned()) {
        const int c = basis->cell_of(x);
        if (c < 0) {
            std::fill(out, out + a, 0.0);
            return;
        }
        const int cw = basis->cell_width();
        double local[16];
        basis->cell_features(x, local);
        for (int j = 0; j < a; ++j) {
            double acc = 0.0;
            const double* col = coef.col(j).data() + std::size_t(c) * cw;
            for (int l = 0; l < cw; ++l) acc += local[l] * col[l];
            out[j] = acc;
        }
    } else {
        const int K = basis->dim();
        double fbuf[64];
        std::vector<double> big;
        double* f = fbuf;
        if (K > 64) {
            big.resize(std::size_t(K));
            f = big.data();
        }
        basis->features(x, f);
        for (int j = 0; j < a; ++j) {
            const double* col = coef.col(j).data();
            double acc = 0.0;
            for (int l = 0; l < K; ++l) acc += f[l] * col[l];
            out[j] = acc;
        }
    }
    if (clamp < kInf)
        for (int j = 0; j < a; ++j) out[j] = std::clamp(out[j], -clamp, clamp);
}

double Fitted::eval1(const double* x) const {
    double v;
    eval(x, &v);
    return v;
}

Fitted truncate(Fitted f, double L) {
    if (L < 0.0) throw ConfigError("truncation level must be >= 0");
    f.clamp = std::min(f.clamp, L);
    return f;
}

// --- accumulator -------------------------------------------------------—---

struct FitAccumulator::Impl {
    BasisPtr basis;
    int arity = 1, K = 0, d = 0, cw = 0, nc = 0;
    bool part = false;

    // Dense tallies: G is K x K (full square), R is arity x K (kernel layout).
    struct Scratch {
        std::vector<double> F;     // dense: featurised block
        std::vector<double> G, R;  // partials (dense or per-cell blocks)
        std::vector<std::int64_t> count; // partition: per-cell sample count
        std::size_t nseen = 0;
        bool used = false;
    };
    std::vector<Scratch> slots;
    std::vector<double> G, R;
    std::vector<std::int64_t> count;
    std::size_t samples = 0;

    std::size_t gsize() const {
        return part ? std::size_t(nc) * cw * cw : std::size_t(K) * K;
    }
    std::size_t rsize() const {
        return part ? std::size_t(nc) * cw * arity : std::size_t(arity) * K;
    }

    void ensure_slot(std::size_t slot) {
        if (slot >= slots.size()) throw Error("fit accumulator: slot out of range");
        Scratch& s = slots[slot];
        if (!s.used) {
            s.G.assign(gsize(), 0.0);
            s.R.assign(rsize(), 0.0);
            if (part) s.count.assign(std::size_t(nc), 0);
            s.used = true;
        }
    }
};

FitAccumulator::FitAccumulator(BasisPtr basis, int arity) : impl_(new Impl) {
    if (!basis) throw ConfigError("fit needs a basis");
    if (arity < 1) throw ConfigError("fit arity must be >= 1");
    impl_->basis = std::move(basis);
    impl_->arity = arity;
    impl_->K = impl_->basis->dim();
    impl_->d = impl_->basis->ambient();
    impl_->part = impl_->basis->partitioned();
    impl_->cw = impl_->part ? impl_->basis->cell_width() : 0;
    impl_->nc = impl_->part ? impl_->basis->cells() : 0;
    if (impl_->part && impl_->cw > 16) throw ConfigError("cell width too large");
    impl_->slots.resize(std::size_t(std::max(1, par::threads())));
    impl_->G.assign(impl_->gsize(), 0.0);
    impl_->R.assign(impl_->rsize(), 0.0);
    if (impl_->part) impl_->count.assign(std::size_t(impl_->nc), 0);
}

FitAccumulator::~FitAccumulator() = default;
FitAccumulator::FitAccumulator(FitAccumulator&&) noexcept = default;

void FitAccumulator::compute(std::size_t slot, const double* X, const double* Y, std::size_t n) {
    Impl& im = *impl_;
    im.ensure_slot(slot);
    Impl::Scratch& s = im.slots[slot];
    s.nseen += n;
    if (im.part) {
        const int cw = im.cw, a = im.arity;
        double local[16];
        for (std::size_t i = 0; i < n; ++i) {
            const double* x = X + i * std::size_t(im.d);
            const int c = im.basis->cell_of(x);
            if (c < 0) continue; // outside the box: contributes nothing
            im.basis->cell_features(x, local);
            ++s.count[std::size_t(c)];
            double* g = s.G.data() + std::size_t(c) * cw * cw;
            for (int p = 0; p < cw; ++p)
                for (int q = 0; q < cw; ++q) g[p * cw + q] = std::fma(local[p], local[q], g[p * cw + q]);
            double* r = s.R.data() + std::size_t(c) * cw * a;
            const double* y = Y + i * std::size_t(a);
            for (int p = 0; p < cw; ++p)
                for (int j = 0; j < a; ++j) r[p * a + j] = std::fma(local[p], y[j], r[p * a + j]);
        }
    } else {
        const std::size_t K = std::size_t(im.K);
        if (s.F.size() < n * K) s.F.resize(n * K);
        for (std::size_t i = 0; i < n; ++i)
            im.basis->features(X + i * std::size_t(im.d), s.F.data() + i * K);
        const auto& kt = kern::active();
        kt.gram_acc(s.G.data(), s.F.data(), n, K);
        kt.rhs_acc(s.R.data(), s.F.data(), Y, n, K, std::size_t(im.arity));
    }
}

void FitAccumulator::commit(std::size_t slot) {
    Impl& im = *impl_;
    im.ensure_slot(slot);
    Impl::Scratch& s = im.slots[slot];
    for (std::size_t i = 0; i < im.G.size(); ++i) im.G[i] += s.G[i];
    for (std::size_t i = 0; i < im.R.size(); ++i) im.R[i] += s.R[i];
    std::fill(s.G.begin(), s.G.end(), 0.0);
    std::fill(s.R.begin(), s.R.end(), 0.0);
    if (im.part) {
        for (std::size_t c = 0; c < im.count.size(); ++c) im.count[c] += s.count[c];
        std::fill(s.count.begin(), s.count.end(), 0);
    }
    im.samples += s.nseen;
    s.nseen = 0;
}

namespace {

// Dense normal-equation ladder: LDLT -> jitter retry -> eigen pseudo-inverse.
Eigen::MatrixXd solve_dense(const Eigen::MatrixXd& G, const Eigen::MatrixXd& B,
                            FitDiagnostics* diag) {
    const double normG = G.norm(), normB = B.norm();
    auto residual_ok = [&](const Eigen::MatrixXd& A) {
        if (!A.allFinite()) return false;
        const double r = (G * A - B).norm();
        const double scale = normG * A.norm() + normB;
        const double rel = scale > 0.0 ? r / scale : r;
        if (diag) diag->rel_residual = rel;
        return rel <= 1e-8;
    };

    Eigen::MatrixXd A = G.ldlt().solve(B);
    if (residual_ok(A)) return A;

    const double jit = 1e-12 * G.trace() / std::max<int>(1, int(G.rows()));
    Eigen::MatrixXd Gj = G;
    Gj.diagonal().array() += std::max(jit, 0.0);
    A = Gj.ldlt().solve(B);
    if (residual_ok(A)) {
        if (diag) diag->jittered = true;
        return A;
    }

    // Minimum-norm solution through the eigen-decomposition (G symmetric PSD).
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(G);
    const auto& ev = es.eigenvalues();
    const double cut = 1e-12 * std::max(ev.cwiseAbs().maxCoeff(), 0.0);
    Eigen::VectorXd inv = ev.unaryExpr([&](double l) { return l > cut && l > 0.0 ? 1.0 / l : 0.0; });
    A = es.eigenvectors() * inv.asDiagonal() * es.eigenvectors().transpose() * B;
    if (diag) {
        diag->pseudo_inverse = true;
        diag->rel_residual = (G * A - B).norm() / std::max(normG * A.norm() + normB, 1e-300);
    }
    return A;
}

} // namespace

Fitted FitAccumulator::solve(double clamp, FitDiagnostics* diag) const {
    return solve_with_rhs(rhs_t(), clamp, diag);
}

Eigen::MatrixXd FitAccumulator::rhs_t() const {
    const Impl& im = *impl_;
    Eigen::MatrixXd rhs(im.arity, im.K);
    if (im.part) {
        // Per-cell layout (cell, local, arity) -> flat (arity, cell*cw+local).
        for (int c = 0; c < im.nc; ++c)
            for (int l = 0; l < im.cw; ++l)
                for (int j = 0; j < im.arity; ++j)
                    rhs(j, c * im.cw + l) = im.R[std::size_t(c) * im.cw * im.arity + std::size_t(l) * im.arity + std::size_t(j)];
    } else {
        for (int j = 0; j < im.arity; ++j)
            for (int l = 0; l < im.K; ++l) rhs(j, l) = im.R[std::size_t(j) * im.K + std::size_t(l)];
    }
    return rhs;
}

Fitted FitAccumulator::solve_with_rhs(const Eigen::MatrixXd& rhs_t, double clamp,
                                      FitDiagnostics* diag) const {
    const Impl& im = *impl_;
    // The Gram side is response-independent, so any arity is acceptable here
    // (slices of rhs_t() included); only the basis dimension must agree.
    const int arity = static_cast<int>(rhs_t.rows());
    if (arity < 1 || rhs_t.cols() != im.K)
        throw Error("fit solve: right-hand side has the wrong shape");
    if (diag) *diag = FitDiagnostics{};

    Fitted f;
    f.basis = im.basis;
    f.clamp = clamp;
    f.coef.resize(im.K, arity);

    if (im.part) {
        std::int64_t total = 0;
        for (auto c : im.count) total += c;
        int empty = 0;
        std::int64_t minc = total > 0 ? std::numeric_limits<std::int64_t>::max() : 0;
        for (int c = 0; c < im.nc; ++c) {
            const std::int64_t n = im.count[std::size_t(c)];
            minc = std::min(minc, n);
            if (n == 0) {
                ++empty;
                f.coef.block(c * im.cw, 0, im.cw, arity).setZero();
                continue;
            }
            if (im.cw == 1) {
                // Indicator cells: the fit is the in-cell mean of the response.
                const double g = im.G[std::size_t(c)];
                for (int j = 0; j < arity; ++j)
                    f.coef(c, j) = g > 0.0 ? rhs_t(j, c) / g : 0.0;
            } else {
                Eigen::MatrixXd Gc(im.cw, im.cw), Bc(im.cw, arity);
                for (int p = 0; p < im.cw; ++p)
                    for (int q = 0; q < im.cw; ++q)
                        Gc(p, q) = im.G[std::size_t(c) * im.cw * im.cw + std::size_t(p) * im.cw + std::size_t(q)];
                for (int p = 0; p < im.cw; ++p)
                    for (int j = 0; j < arity; ++j) Bc(p, j) = rhs_t(j, c * im.cw + p);
                FitDiagnostics local;
                f.coef.block(c * im.cw, 0, im.cw, arity) = solve_dense(Gc, Bc, &local);
                if (diag) {
                    diag->jittered |= local.jittered;
                    diag->pseudo_inverse |= local.pseudo_inverse;
                    diag->rel_residual = std::max(diag->rel_residual, local.rel_residual);
                }
            }
        }
        if (diag) {
            diag->samples = im.samples;
            diag->empty_cells = empty;
            diag->min_cell_mass = im.samples > 0 ? double(minc) / double(im.samples) : 0.0;
        }
    } else {
        Eigen::MatrixXd G(im.K, im.K);
        for (int p = 0; p < im.K; ++p)
            for (int q = 0; q < im.K; ++q) G(p, q) = im.G[std::size_t(p) * im.K + std::size_t(q)];
        f.coef = solve_dense(G, rhs_t.transpose(), diag);
        if (diag) diag->samples = im.samples;
    }
    return f;
}

// --- one-call fits ------------------------------------------------------—--

Fitted ols_fit(BasisPtr basis, const double* X, const double* Y, std::size_t M, int arity,
               double clamp, FitDiagnostics* diag) {
    const int d = basis->ambient();
    FitAccumulator acc(basis, arity);
    par::ordered_blocks(
        M,
        [&](std::size_t slot, std::size_t, std::size_t begin, std::size_t end) {
            acc.compute(slot, X + begin * std::size_t(d), Y + begin * std::size_t(arity),
                        end - begin);
        },
        [&](std::size_t slot, std::size_t) { acc.commit(slot); });
    return acc.solve(clamp, diag);
}

Fitted partition_fit(BasisPtr basis, const double* X, const double* Y, std::size_t M, int arity,
                     double clamp, FitDiagnostics* diag) {
    if (!basis->partitioned())
        throw ConfigError("partition_fit requires a partitioned basis");
    return ols_fit(std::move(basis), X, Y, M, arity, clamp, diag);
}

// --- equiprobable partitions ------------------------------------------—----

PartitionBuild equiprobable_partition(const double* probe, std::size_t Mp, int d,
                                      const std::vector<int>& cells_per_axis) {
    if (d < 1 || static_cast<int>(cells_per_axis.size()) != d)
        throw ConfigError("equiprobable partition: need one cell count per axis");
    if (Mp < 16) throw ConfigError("equiprobable partition: probe sample too small");

    HypercubeSpec spec;
    spec.breakpoints.resize(std::size_t(d));
    spec.centers.resize(std::size_t(d));
    std::vector<double> coord(Mp);
    for (int a = 0; a < d; ++a) {
        const int nc = cells_per_axis[std::size_t(a)];
        if (nc < 1) throw ConfigError("equiprobable partition: cells per axis must be >= 1");
        for (std::size_t m = 0; m < Mp; ++m) coord[m] = probe[m * std::size_t(d) + std::size_t(a)];
        std::sort(coord.begin(), coord.end());
        auto quantile = [&](double level) {
            std::size_t idx = static_cast<std::size_t>(level * double(Mp));
            if (idx >= Mp) idx = Mp - 1;
            return coord[idx];
        };
        auto& b = spec.breakpoints[std::size_t(a)];
        for (int j = 1; j < nc; ++j) b.push_back(quantile(double(j) / nc));
        for (std::size_t j = 1; j < b.size(); ++j)
            if (!(b[j] > b[j - 1]))
                throw ConfigError(
                    "equiprobable partition: axis " + std::to_string(a) +
                    " is degenerate (coinciding quantiles); reduce the cell count");
        auto& c = spec.centers[std::size_t(a)];
        for (int j = 0; j < nc; ++j) c.push_back(quantile((j + 0.5) / nc));
    }

    PartitionBuild out;
    out.spec = spec;
    out.indicator = make_hypercube_basis(spec);
    out.affine = make_local_affine_basis(spec);

    // Smallest cell share of the probe (diagnostic for schedule calibration).
    std::vector<std::int64_t> cnt(std::size_t(out.indicator->cells()), 0);
    for (std::size_t m = 0; m < Mp; ++m) {
        const int c = out.indicator->cell_of(probe + m * std::size_t(d));
        if (c >= 0) ++cnt[std::size_t(c)];
    }
    std::int64_t minc = cnt.empty() ? 0 : *std::min_element(cnt.begin(), cnt.end());
    out.min_cell_mass = double(minc) / double(Mp);
    return out;
}

} // namespace bsde
