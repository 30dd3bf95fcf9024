#include "bsde/forward.hpp"

#include "bsde/common.hpp"
#include "bsde/kernels.hpp"
#include "bsde/parallel.hpp"

#include <cmath>
#include <cstdio>
#include <cstring>
#include <fstream>

namespace bsde {

// --- model builders ----------------------------------------------------—---

Model brownian_model(int d, std::vector<double> x0) {
    if (d < 1) throw ConfigError("brownian model: dimension must be >= 1");
    if (static_cast<int>(x0.size()) != d) throw ConfigError("brownian model: x0 has wrong size");
    Model m;
    m.kind = Model::Kind::brownian;
    m.d = m.q = d;
    m.x0 = std::move(x0);
    return m;
}

Model geometric_model(std::vector<double> x0, std::vector<double> mu, std::vector<double> sigma,
                      std::vector<double> factors, int q) {
    const int d = static_cast<int>(x0.size());
    if (d < 1 || q < 1) throw ConfigError("geometric model: dimensions must be >= 1");
    if (static_cast<int>(mu.size()) != d || static_cast<int>(sigma.size()) != d ||
        static_cast<int>(factors.size()) != d * q)
        throw ConfigError("geometric model: mu/sigma/factors sizes must match x0");
    for (double s : sigma)
        if (!(s >= 0.0)) throw ConfigError("geometric model: volatilities must be >= 0");
    Model m;
    m.kind = Model::Kind::geometric;
    m.d = d;
    m.q = q;
    m.x0 = std::move(x0);
    m.mu = std::move(mu);
    m.loading.resize(std::size_t(d) * q);
    m.lam2.resize(std::size_t(d));
    for (int c = 0; c < d; ++c) {
        double norm2 = 0.0;
        for (int j = 0; j < q; ++j) norm2 += factors[std::size_t(c) * q + j] * factors[std::size_t(c) * q + j];
        if (std::abs(norm2 - 1.0) > 1e-12)
            throw ConfigError("geometric model: factor rows must have unit norm");
        double l2 = 0.0;
        for (int j = 0; j < q; ++j) {
            const double l = sigma[std::size_t(c)] * factors[std::size_t(c) * q + j];
            m.loading[std::size_t(c) * q + j] = l;
            l2 += l * l;
        }
        m.lam2[std::size_t(c)] = l2;
    }
    return m;
}

Model euler_model(int d, int q, std::vector<double> x0,
                  std::function<void(double, const double*, double*)> drift,
                  std::function<void(double, const double*, double*)> diffusion) {
    if (d < 1 || q < 1) throw ConfigError("euler model: dimensions must be >= 1");
    if (static_cast<int>(x0.size()) != d) throw ConfigError("euler model: x0 has wrong size");
    if (!drift || !diffusion) throw ConfigError("euler model: drift and diffusion are required");
    if (d * (1 + q) > 512)
        throw ConfigError("euler model: d*(1+q) must be <= 512 (stepping scratch size)");
    Model m;
    m.kind = Model::Kind::euler;
    m.d = d;
    m.q = q;
    m.x0 = std::move(x0);
    m.drift = std::move(drift);
    m.diffusion = std::move(diffusion);
    return m;
}

// --- stepping ----------------------------------------------------------—---

namespace {

// dw is already scaled by sqrt(dt).
inline void exact_step(const Model& mo, double dt, const double* x, const double* dw, double* out) {
    if (mo.kind == Model::Kind::brownian) {
        for (int c = 0; c < mo.d; ++c) out[c] = x[c] + dw[c];
    } else {
        for (int c = 0; c < mo.d; ++c) {
            double e = (mo.mu[std::size_t(c)] - 0.5 * mo.lam2[std::size_t(c)]) * dt;
            const double* row = mo.loading.data() + std::size_t(c) * mo.q;
            for (int j = 0; j < mo.q; ++j) e += row[j] * dw[j];
            out[c] = x[c] * std::exp(e);
        }
    }
}

inline void euler_step(const Model& mo, double t, double dt, const double* x, const double* dw,
                       double* out, double* scratch /* d + d*q */) {
    switch (mo.kind) {
        case Model::Kind::brownian:
            for (int c = 0; c < mo.d; ++c) out[c] = x[c] + dw[c];
            return;
        case Model::Kind::geometric:
            for (int c = 0; c < mo.d; ++c) {
                double diff = 0.0;
                const double* row = mo.loading.data() + std::size_t(c) * mo.q;
                for (int j = 0; j < mo.q; ++j) diff += row[j] * dw[j];
                out[c] = x[c] + x[c] * (mo.mu[std::size_t(c)] * dt + diff);
            }
            return;
        case Model::Kind::euler: {
            double* b = scratch;
            double* s = scratch + mo.d;
            mo.drift(t, x, b);
            mo.diffusion(t, x, s);
            for (int c = 0; c < mo.d; ++c) {
                double acc = x[c] + b[c] * dt;
                const double* row = s + std::size_t(c) * mo.q;
                for (int j = 0; j < mo.q; ++j) acc += row[j] * dw[j];
                out[c] = acc;
            }
            return;
        }
    }
}

inline void step(const Model& mo, bool exact, double t, double dt, const double* x,
                 const double* dw, double* out, double* scratch) {
    if (exact) exact_step(mo, dt, x, dw, out);
    else euler_step(mo, t, dt, x, dw, out, scratch);
}

void fill_gauss_block(std::uint64_t seed, std::uint64_t cloud, std::uint32_t packed_base, int q,
                      std::size_t m0, std::size_t n, double scale, double* out /* n x q */,
                      std::vector<double>& col) {
    if (col.size() < n) col.resize(n);
    for (int c = 0; c < q; ++c) {
        kern::active().gauss_fill(seed, cloud, static_cast<std::uint32_t>(m0),
                                  static_cast<std::uint32_t>(n), packed_base + std::uint32_t(c),
                                  col.data());
        for (std::size_t j = 0; j < n; ++j) out[j * std::size_t(q) + std::size_t(c)] = scale * col[j];
    }
}

} // namespace

void fill_increments(std::uint64_t seed, std::uint64_t cloud, const TimeGrid& g, int i, int q,
                     std::size_t m0, std::size_t n, double* out) {
    if (i < 0 || i >= g.steps()) throw Error("increment index out of range");
    thread_local std::vector<double> col;
    fill_gauss_block(seed, cloud, rng::pack(rng::Stream::increment, std::uint32_t(i), 0), q, m0,
                     n, std::sqrt(g.dt(i)), out, col);
}

namespace {

void marginal_impl(const Model& model, double t, std::uint64_t seed, std::uint64_t cloud,
                   rng::Stream stream, std::size_t m0, std::size_t n, double* out) {
    if (!model.exact()) throw ConfigError("marginal sampling requires an exact-transition model");
    const int d = model.d, q = model.q;
    if (t == 0.0) {
        for (std::size_t j = 0; j < n; ++j)
            std::memcpy(out + j * std::size_t(d), model.x0.data(), std::size_t(d) * sizeof(double));
        return;
    }
    thread_local std::vector<double> col, gbuf;
    if (gbuf.size() < n * std::size_t(q)) gbuf.resize(n * std::size_t(q));
    fill_gauss_block(seed, cloud, rng::pack(stream, 0, 0), q, m0, n, std::sqrt(t), gbuf.data(),
                     col);
    // One exact transition over [0, t]; gbuf rows are sqrt(t) * N(0, I_q).
    for (std::size_t j = 0; j < n; ++j)
        exact_step(model, t, model.x0.data(), gbuf.data() + j * std::size_t(q),
                   out + j * std::size_t(d));
}

} // namespace

void fill_marginal(const Model& model, double t, std::uint64_t seed, std::uint64_t cloud,
                   std::size_t m0, std::size_t n, double* out) {
    marginal_impl(model, t, seed, cloud, rng::Stream::aux, m0, n, out);
}

// --- level clouds ------------------------------------------------------—---

LevelCloud LevelCloud::simulate(const Model& model, GridPtr fine, GridPtr coarse, std::size_t M,
                                CloudKey key, CoupleMode mode) {
    if (!fine) throw ConfigError("level cloud: fine grid is required");
    if (M == 0) throw ConfigError("level cloud: path count must be positive");
    if (mode == CoupleMode::exact && !model.exact())
        throw ConfigError("level cloud: exact mode requires a brownian/geometric model");
    if (coarse) {
        if (fine->k == 0) throw ConfigError("level cloud: level 0 has no coarser grid");
        if (coarse->k != fine->k - 1)
            throw ConfigError("level cloud: coarse grid must be exactly one level below");
        for (int j = 0; j <= coarse->steps(); ++j)
            if (coarse->t[std::size_t(j)] != fine->t[std::size_t(2 * j)])
                throw ConfigError("level cloud: coarse grid is not nested in the fine grid");
    }
    const int N = fine->steps(), d = model.d, q = model.q;
    const bool coupled = coarse && mode == CoupleMode::euler_coupled;
    std::size_t bytes = (std::size_t(N) + 1) * M * std::size_t(d) * sizeof(double);
    if (coupled) bytes += (std::size_t(N / 2) + 1) * M * std::size_t(d) * sizeof(double);
    check_budget(bytes, "level cloud (k=" + std::to_string(fine->k) + ", M=" + std::to_string(M) + ")");

    LevelCloud cl;
    cl.model_ = model;
    cl.fine_ = fine;
    cl.coarse_ = coarse;
    cl.M_ = M;
    cl.key_ = key;
    cl.mode_ = mode;
    cl.states_.resize((std::size_t(N) + 1) * M * std::size_t(d));
    if (coupled) cl.coarse_states_.resize((std::size_t(N / 2) + 1) * M * std::size_t(d));

    const bool exact = mode == CoupleMode::exact;

    // Time 0: replicate the start state.
    par::for_blocks(M, [&](std::size_t, std::size_t b0, std::size_t b1) {
        for (std::size_t m = b0; m < b1; ++m) {
            std::memcpy(cl.states_.data() + m * std::size_t(d), model.x0.data(),
                        std::size_t(d) * sizeof(double));
            if (coupled)
                std::memcpy(cl.coarse_states_.data() + m * std::size_t(d), model.x0.data(),
                            std::size_t(d) * sizeof(double));
        }
    });

    const std::size_t plane = M * std::size_t(d);
    if (!coupled) {
        for (int i = 0; i < N; ++i) {
            const double t = fine->t[std::size_t(i)], dt = fine->dt(i);
            par::for_blocks(M, [&](std::size_t, std::size_t b0, std::size_t b1) {
                const std::size_t n = b1 - b0;
                thread_local std::vector<double> dw;
                if (dw.size() < n * std::size_t(q)) dw.resize(n * std::size_t(q));
                fill_increments(key.seed, key.id, *fine, i, q, b0, n, dw.data());
                double scratch[512];
                const double* src = cl.states_.data() + std::size_t(i) * plane;
                double* dst = cl.states_.data() + (std::size_t(i) + 1) * plane;
                for (std::size_t j = 0; j < n; ++j) {
                    const std::size_t m = b0 + j;
                    step(model, exact, t, dt, src + m * std::size_t(d),
                         dw.data() + j * std::size_t(q), dst + m * std::size_t(d), scratch);
                }
            });
        }
    } else {
        // Coupled Euler chains: fine steps in pairs, coarse step driven by the
        // summed increments of the pair.
        const std::size_t cplane = plane;
        for (int j2 = 0; j2 < N / 2; ++j2) {
            const int i0 = 2 * j2, i1 = 2 * j2 + 1;
            par::for_blocks(M, [&](std::size_t, std::size_t b0, std::size_t b1) {
                const std::size_t n = b1 - b0;
                thread_local std::vector<double> dw0, dw1;
                if (dw0.size() < n * std::size_t(q)) dw0.resize(n * std::size_t(q));
                if (dw1.size() < n * std::size_t(q)) dw1.resize(n * std::size_t(q));
                fill_increments(key.seed, key.id, *fine, i0, q, b0, n, dw0.data());
                fill_increments(key.seed, key.id, *fine, i1, q, b0, n, dw1.data());
                double scratch[512];
                double dwc[64];
                const double* src0 = cl.states_.data() + std::size_t(i0) * plane;
                double* dst0 = cl.states_.data() + std::size_t(i1) * plane;
                double* dst1 = cl.states_.data() + (std::size_t(i1) + 1) * plane;
                const double* csrc = cl.coarse_states_.data() + std::size_t(j2) * cplane;
                double* cdst = cl.coarse_states_.data() + (std::size_t(j2) + 1) * cplane;
                const double tc = coarse->t[std::size_t(j2)], dtc = coarse->dt(j2);
                for (std::size_t j = 0; j < n; ++j) {
                    const std::size_t m = b0 + j;
                    const double* w0 = dw0.data() + j * std::size_t(q);
                    const double* w1 = dw1.data() + j * std::size_t(q);
                    step(model, false, fine->t[std::size_t(i0)], fine->dt(i0),
                         src0 + m * std::size_t(d), w0, dst0 + m * std::size_t(d), scratch);
                    step(model, false, fine->t[std::size_t(i1)], fine->dt(i1),
                         dst0 + m * std::size_t(d), w1, dst1 + m * std::size_t(d), scratch);
                    for (int c = 0; c < q; ++c) dwc[c] = w0[c] + w1[c];
                    step(model, false, tc, dtc, csrc + m * std::size_t(d), dwc,
                         cdst + m * std::size_t(d), scratch);
                }
            });
        }
    }
    return cl;
}

const double* LevelCloud::state(int i) const {
    if (i < 0 || i > fine_->steps()) throw Error("level cloud: time index out of range");
    return states_.data() + std::size_t(i) * M_ * std::size_t(model_.d);
}

const double* LevelCloud::coarse_state(int j) const {
    if (!coarse_) throw Error("level cloud: no coarse grid attached");
    if (j < 0 || j > coarse_->steps()) throw Error("level cloud: coarse index out of range");
    if (mode_ == CoupleMode::euler_coupled)
        return coarse_states_.data() + std::size_t(j) * M_ * std::size_t(model_.d);
    return state(2 * j);
}

void LevelCloud::fine_dw(int i, std::size_t m0, std::size_t n, double* out) const {
    fill_increments(key_.seed, key_.id, *fine_, i, model_.q, m0, n, out);
}

void LevelCloud::coarse_dw(int j, std::size_t m0, std::size_t n, double* out) const {
    if (!coarse_) throw Error("level cloud: no coarse grid attached");
    // Coarse increment = sum of the two fine increments it spans.
    const int q = model_.q;
    thread_local std::vector<double> tmp;
    if (tmp.size() < n * std::size_t(q)) tmp.resize(n * std::size_t(q));
    fill_increments(key_.seed, key_.id, *fine_, 2 * j, q, m0, n, out);
    fill_increments(key_.seed, key_.id, *fine_, 2 * j + 1, q, m0, n, tmp.data());
    for (std::size_t i = 0; i < n * std::size_t(q); ++i) out[i] += tmp[i];
}

// --- per-time-point clouds ----------------------------------------------—--

TimePointCloud TimePointCloud::simulate(const Model& model, GridPtr grid, int i0, std::size_t M,
                                        CloudKey key, CoupleMode mode) {
    if (!grid) throw ConfigError("time-point cloud: grid is required");
    const int N = grid->steps();
    if (i0 < 0 || i0 > N) throw ConfigError("time-point cloud: start index out of range");
    if (M == 0) throw ConfigError("time-point cloud: path count must be positive");
    if (mode == CoupleMode::exact && !model.exact())
        throw ConfigError("time-point cloud: exact mode requires a brownian/geometric model");
    const int d = model.d, q = model.q;
    const std::size_t stored = std::size_t(N - i0) + 1;
    check_budget(stored * M * std::size_t(d) * sizeof(double),
                 "time-point cloud (i=" + std::to_string(i0) + ", M=" + std::to_string(M) + ")");

    TimePointCloud cl;
    cl.model_ = model;
    cl.grid_ = grid;
    cl.i0_ = i0;
    cl.M_ = M;
    cl.key_ = key;
    cl.states_.resize(stored * M * std::size_t(d));
    const bool exact = mode == CoupleMode::exact;
    const std::size_t plane = M * std::size_t(d);

    par::for_blocks(M, [&](std::size_t, std::size_t b0, std::size_t b1) {
        const std::size_t n = b1 - b0;
        double* first = cl.states_.data();
        if (exact) {
            // One exact transition to t_{i0} on the init sub-stream.
            thread_local std::vector<double> buf;
            if (buf.size() < n * std::size_t(d)) buf.resize(n * std::size_t(d));
            marginal_impl(model, grid->t[std::size_t(i0)], key.seed, key.id, rng::Stream::init,
                          b0, n, buf.data());
            for (std::size_t j = 0; j < n; ++j)
                std::memcpy(first + (b0 + j) * std::size_t(d), buf.data() + j * std::size_t(d),
                            std::size_t(d) * sizeof(double));
        } else {
            // Unstored Euler steps from time 0 to t_{i0}.
            thread_local std::vector<double> xa, xb, dw;
            if (xa.size() < n * std::size_t(d)) xa.resize(n * std::size_t(d));
            if (xb.size() < n * std::size_t(d)) xb.resize(n * std::size_t(d));
            if (dw.size() < n * std::size_t(q)) dw.resize(n * std::size_t(q));
            for (std::size_t j = 0; j < n; ++j)
                std::memcpy(xa.data() + j * std::size_t(d), model.x0.data(),
                            std::size_t(d) * sizeof(double));
            double scratch[512];
            for (int i = 0; i < i0; ++i) {
                fill_increments(key.seed, key.id, *grid, i, q, b0, n, dw.data());
                for (std::size_t j = 0; j < n; ++j)
                    euler_step(model, grid->t[std::size_t(i)], grid->dt(i),
                               xa.data() + j * std::size_t(d), dw.data() + j * std::size_t(q),
                               xb.data() + j * std::size_t(d), scratch);
                std::swap(xa, xb);
            }
            for (std::size_t j = 0; j < n; ++j)
                std::memcpy(first + (b0 + j) * std::size_t(d), xa.data() + j * std::size_t(d),
                            std::size_t(d) * sizeof(double));
        }
        // Stored steps i0 .. N-1.
        thread_local std::vector<double> dw;
        if (dw.size() < n * std::size_t(q)) dw.resize(n * std::size_t(q));
        double scratch[512];
        for (int i = i0; i < N; ++i) {
            fill_increments(key.seed, key.id, *grid, i, q, b0, n, dw.data());
            const double* src = cl.states_.data() + std::size_t(i - i0) * plane;
            double* dst = cl.states_.data() + std::size_t(i - i0 + 1) * plane;
            for (std::size_t j = 0; j < n; ++j) {
                const std::size_t m = b0 + j;
                step(model, exact, grid->t[std::size_t(i)], grid->dt(i), src + m * std::size_t(d),
                     dw.data() + j * std::size_t(q), dst + m * std::size_t(d), scratch);
            }
        }
    });
    return cl;
}

const double* TimePointCloud::state(int i) const {
    if (i < i0_ || i > grid_->steps()) throw Error("time-point cloud: index out of range");
    return states_.data() + std::size_t(i - i0_) * M_ * std::size_t(model_.d);
}

void TimePointCloud::dw(int i, std::size_t m0, std::size_t n, double* out) const {
    if (i < i0_) throw Error("time-point cloud: increment index before start");
    fill_increments(key_.seed, key_.id, *grid_, i, model_.q, m0, n, out);
}

// --- path streaming ------------------------------------------------------—-

void stream_paths(const Model& model, const TimeGrid& g, std::size_t M, CloudKey key,
                  const std::function<void(std::size_t, std::size_t, std::size_t, std::size_t,
                                           const double*)>& compute,
                  const std::function<void(std::size_t, std::size_t)>& commit, CoupleMode mode) {
    const int N = g.steps(), d = model.d, q = model.q;
    const bool exact = mode == CoupleMode::exact;
    if (exact && !model.exact())
        throw ConfigError("path streaming: exact mode requires a brownian/geometric model");
    const std::size_t bs = par::block_size(M);
    const std::size_t nslots = std::size_t(par::threads());
    check_budget(nslots * (std::size_t(N) + 1) * bs * std::size_t(d) * sizeof(double),
                 "path streaming scratch (k=" + std::to_string(g.k) + ")");

    std::vector<std::vector<double>> states(nslots), dws(nslots);
    par::ordered_blocks(
        M,
        [&](std::size_t slot, std::size_t b, std::size_t b0, std::size_t b1) {
            const std::size_t n = b1 - b0;
            auto& st = states[slot];
            auto& dw = dws[slot];
            if (st.size() < (std::size_t(N) + 1) * n * std::size_t(d))
                st.resize((std::size_t(N) + 1) * bs * std::size_t(d));
            if (dw.size() < n * std::size_t(q)) dw.resize(bs * std::size_t(q));
            for (std::size_t j = 0; j < n; ++j)
                std::memcpy(st.data() + j * std::size_t(d), model.x0.data(),
                            std::size_t(d) * sizeof(double));
            double sc[512];
            for (int i = 0; i < N; ++i) {
                fill_increments(key.seed, key.id, g, i, q, b0, n, dw.data());
                const double* src = st.data() + std::size_t(i) * n * std::size_t(d);
                double* dst = st.data() + (std::size_t(i) + 1) * n * std::size_t(d);
                for (std::size_t j = 0; j < n; ++j)
                    step(model, exact, g.t[std::size_t(i)], g.dt(i), src + j * std::size_t(d),
                         dw.data() + j * std::size_t(q), dst + j * std::size_t(d), sc);
            }
            compute(slot, b, b0, n, st.data());
        },
        [&](std::size_t slot, std::size_t b) {
            if (commit) commit(slot, b);
        });
}

// --- serialisation -----------------------------------------------------—---

namespace {
constexpr char kMagic[8] = {'B', 'S', 'D', 'E', 'C', 'L', '0', '1'};

void put_u64(std::ofstream& os, std::uint64_t v) {
    os.write(reinterpret_cast<const char*>(&v), sizeof v);
}
std::uint64_t get_u64(std::ifstream& is) {
    std::uint64_t v = 0;
    is.read(reinterpret_cast<char*>(&v), sizeof v);
    return v;
}
} // namespace

void LevelCloud::dump(const std::string& path) const {
    std::ofstream os(path, std::ios::binary | std::ios::trunc);
    if (!os) throw Error("cannot open '" + path + "' for writing");
    os.write(kMagic, sizeof kMagic);
    put_u64(os, static_cast<std::uint64_t>(model_.kind));
    put_u64(os, std::uint64_t(model_.d));
    put_u64(os, std::uint64_t(model_.q));
    put_u64(os, std::uint64_t(fine_->k));
    put_u64(os, M_);
    put_u64(os, static_cast<std::uint64_t>(mode_));
    put_u64(os, key_.seed);
    put_u64(os, key_.id);
    put_u64(os, coarse_ ? 1 : 0);
    put_u64(os, coarse_states_.empty() ? 0 : 1);
    os.write(reinterpret_cast<const char*>(states_.data()),
             std::streamsize(states_.size() * sizeof(double)));
    if (!coarse_states_.empty())
        os.write(reinterpret_cast<const char*>(coarse_states_.data()),
                 std::streamsize(coarse_states_.size() * sizeof(double)));
    if (!os) throw Error("write to '" + path + "' failed");
}

LevelCloud LevelCloud::restore(const std::string& path, const Model& model, GridPtr fine,
                               GridPtr coarse) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw Error("cannot open '" + path + "'");
    char magic[8];
    is.read(magic, sizeof magic);
    if (!is || std::memcmp(magic, kMagic, sizeof kMagic) != 0)
        throw Error("'" + path + "' is not a cloud dump");
    const auto kind = static_cast<Model::Kind>(get_u64(is));
    const auto d = get_u64(is), q = get_u64(is), k = get_u64(is), M = get_u64(is);
    const auto mode = static_cast<CoupleMode>(get_u64(is));
    const auto seed = get_u64(is), id = get_u64(is);
    const auto has_coarse = get_u64(is), has_cstates = get_u64(is);
    if (kind != model.kind || d != std::uint64_t(model.d) || q != std::uint64_t(model.q))
        throw Error("cloud dump '" + path + "' does not match the given model");
    if (!fine || std::uint64_t(fine->k) != k)
        throw Error("cloud dump '" + path + "' was written for level " + std::to_string(k));
    if ((has_coarse != 0) != (coarse != nullptr))
        throw Error("cloud dump '" + path + "' coarse-grid mismatch");

    const int N = fine->steps();
    std::size_t bytes = (std::size_t(N) + 1) * M * std::size_t(d) * sizeof(double);
    if (has_cstates) bytes += (std::size_t(N / 2) + 1) * M * std::size_t(d) * sizeof(double);
    check_budget(bytes, "cloud restore");

    LevelCloud cl;
    cl.model_ = model;
    cl.fine_ = std::move(fine);
    cl.coarse_ = std::move(coarse);
    cl.M_ = M;
    cl.key_ = {seed, id};
    cl.mode_ = mode;
    cl.states_.resize((std::size_t(N) + 1) * M * std::size_t(d));
    is.read(reinterpret_cast<char*>(cl.states_.data()),
            std::streamsize(cl.states_.size() * sizeof(double)));
    if (has_cstates) {
        cl.coarse_states_.resize((std::size_t(N / 2) + 1) * M * std::size_t(d));
        is.read(reinterpret_cast<char*>(cl.coarse_states_.data()),
                std::streamsize(cl.coarse_states_.size() * sizeof(double)));
    }
    if (!is) throw Error("cloud dump '" + path + "' is truncated");
    return cl;
}

} // namespace bsde
