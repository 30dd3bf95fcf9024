#include "bsde/config.hpp"

#include <cmath>
#include <cstdio>
#include <fstream>
#include <initializer_list>
#include <sstream>

#include <json.hpp>

namespace bsde {
namespace {

using nlohmann::json;

[[noreturn]] void fail(const std::string& where, const std::string& what) {
    throw ConfigError(where + ": " + what);
}

void check_keys(const json& j, const std::string& where,
                std::initializer_list<const char*> allowed) {
    for (auto it = j.begin(); it != j.end(); ++it) {
        bool ok = false;
        for (const char* a : allowed)
            if (it.key() == a) {
                ok = true;
                break;
            }
        if (!ok) fail(where + "/" + it.key(), "unknown key");
    }
}

const json* find(const json& j, const char* key) {
    auto it = j.find(key);
    return it == j.end() ? nullptr : &*it;
}

double read_double(const json& v, const std::string& where) {
    if (!v.is_number()) fail(where, "expected a number");
    return v.get<double>();
}

std::uint64_t read_u64(const json& v, const std::string& where) {
    if (!v.is_number_unsigned()) fail(where, "expected a non-negative integer");
    return v.get<std::uint64_t>();
}

int read_int(const json& v, const std::string& where, int lo, int hi) {
    if (!v.is_number_integer()) fail(where, "expected an integer");
    const long long x = v.get<long long>();
    if (x < lo || x > hi)
        fail(where, "out of range [" + std::to_string(lo) + ", " + std::to_string(hi) + "]");
    return int(x);
}

std::string read_str(const json& v, const std::string& where) {
    if (!v.is_string()) fail(where, "expected a string");
    return v.get<std::string>();
}

BasisSpec parse_basis(const json& j, const std::string& where) {
    if (!j.is_object()) fail(where, "expected an object");
    check_keys(j, where, {"family", "degree", "cells_per_dim", "mass_cut"});
    BasisSpec b;
    if (const json* v = find(j, "family")) b.family = read_str(*v, where + "/family");
    if (b.family != "hermite" && b.family != "cells" && b.family != "affine-cells" &&
        b.family != "geometric-cells" && b.family != "constant")
        fail(where + "/family",
             "'" + b.family + "' is not one of hermite/cells/affine-cells/geometric-cells/constant");
    if (const json* v = find(j, "degree")) b.degree = read_int(*v, where + "/degree", 0, 30);
    if (const json* v = find(j, "cells_per_dim"))
        b.cells_per_dim = read_int(*v, where + "/cells_per_dim", 1, 4096);
    if (const json* v = find(j, "mass_cut")) {
        b.mass_cut = read_double(*v, where + "/mass_cut");
        if (!(b.mass_cut > 0.0 && b.mass_cut < 0.5))
            fail(where + "/mass_cut", "must lie in (0, 0.5)");
    }
    return b;
}

ScheduleSpec parse_schedule(const json& j, const std::string& where) {
    if (!j.is_object()) fail(where, "expected an object");
    check_keys(j, where,
               {"mode", "base", "exponent", "m", "epsilon", "c_k", "c_m", "residual_m"});
    ScheduleSpec s;
    if (const json* v = find(j, "mode")) s.mode = read_str(*v, where + "/mode");
    if (s.mode != "scaled" && s.mode != "flat" && s.mode != "explicit" && s.mode != "calibrate")
        fail(where + "/mode", "'" + s.mode + "' is not one of scaled/flat/explicit/calibrate");
    if (const json* v = find(j, "base")) {
        s.base = read_double(*v, where + "/base");
        if (!(s.base > 0)) fail(where + "/base", "must be positive");
    }
    if (const json* v = find(j, "exponent")) s.exponent = read_int(*v, where + "/exponent", 0, 8);
    if (const json* v = find(j, "epsilon")) {
        s.epsilon = read_double(*v, where + "/epsilon");
        if (!(s.epsilon > 0)) fail(where + "/epsilon", "must be positive");
    }
    if (const json* v = find(j, "c_k")) {
        s.c_k = read_double(*v, where + "/c_k");
        if (!(s.c_k > 0)) fail(where + "/c_k", "must be positive");
    }
    if (const json* v = find(j, "c_m")) {
        s.c_m = read_double(*v, where + "/c_m");
        if (!(s.c_m > 0)) fail(where + "/c_m", "must be positive");
    }
    if (const json* v = find(j, "residual_m"))
        s.residual_m = read_u64(*v, where + "/residual_m");

    const json* m = find(j, "m");
    if (s.mode == "flat") {
        if (!m) fail(where, "flat schedule requires key m");
        s.m_flat = read_u64(*m, where + "/m");
        if (s.m_flat == 0) fail(where + "/m", "must be positive");
    } else if (s.mode == "explicit") {
        if (!m) fail(where, "explicit schedule requires key m");
        if (!m->is_object())
            fail(where + "/m", "expected an object mapping k to path counts");
        for (auto it = m->begin(); it != m->end(); ++it) {
            const std::string mw = where + "/m/" + it.key();
            int k = -1;
            try {
                std::size_t pos = 0;
                k = std::stoi(it.key(), &pos);
                if (pos != it.key().size()) k = -1;
            } catch (const std::exception&) {
                k = -1;
            }
            if (k < 0 || k > kMaxLevel) fail(mw, "key must be a level in [0, 20]");
            std::vector<std::uint64_t> counts;
            if (it.value().is_array()) {
                for (std::size_t a = 0; a < it.value().size(); ++a)
                    counts.push_back(read_u64(it.value()[a], mw + "[" + std::to_string(a) + "]"));
            } else {
                counts.push_back(read_u64(it.value(), mw));
            }
            if (counts.empty()) fail(mw, "path-count list is empty");
            for (std::uint64_t c : counts)
                if (c == 0) fail(mw, "path counts must be positive");
            s.m_explicit[k] = counts;
        }
        if (s.m_explicit.empty()) fail(where + "/m", "no levels given");
    } else if (m) {
        fail(where + "/m", "key m is only valid for flat/explicit schedules");
    }
    return s;
}

SchemeKind parse_scheme(const json& v, const std::string& where) {
    return scheme_from_string(read_str(v, where));
}

// ---- resolution helpers --------------------------------------------------

EngineKind engine_for(SchemeKind s, bool has_driver) {
    switch (s) {
        case SchemeKind::ml: return has_driver ? EngineKind::split_ml : EngineKind::multilevel;
        case SchemeKind::mdp:
        case SchemeKind::mdp2:
            return has_driver ? EngineKind::multistep_full : EngineKind::terminal_cloud;
        case SchemeKind::split_ml: return EngineKind::split_ml;
        case SchemeKind::split_mdp: return EngineKind::split_single;
    }
    throw ConfigError("unknown scheme value");
}

bool linear_is_multilevel(EngineKind e) {
    return e == EngineKind::multilevel || e == EngineKind::split_ml;
}

bool has_residual_part(EngineKind e) {
    return e == EngineKind::split_ml || e == EngineKind::split_single;
}

Schedule linear_schedule(const ExperimentConfig& cfg, const Problem& pb, SchemeKind s,
                         EngineKind e, int k, std::size_t basis_dim) {
    const ScheduleSpec& sp = cfg.schedule;
    const bool multi = linear_is_multilevel(e);
    const std::string tag = "scheme " + to_string(s) + " k=" + std::to_string(k);

    if (sp.mode == "scaled") {
        const int ex = sp.exponent >= 0 ? sp.exponent : (s == SchemeKind::mdp2 ? 2 : 1);
        const double top = std::ceil(sp.base * double(basis_dim) * std::ldexp(1.0, ex * k));
        if (!(top >= 1) || top > 9e15)
            throw ConfigError("schedule: scaled path count out of range for " + tag);
        const std::uint64_t m_top = std::uint64_t(top);
        if (!multi) return Schedule{m_top};
        Schedule M(std::size_t(k) + 1);
        for (int j = 0; j <= k; ++j) {
            const double mj = double(m_top) * std::ldexp(1.0, k - j);
            if (mj > 9e15)
                throw ConfigError("schedule: scaled path count overflows at level " +
                                  std::to_string(j) + " for " + tag);
            M[std::size_t(j)] = std::uint64_t(mj);
        }
        return M;
    }
    if (sp.mode == "flat") {
        if (!multi) return Schedule{sp.m_flat};
        return Schedule(std::size_t(k) + 1, sp.m_flat);
    }
    if (sp.mode == "explicit") {
        auto it = sp.m_explicit.find(k);
        if (it == sp.m_explicit.end())
            throw ConfigError("schedule: explicit m has no entry for k=" + std::to_string(k));
        const std::vector<std::uint64_t>& counts = it->second;
        if (multi) {
            if (counts.size() != std::size_t(k) + 1)
                throw ConfigError("schedule: explicit m[" + std::to_string(k) + "] needs " +
                                  std::to_string(k + 1) + " per-level entries, got " +
                                  std::to_string(counts.size()));
            return Schedule(counts.begin(), counts.end());
        }
        if (counts.size() != 1)
            throw ConfigError("schedule: explicit m[" + std::to_string(k) +
                              "] needs a single entry for a single-cloud scheme, got " +
                              std::to_string(counts.size()));
        return Schedule{counts[0]};
    }
    // calibrate
    const double eps = sp.epsilon > 0 ? sp.epsilon : std::ldexp(1.0, -k);
    GridFamily family(pb.T, cfg.grid.beta);
    CalibratedSchedule cs =
        calibrate_schedule(family, k, eps, pb.model.d, pb.theta, sp.c_k, sp.c_m);
    if (multi) return cs.M;
    return Schedule{cs.M_single};
}

struct PeakTracker {
    std::uint64_t bytes = 0;
    std::string site;
    void consider(std::uint64_t b, const std::string& s) {
        if (b > bytes) {
            bytes = b;
            site = s;
        }
    }
};

// Mirrors the allocations of the solvers (exact-transition clouds): the
// multilevel solver materialises one level cloud at a time, the multistep
// solver one time-point cloud at a time, and the single-cloud baseline only
// streams fixed-size blocks.
void estimate_peak(ResolvedRun& r, int d) {
    PeakTracker peak;
    const std::uint64_t dd = std::uint64_t(d), w = sizeof(double);
    if (linear_is_multilevel(r.engine)) {
        for (int j = 0; j < int(r.m_linear.size()); ++j) {
            const std::uint64_t Mj = r.m_linear[std::size_t(j)];
            const std::uint64_t pts = (std::uint64_t(1) << j) + 1;
            peak.consider(pts * Mj * dd * w + 2 * Mj * w,
                          "level " + std::to_string(j) + " cloud (M=" + std::to_string(Mj) + ")");
        }
    } else {
        const std::uint64_t M = r.m_linear[0];
        const std::uint64_t pts = (std::uint64_t(1) << r.k) + 1;
        if (r.engine == EngineKind::terminal_cloud) {
            const std::uint64_t block = std::min<std::uint64_t>(M, 16384);
            peak.consider(pts * block * dd * w, "streamed cloud block (M=" + std::to_string(M) + ")");
        } else {
            peak.consider(pts * M * dd * w + M * w,
                          "time-point cloud at i=0 (M=" + std::to_string(M) + ")");
        }
    }
    if (r.m_residual > 0) {
        const std::uint64_t pts = (std::uint64_t(1) << r.k) + 1;
        peak.consider(pts * r.m_residual * dd * w + r.m_residual * w,
                      "residual time-point cloud at i=0 (M=" + std::to_string(r.m_residual) + ")");
    }
    r.peak_bytes = peak.bytes;
    r.peak_site = peak.site;
}

double run_cost(const ResolvedRun& r) {
    double cost = 0.0;
    const double N = std::ldexp(1.0, r.k);
    if (linear_is_multilevel(r.engine)) {
        for (int j = 0; j < int(r.m_linear.size()); ++j)
            cost += double(r.m_linear[std::size_t(j)]) * std::ldexp(1.0, j);
    } else if (r.engine == EngineKind::terminal_cloud) {
        cost += double(r.m_linear[0]) * N;
    } else {
        cost += double(r.m_linear[0]) * N * (N + 1) / 2;
    }
    if (r.m_residual > 0) cost += double(r.m_residual) * N * (N + 1) / 2;
    return cost;
}

// ---- canonical JSON forms -------------------------------------------------

json basis_to_json(const BasisSpec& b) {
    json j;
    j["family"] = b.family;
    j["degree"] = b.degree;
    j["cells_per_dim"] = b.cells_per_dim;
    if (b.mass_cut > 0) j["mass_cut"] = b.mass_cut;
    return j;
}

json schedule_to_json(const ScheduleSpec& s) {
    json j;
    j["mode"] = s.mode;
    j["base"] = s.base;
    if (s.exponent >= 0) j["exponent"] = s.exponent;
    if (s.mode == "flat") j["m"] = s.m_flat;
    if (s.mode == "explicit") {
        json m = json::object();
        for (const auto& [k, counts] : s.m_explicit) m[std::to_string(k)] = counts;
        j["m"] = m;
    }
    if (s.epsilon > 0) j["epsilon"] = s.epsilon;
    j["c_k"] = s.c_k;
    j["c_m"] = s.c_m;
    if (s.residual_m > 0) j["residual_m"] = s.residual_m;
    return j;
}

// The plan body without environment-dependent fields; hashing covers exactly
// this, so a plan fingerprint is stable across machines and output layouts.
json plan_body(const RunPlan& p) {
    json j;
    j["label"] = p.label;
    j["problem"] = p.problem;
    j["d"] = p.d;
    j["q"] = p.q;
    j["t_horizon"] = p.t_horizon;
    j["beta"] = p.beta;
    j["k_min"] = p.k_min;
    j["k_max"] = p.k_max;
    j["basis"] = basis_to_json(p.basis);
    j["residual_basis"] = basis_to_json(p.residual_basis);
    j["seeds"] = p.seeds;
    j["m_eval"] = p.m_eval;
    j["eval_seed"] = p.eval_seed;
    if (p.y_cap >= 0) j["y_cap"] = p.y_cap;
    if (p.z_cap >= 0) j["z_cap"] = p.z_cap;
    json runs = json::array();
    for (const ResolvedRun& r : p.runs) {
        json rj;
        rj["scheme"] = to_string(r.scheme);
        rj["engine"] = to_string(r.engine);
        rj["k"] = r.k;
        rj["seed"] = r.seed;
        rj["m"] = r.m_linear;
        if (r.m_residual > 0) rj["m_residual"] = r.m_residual;
        rj["cost"] = r.cost;
        rj["peak_bytes"] = r.peak_bytes;
        rj["peak_site"] = r.peak_site;
        runs.push_back(rj);
    }
    j["runs"] = runs;
    return j;
}

} // namespace

std::string to_string(SchemeKind s) {
    switch (s) {
        case SchemeKind::ml: return "ml";
        case SchemeKind::mdp: return "mdp";
        case SchemeKind::mdp2: return "mdp2";
        case SchemeKind::split_ml: return "split-ml";
        case SchemeKind::split_mdp: return "split-mdp";
    }
    return "?";
}

std::string to_string(EngineKind e) {
    switch (e) {
        case EngineKind::multilevel: return "multilevel";
        case EngineKind::terminal_cloud: return "terminal-cloud";
        case EngineKind::multistep_full: return "multistep-full";
        case EngineKind::split_ml: return "split-multilevel";
        case EngineKind::split_single: return "split-single-cloud";
    }
    return "?";
}

SchemeKind scheme_from_string(const std::string& s) {
    if (s == "ml") return SchemeKind::ml;
    if (s == "mdp") return SchemeKind::mdp;
    if (s == "mdp2") return SchemeKind::mdp2;
    if (s == "split-ml") return SchemeKind::split_ml;
    if (s == "split-mdp") return SchemeKind::split_mdp;
    throw ConfigError("scheme '" + s + "' is not one of ml/mdp/mdp2/split-ml/split-mdp");
}

std::size_t BasisSpec::dimension(int d) const {
    auto powd = [d](std::size_t b) {
        std::size_t r = 1;
        for (int a = 0; a < d; ++a) r *= b;
        return r;
    };
    if (family == "hermite") return std::size_t(degree) + 1;
    if (family == "cells" || family == "geometric-cells")
        return powd(std::size_t(cells_per_dim));
    if (family == "affine-cells") return std::size_t(1 + d) * powd(std::size_t(cells_per_dim));
    if (family == "constant") return 1;
    throw ConfigError("basis family '" + family + "' is unknown");
}

std::string RunPlan::hash_hex() const { return to_hex(hash); }

ExperimentConfig config_from_json_text(const std::string& text, const std::string& source) {
    json j;
    try {
        j = json::parse(text);
    } catch (const json::parse_error& e) {
        throw ConfigError(source + ": " + e.what());
    }
    const std::string root = source + ":#";
    if (!j.is_object()) fail(root, "expected a JSON object");
    check_keys(j, root,
               {"label", "problem", "scheme", "grid", "basis", "residual_basis", "schedule",
                "seeds", "m_eval", "eval_seed", "out", "mem_budget", "y_cap", "z_cap"});

    ExperimentConfig c;
    if (const json* v = find(j, "label")) c.label = read_str(*v, root + "/label");

    if (const json* v = find(j, "problem")) {
        if (v->is_string()) {
            c.problem = v->get<std::string>();
        } else if (v->is_object()) {
            const std::string pw = root + "/problem";
            check_keys(*v, pw, {"name", "y_cap", "z_cap"});
            const json* n = find(*v, "name");
            if (!n) fail(pw, "missing key name");
            c.problem = read_str(*n, pw + "/name");
            if (const json* cap = find(*v, "y_cap")) {
                c.y_cap = read_double(*cap, pw + "/y_cap");
                if (c.y_cap < 0) fail(pw + "/y_cap", "must be non-negative");
            }
            if (const json* cap = find(*v, "z_cap")) {
                c.z_cap = read_double(*cap, pw + "/z_cap");
                if (c.z_cap < 0) fail(pw + "/z_cap", "must be non-negative");
            }
        } else {
            fail(root + "/problem", "expected a name or an object");
        }
    }
    if (const json* v = find(j, "y_cap")) {
        c.y_cap = read_double(*v, root + "/y_cap");
        if (c.y_cap < 0) fail(root + "/y_cap", "must be non-negative");
    }
    if (const json* v = find(j, "z_cap")) {
        c.z_cap = read_double(*v, root + "/z_cap");
        if (c.z_cap < 0) fail(root + "/z_cap", "must be non-negative");
    }

    if (const json* v = find(j, "scheme")) {
        c.schemes.clear();
        if (v->is_array()) {
            for (std::size_t a = 0; a < v->size(); ++a)
                c.schemes.push_back(
                    parse_scheme((*v)[a], root + "/scheme[" + std::to_string(a) + "]"));
        } else {
            c.schemes.push_back(parse_scheme(*v, root + "/scheme"));
        }
        if (c.schemes.empty()) fail(root + "/scheme", "no schemes given");
        for (std::size_t a = 0; a < c.schemes.size(); ++a)
            for (std::size_t b = a + 1; b < c.schemes.size(); ++b)
                if (c.schemes[a] == c.schemes[b])
                    fail(root + "/scheme", "scheme " + to_string(c.schemes[a]) + " listed twice");
    }

    if (const json* v = find(j, "grid")) {
        const std::string gw = root + "/grid";
        if (!v->is_object()) fail(gw, "expected an object");
        check_keys(*v, gw, {"t_horizon", "beta", "k_min", "k_max"});
        if (const json* f = find(*v, "t_horizon")) {
            c.grid.t_horizon = read_double(*f, gw + "/t_horizon");
            if (!(c.grid.t_horizon > 0)) fail(gw + "/t_horizon", "must be positive");
        }
        if (const json* f = find(*v, "beta")) {
            c.grid.beta = read_double(*f, gw + "/beta");
            if (!(c.grid.beta >= 1.0 && c.grid.beta <= 10.0))
                fail(gw + "/beta", "must lie in [1, 10]");
        }
        if (const json* f = find(*v, "k_min")) c.grid.k_min = read_int(*f, gw + "/k_min", 0, kMaxLevel);
        if (const json* f = find(*v, "k_max")) c.grid.k_max = read_int(*f, gw + "/k_max", 0, kMaxLevel);
        if (c.grid.k_min > c.grid.k_max) fail(gw, "k_min exceeds k_max");
    }

    if (const json* v = find(j, "basis")) c.basis = parse_basis(*v, root + "/basis");
    if (const json* v = find(j, "residual_basis")) {
        c.residual_basis = parse_basis(*v, root + "/residual_basis");
        c.residual_basis_set = true;
    }
    if (const json* v = find(j, "schedule")) c.schedule = parse_schedule(*v, root + "/schedule");

    if (const json* v = find(j, "seeds")) {
        c.seeds.clear();
        if (v->is_array()) {
            for (std::size_t a = 0; a < v->size(); ++a)
                c.seeds.push_back(read_u64((*v)[a], root + "/seeds[" + std::to_string(a) + "]"));
        } else {
            c.seeds.push_back(read_u64(*v, root + "/seeds"));
        }
        if (c.seeds.empty()) fail(root + "/seeds", "no seeds given");
    }
    if (const json* v = find(j, "m_eval")) {
        c.m_eval = read_u64(*v, root + "/m_eval");
        if (c.m_eval < 2) fail(root + "/m_eval", "needs at least 2 evaluation paths");
    }
    if (const json* v = find(j, "eval_seed")) c.eval_seed = read_u64(*v, root + "/eval_seed");
    if (const json* v = find(j, "out")) c.out_dir = read_str(*v, root + "/out");
    if (const json* v = find(j, "mem_budget")) {
        c.mem_budget = read_u64(*v, root + "/mem_budget");
        if (c.mem_budget > 0 && c.mem_budget < (std::uint64_t(1) << 20))
            fail(root + "/mem_budget", "budget below 1 MiB is surely a typo");
    }
    return c;
}

ExperimentConfig load_config(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw ConfigError("cannot open config file '" + path + "'");
    std::ostringstream buf;
    buf << in.rdbuf();
    return config_from_json_text(buf.str(), path);
}

std::string config_json(const ExperimentConfig& cfg) {
    json j;
    if (!cfg.label.empty()) j["label"] = cfg.label;
    json pj;
    pj["name"] = cfg.problem;
    j["problem"] = pj;
    if (cfg.y_cap >= 0) j["y_cap"] = cfg.y_cap;
    if (cfg.z_cap >= 0) j["z_cap"] = cfg.z_cap;
    json schemes = json::array();
    for (SchemeKind s : cfg.schemes) schemes.push_back(to_string(s));
    j["scheme"] = schemes;
    json gj;
    if (cfg.grid.t_horizon > 0) gj["t_horizon"] = cfg.grid.t_horizon;
    gj["beta"] = cfg.grid.beta;
    gj["k_min"] = cfg.grid.k_min;
    gj["k_max"] = cfg.grid.k_max;
    j["grid"] = gj;
    j["basis"] = basis_to_json(cfg.basis);
    if (cfg.residual_basis_set) j["residual_basis"] = basis_to_json(cfg.residual_basis);
    j["schedule"] = schedule_to_json(cfg.schedule);
    j["seeds"] = cfg.seeds;
    j["m_eval"] = cfg.m_eval;
    j["eval_seed"] = cfg.eval_seed;
    j["out"] = cfg.out_dir;
    if (cfg.mem_budget > 0) j["mem_budget"] = cfg.mem_budget;
    return j.dump(2) + "\n";
}

std::vector<std::string> preset_names() { return {"sine-fig1", "table-multid", "gooddeal"}; }

std::vector<ExperimentConfig> preset(const std::string& name) {
    if (name == "sine-fig1") {
        // One-dimensional sine terminal value, polynomial basis of dimension
        // 8, top-level path count 40 * 8 * 2^k: the multilevel scheme doubles
        // counts per level going down, the two single-cloud calibrations use
        // 40 * 8 * 2^k and 40 * 8 * 2^(2k).
        ExperimentConfig c;
        c.label = "sine-fig1";
        c.problem = "sine";
        c.schemes = {SchemeKind::ml, SchemeKind::mdp, SchemeKind::mdp2};
        c.grid.k_min = 2;
        c.grid.k_max = 7;
        c.basis.family = "hermite";
        c.basis.degree = 7;
        c.schedule.mode = "scaled";
        c.schedule.base = 40.0;
        c.seeds = {1, 2, 3, 4, 5};
        c.m_eval = 100000;
        return {c};
    }
    if (name == "table-multid") {
        // Three-dimensional product terminal value, two million paths at
        // every level, with an indicator basis (8 cells per dimension) and a
        // local-affine basis (5 cells per dimension) as separate runs.
        ExperimentConfig cells;
        cells.label = "table-multid-cells";
        cells.problem = "product";
        cells.schemes = {SchemeKind::ml, SchemeKind::mdp};
        cells.grid.k_min = 2;
        cells.grid.k_max = 7;
        cells.basis.family = "cells";
        cells.basis.cells_per_dim = 8;
        cells.schedule.mode = "flat";
        cells.schedule.m_flat = 2000000;
        cells.seeds = {1};
        cells.m_eval = 100000;
        ExperimentConfig affine = cells;
        affine.label = "table-multid-affine";
        affine.basis.family = "affine-cells";
        affine.basis.cells_per_dim = 5;
        return {cells, affine};
    }
    if (name == "gooddeal") {
        // Two-asset valuation bound with the |z_2|-proportional driver: the
        // multilevel scheme runs as linear part + residual, the baseline as
        // the full multistep recursion, both on 50x50 indicator cells with
        // two million paths.
        ExperimentConfig c;
        c.label = "gooddeal";
        c.problem = "gooddeal";
        c.schemes = {SchemeKind::ml, SchemeKind::mdp};
        c.grid.k_min = 1;
        c.grid.k_max = 5;
        c.basis.family = "geometric-cells";
        c.basis.cells_per_dim = 50;
        c.schedule.mode = "flat";
        c.schedule.m_flat = 2000000;
        c.seeds = {1};
        c.m_eval = 100000;
        return {c};
    }
    std::string names;
    for (const std::string& n : preset_names()) names += (names.empty() ? "" : ", ") + n;
    throw ConfigError("unknown preset '" + name + "' (available: " + names + ")");
}

RunPlan resolve(const ExperimentConfig& cfg) {
    const ProblemWithOracle pw = problem_by_name(cfg.problem);
    const Problem& pb = pw.problem;

    RunPlan plan;
    plan.label = cfg.label.empty() ? pb.name : cfg.label;
    plan.problem = pb.name;
    plan.d = pb.model.d;
    plan.q = pb.model.q;
    plan.t_horizon = cfg.grid.t_horizon > 0 ? cfg.grid.t_horizon : pb.T;
    if (plan.t_horizon != pb.T)
        throw ConfigError("grid t_horizon " + std::to_string(cfg.grid.t_horizon) +
                          " does not match the problem horizon " + std::to_string(pb.T));
    plan.beta = cfg.grid.beta;
    plan.k_min = cfg.grid.k_min;
    plan.k_max = cfg.grid.k_max;
    plan.basis = cfg.basis;
    plan.residual_basis = cfg.residual_basis_set ? cfg.residual_basis : cfg.basis;
    plan.seeds = cfg.seeds;
    plan.m_eval = cfg.m_eval;
    plan.eval_seed = cfg.eval_seed;
    plan.out_dir = cfg.out_dir;
    plan.mem_budget = cfg.mem_budget > 0 ? cfg.mem_budget : mem_budget();
    plan.y_cap = cfg.y_cap;
    plan.z_cap = cfg.z_cap;

    auto check_basis = [&](const BasisSpec& b, const char* which) {
        if (b.family == "hermite") {
            if (pb.model.d != 1)
                throw ConfigError(std::string(which) + ": hermite basis is one-dimensional, "
                                                       "problem has d=" +
                                  std::to_string(pb.model.d));
            if (pb.model.kind != Model::Kind::brownian)
                throw ConfigError(std::string(which) +
                                  ": hermite basis expects a brownian model");
        } else if (b.family == "cells" || b.family == "affine-cells") {
            if (pb.model.kind != Model::Kind::brownian)
                throw ConfigError(std::string(which) +
                                  ": basis family '" + b.family + "' expects a brownian model");
        } else if (b.family == "geometric-cells") {
            if (pb.model.kind != Model::Kind::geometric)
                throw ConfigError(std::string(which) +
                                  ": basis family 'geometric-cells' expects a geometric model");
        }
        (void)b.dimension(pb.model.d);  // validates the family name
    };
    check_basis(plan.basis, "basis");
    check_basis(plan.residual_basis, "residual_basis");

    const bool has_driver = bool(pb.f);
    const std::size_t basis_dim = plan.basis.dimension(pb.model.d);

    for (SchemeKind s : cfg.schemes) {
        const EngineKind engine = engine_for(s, has_driver);
        for (int k = plan.k_min; k <= plan.k_max; ++k) {
            const Schedule m = linear_schedule(cfg, pb, s, engine, k, basis_dim);
            std::uint64_t m_res = 0;
            if (has_residual_part(engine))
                m_res = cfg.schedule.residual_m > 0 ? cfg.schedule.residual_m : m.back();
            for (std::uint64_t seed : cfg.seeds) {
                ResolvedRun r;
                r.scheme = s;
                r.engine = engine;
                r.k = k;
                r.seed = seed;
                r.m_linear = m;
                r.m_residual = m_res;
                estimate_peak(r, pb.model.d);
                r.cost = run_cost(r);
                if (r.peak_bytes > plan.mem_budget)
                    throw BudgetError("run scheme=" + to_string(s) + " k=" + std::to_string(k) +
                                          " seed=" + std::to_string(seed) + ": " + r.peak_site +
                                          " needs " + std::to_string(r.peak_bytes) +
                                          " bytes against a budget of " +
                                          std::to_string(plan.mem_budget) +
                                          " — lower the schedule or raise mem_budget",
                                      r.peak_bytes, plan.mem_budget);
                plan.runs.push_back(std::move(r));
            }
        }
    }

    const std::string canonical = plan_body(plan).dump();
    plan.hash = fnv1a64(canonical.data(), canonical.size());
    return plan;
}

std::string plan_json(const RunPlan& plan) {
    json j = plan_body(plan);
    j["plan_hash"] = plan.hash_hex();
    j["out"] = plan.out_dir;
    j["mem_budget"] = plan.mem_budget;
    return j.dump(2) + "\n";
}

} // namespace bsde
