#pragma once
// Experiment configuration and run-plan resolution.
//
// A strict-schema JSON document (or a named preset) describes one experiment:
// problem, scheme(s), grid range, bases, path-count schedule, seeds, and
// evaluation settings.  Unknown keys are errors, not warnings — a silently
// ignored typo would invalidate a study.  Resolution turns the config into a
// RunPlan whose every path count and seed is an explicit integer; the plan
// carries a content hash that output files embed, so results are traceable to
// exact inputs.  Resolution also pre-computes peak memory per run and refuses
// plans that would exceed the budget, naming the offending level.

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "bsde/multilevel.hpp"
#include "bsde/problems.hpp"

namespace bsde {

enum class SchemeKind { ml, mdp, mdp2, split_ml, split_mdp };

// How a scheme is actually executed once the problem's driver is known.
enum class EngineKind {
    multilevel,      // zero-driver multilevel recursion only
    terminal_cloud,  // zero-driver single-cloud baseline
    multistep_full,  // terminal + raw driver on per-time-point clouds
    split_ml,        // multilevel linear part + proxy-driver residual
    split_single     // single-cloud linear part + proxy-driver residual
};

std::string to_string(SchemeKind s);
std::string to_string(EngineKind e);
SchemeKind scheme_from_string(const std::string& s);

struct BasisSpec {
    // "hermite" (1-d polynomial, time-normalised), "cells" (equiprobable
    // indicator hypercubes in Brownian coordinates), "affine-cells" (local
    // affine on a bounded equiprobable box), "geometric-cells" (indicator
    // cells on marginal quantiles of a geometric model), "constant".
    std::string family = "hermite";
    int degree = 7;             // hermite only
    int cells_per_dim = 8;      // partition families
    double mass_cut = -1.0;     // bounded-box tail mass; < 0 = family default

    // Dimension of the fitted space (per time point) for a d-dim problem.
    std::size_t dimension(int d) const;
};

struct GridSpec {
    double t_horizon = -1.0;  // < 0 = take the problem's horizon
    double beta = 1.0;        // 1 = uniform, > 1 = graded toward the end
    int k_min = 2;
    int k_max = 7;
};

struct ScheduleSpec {
    // "scaled":    top-level M = ceil(base * K * 2^(exponent*k)) with K the
    //              value-basis dimension; multilevel schemes double the count
    //              per level going down, single-cloud schemes use it directly.
    //              exponent < 0 = per-scheme default (2 for mdp2, else 1).
    // "flat":      every level / cloud uses m_flat paths.
    // "explicit":  per-k path counts given directly (m_explicit).
    // "calibrate": counts from the accuracy-target calibration (epsilon or,
    //              when epsilon < 0, eps = 2^-k per level).
    std::string mode = "scaled";
    double base = 40.0;
    int exponent = -1;
    std::uint64_t m_flat = 0;
    // explicit mode: key = k, value = per-level list (multilevel schemes,
    // k+1 entries) or a single entry (single-cloud schemes).
    std::map<int, std::vector<std::uint64_t>> m_explicit;
    double epsilon = -1.0;
    double c_k = 1.0;
    double c_m = 1.0;
    // Residual-part cloud size; 0 = same as the top-level linear count.
    std::uint64_t residual_m = 0;
};

struct ExperimentConfig {
    std::string label;
    std::string problem = "sine";
    std::vector<SchemeKind> schemes = {SchemeKind::ml};
    GridSpec grid;
    BasisSpec basis;
    BasisSpec residual_basis;  // split schemes; defaults to `basis`
    bool residual_basis_set = false;
    ScheduleSpec schedule;
    std::vector<std::uint64_t> seeds = {1};
    std::uint64_t m_eval = 100000;
    std::uint64_t eval_seed = 424242;
    std::string out_dir = "out";
    std::uint64_t mem_budget = 0;  // 0 = library default
    // Truncation-cap overrides (problems carry their own defaults).
    double y_cap = -1.0;  // < 0 = problem default
    double z_cap = -1.0;
};

// One (scheme, k, seed) execution unit with fully resolved counts.
struct ResolvedRun {
    SchemeKind scheme = SchemeKind::ml;
    EngineKind engine = EngineKind::multilevel;
    int k = 0;
    std::uint64_t seed = 0;
    Schedule m_linear;          // per level (multilevel) or one entry
    std::uint64_t m_residual = 0;  // 0 = no residual part
    double cost = 0.0;          // path-steps: sum_j M_j 2^j (+ residual work)
    std::uint64_t peak_bytes = 0;
    std::string peak_site;      // which allocation dominates
};

struct RunPlan {
    std::string label;
    std::string problem;
    int d = 1, q = 1;
    double t_horizon = 1.0, beta = 1.0;
    int k_min = 2, k_max = 7;
    BasisSpec basis, residual_basis;
    std::vector<std::uint64_t> seeds;
    std::uint64_t m_eval = 0, eval_seed = 0;
    std::string out_dir;
    std::uint64_t mem_budget = 0;
    double y_cap = -1.0, z_cap = -1.0;
    std::vector<ResolvedRun> runs;  // scheme-major, then k, then seed
    std::uint64_t hash = 0;         // FNV-1a of the canonical plan text

    std::string hash_hex() const;
};

// Parse a JSON document (strict: unknown keys, wrong types, and out-of-range
// values are ConfigErrors whose message carries the JSON-pointer-style path).
ExperimentConfig config_from_json_text(const std::string& text, const std::string& source);
ExperimentConfig load_config(const std::string& path);
std::string config_json(const ExperimentConfig& cfg);  // canonical round-trip form

// Named presets reproducing the published experiments; a preset may expand to
// several configs (e.g. one per basis).  Throws ConfigError for unknown names.
std::vector<ExperimentConfig> preset(const std::string& name);
std::vector<std::string> preset_names();

// Expand the config into the explicit plan: every path count an integer,
// every seed listed, costs and peak memory pre-computed.  Throws ConfigError
// for inconsistent settings and BudgetError when a run's peak allocation
// would exceed the memory budget (the message names the offending level).
RunPlan resolve(const ExperimentConfig& cfg);

// Canonical JSON text of the plan (sorted keys; hash embedded as hex).
std::string plan_json(const RunPlan& plan);

} // namespace bsde
