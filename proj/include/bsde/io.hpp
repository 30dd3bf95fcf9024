#pragma once
// Disk formats for experiment outputs, and the report comparison used by the
// CLI.  One JSON report per scheme holds every per-seed, per-time-point error
// figure; CSVs are flat, plot-ready projections of the same data.  Every file
// begins with (or embeds) the resolved plan hash, so any number found in an
// output can be traced to the exact integer plan that produced it.

#include <cstdint>
#include <string>
#include <vector>

#include "bsde/config.hpp"
#include "bsde/evaluation.hpp"

namespace bsde {

// One executed (scheme, k, seed) unit.
struct SeedResult {
    std::uint64_t seed = 0;
    double seconds = 0.0;  // solve + evaluation wall clock
    ErrorReport report;
};

// All seeds of one (scheme, k), plus seed-averaged aggregates.
struct LevelRecord {
    int k = 0;
    Schedule m;                    // per-level (multilevel) or single entry
    std::uint64_t m_residual = 0;  // residual-part cloud size, 0 = none
    double cost = 0.0;             // path-steps bookkeeping from the plan
    double seconds = 0.0;          // summed over seeds
    double mseY_max = 0.0, mseY_avg = 0.0, mseY_t0 = 0.0;
    double mseZ_sum = 0.0, combined = 0.0;
    std::vector<SeedResult> seeds;

    // Fill the averaged aggregates (and seconds) from `seeds`.
    void aggregate();
};

// One scheme's whole convergence experiment.
struct SchemeReport {
    std::string problem, label, scheme, engine, basis;
    std::string plan_hash;  // hex fingerprint of the resolved plan
    std::vector<LevelRecord> levels;
};

void write_text_file(const std::string& path, const std::string& text);

// Resolved plan echo (JSON, hash embedded).
void write_plan_file(const std::string& path, const RunPlan& plan);

// Full-fidelity scheme report (JSON), and its reader.
void write_report_json(const std::string& path, const SchemeReport& r);
SchemeReport read_report_json(const std::string& path);

// Long-form detail: one row per (k, seed, time index).
void write_points_csv(const std::string& path, const SchemeReport& r);

// Convergence summary: one row per (scheme, k) with log2 MSE, cost and
// timing; fitted slope/intercept lines appear as leading comment lines.
void write_summary_csv(const std::string& path, const std::vector<SchemeReport>& reports,
                       const std::vector<std::pair<std::string, ConvergenceStudy>>& fits);

// Pivot table: two rows (Y, Z) per scheme report, one column per level.
void write_table_csv(const std::string& path, const std::vector<SchemeReport>& reports);

// Report comparison: per-level MSE ratios (A over B) and the cost-per-
// precision bookkeeping.  Throws ConfigError when the problems differ.
struct CompareRow {
    int k = 0;
    double mseY_a = 0, mseY_b = 0, ratioY = 0;
    double mseZ_a = 0, mseZ_b = 0, ratioZ = 0;
    double cost_a = 0, cost_b = 0;
    double work_mse_a = 0, work_mse_b = 0, efficiency = 0;  // cost x combined MSE
};

struct CompareResult {
    std::string problem, label_a, label_b, scheme_a, scheme_b;
    std::string plan_hash_a, plan_hash_b;
    std::vector<CompareRow> rows;
    std::string notes;  // comparability caveats (different eval clouds, ...)

    std::string text() const;  // aligned table for the terminal
};

CompareResult compare_reports(const SchemeReport& a, const SchemeReport& b);
void write_compare_csv(const std::string& path, const CompareResult& c);

} // namespace bsde
