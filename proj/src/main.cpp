// Batch experiment runner: parse a config or preset, execute the solve and
// evaluation pipeline, and emit plot-ready tables.  Subcommands:
//   run           execute an experiment, write plan/report/summary files
//   compare       per-level MSE and cost ratios of two report files
//   calibrate     print work schedules for a target accuracy
//   oracle-build  build / validate reference-solution tables
#include <chrono>
#include <cmath>
#include <cstdio>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "bsde/config.hpp"
#include "bsde/evaluation.hpp"
#include "bsde/io.hpp"
#include "bsde/parallel.hpp"
#include "bsde/residual.hpp"

namespace {

using namespace bsde;

BasisFactory make_factory(const BasisSpec& spec, const Model& model, const GridFamily& family) {
    if (spec.family == "hermite") return hermite_bases(family, spec.degree);
    if (spec.family == "cells")
        return brownian_cell_bases(family, model.d, spec.cells_per_dim);
    if (spec.family == "affine-cells") {
        if (spec.mass_cut > 0)
            return brownian_affine_bases(family, model.d, spec.cells_per_dim, spec.mass_cut);
        return brownian_affine_bases(family, model.d, spec.cells_per_dim);
    }
    if (spec.family == "geometric-cells") {
        if (spec.mass_cut > 0)
            return geometric_cell_bases(model, family, spec.cells_per_dim, spec.mass_cut);
        return geometric_cell_bases(model, family, spec.cells_per_dim);
    }
    BasisPtr c = make_constant_basis(model.d);
    return [c](int, int, FitRole) { return c; };
}

std::string basis_label(const BasisSpec& spec, int d) {
    std::ostringstream o;
    o << spec.family;
    if (spec.family == "hermite")
        o << "(degree=" << spec.degree << ")";
    else if (spec.family != "constant")
        o << "(" << spec.cells_per_dim << " cells/dim)";
    o << " K=" << spec.dimension(d);
    return o.str();
}

SolveOptions linear_options(const RunPlan& plan, const Problem& pb, const GridFamily& family) {
    SolveOptions opt;
    if (plan.y_cap >= 0)
        opt.y_bound = constant_bound(plan.y_cap);
    else if (std::isfinite(pb.c_phi))
        opt.y_bound = constant_bound(pb.c_phi);
    if (plan.z_cap >= 0)
        opt.z_bound = constant_bound(plan.z_cap);
    else if (std::isfinite(pb.c_x))
        opt.z_bound = gradient_bound(family, pb.c_x, pb.theta);
    return opt;
}

SolveOptions residual_options(const RunPlan& plan, const Problem& pb, const GridFamily& family) {
    SolveOptions opt;
    if (plan.y_cap >= 0)
        opt.y_bound = constant_bound(plan.y_cap);
    else if (std::isfinite(pb.c_x))
        opt.y_bound = residual_value_bound(family, pb.c_x, pb.theta, pb.theta_l);
    if (plan.z_cap >= 0)
        opt.z_bound = constant_bound(plan.z_cap);
    else if (std::isfinite(pb.c_x))
        opt.z_bound = residual_gradient_bound(family, pb.c_x, pb.theta, pb.theta_l);
    return opt;
}

SeedResult execute_run(const RunPlan& plan, const ResolvedRun& r, const ProblemWithOracle& pw,
                       const GridFamily& family, const BasisFactory& bases,
                       const BasisFactory& res_bases) {
    const auto t0 = std::chrono::steady_clock::now();
    const Problem& pb = pw.problem;
    const std::string tag = to_string(r.scheme);
    const SolveOptions lin_opt = linear_options(plan, pb, family);
    const Driver f = pb.f ? pb.f
                          : Driver([](double, const double*, double, const double*) { return 0.0; });

    SchemeEval ev;
    switch (r.engine) {
        case EngineKind::multilevel: {
            std::vector<LevelSolution> sols =
                solve_multilevel(pb.model, family, r.k, r.m_linear, pb.phi, bases, r.seed, lin_opt);
            ev = evaluator(std::move(sols.back()), tag);
            break;
        }
        case EngineKind::terminal_cloud: {
            ev = evaluator(solve_lsmdp_terminal(pb.model, family, r.k, r.m_linear[0], pb.phi,
                                                bases, r.seed, lin_opt),
                           tag);
            break;
        }
        case EngineKind::multistep_full: {
            ev = evaluator(solve_lsmdp_full(pb.model, family, r.k, r.m_linear, pb.phi, f, bases,
                                            r.seed, lin_opt),
                           tag);
            break;
        }
        case EngineKind::split_ml:
        case EngineKind::split_single: {
            LevelSolution linear;
            if (r.engine == EngineKind::split_ml) {
                std::vector<LevelSolution> sols = solve_multilevel(pb.model, family, r.k,
                                                                   r.m_linear, pb.phi, bases,
                                                                   r.seed, lin_opt);
                linear = std::move(sols.back());
            } else {
                linear = solve_lsmdp_terminal(pb.model, family, r.k, r.m_linear[0], pb.phi, bases,
                                              r.seed, lin_opt);
            }
            LevelSolution residual =
                solve_residual(pb.model, family, r.k, Schedule{r.m_residual}, f, linear,
                               res_bases, r.seed, residual_options(plan, pb, family));
            ev = evaluator(assemble_split(linear, residual), tag);
            break;
        }
    }

    SeedResult out;
    out.seed = r.seed;
    out.report = global_mse(ev, pw.closed, pb.model, family.grid(r.k), plan.m_eval,
                            plan.eval_seed);
    out.report.scheme = tag;
    out.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    return out;
}

// Least-squares line through (k, log2 combined-MSE); empty when < 2 usable
// levels.
std::vector<std::pair<std::string, ConvergenceStudy>> fit_lines(
    const std::vector<SchemeReport>& reports) {
    std::vector<std::pair<std::string, ConvergenceStudy>> fits;
    for (const SchemeReport& r : reports) {
        std::vector<double> xs, ys;
        ConvergenceStudy st;
        for (const LevelRecord& l : r.levels)
            if (l.combined > 0) {
                xs.push_back(double(l.k));
                ys.push_back(std::log2(l.combined));
                st.points.push_back({l.k, double(l.k), l.combined, std::log2(l.combined), 0.0});
            }
        if (xs.size() < 2) continue;
        double xm = 0, ym = 0;
        for (std::size_t i = 0; i < xs.size(); ++i) {
            xm += xs[i];
            ym += ys[i];
        }
        xm /= double(xs.size());
        ym /= double(xs.size());
        double sxx = 0, sxy = 0;
        for (std::size_t i = 0; i < xs.size(); ++i) {
            sxx += (xs[i] - xm) * (xs[i] - xm);
            sxy += (xs[i] - xm) * (ys[i] - ym);
        }
        st.slope = sxy / sxx;
        st.intercept = ym - st.slope * xm;
        for (StudyPoint& p : st.points) p.residual = p.log2mse - (st.intercept + st.slope * p.log2n);
        fits.emplace_back(r.scheme, st);
    }
    return fits;
}

int cmd_run(const std::string& config_path, const std::string& preset_name, bool seed_set,
            std::uint64_t seed, const std::string& out_dir, std::uint64_t mem) {
    std::vector<ExperimentConfig> configs;
    std::string batch = "run";
    if (!preset_name.empty()) {
        configs = preset(preset_name);
        batch = preset_name;
    } else if (!config_path.empty()) {
        configs = {load_config(config_path)};
    } else {
        throw ConfigError("run: give either --config PATH or --preset NAME");
    }

    std::vector<SchemeReport> merged;
    for (ExperimentConfig cfg : configs) {
        if (seed_set) cfg.seeds = {seed};
        if (!out_dir.empty()) cfg.out_dir = out_dir;
        if (mem > 0) cfg.mem_budget = mem;

        const RunPlan plan = resolve(cfg);
        set_mem_budget(plan.mem_budget);
        const ProblemWithOracle pw = problem_by_name(plan.problem);
        const GridFamily family(plan.t_horizon, plan.beta);
        const BasisFactory bases = make_factory(plan.basis, pw.problem.model, family);
        const BasisFactory res_bases = make_factory(plan.residual_basis, pw.problem.model, family);
        const std::string dir = plan.out_dir + "/" + plan.label;

        // The fully resolved plan goes out before anything runs.
        const std::string ptext = plan_json(plan);
        std::printf("resolved plan for %s (hash %s):\n%s", plan.label.c_str(),
                    plan.hash_hex().c_str(), ptext.c_str());
        std::fflush(stdout);
        write_plan_file(dir + "/plan.json", plan);

        std::vector<SchemeReport> reports;
        std::map<std::string, std::size_t> index;
        for (const ResolvedRun& r : plan.runs) {
            const std::string scheme = to_string(r.scheme);
            if (!index.count(scheme)) {
                SchemeReport rep;
                rep.problem = plan.problem;
                rep.label = plan.label;
                rep.scheme = scheme;
                rep.engine = to_string(r.engine);
                rep.basis = basis_label(plan.basis, plan.d);
                rep.plan_hash = plan.hash_hex();
                index[scheme] = reports.size();
                reports.push_back(rep);
            }
            SchemeReport& rep = reports[index[scheme]];
            if (rep.levels.empty() || rep.levels.back().k != r.k) {
                LevelRecord l;
                l.k = r.k;
                l.m = r.m_linear;
                l.m_residual = r.m_residual;
                l.cost = r.cost;
                rep.levels.push_back(l);
            }
            SeedResult sr = execute_run(plan, r, pw, family, bases, res_bases);
            std::printf("  %-9s k=%d seed=%llu  mseY_max=%.4e mseZ=%.4e combined=%.4e  %.1fs\n",
                        scheme.c_str(), r.k, (unsigned long long)r.seed, sr.report.mseY_max,
                        sr.report.mseZ_sum, sr.report.combined, sr.seconds);
            std::fflush(stdout);
            rep.levels.back().seeds.push_back(std::move(sr));
        }
        for (SchemeReport& rep : reports)
            for (LevelRecord& l : rep.levels) l.aggregate();

        const std::vector<std::pair<std::string, ConvergenceStudy>> fits = fit_lines(reports);
        for (const auto& [scheme, st] : fits)
            std::printf("fit %-9s slope=%.3f intercept=%.3f\n", scheme.c_str(), st.slope,
                        st.intercept);

        for (const SchemeReport& rep : reports) {
            write_report_json(dir + "/report-" + rep.scheme + ".json", rep);
            write_points_csv(dir + "/points-" + rep.scheme + ".csv", rep);
        }
        write_summary_csv(dir + "/summary.csv", reports, fits);
        write_table_csv(dir + "/table.csv", reports);
        std::printf("wrote %s/{plan.json,summary.csv,table.csv,report-*.json,points-*.csv}\n",
                    dir.c_str());
        merged.insert(merged.end(), reports.begin(), reports.end());
    }
    if (configs.size() > 1) {
        const std::string base = !out_dir.empty() ? out_dir : configs[0].out_dir;
        write_table_csv(base + "/" + batch + "-table.csv", merged);
        std::printf("wrote %s/%s-table.csv\n", base.c_str(), batch.c_str());
    }
    return 0;
}

int cmd_compare(const std::string& a_path, const std::string& b_path, const std::string& out_dir) {
    const CompareResult c = compare_reports(read_report_json(a_path), read_report_json(b_path));
    std::fputs(c.text().c_str(), stdout);
    const std::string dir = out_dir.empty() ? "out" : out_dir;
    write_compare_csv(dir + "/compare.csv", c);
    std::printf("wrote %s/compare.csv\n", dir.c_str());
    return 0;
}

int cmd_calibrate(const std::string& problem, int k, double eps, double c_k, double c_m,
                  double beta, const std::string& out_dir) {
    const ProblemWithOracle pw = problem_by_name(problem);
    const Problem& pb = pw.problem;
    const GridFamily family(pb.T, beta);
    if (eps <= 0) eps = std::ldexp(1.0, -k);
    const CalibratedSchedule cs =
        calibrate_schedule(family, k, eps, pb.model.d, pb.theta, c_k, c_m);

    std::printf("calibration for %s (d=%d, theta=%g), k=%d, eps=%.6g, c_K=%g, c_M=%g\n",
                pb.name.c_str(), pb.model.d, pb.theta, k, eps, c_k, c_m);
    std::printf("%5s %12s %8s %14s\n", "level", "M", "K_max", "path-steps");
    std::ostringstream csv;
    csv << "# calibrate problem=" << pb.name << " k=" << k << " eps=" << eps << "\n";
    csv << "level,m,k_max,path_steps\n";
    for (int j = 0; j <= k; ++j) {
        std::size_t kmax = 0;
        for (std::size_t v : cs.K[std::size_t(j)]) kmax = std::max(kmax, v);
        const double work = double(cs.M[std::size_t(j)]) * std::ldexp(1.0, j);
        std::printf("%5d %12llu %8llu %14.4g\n", j, (unsigned long long)cs.M[std::size_t(j)],
                    (unsigned long long)kmax, work);
        csv << j << ',' << cs.M[std::size_t(j)] << ',' << kmax << ',' << work << "\n";
    }
    std::printf("multilevel total work %.4g; single-cloud baseline M=%llu work %.4g\n",
                cs.work_multilevel, (unsigned long long)cs.M_single, cs.work_single);
    std::printf("cost orders at eps (unit constants): multilevel %.4g, single %.4g, residual "
                "%.4g, full %.4g\n",
                cs.order_multilevel, cs.order_single, cs.order_residual, cs.order_full);
    if (!out_dir.empty()) {
        write_text_file(out_dir + "/calibrate.csv", csv.str());
        std::printf("wrote %s/calibrate.csv\n", out_dir.c_str());
    }
    return 0;
}

int cmd_oracle_build(const std::string& problem, int k, std::uint64_t paths, int iterations,
                     std::uint64_t seed, const std::string& out_dir) {
    const ProblemWithOracle pw = problem_by_name(problem);
    if (problem != "gooddeal") {
        // Nothing to persist: the cross-checks are quadrature against closed
        // forms, computed on demand.  Run them and report.
        const OracleCheck chk = validate_oracles(pw, 20, seed);
        std::printf("%s: closed vs brute max rel y %.3e, z %.3e, finite-difference %.3e over %d "
                    "points\n",
                    problem.c_str(), chk.max_rel_y, chk.max_rel_z, chk.max_rel_fd, chk.points);
        const double defect = martingale_defect(pw, 4, 200000, seed);
        std::printf("%s: martingale defect %.3f (pass < 1)\n", problem.c_str(), defect);
        return (chk.max_rel_y < 1e-3 && chk.max_rel_z < 1e-3 && defect < 1.0) ? 0 : 1;
    }

    const std::string dir = out_dir.empty() ? "data" : out_dir;
    std::printf("building %s reference pair at k=%d and k=%d (M=%llu, %d fixed-point passes)\n",
                problem.c_str(), k, k + 1, (unsigned long long)paths, iterations);
    std::fflush(stdout);
    const NumericalReference lo = build_gooddeal_reference(k, paths, iterations, seed);
    const std::string lo_path = dir + "/gooddeal_reference_k" + std::to_string(k) + ".csv";
    save_reference(lo, lo_path);
    std::printf("wrote %s (y0=%.6f, last pass moved %.2e)\n", lo_path.c_str(), lo.y0,
                lo.deltas.empty() ? 0.0 : lo.deltas.back());
    std::fflush(stdout);
    const NumericalReference hi = build_gooddeal_reference(k + 1, paths, iterations, seed);
    const std::string hi_path = dir + "/gooddeal_reference_k" + std::to_string(k + 1) + ".csv";
    save_reference(hi, hi_path);
    std::printf("wrote %s (y0=%.6f, last pass moved %.2e)\n", hi_path.c_str(), hi.y0,
                hi.deltas.empty() ? 0.0 : hi.deltas.back());

    const OracleStatus st = gooddeal_agreement(lo, hi, pw);
    std::printf("%s\n", st.message.c_str());
    std::printf("closed-form oracle %s\n", st.verified ? "VERIFIED against the numerical reference"
                                                       : "NOT verified — treat table runs as "
                                                         "unverified");
    return st.verified ? 0 : 1;
}

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"Multilevel least-squares Monte Carlo solver for discrete backward SDEs"};
    app.require_subcommand(1);
    app.fallthrough();

    std::uint64_t seed = 0;
    std::string out_dir;
    std::uint64_t mem = 0;
    int threads = 0;
    app.add_option("--seed", seed, "override the config's seed list with one seed");
    app.add_option("--out", out_dir, "output directory (overrides the config)");
    app.add_option("--mem-budget", mem, "memory budget in bytes (overrides the config)");
    app.add_option("--threads", threads, "cap worker threads (results are unaffected)")
        ->check(CLI::PositiveNumber);

    auto* run = app.add_subcommand("run", "execute an experiment");
    std::string config_path, preset_name;
    run->add_option("--config", config_path, "experiment config (JSON)")
        ->check(CLI::ExistingFile);
    run->add_option("--preset", preset_name, "named preset: sine-fig1, table-multid, gooddeal");

    auto* cmp = app.add_subcommand("compare", "per-level MSE/cost ratios of two reports");
    std::string report_a, report_b;
    cmp->add_option("report_a", report_a, "first report JSON")->required()
        ->check(CLI::ExistingFile);
    cmp->add_option("report_b", report_b, "second report JSON")->required()
        ->check(CLI::ExistingFile);

    auto* cal = app.add_subcommand("calibrate", "print work schedules for a target accuracy");
    std::string cal_problem = "sine";
    int cal_k = 5;
    double cal_eps = -1.0, cal_ck = 1.0, cal_cm = 1.0, cal_beta = 1.0;
    cal->add_option("--problem", cal_problem, "problem name (supplies d, theta, horizon)");
    cal->add_option("--k", cal_k, "grid level")->check(CLI::Range(0, kMaxLevel));
    cal->add_option("--eps", cal_eps, "target accuracy (default 2^-k)");
    cal->add_option("--c-k", cal_ck, "basis-size constant")->check(CLI::PositiveNumber);
    cal->add_option("--c-m", cal_cm, "path-count constant")->check(CLI::PositiveNumber);
    cal->add_option("--beta", cal_beta, "grid grading exponent")->check(CLI::Range(1.0, 10.0));

    auto* ob = app.add_subcommand("oracle-build", "build / validate reference tables");
    std::string ob_problem = "gooddeal";
    int ob_k = 7, ob_iter = 5;
    std::uint64_t ob_paths = 2000000;
    ob->add_option("--problem", ob_problem, "problem name");
    ob->add_option("--k", ob_k, "coarse grid level of the reference pair")
        ->check(CLI::Range(1, kMaxLevel - 1));
    ob->add_option("--paths", ob_paths, "simulation paths per fit")->check(CLI::PositiveNumber);
    ob->add_option("--iterations", ob_iter, "fixed-point passes")->check(CLI::Range(1, 50));

    CLI11_PARSE(app, argc, argv);

    try {
        if (threads > 0) par::set_threads(threads);
        if (mem > 0) set_mem_budget(mem);
        const bool seed_set = app.count("--seed") > 0;
        if (run->parsed())
            return cmd_run(config_path, preset_name, seed_set, seed, out_dir, mem);
        if (cmp->parsed()) return cmd_compare(report_a, report_b, out_dir);
        if (cal->parsed())
            return cmd_calibrate(cal_problem, cal_k, cal_eps, cal_ck, cal_cm, cal_beta, out_dir);
        if (ob->parsed())
            return cmd_oracle_build(ob_problem, ob_k, ob_paths, ob_iter,
                                    seed_set ? seed : 1, out_dir);
        std::fprintf(stderr, "error: no subcommand\n");
        return 2;
    } catch (const BudgetError& e) {
        std::fprintf(stderr, "memory budget refusal: %s\n", e.what());
        return 3;
    } catch (const ConfigError& e) {
        std::fprintf(stderr, "config error: %s\n", e.what());
        return 2;
    } catch (const Error& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return 4;
    } catch (const std::exception& e) {
        std::fprintf(stderr, "internal error: %s\n", e.what());
        return 5;
    }
}
