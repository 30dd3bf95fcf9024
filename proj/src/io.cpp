#include "bsde/io.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <map>
#include <set>
#include <sstream>

#include <json.hpp>

namespace bsde {
namespace {

using nlohmann::json;

[[noreturn]] void fail(const std::string& where, const std::string& what) {
    throw ConfigError(where + ": " + what);
}

const json& field(const json& j, const char* key, const std::string& where) {
    auto it = j.find(key);
    if (it == j.end()) fail(where, std::string("missing key ") + key);
    return *it;
}

double num(const json& j, const char* key, const std::string& where) {
    const json& v = field(j, key, where);
    if (!v.is_number()) fail(where + "/" + key, "expected a number");
    return v.get<double>();
}

std::uint64_t unum(const json& j, const char* key, const std::string& where) {
    const json& v = field(j, key, where);
    if (!v.is_number_unsigned()) fail(where + "/" + key, "expected a non-negative integer");
    return v.get<std::uint64_t>();
}

std::string str(const json& j, const char* key, const std::string& where) {
    const json& v = field(j, key, where);
    if (!v.is_string()) fail(where + "/" + key, "expected a string");
    return v.get<std::string>();
}

std::string fmt(double v) {
    char buf[40];
    std::snprintf(buf, sizeof buf, "%.10g", v);
    return buf;
}

json seed_to_json(const SeedResult& s) {
    json j;
    j["seed"] = s.seed;
    j["seconds"] = s.seconds;
    j["m_eval"] = std::uint64_t(s.report.m_eval);
    j["eval_seed"] = s.report.seed;
    j["mseY_max"] = s.report.mseY_max;
    j["mseY_avg"] = s.report.mseY_avg;
    j["mseY_t0"] = s.report.mseY_t0;
    j["mseZ_sum"] = s.report.mseZ_sum;
    j["combined"] = s.report.combined;
    j["seY_max"] = s.report.seY_max;
    j["seZ_sum"] = s.report.seZ_sum;
    json pts = json::array();
    for (const TimePointError& p : s.report.points)
        pts.push_back(json::array({p.i, p.t, p.dt, p.mseY, p.seY, p.mseZ, p.seZ}));
    j["points"] = pts;
    return j;
}

SeedResult seed_from_json(const json& j, const std::string& scheme, int k,
                          const std::string& where) {
    SeedResult s;
    s.seed = unum(j, "seed", where);
    s.seconds = num(j, "seconds", where);
    s.report.scheme = scheme;
    s.report.k = k;
    s.report.m_eval = std::size_t(unum(j, "m_eval", where));
    s.report.seed = unum(j, "eval_seed", where);
    s.report.mseY_max = num(j, "mseY_max", where);
    s.report.mseY_avg = num(j, "mseY_avg", where);
    s.report.mseY_t0 = num(j, "mseY_t0", where);
    s.report.mseZ_sum = num(j, "mseZ_sum", where);
    s.report.combined = num(j, "combined", where);
    s.report.seY_max = num(j, "seY_max", where);
    s.report.seZ_sum = num(j, "seZ_sum", where);
    const json& pts = field(j, "points", where);
    if (!pts.is_array()) fail(where + "/points", "expected an array");
    for (std::size_t a = 0; a < pts.size(); ++a) {
        const json& row = pts[a];
        const std::string pw = where + "/points[" + std::to_string(a) + "]";
        if (!row.is_array() || row.size() != 7) fail(pw, "expected [i,t,dt,mseY,seY,mseZ,seZ]");
        TimePointError p;
        p.i = row[0].get<int>();
        p.t = row[1].get<double>();
        p.dt = row[2].get<double>();
        p.mseY = row[3].get<double>();
        p.seY = row[4].get<double>();
        p.mseZ = row[5].get<double>();
        p.seZ = row[6].get<double>();
        s.report.points.push_back(p);
    }
    return s;
}

} // namespace

void LevelRecord::aggregate() {
    seconds = 0.0;
    mseY_max = mseY_avg = mseY_t0 = mseZ_sum = combined = 0.0;
    if (seeds.empty()) return;
    for (const SeedResult& s : seeds) {
        seconds += s.seconds;
        mseY_max += s.report.mseY_max;
        mseY_avg += s.report.mseY_avg;
        mseY_t0 += s.report.mseY_t0;
        mseZ_sum += s.report.mseZ_sum;
        combined += s.report.combined;
    }
    const double n = double(seeds.size());
    mseY_max /= n;
    mseY_avg /= n;
    mseY_t0 /= n;
    mseZ_sum /= n;
    combined /= n;
}

void write_text_file(const std::string& path, const std::string& text) {
    const std::filesystem::path p(path);
    if (p.has_parent_path()) {
        std::error_code ec;
        std::filesystem::create_directories(p.parent_path(), ec);
        if (ec) throw Error("cannot create directory '" + p.parent_path().string() + "': " +
                            ec.message());
    }
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw Error("cannot open '" + path + "' for writing");
    out << text;
    out.close();
    if (!out) throw Error("write to '" + path + "' failed");
}

void write_plan_file(const std::string& path, const RunPlan& plan) {
    write_text_file(path, plan_json(plan));
}

void write_report_json(const std::string& path, const SchemeReport& r) {
    json j;
    j["problem"] = r.problem;
    j["label"] = r.label;
    j["scheme"] = r.scheme;
    j["engine"] = r.engine;
    j["basis"] = r.basis;
    j["plan_hash"] = r.plan_hash;
    json levels = json::array();
    for (const LevelRecord& l : r.levels) {
        json lj;
        lj["k"] = l.k;
        lj["m"] = l.m;
        if (l.m_residual > 0) lj["m_residual"] = l.m_residual;
        lj["cost"] = l.cost;
        lj["seconds"] = l.seconds;
        lj["mseY_max"] = l.mseY_max;
        lj["mseY_avg"] = l.mseY_avg;
        lj["mseY_t0"] = l.mseY_t0;
        lj["mseZ_sum"] = l.mseZ_sum;
        lj["combined"] = l.combined;
        json seeds = json::array();
        for (const SeedResult& s : l.seeds) seeds.push_back(seed_to_json(s));
        lj["seeds"] = seeds;
        levels.push_back(lj);
    }
    j["levels"] = levels;
    write_text_file(path, j.dump(1) + "\n");
}

SchemeReport read_report_json(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw ConfigError("cannot open report '" + path + "'");
    json j;
    try {
        j = json::parse(in);
    } catch (const json::parse_error& e) {
        throw ConfigError(path + ": " + e.what());
    }
    if (!j.is_object()) fail(path, "expected a JSON object");
    SchemeReport r;
    r.problem = str(j, "problem", path);
    r.label = str(j, "label", path);
    r.scheme = str(j, "scheme", path);
    r.engine = str(j, "engine", path);
    r.basis = str(j, "basis", path);
    r.plan_hash = str(j, "plan_hash", path);
    const json& levels = field(j, "levels", path);
    if (!levels.is_array()) fail(path + "/levels", "expected an array");
    for (std::size_t a = 0; a < levels.size(); ++a) {
        const json& lj = levels[a];
        const std::string lw = path + "/levels[" + std::to_string(a) + "]";
        LevelRecord l;
        l.k = int(num(lj, "k", lw));
        const json& m = field(lj, "m", lw);
        if (!m.is_array()) fail(lw + "/m", "expected an array");
        for (const json& v : m) l.m.push_back(v.get<std::uint64_t>());
        if (lj.contains("m_residual")) l.m_residual = unum(lj, "m_residual", lw);
        l.cost = num(lj, "cost", lw);
        l.seconds = num(lj, "seconds", lw);
        l.mseY_max = num(lj, "mseY_max", lw);
        l.mseY_avg = num(lj, "mseY_avg", lw);
        l.mseY_t0 = num(lj, "mseY_t0", lw);
        l.mseZ_sum = num(lj, "mseZ_sum", lw);
        l.combined = num(lj, "combined", lw);
        const json& seeds = field(lj, "seeds", lw);
        if (!seeds.is_array()) fail(lw + "/seeds", "expected an array");
        for (std::size_t b = 0; b < seeds.size(); ++b)
            l.seeds.push_back(seed_from_json(seeds[b], r.scheme, l.k,
                                             lw + "/seeds[" + std::to_string(b) + "]"));
        r.levels.push_back(std::move(l));
    }
    return r;
}

void write_points_csv(const std::string& path, const SchemeReport& r) {
    std::ostringstream out;
    out << "# plan_hash=" << r.plan_hash << "\n";
    out << "scheme,k,seed,i,t,dt,mseY,seY,mseZ,seZ\n";
    for (const LevelRecord& l : r.levels)
        for (const SeedResult& s : l.seeds)
            for (const TimePointError& p : s.report.points)
                out << r.scheme << ',' << l.k << ',' << s.seed << ',' << p.i << ',' << fmt(p.t)
                    << ',' << fmt(p.dt) << ',' << fmt(p.mseY) << ',' << fmt(p.seY) << ','
                    << fmt(p.mseZ) << ',' << fmt(p.seZ) << "\n";
    write_text_file(path, out.str());
}

void write_summary_csv(const std::string& path, const std::vector<SchemeReport>& reports,
                       const std::vector<std::pair<std::string, ConvergenceStudy>>& fits) {
    std::ostringstream out;
    std::set<std::string> hashes;
    for (const SchemeReport& r : reports)
        if (hashes.insert(r.plan_hash).second)
            out << "# plan_hash=" << r.plan_hash << " label=" << r.label << "\n";
    for (const auto& [scheme, study] : fits)
        out << "# fit scheme=" << scheme << " slope=" << fmt(study.slope)
            << " intercept=" << fmt(study.intercept) << "\n";
    out << "scheme,log2N,log2MSE,mse,mseY_avg,mseY_max,mseZ_sum,cost,seconds\n";
    for (const SchemeReport& r : reports)
        for (const LevelRecord& l : r.levels)
            out << r.scheme << ',' << l.k << ',' << fmt(std::log2(l.combined)) << ','
                << fmt(l.combined) << ',' << fmt(l.mseY_avg) << ',' << fmt(l.mseY_max) << ','
                << fmt(l.mseZ_sum) << ',' << fmt(l.cost) << ',' << fmt(l.seconds) << "\n";
    write_text_file(path, out.str());
}

void write_table_csv(const std::string& path, const std::vector<SchemeReport>& reports) {
    std::set<int> ks;
    for (const SchemeReport& r : reports)
        for (const LevelRecord& l : r.levels) ks.insert(l.k);
    std::ostringstream out;
    std::set<std::string> hashes;
    for (const SchemeReport& r : reports)
        if (hashes.insert(r.plan_hash).second)
            out << "# plan_hash=" << r.plan_hash << " label=" << r.label << "\n";
    out << "series";
    for (int k : ks) out << ",log2N=" << k;
    out << "\n";
    for (const SchemeReport& r : reports) {
        std::map<int, const LevelRecord*> by_k;
        for (const LevelRecord& l : r.levels) by_k[l.k] = &l;
        for (const char* part : {"Y", "Z"}) {
            out << r.label << '/' << r.scheme << '/' << part;
            for (int k : ks) {
                out << ',';
                auto it = by_k.find(k);
                if (it != by_k.end())
                    out << fmt(part[0] == 'Y' ? it->second->mseY_avg : it->second->mseZ_sum);
            }
            out << "\n";
        }
    }
    write_text_file(path, out.str());
}

CompareResult compare_reports(const SchemeReport& a, const SchemeReport& b) {
    if (a.problem != b.problem)
        throw ConfigError("compare: problems differ (" + a.problem + " vs " + b.problem + ")");
    CompareResult c;
    c.problem = a.problem;
    c.label_a = a.label;
    c.label_b = b.label;
    c.scheme_a = a.scheme;
    c.scheme_b = b.scheme;
    c.plan_hash_a = a.plan_hash;
    c.plan_hash_b = b.plan_hash;

    std::map<int, const LevelRecord*> bk;
    for (const LevelRecord& l : b.levels) bk[l.k] = &l;
    auto ratio = [](double x, double y) {
        if (y != 0.0) return x / y;
        return x == 0.0 ? 1.0 : kInf;
    };
    for (const LevelRecord& la : a.levels) {
        auto it = bk.find(la.k);
        if (it == bk.end()) continue;
        const LevelRecord& lb = *it->second;
        CompareRow row;
        row.k = la.k;
        row.mseY_a = la.mseY_avg;
        row.mseY_b = lb.mseY_avg;
        row.ratioY = ratio(la.mseY_avg, lb.mseY_avg);
        row.mseZ_a = la.mseZ_sum;
        row.mseZ_b = lb.mseZ_sum;
        row.ratioZ = ratio(la.mseZ_sum, lb.mseZ_sum);
        row.cost_a = la.cost;
        row.cost_b = lb.cost;
        row.work_mse_a = la.cost * la.combined;
        row.work_mse_b = lb.cost * lb.combined;
        row.efficiency = ratio(row.work_mse_a, row.work_mse_b);
        c.rows.push_back(row);
    }
    if (c.rows.empty()) throw ConfigError("compare: the reports share no grid level");

    std::ostringstream notes;
    if (!a.levels.empty() && !b.levels.empty() && !a.levels[0].seeds.empty() &&
        !b.levels.empty() && !b.levels[0].seeds.empty()) {
        const ErrorReport& ra = a.levels[0].seeds[0].report;
        const ErrorReport& rb = b.levels[0].seeds[0].report;
        if (ra.m_eval != rb.m_eval || ra.seed != rb.seed)
            notes << "note: evaluation clouds differ (m_eval/seed " << ra.m_eval << "/" << ra.seed
                  << " vs " << rb.m_eval << "/" << rb.seed << "); ratios mix evaluation noise\n";
    }
    if (a.basis != b.basis) notes << "note: bases differ (" << a.basis << " vs " << b.basis << ")\n";
    c.notes = notes.str();
    return c;
}

std::string CompareResult::text() const {
    std::ostringstream out;
    out << "compare " << label_a << "/" << scheme_a << "  vs  " << label_b << "/" << scheme_b
        << "  (problem " << problem << ")\n";
    out << "plan " << plan_hash_a << " vs " << plan_hash_b << "\n";
    char line[200];
    std::snprintf(line, sizeof line, "%5s %11s %11s %7s %11s %11s %7s %11s %11s %9s\n", "log2N",
                  "Y-mse A", "Y-mse B", "Y A/B", "Z-mse A", "Z-mse B", "Z A/B", "cost A", "cost B",
                  "eff A/B");
    out << line;
    for (const CompareRow& r : rows) {
        std::snprintf(line, sizeof line,
                      "%5d %11.4e %11.4e %7.3f %11.4e %11.4e %7.3f %11.4e %11.4e %9.3f\n", r.k,
                      r.mseY_a, r.mseY_b, r.ratioY, r.mseZ_a, r.mseZ_b, r.ratioZ, r.cost_a,
                      r.cost_b, r.efficiency);
        out << line;
    }
    if (!notes.empty()) out << notes;
    return out.str();
}

void write_compare_csv(const std::string& path, const CompareResult& c) {
    std::ostringstream out;
    out << "# plan_hash_a=" << c.plan_hash_a << " plan_hash_b=" << c.plan_hash_b << "\n";
    out << "# a=" << c.label_a << "/" << c.scheme_a << " b=" << c.label_b << "/" << c.scheme_b
        << " problem=" << c.problem << "\n";
    out << "log2N,mseY_a,mseY_b,ratioY,mseZ_a,mseZ_b,ratioZ,cost_a,cost_b,work_mse_a,work_mse_b,"
           "efficiency\n";
    for (const CompareRow& r : c.rows)
        out << r.k << ',' << fmt(r.mseY_a) << ',' << fmt(r.mseY_b) << ',' << fmt(r.ratioY) << ','
            << fmt(r.mseZ_a) << ',' << fmt(r.mseZ_b) << ',' << fmt(r.ratioZ) << ','
            << fmt(r.cost_a) << ',' << fmt(r.cost_b) << ',' << fmt(r.work_mse_a) << ','
            << fmt(r.work_mse_b) << ',' << fmt(r.efficiency) << "\n";
    write_text_file(path, out.str());
}

} // namespace bsde
