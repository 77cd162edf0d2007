#pragma once

#include "kakeya/assouad.hpp"
#include "kakeya/axioms.hpp"
#include "kakeya/generators.hpp"
#include "kakeya/prism_lab.hpp"
#include "kakeya/projection.hpp"
#include "kakeya/shading.hpp"
#include "kakeya/voxel.hpp"

#include <atomic>
#include <chrono>
#include <ctime>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <map>
#include <mutex>
#include <optional>
#include <sstream>
#include <string>
#include <thread>
#include <tuple>
#include <variant>
#include <vector>

namespace kakeya::cli {

enum class Command { Generate, Check, Assouad, TwoScale, PrismDichotomy, Project };

inline const char* command_name(Command c)
{
    switch (c) {
    case Command::Generate:
        return "generate";
    case Command::Check:
        return "check";
    case Command::Assouad:
        return "assouad";
    case Command::TwoScale:
        return "two-scale";
    case Command::PrismDichotomy:
        return "prism-dichotomy";
    case Command::Project:
        return "project";
    }
    return "unknown";
}

// Bad flags, bad config or unreadable input: exit status 2.
class UsageError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

inline Command command_from_name(const std::string& s)
{
    for (auto c : {Command::Generate, Command::Check, Command::Assouad, Command::TwoScale, Command::PrismDichotomy,
                   Command::Project})
        if (s == command_name(c))
            return c;
    throw UsageError("unknown command: " + s);
}

inline const std::vector<std::string>& axiom_names()
{
    static const std::vector<std::string> names{"convex-wolff", "tube-wolff", "wolff",
                                                "frostman",     "every-scale", "self-similar"};
    return names;
}

struct ExperimentConfig {
    Command command = Command::Check;
    std::string input;
    std::string output;
    // generate the family in memory instead of reading input
    std::optional<GeneratorSpec> spec;
    int scale = 0; // grid and tube scale 2^-k; 0 takes it from the input
    double eps = 0.1;
    double min_sep = 4.0;
    double threshold = 100.0;
    double sigma = 2.0;
    std::optional<double> max_zeta;
    std::string axiom = "convex-wolff";
    std::uint64_t seed = 0;

    json to_json() const
    {
        json j{{"command", command_name(command)},
               {"input", input},
               {"output", output},
               {"scale", scale},
               {"eps", eps},
               {"min_sep", min_sep},
               {"threshold", threshold},
               {"sigma", sigma},
               {"axiom", axiom},
               {"seed", seed}};
        if (spec)
            j["spec"] = spec->to_json();
        if (max_zeta)
            j["max_zeta"] = *max_zeta;
        return j;
    }

    static ExperimentConfig from_json(const json& j)
    {
        ExperimentConfig c;
        try {
            c.command = command_from_name(j.at("command").get<std::string>());
            c.input = j.value("input", std::string{});
            c.output = j.value("output", std::string{});
            c.scale = j.value("scale", 0);
            c.eps = j.value("eps", c.eps);
            c.min_sep = j.value("min_sep", c.min_sep);
            c.threshold = j.value("threshold", c.threshold);
            c.sigma = j.value("sigma", c.sigma);
            c.axiom = j.value("axiom", c.axiom);
            if (j.contains("max_zeta"))
                c.max_zeta = j.at("max_zeta").get<double>();
            if (j.contains("spec")) {
                c.spec = GeneratorSpec::from_json(j.at("spec"));
                c.seed = j.value("seed", c.spec->seed);
            } else {
                c.seed = j.value("seed", std::uint64_t{0});
            }
        } catch (const json::exception& e) {
            throw UsageError(std::string("malformed config: ") + e.what());
        } catch (const std::invalid_argument& e) {
            throw UsageError(std::string("malformed config: ") + e.what());
        }
        return c;
    }

    // output may stay empty inside a sweep, where only the CSV row is kept
    void validate(bool need_output = true) const
    {
        if (!(eps > 0 && min_sep > 0 && threshold > 0 && sigma > 0) || (max_zeta && !(*max_zeta > 0)))
            throw UsageError("thresholds must be positive");
        if (scale < 0 || scale > 12)
            throw UsageError("--scale must lie in [1, 12]");
        if (input.empty() && !spec)
            throw UsageError(command == Command::Generate ? "generate needs --spec" : "missing --input");
        if (need_output && output.empty())
            throw UsageError("missing --out");
        if (command == Command::Check &&
            std::find(axiom_names().begin(), axiom_names().end(), axiom) == axiom_names().end())
            throw UsageError("unknown axiom: " + axiom);
    }
};

inline json conventions()
{
    return {{"domain", "[-1,1]^3 voxel grid of side 2^-k"},
            {"dilation", "Chebyshev (cube) neighbourhoods of radius ceil(rho/delta) cells"},
            {"covering", "dyadic boxes"},
            {"tubes", "closed capsules around closed unit segments, clipped by the grid domain"},
            {"rng", "mt19937_64, top 53 bits for uniforms"}};
}

struct RunResult {
    int status = 0;
    json report;
    std::string kind;
    double delta = 0.0;
    // sweep CSV columns after kind, delta, seed, status
    std::vector<std::pair<std::string, json>> row;
    // generate only: the family file contents
    std::string artifact;
};

namespace detail {

inline std::string read_file(const std::string& path)
{
    std::ifstream is(path, std::ios::binary);
    if (!is)
        throw UsageError("cannot read " + path);
    std::ostringstream os;
    os << is.rdbuf();
    return os.str();
}

inline void write_file(const std::string& path, const std::string& bytes)
{
    std::ofstream os(path, std::ios::binary);
    if (!os || !(os << bytes))
        throw UsageError("cannot write " + path);
}

inline int scale_of(double delta) { return static_cast<int>(std::lround(std::log2(1.0 / delta))); }

// Whatever the input holds, as far as it got decoded.
struct Input {
    std::string kind;
    std::vector<Solid> solids;
    double delta = 0.0;
    std::optional<ShadedFamily> shaded;
    std::optional<Voxels> voxels;
};

inline Input load_input(const ExperimentConfig& c)
{
    Input in;
    if (c.spec) {
        GeneratorSpec s = *c.spec;
        s.seed = c.seed;
        if (c.scale > 0)
            s.scale = std::ldexp(1.0, -c.scale);
        GeneratedFamily g = generate_tubes(s);
        in.kind = generator_name(s.kind);
        in.solids = std::move(g.solids);
        in.delta = g.delta;
        return in;
    }
    std::string bytes = read_file(c.input);
    in.kind = std::filesystem::path(c.input).stem().string();
    try {
        if (bytes.rfind("KVOX", 0) == 0) {
            std::istringstream is(bytes);
            in.voxels = read_kvox<3>(is);
            in.delta = in.voxels->delta();
        } else if (bytes.rfind("PK", 0) == 0) {
            in.shaded = family_from_archive(bytes);
            in.solids = in.shaded->solids;
            in.delta = in.shaded->delta();
        } else {
            json j = json::parse(bytes);
            in.solids = family_from_json(j, &in.delta);
            if (j.contains("generator"))
                in.kind = j["generator"].value("kind", in.kind);
        }
    } catch (const UsageError&) {
        throw;
    } catch (const std::exception& e) {
        throw UsageError("malformed input " + c.input + ": " + e.what());
    }
    return in;
}

inline int grid_scale(const ExperimentConfig& c, const Input& in)
{
    if (in.shaded)
        return in.shaded->k;
    if (in.voxels)
        return in.voxels->k();
    if (c.scale > 0)
        return c.scale;
    if (!(in.delta > 0))
        throw UsageError("input has no scale; pass --scale");
    return scale_of(in.delta);
}

inline ShadedFamily shaded(const ExperimentConfig& c, const Input& in)
{
    if (in.voxels)
        throw UsageError("this command needs a family, not a voxel file");
    if (in.shaded)
        return *in.shaded;
    if (in.solids.empty())
        throw UsageError("empty family");
    return full_shading(in.solids, grid_scale(c, in));
}

inline std::vector<Tube> tubes_only(const std::vector<Solid>& f)
{
    std::vector<Tube> out;
    for (const auto& s : f) {
        const auto* t = std::get_if<Tube>(&s);
        if (!t)
            throw UsageError("this axiom needs a family of tubes");
        out.push_back(*t);
    }
    return out;
}

inline void run_generate(const ExperimentConfig& c, const Input& in, RunResult& r)
{
    GeneratorSpec s = *c.spec;
    s.seed = c.seed;
    if (c.scale > 0)
        s.scale = std::ldexp(1.0, -c.scale);
    json fam = family_to_json(in.solids, in.delta);
    fam["generator"] = s.to_json();
    r.artifact = fam.dump(1) + "\n";
    r.report = {{"count", in.solids.size()}, {"delta", in.delta}};
    r.row = {{"count", in.solids.size()}};
}

inline void run_check(const ExperimentConfig& c, const Input& in, RunResult& r)
{
    if (in.solids.empty())
        throw UsageError("check needs a non-empty family");
    AxiomReport a;
    if (c.axiom == "convex-wolff") {
        a = convex_wolff_error(in.solids, c.threshold);
    } else if (c.axiom == "tube-wolff") {
        a = tube_wolff_error(in.solids, c.threshold);
    } else {
        std::vector<Tube> t = tubes_only(in.solids);
        if (c.axiom == "wolff")
            a = wolff_error(t, c.threshold);
        else if (c.axiom == "frostman")
            a = frostman_error(t, c.sigma, c.threshold);
        else if (c.axiom == "every-scale")
            a = check_every_scale(t, c.threshold).first;
        else
            a = check_self_similar(t, c.threshold);
    }
    r.status = a.passed ? 0 : 1;
    r.report = a.to_json();
    r.row = {{"error_constant", a.error_constant}, {"threshold", c.threshold}, {"passed", a.passed}};
}

inline void run_assouad(const ExperimentConfig& c, const Input& in, RunResult& r)
{
    Voxels e = in.voxels ? *in.voxels : union_voxels(shaded(c, in));
    if (e.count() == 0)
        throw UsageError("empty voxel set");
    ScanResult s = assouad_scan(e, c.min_sep);
    r.report = s.to_json();
    if (c.max_zeta && s.zeta > *c.max_zeta)
        r.status = 1;
    r.row = {{"zeta", s.zeta}, {"rho", s.rho}, {"r", s.r}};
}

inline void run_two_scale(const ExperimentConfig& c, const Input& in, RunResult& r)
{
    AmplifyResult a = two_scale_amplify(shaded(c, in), c.min_sep);
    const double L = std::log2(1.0 / a.refined.delta());
    const double floor = static_cast<double>(a.input_mass) / (64.0 * L * L);
    bool disjoint = true;
    for (std::size_t i = 0; i < a.selected.size(); ++i)
        for (std::size_t j = i + 1; j < a.selected.size(); ++j)
            disjoint = disjoint && (a.trace[a.selected[i]].center - a.trace[a.selected[j]].center).norm() > 2 * a.r;
    bool ok = disjoint && static_cast<double>(a.retained_mass) >= floor && a.r >= c.min_sep * a.rho - 1e-12;
    r.status = ok ? 0 : 1;
    json steps = json::array();
    for (std::size_t i = 0; i < a.trace.size(); ++i) {
        const auto& s = a.trace[i];
        steps.push_back({{"rho", s.rho}, {"r", s.r}, {"zeta", s.zeta}, {"center", to_json_vec(s.center)},
                         {"removed", s.removed}, {"remaining", s.remaining}});
    }
    r.report = {{"rho", a.rho},
                {"r", a.r},
                {"ratio_exponent", a.ratio_exponent},
                {"input_mass", a.input_mass},
                {"retained_mass", a.retained_mass},
                {"mass_floor", floor},
                {"balls_disjoint", disjoint},
                {"selected", a.selected},
                {"trace", steps}};
    r.row = {{"input_mass", a.input_mass},
             {"retained_mass", a.retained_mass},
             {"ratio_exponent", a.ratio_exponent}};
}

inline void run_dichotomy_cmd(const ExperimentConfig& c, const Input& in, RunResult& r)
{
    DichotomyRun d = run_dichotomy(shaded(c, in), c.eps);
    // the first round rejected the input itself
    if (d.rounds.empty() && d.final_branch == Branch::Inconclusive && d.stop_reason != "inconclusive")
        throw UsageError(d.stop_reason);
    json rounds = json::array();
    for (std::size_t i = 0; i < d.rounds.size(); ++i) {
        json j = d.rounds[i].record();
        j["round"] = i;
        rounds.push_back(j);
    }
    r.report = {{"final_branch", branch_name(d.final_branch)}, {"stop_reason", d.stop_reason}, {"rounds", rounds}};
    r.row = {{"final_branch", branch_name(d.final_branch)}, {"rounds", d.rounds.size()}};
}

inline void run_project(const ExperimentConfig& c, const Input& in, RunResult& r)
{
    ShadedFamily f = shaded(c, in);
    SlopeFunction g = SlopeFunction::sample([](double z) { return 1.5 * z + z * z / 300.0; }, f.delta());
    ProjectionChain p = projection_experiment(f, g);
    r.status = p.holds() ? 0 : 1;
    r.report = p.to_json();
    r.report["slope_function"] = "f(z) = 1.5 z + z^2 / 300";
    r.row = {{"sum_area", p.sum_area()}, {"union_area", p.union_area()}, {"lp_shadings", p.lp_shadings},
             {"holds", p.holds()}};
}

inline std::string utc_now()
{
    std::time_t t = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
    std::tm tm{};
    gmtime_r(&t, &tm);
    std::ostringstream os;
    os << std::put_time(&tm, "%Y-%m-%dT%H:%M:%SZ");
    return os.str();
}

} // namespace detail

// Runs one experiment in memory. Usage problems throw UsageError; other
// exceptions from the library (bad geometry, zero mass) count as usage too.
inline RunResult execute(const ExperimentConfig& c, bool need_output = true)
{
    c.validate(need_output);
    RunResult r;
    try {
        detail::Input in = detail::load_input(c);
        r.kind = in.kind;
        r.delta = in.delta;
        switch (c.command) {
        case Command::Generate:
            if (!c.spec)
                throw UsageError("generate needs --spec");
            detail::run_generate(c, in, r);
            break;
        case Command::Check:
            detail::run_check(c, in, r);
            break;
        case Command::Assouad:
            detail::run_assouad(c, in, r);
            break;
        case Command::TwoScale:
            detail::run_two_scale(c, in, r);
            break;
        case Command::PrismDichotomy:
            detail::run_dichotomy_cmd(c, in, r);
            break;
        case Command::Project:
            detail::run_project(c, in, r);
            break;
        }
    } catch (const UsageError&) {
        throw;
    } catch (const std::exception& e) {
        throw UsageError(e.what());
    }
    r.report = json{{"config", c.to_json()},
                    {"conventions", conventions()},
                    {"kind", r.kind},
                    {"delta", r.delta},
                    {"status", r.status == 0 ? "pass" : "fail"},
                    {"result", r.report}};
    return r;
}

inline std::string report_bytes(const RunResult& r) { return r.report.dump(2) + "\n"; }

inline std::string metadata_path(const std::string& out) { return out + ".meta.json"; }

// Writes the report (or the family, for generate) to c.output and the
// timestamps to a sibling metadata file. Returns the exit status.
inline int run(const ExperimentConfig& c, std::ostream& diag)
{
    auto t0 = std::chrono::steady_clock::now();
    std::string started = detail::utc_now();
    try {
        RunResult r = execute(c);
        detail::write_file(c.output, c.command == Command::Generate ? r.artifact : report_bytes(r));
        double wall = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
        json meta{{"started_utc", started}, {"wall_seconds", wall}, {"exit_status", r.status}};
        detail::write_file(metadata_path(c.output), meta.dump(2) + "\n");
        if (r.status != 0)
            diag << command_name(c.command) << ": check failed, see " << c.output << "\n";
        return r.status;
    } catch (const UsageError& e) {
        diag << "error: " << e.what() << "\n";
        return 2;
    }
}

// RFC 4180 field
inline std::string csv_field(const std::string& s)
{
    if (s.find_first_of(",\"\r\n") == std::string::npos)
        return s;
    std::string q = "\"";
    for (char ch : s) {
        if (ch == '"')
            q += '"';
        q += ch;
    }
    return q + "\"";
}

inline std::string csv_value(const json& v) { return csv_field(v.is_string() ? v.get<std::string>() : v.dump()); }

inline std::vector<std::string> sweep_columns(Command c)
{
    switch (c) {
    case Command::Generate:
        return {"count"};
    case Command::Check:
        return {"error_constant", "threshold", "passed"};
    case Command::Assouad:
        return {"zeta", "rho", "r", "zeta_nonincreasing"};
    case Command::TwoScale:
        return {"input_mass", "retained_mass", "ratio_exponent"};
    case Command::PrismDichotomy:
        return {"final_branch", "rounds"};
    case Command::Project:
        return {"sum_area", "union_area", "lp_shadings", "holds"};
    }
    return {};
}

struct SweepOutcome {
    int status = 0;
    std::string csv;
};

// One CSV row per config, sorted by (kind, delta). Sub-runs execute in
// parallel; rows are assembled afterwards so the order never depends on
// scheduling. For assouad, zeta_nonincreasing marks whether zeta does not
// grow as delta shrinks within each kind.
inline SweepOutcome sweep(const std::vector<ExperimentConfig>& configs, std::ostream& diag, unsigned threads = 0)
{
    SweepOutcome out;
    if (!configs.empty()) {
        for (const auto& c : configs) {
            if (c.command != configs.front().command) {
                diag << "error: sweep mixes commands " << command_name(configs.front().command) << " and "
                     << command_name(c.command) << "\n";
                out.status = 2;
                return out;
            }
        }
    }
    const Command cmd = configs.empty() ? Command::Check : configs.front().command;
    std::vector<std::string> cols = sweep_columns(cmd);
    std::ostringstream csv;
    csv << "kind,delta,seed,status";
    for (const auto& c : cols)
        csv << ',' << c;
    csv << ",wall_seconds\r\n";
    if (configs.empty()) {
        out.csv = csv.str();
        return out;
    }

    struct Slot {
        std::optional<RunResult> result;
        std::string error;
        double wall = 0.0;
    };
    std::vector<Slot> slots(configs.size());
    std::atomic<std::size_t> next{0};
    auto worker = [&] {
        for (std::size_t i; (i = next++) < configs.size();) {
            auto t0 = std::chrono::steady_clock::now();
            try {
                slots[i].result = execute(configs[i], false);
                if (!configs[i].output.empty())
                    detail::write_file(configs[i].output, configs[i].command == Command::Generate
                                                              ? slots[i].result->artifact
                                                              : report_bytes(*slots[i].result));
            } catch (const UsageError& e) {
                slots[i].error = e.what();
            }
            slots[i].wall = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
        }
    };
    if (threads == 0)
        threads = std::max(1u, std::thread::hardware_concurrency());
    threads = static_cast<unsigned>(std::min<std::size_t>(threads, configs.size()));
    std::vector<std::thread> pool;
    for (unsigned t = 1; t < threads; ++t)
        pool.emplace_back(worker);
    worker();
    for (auto& t : pool)
        t.join();

    for (std::size_t i = 0; i < slots.size(); ++i) {
        if (!slots[i].result) {
            diag << "error: sweep entry " << i << ": " << slots[i].error << "\n";
            out.status = 2;
            return out;
        }
    }

    std::vector<std::size_t> order(configs.size());
    for (std::size_t i = 0; i < order.size(); ++i)
        order[i] = i;
    std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
        const auto& ra = *slots[a].result;
        const auto& rb = *slots[b].result;
        return std::tie(ra.kind, ra.delta) < std::tie(rb.kind, rb.delta);
    });

    std::map<std::string, bool> nonincreasing;
    if (cmd == Command::Assouad) {
        // rows within a kind run from fine to coarse, so zeta may only grow along them
        std::map<std::string, double> last;
        for (auto i : order) {
            const auto& r = *slots[i].result;
            double z = r.row.front().second.get<double>();
            auto it = last.find(r.kind);
            nonincreasing.try_emplace(r.kind, true);
            if (it != last.end() && z < it->second - 1e-12)
                nonincreasing[r.kind] = false;
            last[r.kind] = z;
        }
    }

    for (auto i : order) {
        const auto& r = *slots[i].result;
        csv << csv_field(r.kind) << ',' << json(r.delta).dump() << ',' << configs[i].seed << ',' << r.status;
        for (const auto& [name, v] : r.row)
            csv << ',' << csv_value(v);
        if (cmd == Command::Assouad)
            csv << ',' << (nonincreasing[r.kind] ? "true" : "false");
        csv << ',' << json(slots[i].wall).dump() << "\r\n";
    }
    out.csv = csv.str();
    return out;
}

inline std::vector<ExperimentConfig> sweep_from_json(const json& j)
{
    const json& list = j.is_array() ? j : j.value("configs", json::array());
    if (!list.is_array())
        throw UsageError("sweep file needs a list of configs");
    std::vector<ExperimentConfig> out;
    for (const auto& c : list)
        out.push_back(ExperimentConfig::from_json(c));
    return out;
}

} // namespace kakeya::cli
