#include "kakeya/cli.hpp"

#include <CLI11.hpp>

#include <iostream>

using namespace kakeya;
using namespace kakeya::cli;

namespace {

struct Flags {
    std::string input, output, spec_path, kind, config_path;
    int scale = 0;
    double eps = 0.1, min_sep = 4.0, threshold = 100.0, sigma = 2.0, max_zeta = 0.0;
    std::string axiom = "convex-wolff";
    std::uint64_t seed = 0;
    unsigned threads = 0;
};

void add_common(CLI::App* app, Flags& f)
{
    app->add_option("--scale", f.scale, "delta = 2^-k");
    app->add_option("--seed", f.seed, "generator seed");
    app->add_option("--out", f.output, "output path")->required();
}

void add_input(CLI::App* app, Flags& f)
{
    app->add_option("--input,-i", f.input, "family JSON, shaded archive or KVOX file");
    app->add_option("--kind", f.kind, "generate this family kind in memory instead of reading --input");
}

ExperimentConfig to_config(Command cmd, const Flags& f, const CLI::App* sub)
{
    ExperimentConfig c;
    if (!f.config_path.empty()) {
        json j;
        try {
            j = json::parse(cli::detail::read_file(f.config_path));
        } catch (const json::exception& e) {
            throw UsageError(std::string("malformed config: ") + e.what());
        }
        if (!j.contains("command"))
            j["command"] = command_name(cmd);
        c = ExperimentConfig::from_json(j);
        if (c.command != cmd)
            throw UsageError("config command does not match subcommand");
    }
    c.command = cmd;
    auto given = [&](const char* name) { return sub->get_option_no_throw(name) && sub->count(name) > 0; };
    if (given("--input"))
        c.input = f.input;
    if (given("--out"))
        c.output = f.output;
    if (given("--scale"))
        c.scale = f.scale;
    if (given("--eps"))
        c.eps = f.eps;
    if (given("--min-sep"))
        c.min_sep = f.min_sep;
    if (given("--threshold"))
        c.threshold = f.threshold;
    if (given("--sigma"))
        c.sigma = f.sigma;
    if (given("--axiom"))
        c.axiom = f.axiom;
    if (given("--max-zeta"))
        c.max_zeta = f.max_zeta;
    if (given("--spec")) {
        json j;
        try {
            j = json::parse(cli::detail::read_file(f.spec_path));
            c.spec = GeneratorSpec::from_json(j);
        } catch (const UsageError&) {
            throw;
        } catch (const std::exception& e) {
            throw UsageError(std::string("malformed spec: ") + e.what());
        }
        c.seed = c.spec->seed;
    }
    if (given("--kind")) {
        try {
            c.spec = GeneratorSpec{generator_kind(f.kind), 1.0 / 32, 0, json::object()};
        } catch (const std::invalid_argument& e) {
            throw UsageError(e.what());
        }
    }
    if (given("--seed"))
        c.seed = f.seed;
    return c;
}

} // namespace

int main(int argc, char** argv)
{
    CLI::App app{"kakeya-lab: tube families, axiom checks and multi-scale experiments"};
    app.require_subcommand(1);
    Flags f;

    auto* gen = app.add_subcommand("generate", "write a generated family as JSON");
    gen->add_option("--spec", f.spec_path, "GeneratorSpec JSON");
    gen->add_option("--kind", f.kind, "generator kind (instead of --spec)");
    add_common(gen, f);

    auto* check = app.add_subcommand("check", "measure an axiom constant; exit 1 if above --threshold");
    add_input(check, f);
    check->add_option("--axiom", f.axiom, "convex-wolff, tube-wolff, wolff, frostman, every-scale, self-similar");
    check->add_option("--threshold", f.threshold, "pass threshold C");
    check->add_option("--sigma", f.sigma, "Frostman exponent");
    add_common(check, f);

    auto* assouad = app.add_subcommand("assouad", "scan for the smallest zeta");
    add_input(assouad, f);
    assouad->add_option("--min-sep", f.min_sep, "scale separation A: r >= A rho");
    assouad->add_option("--max-zeta", f.max_zeta, "exit 1 if zeta exceeds this");
    add_common(assouad, f);

    auto* two = app.add_subcommand("two-scale", "two-scale amplification of a fully shaded family");
    add_input(two, f);
    two->add_option("--min-sep", f.min_sep, "scale separation A");
    add_common(two, f);

    auto* dich = app.add_subcommand("prism-dichotomy", "iterate the coarsening dichotomy");
    add_input(dich, f);
    dich->add_option("--eps", f.eps, "epsilon");
    add_common(dich, f);

    auto* proj = app.add_subcommand("project", "twisted projection experiment");
    add_input(proj, f);
    add_common(proj, f);

    for (auto* s : {gen, check, assouad, two, dich, proj})
        s->add_option("--config", f.config_path, "ExperimentConfig JSON; flags override its fields");

    auto* sw = app.add_subcommand("sweep", "run a list of configs of one command; write CSV");
    sw->add_option("--configs", f.config_path, "JSON list of ExperimentConfig")->required();
    sw->add_option("--threads", f.threads, "worker threads (default: hardware)");
    sw->add_option("--out", f.output, "CSV path")->required();

    try {
        app.parse(argc, argv);
    } catch (const CLI::Success& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        app.exit(e);
        return 2;
    }

    try {
        if (sw->parsed()) {
            json j;
            try {
                j = json::parse(cli::detail::read_file(f.config_path));
            } catch (const json::exception& e) {
                throw UsageError(std::string("malformed sweep file: ") + e.what());
            }
            SweepOutcome o = sweep(sweep_from_json(j), std::cerr, f.threads);
            if (o.status == 0)
                cli::detail::write_file(f.output, o.csv);
            return o.status;
        }
        for (auto* s : {gen, check, assouad, two, dich, proj})
            if (s->parsed())
                return run(to_config(command_from_name(s->get_name()), f, s), std::cerr);
    } catch (const UsageError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 2;
    }
    return 2;
}
