// ltcl: run long-tail / continual-learning experiments from a JSON config.
//
//   ltcl bound-grid --config cfg.json --out runs/grid [--seed N] [--workers N]
//   ltcl two-phase  --config cfg.json --out runs/cl
//   ltcl compare    --config cfg.json --out runs/cmp
//   ltcl plot-data  --input runs/grid --kind distance-vs-if --out plots/
//
// Exit codes: 0 success, 1 validation error, 2 bound violation, 3 runtime failure.

#include <CLI11.hpp>

#include <filesystem>
#include <iostream>
#include <optional>
#include <string>

#include "ltcl/error.hpp"
#include "ltcl/experiment.hpp"

namespace fs = std::filesystem;

namespace {

struct RunArgs {
    std::string config;
    std::string out;
    std::optional<std::uint64_t> seed;
    std::optional<int> workers;
};

void add_run_options(CLI::App* cmd, RunArgs& args) {
    cmd->add_option("--config", args.config, "experiment config (JSON) or run manifest")->required();
    cmd->add_option("--out", args.out, "output directory")->required();
    cmd->add_option("--seed", args.seed, "override the config seed");
    cmd->add_option("--workers", args.workers, "override the worker count")->check(CLI::PositiveNumber);
}

ltcl::ExperimentConfig resolve(const RunArgs& args, ltcl::ExperimentKind expected) {
    auto config = ltcl::load_config(args.config);
    if (config.kind != expected) {
        ltcl::fail(ltcl::ErrorCode::Validation, std::string("kind: this subcommand runs ") + ltcl::to_string(expected) +
                                                    " experiments, config has " + ltcl::to_string(config.kind));
    }
    if (args.seed) {
        config.seed = *args.seed;
    }
    if (args.workers) {
        config.workers = *args.workers;
    }
    return config;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Long-tailed recognition as two-phase continual learning"};
    app.require_subcommand(1);
    app.set_version_flag("--version", LTCL_VERSION);

    RunArgs grid_args;
    RunArgs two_phase_args;
    RunArgs compare_args;
    auto* grid = app.add_subcommand("bound-grid", "weight-distance bounds over an (IF, mu) grid");
    add_run_options(grid, grid_args);
    auto* two_phase = app.add_subcommand("two-phase", "head then tail training under each CL strategy");
    add_run_options(two_phase, two_phase_args);
    auto* compare = app.add_subcommand("compare", "two-phase strategies against single-phase training");
    add_run_options(compare, compare_args);

    std::string plot_input;
    std::string plot_kind;
    std::string plot_out;
    auto* plot = app.add_subcommand("plot-data", "reshape run outputs into plot-ready CSV series");
    plot->add_option("--input", plot_input, "directory of a finished run")->required();
    plot->add_option("--kind", plot_kind, "distance-vs-if | distance-vs-mu | per-class-delta | per-class-norm | accuracy-diff")
        ->required();
    plot->add_option("--out", plot_out, "output directory")->required();

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? ltcl::kExitOk : ltcl::kExitValidation;
    }

    try {
        if (grid->parsed()) {
            const auto config = resolve(grid_args, ltcl::ExperimentKind::BoundGrid);
            const auto outcome = ltcl::run_bound_grid(config, grid_args.out, std::cout);
            if (outcome.any_tight_violation) {
                std::cerr << "error: measured distance exceeds the tight bound in at least one cell\n";
            }
            return ltcl::exit_status(outcome);
        }
        if (two_phase->parsed()) {
            const auto config = resolve(two_phase_args, ltcl::ExperimentKind::LtrTwoPhase);
            return ltcl::exit_status(ltcl::run_ltr_two_phase(config, two_phase_args.out, std::cout));
        }
        if (compare->parsed()) {
            const auto config = resolve(compare_args, ltcl::ExperimentKind::Compare);
            return ltcl::exit_status(ltcl::run_compare(config, compare_args.out, std::cout));
        }
        const auto written = ltcl::emit_plot_data(plot_input, plot_kind, plot_out);
        std::cout << "wrote " << written.string() << '\n';
        return ltcl::kExitOk;
    } catch (const ltcl::Error& e) {
        std::cerr << "error: " << e.what() << '\n';
        return ltcl::exit_status(e);
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << '\n';
        return ltcl::kExitRuntime;
    }
}
