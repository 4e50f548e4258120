// Command-line entry point: run experiments from flat key=value config
// files, list the built-in problem presets, and render CSV artifacts as SVG
// plots.  Exit codes: 0 success, 1 configuration error, 2 solver failure.

#include <cstdio>
#include <exception>
#include <string>

#include <CLI11.hpp>

#include "mfg/error.hpp"
#include "mfg/experiment.hpp"
#include "mfg/svgplot.hpp"

int main(int argc, char** argv) {
    CLI::App app{"mfgsolve: mean field games via finite differences and deep policy iteration"};
    app.require_subcommand(1);

    // run
    auto* run = app.add_subcommand("run", "run an experiment from a config file");
    std::string config_path, out_override, seed_override;
    bool deterministic = false;
    run->add_option("--config", config_path, "path to key=value config file")->required();
    run->add_option("--out", out_override, "override the output directory");
    run->add_option("--seed", seed_override, "override the RNG seed");
    run->add_flag("--deterministic", deterministic,
                  "force bit-reproducible execution (single thread)");

    // list-problems
    auto* lp = app.add_subcommand("list-problems", "print the built-in problem presets");

    // plot
    auto* plot = app.add_subcommand("plot", "render a CSV artifact as an SVG plot");
    std::string plot_input, plot_kind, plot_out;
    int smooth = 0;
    double slice_time = std::numeric_limits<double>::quiet_NaN();
    plot->add_option("--input", plot_input, "input CSV (history.csv or solution.csv)")->required();
    plot->add_option("--kind", plot_kind, "loss | slice | linf")->required();
    plot->add_option("--out", plot_out, "output SVG path")->required();
    plot->add_option("--smooth", smooth, "Savitzky-Golay window (odd, 0 = off)");
    plot->add_option("--time", slice_time, "time of the density slice (default T/2)");

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        app.exit(e);
        return 1;
    }

    try {
        if (run->parsed()) {
            mfg::ExperimentConfig cfg = mfg::parse_config_file(config_path);
            if (!out_override.empty()) cfg.out_dir = out_override;
            if (!seed_override.empty()) cfg.seed = mfg::detail::to_u64("--seed", seed_override);
            if (deterministic) cfg.deterministic = true;
            mfg::run_experiment(cfg);
            std::printf("wrote artifacts to %s\n", cfg.out_dir.c_str());
        } else if (lp->parsed()) {
            std::fputs(mfg::list_problems_table().c_str(), stdout);
        } else if (plot->parsed()) {
            mfg::PlotOptions opts;
            opts.smooth_window = smooth;
            opts.time = slice_time;
            mfg::emit_plot(plot_input, plot_kind, plot_out, opts);
            std::printf("wrote %s\n", plot_out.c_str());
        }
    } catch (const mfg::ConfigError& e) {
        std::fprintf(stderr, "config error: %s\n", e.what());
        return 1;
    } catch (const mfg::SolverError& e) {
        std::fprintf(stderr, "solver error: %s\n", e.what());
        return 2;
    } catch (const std::exception& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return 2;
    }
    return 0;
}
