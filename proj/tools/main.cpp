#include <cstdint>
#include <filesystem>
#include <iostream>
#include <string>

#include "CLI11.hpp"

#include "gradclust/errors.hpp"
#include "gradclust/harness.hpp"
#include "gradclust/io.hpp"

namespace {

using namespace gradclust;

struct CommonArgs {
    std::string config_path;
    std::string out_dir;
    std::uint64_t seed = 0;
    bool seed_set = false;
};

void add_common(CLI::App* sub, CommonArgs& args, bool config_required) {
    auto* config = sub->add_option("--config", args.config_path, "experiment config JSON");
    if (config_required) config->required();
    sub->add_option("--out", args.out_dir, "output directory");
    sub->add_option("--seed", args.seed, "override the config seed")
        ->each([&args](const std::string&) { args.seed_set = true; });
}

ExperimentConfig load_config(const CommonArgs& args) {
    ExperimentConfig cfg = parse_experiment_config(read_file(args.config_path));
    if (args.seed_set) cfg.seed = args.seed;
    return cfg;
}

std::string resolve_out(const CommonArgs& args, const ExperimentConfig& cfg,
                        const std::string& kind) {
    if (!args.out_dir.empty()) return args.out_dir;
    if (!cfg.out.empty()) return cfg.out;
    return default_out_root() + "/" + kind + "-seed" + std::to_string(cfg.seed);
}

// Defaults for `demo-fig1` when no config is given: well-separated blobs
// with four coincident-gradient margin points and four clusters.
ExperimentConfig demo_default_config() {
    ExperimentConfig cfg;
    cfg.dataset.kind = "blobs";
    cfg.dataset.n_per_class = 40;
    cfg.dataset.separation = 3.0;
    cfg.dataset.overlap_count = 4;
    cfg.activation = "identity";
    cfg.trainer.lr = 0.5;
    cfg.trainer.batch = 84;
    cfg.trainer.steps = 30;
    cfg.schedule.clusters = 4;
    cfg.roster = {"full"};
    return cfg;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"gradient variance measurement and clustering harness"};
    app.require_subcommand(1);

    CommonArgs gen_args, run_args, sweep_args, demo_args;
    std::string plot_csv, plot_out;
    int jobs = 1;

    CLI::App* gen = app.add_subcommand("gen-data", "generate a dataset and save it");
    add_common(gen, gen_args, true);

    CLI::App* run = app.add_subcommand("run", "train one trajectory and measure estimators");
    add_common(run, run_args, true);

    CLI::App* sweep = app.add_subcommand("sweep", "run a grid of trajectories and aggregate");
    add_common(sweep, sweep_args, true);
    sweep->add_option("--jobs", jobs, "parallel trials")->check(CLI::PositiveNumber);

    CLI::App* demo = app.add_subcommand("demo-fig1", "per-step cluster and boundary demo");
    add_common(demo, demo_args, false);

    CLI::App* plot = app.add_subcommand("plot", "render a reports or sweep CSV to SVG");
    plot->add_option("csv", plot_csv, "reports.csv or sweep.csv")->required();
    plot->add_option("--out", plot_out, "output directory")->required();

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int rc = app.exit(e);
        return rc == 0 ? 0 : 2;
    }

    try {
        if (gen->parsed()) {
            const ExperimentConfig cfg = load_config(gen_args);
            const std::string out = resolve_out(gen_args, cfg, "data");
            const ExperimentSetup setup = build_setup(cfg);
            std::filesystem::create_directories(out);
            save_dataset(setup.train, out + "/train.dataset");
            write_file_atomic(out + "/config.json", experiment_config_json(cfg));
            std::cout << "wrote " << out << "/train.dataset (" << setup.train.size()
                      << " examples)\n";
        } else if (run->parsed()) {
            const ExperimentConfig cfg = load_config(run_args);
            const std::string out = resolve_out(run_args, cfg, "run");
            const TrajectoryResult result = run_trajectory(cfg, out);
            if (result.failed) {
                std::cerr << "trajectory failed after step " << result.steps_done << ": "
                          << result.failure << "\n";
                std::cerr << "partial artifacts kept in " << out << "\n";
                return 3;
            }
            std::cout << "wrote " << out << "/reports.csv (" << result.reports.size()
                      << " rows)\n";
        } else if (sweep->parsed()) {
            const SweepSpec spec = parse_sweep_spec(read_file(sweep_args.config_path));
            SweepSpec adjusted = spec;
            if (sweep_args.seed_set) adjusted.base.seed = sweep_args.seed;
            const std::string out = resolve_out(sweep_args, adjusted.base, "sweep");
            const std::vector<SweepRow> rows = run_sweep(adjusted, out, jobs);
            std::size_t failed = 0;
            for (const SweepRow& r : rows) failed += r.failed ? 1 : 0;
            std::cout << "wrote " << out << "/sweep.csv (" << rows.size() << " rows";
            if (failed > 0) std::cout << ", " << failed << " marked failed";
            std::cout << ")\n";
        } else if (demo->parsed()) {
            const ExperimentConfig cfg = demo_args.config_path.empty()
                                             ? [&] {
                                                   ExperimentConfig c = demo_default_config();
                                                   if (demo_args.seed_set) c.seed = demo_args.seed;
                                                   return c;
                                               }()
                                             : load_config(demo_args);
            const std::string out = resolve_out(demo_args, cfg, "demo");
            const DemoResult result = demo_fig1(cfg, out);
            std::cout << "wrote " << result.steps.size() << " frames to " << out << "/plots\n";
        } else if (plot->parsed()) {
            const std::vector<std::string> warnings = emit_plots(read_file(plot_csv), plot_out);
            for (const std::string& w : warnings) std::cerr << "warning: " << w << "\n";
            std::cout << "wrote plots to " << plot_out << "/plots\n";
        }
    } catch (const ConfigError& e) {
        std::cerr << "config error: " << e.what() << "\n";
        return 2;
    } catch (const IoError& e) {
        std::cerr << "io error: " << e.what() << "\n";
        return 2;
    } catch (const NumericError& e) {
        std::cerr << "numerical failure: " << e.what() << "\n";
        return 3;
    } catch (const ContractError& e) {
        std::cerr << "internal contract violation: " << e.what() << "\n";
        return 2;
    }
    return 0;
}
