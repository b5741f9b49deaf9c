#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <cmath>
#include <filesystem>
#include <string>
#include <vector>

#include "gradclust/errors.hpp"
#include "gradclust/harness.hpp"
#include "gradclust/io.hpp"
#include "gradclust/matrix.hpp"

using namespace gradclust;
namespace fs = std::filesystem;

namespace {

std::string scratch_dir(const std::string& name) {
    const fs::path dir = fs::temp_directory_path() / ("gradclust_harness_" + name);
    fs::remove_all(dir);
    fs::create_directories(dir);
    return dir.string();
}

// Small rf problem that still exercises every estimator and the refit
// schedule: 3 snapshots, refits at steps 0 and 6.
ExperimentConfig tiny_config() {
    ExperimentConfig cfg;
    cfg.seed = 7;
    cfg.dataset.input_dim = 8;
    cfg.dataset.teacher_hidden = 4;
    cfg.dataset.student_hidden = 16;
    cfg.dataset.train_n = 24;
    cfg.trainer.lr = 0.05;
    cfg.trainer.batch = 4;
    cfg.trainer.steps = 12;
    cfg.schedule.log_every = 4;
    cfg.schedule.draws = 8;
    cfg.schedule.refit_every = 6;
    cfg.schedule.gc_iters = 5;
    cfg.schedule.clusters = 4;
    return cfg;
}

ExperimentConfig demo_config(std::size_t clusters, long steps) {
    ExperimentConfig cfg;
    cfg.seed = 5;
    cfg.dataset.kind = "blobs";
    cfg.dataset.n_per_class = 10;
    cfg.dataset.separation = 3.0;
    cfg.dataset.overlap_count = 4;
    cfg.activation = "identity";
    cfg.trainer.lr = 0.5;
    cfg.trainer.batch = 24;
    cfg.trainer.steps = steps;
    cfg.schedule.clusters = clusters;
    cfg.schedule.gc_iters = 6;
    cfg.roster = {"full"};
    return cfg;
}

std::vector<VarianceReport> rows_for(const std::vector<VarianceReport>& rows,
                                     const std::string& name) {
    std::vector<VarianceReport> out;
    for (const VarianceReport& r : rows)
        if (r.estimator == name) out.push_back(r);
    return out;
}

}  // namespace

TEST_CASE("config json round-trips through parse") {
    const ExperimentConfig defaults;
    const ExperimentConfig back = parse_experiment_config(experiment_config_json(defaults));
    CHECK(back.seed == defaults.seed);
    CHECK(back.dataset.kind == defaults.dataset.kind);
    CHECK(back.dataset.train_n == defaults.dataset.train_n);
    CHECK(back.trainer.lr == defaults.trainer.lr);
    CHECK(back.trainer.steps == defaults.trainer.steps);
    CHECK(back.schedule.log_every == defaults.schedule.log_every);
    CHECK(back.schedule.clusters == defaults.schedule.clusters);
    CHECK(back.roster == defaults.roster);
}

TEST_CASE("unknown config keys are rejected wherever they sit") {
    CHECK_THROWS_WITH_AS(parse_experiment_config(R"({"sede": 1})"),
                         doctest::Contains("unknown key 'sede'"), ConfigError);
    CHECK_THROWS_WITH_AS(parse_experiment_config(R"({"dataset": {"trian_n": 8}})"),
                         doctest::Contains("trian_n"), ConfigError);
    CHECK_THROWS_WITH_AS(parse_experiment_config(R"({"schedule": {"clusterz": 2}})"),
                         doctest::Contains("clusterz"), ConfigError);
    CHECK_THROWS_AS(parse_experiment_config("not json"), ConfigError);
    CHECK_THROWS_WITH_AS(parse_experiment_config(R"({"version": 2})"),
                         doctest::Contains("version"), ConfigError);
}

TEST_CASE("config validation enforces the documented bounds") {
    ExperimentConfig cfg = tiny_config();
    cfg.trainer.batch = 25;  // N = 24
    CHECK_THROWS_AS(cfg.validate(), ConfigError);
    cfg = tiny_config();
    cfg.schedule.clusters = 25;
    CHECK_THROWS_AS(cfg.validate(), ConfigError);
    cfg = tiny_config();
    cfg.roster = {"sg-3b"};
    CHECK_THROWS_AS(cfg.validate(), ConfigError);
    cfg = tiny_config();
    cfg.roster = {"gc", "gc"};
    CHECK_THROWS_AS(cfg.validate(), ConfigError);
    cfg = tiny_config();
    cfg.dataset.duplicate_fraction = 0.5;  // no duplicate_distinct
    CHECK_THROWS_AS(cfg.validate(), ConfigError);
    cfg = tiny_config();
    cfg.schedule.draws = 1;
    CHECK_THROWS_AS(cfg.validate(), ConfigError);
}

TEST_CASE("trajectory writes the scheduled rows and artifacts") {
    const std::string dir = scratch_dir("traj");
    const ExperimentConfig cfg = tiny_config();
    const TrajectoryResult result = run_trajectory(cfg, dir);
    REQUIRE(!result.failed);
    CHECK(result.steps_done == 12);
    // floor(steps / log_every) snapshots times the roster size.
    CHECK(result.reports.size() == 3 * cfg.roster.size());
    for (const VarianceReport& r : result.reports) {
        CHECK(r.draws == cfg.schedule.draws);
        CHECK((r.step == 4 || r.step == 8 || r.step == 12));
    }
    CHECK(fs::exists(dir + "/config.json"));
    CHECK(fs::exists(dir + "/reports.csv"));
    CHECK(fs::exists(dir + "/run.log"));
    CHECK(fs::exists(dir + "/model.json"));
    CHECK(fs::exists(dir + "/clusters/step_000000.json"));
    CHECK(fs::exists(dir + "/clusters/step_000006.json"));
    CHECK(fs::exists(dir + "/clusters/step_000012.json"));
    CHECK(!fs::exists(dir + "/FAILED"));
    const std::vector<VarianceReport> parsed = parse_variance_csv(read_file(dir + "/reports.csv"));
    CHECK(parsed.size() == result.reports.size());
}

TEST_CASE("full-only roster reports exact zeros") {
    const std::string dir = scratch_dir("full_only");
    ExperimentConfig cfg = tiny_config();
    cfg.roster = {"full"};
    const TrajectoryResult result = run_trajectory(cfg, dir);
    REQUIRE(result.reports.size() == 3);
    for (const VarianceReport& r : result.reports) {
        CHECK(r.avg_var == 0.0);
        CHECK(r.norm_var == 0.0);
        CHECK(r.e_g2 > 0.0);
    }
}

TEST_CASE("identical config reruns write identical bytes") {
    const std::string a = scratch_dir("rerun_a");
    const std::string b = scratch_dir("rerun_b");
    const ExperimentConfig cfg = tiny_config();
    run_trajectory(cfg, a);
    run_trajectory(cfg, b);
    CHECK(read_file(a + "/reports.csv") == read_file(b + "/reports.csv"));
    CHECK(read_file(a + "/config.json") == read_file(b + "/config.json"));
    CHECK(read_file(a + "/run.log") == read_file(b + "/run.log"));
    CHECK(read_file(a + "/model.json") == read_file(b + "/model.json"));
}

TEST_CASE("estimator numbers do not depend on the rest of the roster") {
    const std::string a = scratch_dir("roster_a");
    const std::string b = scratch_dir("roster_b");
    ExperimentConfig cfg = tiny_config();
    cfg.roster = {"sg-b", "gc", "svrg"};
    const TrajectoryResult wide = run_trajectory(cfg, a);
    cfg.roster = {"sg-b"};
    const TrajectoryResult narrow = run_trajectory(cfg, b);
    const auto wide_sgb = rows_for(wide.reports, "sg-b");
    const auto narrow_sgb = rows_for(narrow.reports, "sg-b");
    REQUIRE(wide_sgb.size() == narrow_sgb.size());
    for (std::size_t i = 0; i < wide_sgb.size(); ++i) {
        CHECK(wide_sgb[i].step == narrow_sgb[i].step);
        CHECK(wide_sgb[i].avg_var == narrow_sgb[i].avg_var);
        CHECK(wide_sgb[i].norm_var == narrow_sgb[i].norm_var);
    }
}

TEST_CASE("divergence aborts but keeps partial artifacts") {
    const std::string dir = scratch_dir("diverge");
    ExperimentConfig cfg = tiny_config();
    // Weight decay overwhelms the step: parameters flip sign and grow by
    // ~1e7 per step until they overflow.
    cfg.trainer.lr = 1.0;
    cfg.trainer.weight_decay = 1e8;
    cfg.trainer.steps = 400;
    const TrajectoryResult result = run_trajectory(cfg, dir);
    CHECK(result.failed);
    CHECK(result.steps_done < 400);
    CHECK(!result.failure.empty());
    CHECK(fs::exists(dir + "/FAILED"));
    CHECK(fs::exists(dir + "/reports.csv"));
    CHECK(fs::exists(dir + "/run.log"));
}

TEST_CASE("single-point sweep equals the trajectory aggregate") {
    const std::string sweep_dir = scratch_dir("sweep_single");
    const std::string traj_dir = scratch_dir("sweep_single_traj");
    SweepSpec spec;
    spec.base = tiny_config();
    spec.base.roster = {"sg-b", "gc"};
    const std::vector<SweepRow> rows = run_sweep(spec, sweep_dir, 1);
    REQUIRE(rows.size() == 4);  // 2 estimators x {mean, max}
    const TrajectoryResult traj = run_trajectory(spec.base, traj_dir);
    for (const SweepRow& row : rows) {
        CHECK(!row.failed);
        CHECK(row.seeds == 1);
        CHECK(row.avg_var_std == 0.0);
        const auto series = rows_for(traj.reports, row.estimator);
        REQUIRE(series.size() == 3);
        // Last 70% of 3 snapshots = the last 2.
        double mean = (series[1].avg_var + series[2].avg_var) / 2.0;
        double max = std::max(series[1].avg_var, series[2].avg_var);
        CHECK(row.avg_var == doctest::Approx(row.stat == "mean" ? mean : max).epsilon(1e-15));
    }
    CHECK(fs::exists(sweep_dir + "/sweep.csv"));
    CHECK(fs::exists(sweep_dir + "/config.json"));
}

TEST_CASE("sweep marks diverged trials failed and continues") {
    const std::string dir = scratch_dir("sweep_failed");
    SweepSpec spec;
    spec.base = tiny_config();
    spec.base.roster = {"sg-b"};
    spec.base.trainer.weight_decay = 1e8;
    spec.base.trainer.steps = 60;
    spec.base.schedule.log_every = 10;
    // lr 1e-12 keeps the decay factor near 1; lr 1.0 overflows.
    spec.axes.lr = {1e-12, 1.0};
    const std::vector<SweepRow> rows = run_sweep(spec, dir, 2);
    REQUIRE(rows.size() == 4);
    for (const SweepRow& row : rows) {
        if (row.lr == 1.0) {
            CHECK(row.failed);
            CHECK(row.seeds == 0);
        } else {
            CHECK(!row.failed);
            CHECK(row.seeds == 1);
        }
    }
    const std::vector<SweepRow> parsed = parse_sweep_csv(read_file(dir + "/sweep.csv"));
    REQUIRE(parsed.size() == rows.size());
    for (std::size_t i = 0; i < rows.size(); ++i) {
        CHECK(parsed[i].estimator == rows[i].estimator);
        CHECK(parsed[i].stat == rows[i].stat);
        CHECK(parsed[i].avg_var == rows[i].avg_var);
        CHECK(parsed[i].failed == rows[i].failed);
    }
}

TEST_CASE("sweep csv parser names the offending row") {
    CHECK_THROWS_WITH_AS(parse_sweep_csv(""), doctest::Contains("row 1"), IoError);
    const std::string good = std::string(
        "overparam,lr,dup_fraction,estimator,stat,avg_var,avg_var_std,norm_var,norm_var_std,"
        "seeds,failed\n");
    CHECK_THROWS_WITH_AS(parse_sweep_csv(good + "1,0.01,0,gc,mean,1,0,1,0,3\n"),
                         doctest::Contains("row 2"), IoError);
    CHECK_THROWS_WITH_AS(parse_sweep_csv(good + "1,0.01,0,gc,median,1,0,1,0,3,0\n"),
                         doctest::Contains("stat"), IoError);
}

TEST_CASE("margin points share identical gradients and one cluster") {
    const std::string dir = scratch_dir("demo_margin");
    const ExperimentConfig cfg = demo_config(4, 3);
    // Establish the premise first: the four margin points' gradients agree
    // pairwise to well under 1e-6 at the initial parameters.
    const ExperimentSetup setup = build_setup(cfg);
    std::vector<std::size_t> margin;
    for (std::size_t i = 0; i < setup.train.size(); ++i)
        if (setup.train.provenance[i].tag == ProvenanceTag::margin) margin.push_back(i);
    REQUIRE(margin.size() == 4);
    const PerExampleFactors factors =
        backward_factored(setup.model, full_batch(setup.train), setup.loss);
    for (std::size_t a = 0; a < margin.size(); ++a)
        for (std::size_t b = a + 1; b < margin.size(); ++b) {
            const auto ga = per_example_gradient(factors, margin[a]);
            const auto gb = per_example_gradient(factors, margin[b]);
            double dist2 = 0.0;
            for (std::size_t j = 0; j < ga.size(); ++j)
                dist2 += (ga[j] - gb[j]) * (ga[j] - gb[j]);
            CHECK(std::sqrt(dist2) < 1e-6);
        }
    const DemoResult demo = demo_fig1(cfg, dir);
    REQUIRE(demo.steps.size() == 3);
    for (const DemoStep& step : demo.steps)
        for (std::size_t i = 1; i < margin.size(); ++i)
            CHECK(step.assignments[margin[i]] == step.assignments[margin[0]]);
    CHECK(fs::exists(dir + "/plots/demo_step_000.svg"));
    CHECK(fs::exists(dir + "/plots/demo_step_002.svg"));
    CHECK(fs::exists(dir + "/clusters/step_000000.json"));
    const std::string svg = read_file(dir + "/plots/demo_step_001.svg");
    CHECK(svg.find("<metadata>step=1 lr=0.5</metadata>") != std::string::npos);
    // One polyline for the boundary plus one per cluster.
    std::size_t polylines = 0;
    for (std::size_t at = svg.find("<polyline"); at != std::string::npos;
         at = svg.find("<polyline", at + 1))
        ++polylines;
    CHECK(polylines == 5);
}

TEST_CASE("single-cluster demo predicts the actual next boundary") {
    const std::string dir = scratch_dir("demo_k1");
    const DemoResult demo = demo_fig1(demo_config(1, 3), dir);
    REQUIRE(demo.steps.size() == 3);
    for (const DemoStep& step : demo.steps) {
        REQUIRE(step.predicted.size() == 1);
        const double scale = std::hypot(step.next_boundary[0], step.next_boundary[1]);
        REQUIRE(scale > 0.0);
        CHECK(std::abs(step.predicted[0][0] - step.next_boundary[0]) <= 1e-9 * scale);
        CHECK(std::abs(step.predicted[0][1] - step.next_boundary[1]) <= 1e-9 * scale);
    }
}

TEST_CASE("demo refuses non-blobs configs") {
    CHECK_THROWS_AS(demo_fig1(tiny_config(), scratch_dir("demo_rf")), ConfigError);
}

TEST_CASE("plots render deterministically from a reports csv") {
    const std::string run_dir = scratch_dir("plot_run");
    ExperimentConfig cfg = tiny_config();
    cfg.roster = {"full", "sg-b"};
    run_trajectory(cfg, run_dir);
    const std::string csv = read_file(run_dir + "/reports.csv");
    const std::string out_a = scratch_dir("plot_a");
    const std::string out_b = scratch_dir("plot_b");
    const std::vector<std::string> warn_a = emit_plots(csv, out_a);
    const std::vector<std::string> warn_b = emit_plots(csv, out_b);
    CHECK(warn_a == warn_b);
    // The all-zero 'full' series cannot sit on a log axis.
    bool full_omitted = false;
    for (const std::string& w : warn_a)
        if (w.find("full") != std::string::npos && w.find("omitted") != std::string::npos)
            full_omitted = true;
    CHECK(full_omitted);
    CHECK(read_file(out_a + "/plots/variance_vs_step.svg") ==
          read_file(out_b + "/plots/variance_vs_step.svg"));
    CHECK(fs::exists(out_a + "/plots/normalized_vs_step.svg"));
}

TEST_CASE("plot rejects malformed csv naming the row") {
    const std::string dir = scratch_dir("plot_bad");
    CHECK_THROWS_WITH_AS(
        emit_plots("step,estimator,avg_var,e_g2,norm_var,draws\n4,sg-b,oops,1,1,8\n", dir),
        doctest::Contains("row 2"), IoError);
    CHECK_THROWS_WITH_AS(emit_plots("who,knows\n", dir), doctest::Contains("header"), IoError);
}
