#ifndef GRADCLUST_HARNESS_HPP
#define GRADCLUST_HARNESS_HPP

#include <array>
#include <cstdint>
#include <string>
#include <vector>

#include "gradclust/data.hpp"
#include "gradclust/metrics.hpp"
#include "gradclust/model.hpp"

namespace gradclust {

// Experiment orchestration: one SGD trajectory with scheduled variance
// measurements, sweeps over its hyperparameters, the cluster demo, and
// CSV-to-SVG rendering. Estimators are measured on the trajectory, never
// used to update it. Everything is keyed by (config, seed): identical
// inputs write identical artifact bytes.

struct DatasetSpec {
    std::string kind = "rf";  // "rf" | "blobs"
    // rf (teacher-student random features)
    std::size_t input_dim = 20;
    std::size_t teacher_hidden = 20;
    std::size_t student_hidden = 200;
    std::size_t train_n = 200;
    std::size_t duplicate_distinct = 0;  // 0 = no duplicate injection
    double duplicate_fraction = 0.0;
    double corrupt_fraction = 0.0;
    // blobs
    std::size_t n_per_class = 40;
    double separation = 3.0;
    std::size_t overlap_count = 0;

    std::size_t examples() const;
};

struct TrainerSpec {
    double lr = 0.01;
    double momentum = 0.0;
    double weight_decay = 0.0;
    std::size_t batch = 10;
    long steps = 500;
};

struct ScheduleSpec {
    long log_every = 50;     // steps between variance snapshots
    int draws = 100;         // estimates per estimator per snapshot
    long refit_every = 500;  // steps between cluster refits and anchor refreshes
    int gc_iters = 10;       // assignment/update rounds per refit
    std::size_t clusters = 10;
};

struct ExperimentConfig {
    int version = 1;
    std::uint64_t seed = 1;
    DatasetSpec dataset;
    std::string activation = "relu";  // frozen feature layer; blobs ignore it
    TrainerSpec trainer;
    ScheduleSpec schedule;
    std::vector<std::string> roster{"full", "sg-b", "sg-2b", "svrg", "gc"};
    std::string out;  // output directory; empty defers to --out or the env root

    void validate() const;  // throws ConfigError
};

// Single JSON document; unknown keys are rejected so typos cannot silently
// fall back to defaults. The emitted form spells out every field plus a
// metadata note on how normalized variance aggregates over coordinates.
ExperimentConfig parse_experiment_config(const std::string& text);
std::string experiment_config_json(const ExperimentConfig& cfg);

// Realized problem instance. For rf the model is the frozen random feature
// layer plus a trainable linear readout; for blobs a bias-free linear
// classifier. Loss is binary logistic in both cases.
struct ExperimentSetup {
    Dataset train;
    ModelSnapshot model;
    LossSpec loss;
};
ExperimentSetup build_setup(const ExperimentConfig& cfg);

struct TrajectoryResult {
    std::vector<VarianceReport> reports;
    long steps_done = 0;
    bool failed = false;
    std::string failure;
};

// Plain mini-batch SGD for `steps` steps. Every log_every steps the model is
// snapshotted and each roster estimator is measured with `draws` draws;
// every refit_every steps the clusters are refit from scratch and the
// control-variate anchor moves to the current parameters (both also happen
// once at step 0). Divergence aborts the loop but keeps partial artifacts
// and drops a FAILED marker. Artifacts in out_dir: config.json, reports.csv,
// clusters/*.json, model.json, run.log.
TrajectoryResult run_trajectory(const ExperimentConfig& cfg, const std::string& out_dir);

struct SweepAxes {
    // Missing axis = the single point implied by the base config. overparam
    // is student_hidden / train_n and is swept by resizing train_n with the
    // width fixed.
    std::vector<double> overparam;
    std::vector<double> lr;
    std::vector<double> dup_fraction;
    std::vector<std::uint64_t> seeds;
};

struct SweepSpec {
    ExperimentConfig base;
    SweepAxes axes;

    void validate() const;
};

SweepSpec parse_sweep_spec(const std::string& text);
std::string sweep_spec_json(const SweepSpec& spec);

struct SweepRow {
    double overparam = 0.0;
    double lr = 0.0;
    double dup_fraction = 0.0;
    std::string estimator;
    std::string stat;  // "mean" | "max", taken over the last 70% of snapshots
    double avg_var = 0.0;
    double avg_var_std = 0.0;  // std over seeds
    double norm_var = 0.0;
    double norm_var_std = 0.0;
    int seeds = 0;  // trials that finished
    bool failed = false;
};

// One trajectory per (grid point, seed), run on up to `jobs` threads; trial
// artifacts land under out_dir/trials/, the aggregate in out_dir/sweep.csv.
// A diverged trial marks its rows failed and the sweep continues.
std::vector<SweepRow> run_sweep(const SweepSpec& spec, const std::string& out_dir, int jobs);
std::string sweep_csv(const std::vector<SweepRow>& rows);
std::vector<SweepRow> parse_sweep_csv(const std::string& text);

// Cluster demo on the blobs task: full-batch GD on the bias-free linear
// model. Each step renders the points colored by cluster, the current
// decision boundary, and the boundary one GD step would reach using each
// cluster's weighted center alone; the step and learning rate are recorded
// in the SVG metadata.
struct DemoStep {
    long step = 0;
    std::vector<std::size_t> assignments;
    std::array<double, 2> boundary{};               // normal before the step
    std::vector<std::array<double, 2>> predicted;   // per-cluster normals
    std::array<double, 2> next_boundary{};          // normal after the step
};

struct DemoResult {
    std::vector<DemoStep> steps;
};

DemoResult demo_fig1(const ExperimentConfig& cfg, const std::string& out_dir);

// Renders a reports.csv (per-step schema) or sweep.csv (axis schema) into
// plots/ under out_dir. Returns warnings for dropped points and omitted
// panels; malformed input throws IoError naming the row.
std::vector<std::string> emit_plots(const std::string& csv_text, const std::string& out_dir);

// $GRADCLUST_OUT, or ./runs when unset.
std::string default_out_root();

}  // namespace gradclust

#endif
