#include "gradclust/harness.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <thread>
#include <utility>

#include "json.hpp"

#include "gradclust/clustering.hpp"
#include "gradclust/errors.hpp"
#include "gradclust/estimators.hpp"
#include "gradclust/io.hpp"
#include "gradclust/rng.hpp"
#include "gradclust/svg.hpp"

namespace gradclust {

namespace fs = std::filesystem;
using nlohmann::json;
using nlohmann::ordered_json;

namespace {

constexpr const char* kSweepCsvHeader =
    "overparam,lr,dup_fraction,estimator,stat,avg_var,avg_var_std,norm_var,norm_var_std,seeds,"
    "failed";

const std::vector<std::string> kKnownEstimators{"full", "sg-b", "sg-2b", "svrg", "gc"};

void check_keys(const json& obj, const std::string& where,
                std::initializer_list<const char*> allowed) {
    if (!obj.is_object()) throw ConfigError(where + ": expected an object");
    for (const auto& item : obj.items()) {
        bool known = false;
        for (const char* key : allowed)
            if (item.key() == key) known = true;
        if (!known) throw ConfigError(where + ": unknown key '" + item.key() + "'");
    }
}

template <typename T>
void read_field(const json& obj, const char* key, T& into, const std::string& where) {
    if (!obj.contains(key)) return;
    try {
        obj.at(key).get_to(into);
    } catch (const json::exception&) {
        throw ConfigError(where + "." + key + ": wrong type");
    }
}

void parse_into(const json& root, ExperimentConfig& cfg, const std::string& where) {
    check_keys(root, where,
               {"version", "seed", "dataset", "model", "trainer", "schedule", "estimators",
                "out", "metadata"});
    read_field(root, "version", cfg.version, where);
    if (cfg.version != 1)
        throw ConfigError(where + ": unsupported version " + std::to_string(cfg.version));
    read_field(root, "seed", cfg.seed, where);
    read_field(root, "out", cfg.out, where);
    if (root.contains("dataset")) {
        const json& d = root.at("dataset");
        const std::string dw = where + ".dataset";
        check_keys(d, dw,
                   {"kind", "input_dim", "teacher_hidden", "student_hidden", "train_n",
                    "duplicate_distinct", "duplicate_fraction", "corrupt_fraction",
                    "n_per_class", "separation", "overlap_count"});
        read_field(d, "kind", cfg.dataset.kind, dw);
        read_field(d, "input_dim", cfg.dataset.input_dim, dw);
        read_field(d, "teacher_hidden", cfg.dataset.teacher_hidden, dw);
        read_field(d, "student_hidden", cfg.dataset.student_hidden, dw);
        read_field(d, "train_n", cfg.dataset.train_n, dw);
        read_field(d, "duplicate_distinct", cfg.dataset.duplicate_distinct, dw);
        read_field(d, "duplicate_fraction", cfg.dataset.duplicate_fraction, dw);
        read_field(d, "corrupt_fraction", cfg.dataset.corrupt_fraction, dw);
        read_field(d, "n_per_class", cfg.dataset.n_per_class, dw);
        read_field(d, "separation", cfg.dataset.separation, dw);
        read_field(d, "overlap_count", cfg.dataset.overlap_count, dw);
    }
    if (root.contains("model")) {
        const json& m = root.at("model");
        check_keys(m, where + ".model", {"activation"});
        read_field(m, "activation", cfg.activation, where + ".model");
    }
    if (root.contains("trainer")) {
        const json& t = root.at("trainer");
        const std::string tw = where + ".trainer";
        check_keys(t, tw, {"lr", "momentum", "weight_decay", "batch", "steps"});
        read_field(t, "lr", cfg.trainer.lr, tw);
        read_field(t, "momentum", cfg.trainer.momentum, tw);
        read_field(t, "weight_decay", cfg.trainer.weight_decay, tw);
        read_field(t, "batch", cfg.trainer.batch, tw);
        read_field(t, "steps", cfg.trainer.steps, tw);
    }
    if (root.contains("schedule")) {
        const json& s = root.at("schedule");
        const std::string sw = where + ".schedule";
        check_keys(s, sw, {"log_every", "draws", "refit_every", "gc_iters", "clusters"});
        read_field(s, "log_every", cfg.schedule.log_every, sw);
        read_field(s, "draws", cfg.schedule.draws, sw);
        read_field(s, "refit_every", cfg.schedule.refit_every, sw);
        read_field(s, "gc_iters", cfg.schedule.gc_iters, sw);
        read_field(s, "clusters", cfg.schedule.clusters, sw);
    }
    read_field(root, "estimators", cfg.roster, where);
    cfg.validate();
}

ordered_json config_to_json(const ExperimentConfig& cfg) {
    ordered_json j;
    j["version"] = cfg.version;
    j["seed"] = cfg.seed;
    ordered_json d;
    d["kind"] = cfg.dataset.kind;
    if (cfg.dataset.kind == "rf") {
        d["input_dim"] = cfg.dataset.input_dim;
        d["teacher_hidden"] = cfg.dataset.teacher_hidden;
        d["student_hidden"] = cfg.dataset.student_hidden;
        d["train_n"] = cfg.dataset.train_n;
        d["duplicate_distinct"] = cfg.dataset.duplicate_distinct;
        d["duplicate_fraction"] = cfg.dataset.duplicate_fraction;
        d["corrupt_fraction"] = cfg.dataset.corrupt_fraction;
    } else {
        d["n_per_class"] = cfg.dataset.n_per_class;
        d["separation"] = cfg.dataset.separation;
        d["overlap_count"] = cfg.dataset.overlap_count;
    }
    j["dataset"] = std::move(d);
    j["model"] = ordered_json{{"activation", cfg.activation}};
    j["trainer"] = ordered_json{{"lr", cfg.trainer.lr},
                                {"momentum", cfg.trainer.momentum},
                                {"weight_decay", cfg.trainer.weight_decay},
                                {"batch", cfg.trainer.batch},
                                {"steps", cfg.trainer.steps}};
    j["schedule"] = ordered_json{{"log_every", cfg.schedule.log_every},
                                 {"draws", cfg.schedule.draws},
                                 {"refit_every", cfg.schedule.refit_every},
                                 {"gc_iters", cfg.schedule.gc_iters},
                                 {"clusters", cfg.schedule.clusters}};
    j["estimators"] = cfg.roster;
    if (!cfg.out.empty()) j["out"] = cfg.out;
    j["metadata"] = ordered_json{
        {"e_g2_aggregation",
         "normalized variance divides the coordinate-averaged estimator variance by the "
         "coordinate-averaged second moment of the per-example gradient, so the denominator "
         "is shared by every estimator at a snapshot"}};
    return j;
}

std::string short_num(double x) {
    char buf[40];
    std::snprintf(buf, sizeof(buf), "%.6g", x);
    return buf;
}

// Draw closure for one roster entry at a fixed snapshot.
std::function<GradientEstimate(RngStream&, int)> estimator_draw(
    const std::string& name, const PerExampleFactors& factors, const Dataset& data,
    std::size_t batch, const ClusterState* clusters, const SvrgState* svrg) {
    if (name == "full")
        return [&factors](RngStream&, int) { return full_estimate(factors); };
    if (name == "sg-b")
        return [&factors, batch](RngStream& rng, int draw) {
            return sgb_estimate(factors, batch, rng, draw);
        };
    if (name == "sg-2b")
        return [&factors, batch](RngStream& rng, int draw) {
            return sgb_estimate(factors, 2 * batch, rng, draw);
        };
    if (name == "svrg") {
        require(svrg != nullptr, "estimator_draw: svrg needs an anchor");
        return [&factors, svrg, &data, batch](RngStream& rng, int draw) {
            return svrg_estimate(factors, *svrg, data, batch, rng, draw);
        };
    }
    require(name == "gc", "estimator_draw: unknown estimator '" + name + "'");
    require(clusters != nullptr, "estimator_draw: gc needs a cluster fit");
    return [&factors, clusters](RngStream& rng, int draw) {
        return stratified_estimate(factors, *clusters, rng, draw);
    };
}

struct Aggregate {
    double mean = 0.0;
    double stddev = 0.0;  // unbiased over the values; 0 for fewer than two
};

Aggregate aggregate_over(const std::vector<double>& values) {
    Aggregate a;
    if (values.empty()) return a;
    double sum = 0.0;
    for (double v : values) sum += v;
    a.mean = sum / static_cast<double>(values.size());
    if (values.size() > 1) {
        double ss = 0.0;
        for (double v : values) ss += (v - a.mean) * (v - a.mean);
        a.stddev = std::sqrt(ss / static_cast<double>(values.size() - 1));
    }
    return a;
}

// Mean or max of the trailing 70% (at least one element) of a step-ordered
// series.
double last70_stat(const std::vector<double>& series, bool want_max) {
    require(!series.empty(), "last70_stat: empty series");
    const std::size_t keep = std::max<std::size_t>(1, series.size() * 7 / 10);
    const std::size_t start = series.size() - keep;
    double acc = want_max ? series[start] : 0.0;
    for (std::size_t i = start; i < series.size(); ++i)
        acc = want_max ? std::max(acc, series[i]) : acc + series[i];
    return want_max ? acc : acc / static_cast<double>(keep);
}

std::string cluster_file(long step) {
    char buf[32];
    std::snprintf(buf, sizeof(buf), "step_%06ld.json", step);
    return buf;
}

}  // namespace

std::size_t DatasetSpec::examples() const {
    if (kind == "blobs") return 2 * n_per_class + overlap_count;
    return train_n;
}

void ExperimentConfig::validate() const {
    if (dataset.kind != "rf" && dataset.kind != "blobs")
        throw ConfigError("dataset.kind must be 'rf' or 'blobs', got '" + dataset.kind + "'");
    if (dataset.kind == "rf") {
        if (dataset.input_dim == 0 || dataset.teacher_hidden == 0 ||
            dataset.student_hidden == 0 || dataset.train_n == 0)
            throw ConfigError("rf dataset dimensions must be positive");
        if (dataset.duplicate_fraction < 0.0 || dataset.duplicate_fraction >= 1.0)
            throw ConfigError("dataset.duplicate_fraction must be in [0, 1)");
        if (dataset.corrupt_fraction < 0.0 || dataset.corrupt_fraction > 1.0)
            throw ConfigError("dataset.corrupt_fraction must be in [0, 1]");
        if (dataset.duplicate_fraction > 0.0 && dataset.duplicate_distinct == 0)
            throw ConfigError("dataset.duplicate_fraction needs duplicate_distinct >= 1");
        if (dataset.duplicate_distinct > dataset.train_n)
            throw ConfigError("dataset.duplicate_distinct exceeds train_n");
    } else {
        if (dataset.n_per_class == 0) throw ConfigError("dataset.n_per_class must be positive");
        if (!(dataset.separation > 0.0)) throw ConfigError("dataset.separation must be positive");
    }
    if (activation != "relu" && activation != "identity")
        throw ConfigError("model.activation must be 'relu' or 'identity'");
    if (!(trainer.lr > 0.0)) throw ConfigError("trainer.lr must be positive");
    if (trainer.momentum < 0.0 || trainer.momentum >= 1.0)
        throw ConfigError("trainer.momentum must be in [0, 1)");
    if (trainer.weight_decay < 0.0) throw ConfigError("trainer.weight_decay must be >= 0");
    if (trainer.steps < 1) throw ConfigError("trainer.steps must be >= 1");
    const std::size_t n = dataset.examples();
    if (trainer.batch == 0 || trainer.batch > n)
        throw ConfigError("trainer.batch must be in [1, dataset size]");
    if (schedule.log_every < 1) throw ConfigError("schedule.log_every must be >= 1");
    if (schedule.draws < 2)
        throw ConfigError("schedule.draws must be >= 2 to estimate a variance");
    if (schedule.refit_every < 1) throw ConfigError("schedule.refit_every must be >= 1");
    if (schedule.gc_iters < 1) throw ConfigError("schedule.gc_iters must be >= 1");
    if (schedule.clusters == 0 || schedule.clusters > n)
        throw ConfigError("schedule.clusters must be in [1, dataset size]");
    if (roster.empty()) throw ConfigError("estimators must name at least one estimator");
    for (const std::string& name : roster) {
        if (std::find(kKnownEstimators.begin(), kKnownEstimators.end(), name) ==
            kKnownEstimators.end())
            throw ConfigError("unknown estimator '" + name + "'");
        if (std::count(roster.begin(), roster.end(), name) != 1)
            throw ConfigError("estimator '" + name + "' listed twice");
    }
}

ExperimentConfig parse_experiment_config(const std::string& text) {
    json root;
    try {
        root = json::parse(text);
    } catch (const json::parse_error& e) {
        throw ConfigError(std::string("config is not valid JSON: ") + e.what());
    }
    ExperimentConfig cfg;
    parse_into(root, cfg, "config");
    return cfg;
}

std::string experiment_config_json(const ExperimentConfig& cfg) {
    return config_to_json(cfg).dump(2) + "\n";
}

ExperimentSetup build_setup(const ExperimentConfig& cfg) {
    cfg.validate();
    RngStream init = RngStream::named(cfg.seed, "init");
    if (cfg.dataset.kind == "blobs") {
        RngStream data_rng = RngStream::named(cfg.seed, "data");
        Dataset train = gen_two_blobs(cfg.dataset.n_per_class, cfg.dataset.separation,
                                      cfg.dataset.overlap_count, data_rng);
        std::vector<LayerSpec> layers{fc_layer(2, 1, Activation::identity, false, true)};
        ModelSnapshot model = ModelSnapshot::he_init(layers, init);
        return {std::move(train), std::move(model), LossSpec{}};
    }
    RFConfig rf;
    rf.input_dim = cfg.dataset.input_dim;
    rf.teacher_hidden = cfg.dataset.teacher_hidden;
    rf.student_hidden = cfg.dataset.student_hidden;
    rf.train_n = cfg.dataset.train_n;
    rf.seed = cfg.seed;
    RFData data = gen_rf(rf);
    Dataset train = std::move(data.train);
    if (cfg.dataset.duplicate_distinct > 0 && cfg.dataset.duplicate_fraction > 0.0) {
        RngStream dup = RngStream::named(cfg.seed, "data").child("duplicates");
        train = inject_duplicates(train, cfg.dataset.duplicate_distinct,
                                  cfg.dataset.duplicate_fraction, dup);
    }
    if (cfg.dataset.corrupt_fraction > 0.0) {
        RngStream cor = RngStream::named(cfg.seed, "data").child("corrupt");
        train = corrupt_labels(train, cfg.dataset.corrupt_fraction, cor);
    }
    const Activation act =
        cfg.activation == "relu" ? Activation::relu : Activation::identity;
    std::vector<LayerSpec> layers{
        fc_layer(rf.input_dim, rf.student_hidden, act, false, false),
        fc_layer(rf.student_hidden, 1, Activation::identity, false, true),
    };
    ModelSnapshot seeded = ModelSnapshot::he_init(layers, init);
    ModelSnapshot model(layers, {data.student_features, seeded.weight(1)}, {{}, {}});
    return {std::move(train), std::move(model), LossSpec{}};
}

TrajectoryResult run_trajectory(const ExperimentConfig& cfg, const std::string& out_dir) {
    cfg.validate();
    fs::create_directories(fs::path(out_dir) / "clusters");
    write_file_atomic(out_dir + "/config.json", experiment_config_json(cfg));

    std::string log;
    const auto logline = [&log](const std::string& line) { log += line + '\n'; };

    ExperimentSetup setup = build_setup(cfg);
    const std::size_t n = setup.train.size();
    logline("dataset " + cfg.dataset.kind + " examples=" + std::to_string(n) +
            " features=" + std::to_string(setup.train.feature_dim()));
    logline("model params=" + std::to_string(setup.model.param_count()));

    const bool want_gc =
        std::find(cfg.roster.begin(), cfg.roster.end(), "gc") != cfg.roster.end();
    const bool want_svrg =
        std::find(cfg.roster.begin(), cfg.roster.end(), "svrg") != cfg.roster.end();

    RngStream train_root = RngStream::named(cfg.seed, "train");
    RngStream gc_root = RngStream::named(cfg.seed, "gc");
    RngStream measure_root = RngStream::named(cfg.seed, "measure");

    TrajectoryResult result;
    ModelSnapshot model = setup.model;
    std::vector<double> velocity;
    ClusterState clusters;
    RankOneCenters centers;
    SvrgState svrg;

    const auto refit_at = [&](long step, const PerExampleFactors& factors) {
        if (want_gc) {
            GcOptions opts;
            opts.iters = cfg.schedule.gc_iters;
            RngStream fit_rng = gc_root.child(static_cast<std::uint64_t>(step));
            auto fit = gc_fit(factors, cfg.schedule.clusters, opts, fit_rng);
            clusters = std::move(fit.first);
            centers = std::move(fit.second);
            save_cluster_state(clusters, centers, out_dir + "/clusters/" + cluster_file(step));
            logline("step " + std::to_string(step) +
                    ": clusters refit, objective=" + short_num(clusters.objective));
        }
        if (want_svrg) {
            svrg = make_svrg_anchor(model, setup.train, setup.loss, step);
            logline("step " + std::to_string(step) + ": anchor refreshed");
        }
    };

    const auto measure_at = [&](long step, const PerExampleFactors& factors) {
        const double e_g2 = population_second_moment(factors);
        RngStream snap = measure_root.child(static_cast<std::uint64_t>(step));
        for (const std::string& name : cfg.roster) {
            RngStream est_rng = snap.child(name);
            const auto draw = estimator_draw(name, factors, setup.train, cfg.trainer.batch,
                                             want_gc ? &clusters : nullptr,
                                             want_svrg ? &svrg : nullptr);
            result.reports.push_back(
                measure_estimator(name, draw, cfg.schedule.draws, est_rng, step, e_g2));
        }
        logline("step " + std::to_string(step) + ": measured " +
                std::to_string(cfg.roster.size()) + " estimators, draws=" +
                std::to_string(cfg.schedule.draws));
    };

    try {
        {
            const PerExampleFactors factors =
                backward_factored(model, full_batch(setup.train), setup.loss);
            refit_at(0, factors);
        }
        const SgdConfig sgd{cfg.trainer.lr, cfg.trainer.momentum, cfg.trainer.weight_decay};
        std::vector<std::size_t> batch_indices(cfg.trainer.batch);
        for (long step = 1; step <= cfg.trainer.steps; ++step) {
            RngStream batch_rng = train_root.child(static_cast<std::uint64_t>(step));
            for (std::size_t& idx : batch_indices) idx = batch_rng.uniform_index(n);
            model = sgd_step(model, make_batch(setup.train, batch_indices), setup.loss, sgd,
                             velocity);
            result.steps_done = step;

            const bool refit_due = step % cfg.schedule.refit_every == 0;
            const bool log_due = step % cfg.schedule.log_every == 0;
            if (refit_due || log_due) {
                const PerExampleFactors factors =
                    backward_factored(model, full_batch(setup.train), setup.loss);
                if (refit_due) refit_at(step, factors);
                if (log_due) measure_at(step, factors);
            }
        }
        logline("done steps=" + std::to_string(result.steps_done) +
                " rows=" + std::to_string(result.reports.size()));
    } catch (const NumericError& e) {
        result.failed = true;
        result.failure = e.what();
        logline(std::string("failure: ") + e.what());
        write_file_atomic(out_dir + "/FAILED", result.failure + "\n");
    }

    write_file_atomic(out_dir + "/reports.csv", variance_csv(result.reports));
    save_model(model, out_dir + "/model.json");
    write_file_atomic(out_dir + "/run.log", log);
    return result;
}

void SweepSpec::validate() const {
    base.validate();
    if (base.dataset.kind != "rf")
        throw ConfigError("sweep: only the rf dataset has sweep axes");
    if (!axes.dup_fraction.empty() && base.dataset.duplicate_distinct == 0)
        throw ConfigError("sweep: dup_fraction axis needs base duplicate_distinct >= 1");
    for (double v : axes.overparam)
        if (!(v > 0.0)) throw ConfigError("sweep: overparam values must be positive");
    for (double v : axes.lr)
        if (!(v > 0.0)) throw ConfigError("sweep: lr values must be positive");
    for (double v : axes.dup_fraction)
        if (v < 0.0 || v >= 1.0) throw ConfigError("sweep: dup_fraction values must be in [0, 1)");
}

SweepSpec parse_sweep_spec(const std::string& text) {
    json root;
    try {
        root = json::parse(text);
    } catch (const json::parse_error& e) {
        throw ConfigError(std::string("sweep spec is not valid JSON: ") + e.what());
    }
    check_keys(root, "sweep", {"version", "base", "axes"});
    int version = 1;
    read_field(root, "version", version, "sweep");
    if (version != 1) throw ConfigError("sweep: unsupported version " + std::to_string(version));
    SweepSpec spec;
    if (root.contains("base")) parse_into(root.at("base"), spec.base, "sweep.base");
    if (root.contains("axes")) {
        const json& axes = root.at("axes");
        check_keys(axes, "sweep.axes", {"overparam", "lr", "dup_fraction", "seeds"});
        read_field(axes, "overparam", spec.axes.overparam, "sweep.axes");
        read_field(axes, "lr", spec.axes.lr, "sweep.axes");
        read_field(axes, "dup_fraction", spec.axes.dup_fraction, "sweep.axes");
        read_field(axes, "seeds", spec.axes.seeds, "sweep.axes");
        for (const char* key : {"overparam", "lr", "dup_fraction", "seeds"})
            if (axes.contains(key) && axes.at(key).empty())
                throw ConfigError(std::string("sweep.axes.") + key + ": axis must be non-empty");
    }
    spec.validate();
    return spec;
}

std::string sweep_spec_json(const SweepSpec& spec) {
    ordered_json j;
    j["version"] = 1;
    j["base"] = config_to_json(spec.base);
    ordered_json axes;
    axes["overparam"] = spec.axes.overparam;
    axes["lr"] = spec.axes.lr;
    axes["dup_fraction"] = spec.axes.dup_fraction;
    axes["seeds"] = spec.axes.seeds;
    j["axes"] = std::move(axes);
    return j.dump(2) + "\n";
}

std::vector<SweepRow> run_sweep(const SweepSpec& spec, const std::string& out_dir, int jobs) {
    spec.validate();
    fs::create_directories(fs::path(out_dir) / "trials");
    write_file_atomic(out_dir + "/config.json", sweep_spec_json(spec));

    const std::vector<double> overparam =
        spec.axes.overparam.empty()
            ? std::vector<double>{static_cast<double>(spec.base.dataset.student_hidden) /
                                  static_cast<double>(spec.base.dataset.train_n)}
            : spec.axes.overparam;
    const std::vector<double> lrs =
        spec.axes.lr.empty() ? std::vector<double>{spec.base.trainer.lr} : spec.axes.lr;
    const std::vector<double> dups = spec.axes.dup_fraction.empty()
                                         ? std::vector<double>{spec.base.dataset.duplicate_fraction}
                                         : spec.axes.dup_fraction;
    const std::vector<std::uint64_t> seeds =
        spec.axes.seeds.empty() ? std::vector<std::uint64_t>{spec.base.seed} : spec.axes.seeds;

    struct Trial {
        ExperimentConfig cfg;
        std::string dir;
        TrajectoryResult res;
    };
    std::vector<Trial> trials;
    for (double op : overparam)
        for (double lr : lrs)
            for (double dup : dups)
                for (std::uint64_t seed : seeds) {
                    ExperimentConfig cfg = spec.base;
                    cfg.out.clear();
                    cfg.seed = seed;
                    cfg.trainer.lr = lr;
                    if (!spec.axes.overparam.empty()) {
                        const double n = std::round(
                            static_cast<double>(cfg.dataset.student_hidden) / op);
                        if (n < 1.0)
                            throw ConfigError("sweep: overparam " + short_num(op) +
                                              " leaves no training examples");
                        cfg.dataset.train_n = static_cast<std::size_t>(n);
                    }
                    if (!spec.axes.dup_fraction.empty()) cfg.dataset.duplicate_fraction = dup;
                    cfg.validate();  // fail before any trial runs, not mid-sweep
                    Trial t;
                    t.cfg = std::move(cfg);
                    t.dir = out_dir + "/trials/op" + short_num(op) + "_lr" + short_num(lr) +
                            "_dup" + short_num(dup) + "_seed" + std::to_string(seed);
                    trials.push_back(std::move(t));
                }

    const int workers = std::max(
        1, std::min(jobs, static_cast<int>(trials.size())));
    std::atomic<std::size_t> cursor{0};
    const auto work = [&trials, &cursor]() {
        for (;;) {
            const std::size_t i = cursor.fetch_add(1);
            if (i >= trials.size()) return;
            try {
                trials[i].res = run_trajectory(trials[i].cfg, trials[i].dir);
            } catch (const std::exception& e) {
                trials[i].res.failed = true;
                trials[i].res.failure = e.what();
            }
        }
    };
    if (workers == 1) {
        work();
    } else {
        std::vector<std::thread> pool;
        for (int w = 0; w < workers; ++w) pool.emplace_back(work);
        for (std::thread& t : pool) t.join();
    }

    std::vector<SweepRow> rows;
    std::size_t trial_idx = 0;
    for (double op : overparam)
        for (double lr : lrs)
            for (double dup : dups) {
                const std::size_t first = trial_idx;
                trial_idx += seeds.size();
                for (const std::string& name : spec.base.roster) {
                    for (const bool want_max : {false, true}) {
                        SweepRow row;
                        row.overparam = op;
                        row.lr = lr;
                        row.dup_fraction = dup;
                        row.estimator = name;
                        row.stat = want_max ? "max" : "mean";
                        std::vector<double> avg_stats, norm_stats;
                        for (std::size_t s = 0; s < seeds.size(); ++s) {
                            const Trial& t = trials[first + s];
                            if (t.res.failed) {
                                row.failed = true;
                                continue;
                            }
                            std::vector<double> avg_series, norm_series;
                            for (const VarianceReport& r : t.res.reports)
                                if (r.estimator == name) {
                                    avg_series.push_back(r.avg_var);
                                    norm_series.push_back(r.norm_var);
                                }
                            if (avg_series.empty()) {
                                row.failed = true;
                                continue;
                            }
                            avg_stats.push_back(last70_stat(avg_series, want_max));
                            norm_stats.push_back(last70_stat(norm_series, want_max));
                        }
                        const Aggregate avg = aggregate_over(avg_stats);
                        const Aggregate norm = aggregate_over(norm_stats);
                        row.avg_var = avg.mean;
                        row.avg_var_std = avg.stddev;
                        row.norm_var = norm.mean;
                        row.norm_var_std = norm.stddev;
                        row.seeds = static_cast<int>(avg_stats.size());
                        rows.push_back(std::move(row));
                    }
                }
            }

    write_file_atomic(out_dir + "/sweep.csv", sweep_csv(rows));
    return rows;
}

std::string sweep_csv(const std::vector<SweepRow>& rows) {
    std::string out = kSweepCsvHeader;
    out += '\n';
    for (const SweepRow& r : rows) {
        require(r.estimator.find_first_of(",\n") == std::string::npos,
                "sweep_csv: estimator name '" + r.estimator + "' breaks the format");
        require(r.stat == "mean" || r.stat == "max",
                "sweep_csv: stat must be 'mean' or 'max'");
        require(!std::isnan(r.avg_var) && !std::isnan(r.avg_var_std) &&
                    !std::isnan(r.norm_var) && !std::isnan(r.norm_var_std),
                "sweep_csv: refusing to serialize NaN");
        out += format_double(r.overparam);
        out += ',';
        out += format_double(r.lr);
        out += ',';
        out += format_double(r.dup_fraction);
        out += ',';
        out += r.estimator;
        out += ',';
        out += r.stat;
        out += ',';
        out += format_double(r.avg_var);
        out += ',';
        out += format_double(r.avg_var_std);
        out += ',';
        out += format_double(r.norm_var);
        out += ',';
        out += format_double(r.norm_var_std);
        out += ',';
        out += std::to_string(r.seeds);
        out += ',';
        out += r.failed ? '1' : '0';
        out += '\n';
    }
    return out;
}

std::vector<SweepRow> parse_sweep_csv(const std::string& text) {
    std::vector<SweepRow> rows;
    std::size_t pos = 0, line_no = 0;
    while (pos < text.size()) {
        std::size_t eol = text.find('\n', pos);
        if (eol == std::string::npos) eol = text.size();
        const std::string line = text.substr(pos, eol - pos);
        pos = eol + 1;
        ++line_no;
        const std::string where = "sweep csv row " + std::to_string(line_no);
        if (line_no == 1) {
            if (line != kSweepCsvHeader) throw IoError(where + ": missing header");
            continue;
        }
        if (line.empty()) continue;
        std::vector<std::string> fields;
        std::size_t start = 0;
        for (;;) {
            const std::size_t comma = line.find(',', start);
            if (comma == std::string::npos) {
                fields.push_back(line.substr(start));
                break;
            }
            fields.push_back(line.substr(start, comma - start));
            start = comma + 1;
        }
        if (fields.size() != 11) throw IoError(where + ": expected 11 fields");
        SweepRow r;
        r.overparam = parse_double(fields[0], where);
        r.lr = parse_double(fields[1], where);
        r.dup_fraction = parse_double(fields[2], where);
        r.estimator = fields[3];
        r.stat = fields[4];
        if (r.stat != "mean" && r.stat != "max")
            throw IoError(where + ": stat must be 'mean' or 'max'");
        r.avg_var = parse_double(fields[5], where);
        r.avg_var_std = parse_double(fields[6], where);
        r.norm_var = parse_double(fields[7], where);
        r.norm_var_std = parse_double(fields[8], where);
        r.seeds = static_cast<int>(parse_long(fields[9], where));
        if (fields[10] == "0")
            r.failed = false;
        else if (fields[10] == "1")
            r.failed = true;
        else
            throw IoError(where + ": failed flag must be 0 or 1");
        rows.push_back(std::move(r));
    }
    if (line_no == 0) throw IoError("sweep csv row 1: missing header");
    return rows;
}

DemoResult demo_fig1(const ExperimentConfig& cfg, const std::string& out_dir) {
    cfg.validate();
    if (cfg.dataset.kind != "blobs")
        throw ConfigError("demo needs dataset.kind 'blobs', got '" + cfg.dataset.kind + "'");
    fs::create_directories(fs::path(out_dir) / "plots");
    fs::create_directories(fs::path(out_dir) / "clusters");
    write_file_atomic(out_dir + "/config.json", experiment_config_json(cfg));

    ExperimentSetup setup = build_setup(cfg);
    const std::size_t n = setup.train.size();
    const std::size_t k = cfg.schedule.clusters;
    RngStream gc_root = RngStream::named(cfg.seed, "gc");

    std::string log;
    DemoResult out;
    ModelSnapshot model = setup.model;
    std::vector<double> velocity;
    const SgdConfig sgd{cfg.trainer.lr, cfg.trainer.momentum, cfg.trainer.weight_decay};

    for (long step = 0; step < cfg.trainer.steps; ++step) {
        const PerExampleFactors factors =
            backward_factored(model, full_batch(setup.train), setup.loss);
        GcOptions opts;
        opts.iters = cfg.schedule.gc_iters;
        // One output unit makes every gradient and mean rank-1, so the SVD
        // centers are the exact cluster means and the predicted boundaries
        // below are exact single-cluster GD steps.
        opts.svd_blocks = std::vector<bool>(factors.blocks.size(), true);
        RngStream fit_rng = gc_root.child(static_cast<std::uint64_t>(step));
        auto [state, centers] = gc_fit(factors, k, opts, fit_rng);
        save_cluster_state(state, centers, out_dir + "/clusters/" + cluster_file(step));

        const Matrix& w = model.weight(0);  // input_dim x 1
        DemoStep ds;
        ds.step = step;
        ds.assignments = state.assignments;
        ds.boundary = {w(0, 0), w(1, 0)};

        DemoFrame frame;
        frame.title = "gradient clusters, step " + std::to_string(step);
        frame.labels = setup.train.labels;
        frame.assignments = state.assignments;
        frame.step = static_cast<int>(step);
        frame.lr = cfg.trainer.lr;
        frame.points.reserve(n);
        for (std::size_t i = 0; i < n; ++i)
            frame.points.push_back({setup.train.features(i, 0), setup.train.features(i, 1)});
        frame.boundaries.push_back({"boundary", ds.boundary, "#111111", false});
        for (std::size_t c = 0; c < k; ++c) {
            const RankOneBlockCenter& center = centers.centers[c][0];
            const double weight =
                cfg.trainer.lr * static_cast<double>(state.sizes[c]) / static_cast<double>(n);
            const std::array<double, 2> predicted{
                ds.boundary[0] - weight * center.c[0] * center.d[0],
                ds.boundary[1] - weight * center.c[1] * center.d[0]};
            ds.predicted.push_back(predicted);
            frame.boundaries.push_back(
                {"cluster " + std::to_string(c + 1), predicted, palette_color(c), true});
        }

        char name[48];
        std::snprintf(name, sizeof(name), "demo_step_%03ld.svg", step);
        write_file_atomic(out_dir + "/plots/" + name, render_demo_frame(frame));

        model = sgd_step(model, full_batch(setup.train), setup.loss, sgd, velocity);
        const Matrix& w2 = model.weight(0);
        ds.next_boundary = {w2(0, 0), w2(1, 0)};
        log += "step " + std::to_string(step) + ": objective=" + short_num(state.objective) +
               "\n";
        out.steps.push_back(std::move(ds));
    }
    save_model(model, out_dir + "/model.json");
    write_file_atomic(out_dir + "/run.log", log);
    return out;
}

std::vector<std::string> emit_plots(const std::string& csv_text, const std::string& out_dir) {
    fs::create_directories(fs::path(out_dir) / "plots");
    std::vector<std::string> warnings;
    const std::size_t eol = csv_text.find('\n');
    const std::string header = csv_text.substr(0, eol);

    const auto render_to = [&](const PlotConfig& config, const std::vector<PlotSeries>& series,
                               const std::string& file) {
        RenderResult r = render_line_plot(config, series);
        for (std::string& w : r.warnings) warnings.push_back(std::move(w));
        if (r.svg.empty()) {
            warnings.push_back("panel '" + config.title + "' omitted: nothing to draw");
            return;
        }
        write_file_atomic(out_dir + "/plots/" + file, r.svg);
    };

    if (header == "step,estimator,avg_var,e_g2,norm_var,draws") {
        const std::vector<VarianceReport> rows = parse_variance_csv(csv_text);
        std::vector<std::string> order;
        for (const VarianceReport& r : rows)
            if (std::find(order.begin(), order.end(), r.estimator) == order.end())
                order.push_back(r.estimator);
        const int window = 5;
        for (const bool normalized : {false, true}) {
            std::vector<PlotSeries> series;
            for (const std::string& name : order) {
                PlotSeries s;
                s.name = name;
                std::vector<double> raw;
                for (const VarianceReport& r : rows)
                    if (r.estimator == name) {
                        s.x.push_back(static_cast<double>(r.step));
                        raw.push_back(normalized ? r.norm_var : r.avg_var);
                    }
                const SmoothedSeries smoothed = rolling(raw, window);
                s.y = smoothed.mean;
                s.band = smoothed.stddev;
                series.push_back(std::move(s));
            }
            PlotConfig config;
            config.title = normalized ? "normalized variance" : "average variance";
            config.x_label = "step";
            config.y_label = config.title;
            render_to(config, series,
                      normalized ? "normalized_vs_step.svg" : "variance_vs_step.svg");
        }
        return warnings;
    }

    if (header == kSweepCsvHeader) {
        const std::vector<SweepRow> rows = parse_sweep_csv(csv_text);
        const auto distinct = [&rows](auto pick) {
            std::vector<double> values;
            for (const SweepRow& r : rows)
                if (std::find(values.begin(), values.end(), pick(r)) == values.end())
                    values.push_back(pick(r));
            return values;
        };
        const auto n_over = distinct([](const SweepRow& r) { return r.overparam; }).size();
        const auto n_lr = distinct([](const SweepRow& r) { return r.lr; }).size();
        const auto n_dup = distinct([](const SweepRow& r) { return r.dup_fraction; }).size();
        // The axis with the most distinct values goes on x; others split series.
        std::string axis = "overparam";
        std::size_t best = n_over;
        if (n_lr > best) {
            axis = "lr";
            best = n_lr;
        }
        if (n_dup > best) axis = "dup_fraction";
        const auto axis_value = [&axis](const SweepRow& r) {
            return axis == "overparam" ? r.overparam : axis == "lr" ? r.lr : r.dup_fraction;
        };
        const auto series_key = [&](const SweepRow& r) {
            std::string key = r.estimator;
            if (axis != "lr" && n_lr > 1) key += " lr=" + short_num(r.lr);
            if (axis != "dup_fraction" && n_dup > 1) key += " dup=" + short_num(r.dup_fraction);
            if (axis != "overparam" && n_over > 1) key += " op=" + short_num(r.overparam);
            return key;
        };
        for (const std::string stat : {"mean", "max"}) {
            for (const bool normalized : {false, true}) {
                std::vector<PlotSeries> series;
                std::vector<std::string> keys;
                for (const SweepRow& r : rows) {
                    if (r.stat != stat) continue;
                    if (r.failed) {
                        warnings.push_back("skipping failed row: " + series_key(r) + " " + axis +
                                           "=" + short_num(axis_value(r)));
                        continue;
                    }
                    const std::string key = series_key(r);
                    auto found = std::find(keys.begin(), keys.end(), key);
                    if (found == keys.end()) {
                        keys.push_back(key);
                        series.push_back(PlotSeries{key, {}, {}, {}});
                        found = keys.end() - 1;
                    }
                    PlotSeries& s = series[static_cast<std::size_t>(found - keys.begin())];
                    s.x.push_back(axis_value(r));
                    s.y.push_back(normalized ? r.norm_var : r.avg_var);
                    s.band.push_back(normalized ? r.norm_var_std : r.avg_var_std);
                }
                if (series.empty()) continue;
                PlotConfig config;
                config.title = std::string(normalized ? "normalized" : "average") +
                               " variance, " + stat + " of last 70%";
                config.x_label = axis;
                config.y_label = normalized ? "normalized variance" : "average variance";
                config.log_x = axis == "overparam";
                render_to(config, series,
                          std::string(normalized ? "normalized" : "variance") + "_vs_" + axis +
                              "_" + stat + ".svg");
            }
        }
        return warnings;
    }

    throw IoError("csv row 1: unrecognized header '" + header + "'");
}

std::string default_out_root() {
    const char* env = std::getenv("GRADCLUST_OUT");
    return env != nullptr && *env != '\0' ? env : "runs";
}

}  // namespace gradclust
