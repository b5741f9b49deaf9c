#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <cmath>
#include <cstring>
#include <filesystem>
#include <limits>
#include <string>
#include <vector>

#include "gradclust/clustering.hpp"
#include "gradclust/data.hpp"
#include "gradclust/errors.hpp"
#include "gradclust/io.hpp"
#include "gradclust/model.hpp"
#include "gradclust/rng.hpp"

using namespace gradclust;

namespace {

// Fresh scratch directory per test case; removed up front so reruns of a
// failed case start clean.
std::string scratch_dir(const std::string& name) {
    const auto dir = std::filesystem::temp_directory_path() / ("gradclust_io_" + name);
    std::filesystem::remove_all(dir);
    std::filesystem::create_directories(dir);
    return dir.string();
}

bool same_bits(double a, double b) {
    return std::memcmp(&a, &b, sizeof(double)) == 0;
}

Dataset messy_dataset() {
    RFConfig cfg;
    cfg.input_dim = 6;
    cfg.teacher_hidden = 4;
    cfg.student_hidden = 8;
    cfg.train_n = 24;
    cfg.seed = 11;
    Dataset d = gen_rf(cfg).train;
    RngStream rng(11, 5);
    d = inject_duplicates(d, 2, 0.25, rng);
    d = corrupt_labels(d, 0.125, rng);
    return d;
}

PerExampleFactors toy_factors(const std::vector<double>& values) {
    Batch b;
    b.features = Matrix(values.size(), 1);
    for (std::size_t i = 0; i < values.size(); ++i) {
        b.features(i, 0) = 2.0 * values[i];
        b.labels.push_back(-1);
        b.example_ids.push_back(i);
    }
    auto layer = fc_layer(1, 1, Activation::identity, false);
    ModelSnapshot model({layer}, {Matrix{{0.0}}}, {{}});
    return backward_factored(model, b, LossSpec{});
}

}  // namespace

TEST_CASE("atomic write lands contents and leaves no temp file") {
    const std::string dir = scratch_dir("atomic");
    const std::string path = dir + "/out.txt";
    write_file_atomic(path, "payload");
    CHECK(read_file(path) == "payload");
    write_file_atomic(path, "replaced");
    CHECK(read_file(path) == "replaced");
    std::size_t entries = 0;
    for ([[maybe_unused]] const auto& e : std::filesystem::directory_iterator(dir)) ++entries;
    CHECK(entries == 1);
}

TEST_CASE("atomic write into a missing directory fails") {
    const std::string dir = scratch_dir("atomic_missing");
    CHECK_THROWS_AS(write_file_atomic(dir + "/no/such/dir/x", "x"), IoError);
    CHECK_THROWS_AS(read_file(dir + "/absent"), IoError);
}

TEST_CASE("dataset survives a round trip bit for bit") {
    const std::string path = scratch_dir("dataset") + "/d.bin";
    const Dataset d = messy_dataset();
    save_dataset(d, path);
    const Dataset back = load_dataset(path);

    REQUIRE(back.size() == d.size());
    REQUIRE(back.feature_dim() == d.feature_dim());
    CHECK(std::memcmp(back.features.data(), d.features.data(),
                      d.features.size() * sizeof(double)) == 0);
    CHECK(back.labels == d.labels);
    CHECK(back.label_kind == d.label_kind);
    CHECK(back.num_classes == d.num_classes);
    CHECK(back.seed == d.seed);
    REQUIRE(back.provenance.size() == d.provenance.size());
    for (std::size_t i = 0; i < d.provenance.size(); ++i) {
        CHECK(back.provenance[i].tag == d.provenance[i].tag);
        if (d.provenance[i].tag == ProvenanceTag::duplicate)
            CHECK(back.provenance[i].source == d.provenance[i].source);
    }
}

TEST_CASE("dataset file bytes are reproducible") {
    const std::string dir = scratch_dir("dataset_rep");
    const Dataset d = messy_dataset();
    save_dataset(d, dir + "/a.bin");
    save_dataset(load_dataset(dir + "/a.bin"), dir + "/b.bin");
    CHECK(read_file(dir + "/a.bin") == read_file(dir + "/b.bin"));
}

TEST_CASE("dataset loader rejects malformed files") {
    const std::string dir = scratch_dir("dataset_bad");
    const Dataset d = messy_dataset();
    const std::string path = dir + "/d.bin";
    save_dataset(d, path);
    const std::string good = read_file(path);

    write_file_atomic(dir + "/magic.bin", "wrong magic\n{}\n");
    CHECK_THROWS_AS(load_dataset(dir + "/magic.bin"), IoError);

    write_file_atomic(dir + "/trunc.bin", good.substr(0, good.size() - 8));
    CHECK_THROWS_AS(load_dataset(dir + "/trunc.bin"), IoError);

    const std::size_t header_start = good.find('\n') + 1;
    std::string garbled = good;
    garbled.replace(header_start, 1, "!");
    write_file_atomic(dir + "/garbled.bin", garbled);
    CHECK_THROWS_AS(load_dataset(dir + "/garbled.bin"), IoError);
}

TEST_CASE("model checkpoint restores parameters exactly") {
    const std::string path = scratch_dir("model") + "/m.json";
    RngStream rng(3, 0);
    std::vector<LayerSpec> layers{conv_layer(2, 4, 4, 2, 2, 3, Activation::relu),
                                  fc_layer(27, 4, Activation::relu),
                                  fc_layer(4, 2, Activation::identity)};
    const auto model = ModelSnapshot::he_init(layers, rng);
    save_model(model, path);
    const auto back = load_model(path);

    const auto a = model.flat_params();
    const auto b = back.flat_params();
    REQUIRE(a.size() == b.size());
    for (std::size_t i = 0; i < a.size(); ++i) CHECK(same_bits(a[i], b[i]));
    REQUIRE(back.layers().size() == layers.size());
    for (std::size_t l = 0; l < layers.size(); ++l) {
        CHECK(back.layers()[l].kind == layers[l].kind);
        CHECK(back.layers()[l].input_dim == layers[l].input_dim);
        CHECK(back.layers()[l].output_dim == layers[l].output_dim);
        CHECK(back.layers()[l].activation == layers[l].activation);
        CHECK(back.layers()[l].has_bias == layers[l].has_bias);
        CHECK(back.layers()[l].trainable == layers[l].trainable);
        CHECK(back.layers()[l].positions() == layers[l].positions());
    }
}

TEST_CASE("model checkpoint keeps awkward doubles bit for bit") {
    const std::string path = scratch_dir("model_awkward") + "/m.json";
    auto layer = fc_layer(2, 1, Activation::identity);
    ModelSnapshot model({layer}, {Matrix(2, 1)}, {{0.0}});
    const std::vector<double> theta{0.1 + 0.2, 5e-324, -0.0};
    model = model.with_params(theta);
    save_model(model, path);
    const auto back = load_model(path).flat_params();
    REQUIRE(back.size() == theta.size());
    for (std::size_t i = 0; i < theta.size(); ++i) CHECK(same_bits(back[i], theta[i]));
    CHECK(std::signbit(back[2]));
}

TEST_CASE("non-finite parameters cannot reach a checkpoint") {
    // Snapshots validate on construction, so the writer never sees NaN and a
    // hand-edited checkpoint is caught on load by the same constructor.
    auto layer = fc_layer(1, 1, Activation::identity, false);
    CHECK_THROWS_AS(
        ModelSnapshot({layer}, {Matrix{{std::numeric_limits<double>::quiet_NaN()}}}, {{}}),
        NumericError);
    const std::string dir = scratch_dir("model_nan");
    write_file_atomic(dir + "/m.json",
                      R"({"format":"gradclust-model","version":1,)"
                      R"("layers":[{"kind":"fc","input_dim":1,"output_dim":1,)"
                      R"("activation":"identity","has_bias":false,"trainable":true}],)"
                      R"("weights":[[null]],"biases":[[]]})");
    CHECK_THROWS_AS(load_model(dir + "/m.json"), IoError);
}

TEST_CASE("model loader rejects malformed checkpoints") {
    const std::string dir = scratch_dir("model_bad");
    write_file_atomic(dir + "/garbage.json", "not json");
    CHECK_THROWS_AS(load_model(dir + "/garbage.json"), IoError);
    write_file_atomic(dir + "/format.json", R"({"format":"other","version":1})");
    CHECK_THROWS_AS(load_model(dir + "/format.json"), IoError);
    write_file_atomic(dir + "/shape.json",
                      R"({"format":"gradclust-model","version":1,)"
                      R"("layers":[{"kind":"fc","input_dim":2,"output_dim":1,)"
                      R"("activation":"identity","has_bias":false,"trainable":true}],)"
                      R"("weights":[[1.0]],"biases":[[]]})");
    CHECK_THROWS_AS(load_model(dir + "/shape.json"), IoError);
}

TEST_CASE("cluster state round trip") {
    const std::string path = scratch_dir("clusters") + "/c.json";
    auto factors = toy_factors({1, 1, 3, 3, 7, 7, 15, 15});
    RngStream rng(0, 77);
    auto [state, centers] = gc_fit(factors, 4, GcOptions{}, rng);
    save_cluster_state(state, centers, path);
    auto [back_state, back_centers] = load_cluster_state(path);

    CHECK(back_state.assignments == state.assignments);
    CHECK(back_state.sizes == state.sizes);
    CHECK(same_bits(back_state.objective, state.objective));
    CHECK(back_state.iterations == state.iterations);
    CHECK(back_state.degenerate == state.degenerate);
    REQUIRE(back_state.objective_trace.size() == state.objective_trace.size());
    for (std::size_t i = 0; i < state.objective_trace.size(); ++i)
        CHECK(same_bits(back_state.objective_trace[i], state.objective_trace[i]));
    REQUIRE(back_centers.num_clusters() == centers.num_clusters());
    for (std::size_t k = 0; k < centers.num_clusters(); ++k) {
        REQUIRE(back_centers.centers[k].size() == centers.centers[k].size());
        for (std::size_t b = 0; b < centers.centers[k].size(); ++b) {
            const auto& orig = centers.centers[k][b];
            const auto& got = back_centers.centers[k][b];
            REQUIRE(got.c.size() == orig.c.size());
            REQUIRE(got.d.size() == orig.d.size());
            for (std::size_t j = 0; j < orig.c.size(); ++j) CHECK(same_bits(got.c[j], orig.c[j]));
            for (std::size_t j = 0; j < orig.d.size(); ++j) CHECK(same_bits(got.d[j], orig.d[j]));
            CHECK(same_bits(got.norm2_c, norm2(got.c)));
            CHECK(same_bits(got.norm2_d, norm2(got.d)));
        }
    }
}

TEST_CASE("cluster loader rejects center and size mismatches") {
    const std::string dir = scratch_dir("clusters_bad");
    write_file_atomic(dir + "/c.json",
                      R"({"format":"gradclust-clusters","version":1,)"
                      R"("assignments":[0,0],"sizes":[2],"objective":0.0,"iterations":1,)"
                      R"("objective_trace":[0.0],"degenerate":false,)"
                      R"("centers":[[{"c":[1.0],"d":[1.0]}],[{"c":[1.0],"d":[1.0]}]]})");
    CHECK_THROWS_AS(load_cluster_state(dir + "/c.json"), IoError);
}

TEST_CASE("variance csv prints the pinned schema at full precision") {
    VarianceReport r;
    r.step = 50;
    r.estimator = "sg-10";
    r.avg_var = 0.1;
    r.e_g2 = 2.0;
    r.norm_var = 0.05;
    r.draws = 100;
    CHECK(variance_csv({r}) ==
          "step,estimator,avg_var,e_g2,norm_var,draws\n"
          "50,sg-10,0.10000000000000001,2,0.050000000000000003,100\n");
    CHECK(variance_csv({}) == "step,estimator,avg_var,e_g2,norm_var,draws\n");
}

TEST_CASE("variance csv round trips doubles exactly") {
    RngStream rng(9, 1);
    std::vector<VarianceReport> rows;
    for (int i = 0; i < 40; ++i) {
        VarianceReport r;
        r.step = i * 50;
        r.estimator = "gc";
        r.avg_var = std::exp(40.0 * (rng.uniform() - 0.5)) * rng.normal();
        r.e_g2 = std::exp(40.0 * (rng.uniform() - 0.5));
        r.norm_var = r.avg_var / r.e_g2;
        r.draws = 100;
        rows.push_back(r);
    }
    VarianceReport inf_row;
    inf_row.step = 2000;
    inf_row.estimator = "full";
    inf_row.avg_var = 0.0;
    inf_row.e_g2 = 0.0;
    inf_row.norm_var = std::numeric_limits<double>::infinity();
    inf_row.draws = 100;
    rows.push_back(inf_row);
    VarianceReport tiny_row = inf_row;
    tiny_row.step = 2050;
    tiny_row.avg_var = 5e-324;
    tiny_row.norm_var = 1.7976931348623157e308;
    rows.push_back(tiny_row);

    const auto back = parse_variance_csv(variance_csv(rows));
    REQUIRE(back.size() == rows.size());
    for (std::size_t i = 0; i < rows.size(); ++i) {
        CHECK(back[i].step == rows[i].step);
        CHECK(back[i].estimator == rows[i].estimator);
        CHECK(same_bits(back[i].avg_var, rows[i].avg_var));
        CHECK(same_bits(back[i].e_g2, rows[i].e_g2));
        CHECK(same_bits(back[i].norm_var, rows[i].norm_var));
        CHECK(back[i].draws == rows[i].draws);
    }
}

TEST_CASE("variance csv refuses rows that break the format") {
    VarianceReport r;
    r.estimator = "has,comma";
    CHECK_THROWS_AS(variance_csv({r}), ContractError);
    r.estimator = "ok";
    r.avg_var = std::numeric_limits<double>::quiet_NaN();
    CHECK_THROWS_AS(variance_csv({r}), ContractError);
}

TEST_CASE("variance csv parser names the offending row") {
    CHECK_THROWS_AS(parse_variance_csv(""), IoError);
    CHECK_THROWS_AS(parse_variance_csv("wrong,header\n"), IoError);
    const std::string header = "step,estimator,avg_var,e_g2,norm_var,draws\n";
    CHECK(parse_variance_csv(header).empty());
    CHECK_THROWS_AS(parse_variance_csv(header + "50,gc,1.0,2.0\n"), IoError);
    CHECK_THROWS_AS(parse_variance_csv(header + "50,gc,oops,2.0,0.5,100\n"), IoError);
    CHECK_THROWS_AS(parse_variance_csv(header + "x,gc,1.0,2.0,0.5,100\n"), IoError);
    try {
        parse_variance_csv(header + "50,gc,1.0,2.0,0.5,100\n50,gc,bad,2.0,0.5,100\n");
        FAIL("expected IoError");
    } catch (const IoError& e) {
        CHECK(std::string(e.what()).find("row 3") != std::string::npos);
    }
}
