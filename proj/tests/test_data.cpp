#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <cmath>
#include <set>

#include "gradclust/data.hpp"

using namespace gradclust;

TEST_CASE("gen_rf teacher and student features have unit norm columns") {
    RFConfig cfg;
    cfg.seed = 12;
    auto rf = gen_rf(cfg);
    REQUIRE(rf.student_features.rows() == cfg.input_dim);
    REQUIRE(rf.student_features.cols() == cfg.student_hidden);
    for (std::size_t j = 0; j < rf.student_features.cols(); ++j) {
        double n2 = 0.0;
        for (std::size_t i = 0; i < rf.student_features.rows(); ++i)
            n2 += rf.student_features(i, j) * rf.student_features(i, j);
        CHECK(std::abs(std::sqrt(n2) - 1.0) < 1e-12);
    }
    REQUIRE(rf.train.size() == cfg.train_n);
    REQUIRE(rf.test.size() == cfg.train_n);
    rf.train.validate();
    rf.test.validate();
}

TEST_CASE("gen_rf is deterministic in the seed") {
    RFConfig cfg;
    cfg.seed = 77;
    auto a = gen_rf(cfg), b = gen_rf(cfg);
    CHECK(a.train.features.values() == b.train.features.values());
    CHECK(a.train.labels == b.train.labels);
    CHECK(a.student_features.values() == b.student_features.values());
    cfg.seed = 78;
    auto c = gen_rf(cfg);
    CHECK(a.train.features.values() != c.train.features.values());
}

TEST_CASE("an overwhelming teacher bias forces every label positive") {
    RFConfig cfg;
    cfg.seed = 3;
    cfg.train_n = 64;
    cfg.teacher_bias = 1e6;
    auto rf = gen_rf(cfg);
    for (int y : rf.train.labels) CHECK(y == 1);
}

TEST_CASE("labels stay roughly balanced across seeds") {
    // The teacher's sign output carries a seed-dependent offset (relu features
    // have positive mean), so individual seeds can skew hard; balance is a
    // property of the ensemble, not of every seed.
    RFConfig cfg;
    cfg.train_n = 50;
    double pooled = 0.0;
    int in_band = 0;
    for (std::uint64_t seed = 0; seed < 100; ++seed) {
        cfg.seed = seed;
        auto rf = gen_rf(cfg);
        double mean = 0.0;
        for (int y : rf.train.labels) mean += y;
        mean /= static_cast<double>(rf.train.labels.size());
        pooled += mean;
        if (mean > -0.9 && mean < 0.9) ++in_band;
    }
    pooled /= 100.0;
    CHECK(pooled > -0.9);
    CHECK(pooled < 0.9);
    CHECK(in_band >= 80);
}

TEST_CASE("inject_duplicates fills the requested slots with equal copies") {
    RFConfig cfg;
    cfg.seed = 21;
    cfg.train_n = 100;
    auto rf = gen_rf(cfg);
    RngStream rng(5, 0);
    auto dup = inject_duplicates(rf.train, 5, 0.5, rng);
    REQUIRE(dup.size() == 100);

    // Count group sizes keyed by the first-copy row.
    std::size_t originals = 0;
    std::map<std::size_t, std::size_t> group;
    for (std::size_t i = 0; i < dup.size(); ++i) {
        if (dup.provenance[i].tag == ProvenanceTag::duplicate) {
            ++group[dup.provenance[i].source];
            // Bit-identical features and equal labels.
            auto a = dup.features.row(i), b = dup.features.row(dup.provenance[i].source);
            for (std::size_t j = 0; j < a.size(); ++j) CHECK(a[j] == b[j]);
            CHECK(dup.labels[i] == dup.labels[dup.provenance[i].source]);
        } else {
            ++originals;
        }
    }
    CHECK(originals == 55);  // 50 kept + 5 sources
    REQUIRE(group.size() == 5);
    for (const auto& [src, copies] : group) CHECK(copies == 9);  // 10 per group incl. source
}

TEST_CASE("inject_duplicates honors the +/-1 equality split") {
    RFConfig cfg;
    cfg.seed = 22;
    cfg.train_n = 40;
    auto rf = gen_rf(cfg);
    RngStream rng(6, 0);
    // ceil(0.25 * 40) = 10 slots over 4 sources -> 3,3,2,2.
    auto dup = inject_duplicates(rf.train, 4, 0.25, rng);
    std::map<std::size_t, std::size_t> group;
    for (std::size_t i = 0; i < dup.size(); ++i)
        if (dup.provenance[i].tag == ProvenanceTag::duplicate)
            ++group[dup.provenance[i].source];
    std::multiset<std::size_t> sizes;
    for (const auto& [src, copies] : group) sizes.insert(copies + 1);
    CHECK(sizes == std::multiset<std::size_t>({2, 2, 3, 3}));
}

TEST_CASE("inject_duplicates edge and error cases") {
    RFConfig cfg;
    cfg.seed = 23;
    cfg.train_n = 20;
    auto rf = gen_rf(cfg);
    RngStream rng(7, 0);
    auto same = inject_duplicates(rf.train, 5, 0.0, rng);
    CHECK(same.features.values() == rf.train.features.values());
    // 5 sources but only ceil(0.1*20) = 2 slots.
    CHECK_THROWS_AS(inject_duplicates(rf.train, 5, 0.1, rng), ContractError);
}

TEST_CASE("duplicate groups share gradients exactly") {
    RFConfig cfg;
    cfg.seed = 24;
    cfg.train_n = 30;
    auto rf = gen_rf(cfg);
    RngStream rng(8, 0);
    auto dup = inject_duplicates(rf.train, 3, 0.4, rng);

    RngStream mrng(9, 0);
    auto model = ModelSnapshot::he_init(
        {fc_layer(dup.feature_dim(), 6, Activation::relu),
         fc_layer(6, 1, Activation::identity)},
        mrng);
    auto factors =
        backward_factored(model, full_batch(dup), LossSpec{LossKind::logistic_binary, {}});
    for (std::size_t i = 0; i < dup.size(); ++i) {
        if (dup.provenance[i].tag != ProvenanceTag::duplicate) continue;
        auto gi = per_example_gradient(factors, i);
        auto gs = per_example_gradient(factors, dup.provenance[i].source);
        for (std::size_t k = 0; k < gi.size(); ++k) CHECK(gi[k] == gs[k]);
    }
}

TEST_CASE("corrupt_labels changes exactly the requested count") {
    RFConfig cfg;
    cfg.seed = 31;
    cfg.train_n = 1000;
    auto rf = gen_rf(cfg);
    RngStream rng(10, 0);
    auto cor = corrupt_labels(rf.train, 0.1, rng);
    std::size_t changed = 0, tagged = 0;
    for (std::size_t i = 0; i < cor.size(); ++i) {
        if (cor.labels[i] != rf.train.labels[i]) ++changed;
        if (cor.provenance[i].tag == ProvenanceTag::corrupted) ++tagged;
    }
    CHECK(changed == 100);
    CHECK(tagged == 100);

    RngStream rng2(10, 1);
    auto all = corrupt_labels(rf.train, 1.0, rng2);
    for (std::size_t i = 0; i < all.size(); ++i)
        CHECK(all.labels[i] == -rf.train.labels[i]);

    RngStream rng3(10, 2);
    auto none = corrupt_labels(rf.train, 0.0, rng3);
    CHECK(none.labels == rf.train.labels);
}

TEST_CASE("corrupt_labels picks a different class label uniformly") {
    Dataset d;
    d.features = Matrix(300, 1);
    d.labels.assign(300, 0);
    d.provenance.assign(300, Provenance{});
    d.label_kind = LabelKind::class_index;
    d.num_classes = 4;
    RngStream rng(11, 0);
    auto cor = corrupt_labels(d, 1.0, rng);
    std::vector<int> counts(4, 0);
    for (int y : cor.labels) {
        CHECK(y != 0);
        ++counts[y];
    }
    for (int c = 1; c < 4; ++c) CHECK(counts[c] > 50);  // ~100 each
}

TEST_CASE("two blobs are linearly separable without overlap points") {
    RngStream rng(12, 0);
    auto d = gen_two_blobs(50, 10.0, 0, rng);
    REQUIRE(d.size() == 100);
    double min_pos = 1e300, max_neg = -1e300;
    for (std::size_t i = 0; i < d.size(); ++i) {
        if (d.labels[i] == 1) min_pos = std::min(min_pos, d.features(i, 0));
        else max_neg = std::max(max_neg, d.features(i, 0));
    }
    CHECK(max_neg < 0.0);
    CHECK(min_pos > 0.0);
}

TEST_CASE("overlap points come in mirrored opposite-label pairs") {
    RngStream rng(13, 0);
    auto d = gen_two_blobs(10, 6.0, 4, rng);
    REQUIRE(d.size() == 24);
    std::vector<std::size_t> margins;
    for (std::size_t i = 0; i < d.size(); ++i)
        if (d.provenance[i].tag == ProvenanceTag::margin) margins.push_back(i);
    REQUIRE(margins.size() == 4);
    for (std::size_t p = 0; p < margins.size(); p += 2) {
        std::size_t a = margins[p], b = margins[p + 1];
        CHECK(d.features(a, 0) == -d.features(b, 0));
        CHECK(d.features(a, 1) == -d.features(b, 1));
        CHECK(d.labels[a] == -d.labels[b]);
    }
}

TEST_CASE("provenance tags partition every generated dataset") {
    RFConfig cfg;
    cfg.seed = 99;
    cfg.train_n = 60;
    auto rf = gen_rf(cfg);
    RngStream rng(14, 0);
    auto dup = inject_duplicates(rf.train, 4, 0.3, rng);
    auto cor = corrupt_labels(dup, 0.1, rng);
    REQUIRE(cor.provenance.size() == cor.size());
    for (const auto& p : cor.provenance) {
        bool known = p.tag == ProvenanceTag::original || p.tag == ProvenanceTag::duplicate ||
                     p.tag == ProvenanceTag::corrupted || p.tag == ProvenanceTag::margin;
        CHECK(known);
    }
}
