#ifndef GRADCLUST_DATA_HPP
#define GRADCLUST_DATA_HPP

#include <cstdint>
#include <optional>
#include <span>
#include <vector>

#include "gradclust/model.hpp"

namespace gradclust {

enum class ProvenanceTag { original, duplicate, corrupted, margin };

struct Provenance {
    ProvenanceTag tag = ProvenanceTag::original;
    // For duplicates: index of the copied example in this dataset.
    std::size_t source = static_cast<std::size_t>(-1);
};

enum class LabelKind { plus_minus_one, class_index };

struct Dataset {
    Matrix features;  // one row per example
    std::vector<int> labels;
    std::vector<Provenance> provenance;
    LabelKind label_kind = LabelKind::plus_minus_one;
    int num_classes = 2;
    std::uint64_t seed = 0;

    std::size_t size() const { return features.rows(); }
    std::size_t feature_dim() const { return features.cols(); }
    void validate() const;
};

Batch full_batch(const Dataset& d);
Batch make_batch(const Dataset& d, std::span<const std::size_t> indices);

// Teacher-student random features task. The teacher is a two-layer relu
// network with standard-normal weights whose first-layer features are scaled
// to unit norm; labels are the sign of its output. The returned
// student_features matrix (input_dim x student_hidden, also unit-norm columns)
// is meant to be used as a frozen first layer; only the second layer trains.
struct RFConfig {
    std::size_t input_dim = 20;
    std::size_t teacher_hidden = 20;
    std::size_t student_hidden = 200;
    std::size_t train_n = 200;
    std::uint64_t seed = 0;
    std::optional<double> teacher_bias;  // sampled N(0,1) unless pinned (tests)
};

struct RFData {
    Dataset train;
    Dataset test;  // same size as train, reporting only
    Matrix student_features;
};

RFData gen_rf(const RFConfig& cfg);

// Picks n_distinct source points and repeats them, equally up to +/-1, to fill
// ceil(target_fraction * N) slots; the rest of the output keeps the first
// original points. Output size equals the input size. Copies are bit-identical
// to their source and tagged with its output index.
Dataset inject_duplicates(const Dataset& d, std::size_t n_distinct, double target_fraction,
                          RngStream& rng);

// Reassigns exactly floor(fraction * N) labels, chosen without replacement, to
// a uniformly random *different* label, tagging them corrupted.
Dataset corrupt_labels(const Dataset& d, double fraction, RngStream& rng);

// Two linearly separable Gaussian blobs (labels +/-1) at +/- separation/2 on
// the x axis, plus overlap_count midline points in symmetric +/- feature pairs
// with opposite labels, all pairs reflections of one shared base point. Every
// margin point therefore has the same gradient under any no-bias linear
// model, which is what makes them interesting to cluster.
Dataset gen_two_blobs(std::size_t n_per_class, double separation, std::size_t overlap_count,
                      RngStream& rng);

}  // namespace gradclust

#endif
