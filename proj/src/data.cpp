#include "gradclust/data.hpp"

#include <cmath>
#include <string>

namespace gradclust {

void Dataset::validate() const {
    require(labels.size() == size() && provenance.size() == size(),
            "Dataset: labels/provenance length mismatch");
    if (!features.all_finite()) throw NumericError("Dataset: non-finite features");
    for (std::size_t i = 0; i < size(); ++i) {
        if (label_kind == LabelKind::plus_minus_one)
            require(labels[i] == 1 || labels[i] == -1, "Dataset: label must be +/-1");
        else
            require(labels[i] >= 0 && labels[i] < num_classes,
                    "Dataset: class label out of range");
        if (provenance[i].tag == ProvenanceTag::duplicate)
            require(provenance[i].source < size(), "Dataset: dangling duplicate source");
    }
}

Batch full_batch(const Dataset& d) {
    Batch b;
    b.features = d.features;
    b.labels = d.labels;
    b.example_ids.resize(d.size());
    for (std::size_t i = 0; i < d.size(); ++i) b.example_ids[i] = i;
    return b;
}

Batch make_batch(const Dataset& d, std::span<const std::size_t> indices) {
    require(!indices.empty(), "make_batch: empty index list");
    Batch b;
    b.features = Matrix(indices.size(), d.feature_dim());
    for (std::size_t r = 0; r < indices.size(); ++r) {
        require(indices[r] < d.size(), "make_batch: index out of range");
        auto src = d.features.row(indices[r]);
        auto dst = b.features.row(r);
        std::copy(src.begin(), src.end(), dst.begin());
        b.labels.push_back(d.labels[indices[r]]);
    }
    b.example_ids.assign(indices.begin(), indices.end());
    return b;
}

namespace {

// Columns scaled to unit Euclidean norm.
Matrix unit_norm_features(std::size_t rows, std::size_t cols, RngStream& rng) {
    Matrix m(rows, cols);
    for (std::size_t i = 0; i < rows; ++i)
        for (std::size_t j = 0; j < cols; ++j) m(i, j) = rng.normal();
    for (std::size_t j = 0; j < cols; ++j) {
        double n2 = 0.0;
        for (std::size_t i = 0; i < rows; ++i) n2 += m(i, j) * m(i, j);
        require(n2 > 0.0, "unit_norm_features: degenerate zero column");
        double inv = 1.0 / std::sqrt(n2);
        for (std::size_t i = 0; i < rows; ++i) m(i, j) *= inv;
    }
    return m;
}

Dataset sample_rf_split(const RFConfig& cfg, const Matrix& teacher_w1,
                        const std::vector<double>& teacher_w2, double teacher_b,
                        RngStream rng) {
    Dataset d;
    d.seed = cfg.seed;
    d.features = Matrix(cfg.train_n, cfg.input_dim);
    for (std::size_t i = 0; i < cfg.train_n; ++i)
        for (std::size_t j = 0; j < cfg.input_dim; ++j) d.features(i, j) = rng.normal();
    for (std::size_t i = 0; i < cfg.train_n; ++i) {
        double out = teacher_b;
        for (std::size_t hcol = 0; hcol < cfg.teacher_hidden; ++hcol) {
            double z = 0.0;
            for (std::size_t j = 0; j < cfg.input_dim; ++j)
                z += d.features(i, j) * teacher_w1(j, hcol);
            if (z > 0.0) out += z * teacher_w2[hcol];
        }
        d.labels.push_back(out >= 0.0 ? 1 : -1);
    }
    d.provenance.assign(cfg.train_n, Provenance{});
    d.validate();
    return d;
}

}  // namespace

RFData gen_rf(const RFConfig& cfg) {
    require(cfg.input_dim > 0 && cfg.teacher_hidden > 0 && cfg.student_hidden > 0 &&
                cfg.train_n > 0,
            "gen_rf: zero-sized configuration");
    RngStream base = RngStream::named(cfg.seed, "rf");

    RngStream tw1 = base.child("teacher-w1");
    Matrix teacher_w1 = unit_norm_features(cfg.input_dim, cfg.teacher_hidden, tw1);
    RngStream tw2 = base.child("teacher-w2");
    std::vector<double> teacher_w2 = normal_sample(tw2, cfg.teacher_hidden);
    RngStream tb = base.child("teacher-b");
    double teacher_b = cfg.teacher_bias.value_or(tb.normal());

    RFData out;
    out.train = sample_rf_split(cfg, teacher_w1, teacher_w2, teacher_b, base.child("train-x"));
    out.test = sample_rf_split(cfg, teacher_w1, teacher_w2, teacher_b, base.child("test-x"));
    RngStream sw1 = base.child("student-w1");
    out.student_features = unit_norm_features(cfg.input_dim, cfg.student_hidden, sw1);
    return out;
}

Dataset inject_duplicates(const Dataset& d, std::size_t n_distinct, double target_fraction,
                          RngStream& rng) {
    d.validate();
    require(target_fraction >= 0.0 && target_fraction < 1.0,
            "inject_duplicates: fraction must be in [0, 1)");
    const std::size_t n = d.size();
    const std::size_t slots = static_cast<std::size_t>(std::ceil(target_fraction * n));
    if (slots == 0) return d;
    require(n_distinct >= 1, "inject_duplicates: need at least one source point");
    require(n_distinct <= slots,
            "inject_duplicates: fraction " + std::to_string(target_fraction) +
                " leaves fewer slots than distinct sources");
    require(slots <= n, "inject_duplicates: more duplicate slots than examples");

    // Sources drawn without replacement.
    std::vector<std::size_t> pool(n);
    for (std::size_t i = 0; i < n; ++i) pool[i] = i;
    rng.shuffle(pool);
    std::vector<bool> is_source(n, false);
    std::vector<std::size_t> sources(pool.begin(), pool.begin() + n_distinct);
    for (std::size_t s : sources) is_source[s] = true;

    Dataset out;
    out.label_kind = d.label_kind;
    out.num_classes = d.num_classes;
    out.seed = d.seed;
    out.features = Matrix(n, d.feature_dim());
    std::size_t row = 0;
    auto copy_example = [&](std::size_t src, Provenance p) {
        auto from = d.features.row(src);
        auto to = out.features.row(row);
        std::copy(from.begin(), from.end(), to.begin());
        out.labels.push_back(d.labels[src]);
        out.provenance.push_back(p);
        ++row;
    };

    // Keep the first n - slots non-source originals, then the duplicate block.
    const std::size_t keep = n - slots;
    std::size_t kept = 0;
    for (std::size_t i = 0; i < n && kept < keep; ++i) {
        if (is_source[i]) continue;
        copy_example(i, d.provenance[i]);
        ++kept;
    }
    require(kept == keep, "inject_duplicates: not enough non-source originals");

    const std::size_t base_copies = slots / n_distinct;
    const std::size_t extra = slots % n_distinct;
    for (std::size_t j = 0; j < n_distinct; ++j) {
        const std::size_t copies = base_copies + (j < extra ? 1 : 0);
        const std::size_t first_row = row;
        copy_example(sources[j], Provenance{ProvenanceTag::original});
        for (std::size_t c = 1; c < copies; ++c)
            copy_example(sources[j], Provenance{ProvenanceTag::duplicate, first_row});
    }
    require(row == n, "inject_duplicates: slot accounting is off");
    out.validate();
    return out;
}

Dataset corrupt_labels(const Dataset& d, double fraction, RngStream& rng) {
    d.validate();
    require(fraction >= 0.0 && fraction <= 1.0, "corrupt_labels: fraction out of range");
    const std::size_t n = d.size();
    const std::size_t m = static_cast<std::size_t>(std::floor(fraction * n));
    Dataset out = d;
    if (m == 0) return out;

    std::vector<std::size_t> pool(n);
    for (std::size_t i = 0; i < n; ++i) pool[i] = i;
    rng.shuffle(pool);
    for (std::size_t k = 0; k < m; ++k) {
        const std::size_t i = pool[k];
        if (d.label_kind == LabelKind::plus_minus_one) {
            out.labels[i] = -out.labels[i];
        } else {
            // Uniform over the other num_classes - 1 labels.
            int shift = 1 + static_cast<int>(rng.uniform_index(d.num_classes - 1));
            out.labels[i] = (out.labels[i] + shift) % d.num_classes;
        }
        out.provenance[i].tag = ProvenanceTag::corrupted;
    }
    out.validate();
    return out;
}

Dataset gen_two_blobs(std::size_t n_per_class, double separation, std::size_t overlap_count,
                      RngStream& rng) {
    require(n_per_class > 0, "gen_two_blobs: empty blobs");
    require(separation > 0.0, "gen_two_blobs: separation must be positive");

    Dataset d;
    d.features = Matrix(2 * n_per_class + overlap_count, 2);
    std::size_t row = 0;
    auto push = [&](double x, double y, int label, ProvenanceTag tag) {
        d.features(row, 0) = x;
        d.features(row, 1) = y;
        d.labels.push_back(label);
        d.provenance.push_back(Provenance{tag});
        ++row;
    };

    for (int side : {+1, -1}) {
        const double mean_x = side * separation / 2.0;
        for (std::size_t i = 0; i < n_per_class; ++i) {
            // Reject horizontal offsets that would cross the midline margin.
            double ox;
            do {
                ox = rng.normal();
            } while (std::abs(ox) >= 0.4 * separation);
            push(mean_x + ox, rng.normal(), side, ProvenanceTag::original);
        }
    }

    // Midline points in +/- pairs: (x, +1) and (-x, -1) share their gradient
    // under any no-bias linear model. Every pair reuses the same base point,
    // so all margin gradients coincide exactly and belong in one cluster.
    if (overlap_count > 0) {
        const double bx = 0.05 * separation * rng.normal();
        const double by = rng.normal();
        for (std::size_t j = 0; j < overlap_count; ++j) {
            if (j % 2 == 0)
                push(bx, by, +1, ProvenanceTag::margin);
            else
                push(-bx, -by, -1, ProvenanceTag::margin);
        }
    }
    d.validate();
    return d;
}

}  // namespace gradclust
