#include "gradclust/estimators.hpp"

#include <cmath>
#include <cstring>

#include "gradclust/errors.hpp"
#include "gradclust/matrix.hpp"

namespace gradclust {

namespace {

void check_finite(const GradientEstimate& e) {
    if (!all_finite(e.grad))
        throw NumericError("estimator '" + e.estimator + "' produced a non-finite gradient");
}

// Accumulates w * (example i's gradient) into g, block layout matching
// mean_gradient. The unweighted case uses the identical expression so that
// singleton-cluster sums stay bit-compatible with the full mean.
void accumulate_example(const FactorBlock& b, std::size_t base, std::size_t i, double w,
                        std::vector<double>& g) {
    for (std::size_t t = 0; t < b.positions; ++t) {
        auto ar = b.a_row(i, t);
        auto dr = b.d_row(i, t);
        for (std::size_t p = 0; p < b.input_dim; ++p)
            for (std::size_t o = 0; o < b.output_dim; ++o) {
                if (w == 1.0)
                    g[base + p * b.output_dim + o] += ar[p] * dr[o];
                else
                    g[base + p * b.output_dim + o] += w * ar[p] * dr[o];
            }
    }
}

std::uint64_t hash_bytes(std::uint64_t h, const void* p, std::size_t n) {
    const unsigned char* bytes = static_cast<const unsigned char*>(p);
    for (std::size_t i = 0; i < n; ++i) {
        h ^= bytes[i];
        h *= 0x100000001b3ull;
    }
    return h;
}

}  // namespace

GradientEstimate full_estimate(const PerExampleFactors& factors) {
    GradientEstimate e;
    e.estimator = "full";
    e.grad = mean_gradient(factors);
    check_finite(e);
    return e;
}

GradientEstimate sgb_estimate(const PerExampleFactors& factors, std::size_t b, RngStream& rng,
                              int draw) {
    const std::size_t n = factors.batch_size;
    require(b >= 1 && b <= n, "sgb_estimate: batch size must be in [1, N]");
    GradientEstimate e;
    e.estimator = "sg-" + std::to_string(b);
    e.draw = draw;
    for (std::size_t s = 0; s < b; ++s) e.samples.push_back(rng.uniform_index(n));

    e.grad.assign(factors.param_dim(), 0.0);
    std::size_t base = 0;
    for (const FactorBlock& blk : factors.blocks) {
        for (std::size_t i : e.samples) accumulate_example(blk, base, i, 1.0, e.grad);
        const std::size_t end = base + blk.param_count();
        for (std::size_t c = base; c < end; ++c) e.grad[c] /= static_cast<double>(b);
        base = end;
    }
    check_finite(e);
    return e;
}

std::uint64_t dataset_fingerprint(const Dataset& data) {
    std::uint64_t h = 0xcbf29ce484222325ull;
    const std::size_t dims[2] = {data.size(), data.feature_dim()};
    h = hash_bytes(h, dims, sizeof dims);
    h = hash_bytes(h, data.features.data(), data.features.size() * sizeof(double));
    h = hash_bytes(h, data.labels.data(), data.labels.size() * sizeof(int));
    return h;
}

SvrgState make_svrg_anchor(const ModelSnapshot& model, const Dataset& data, const LossSpec& loss,
                           long step) {
    SvrgState st;
    st.anchor_params = model.flat_params();
    st.anchor_step = step;
    st.dataset_tag = dataset_fingerprint(data);
    st.anchor_factors = backward_factored(model, full_batch(data), loss);
    st.anchor_grad = mean_gradient(st.anchor_factors);
    return st;
}

GradientEstimate svrg_estimate(const PerExampleFactors& current, const SvrgState& state,
                               const Dataset& data, std::size_t b, RngStream& rng, int draw) {
    const std::size_t n = current.batch_size;
    require(b >= 1 && b <= n, "svrg_estimate: batch size must be in [1, N]");
    require(state.dataset_tag == dataset_fingerprint(data),
            "svrg_estimate: anchor was built on different data");
    require(state.anchor_factors.batch_size == n,
            "svrg_estimate: anchor factors cover a different example count");
    require(state.anchor_grad.size() == current.param_dim(),
            "svrg_estimate: anchor dimension mismatch");

    GradientEstimate e;
    e.estimator = "svrg";
    e.draw = draw;
    for (std::size_t s = 0; s < b; ++s) e.samples.push_back(rng.uniform_index(n));

    // g_B(theta) - g_B(anchor), indices shared; identical parameters cancel
    // exactly because both factor sets came from the same deterministic pass.
    e.grad.assign(current.param_dim(), 0.0);
    std::size_t base = 0;
    for (std::size_t bi = 0; bi < current.blocks.size(); ++bi) {
        const FactorBlock& cur = current.blocks[bi];
        const FactorBlock& anc = state.anchor_factors.blocks[bi];
        for (std::size_t i : e.samples) {
            for (std::size_t t = 0; t < cur.positions; ++t) {
                auto ca = cur.a_row(i, t);
                auto cd = cur.d_row(i, t);
                auto aa = anc.a_row(i, t);
                auto ad = anc.d_row(i, t);
                for (std::size_t p = 0; p < cur.input_dim; ++p)
                    for (std::size_t o = 0; o < cur.output_dim; ++o)
                        e.grad[base + p * cur.output_dim + o] +=
                            ca[p] * cd[o] - aa[p] * ad[o];
            }
        }
        base += cur.param_count();
    }
    for (double& v : e.grad) v /= static_cast<double>(b);
    for (std::size_t c = 0; c < e.grad.size(); ++c) e.grad[c] += state.anchor_grad[c];
    check_finite(e);
    return e;
}

GradientEstimate stratified_estimate(const PerExampleFactors& factors,
                                     const ClusterState& clusters, RngStream& rng, int draw) {
    const std::size_t n = factors.batch_size;
    clusters.validate();
    require(clusters.assignments.size() == n,
            "stratified_estimate: cluster state covers a different example count");
    for (std::size_t nk : clusters.sizes)
        require(nk >= 1, "stratified_estimate: empty cluster, repair first");

    const auto members = clusters.members();
    GradientEstimate e;
    e.estimator = "gc";
    e.draw = draw;
    for (const auto& m : members) e.samples.push_back(m[rng.uniform_index(m.size())]);

    e.grad.assign(factors.param_dim(), 0.0);
    std::size_t base = 0;
    for (const FactorBlock& blk : factors.blocks) {
        for (std::size_t k = 0; k < members.size(); ++k)
            accumulate_example(blk, base, e.samples[k],
                               static_cast<double>(clusters.sizes[k]), e.grad);
        const std::size_t end = base + blk.param_count();
        for (std::size_t c = base; c < end; ++c) e.grad[c] /= static_cast<double>(n);
        base = end;
    }
    check_finite(e);
    return e;
}

double stratified_variance_exact(const PerExampleFactors& factors, const ClusterState& clusters) {
    const std::size_t n = factors.batch_size;
    clusters.validate();
    require(clusters.assignments.size() == n,
            "stratified_variance_exact: cluster state covers a different example count");
    const auto members = clusters.members();
    double total = 0.0;
    for (std::size_t k = 0; k < members.size(); ++k) {
        const auto& m = members[k];
        require(!m.empty(), "stratified_variance_exact: empty cluster");
        std::vector<std::vector<double>> grads;
        grads.reserve(m.size());
        for (std::size_t i : m) grads.push_back(per_example_gradient(factors, i));
        std::vector<double> center(grads[0].size(), 0.0);
        for (const auto& g : grads)
            for (std::size_t c = 0; c < center.size(); ++c) center[c] += g[c];
        for (double& v : center) v /= static_cast<double>(m.size());
        double vk = 0.0;
        for (const auto& g : grads)
            for (std::size_t c = 0; c < center.size(); ++c)
                vk += (g[c] - center[c]) * (g[c] - center[c]);
        vk /= static_cast<double>(m.size());
        const double nk = static_cast<double>(m.size());
        total += nk * nk * vk;
    }
    return total / (static_cast<double>(n) * static_cast<double>(n));
}

VarianceReport measure_estimator(const std::string& name,
                                 const std::function<GradientEstimate(RngStream&, int)>& draw_fn,
                                 int draws, RngStream& rng, long step, double e_g2) {
    require(draws >= 2, "measure_estimator: need at least two draws");
    std::vector<std::vector<double>> estimates;
    estimates.reserve(static_cast<std::size_t>(draws));
    for (int d = 0; d < draws; ++d) {
        RngStream child = rng.child(static_cast<std::uint64_t>(d));
        estimates.push_back(draw_fn(child, d).grad);
    }
    VarianceReport r;
    r.step = step;
    r.estimator = name;
    r.avg_var = average_variance(estimates);
    r.e_g2 = e_g2;
    r.norm_var = normalized_variance(r.avg_var, e_g2);
    r.draws = draws;
    return r;
}

}  // namespace gradclust
