#ifndef GRADCLUST_ESTIMATORS_HPP
#define GRADCLUST_ESTIMATORS_HPP

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "gradclust/clustering.hpp"
#include "gradclust/data.hpp"
#include "gradclust/metrics.hpp"
#include "gradclust/model.hpp"
#include "gradclust/rng.hpp"

namespace gradclust {

// Gradient-mean estimators evaluated at a fixed snapshot. Every estimator
// works off the snapshot's per-example factors; sampling is uniform with
// replacement so the 1/B variance law holds exactly.

struct GradientEstimate {
    std::vector<double> grad;
    std::string estimator;
    std::vector<std::size_t> samples;  // example indices drawn, in order
    int draw = 0;
};

// Deterministic mean of all per-example gradients.
GradientEstimate full_estimate(const PerExampleFactors& factors);

// Mean gradient of B examples drawn uniformly with replacement.
GradientEstimate sgb_estimate(const PerExampleFactors& factors, std::size_t b, RngStream& rng,
                              int draw = 0);

// Control-variate state anchored at an earlier snapshot. The cached
// factors let every draw share sample indices between the current and
// anchor parameters without recomputing a backward pass.
struct SvrgState {
    std::vector<double> anchor_params;
    std::vector<double> anchor_grad;
    long anchor_step = 0;
    std::uint64_t dataset_tag = 0;
    PerExampleFactors anchor_factors;
};

std::uint64_t dataset_fingerprint(const Dataset& data);

SvrgState make_svrg_anchor(const ModelSnapshot& model, const Dataset& data, const LossSpec& loss,
                           long step);

// g_B(theta) - g_B(anchor) + g(anchor), with the B indices shared between
// the two mini-batch terms. Errors if the anchor was built on different
// data.
GradientEstimate svrg_estimate(const PerExampleFactors& current, const SvrgState& state,
                               const Dataset& data, std::size_t b, RngStream& rng, int draw = 0);

// One uniform member per cluster, weighted by cluster size:
// (1/N) sum_k N_k g_{j_k}. Unbiased for any partition; with singleton
// clusters it reproduces the full gradient bit for bit.
GradientEstimate stratified_estimate(const PerExampleFactors& factors,
                                     const ClusterState& clusters, RngStream& rng, int draw = 0);

// Stratified variance computed exactly from per-example gradients:
// N^{-2} sum_k N_k^2 V_k with V_k the within-cluster population variance.
double stratified_variance_exact(const PerExampleFactors& factors, const ClusterState& clusters);

// Draws `draws` independent estimates (child RNG stream per draw, reduced
// in draw order) and reports their average variance against the shared
// second moment.
VarianceReport measure_estimator(const std::string& name,
                                 const std::function<GradientEstimate(RngStream&, int)>& draw_fn,
                                 int draws, RngStream& rng, long step, double e_g2);

}  // namespace gradclust

#endif
