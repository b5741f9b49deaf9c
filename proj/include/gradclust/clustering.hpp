#ifndef GRADCLUST_CLUSTERING_HPP
#define GRADCLUST_CLUSTERING_HPP

#include <cstddef>
#include <span>
#include <utility>
#include <vector>

#include "gradclust/model.hpp"
#include "gradclust/rng.hpp"

namespace gradclust {

// Weighted clustering of per-example gradients. The objective
//   sum_k sum_{i in k} N_k ||C_k - g_i||^2
// is N^2 times the variance of the stratified estimator, so minimizing it
// minimizes that variance. Two paths: an oracle on materialized flat
// gradients, and the production path on rank-1 per-layer factors.

struct ClusterState {
    std::vector<std::size_t> assignments;  // a_i in [0, K)
    std::vector<std::size_t> sizes;        // N_k, one per cluster
    double objective = 0.0;
    int iterations = 0;
    std::vector<double> objective_trace;  // value after each AU round
    bool degenerate = false;              // all-zero gradients shortcut

    std::size_t num_clusters() const { return sizes.size(); }
    std::vector<std::vector<std::size_t>> members() const;
    void validate() const;  // sizes match assignments and sum to N
};

// One cluster's center for one factor block, C = c d^T with cached
// squared norms (||C||_F^2 = norm2_c * norm2_d).
struct RankOneBlockCenter {
    std::vector<double> c;
    std::vector<double> d;
    double norm2_c = 0.0;
    double norm2_d = 0.0;
};

struct RankOneCenters {
    // centers[k][b]: cluster k, factor block b (block order of PerExampleFactors)
    std::vector<std::vector<RankOneBlockCenter>> centers;
    std::size_t num_clusters() const { return centers.size(); }
};

// Oracle-path centers: full flat mean gradient per cluster.
struct DenseCenters {
    std::vector<std::vector<double>> center;
};

// How the convolutional block cost is evaluated. `materialized` forms the
// example's summed outer product once and reuses it per cluster;
// `per_position` contracts against each center position by position;
// `automatic` picks whichever needs fewer operations for the block shape.
enum class ConvCostPath { materialized, per_position, automatic };

// The cross-term choice `automatic` makes for a conv block with T
// positions, K clusters, and an I x O parameter block.
ConvCostPath pick_conv_path(std::size_t t, std::size_t k, std::size_t i, std::size_t o);

// --- Oracle path on flat per-example gradients.

std::vector<std::size_t> exact_assign(const std::vector<std::vector<double>>& grads,
                                      const DenseCenters& centers,
                                      const std::vector<std::size_t>& sizes);

std::pair<DenseCenters, std::vector<std::size_t>> exact_update(
    const std::vector<std::vector<double>>& grads, const std::vector<std::size_t>& assignments,
    std::size_t num_clusters);

double weighted_objective(const std::vector<std::vector<double>>& grads,
                          const std::vector<std::size_t>& assignments,
                          const DenseCenters& centers, const std::vector<std::size_t>& sizes);

// --- Efficient path on rank-1 factors.

// ||c d^T - a delta^T||_F^2 expanded to three inner products.
double rank1_cost_fc(std::span<const double> a, std::span<const double> delta,
                     const RankOneBlockCenter& center);

// Same cost for a conv block's position-summed gradient; T=1 dispatches to
// the fully-connected kernel bit for bit.
double rank1_cost_conv(const FactorBlock& block, std::size_t example,
                       const RankOneBlockCenter& center, ConvCostPath path);

// ||g_i||_F^2 of one example's block; cluster-independent, cached once per
// assignment sweep.
double block_grad_norm2(const FactorBlock& block, std::size_t example, ConvCostPath path);

// ||C_k - g_i||^2 summed over every factor block (unweighted; the A step
// multiplies by N_k).
double assign_cost(const PerExampleFactors& factors, std::size_t example,
                   const RankOneCenters& centers, std::size_t cluster, ConvCostPath path);

// Mean-factor centers per cluster: c_k = mean of position-summed A rows,
// d_k = mean of position-summed D rows over T. Blocks flagged in
// svd_blocks instead take the leading singular pair of the dense cluster
// mean, which is never worse in Frobenius error.
RankOneCenters u_step_rank1(const PerExampleFactors& factors,
                            const std::vector<std::size_t>& assignments,
                            const std::vector<std::size_t>& sizes,
                            const std::vector<bool>& svd_blocks = {});

// Size-weighted clustering objective evaluated with rank-1 centers.
double rank1_objective(const PerExampleFactors& factors,
                       const std::vector<std::size_t>& assignments,
                       const std::vector<std::size_t>& sizes, const RankOneCenters& centers,
                       ConvCostPath path);

// Reseed each empty cluster with the worst-fit member of the largest
// cluster; deterministic, so reruns agree.
void repair_empty_clusters(std::vector<std::size_t>& assignments, std::vector<std::size_t>& sizes,
                           const RankOneCenters& centers, const PerExampleFactors& factors,
                           ConvCostPath path);
void repair_empty_clusters(std::vector<std::size_t>& assignments, std::vector<std::size_t>& sizes,
                           const DenseCenters& centers,
                           const std::vector<std::vector<double>>& grads);

struct GcOptions {
    int iters = 10;                // AU rounds
    std::vector<bool> svd_blocks;  // per-block SVD fallback, empty = none
    ConvCostPath path = ConvCostPath::automatic;
};

// Init seeds one cluster per distance-sampled example and deals a balanced
// partition around the seeds, then `iters` rounds of assignment sweep
// (frozen N_k), empty-cluster repair, N_k refresh, and center update. AU
// rounds can increase the objective, so the best visited state is returned.
std::pair<ClusterState, RankOneCenters> gc_fit(const PerExampleFactors& factors, std::size_t k,
                                               const GcOptions& opts, RngStream& rng);

}  // namespace gradclust

#endif
