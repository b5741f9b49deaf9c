#include "gradclust/clustering.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "gradclust/errors.hpp"
#include "gradclust/matrix.hpp"

namespace gradclust {

std::vector<std::vector<std::size_t>> ClusterState::members() const {
    std::vector<std::vector<std::size_t>> m(sizes.size());
    for (std::size_t i = 0; i < assignments.size(); ++i) {
        require(assignments[i] < sizes.size(), "cluster assignment out of range");
        m[assignments[i]].push_back(i);
    }
    return m;
}

void ClusterState::validate() const {
    std::vector<std::size_t> counts(sizes.size(), 0);
    for (std::size_t a : assignments) {
        require(a < sizes.size(), "cluster assignment out of range");
        ++counts[a];
    }
    require(counts == sizes, "cluster sizes inconsistent with assignments");
    require(objective >= 0.0, "clustering objective must be nonnegative");
}

ConvCostPath pick_conv_path(std::size_t t, std::size_t k, std::size_t i, std::size_t o) {
    // Contracting against each center position by position costs T*K*(I+O)
    // multiplies; materializing the example's summed outer product and
    // reusing it costs (T+K)*I*O.
    return t * k * (i + o) < (t + k) * i * o ? ConvCostPath::per_position
                                             : ConvCostPath::materialized;
}

namespace {

// Scratch shared by every cluster when costing one (example, block) pair.
struct BlockScratch {
    double grad_norm2 = 0.0;
    bool has_outer = false;
    Matrix outer;  // sum_t A_t D_t^T when a materialized route wants it
};

Matrix summed_outer(const FactorBlock& b, std::size_t i) {
    Matrix m(b.input_dim, b.output_dim);
    for (std::size_t t = 0; t < b.positions; ++t) {
        auto ar = b.a_row(i, t);
        auto dr = b.d_row(i, t);
        for (std::size_t p = 0; p < b.input_dim; ++p)
            for (std::size_t o = 0; o < b.output_dim; ++o) m(p, o) += ar[p] * dr[o];
    }
    return m;
}

double norm2_per_position(const FactorBlock& b, std::size_t i) {
    // ||sum_t A_t D_t^T||_F^2 = sum_{t,t'} (A_t.A_t')(D_t.D_t')
    double s = 0.0;
    for (std::size_t t = 0; t < b.positions; ++t)
        for (std::size_t u = 0; u < b.positions; ++u)
            s += dot(b.a_row(i, t), b.a_row(i, u)) * dot(b.d_row(i, t), b.d_row(i, u));
    return s;
}

BlockScratch make_scratch(const FactorBlock& b, std::size_t i, std::size_t num_clusters,
                          ConvCostPath path) {
    BlockScratch s;
    const std::size_t t = b.positions;
    if (t == 1) {
        s.grad_norm2 = norm2(b.a_row(i, 0)) * norm2(b.d_row(i, 0));
        return s;
    }
    ConvCostPath cross = path;
    if (cross == ConvCostPath::automatic)
        cross = pick_conv_path(t, num_clusters, b.input_dim, b.output_dim);
    ConvCostPath norm_route = path;
    if (norm_route == ConvCostPath::automatic)
        norm_route = t * t * (b.input_dim + b.output_dim) <
                             (t + t) * b.input_dim * b.output_dim
                         ? ConvCostPath::per_position
                         : ConvCostPath::materialized;
    if (cross == ConvCostPath::materialized || norm_route == ConvCostPath::materialized) {
        s.outer = summed_outer(b, i);
        s.has_outer = true;
    }
    s.grad_norm2 = norm_route == ConvCostPath::per_position ? norm2_per_position(b, i)
                                                            : frobenius_norm2(s.outer);
    return s;
}

double cross_term(const FactorBlock& b, std::size_t i, const BlockScratch& s,
                  const RankOneBlockCenter& ctr) {
    if (s.has_outer) {
        // c^T M d with M the materialized outer product
        double acc = 0.0;
        for (std::size_t p = 0; p < b.input_dim; ++p)
            acc += ctr.c[p] * dot(s.outer.row(p), ctr.d);
        return acc;
    }
    double acc = 0.0;
    for (std::size_t t = 0; t < b.positions; ++t)
        acc += dot(ctr.c, b.a_row(i, t)) * dot(ctr.d, b.d_row(i, t));
    return acc;
}

double cost_from_scratch(const FactorBlock& b, std::size_t i, const BlockScratch& s,
                         const RankOneBlockCenter& ctr) {
    const double cost =
        ctr.norm2_c * ctr.norm2_d - 2.0 * cross_term(b, i, s, ctr) + s.grad_norm2;
    // The three-term expansion can land a hair below zero by cancellation.
    return cost < 0.0 ? 0.0 : cost;
}

double flat_cost(const std::vector<double>& center, const std::vector<double>& g) {
    double s = 0.0;
    for (std::size_t c = 0; c < g.size(); ++c) s += (center[c] - g[c]) * (center[c] - g[c]);
    return s;
}

void set_cached_norms(RankOneBlockCenter& ctr) {
    ctr.norm2_c = norm2(ctr.c);
    ctr.norm2_d = norm2(ctr.d);
}

}  // namespace

std::vector<std::size_t> exact_assign(const std::vector<std::vector<double>>& grads,
                                      const DenseCenters& centers,
                                      const std::vector<std::size_t>& sizes) {
    const std::size_t k = centers.center.size();
    require(k >= 1, "exact_assign: no centers");
    require(sizes.size() == k, "exact_assign: sizes do not match centers");
    for (std::size_t nk : sizes) require(nk >= 1, "exact_assign: zero-size cluster");

    std::vector<std::size_t> out(grads.size(), 0);
    for (std::size_t i = 0; i < grads.size(); ++i) {
        double best = std::numeric_limits<double>::infinity();
        for (std::size_t c = 0; c < k; ++c) {
            const double cost = static_cast<double>(sizes[c]) * flat_cost(centers.center[c], grads[i]);
            if (cost < best) {
                best = cost;
                out[i] = c;
            }
        }
    }
    return out;
}

std::pair<DenseCenters, std::vector<std::size_t>> exact_update(
    const std::vector<std::vector<double>>& grads, const std::vector<std::size_t>& assignments,
    std::size_t num_clusters) {
    require(!grads.empty(), "exact_update: no gradients");
    require(assignments.size() == grads.size(), "exact_update: assignment count mismatch");
    const std::size_t d = grads[0].size();
    std::vector<std::size_t> sizes(num_clusters, 0);
    DenseCenters centers;
    centers.center.assign(num_clusters, std::vector<double>(d, 0.0));
    for (std::size_t i = 0; i < grads.size(); ++i) {
        require(assignments[i] < num_clusters, "exact_update: assignment out of range");
        ++sizes[assignments[i]];
        for (std::size_t c = 0; c < d; ++c) centers.center[assignments[i]][c] += grads[i][c];
    }
    for (std::size_t k = 0; k < num_clusters; ++k) {
        require(sizes[k] >= 1, "exact_update: empty cluster, repair first");
        for (double& v : centers.center[k]) v /= static_cast<double>(sizes[k]);
    }
    return {std::move(centers), std::move(sizes)};
}

double weighted_objective(const std::vector<std::vector<double>>& grads,
                          const std::vector<std::size_t>& assignments,
                          const DenseCenters& centers, const std::vector<std::size_t>& sizes) {
    require(assignments.size() == grads.size(), "weighted_objective: assignment count mismatch");
    double total = 0.0;
    for (std::size_t i = 0; i < grads.size(); ++i) {
        const std::size_t k = assignments[i];
        require(k < centers.center.size(), "weighted_objective: assignment out of range");
        total += static_cast<double>(sizes[k]) * flat_cost(centers.center[k], grads[i]);
    }
    return total;
}

double rank1_cost_fc(std::span<const double> a, std::span<const double> delta,
                     const RankOneBlockCenter& center) {
    require(a.size() == center.c.size() && delta.size() == center.d.size(),
            "rank1_cost_fc: dimension mismatch");
    const double cost = center.norm2_c * center.norm2_d -
                        2.0 * (dot(center.c, a) * dot(center.d, delta)) +
                        norm2(a) * norm2(delta);
    return cost < 0.0 ? 0.0 : cost;
}

double rank1_cost_conv(const FactorBlock& block, std::size_t example,
                       const RankOneBlockCenter& center, ConvCostPath path) {
    if (block.positions == 1) return rank1_cost_fc(block.a_row(example, 0), block.d_row(example, 0), center);
    BlockScratch s = make_scratch(block, example, 1, path);
    return cost_from_scratch(block, example, s, center);
}

double block_grad_norm2(const FactorBlock& block, std::size_t example, ConvCostPath path) {
    return make_scratch(block, example, 1, path).grad_norm2;
}

double assign_cost(const PerExampleFactors& factors, std::size_t example,
                   const RankOneCenters& centers, std::size_t cluster, ConvCostPath path) {
    require(cluster < centers.num_clusters(), "assign_cost: cluster out of range");
    require(centers.centers[cluster].size() == factors.blocks.size(),
            "assign_cost: center blocks do not match factors");
    double total = 0.0;
    for (std::size_t b = 0; b < factors.blocks.size(); ++b) {
        const FactorBlock& blk = factors.blocks[b];
        if (blk.positions == 1)
            total += rank1_cost_fc(blk.a_row(example, 0), blk.d_row(example, 0),
                                   centers.centers[cluster][b]);
        else
            total += rank1_cost_conv(blk, example, centers.centers[cluster][b], path);
    }
    return total;
}

RankOneCenters u_step_rank1(const PerExampleFactors& factors,
                            const std::vector<std::size_t>& assignments,
                            const std::vector<std::size_t>& sizes,
                            const std::vector<bool>& svd_blocks) {
    require(assignments.size() == factors.batch_size, "u_step_rank1: assignment count mismatch");
    require(svd_blocks.empty() || svd_blocks.size() == factors.blocks.size(),
            "u_step_rank1: svd flag per block expected");
    const std::size_t num_clusters = sizes.size();
    for (std::size_t nk : sizes) require(nk >= 1, "u_step_rank1: empty cluster, repair first");

    std::vector<std::vector<std::size_t>> members(num_clusters);
    for (std::size_t i = 0; i < assignments.size(); ++i) {
        require(assignments[i] < num_clusters, "u_step_rank1: assignment out of range");
        members[assignments[i]].push_back(i);
    }

    RankOneCenters out;
    out.centers.assign(num_clusters, std::vector<RankOneBlockCenter>(factors.blocks.size()));
    for (std::size_t k = 0; k < num_clusters; ++k) {
        require(members[k].size() == sizes[k], "u_step_rank1: sizes inconsistent");
        for (std::size_t b = 0; b < factors.blocks.size(); ++b) {
            const FactorBlock& blk = factors.blocks[b];
            RankOneBlockCenter& ctr = out.centers[k][b];
            if (!svd_blocks.empty() && svd_blocks[b]) {
                // Best rank-1 fit of the dense cluster mean.
                Matrix mean(blk.input_dim, blk.output_dim);
                for (std::size_t i : members[k]) {
                    Matrix g = summed_outer(blk, i);
                    for (std::size_t c = 0; c < mean.size(); ++c) mean.data()[c] += g.data()[c];
                }
                for (std::size_t c = 0; c < mean.size(); ++c)
                    mean.data()[c] /= static_cast<double>(sizes[k]);
                SingularPair sp = top_singular_pair(mean);
                ctr.c = sp.u;
                for (double& v : ctr.c) v *= sp.s;
                ctr.d = sp.v;
            } else {
                // Mean of position-summed factors; with one position this is
                // exactly the mean-factor center.
                ctr.c.assign(blk.input_dim, 0.0);
                ctr.d.assign(blk.output_dim, 0.0);
                for (std::size_t i : members[k])
                    for (std::size_t t = 0; t < blk.positions; ++t) {
                        axpy(1.0, blk.a_row(i, t), ctr.c);
                        axpy(1.0, blk.d_row(i, t), ctr.d);
                    }
                scale(ctr.c, 1.0 / static_cast<double>(sizes[k]));
                scale(ctr.d, 1.0 / static_cast<double>(sizes[k] * blk.positions));
            }
            set_cached_norms(ctr);
        }
    }
    return out;
}

double rank1_objective(const PerExampleFactors& factors,
                       const std::vector<std::size_t>& assignments,
                       const std::vector<std::size_t>& sizes, const RankOneCenters& centers,
                       ConvCostPath path) {
    double total = 0.0;
    for (std::size_t i = 0; i < factors.batch_size; ++i) {
        double c = 0.0;
        for (std::size_t b = 0; b < factors.blocks.size(); ++b) {
            const FactorBlock& blk = factors.blocks[b];
            BlockScratch s = make_scratch(blk, i, centers.num_clusters(), path);
            c += cost_from_scratch(blk, i, s, centers.centers[assignments[i]][b]);
        }
        total += static_cast<double>(sizes[assignments[i]]) * c;
    }
    return total;
}

namespace {

// Inner product between two examples' gradients for one block,
// sum_{t,s} (a_i,t . a_j,s)(d_i,t . d_j,s); with one position this is the
// familiar factored form (a_i . a_j)(d_i . d_j).
double cross_example(const FactorBlock& blk, std::size_t i, std::size_t j) {
    double total = 0.0;
    for (std::size_t t = 0; t < blk.positions; ++t)
        for (std::size_t s = 0; s < blk.positions; ++s)
            total += dot(blk.a_row(i, t), blk.a_row(j, s)) * dot(blk.d_row(i, t), blk.d_row(j, s));
    return total;
}

template <typename CostFn>
void repair_with(std::vector<std::size_t>& assignments, std::vector<std::size_t>& sizes,
                 CostFn member_cost) {
    for (;;) {
        std::size_t empty = sizes.size();
        for (std::size_t k = 0; k < sizes.size(); ++k)
            if (sizes[k] == 0) {
                empty = k;
                break;
            }
        if (empty == sizes.size()) return;

        std::size_t largest = 0;
        for (std::size_t k = 1; k < sizes.size(); ++k)
            if (sizes[k] > sizes[largest]) largest = k;
        require(sizes[largest] >= 2, "repair_empty_clusters: more clusters than points");

        // Worst-fit member of the largest cluster seeds the empty one.
        std::size_t moved = assignments.size();
        double worst = -1.0;
        for (std::size_t i = 0; i < assignments.size(); ++i) {
            if (assignments[i] != largest) continue;
            const double cost = member_cost(i, largest);
            if (cost > worst) {
                worst = cost;
                moved = i;
            }
        }
        assignments[moved] = empty;
        --sizes[largest];
        ++sizes[empty];
    }
}

}  // namespace

void repair_empty_clusters(std::vector<std::size_t>& assignments, std::vector<std::size_t>& sizes,
                           const RankOneCenters& centers, const PerExampleFactors& factors,
                           ConvCostPath path) {
    repair_with(assignments, sizes, [&](std::size_t i, std::size_t k) {
        return assign_cost(factors, i, centers, k, path);
    });
}

void repair_empty_clusters(std::vector<std::size_t>& assignments, std::vector<std::size_t>& sizes,
                           const DenseCenters& centers,
                           const std::vector<std::vector<double>>& grads) {
    repair_with(assignments, sizes, [&](std::size_t i, std::size_t k) {
        return flat_cost(centers.center[k], grads[i]);
    });
}

std::pair<ClusterState, RankOneCenters> gc_fit(const PerExampleFactors& factors, std::size_t k,
                                               const GcOptions& opts, RngStream& rng) {
    const std::size_t n = factors.batch_size;
    require(k >= 1 && k <= n, "gc_fit: cluster count must be in [1, N]");
    require(opts.iters >= 1, "gc_fit: need at least one round");

    ClusterState state;
    state.assignments.resize(n);
    state.sizes.assign(k, 0);

    std::vector<double> norms(n, 0.0);
    double total_norm = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        for (const FactorBlock& blk : factors.blocks)
            norms[i] += block_grad_norm2(blk, i, opts.path);
        total_norm += norms[i];
    }
    if (total_norm == 0.0) {
        // Every gradient is zero: any partition already has zero variance.
        // Deal a balanced one from a shuffled permutation and stop.
        std::vector<std::size_t> perm(n);
        for (std::size_t i = 0; i < n; ++i) perm[i] = i;
        rng.shuffle(perm);
        for (std::size_t i = 0; i < n; ++i) {
            state.assignments[perm[i]] = i % k;
            ++state.sizes[i % k];
        }
        RankOneCenters zero_centers =
            u_step_rank1(factors, state.assignments, state.sizes, opts.svd_blocks);
        state.degenerate = true;
        state.objective = 0.0;
        state.objective_trace.push_back(0.0);
        return {std::move(state), std::move(zero_centers)};
    }

    // Seed one cluster per example picked by squared-distance-weighted
    // sampling over the per-example gradients, then deal a balanced
    // partition by sending each point to the nearest seed that still has
    // capacity. Points identical to a covered seed carry zero sampling
    // weight, so distinct gradient values are covered before any repeats;
    // a start that merges distinct values is what the weighted assignment
    // sweep cannot recover from (a fresh singleton attracts every nearby
    // point, the emptied cluster gets reseeded, and the two states trade
    // places indefinitely).
    std::vector<std::size_t> seeds;
    std::vector<std::vector<double>> seed_d2;
    std::vector<double> min_d2(n, std::numeric_limits<double>::infinity());
    std::vector<char> is_seed(n, 0);
    while (seeds.size() < k) {
        std::size_t pick = n;
        if (seeds.empty()) {
            pick = rng.uniform_index(n);
        } else {
            double mass = 0.0;
            for (std::size_t i = 0; i < n; ++i)
                if (!is_seed[i]) mass += min_d2[i];
            if (mass > 0.0) {
                const double u = rng.uniform() * mass;
                double cum = 0.0;
                for (std::size_t i = 0; i < n; ++i) {
                    if (is_seed[i]) continue;
                    cum += min_d2[i];
                    if (cum > u) {
                        pick = i;
                        break;
                    }
                }
                if (pick == n) {
                    for (std::size_t i = n; i-- > 0;)
                        if (!is_seed[i] && min_d2[i] > 0.0) {
                            pick = i;
                            break;
                        }
                }
            }
            if (pick == n) {
                // All remaining points coincide with a seed; fill uniformly.
                std::vector<std::size_t> rest;
                for (std::size_t i = 0; i < n; ++i)
                    if (!is_seed[i]) rest.push_back(i);
                pick = rest[rng.uniform_index(rest.size())];
            }
        }
        is_seed[pick] = 1;
        seeds.push_back(pick);
        std::vector<double> col(n);
        for (std::size_t i = 0; i < n; ++i) {
            double cross = 0.0;
            for (const FactorBlock& blk : factors.blocks) cross += cross_example(blk, i, pick);
            col[i] = std::max(0.0, norms[i] + norms[pick] - 2.0 * cross);
            min_d2[i] = std::min(min_d2[i], col[i]);
        }
        seed_d2.push_back(std::move(col));
    }

    std::vector<std::size_t> cap(k, n / k);
    for (std::size_t c = 0; c < n % k; ++c) ++cap[c];
    std::vector<std::size_t> order(n);
    for (std::size_t i = 0; i < n; ++i) order[i] = i;
    rng.shuffle(order);
    for (std::size_t idx : order) {
        std::size_t bestc = k;
        for (std::size_t c = 0; c < k; ++c) {
            if (state.sizes[c] >= cap[c]) continue;
            if (bestc == k || seed_d2[c][idx] < seed_d2[bestc][idx]) bestc = c;
        }
        state.assignments[idx] = bestc;
        ++state.sizes[bestc];
    }

    RankOneCenters centers = u_step_rank1(factors, state.assignments, state.sizes, opts.svd_blocks);

    double obj = rank1_objective(factors, state.assignments, state.sizes, centers, opts.path);
    state.objective_trace.push_back(obj);

    ClusterState best = state;
    best.objective = obj;
    RankOneCenters best_centers = centers;

    for (int round = 0; round < opts.iters; ++round) {
        // Assignment sweep against frozen sizes; the per-example gradient
        // norm and any materialized outer product are built once per point.
        const std::vector<std::size_t> frozen = state.sizes;
        for (std::size_t i = 0; i < n; ++i) {
            std::vector<BlockScratch> scratch;
            scratch.reserve(factors.blocks.size());
            for (const FactorBlock& blk : factors.blocks)
                scratch.push_back(make_scratch(blk, i, k, opts.path));
            double bestc = std::numeric_limits<double>::infinity();
            std::size_t bestk = 0;
            for (std::size_t c = 0; c < k; ++c) {
                double cost = 0.0;
                for (std::size_t b = 0; b < factors.blocks.size(); ++b)
                    cost += cost_from_scratch(factors.blocks[b], i, scratch[b],
                                              centers.centers[c][b]);
                cost *= static_cast<double>(frozen[c]);
                if (cost < bestc) {
                    bestc = cost;
                    bestk = c;
                }
            }
            state.assignments[i] = bestk;
        }

        std::fill(state.sizes.begin(), state.sizes.end(), 0);
        for (std::size_t a : state.assignments) ++state.sizes[a];
        repair_empty_clusters(state.assignments, state.sizes, centers, factors, opts.path);

        centers = u_step_rank1(factors, state.assignments, state.sizes, opts.svd_blocks);
        obj = rank1_objective(factors, state.assignments, state.sizes, centers, opts.path);
        state.objective_trace.push_back(obj);
        state.iterations = round + 1;

        if (obj < best.objective) {
            best.assignments = state.assignments;
            best.sizes = state.sizes;
            best.objective = obj;
            best_centers = centers;
        }
    }

    best.iterations = state.iterations;
    best.objective_trace = state.objective_trace;
    return {std::move(best), std::move(best_centers)};
}

}  // namespace gradclust
