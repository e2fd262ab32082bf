// SPDX-License-Identifier: Apache-2.0
//
// einsense: tractable probabilistic circuit organized as an einsum network.
//
// Structure per repetition: a random balanced binary region tree of depth D.
// Leaf regions hold L diagonal-Gaussian components over their scope followed
// by a K-way mixing contraction; every other non-root region contracts its
// two child K-vectors through a K x K x K weight tensor,
// S_k = sum_ij W_kij U_i V_j. The repetition root reduces to a scalar with a
// K x K weight matrix, and a C x R class head mixes repetition roots into
// per-class likelihoods. All weight slices are probability distributions, so
// every class density is normalized by construction. Arithmetic is log-space
// throughout.
//
// Training is full-batch EM on the class-conditional likelihood: a bottom-up
// pass for values, a top-down pass for derivatives, expected flows as
// sufficient statistics, closed-form M-step with Laplace smoothing on the
// weights and a variance floor on the leaves.

#pragma once

#include <cmath>
#include <cstdint>
#include <numeric>
#include <span>
#include <string>
#include <vector>

#include "einsense/common.hpp"

namespace einsense {

struct CircuitSpec {
    int depth = 2;            // D
    int sum_components = 2;   // K
    int leaf_components = 2;  // L
    int repetitions = 1;      // R
    int classes = 2;          // C
    int num_variables = 2;
    std::uint64_t structure_seed = 1;

    void validate() const {
        require(depth >= 1 && sum_components >= 1 && leaf_components >= 1 && repetitions >= 1 &&
                    classes >= 1 && num_variables >= 1,
                "CircuitSpec: D, K, L, R, C, num_variables must all be >= 1");
    }
};

/// One node of a repetition's region tree. Children partition the scope.
struct Region {
    std::vector<int> scope;  // sorted variable indices
    int left = -1;           // child region ids; -1 marks a leaf region
    int right = -1;
    int depth = 0;

    bool is_leaf() const { return left < 0; }
};

/// Region trees for all repetitions; region 0 is the root of each tree.
struct RegionGraph {
    std::vector<std::vector<Region>> repetitions;
};

/// R independent random balanced binary partitions of the variable set.
/// Scopes are split into halves (sizes differing by at most 1) uniformly at
/// random until depth D; singleton regions stop splitting early.
inline RegionGraph build_region_graph(int num_variables, int depth, int repetitions,
                                      std::uint64_t seed) {
    require(num_variables >= 1, "build_region_graph: need at least one variable");
    require(depth >= 1 && repetitions >= 1, "build_region_graph: depth and repetitions >= 1");

    RegionGraph graph;
    graph.repetitions.resize(repetitions);
    for (int r = 0; r < repetitions; ++r) {
        auto rng = make_rng(seed, 0x726567696f6eULL /* region salt */, r);
        auto& regions = graph.repetitions[r];

        std::vector<int> all(num_variables);
        std::iota(all.begin(), all.end(), 0);
        regions.push_back({all, -1, -1, 0});

        // Breadth-first split; children are appended in order, so sibling
        // pairs stay adjacent and the tree reads top-down.
        for (std::size_t idx = 0; idx < regions.size(); ++idx) {
            if (regions[idx].depth >= depth || regions[idx].scope.size() < 2) continue;
            std::vector<int> shuffled = regions[idx].scope;
            std::shuffle(shuffled.begin(), shuffled.end(), rng);
            const std::size_t half = (shuffled.size() + 1) / 2;
            std::vector<int> left(shuffled.begin(), shuffled.begin() + half);
            std::vector<int> right(shuffled.begin() + half, shuffled.end());
            std::sort(left.begin(), left.end());
            std::sort(right.begin(), right.end());
            const int d = regions[idx].depth + 1;
            regions[idx].left = static_cast<int>(regions.size());
            regions.push_back({std::move(left), -1, -1, d});
            regions[idx].right = static_cast<int>(regions.size());
            regions.push_back({std::move(right), -1, -1, d});
        }
    }
    return graph;
}

/// Parameters of one leaf region: L x |scope| Gaussians plus the K x L
/// mixing contraction (log weights, rows normalized over l).
struct LeafParams {
    std::vector<double> mean;     // [l * scope_size + v]
    std::vector<double> stdev;    // same layout, all >= sqrt(variance floor)
    std::vector<double> log_mix;  // [k * L + l]
};

/// K x K x K einsum tensor in log space, normalized over (i, j) per k.
struct EinsumParams {
    std::vector<double> log_w;  // [k * K * K + i * K + j]
};

struct RepetitionParams {
    // Indexed by region id; unused slots stay empty.
    std::vector<LeafParams> leaf;
    std::vector<EinsumParams> einsum;
    std::vector<double> root_log_w;  // K x K (internal root) or K (leaf root)
};

struct TrainingMeta {
    int epochs_run = 0;
    double final_train_loglik = kNegInf;
    int training_samples = 0;
};

struct EinsumCircuit {
    CircuitSpec spec;
    RegionGraph graph;
    std::vector<RepetitionParams> reps;
    std::vector<double> head_log;   // [c * R + r], rows normalized over r
    std::vector<double> feat_mean;  // per-feature standardization
    std::vector<double> feat_std;
    TrainingMeta meta;

    int num_classes() const { return spec.classes; }
    int num_variables() const { return spec.num_variables; }

    /// Einsum contractions executed per forward pass (leaf mixes plus
    /// internal non-root contractions, summed over repetitions). With no
    /// early-stopped regions this equals R * (2^{D+1} - 2).
    long long einsum_contraction_count() const {
        long long count = 0;
        for (const auto& regions : graph.repetitions)
            for (std::size_t i = 0; i < regions.size(); ++i)
                if (regions[i].is_leaf() || i > 0) ++count;
        return count;
    }
};

namespace detail {

inline double log_normal_pdf(double z, double mean, double stdev) {
    static const double kLogSqrt2Pi = 0.5 * std::log(2.0 * kPi);
    const double d = (z - mean) / stdev;
    return -kLogSqrt2Pi - std::log(stdev) - 0.5 * d * d;
}

// Normalizes a positive weight block to log probabilities.
inline void normalize_to_log(std::span<double> w) {
    double sum = 0.0;
    for (double v : w) sum += v;
    for (double& v : w) v = std::log(v / sum);
}

}  // namespace detail

/// Fresh circuit with the given structure and seeded random parameters.
/// Standardization starts as the identity; em_fit replaces it with
/// training-set statistics.
inline EinsumCircuit build_circuit(const CircuitSpec& spec) {
    spec.validate();
    EinsumCircuit c;
    c.spec = spec;
    c.graph = build_region_graph(spec.num_variables, spec.depth, spec.repetitions,
                                 spec.structure_seed);
    const int k = spec.sum_components;
    const int l = spec.leaf_components;

    c.reps.resize(spec.repetitions);
    for (int r = 0; r < spec.repetitions; ++r) {
        auto rng = make_rng(spec.structure_seed, 0x706172616dULL /* param salt */, r);
        std::uniform_real_distribution<double> uni(0.5, 1.5);
        std::uniform_real_distribution<double> mean_init(-0.5, 0.5);
        const auto& regions = c.graph.repetitions[r];
        auto& params = c.reps[r];
        params.leaf.resize(regions.size());
        params.einsum.resize(regions.size());

        for (std::size_t idx = 0; idx < regions.size(); ++idx) {
            const Region& region = regions[idx];
            if (region.is_leaf()) {
                LeafParams& lp = params.leaf[idx];
                const std::size_t scope = region.scope.size();
                lp.mean.resize(l * scope);
                lp.stdev.assign(l * scope, 1.0);
                for (double& m : lp.mean) m = mean_init(rng);
                lp.log_mix.resize(k * l);
                for (double& w : lp.log_mix) w = uni(rng);
                for (int kk = 0; kk < k; ++kk)
                    detail::normalize_to_log(
                        std::span<double>(lp.log_mix.data() + kk * l, l));
            } else if (idx > 0) {
                EinsumParams& ep = params.einsum[idx];
                ep.log_w.resize(k * k * k);
                for (double& w : ep.log_w) w = uni(rng);
                for (int kk = 0; kk < k; ++kk)
                    detail::normalize_to_log(
                        std::span<double>(ep.log_w.data() + kk * k * k, k * k));
            }
        }
        const bool root_is_leaf = regions[0].is_leaf();
        params.root_log_w.resize(root_is_leaf ? k : k * k);
        for (double& w : params.root_log_w) w = uni(rng);
        detail::normalize_to_log(params.root_log_w);
    }

    {
        auto rng = make_rng(spec.structure_seed, 0x68656164ULL /* head salt */);
        std::uniform_real_distribution<double> uni(0.5, 1.5);
        c.head_log.resize(spec.classes * spec.repetitions);
        for (double& w : c.head_log) w = uni(rng);
        for (int cc = 0; cc < spec.classes; ++cc)
            detail::normalize_to_log(
                std::span<double>(c.head_log.data() + cc * spec.repetitions, spec.repetitions));
    }

    c.feat_mean.assign(spec.num_variables, 0.0);
    c.feat_std.assign(spec.num_variables, 1.0);
    return c;
}

namespace detail {

// Per-sample evaluation state for one repetition: log values bottom-up and
// log derivatives top-down.
struct RepWorkspace {
    std::vector<std::vector<double>> leaf_g;  // per region: L leaf log densities
    std::vector<std::vector<double>> value;   // per region: K-vector of log values
    std::vector<std::vector<double>> deriv;   // per region: K-vector of log dp/dS
    double root_value = kNegInf;              // repetition root scalar (log)
};

inline void ensure_workspace(const EinsumCircuit& c, std::vector<RepWorkspace>& ws) {
    if (!ws.empty()) return;
    ws.resize(c.reps.size());
    for (std::size_t r = 0; r < c.reps.size(); ++r) {
        const auto& regions = c.graph.repetitions[r];
        ws[r].leaf_g.resize(regions.size());
        ws[r].value.resize(regions.size());
        ws[r].deriv.resize(regions.size());
        for (std::size_t idx = 0; idx < regions.size(); ++idx) {
            ws[r].value[idx].assign(c.spec.sum_components, kNegInf);
            ws[r].deriv[idx].assign(c.spec.sum_components, kNegInf);
            if (regions[idx].is_leaf())
                ws[r].leaf_g[idx].assign(c.spec.leaf_components, kNegInf);
        }
    }
}

// Bottom-up pass over one repetition; fills leaf_g, value, root_value.
// Regions were appended parents-first, so a reverse sweep visits children
// before parents.
inline void forward_repetition(const EinsumCircuit& c, int rep, std::span<const double> z,
                               RepWorkspace& ws, long long* contraction_counter) {
    const auto& regions = c.graph.repetitions[rep];
    const auto& params = c.reps[rep];
    const int k = c.spec.sum_components;
    const int l = c.spec.leaf_components;

    for (std::size_t step = regions.size(); step-- > 0;) {
        const Region& region = regions[step];
        if (region.is_leaf()) {
            const LeafParams& lp = params.leaf[step];
            const std::size_t scope = region.scope.size();
            auto& g = ws.leaf_g[step];
            for (int li = 0; li < l; ++li) {
                double s = 0.0;
                for (std::size_t v = 0; v < scope; ++v)
                    s += log_normal_pdf(z[region.scope[v]], lp.mean[li * scope + v],
                                        lp.stdev[li * scope + v]);
                g[li] = s;
            }
            auto& val = ws.value[step];
            for (int kk = 0; kk < k; ++kk) {
                LogAccumulator acc;
                for (int li = 0; li < l; ++li) acc.add(lp.log_mix[kk * l + li] + g[li]);
                val[kk] = acc.value();
            }
            if (contraction_counter) ++*contraction_counter;
        } else if (step > 0) {
            const EinsumParams& ep = params.einsum[step];
            const auto& u = ws.value[region.left];
            const auto& v = ws.value[region.right];
            auto& val = ws.value[step];
            for (int kk = 0; kk < k; ++kk) {
                LogAccumulator acc;
                for (int i = 0; i < k; ++i)
                    for (int j = 0; j < k; ++j)
                        acc.add(ep.log_w[kk * k * k + i * k + j] + u[i] + v[j]);
                val[kk] = acc.value();
            }
            if (contraction_counter) ++*contraction_counter;
        }
    }

    const Region& root = regions[0];
    if (root.is_leaf()) {
        LogAccumulator acc;
        for (int kk = 0; kk < k; ++kk) acc.add(params.root_log_w[kk] + ws.value[0][kk]);
        ws.root_value = acc.value();
    } else {
        const auto& u = ws.value[root.left];
        const auto& v = ws.value[root.right];
        LogAccumulator acc;
        for (int i = 0; i < k; ++i)
            for (int j = 0; j < k; ++j) acc.add(params.root_log_w[i * k + j] + u[i] + v[j]);
        ws.root_value = acc.value();
    }
}

inline void standardize_into(const EinsumCircuit& c, std::span<const double> x,
                             std::vector<double>& z) {
    z.resize(x.size());
    for (std::size_t i = 0; i < x.size(); ++i) z[i] = (x[i] - c.feat_mean[i]) / c.feat_std[i];
}

}  // namespace detail

/// Per-class log-likelihoods log p(x | c). Optionally counts the einsum
/// contractions executed (per full forward pass over all repetitions).
inline std::vector<double> forward_class_loglik(const EinsumCircuit& c, std::span<const double> x,
                                                long long* contraction_counter = nullptr) {
    require(static_cast<int>(x.size()) == c.spec.num_variables,
            "forward_class_loglik: dimension mismatch");
    require(all_finite(std::span<const double>(x.data(), x.size())),
            "forward_class_loglik: non-finite input");

    static thread_local std::vector<detail::RepWorkspace> ws;
    static thread_local const EinsumCircuit* ws_owner = nullptr;
    if (ws_owner != &c) {
        ws.clear();
        ws_owner = &c;
    }
    detail::ensure_workspace(c, ws);

    std::vector<double> z;
    detail::standardize_into(c, x, z);

    std::vector<double> roots(c.spec.repetitions);
    for (int r = 0; r < c.spec.repetitions; ++r) {
        detail::forward_repetition(c, r, z, ws[r], contraction_counter);
        roots[r] = ws[r].root_value;
    }

    std::vector<double> out(c.spec.classes);
    for (int cc = 0; cc < c.spec.classes; ++cc) {
        LogAccumulator acc;
        for (int r = 0; r < c.spec.repetitions; ++r)
            acc.add(c.head_log[cc * c.spec.repetitions + r] + roots[r]);
        out[cc] = acc.value();
    }
    return out;
}

/// Bayes posterior over classes in log space; the returned simplex is
/// renormalized so it sums to 1 within 1e-12.
inline std::vector<double> posterior(const EinsumCircuit& c, std::span<const double> x,
                                     std::span<const double> priors) {
    require(static_cast<int>(priors.size()) == c.spec.classes, "posterior: prior size mismatch");
    double prior_sum = 0.0;
    for (double p : priors) prior_sum += p;
    require(std::abs(prior_sum - 1.0) < 1e-9, "posterior: priors must sum to 1");

    const auto ll = forward_class_loglik(c, x);
    std::vector<double> lp(c.spec.classes);
    for (int cc = 0; cc < c.spec.classes; ++cc)
        lp[cc] = ll[cc] + (priors[cc] > 0.0 ? std::log(priors[cc]) : kNegInf);
    const double lse = log_sum_exp(lp);
    if (lse == kNegInf) throw DataError("posterior: all class likelihoods are zero");

    std::vector<double> post(c.spec.classes);
    double sum = 0.0;
    for (int cc = 0; cc < c.spec.classes; ++cc) {
        post[cc] = std::exp(lp[cc] - lse);
        sum += post[cc];
    }
    for (double& p : post) p /= sum;
    return post;
}

/// Argmax class (1-based) under uniform priors; ties break toward the lower
/// class index.
inline int predict(const EinsumCircuit& c, std::span<const double> x) {
    const auto ll = forward_class_loglik(c, x);
    int best = 0;
    for (int cc = 1; cc < c.spec.classes; ++cc)
        if (ll[cc] > ll[best]) best = cc;
    return best + 1;
}

struct EmConfig {
    int epochs = 30;
    double laplace_alpha = 0.01;   // Dirichlet smoothing on all sum weights
    double variance_floor = 1e-3;  // standardized units
    bool init_leaves_from_data = true;
    // Round-robin class clusters per repetition: leaf exemplars are drawn
    // from the repetition's own classes and head rows start biased toward
    // their cluster, so repetitions specialize instead of collapsing onto
    // one global density.
    bool class_aware_init = true;
    // Epochs at the start where head rows stay fixed; repetitions must fit
    // the classes routed to them before they may compete for others.
    int head_freeze_epochs = 5;
    bool verbose = false;
};

struct EmResult {
    std::vector<double> epoch_loglik;  // train log-likelihood before each update
};

namespace detail {

struct LeafStats {
    std::vector<double> gamma;      // [L]
    std::vector<double> gamma_z;    // [L * scope]
    std::vector<double> gamma_zz;   // [L * scope]
    std::vector<double> mix_flow;   // [K * L]
};

struct RepStats {
    std::vector<LeafStats> leaf;            // per region
    std::vector<std::vector<double>> flow;  // per region: K*K*K einsum flows
    std::vector<double> root_flow;          // K*K or K
};

}  // namespace detail

/// Full-batch EM. Labels are 1-based and every class in 1..C must appear at
/// least once. Returns the train log-likelihood measured at the start of
/// each epoch; the sequence is non-decreasing up to smoothing-level noise.
/// Samples are accumulated in order, so training is bit-reproducible.
inline EmResult em_fit(EinsumCircuit& c, const std::vector<std::vector<double>>& xs,
                       const std::vector<int>& labels, const EmConfig& cfg = {}) {
    require(!xs.empty() && xs.size() == labels.size(), "em_fit: empty or mismatched dataset");
    require(cfg.epochs >= 1, "em_fit: need at least one epoch");
    const int n_class = c.spec.classes;
    const int n_var = c.spec.num_variables;
    {
        std::vector<int> support(n_class, 0);
        for (std::size_t n = 0; n < xs.size(); ++n) {
            require(static_cast<int>(xs[n].size()) == n_var, "em_fit: sample dimension mismatch");
            require(labels[n] >= 1 && labels[n] <= n_class, "em_fit: label out of range");
            require(all_finite(xs[n]), "em_fit: non-finite sample");
            ++support[labels[n] - 1];
        }
        for (int cc = 0; cc < n_class; ++cc)
            if (support[cc] == 0)
                throw DataError("em_fit: class " + std::to_string(cc + 1) + " has no samples");
    }

    // Training-set standardization, with a guard for constant features.
    c.feat_mean.assign(n_var, 0.0);
    c.feat_std.assign(n_var, 1.0);
    for (int v = 0; v < n_var; ++v) {
        double m = 0.0;
        for (const auto& x : xs) m += x[v];
        m /= static_cast<double>(xs.size());
        double s2 = 0.0;
        for (const auto& x : xs) s2 += (x[v] - m) * (x[v] - m);
        s2 /= static_cast<double>(xs.size());
        c.feat_mean[v] = m;
        c.feat_std[v] = (s2 > 1e-18) ? std::sqrt(s2) : 1.0;
    }

    std::vector<std::vector<double>> zs(xs.size());
    for (std::size_t n = 0; n < xs.size(); ++n) detail::standardize_into(c, xs[n], zs[n]);

    const int k = c.spec.sum_components;
    const int l = c.spec.leaf_components;
    const double min_std = std::sqrt(cfg.variance_floor);

    // Class-aware routing: every class gets its own pair of repetitions,
    // (c mod R, c mod R + 1 + c div R), distinct across classes whenever
    // C <= R(R-1)/2. Unique signatures keep same-repetition classes from
    // tying exactly in likelihood, while each repetition still only has to
    // model a handful of classes.
    const int n_reps = c.spec.repetitions;
    auto reps_of_class = [&](int cc) {
        std::array<int, 2> pair{};
        if (n_reps == 1) return std::array<int, 2>{0, 0};
        const int base = cc % n_reps;
        const int offset = 1 + cc / n_reps;
        pair[0] = base;
        pair[1] = (base + offset) % n_reps;
        return pair;
    };
    auto cluster_of = [&](int rep) {
        std::vector<int> cluster;
        for (int cc = 0; cc < n_class; ++cc) {
            const auto pr = reps_of_class(cc);
            if (pr[0] == rep || pr[1] == rep) cluster.push_back(cc);
        }
        return cluster;
    };

    // Exemplar-seeded leaf means spread the mixture over the data before the
    // first E-step; with class-aware init each repetition draws exemplars
    // from its own class cluster.
    if (cfg.init_leaves_from_data) {
        std::vector<std::vector<std::size_t>> by_class(n_class);
        for (std::size_t n = 0; n < xs.size(); ++n) by_class[labels[n] - 1].push_back(n);
        auto rng = make_rng(c.spec.structure_seed, 0x6578656dULL /* exemplar salt */);
        std::normal_distribution<double> nudge(0.0, 0.05);
        for (int r = 0; r < c.spec.repetitions; ++r) {
            std::vector<std::size_t> pool;
            if (cfg.class_aware_init) {
                for (int cc : cluster_of(r))
                    pool.insert(pool.end(), by_class[cc].begin(), by_class[cc].end());
            }
            if (pool.empty()) {
                pool.resize(xs.size());
                std::iota(pool.begin(), pool.end(), std::size_t{0});
            }
            std::uniform_int_distribution<std::size_t> pick(0, pool.size() - 1);
            const auto& regions = c.graph.repetitions[r];
            for (std::size_t idx = 0; idx < regions.size(); ++idx) {
                if (!regions[idx].is_leaf()) continue;
                LeafParams& lp = c.reps[r].leaf[idx];
                const std::size_t scope = regions[idx].scope.size();
                for (int li = 0; li < l; ++li) {
                    const auto& z = zs[pool[pick(rng)]];
                    for (std::size_t v = 0; v < scope; ++v)
                        lp.mean[li * scope + v] = z[regions[idx].scope[v]] + nudge(rng);
                }
            }
        }
    }

    if (cfg.class_aware_init) {
        auto rng = make_rng(c.spec.structure_seed, 0x686462ULL /* head-bias salt */);
        std::uniform_real_distribution<double> uni(0.9, 1.1);
        for (int cc = 0; cc < n_class; ++cc) {
            const auto pr = reps_of_class(cc);
            std::vector<double> w(n_reps);
            for (int r = 0; r < n_reps; ++r) {
                const bool own = (r == pr[0] || r == pr[1]);
                w[r] = (own ? 1.0 : 0.05) * uni(rng);
            }
            double sum = 0.0;
            for (double v : w) sum += v;
            for (int r = 0; r < n_reps; ++r)
                c.head_log[cc * n_reps + r] = std::log(w[r] / sum);
        }
    }

    std::vector<detail::RepWorkspace> ws;
    detail::ensure_workspace(c, ws);

    // Statistic buffers sized once.
    std::vector<detail::RepStats> stats(c.spec.repetitions);
    std::vector<double> head_count(c.head_log.size());
    for (int r = 0; r < c.spec.repetitions; ++r) {
        const auto& regions = c.graph.repetitions[r];
        stats[r].leaf.resize(regions.size());
        stats[r].flow.resize(regions.size());
        for (std::size_t idx = 0; idx < regions.size(); ++idx) {
            if (regions[idx].is_leaf()) {
                const std::size_t scope = regions[idx].scope.size();
                stats[r].leaf[idx].gamma.resize(l);
                stats[r].leaf[idx].gamma_z.resize(l * scope);
                stats[r].leaf[idx].gamma_zz.resize(l * scope);
                stats[r].leaf[idx].mix_flow.resize(k * l);
            } else if (idx > 0) {
                stats[r].flow[idx].resize(k * k * k);
            }
        }
        stats[r].root_flow.resize(c.reps[r].root_log_w.size());
    }

    EmResult result;
    std::vector<double> roots(c.spec.repetitions);
    std::vector<double> d_root(c.spec.repetitions);

    for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
        // Zero statistics.
        std::fill(head_count.begin(), head_count.end(), 0.0);
        for (auto& rs : stats) {
            std::fill(rs.root_flow.begin(), rs.root_flow.end(), 0.0);
            for (auto& f : rs.flow) std::fill(f.begin(), f.end(), 0.0);
            for (auto& lf : rs.leaf) {
                std::fill(lf.gamma.begin(), lf.gamma.end(), 0.0);
                std::fill(lf.gamma_z.begin(), lf.gamma_z.end(), 0.0);
                std::fill(lf.gamma_zz.begin(), lf.gamma_zz.end(), 0.0);
                std::fill(lf.mix_flow.begin(), lf.mix_flow.end(), 0.0);
            }
        }

        double total_ll = 0.0;
        for (std::size_t n = 0; n < xs.size(); ++n) {
            const auto& z = zs[n];
            const int y = labels[n] - 1;

            for (int r = 0; r < c.spec.repetitions; ++r) {
                detail::forward_repetition(c, r, z, ws[r], nullptr);
                roots[r] = ws[r].root_value;
            }
            LogAccumulator class_acc;
            for (int r = 0; r < c.spec.repetitions; ++r)
                class_acc.add(c.head_log[y * c.spec.repetitions + r] + roots[r]);
            const double log_py = class_acc.value();
            if (!std::isfinite(log_py))
                throw DataError("em_fit: non-finite likelihood at sample " + std::to_string(n));
            total_ll += log_py;

            // Head statistics and per-repetition root derivative.
            for (int r = 0; r < c.spec.repetitions; ++r) {
                const double hw = c.head_log[y * c.spec.repetitions + r];
                head_count[y * c.spec.repetitions + r] += std::exp(hw + roots[r] - log_py);
                d_root[r] = hw;  // log dp(x|y)/d root_r
            }

            for (int r = 0; r < c.spec.repetitions; ++r) {
                const auto& regions = c.graph.repetitions[r];
                auto& params = c.reps[r];
                auto& w = ws[r];
                auto& rs = stats[r];

                // Top-down: seed the root region's derivative.
                const Region& root = regions[0];
                if (root.is_leaf()) {
                    for (int kk = 0; kk < k; ++kk) {
                        w.deriv[0][kk] = d_root[r] + params.root_log_w[kk];
                        rs.root_flow[kk] += std::exp(d_root[r] + params.root_log_w[kk] +
                                                     w.value[0][kk] - log_py);
                    }
                } else {
                    const auto& u = w.value[root.left];
                    const auto& v = w.value[root.right];
                    auto& du = w.deriv[root.left];
                    auto& dv = w.deriv[root.right];
                    for (int i = 0; i < k; ++i) {
                        LogAccumulator acc;
                        for (int j = 0; j < k; ++j)
                            acc.add(d_root[r] + params.root_log_w[i * k + j] + v[j]);
                        du[i] = acc.value();
                    }
                    for (int j = 0; j < k; ++j) {
                        LogAccumulator acc;
                        for (int i = 0; i < k; ++i)
                            acc.add(d_root[r] + params.root_log_w[i * k + j] + u[i]);
                        dv[j] = acc.value();
                    }
                    for (int i = 0; i < k; ++i)
                        for (int j = 0; j < k; ++j)
                            rs.root_flow[i * k + j] += std::exp(
                                d_root[r] + params.root_log_w[i * k + j] + u[i] + v[j] - log_py);
                }

                // Interior top-down sweep: parents precede children in the
                // region array, so a forward scan is valid.
                for (std::size_t idx = 0; idx < regions.size(); ++idx) {
                    const Region& region = regions[idx];
                    if (region.is_leaf()) {
                        const LeafParams& lp = params.leaf[idx];
                        auto& lf = rs.leaf[idx];
                        const std::size_t scope = region.scope.size();
                        for (int li = 0; li < l; ++li) {
                            LogAccumulator dg;
                            for (int kk = 0; kk < k; ++kk) {
                                const double term = w.deriv[idx][kk] + lp.log_mix[kk * l + li];
                                dg.add(term);
                                lf.mix_flow[kk * l + li] +=
                                    std::exp(term + w.leaf_g[idx][li] - log_py);
                            }
                            const double gamma =
                                std::exp(dg.value() + w.leaf_g[idx][li] - log_py);
                            lf.gamma[li] += gamma;
                            for (std::size_t v = 0; v < scope; ++v) {
                                const double zv = z[region.scope[v]];
                                lf.gamma_z[li * scope + v] += gamma * zv;
                                lf.gamma_zz[li * scope + v] += gamma * zv * zv;
                            }
                        }
                        continue;
                    }
                    if (idx == 0) continue;  // root handled above
                    const EinsumParams& ep = params.einsum[idx];
                    const auto& u = w.value[region.left];
                    const auto& v = w.value[region.right];
                    const auto& ds = w.deriv[idx];
                    auto& du = w.deriv[region.left];
                    auto& dv = w.deriv[region.right];
                    auto& flow = rs.flow[idx];
                    for (int i = 0; i < k; ++i) {
                        LogAccumulator acc;
                        for (int kk = 0; kk < k; ++kk)
                            for (int j = 0; j < k; ++j)
                                acc.add(ds[kk] + ep.log_w[kk * k * k + i * k + j] + v[j]);
                        du[i] = acc.value();
                    }
                    for (int j = 0; j < k; ++j) {
                        LogAccumulator acc;
                        for (int kk = 0; kk < k; ++kk)
                            for (int i = 0; i < k; ++i)
                                acc.add(ds[kk] + ep.log_w[kk * k * k + i * k + j] + u[i]);
                        dv[j] = acc.value();
                    }
                    for (int kk = 0; kk < k; ++kk)
                        for (int i = 0; i < k; ++i)
                            for (int j = 0; j < k; ++j)
                                flow[kk * k * k + i * k + j] +=
                                    std::exp(ds[kk] + ep.log_w[kk * k * k + i * k + j] + u[i] +
                                             v[j] - log_py);
                }
            }
        }
        result.epoch_loglik.push_back(total_ll);
        if (cfg.verbose)
            std::cerr << "[einsense:em] epoch " << epoch << " loglik " << total_ll << "\n";
        if (!std::isfinite(total_ll)) throw DataError("em_fit: training log-likelihood diverged");

        // M-step.
        const double alpha = cfg.laplace_alpha;
        auto renorm = [&](std::span<double> log_w, std::span<const double> counts) {
            double sum = 0.0;
            for (double v : counts) sum += v + alpha;
            for (std::size_t i = 0; i < log_w.size(); ++i)
                log_w[i] = std::log((counts[i] + alpha) / sum);
        };

        if (epoch >= cfg.head_freeze_epochs) {
            for (int cc = 0; cc < n_class; ++cc)
                renorm(std::span<double>(c.head_log.data() + cc * c.spec.repetitions,
                                         c.spec.repetitions),
                       std::span<const double>(head_count.data() + cc * c.spec.repetitions,
                                               c.spec.repetitions));
        }

        for (int r = 0; r < c.spec.repetitions; ++r) {
            const auto& regions = c.graph.repetitions[r];
            auto& params = c.reps[r];
            auto& rs = stats[r];
            renorm(params.root_log_w, rs.root_flow);
            for (std::size_t idx = 0; idx < regions.size(); ++idx) {
                const Region& region = regions[idx];
                if (region.is_leaf()) {
                    LeafParams& lp = params.leaf[idx];
                    auto& lf = rs.leaf[idx];
                    const std::size_t scope = region.scope.size();
                    for (int kk = 0; kk < k; ++kk)
                        renorm(std::span<double>(lp.log_mix.data() + kk * l, l),
                               std::span<const double>(lf.mix_flow.data() + kk * l, l));
                    for (int li = 0; li < l; ++li) {
                        if (lf.gamma[li] < 1e-12) continue;  // no responsibility: keep params
                        for (std::size_t v = 0; v < scope; ++v) {
                            const double mu = lf.gamma_z[li * scope + v] / lf.gamma[li];
                            double var =
                                lf.gamma_zz[li * scope + v] / lf.gamma[li] - mu * mu;
                            var = std::max(var, cfg.variance_floor);
                            lp.mean[li * scope + v] = mu;
                            lp.stdev[li * scope + v] = std::max(std::sqrt(var), min_std);
                        }
                    }
                } else if (idx > 0) {
                    EinsumParams& ep = params.einsum[idx];
                    for (int kk = 0; kk < k; ++kk)
                        renorm(std::span<double>(ep.log_w.data() + kk * k * k, k * k),
                               std::span<const double>(rs.flow[idx].data() + kk * k * k, k * k));
                }
            }
        }
    }

    c.meta.epochs_run += cfg.epochs;
    c.meta.final_train_loglik = result.epoch_loglik.back();
    c.meta.training_samples = static_cast<int>(xs.size());
    return result;
}

}  // namespace einsense
