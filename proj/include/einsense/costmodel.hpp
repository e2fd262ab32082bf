// SPDX-License-Identifier: Apache-2.0
//
// einsense: closed-form MAC/ops accounting for the classifier architectures
// handled by this project (einsum circuits, random forests, MLPs, the three
// reference CNNs) plus the accuracy/log10(MACs) efficiency score.

#pragma once

#include <array>
#include <cmath>
#include <cstdint>
#include <iomanip>
#include <numeric>
#include <sstream>
#include <string>
#include <vector>

#include "einsense/common.hpp"

namespace einsense {

using ops_t = long long;

/// MACs of a convolution layer. Unused spatial/kernel dimensions are 1, so
/// the same product covers 1D/2D/3D layers.
inline ops_t mac_conv(ops_t d_o, ops_t h_o, ops_t w_o, ops_t c_o, ops_t c_i,
                      ops_t k_d, ops_t k_h, ops_t k_w, ops_t count = 1) {
    require(d_o >= 1 && h_o >= 1 && w_o >= 1 && c_o >= 1 && c_i >= 1 &&
                k_d >= 1 && k_h >= 1 && k_w >= 1 && count >= 1,
            "mac_conv: all factors must be >= 1");
    return count * d_o * h_o * w_o * c_o * c_i * k_d * k_h * k_w;
}

/// MACs of a fully connected layer.
inline ops_t mac_fc(ops_t n_in, ops_t n_out) {
    require(n_in >= 1 && n_out >= 1, "mac_fc: neuron counts must be >= 1");
    return n_in * n_out;
}

/// MACs of an MLP given its layer widths.
inline ops_t mac_mlp(const std::vector<ops_t>& widths) {
    require(widths.size() >= 2, "mac_mlp: need at least two layers");
    ops_t total = 0;
    for (std::size_t i = 0; i + 1 < widths.size(); ++i) total += mac_fc(widths[i], widths[i + 1]);
    return total;
}

struct EinsumCost {
    ops_t einsum = 0;
    ops_t leaf = 0;
    ops_t mix = 0;
    ops_t total() const { return einsum + leaf + mix; }
};

/// Inference cost of one einsum-circuit model.
///
/// einsum: (2^{D+1} - 2) * R * (K^3 + K), one contraction per non-root region
/// of each repetition.
/// leaf:   2 * 2^D. Leaf standardization z = (x - mu) / sigma costs one
/// subtraction and one multiply per leaf input, hence the factor 2.
/// mix:    R * C class-head mixing, shaped like a fully connected layer.
inline EinsumCost mac_einsum_model(int depth, int k, int r, int c) {
    require(depth >= 1 && k >= 1 && r >= 1 && c >= 1, "mac_einsum_model: all parameters >= 1");
    EinsumCost out;
    const ops_t kk = static_cast<ops_t>(k);
    out.einsum = ((1LL << (depth + 1)) - 2) * static_cast<ops_t>(r) * (kk * kk * kk + kk);
    out.leaf = 2 * (1LL << depth);
    out.mix = static_cast<ops_t>(r) * static_cast<ops_t>(c);
    return out;
}

struct RandomForestCost {
    ops_t traversal = 0;
    ops_t leaf_normalization = 0;
    ops_t aggregation = 0;
    ops_t argmax = 0;
    ops_t total() const { return traversal + leaf_normalization + aggregation + argmax; }
};

/// MAC-equivalent inference cost of one random forest; every arithmetic or
/// comparison step counts as one op. Traversal is a feature read plus a
/// threshold comparison per level per tree.
inline RandomForestCost mac_random_forest(int n_estimators, int max_depth, int classes) {
    require(n_estimators >= 1 && max_depth >= 1 && classes >= 1,
            "mac_random_forest: all parameters >= 1");
    RandomForestCost out;
    const ops_t n = n_estimators, d = max_depth, c = classes;
    out.traversal = 2 * n * d;
    out.leaf_normalization = n * (2 * c - 1);
    out.aggregation = n * c + c;
    out.argmax = c - 1;
    return out;
}

/// Generic op count for extracting `feats` statistics from `channels` signals
/// of `samples` samples each.
inline ops_t stat_extraction_ops(ops_t channels, ops_t samples, ops_t feats) {
    require(channels >= 1 && samples >= 1 && feats >= 1, "stat_extraction_ops: all >= 1");
    return channels * samples * feats;
}

/// Feature-extraction op budget per bundle:
///   SPR: 14 statistics over 8 RSS/phase channels + 4 correlations of 35 samples
///   SA:  14 statistics over 2 AoA channels + 1 correlation
///   WA:  length-4 wavelet filter over 2 AoA channels of 35 samples
inline ops_t feature_extraction_ops(FeatureKind kind) {
    switch (kind) {
        case FeatureKind::SPR: return stat_extraction_ops(8, 35, 14) + 4 * 35;
        case FeatureKind::SA: return stat_extraction_ops(2, 35, 14) + 35;
        case FeatureKind::WA: return 2 * 35 * 4;
    }
    throw UsageError("feature_extraction_ops: unknown kind");
}

/// Accuracy (percent) divided by log10 of the model's inference MACs.
/// Feature-extraction ops are excluded from the denominator.
inline double efficiency_score(double accuracy_percent, ops_t macs) {
    require(macs > 1, "efficiency_score: macs must be > 1");
    return accuracy_percent / std::log10(static_cast<double>(macs));
}

// ---------------------------------------------------------------------------
// Table assembly

struct CostLineItem {
    std::string component;
    std::string formula;
    ops_t ops = 0;
};

struct ModelCost {
    std::string name;
    std::vector<CostLineItem> items;
    ops_t total() const {
        return std::accumulate(items.begin(), items.end(), ops_t{0},
                               [](ops_t a, const CostLineItem& it) { return a + it.ops; });
    }
};

namespace detail {

struct ConvSpec {
    std::string kind;
    std::vector<ops_t> display;  // params as tabulated (6-tuple for 2D, 8-tuple for 3D)
    std::array<ops_t, 8> full;   // (D_o,H_o,W_o,C_o,C_i,K_D,K_H,K_W), 1s for unused dims
    ops_t count;
};

inline ConvSpec conv3d(std::array<ops_t, 8> p, ops_t count) {
    return {"Conv3D", {p.begin(), p.end()}, p, count};
}

inline ConvSpec conv2d(std::array<ops_t, 6> p, ops_t count) {
    // (H_o,W_o,C_o,C_i,K_H,K_W) -> unused depth dims are 1
    return {"Conv2D", {p.begin(), p.end()}, {1, p[0], p[1], p[2], p[3], 1, p[4], p[5]}, count};
}

inline CostLineItem conv_item(const ConvSpec& s) {
    const auto& p = s.full;
    std::ostringstream f;
    f << s.kind << "(";
    for (std::size_t i = 0; i < s.display.size(); ++i) f << (i ? "," : "") << s.display[i];
    f << ")x" << s.count;
    return {s.kind, f.str(), mac_conv(p[0], p[1], p[2], p[3], p[4], p[5], p[6], p[7], s.count)};
}

inline CostLineItem fc_item(ops_t n_in, ops_t n_out, ops_t count = 1) {
    std::ostringstream f;
    f << "FC(" << n_in << "," << n_out << ")x" << count;
    return {"FC", f.str(), count * mac_fc(n_in, n_out)};
}

}  // namespace detail

/// The three reference CNN architectures, layer by layer.
inline std::vector<ModelCost> dnn_model_costs() {
    using detail::conv_item;
    using detail::fc_item;
    std::vector<ModelCost> models;

    ModelCost early{"Early Fusion", {}};
    early.items.push_back(conv_item(detail::conv3d({2, 5, 35, 64, 1, 5, 5, 5}, 1)));
    early.items.push_back(conv_item(detail::conv3d({2, 5, 35, 64, 64, 5, 5, 5}, 8)));
    early.items.push_back(fc_item(64, 21));
    models.push_back(std::move(early));

    ModelCost late{"Late Fusion", {}};
    late.items.push_back(conv_item(detail::conv2d({2, 2, 64, 35, 5, 5}, 2)));
    late.items.push_back(conv_item(detail::conv2d({2, 1, 64, 35, 5, 5}, 1)));
    late.items.push_back(conv_item(detail::conv2d({2, 2, 64, 64, 5, 5}, 2)));
    late.items.push_back(conv_item(detail::conv2d({2, 1, 64, 64, 5, 5}, 1)));
    late.items.push_back(conv_item(detail::conv2d({1, 1, 64, 64, 5, 5}, 3)));
    late.items.push_back(fc_item(192, 64));
    late.items.push_back(fc_item(64, 21));
    models.push_back(std::move(late));

    ModelCost euigr{"EUIGR", {}};
    euigr.items.push_back(conv_item(detail::conv2d({2, 2, 64, 35, 5, 5}, 4)));
    euigr.items.push_back(conv_item(detail::conv2d({2, 1, 64, 35, 5, 5}, 2)));
    euigr.items.push_back(conv_item(detail::conv2d({2, 2, 64, 64, 5, 5}, 4)));
    euigr.items.push_back(conv_item(detail::conv2d({2, 1, 64, 64, 5, 5}, 2)));
    euigr.items.push_back(conv_item(detail::conv2d({1, 1, 64, 64, 5, 5}, 6)));
    euigr.items.push_back(fc_item(192, 64, 2));
    euigr.items.push_back(fc_item(64, 21));
    euigr.items.push_back(fc_item(64, 9));
    models.push_back(std::move(euigr));

    return models;
}

struct EinsumModelConfig {
    std::string name;
    int depth, k, leaves, reps, classes;
};

/// Deployed einsum-circuit configurations (D, K, L, R, C) per bundle.
inline std::vector<EinsumModelConfig> einsum_model_configs() {
    return {{"SPR", 6, 2, 10, 10, 21}, {"SA", 4, 2, 10, 10, 21}, {"WA", 5, 2, 10, 10, 21}};
}

inline std::vector<ModelCost> einsum_model_costs() {
    std::vector<ModelCost> models;
    for (const auto& cfg : einsum_model_configs()) {
        const EinsumCost c = mac_einsum_model(cfg.depth, cfg.k, cfg.reps, cfg.classes);
        ModelCost m{cfg.name, {}};
        std::ostringstream fe;
        fe << "(2^" << (cfg.depth + 1) << "-2)*" << cfg.reps << "*(" << cfg.k << "^3+" << cfg.k << ")";
        m.items.push_back({"einsum", fe.str(), c.einsum});
        std::ostringstream fl;
        fl << "2*2^" << cfg.depth;
        m.items.push_back({"leaf", fl.str(), c.leaf});
        std::ostringstream fm;
        fm << cfg.reps << "x" << cfg.classes;
        m.items.push_back({"mix", fm.str(), c.mix});
        models.push_back(std::move(m));
    }
    return models;
}

inline std::vector<ModelCost> mlp_model_costs() {
    const std::vector<std::pair<std::string, std::vector<ops_t>>> cfgs = {
        {"SPR", {116, 128, 21}}, {"SA", {29, 32, 21}}, {"WA", {38, 128, 21}}};
    std::vector<ModelCost> models;
    for (const auto& [name, widths] : cfgs) {
        ModelCost m{name, {}};
        for (std::size_t i = 0; i + 1 < widths.size(); ++i)
            m.items.push_back(detail::fc_item(widths[i], widths[i + 1]));
        models.push_back(std::move(m));
    }
    return models;
}

inline ModelCost random_forest_cost_table(int n_estimators = 100, int max_depth = 10,
                                          int classes = 21) {
    const RandomForestCost c = mac_random_forest(n_estimators, max_depth, classes);
    ModelCost m{"Random Forest", {}};
    std::ostringstream ft;
    ft << "2x" << n_estimators << "x" << max_depth;
    m.items.push_back({"Node traversal", ft.str(), c.traversal});
    std::ostringstream fl;
    fl << n_estimators << "x(2*" << classes << "-1)";
    m.items.push_back({"Leaf normalization", fl.str(), c.leaf_normalization});
    std::ostringstream fa;
    fa << n_estimators << "x" << classes << "+" << classes;
    m.items.push_back({"Aggregation & averaging", fa.str(), c.aggregation});
    std::ostringstream fx;
    fx << classes << "-1";
    m.items.push_back({"Argmax", fx.str(), c.argmax});
    return m;
}

struct FeatureOpsRow {
    std::string name;
    int features;
    int correlations;
    ops_t ops;
};

inline std::vector<FeatureOpsRow> feature_ops_table() {
    return {{"SPR", 116, 4, feature_extraction_ops(FeatureKind::SPR)},
            {"SA", 29, 1, feature_extraction_ops(FeatureKind::SA)},
            {"WA", 38, 0, feature_extraction_ops(FeatureKind::WA)}};
}

struct EfficiencyRow {
    std::string name;
    double accuracy_percent;
    ops_t macs;
    double score;
};

/// Full cost report: every architecture, feature-extraction budget, and the
/// efficiency comparison of the two best merged models.
struct CostReport {
    std::vector<ModelCost> dnn;
    std::vector<ModelCost> einsum;
    std::vector<ModelCost> mlp;
    ModelCost random_forest;
    ops_t random_forest_merged = 0;
    std::vector<FeatureOpsRow> feature_ops;
    std::vector<EfficiencyRow> efficiency;

    ops_t einsum_merged_total() const {
        ops_t t = 0;
        for (const auto& m : einsum) t += m.total();
        return t;
    }
    ops_t mlp_merged_total() const {
        ops_t t = 0;
        for (const auto& m : mlp) t += m.total();
        return t;
    }
    ops_t feature_ops_total() const {
        ops_t t = 0;
        for (const auto& r : feature_ops) t += r.ops;
        return t;
    }
};

/// Reference accuracies (percent) reported for the merged classifiers on the
/// original 21-gesture recordings; used only for the efficiency comparison.
inline constexpr double kReferenceAccuracyMergedEinsum = 97.96;
inline constexpr double kReferenceAccuracyMergedForest = 98.34;

inline CostReport build_cost_report() {
    CostReport r;
    r.dnn = dnn_model_costs();
    r.einsum = einsum_model_costs();
    r.mlp = mlp_model_costs();
    r.random_forest = random_forest_cost_table();
    r.random_forest_merged = 3 * r.random_forest.total();
    r.feature_ops = feature_ops_table();
    r.efficiency.push_back({"Merged Einsum Networks", kReferenceAccuracyMergedEinsum,
                            r.einsum_merged_total(),
                            efficiency_score(kReferenceAccuracyMergedEinsum, r.einsum_merged_total())});
    r.efficiency.push_back({"Merged Random Forests", kReferenceAccuracyMergedForest,
                            r.random_forest_merged,
                            efficiency_score(kReferenceAccuracyMergedForest, r.random_forest_merged)});
    return r;
}

// ---------------------------------------------------------------------------
// Reference check: asserts every computed table value against the published
// reference figures for these architectures. Returns human-readable failure
// descriptions; empty means everything matched.

inline std::vector<std::string> cost_reference_check() {
    std::vector<std::string> failures;
    const CostReport r = build_cost_report();

    auto expect_eq = [&](const std::string& what, ops_t got, ops_t want) {
        if (got != want) {
            std::ostringstream os;
            os << what << ": got " << got << ", expected " << want;
            failures.push_back(os.str());
        }
    };
    auto expect_rel = [&](const std::string& what, double got, double want, double tol) {
        if (std::abs(got - want) > tol * std::abs(want)) {
            std::ostringstream os;
            os << what << ": got " << got << ", expected " << want << " (rel tol " << tol << ")";
            failures.push_back(os.str());
        }
    };

    // Einsum circuit models: exact integer totals and components.
    const std::vector<std::array<ops_t, 4>> einsum_want = {
        {12600, 128, 210, 12938}, {3000, 32, 210, 3242}, {6200, 64, 210, 6474}};
    for (std::size_t i = 0; i < r.einsum.size(); ++i) {
        const auto& m = r.einsum[i];
        expect_eq(m.name + " einsum", m.items[0].ops, einsum_want[i][0]);
        expect_eq(m.name + " leaf", m.items[1].ops, einsum_want[i][1]);
        expect_eq(m.name + " mix", m.items[2].ops, einsum_want[i][2]);
        expect_eq(m.name + " total", m.total(), einsum_want[i][3]);
    }
    expect_eq("einsum merged total", r.einsum_merged_total(), 22654);

    // Random forest.
    expect_eq("forest traversal", r.random_forest.items[0].ops, 2000);
    expect_eq("forest leaf normalization", r.random_forest.items[1].ops, 4100);
    expect_eq("forest aggregation", r.random_forest.items[2].ops, 2121);
    expect_eq("forest argmax", r.random_forest.items[3].ops, 20);
    expect_eq("forest per-model total", r.random_forest.total(), 8241);
    expect_eq("forest merged total", r.random_forest_merged, 24723);

    // MLPs.
    const std::vector<ops_t> mlp_want = {17536, 1600, 7552};
    for (std::size_t i = 0; i < r.mlp.size(); ++i)
        expect_eq("MLP " + r.mlp[i].name, r.mlp[i].total(), mlp_want[i]);
    expect_eq("MLP merged total", r.mlp_merged_total(), 26688);

    // Feature extraction.
    const std::vector<ops_t> feat_want = {4060, 1015, 280};
    for (std::size_t i = 0; i < r.feature_ops.size(); ++i)
        expect_eq("feature ops " + r.feature_ops[i].name, r.feature_ops[i].ops, feat_want[i]);
    expect_eq("feature ops total", r.feature_ops_total(), 5355);

    // CNN totals are published at two significant figures; 3% covers rounding.
    expect_rel("Early Fusion total", static_cast<double>(r.dnn[0].total()), 1.4e9, 0.03);
    expect_rel("Late Fusion total", static_cast<double>(r.dnn[1].total()), 1.9e6, 0.03);
    expect_rel("EUIGR total", static_cast<double>(r.dnn[2].total()), 3.8e6, 0.03);

    // Efficiency scores within +/- 0.05 absolute.
    auto expect_abs = [&](const std::string& what, double got, double want, double tol) {
        if (std::abs(got - want) > tol) {
            std::ostringstream os;
            os << what << ": got " << got << ", expected " << want << " +/- " << tol;
            failures.push_back(os.str());
        }
    };
    expect_abs("efficiency merged einsum", r.efficiency[0].score, 22.5, 0.05);
    expect_abs("efficiency merged forest", r.efficiency[1].score, 22.4, 0.05);

    return failures;
}

// ---------------------------------------------------------------------------
// Rendering

inline std::string render_model_cost_text(const ModelCost& m) {
    std::ostringstream os;
    os << m.name << "\n";
    for (const auto& it : m.items)
        os << "  " << std::left << std::setw(26) << it.component << std::setw(34) << it.formula
           << std::right << std::setw(14) << it.ops << "\n";
    os << "  " << std::left << std::setw(60) << "total" << std::right << std::setw(14) << m.total()
       << "\n";
    return os.str();
}

inline std::string render_cost_report_text(const CostReport& r) {
    std::ostringstream os;
    os << "== CNN architectures (MACs) ==\n";
    for (const auto& m : r.dnn) os << render_model_cost_text(m);
    os << "\n== Einsum circuit models (MACs) ==\n";
    for (const auto& m : r.einsum) os << render_model_cost_text(m);
    os << "  merged total: " << r.einsum_merged_total() << "\n";
    os << "\n== Random forest (MAC-equivalent ops) ==\n"
       << render_model_cost_text(r.random_forest) << "  all 3 models: " << r.random_forest_merged
       << "\n";
    os << "\n== MLP models (MACs) ==\n";
    for (const auto& m : r.mlp) os << render_model_cost_text(m);
    os << "  merged total: " << r.mlp_merged_total() << "\n";
    os << "\n== Feature extraction (ops) ==\n";
    for (const auto& row : r.feature_ops)
        os << "  " << std::left << std::setw(6) << row.name << " features=" << std::setw(4)
           << row.features << " correlations=" << std::setw(2) << row.correlations
           << " ops=" << row.ops << "\n";
    os << "  total: " << r.feature_ops_total() << "\n";
    os << "\n== Efficiency (accuracy / log10 MACs) ==\n";
    for (const auto& e : r.efficiency)
        os << "  " << std::left << std::setw(26) << e.name << " acc=" << e.accuracy_percent
           << "% macs=" << e.macs << " score=" << std::fixed << std::setprecision(3) << e.score
           << "\n" << std::defaultfloat;
    return os.str();
}

/// Delimited form: one row per line item, `table,model,component,formula,ops`.
inline std::string render_cost_report_csv(const CostReport& r) {
    std::ostringstream os;
    os << "table,model,component,formula,ops\n";
    auto emit = [&](const std::string& table, const ModelCost& m) {
        for (const auto& it : m.items) {
            std::string formula = it.formula;
            for (auto& ch : formula)
                if (ch == ',') ch = ';';
            os << table << "," << m.name << "," << it.component << "," << formula << "," << it.ops
               << "\n";
        }
        os << table << "," << m.name << ",total,," << m.total() << "\n";
    };
    for (const auto& m : r.dnn) emit("cnn", m);
    for (const auto& m : r.einsum) emit("einsum", m);
    os << "einsum,merged,total,," << r.einsum_merged_total() << "\n";
    emit("forest", r.random_forest);
    os << "forest,merged,total,," << r.random_forest_merged << "\n";
    for (const auto& m : r.mlp) emit("mlp", m);
    os << "mlp,merged,total,," << r.mlp_merged_total() << "\n";
    for (const auto& row : r.feature_ops)
        os << "features," << row.name << ",ops,," << row.ops << "\n";
    os << "features,total,ops,," << r.feature_ops_total() << "\n";
    for (const auto& e : r.efficiency)
        os << "efficiency," << e.name << ",score,," << std::fixed << std::setprecision(4) << e.score
           << "\n" << std::defaultfloat;
    return os.str();
}

}  // namespace einsense
