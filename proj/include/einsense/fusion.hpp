// SPDX-License-Identifier: Apache-2.0
//
// einsense: decision-level fusion of per-device class posteriors and the
// evaluation metrics / confusion matrices report.

#pragma once

#include <cmath>
#include <span>
#include <string>
#include <vector>

#include "einsense/common.hpp"

namespace einsense {

enum class FusionMode {
    Product,  // argmax of the log-posterior sum (joint likelihood)
    Average,  // argmax of the posterior mean
};

/// Combined class scores from several posteriors. Product mode works in log
/// space with zero posteriors floored at exp(-745).
inline std::vector<double> fuse_scores(std::span<const std::vector<double>> posteriors,
                                       FusionMode mode = FusionMode::Product) {
    require(!posteriors.empty(), "fuse_scores: no posteriors");
    const std::size_t n_class = posteriors.front().size();
    require(n_class >= 1, "fuse_scores: empty posterior");
    for (const auto& p : posteriors) {
        require(p.size() == n_class, "fuse_scores: dimension mismatch");
        double sum = 0.0;
        for (double v : p) sum += v;
        require(std::abs(sum - 1.0) < 1e-9, "fuse_scores: posterior does not sum to 1");
    }

    std::vector<double> scores(n_class, 0.0);
    if (mode == FusionMode::Product) {
        for (std::size_t c = 0; c < n_class; ++c)
            for (const auto& p : posteriors)
                scores[c] += (p[c] > 0.0) ? std::max(std::log(p[c]), kLogFloor) : kLogFloor;
    } else {
        for (std::size_t c = 0; c < n_class; ++c) {
            for (const auto& p : posteriors) scores[c] += p[c];
            scores[c] /= static_cast<double>(posteriors.size());
        }
    }
    return scores;
}

/// Fused prediction (1-based class); ties break toward the lower index.
inline int fuse_predict(std::span<const std::vector<double>> posteriors,
                        FusionMode mode = FusionMode::Product) {
    const auto scores = fuse_scores(posteriors, mode);
    std::size_t best = 0;
    for (std::size_t c = 1; c < scores.size(); ++c)
        if (scores[c] > scores[best]) best = c;
    return static_cast<int>(best) + 1;
}

inline int fuse_predict(const std::vector<double>& a, const std::vector<double>& b,
                        const std::vector<double>& c, FusionMode mode = FusionMode::Product) {
    const std::vector<std::vector<double>> ps = {a, b, c};
    return fuse_predict(std::span<const std::vector<double>>(ps), mode);
}

struct ConfusionMatrix {
    int classes = 0;
    std::vector<std::vector<long long>> raw;    // [true][predicted]
    std::vector<std::vector<double>> normalized;  // rows sum to 1 where support > 0

    long long total() const {
        long long t = 0;
        for (const auto& row : raw)
            for (long long v : row) t += v;
        return t;
    }
    long long trace() const {
        long long t = 0;
        for (int c = 0; c < classes; ++c) t += raw[c][c];
        return t;
    }
};

/// Confusion matrix from (true, predicted) label pairs, 1-based labels.
inline ConfusionMatrix confusion_matrix(std::span<const std::pair<int, int>> pairs, int classes) {
    require(classes >= 1, "confusion_matrix: need classes >= 1");
    ConfusionMatrix cm;
    cm.classes = classes;
    cm.raw.assign(classes, std::vector<long long>(classes, 0));
    for (const auto& [truth, pred] : pairs) {
        require(truth >= 1 && truth <= classes && pred >= 1 && pred <= classes,
                "confusion_matrix: label out of range");
        ++cm.raw[truth - 1][pred - 1];
    }
    cm.normalized.assign(classes, std::vector<double>(classes, 0.0));
    for (int t = 0; t < classes; ++t) {
        long long support = 0;
        for (long long v : cm.raw[t]) support += v;
        if (support == 0) continue;
        for (int p = 0; p < classes; ++p)
            cm.normalized[t][p] = static_cast<double>(cm.raw[t][p]) / static_cast<double>(support);
    }
    return cm;
}

/// Metrics in percent. Weighted averages are support-weighted; macro
/// averages are unweighted over classes with any support.
struct EvalReport {
    double accuracy = 0.0;
    double precision = 0.0;
    double recall = 0.0;
    double f1 = 0.0;
    double macro_precision = 0.0;
    double macro_recall = 0.0;
    double macro_f1 = 0.0;
    long long sample_count = 0;
    ConfusionMatrix confusion;
};

inline EvalReport evaluate_predictions(std::span<const std::pair<int, int>> pairs, int classes) {
    require(!pairs.empty(), "evaluate_predictions: empty test set");
    EvalReport report;
    report.confusion = confusion_matrix(pairs, classes);
    report.sample_count = static_cast<long long>(pairs.size());
    const auto& cm = report.confusion;

    const double n = static_cast<double>(pairs.size());
    report.accuracy = 100.0 * static_cast<double>(cm.trace()) / n;

    double wp = 0.0, wr = 0.0, wf = 0.0;
    double mp = 0.0, mr = 0.0, mf = 0.0;
    int supported = 0;
    for (int c = 0; c < classes; ++c) {
        long long tp = cm.raw[c][c];
        long long support = 0, predicted = 0;
        for (int j = 0; j < classes; ++j) {
            support += cm.raw[c][j];
            predicted += cm.raw[j][c];
        }
        if (support == 0) continue;
        ++supported;
        const double prec = predicted > 0 ? static_cast<double>(tp) / predicted : 0.0;
        const double rec = static_cast<double>(tp) / support;
        const double f1 = (prec + rec > 0.0) ? 2.0 * prec * rec / (prec + rec) : 0.0;
        const double w = static_cast<double>(support) / n;
        wp += w * prec;
        wr += w * rec;
        wf += w * f1;
        mp += prec;
        mr += rec;
        mf += f1;
    }
    report.precision = 100.0 * wp;
    report.recall = 100.0 * wr;
    report.f1 = 100.0 * wf;
    report.macro_precision = 100.0 * mp / supported;
    report.macro_recall = 100.0 * mr / supported;
    report.macro_f1 = 100.0 * mf / supported;
    return report;
}

}  // namespace einsense
