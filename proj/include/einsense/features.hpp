// SPDX-License-Identifier: Apache-2.0
//
// einsense: SPR / SA / WA feature bundles computed from SignalFrames.

#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <string>
#include <vector>

#include "einsense/common.hpp"
#include "einsense/preprocess.hpp"

namespace einsense {

inline constexpr int kStatFeatureCount = 14;
inline constexpr int kDwtApproxLength = 19;  // single-level db2 over 35 samples
inline constexpr int kHistogramBins = 10;

inline constexpr int kSprDim = 116;
inline constexpr int kSaDim = 29;
inline constexpr int kWaDim = 38;

inline int feature_dim(FeatureKind kind) {
    switch (kind) {
        case FeatureKind::SPR: return kSprDim;
        case FeatureKind::SA: return kSaDim;
        case FeatureKind::WA: return kWaDim;
    }
    return 0;
}

inline const std::array<std::string, kStatFeatureCount>& stat_feature_names() {
    static const std::array<std::string, kStatFeatureCount> names = {
        "mode",  "median", "q1",  "q3",  "mean",    "max",      "min",
        "range", "var",    "std", "m3",  "kurtosis", "skewness", "entropy"};
    return names;
}

namespace detail {

// Type-7 quantile: linear interpolation between order statistics.
inline double quantile_sorted(const std::vector<double>& sorted, double p) {
    const double h = p * static_cast<double>(sorted.size() - 1);
    const std::size_t lo = static_cast<std::size_t>(std::floor(h));
    if (lo + 1 >= sorted.size()) return sorted.back();
    const double frac = h - static_cast<double>(lo);
    return sorted[lo] + frac * (sorted[lo + 1] - sorted[lo]);
}

// Equal-width histogram over [min, max]; the max value lands in the last bin.
inline std::array<int, kHistogramBins> histogram10(const std::vector<double>& x, double mn,
                                                   double mx) {
    std::array<int, kHistogramBins> counts{};
    const double width = (mx - mn) / kHistogramBins;
    for (double v : x) {
        int b = static_cast<int>((v - mn) / width);
        b = std::clamp(b, 0, kHistogramBins - 1);
        ++counts[b];
    }
    return counts;
}

}  // namespace detail

/// The 14 per-channel statistics, in fixed order: mode, median, Q1, Q3, mean,
/// max, min, range, variance, std, third central moment, excess kurtosis,
/// skewness, entropy.
///
/// Conventions for real-valued data: mode and entropy use a 10-bin
/// equal-width histogram over [min, max] (mode returns the center of the
/// first maximal bin; entropy is Shannon entropy in nats). Moments are
/// population moments; skewness and kurtosis are 0 when std is 0.
inline std::array<double, kStatFeatureCount> stat_features(const std::vector<double>& x) {
    require(!x.empty(), "stat_features: empty input");
    const double n = static_cast<double>(x.size());

    std::vector<double> sorted(x);
    std::sort(sorted.begin(), sorted.end());
    const double mn = sorted.front(), mx = sorted.back();

    const double mean = mean_of(x);
    double m2 = 0.0, m3 = 0.0, m4 = 0.0;
    for (double v : x) {
        const double d = v - mean;
        m2 += d * d;
        m3 += d * d * d;
        m4 += d * d * d * d;
    }
    m2 /= n;
    m3 /= n;
    m4 /= n;
    const double stddev = std::sqrt(m2);

    double mode, entropy;
    if (mx == mn) {
        mode = mn;
        entropy = 0.0;
    } else {
        const auto counts = detail::histogram10(x, mn, mx);
        int best = 0;
        for (int b = 1; b < kHistogramBins; ++b)
            if (counts[b] > counts[best]) best = b;
        const double width = (mx - mn) / kHistogramBins;
        mode = mn + (best + 0.5) * width;
        entropy = 0.0;
        for (int b = 0; b < kHistogramBins; ++b) {
            if (counts[b] == 0) continue;
            const double p = counts[b] / n;
            entropy -= p * std::log(p);
        }
    }

    const double skew = (stddev > 0.0) ? m3 / (m2 * stddev) : 0.0;
    const double kurt = (stddev > 0.0) ? m4 / (m2 * m2) - 3.0 : 0.0;

    return {mode,
            detail::quantile_sorted(sorted, 0.5),
            detail::quantile_sorted(sorted, 0.25),
            detail::quantile_sorted(sorted, 0.75),
            mean,
            mx,
            mn,
            mx - mn,
            m2,
            stddev,
            m3,
            kurt,
            skew,
            entropy};
}

/// Sample Pearson correlation coefficient. Constant inputs yield 0 with a
/// warning rather than NaN.
inline double pearson(const std::vector<double>& x, const std::vector<double>& y) {
    require(x.size() == y.size() && x.size() >= 2, "pearson: need equal-length inputs, n >= 2");
    const double mx = mean_of(x), my = mean_of(y);
    double sxy = 0.0, sxx = 0.0, syy = 0.0;
    for (std::size_t i = 0; i < x.size(); ++i) {
        sxy += (x[i] - mx) * (y[i] - my);
        sxx += (x[i] - mx) * (x[i] - mx);
        syy += (y[i] - my) * (y[i] - my);
    }
    if (sxx == 0.0 || syy == 0.0) {
        warn("pearson: constant input, correlation defined as 0");
        return 0.0;
    }
    return sxy / std::sqrt(sxx * syy);
}

/// db2 scaling (low-pass analysis) filter, length 4.
inline const std::array<double, 4>& db2_scaling_filter() {
    static const std::array<double, 4> h = [] {
        const double s3 = std::sqrt(3.0), norm = 4.0 * std::sqrt(2.0);
        return std::array<double, 4>{(1.0 + s3) / norm, (3.0 + s3) / norm, (3.0 - s3) / norm,
                                     (1.0 - s3) / norm};
    }();
    return h;
}

/// Single-level discrete wavelet transform approximation coefficients with
/// the db2 filter and half-sample symmetric extension. For an input of
/// length n the output has floor((n + 3) / 2) coefficients; 19 for n = 35.
inline std::vector<double> dwt_db2_approx(const std::vector<double>& x) {
    require(x.size() >= 4, "dwt_db2_approx: input shorter than the filter");
    const auto& h = db2_scaling_filter();
    const std::size_t n = x.size();
    const std::size_t ext_len = n + 6;
    std::vector<double> ext(ext_len);
    for (std::size_t i = 0; i < 3; ++i) ext[i] = x[2 - i];            // x2 x1 x0
    for (std::size_t i = 0; i < n; ++i) ext[3 + i] = x[i];
    for (std::size_t i = 0; i < 3; ++i) ext[3 + n + i] = x[n - 1 - i];  // x_{n-1} x_{n-2} x_{n-3}

    const std::size_t out_len = (n + 3) / 2;
    std::vector<double> a(out_len);
    for (std::size_t k = 0; k < out_len; ++k) {
        double s = 0.0;
        for (std::size_t j = 0; j < 4; ++j) s += h[j] * ext[2 * k + j];
        a[k] = s;
    }
    return a;
}

/// A named feature bundle of fixed cardinality (SPR 116, SA 29, WA 38).
struct FeatureVector {
    FeatureKind kind = FeatureKind::SPR;
    std::vector<double> values;
    std::vector<std::string> names;
    int label = 0;  // 1..C during training, 0 otherwise

    void validate() const {
        if (static_cast<int>(values.size()) != feature_dim(kind) || names.size() != values.size())
            throw InvariantError("FeatureVector: wrong cardinality for kind");
        if (!all_finite(values)) throw InvariantError("FeatureVector: non-finite value");
    }
};

namespace detail {

inline void push_stats(FeatureVector& fv, const std::string& channel,
                       const std::vector<double>& x) {
    const auto stats = stat_features(x);
    const auto& names = stat_feature_names();
    for (int i = 0; i < kStatFeatureCount; ++i) {
        fv.values.push_back(stats[i]);
        fv.names.push_back(channel + "." + names[i]);
    }
}

}  // namespace detail

/// Assembles one bundle from a frame.
///
/// SPR: 14 statistics for each of the 8 RSS/phase channels, then the 4
///      correlations pairing each RSS channel with its same tag/antenna
///      phase channel (116 values).
/// SA:  14 statistics per AoA channel plus corr(AoA1, AoA2) (29 values).
/// WA:  19 db2 approximation coefficients per AoA channel (38 values).
inline FeatureVector build_bundle(const SignalFrame& frame, FeatureKind kind) {
    static const char* kPairs[4][2] = {{"rss.t1.a1", "phase.t1.a1"},
                                       {"rss.t1.a2", "phase.t1.a2"},
                                       {"rss.t2.a1", "phase.t2.a1"},
                                       {"rss.t2.a2", "phase.t2.a2"}};
    FeatureVector fv;
    fv.kind = kind;
    fv.label = frame.label;

    switch (kind) {
        case FeatureKind::SPR: {
            for (const auto& pair : kPairs)
                if (!frame.has_channel(pair[0]) || !frame.has_channel(pair[1]))
                    throw DataError("build_bundle: frame lacks RSS/phase channels for SPR");
            for (const auto& pair : kPairs) detail::push_stats(fv, pair[0], frame.channel(pair[0]));
            for (const auto& pair : kPairs) detail::push_stats(fv, pair[1], frame.channel(pair[1]));
            for (const auto& pair : kPairs) {
                fv.values.push_back(pearson(frame.channel(pair[0]), frame.channel(pair[1])));
                fv.names.push_back(std::string("corr.") + pair[0] + "." + pair[1]);
            }
            break;
        }
        case FeatureKind::SA: {
            if (!frame.has_channel("aoa.t1") || !frame.has_channel("aoa.t2"))
                throw DataError("build_bundle: frame lacks AoA channels for SA");
            detail::push_stats(fv, "aoa.t1", frame.channel("aoa.t1"));
            detail::push_stats(fv, "aoa.t2", frame.channel("aoa.t2"));
            fv.values.push_back(pearson(frame.channel("aoa.t1"), frame.channel("aoa.t2")));
            fv.names.push_back("corr.aoa.t1.aoa.t2");
            break;
        }
        case FeatureKind::WA: {
            if (!frame.has_channel("aoa.t1") || !frame.has_channel("aoa.t2"))
                throw DataError("build_bundle: frame lacks AoA channels for WA");
            for (const char* ch : {"aoa.t1", "aoa.t2"}) {
                const auto coeffs = dwt_db2_approx(frame.channel(ch));
                for (std::size_t i = 0; i < coeffs.size(); ++i) {
                    fv.values.push_back(coeffs[i]);
                    fv.names.push_back(std::string(ch) + ".db2a" + std::to_string(i));
                }
            }
            break;
        }
    }

    fv.validate();
    return fv;
}

}  // namespace einsense
