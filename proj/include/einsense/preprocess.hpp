// SPDX-License-Identifier: Apache-2.0
//
// einsense: raw RSS/phase/AoA streams -> fixed-length denoised SignalFrames.
//
// Channel pipelines (fixed order):
//   RSS   : min-max normalize (valid reads) -> gap fill -> resample to 35
//   phase : unwrap (valid reads) -> gap fill -> Savitzky-Golay -> Gaussian
//           -> resample to 35
//   AoA   : smoothed upstream -> resample to 35

#pragma once

#include <array>
#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

#include "einsense/common.hpp"

namespace einsense {

inline constexpr int kFrameLength = 35;

/// Min-max normalization onto [0, 1]. Throws DataError for constant input;
/// the frame builder substitutes 0.5 and flags the frame.
inline std::vector<double> minmax_normalize(const std::vector<double>& x) {
    require(x.size() >= 2, "minmax_normalize: need at least 2 samples");
    const auto [mn_it, mx_it] = std::minmax_element(x.begin(), x.end());
    const double mn = *mn_it, mx = *mx_it;
    if (mx == mn) throw DataError("minmax_normalize: constant signal");
    std::vector<double> out(x.size());
    for (std::size_t i = 0; i < x.size(); ++i) out[i] = (x[i] - mn) / (mx - mn);
    return out;
}

/// Brings successive differences into (-pi, pi] by adding multiples of 2*pi.
/// The first sample is unchanged.
inline std::vector<double> unwrap_phase(const std::vector<double>& x) {
    std::vector<double> out(x.size());
    if (x.empty()) return out;
    out[0] = x[0];
    double offset = 0.0;
    for (std::size_t i = 1; i < x.size(); ++i) {
        double d = x[i] - x[i - 1];
        while (d <= -kPi) {
            d += 2 * kPi;
            offset += 2 * kPi;
        }
        while (d > kPi) {
            d -= 2 * kPi;
            offset -= 2 * kPi;
        }
        out[i] = x[i] + offset;
    }
    return out;
}

/// Wraps a radian value into (-pi, pi].
inline double wrap_phase(double x) {
    double w = std::remainder(x, 2 * kPi);  // (-pi, pi], except -pi possible
    if (w <= -kPi) w += 2 * kPi;
    return w;
}

namespace detail {

// Gaussian elimination with partial pivoting; A is n x n row-major. Small
// systems only (polynomial fits, n <= 8).
inline std::vector<double> solve_dense(std::vector<double> a, std::vector<double> b, int n) {
    for (int col = 0; col < n; ++col) {
        int piv = col;
        for (int r = col + 1; r < n; ++r)
            if (std::abs(a[r * n + col]) > std::abs(a[piv * n + col])) piv = r;
        if (std::abs(a[piv * n + col]) < 1e-300) throw DataError("solve_dense: singular system");
        if (piv != col) {
            for (int c = 0; c < n; ++c) std::swap(a[col * n + c], a[piv * n + c]);
            std::swap(b[col], b[piv]);
        }
        for (int r = col + 1; r < n; ++r) {
            const double f = a[r * n + col] / a[col * n + col];
            for (int c = col; c < n; ++c) a[r * n + c] -= f * a[col * n + c];
            b[r] -= f * b[col];
        }
    }
    std::vector<double> x(n);
    for (int r = n - 1; r >= 0; --r) {
        double s = b[r];
        for (int c = r + 1; c < n; ++c) s -= a[r * n + c] * x[c];
        x[r] = s / a[r * n + r];
    }
    return x;
}

// Least-squares polynomial fit of degree `order` to points (t[i], y[i]);
// returns the coefficient vector (constant term first).
inline std::vector<double> polyfit(const std::vector<double>& t, const std::vector<double>& y,
                                   int order) {
    const int n = order + 1;
    std::vector<double> ata(n * n, 0.0), aty(n, 0.0);
    std::vector<double> pows(2 * order + 1);
    for (std::size_t i = 0; i < t.size(); ++i) {
        pows[0] = 1.0;
        for (int p = 1; p <= 2 * order; ++p) pows[p] = pows[p - 1] * t[i];
        for (int r = 0; r < n; ++r) {
            for (int c = 0; c < n; ++c) ata[r * n + c] += pows[r + c];
            aty[r] += pows[r] * y[i];
        }
    }
    return solve_dense(std::move(ata), std::move(aty), n);
}

inline double polyval(const std::vector<double>& coef, double t) {
    double v = 0.0;
    for (std::size_t p = coef.size(); p-- > 0;) v = v * t + coef[p];
    return v;
}

// Half-sample symmetric index reflection: ...x1,x0 | x0,x1,... Applied
// repeatedly so kernels wider than the signal still resolve.
inline std::size_t reflect_index(long long idx, std::size_t n) {
    const long long nn = static_cast<long long>(n);
    long long i = idx;
    while (i < 0 || i >= nn) {
        if (i < 0) i = -i - 1;
        if (i >= nn) i = 2 * nn - i - 1;
    }
    return static_cast<std::size_t>(i);
}

}  // namespace detail

/// Savitzky-Golay smoothing: local least-squares polynomial of degree
/// `polyorder` over an odd-length window. Interior samples use the standard
/// center-evaluated convolution; the half-window at each edge is evaluated
/// from a polynomial fitted to the outermost full window, which keeps the
/// filter exact on polynomials up to `polyorder` everywhere.
inline std::vector<double> savgol_filter(const std::vector<double>& x, int window, int polyorder) {
    require(window > 0 && window % 2 == 1, "savgol_filter: window must be odd and positive");
    require(polyorder >= 0 && polyorder < window, "savgol_filter: need polyorder < window");
    require(static_cast<std::size_t>(window) <= x.size(),
            "savgol_filter: window exceeds signal length");
    const int n = static_cast<int>(x.size());
    const int half = window / 2;

    // Center smoothing weights: first row of (A^T A)^-1 A^T over offsets
    // -half..half. Solved column by column.
    std::vector<double> weights(window);
    {
        const int m = polyorder + 1;
        std::vector<double> ata(m * m, 0.0);
        for (int o = -half; o <= half; ++o) {
            std::vector<double> pows(2 * polyorder + 1);
            pows[0] = 1.0;
            for (int p = 1; p <= 2 * polyorder; ++p) pows[p] = pows[p - 1] * o;
            for (int r = 0; r < m; ++r)
                for (int c = 0; c < m; ++c) ata[r * m + c] += pows[r + c];
        }
        // weight for sample at offset o: e0^T (A^T A)^-1 a(o)
        std::vector<double> e0(m, 0.0);
        e0[0] = 1.0;
        const std::vector<double> g = detail::solve_dense(ata, e0, m);
        for (int o = -half; o <= half; ++o) {
            double w = 0.0, po = 1.0;
            for (int r = 0; r < m; ++r) {
                w += g[r] * po;
                po *= o;
            }
            weights[o + half] = w;
        }
    }

    std::vector<double> out(n);
    for (int i = half; i < n - half; ++i) {
        double s = 0.0;
        for (int o = -half; o <= half; ++o) s += weights[o + half] * x[i + o];
        out[i] = s;
    }

    // Edge fit. Head: polynomial through x[0..window-1] evaluated at 0..half-1.
    std::vector<double> t(window), yh(window), yt(window);
    for (int j = 0; j < window; ++j) {
        t[j] = j;
        yh[j] = x[j];
        yt[j] = x[n - window + j];
    }
    const auto head = detail::polyfit(t, yh, polyorder);
    const auto tail = detail::polyfit(t, yt, polyorder);
    for (int i = 0; i < half; ++i) {
        out[i] = detail::polyval(head, i);
        out[n - 1 - i] = detail::polyval(tail, window - 1 - i);
    }
    return out;
}

/// Discrete Gaussian smoothing. Kernel truncated at 4*sigma and renormalized
/// to unit sum; edges use half-sample symmetric reflection, which preserves
/// the signal mean exactly.
inline std::vector<double> gaussian_filter(const std::vector<double>& x, double sigma) {
    require(sigma > 0.0, "gaussian_filter: sigma must be positive");
    const int radius = static_cast<int>(std::ceil(4.0 * sigma));
    std::vector<double> kernel(2 * radius + 1);
    double sum = 0.0;
    for (int k = -radius; k <= radius; ++k) {
        kernel[k + radius] = std::exp(-0.5 * (k * k) / (sigma * sigma));
        sum += kernel[k + radius];
    }
    for (double& w : kernel) w /= sum;

    const std::size_t n = x.size();
    std::vector<double> out(n);
    for (std::size_t i = 0; i < n; ++i) {
        double s = 0.0;
        for (int k = -radius; k <= radius; ++k)
            s += kernel[k + radius] * x[detail::reflect_index(static_cast<long long>(i) + k, n)];
        out[i] = s;
    }
    return out;
}

/// A uniformly sampled series where some entries may be missing.
struct SampledSeries {
    std::vector<double> values;
    std::vector<std::uint8_t> valid;  // empty means all valid

    bool is_valid(std::size_t i) const { return valid.empty() || valid[i] != 0; }
    std::size_t valid_count() const {
        if (valid.empty()) return values.size();
        std::size_t c = 0;
        for (auto v : valid) c += (v != 0);
        return c;
    }
};

/// Linear interpolation of the valid samples onto `out_len` uniformly spaced
/// points spanning the original index range. Positions outside the valid
/// span clamp to the first/last valid value.
inline std::vector<double> resample_uniform(const SampledSeries& s, int out_len) {
    require(out_len >= 2, "resample_uniform: need out_len >= 2");
    require(s.valid_count() >= 2, "resample_uniform: need at least 2 valid samples");
    const std::size_t n = s.values.size();

    std::vector<double> pos, val;
    pos.reserve(n);
    val.reserve(n);
    for (std::size_t i = 0; i < n; ++i) {
        if (s.is_valid(i)) {
            pos.push_back(static_cast<double>(i));
            val.push_back(s.values[i]);
        }
    }

    std::vector<double> out(out_len);
    const double span = static_cast<double>(n - 1);
    std::size_t seg = 0;
    for (int i = 0; i < out_len; ++i) {
        const double u = span * static_cast<double>(i) / static_cast<double>(out_len - 1);
        if (u <= pos.front()) {
            out[i] = val.front();
            continue;
        }
        if (u >= pos.back()) {
            out[i] = val.back();
            continue;
        }
        while (seg + 2 < pos.size() && pos[seg + 1] < u) ++seg;
        const double t = (u - pos[seg]) / (pos[seg + 1] - pos[seg]);
        if (t <= 0.0) out[i] = val[seg];
        else if (t >= 1.0) out[i] = val[seg + 1];
        else out[i] = val[seg] + t * (val[seg + 1] - val[seg]);
    }
    return out;
}

/// resample_uniform fixed at the frame length of 35.
inline std::vector<double> resample_35(const SampledSeries& s) {
    return resample_uniform(s, kFrameLength);
}

inline std::vector<double> resample_35(const std::vector<double>& x) {
    return resample_35(SampledSeries{x, {}});
}

/// One gesture sample after preprocessing: every channel exactly 35 samples,
/// gap free, RSS channels inside [0, 1].
struct SignalFrame {
    std::vector<std::string> channel_names;
    std::vector<std::vector<double>> channels;
    int label = 0;           // gesture class, 1-based; 0 = unlabeled
    bool degenerate = false; // some channel was constant before normalization

    const std::vector<double>& channel(const std::string& name) const {
        for (std::size_t i = 0; i < channel_names.size(); ++i)
            if (channel_names[i] == name) return channels[i];
        throw DataError("SignalFrame: no channel named " + name);
    }
    bool has_channel(const std::string& name) const {
        for (const auto& n : channel_names)
            if (n == name) return true;
        return false;
    }
};

struct FrameConfig {
    int savgol_window = 11;
    int savgol_polyorder = 3;
    double gaussian_sigma = 2.0;
};

namespace detail {

// Gap fill by linear interpolation over the uniform index grid (clamped at
// the ends); input must have >= 2 valid samples.
inline std::vector<double> fill_gaps(const SampledSeries& s) {
    return resample_uniform(s, static_cast<int>(s.values.size()));
}

}  // namespace detail

/// Applies the fixed per-channel pipelines and assembles a frame.
/// rss/phase: 4 channels each (tag-major, antenna-minor); aoa: 2 channels.
inline SignalFrame build_frame(const std::array<SampledSeries, 4>& rss,
                               const std::array<SampledSeries, 4>& phase,
                               const std::array<SampledSeries, 2>& aoa, int label,
                               const FrameConfig& cfg = {}) {
    static const char* kRssNames[4] = {"rss.t1.a1", "rss.t1.a2", "rss.t2.a1", "rss.t2.a2"};
    static const char* kPhaseNames[4] = {"phase.t1.a1", "phase.t1.a2", "phase.t2.a1",
                                         "phase.t2.a2"};
    static const char* kAoaNames[2] = {"aoa.t1", "aoa.t2"};

    SignalFrame frame;
    frame.label = label;

    for (int c = 0; c < 4; ++c) {
        const SampledSeries& s = rss[c];
        require(s.valid_count() >= 2, "build_frame: RSS channel too short");
        std::vector<double> valid_vals;
        valid_vals.reserve(s.values.size());
        for (std::size_t i = 0; i < s.values.size(); ++i)
            if (s.is_valid(i)) valid_vals.push_back(s.values[i]);
        SampledSeries normalized = s;
        try {
            const auto norm = minmax_normalize(valid_vals);
            std::size_t j = 0;
            for (std::size_t i = 0; i < s.values.size(); ++i)
                if (s.is_valid(i)) normalized.values[i] = norm[j++];
        } catch (const DataError&) {
            warn(std::string("constant RSS channel ") + kRssNames[c] +
                 "; substituting 0.5 and flagging frame");
            for (double& v : normalized.values) v = 0.5;
            frame.degenerate = true;
        }
        frame.channel_names.emplace_back(kRssNames[c]);
        frame.channels.push_back(resample_35(SampledSeries{detail::fill_gaps(normalized), {}}));
    }

    for (int c = 0; c < 4; ++c) {
        const SampledSeries& s = phase[c];
        require(s.valid_count() >= 2, "build_frame: phase channel too short");
        // Unwrap over the valid subsequence only, then fill gaps on the grid.
        SampledSeries unwrapped = s;
        std::vector<double> valid_vals;
        std::vector<std::size_t> valid_idx;
        for (std::size_t i = 0; i < s.values.size(); ++i)
            if (s.is_valid(i)) {
                valid_vals.push_back(s.values[i]);
                valid_idx.push_back(i);
            }
        const auto uw = unwrap_phase(valid_vals);
        for (std::size_t j = 0; j < valid_idx.size(); ++j) unwrapped.values[valid_idx[j]] = uw[j];
        auto filled = detail::fill_gaps(unwrapped);
        filled = savgol_filter(filled, cfg.savgol_window, cfg.savgol_polyorder);
        filled = gaussian_filter(filled, cfg.gaussian_sigma);
        frame.channel_names.emplace_back(kPhaseNames[c]);
        frame.channels.push_back(resample_35(filled));
    }

    for (int c = 0; c < 2; ++c) {
        require(aoa[c].valid_count() >= 2, "build_frame: AoA channel too short");
        frame.channel_names.emplace_back(kAoaNames[c]);
        frame.channels.push_back(resample_35(SampledSeries{detail::fill_gaps(aoa[c]), {}}));
    }

    for (const auto& ch : frame.channels)
        if (ch.size() != kFrameLength || !all_finite(ch))
            throw InvariantError("build_frame: produced an invalid channel");
    return frame;
}

}  // namespace einsense
