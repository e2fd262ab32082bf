// SPDX-License-Identifier: Apache-2.0
//
// einsense: azimuth tracks from interleaved IQ captures. Covariance over
// paired antenna reads, closed-form 2x2 eigensplit, MUSIC line search with
// parabolic refinement, and a constant-angular-velocity Kalman smoother
// (forward filter + RTS pass) that rides over misdetection gaps.

#pragma once

#include <array>
#include <cmath>
#include <complex>
#include <cstdint>
#include <string>
#include <vector>

#include "einsense/backscatter.hpp"
#include "einsense/common.hpp"

namespace einsense {

struct CovarianceEstimate {
    // Row-major 2x2 Hermitian matrix.
    std::array<std::array<cplx, 2>, 2> m{};
    int sample_count = 0;

    void validate() const {
        const cplx off = m[0][1] - std::conj(m[1][0]);
        if (std::abs(off) > 1e-12 || std::abs(m[0][0].imag()) > 1e-12 ||
            std::abs(m[1][1].imag()) > 1e-12)
            throw InvariantError("CovarianceEstimate: not Hermitian");
    }
};

struct SubspaceSplit {
    std::array<cplx, 2> signal_vector{};
    std::array<cplx, 2> noise_vector{};
    double lambda_signal = 0.0;
    double lambda_noise = 0.0;
    bool degenerate = false;  // eigenvalue gap below resolution
};

struct FieldOfView {
    double theta_min_deg = -18.0;
    double theta_max_deg = 18.0;

    void validate(const ArrayGeometry& geom) const {
        require(theta_min_deg < theta_max_deg, "FieldOfView: need theta_min < theta_max");
        const double half = geom.unambiguous_half_angle_deg();
        require(theta_min_deg >= -half && theta_max_deg <= half,
                "FieldOfView: bounds exceed the unambiguous range of the array");
    }
    double width() const { return theta_max_deg - theta_min_deg; }
};

/// Azimuth time series for one tag; invalid samples mark windows that could
/// not be estimated (misdetection gaps).
struct AoATrack {
    std::vector<double> times_s;
    std::vector<double> azimuth_deg;
    std::vector<std::uint8_t> valid;
    bool smoothed = false;

    std::size_t size() const { return times_s.size(); }
    std::size_t valid_count() const {
        std::size_t c = 0;
        for (auto v : valid) c += (v != 0);
        return c;
    }
    void validate() const {
        if (azimuth_deg.size() != times_s.size() || valid.size() != times_s.size())
            throw InvariantError("AoATrack: field lengths differ");
    }
};

/// One same-cycle pair of antenna reads for a tag, carrier phasor removed.
struct PairedRead {
    long long cycle = 0;
    double time_s = 0.0;
    cplx y1{0.0, 0.0};
    cplx y2{0.0, 0.0};
};

/// Pairs the two antenna streams of one tag cycle by cycle (the interleave
/// places them in adjacent slots, so same-cycle pairing is nearest-slot
/// pairing). Cycles with a misdetection on either antenna are skipped. The
/// known carrier phasor of each slot is divided out so downstream covariance
/// sees the plain steering geometry.
inline std::vector<PairedRead> paired_reads(const IQCapture& cap, int tag) {
    const IQStream& s1 = cap.stream(1, tag);
    const IQStream& s2 = cap.stream(2, tag);
    require(s1.reads.size() == s2.reads.size(), "paired_reads: stream length mismatch");
    const double slot_period = 1.0 / cap.config.reads_per_second;

    std::vector<PairedRead> out;
    out.reserve(s1.reads.size());
    for (std::size_t k = 0; k < s1.reads.size(); ++k) {
        const IQRead& r1 = s1.reads[k];
        const IQRead& r2 = s2.reads[k];
        if (!r1.detected || !r2.detected) continue;
        PairedRead p;
        p.cycle = static_cast<long long>(k) + 1;
        p.time_s = 0.5 * (r1.time_s + r2.time_s);
        p.y1 = r1.iq * std::conj(carrier_phasor(cap.geometry.carrier_frequency_hz, slot_period,
                                                r1.slot));
        p.y2 = r2.iq * std::conj(carrier_phasor(cap.geometry.carrier_frequency_hz, slot_period,
                                                r2.slot));
        out.push_back(p);
    }
    return out;
}

/// Sample covariance (1/N) Y Y^H over a window of paired reads.
inline CovarianceEstimate estimate_covariance(std::span<const PairedRead> window) {
    require(window.size() >= 2, "estimate_covariance: need at least 2 paired reads");
    CovarianceEstimate est;
    double r00 = 0.0, r11 = 0.0;
    cplx r01{0.0, 0.0};
    for (const auto& p : window) {
        r00 += std::norm(p.y1);
        r11 += std::norm(p.y2);
        r01 += p.y1 * std::conj(p.y2);
    }
    const double n = static_cast<double>(window.size());
    est.m[0][0] = r00 / n;
    est.m[0][1] = r01 / n;
    est.m[1][0] = std::conj(r01) / n;
    est.m[1][1] = r11 / n;
    est.sample_count = static_cast<int>(window.size());
    return est;
}

/// Closed-form eigendecomposition of the 2x2 Hermitian covariance; the larger
/// eigenpair is the signal subspace. A gap below 1e-12 (relative to the
/// dominant eigenvalue, floored at 1) flags the split as degenerate; the
/// sorted split is still returned.
inline SubspaceSplit split_subspaces(const CovarianceEstimate& cov) {
    cov.validate();
    const double a = cov.m[0][0].real();
    const double d = cov.m[1][1].real();
    const cplx b = cov.m[0][1];
    const double half_tr = 0.5 * (a + d);
    const double disc = std::sqrt(0.25 * (a - d) * (a - d) + std::norm(b));

    SubspaceSplit split;
    split.lambda_signal = half_tr + disc;
    split.lambda_noise = half_tr - disc;
    split.degenerate =
        (split.lambda_signal - split.lambda_noise) < 1e-12 * std::max(1.0, split.lambda_signal);

    if (std::abs(b) > 1e-300) {
        cplx v0 = b;
        cplx v1 = cplx(split.lambda_signal - a, 0.0);
        const double norm = std::sqrt(std::norm(v0) + std::norm(v1));
        v0 /= norm;
        v1 /= norm;
        split.signal_vector = {v0, v1};
        split.noise_vector = {-std::conj(v1), std::conj(v0)};
    } else {
        if (a >= d) {
            split.signal_vector = {cplx(1.0, 0.0), cplx(0.0, 0.0)};
            split.noise_vector = {cplx(0.0, 0.0), cplx(1.0, 0.0)};
        } else {
            split.signal_vector = {cplx(0.0, 0.0), cplx(1.0, 0.0)};
            split.noise_vector = {cplx(1.0, 0.0), cplx(0.0, 0.0)};
        }
    }
    return split;
}

struct MusicResult {
    double theta_deg = 0.0;
    std::vector<double> grid_deg;
    std::vector<double> spectrum;  // 1 / |u_n^H a(theta)|^2 at each grid point
};

/// MUSIC line search over the field of view with parabolic refinement of the
/// log-spectrum around the discrete peak. Exact grid ties keep the lower
/// angle.
inline MusicResult music_peak(const SubspaceSplit& split, const FieldOfView& fov,
                              double grid_step_deg, const ArrayGeometry& geom = {}) {
    require(grid_step_deg > 0.0, "music_peak: grid step must be positive");
    require(fov.theta_min_deg < fov.theta_max_deg, "music_peak: empty field of view");

    const int points = static_cast<int>(std::floor(fov.width() / grid_step_deg + 1e-9)) + 1;
    MusicResult res;
    res.grid_deg.resize(points);
    res.spectrum.resize(points);

    const cplx un0 = split.noise_vector[0];
    const cplx un1 = split.noise_vector[1];
    int best = 0;
    double best_power = -1.0;
    for (int j = 0; j < points; ++j) {
        const double theta = fov.theta_min_deg + j * grid_step_deg;
        const auto a = steering_vector(theta, geom.element_spacing_wavelengths);
        const cplx proj = std::conj(un0) * a[0] + std::conj(un1) * a[1];
        const double denom = std::max(std::norm(proj), 1e-300);
        res.grid_deg[j] = theta;
        res.spectrum[j] = 1.0 / denom;
        if (res.spectrum[j] > best_power) {
            best_power = res.spectrum[j];
            best = j;
        }
    }

    double theta_hat = res.grid_deg[best];
    if (best > 0 && best + 1 < points) {
        const double y0 = std::log(res.spectrum[best - 1]);
        const double y1 = std::log(res.spectrum[best]);
        const double y2 = std::log(res.spectrum[best + 1]);
        const double denom = y0 - 2.0 * y1 + y2;
        if (denom < 0.0) {
            double delta = 0.5 * (y0 - y2) / denom;
            delta = std::clamp(delta, -0.5, 0.5);
            theta_hat += delta * grid_step_deg;
        }
    }
    res.theta_deg = std::clamp(theta_hat, fov.theta_min_deg, fov.theta_max_deg);
    return res;
}

struct WindowConfig {
    int window_pairs = 64;  // paired reads per MUSIC window
    int hop_pairs = 32;     // 50% overlap
    int min_pairs = 8;      // fewer survivors than this marks the window invalid
    double grid_step_deg = 0.05;
    FieldOfView fov{};
};

/// Sliding-window MUSIC sweep producing the raw (unsmoothed) azimuth track
/// for one tag. Window positions advance over read cycles, so misdetections
/// shrink a window's sample count rather than shifting its time.
inline AoATrack music_track(const IQCapture& cap, int tag, const WindowConfig& wcfg = {},
                            std::vector<MusicResult>* spectra = nullptr) {
    wcfg.fov.validate(cap.geometry);
    const auto pairs = paired_reads(cap, tag);
    const long long cycles = static_cast<long long>(cap.stream(1, tag).reads.size());
    const double slot_period = 1.0 / cap.config.reads_per_second;

    AoATrack track;
    track.smoothed = false;
    for (long long w0 = 1; w0 + wcfg.window_pairs - 1 <= cycles; w0 += wcfg.hop_pairs) {
        const long long w1 = w0 + wcfg.window_pairs - 1;
        std::size_t lo = 0;
        while (lo < pairs.size() && pairs[lo].cycle < w0) ++lo;
        std::size_t hi = lo;
        while (hi < pairs.size() && pairs[hi].cycle <= w1) ++hi;
        const std::span<const PairedRead> window(pairs.data() + lo, hi - lo);

        // Nominal window-center time, independent of gap pattern.
        const double t_center = 4.0 * (static_cast<double>(w0) + wcfg.window_pairs / 2.0 - 1.0) *
                                slot_period;
        track.times_s.push_back(t_center);
        if (window.size() < static_cast<std::size_t>(std::max(2, wcfg.min_pairs))) {
            track.azimuth_deg.push_back(0.0);
            track.valid.push_back(0);
            if (spectra) spectra->push_back({});
            continue;
        }
        const auto cov = estimate_covariance(window);
        const auto split = split_subspaces(cov);
        auto music = music_peak(split, wcfg.fov, wcfg.grid_step_deg, cap.geometry);
        track.azimuth_deg.push_back(music.theta_deg);
        track.valid.push_back(1);
        if (spectra) spectra->push_back(std::move(music));
    }
    if (track.times_s.empty())
        throw DataError("music_track: capture shorter than one MUSIC window");
    return track;
}

namespace detail {

struct Mat2 {
    double a = 0, b = 0, c = 0, d = 0;  // [[a, b], [c, d]]

    static Mat2 identity() { return {1, 0, 0, 1}; }
    Mat2 operator*(const Mat2& o) const {
        return {a * o.a + b * o.c, a * o.b + b * o.d, c * o.a + d * o.c, c * o.b + d * o.d};
    }
    Mat2 operator+(const Mat2& o) const { return {a + o.a, b + o.b, c + o.c, d + o.d}; }
    Mat2 operator-(const Mat2& o) const { return {a - o.a, b - o.b, c - o.c, d - o.d}; }
    Mat2 transpose() const { return {a, c, b, d}; }
    Mat2 inverse() const {
        const double det = a * d - b * c;
        if (std::abs(det) < 1e-300) throw DataError("Mat2: singular matrix");
        return {d / det, -b / det, -c / det, a / det};
    }
    std::array<double, 2> mul(const std::array<double, 2>& v) const {
        return {a * v[0] + b * v[1], c * v[0] + d * v[1]};
    }
};

}  // namespace detail

/// Constant-angular-velocity Kalman smoother. The forward filter predicts
/// through invalid samples (no update); the backward RTS pass then fills
/// every sample, so the returned track is gap free.
///
/// process_noise q is the white angular-acceleration intensity (deg^2/s^3),
/// measurement_noise r the per-window MUSIC error variance (deg^2).
inline AoATrack kalman_smooth(const AoATrack& raw, double process_noise,
                              double measurement_noise) {
    raw.validate();
    require(process_noise > 0.0 && measurement_noise > 0.0,
            "kalman_smooth: noise parameters must be positive");
    if (raw.valid_count() < 2) throw DataError("kalman_smooth: need at least 2 valid samples");
    const std::size_t n = raw.size();

    // First two valid samples initialize angle and angular rate.
    std::size_t first = 0;
    while (!raw.valid[first]) ++first;
    std::size_t second = first + 1;
    while (!raw.valid[second]) ++second;

    using detail::Mat2;
    const double dt_init = raw.times_s[second] - raw.times_s[first];
    std::array<double, 2> x{raw.azimuth_deg[first],
                            (raw.azimuth_deg[second] - raw.azimuth_deg[first]) / dt_init};
    Mat2 p{4.0 * measurement_noise, 0.0, 0.0,
           8.0 * measurement_noise / (dt_init * dt_init) + process_noise};

    const std::size_t steps = n - first;
    std::vector<std::array<double, 2>> x_pred(steps), x_filt(steps);
    std::vector<Mat2> p_pred(steps), p_filt(steps), f_step(steps);

    for (std::size_t idx = 0; idx < steps; ++idx) {
        const std::size_t i = first + idx;
        if (idx == 0) {
            f_step[idx] = Mat2::identity();
            x_pred[idx] = x;
            p_pred[idx] = p;
        } else {
            const double dt = raw.times_s[i] - raw.times_s[i - 1];
            const Mat2 f{1.0, dt, 0.0, 1.0};
            const double q = process_noise;
            const Mat2 qm{q * dt * dt * dt / 3.0, q * dt * dt / 2.0, q * dt * dt / 2.0, q * dt};
            f_step[idx] = f;
            x_pred[idx] = f.mul(x);
            p_pred[idx] = f * p * f.transpose() + qm;
        }
        x = x_pred[idx];
        p = p_pred[idx];
        if (raw.valid[i]) {
            const double innovation = raw.azimuth_deg[i] - x[0];
            const double s = p.a + measurement_noise;
            const double k0 = p.a / s, k1 = p.c / s;
            x = {x[0] + k0 * innovation, x[1] + k1 * innovation};
            const Mat2 ikh{1.0 - k0, 0.0, -k1, 1.0};
            p = ikh * p;
        }
        x_filt[idx] = x;
        p_filt[idx] = p;
    }

    // RTS backward pass.
    std::vector<std::array<double, 2>> x_smooth(steps);
    x_smooth[steps - 1] = x_filt[steps - 1];
    for (std::size_t idx = steps - 1; idx-- > 0;) {
        const Mat2 c = p_filt[idx] * f_step[idx + 1].transpose() * p_pred[idx + 1].inverse();
        const auto dx = std::array<double, 2>{x_smooth[idx + 1][0] - x_pred[idx + 1][0],
                                              x_smooth[idx + 1][1] - x_pred[idx + 1][1]};
        const auto corr = c.mul(dx);
        x_smooth[idx] = {x_filt[idx][0] + corr[0], x_filt[idx][1] + corr[1]};
    }

    AoATrack out;
    out.smoothed = true;
    out.times_s = raw.times_s;
    out.azimuth_deg.resize(n);
    out.valid.assign(n, 1);
    for (std::size_t idx = 0; idx < steps; ++idx) out.azimuth_deg[first + idx] = x_smooth[idx][0];
    // Leading invalid samples (before the first valid observation) are
    // back-extrapolated with the smoothed initial state.
    for (std::size_t i = 0; i < first; ++i)
        out.azimuth_deg[i] =
            x_smooth[0][0] - x_smooth[0][1] * (raw.times_s[first] - raw.times_s[i]);
    return out;
}

struct SmootherConfig {
    double process_noise = 1.0;      // deg^2 / s^3
    double measurement_noise = 0.25; // deg^2, MUSIC error variance at operating SNR
};

/// Full per-tag AoA recovery: MUSIC sweep then Kalman smoothing.
inline AoATrack aoa_track(const IQCapture& cap, int tag, const WindowConfig& wcfg = {},
                          const SmootherConfig& scfg = {}) {
    return kalman_smooth(music_track(cap, tag, wcfg), scfg.process_noise,
                         scfg.measurement_noise);
}

}  // namespace einsense
