// SPDX-License-Identifier: Apache-2.0
//
// einsense: synthetic IQ captures for body-worn backscatter tags read by a
// two-element array with time-interleaved antenna switching.
//
// Per-read model:  y = g * sqrt(P) * a_m(theta) * s_m(k)
//                    + sum_l g_l * sqrt(P) * a_m(theta_l) * s_m(k) + noise
// with a round-trip steering phase (twice the one-way array response), the
// line-of-sight gain g following a 1/range^2 amplitude law, and reads whose
// noiseless level falls under an RSS floor dropped as misdetections.

#pragma once

#include <array>
#include <cmath>
#include <complex>
#include <cstdint>
#include <string>
#include <vector>

#include "einsense/common.hpp"
#include "einsense/preprocess.hpp"

namespace einsense {

struct ArrayGeometry {
    double element_spacing_wavelengths = 0.8;  // d / lambda
    int num_elements = 2;
    double carrier_frequency_hz = 915e6;

    void validate() const {
        require(element_spacing_wavelengths > 0.0, "ArrayGeometry: spacing must be positive");
        require(num_elements == 2, "ArrayGeometry: exactly 2 elements supported");
        require(carrier_frequency_hz > 0.0, "ArrayGeometry: carrier frequency must be positive");
    }

    /// Half-width of the unambiguous azimuth range, arcsin(1/(4 d/lambda)).
    double unambiguous_half_angle_deg() const {
        const double s = 1.0 / (4.0 * element_spacing_wavelengths);
        if (s >= 1.0) return 90.0;
        return rad2deg(std::asin(s));
    }
};

struct TrajectorySample {
    double time_s = 0.0;
    double azimuth_deg = 0.0;
    double range_m = 0.0;
};

struct TagTrajectory {
    int tag_id = 1;
    std::vector<TrajectorySample> samples;

    void validate(double fov_half_deg = 90.0) const {
        require(!samples.empty(), "TagTrajectory: empty trajectory");
        for (std::size_t i = 1; i < samples.size(); ++i)
            require(samples[i].time_s > samples[i - 1].time_s,
                    "TagTrajectory: times must be strictly increasing");
        for (const auto& s : samples)
            require(std::abs(s.azimuth_deg) <= fov_half_deg,
                    "TagTrajectory: azimuth outside field of view");
    }

    double duration_s() const { return samples.empty() ? 0.0 : samples.back().time_s; }

    TrajectorySample at(double t) const {
        if (t <= samples.front().time_s) return samples.front();
        if (t >= samples.back().time_s) return samples.back();
        std::size_t hi = 1;
        while (samples[hi].time_s < t) ++hi;
        const auto& a = samples[hi - 1];
        const auto& b = samples[hi];
        const double u = (t - a.time_s) / (b.time_s - a.time_s);
        return {t, a.azimuth_deg + u * (b.azimuth_deg - a.azimuth_deg),
                a.range_m + u * (b.range_m - a.range_m)};
    }
};

struct NlosPath {
    double gain_ratio = 0.2;  // relative to the line-of-sight gain, < 1
    double azimuth_deg = 10.0;
};

struct SimConfig {
    double transmit_power = 1.0;      // linear scale
    double noise_variance = 1e-4;     // complex noise power sigma^2
    std::vector<NlosPath> nlos_paths = {{0.2, 10.0}};
    double reads_per_second = 2000.0;  // total slot rate across the interleave
    double misdetect_rss_floor_db = -22.0;
    std::uint64_t rng_seed = 1;
    double channel_gain_calibration = 1.0;  // g = calibration / range^2

    void validate() const {
        require(transmit_power > 0.0, "SimConfig: transmit power must be positive");
        require(noise_variance >= 0.0, "SimConfig: noise variance must be >= 0");
        require(reads_per_second > 0.0, "SimConfig: reads_per_second must be positive");
        for (const auto& p : nlos_paths)
            require(p.gain_ratio < 1.0 && p.gain_ratio >= 0.0,
                    "SimConfig: NLoS paths must be weaker than the LoS path");
    }
};

/// m-th element of the round-trip steering vector,
/// exp(j * 4*pi * (d/lambda) * (m-1) * sin(theta)). Element 1 is always 1.
inline cplx steering_element(double theta_deg, double d_over_lambda, int m) {
    require(m == 1 || m == 2, "steering_element: m must be 1 or 2");
    if (m == 1) return {1.0, 0.0};
    const double phase = 4.0 * kPi * d_over_lambda * std::sin(deg2rad(theta_deg));
    return std::polar(1.0, phase);
}

/// Full 2-element steering vector.
inline std::array<cplx, 2> steering_vector(double theta_deg, double d_over_lambda) {
    return {steering_element(theta_deg, d_over_lambda, 1),
            steering_element(theta_deg, d_over_lambda, 2)};
}

/// Carrier phasor at global slot s: exp(j * 2*pi * f_c * T_s * s), with the
/// fractional cycle taken before the complex exponential to keep precision at
/// large slot indices.
inline cplx carrier_phasor(double carrier_frequency_hz, double slot_period_s, long long slot) {
    const double cycles = carrier_frequency_hz * slot_period_s;
    const double frac = std::fmod(cycles * static_cast<double>(slot), 1.0);
    return std::polar(1.0, 2.0 * kPi * frac);
}

struct IQRead {
    long long slot = 0;  // global slot index, 4k + 2m + i - 6
    double time_s = 0.0;
    cplx iq{0.0, 0.0};
    bool detected = true;
};

/// One (antenna, tag) stream; reads appear for every cycle, with misdetected
/// reads keeping their slot but carrying detected = false.
struct IQStream {
    int antenna = 1;  // m in {1, 2}
    int tag = 1;      // i in {1, 2}
    std::vector<IQRead> reads;
};

struct IQCapture {
    ArrayGeometry geometry;
    SimConfig config;
    double duration_s = 0.0;
    int label = 0;  // gesture class, 1-based; 0 if unlabeled
    std::vector<IQStream> streams;

    const IQStream& stream(int antenna, int tag) const {
        for (const auto& s : streams)
            if (s.antenna == antenna && s.tag == tag) return s;
        throw DataError("IQCapture: no stream for antenna " + std::to_string(antenna) + ", tag " +
                        std::to_string(tag));
    }
    bool has_stream(int antenna, int tag) const {
        for (const auto& s : streams)
            if (s.antenna == antenna && s.tag == tag) return true;
        return false;
    }
    std::vector<int> tags() const {
        std::vector<int> out;
        for (const auto& s : streams)
            if (std::find(out.begin(), out.end(), s.tag) == out.end()) out.push_back(s.tag);
        std::sort(out.begin(), out.end());
        return out;
    }
};

/// Global slot index of cycle k (1-based) for pair (antenna m, tag i).
inline long long interleave_slot(long long cycle, int antenna, int tag) {
    return 4 * cycle + 2 * antenna + tag - 6;
}

/// Inverse of the interleave: which (antenna, tag) owns a global slot.
inline std::pair<int, int> interleave_owner(long long slot) {
    switch (((slot % 4) + 4) % 4) {
        case 1: return {1, 1};
        case 2: return {1, 2};
        case 3: return {2, 1};
        default: return {2, 2};
    }
}

/// Simulates the interleaved IQ reads for 1 or 2 tags over the trajectory
/// duration. Deterministic in (trajectories, geometry, config).
inline IQCapture synth_capture(const std::vector<TagTrajectory>& trajectories,
                               const ArrayGeometry& geom, const SimConfig& cfg, int label = 0) {
    geom.validate();
    cfg.validate();
    require(!trajectories.empty() && trajectories.size() <= 2,
            "synth_capture: need 1 or 2 tag trajectories");
    for (const auto& tr : trajectories) {
        tr.validate(geom.unambiguous_half_angle_deg());
        require(tr.tag_id == 1 || tr.tag_id == 2, "synth_capture: tag ids must be 1 or 2");
        require(tr.duration_s() > 0.0, "synth_capture: trajectory must span positive time");
    }

    IQCapture cap;
    cap.geometry = geom;
    cap.config = cfg;
    cap.label = label;
    double duration = 0.0;
    for (const auto& tr : trajectories) duration = std::max(duration, tr.duration_s());
    cap.duration_s = duration;

    const double slot_period = 1.0 / cfg.reads_per_second;
    const long long cycles = static_cast<long long>(std::floor(duration / (4.0 * slot_period)));
    require(cycles >= 1, "synth_capture: trajectory shorter than one read cycle");

    const double sqrt_p = std::sqrt(cfg.transmit_power);
    const double noise_sigma = std::sqrt(cfg.noise_variance / 2.0);  // per I/Q component

    for (const auto& tr : trajectories) {
        const int i = tr.tag_id;
        for (int m = 1; m <= 2; ++m) {
            IQStream stream;
            stream.antenna = m;
            stream.tag = i;
            stream.reads.reserve(static_cast<std::size_t>(cycles));
            auto rng = make_rng(cfg.rng_seed, 0x6e6f697365ULL /* stream salt */, i, m);
            std::normal_distribution<double> gauss(0.0, 1.0);

            for (long long k = 1; k <= cycles; ++k) {
                const long long slot = interleave_slot(k, m, i);
                const double t = static_cast<double>(slot) * slot_period;
                const TrajectorySample pos = tr.at(t);
                const double gain = cfg.channel_gain_calibration / (pos.range_m * pos.range_m);
                const cplx sm = carrier_phasor(geom.carrier_frequency_hz, slot_period, slot);

                cplx noiseless = gain * sqrt_p *
                                 steering_element(pos.azimuth_deg,
                                                  geom.element_spacing_wavelengths, m) *
                                 sm;
                for (const auto& path : cfg.nlos_paths)
                    noiseless += path.gain_ratio * gain * sqrt_p *
                                 steering_element(path.azimuth_deg,
                                                  geom.element_spacing_wavelengths, m) *
                                 sm;

                // Noise is drawn for every cycle so the stream is reproducible
                // regardless of where misdetections land.
                const cplx noise = (noise_sigma > 0.0)
                                       ? cplx(noise_sigma * gauss(rng), noise_sigma * gauss(rng))
                                       : cplx(0.0, 0.0);

                IQRead read;
                read.slot = slot;
                read.time_s = t;
                const double noiseless_rss_db = 10.0 * std::log10(std::norm(noiseless));
                if (noiseless_rss_db < cfg.misdetect_rss_floor_db) {
                    read.detected = false;
                    read.iq = {0.0, 0.0};
                } else {
                    read.detected = true;
                    read.iq = noiseless + noise;
                }
                stream.reads.push_back(read);
            }
            cap.streams.push_back(std::move(stream));
        }
    }
    return cap;
}

inline IQCapture synth_capture(const TagTrajectory& trajectory, const ArrayGeometry& geom,
                               const SimConfig& cfg, int label = 0) {
    return synth_capture(std::vector<TagTrajectory>{trajectory}, geom, cfg, label);
}

/// Raw RSS (dB) and phase (rad) series for one (tag, antenna) stream; gaps
/// propagate through the valid mask.
struct RawStreams {
    SampledSeries rss_db;
    SampledSeries phase_rad;
};

inline RawStreams iq_to_raw_streams(const IQStream& stream) {
    require(!stream.reads.empty(), "iq_to_raw_streams: empty stream");
    RawStreams out;
    out.rss_db.values.reserve(stream.reads.size());
    out.rss_db.valid.reserve(stream.reads.size());
    out.phase_rad.values.reserve(stream.reads.size());
    out.phase_rad.valid.reserve(stream.reads.size());
    for (const auto& r : stream.reads) {
        if (r.detected) {
            out.rss_db.values.push_back(10.0 * std::log10(std::norm(r.iq)));
            out.phase_rad.values.push_back(std::arg(r.iq));
        } else {
            out.rss_db.values.push_back(0.0);
            out.phase_rad.values.push_back(0.0);
        }
        out.rss_db.valid.push_back(r.detected ? 1 : 0);
        out.phase_rad.valid.push_back(r.detected ? 1 : 0);
    }
    return out;
}

// ---------------------------------------------------------------------------
// Gesture catalog: 21 parametric templates (12 single-hand + 9 two-hand).
// Tag 1 rides the dominant hand and moves in every class; tag 2 idles at a
// rest pose for single-hand classes.

inline constexpr int kGestureClassCount = 21;

inline const std::array<const char*, kGestureClassCount>& gesture_class_names() {
    static const std::array<const char*, kGestureClassCount> names = {
        "lateral_down",    "lateral_to_front", "lateral_raise",  "left_arm_circle",
        "right_arm_circle", "lift",            "pull",           "push",
        "left_round",      "right_round",      "swipe_left",     "swipe_right",
        "2h_lateral_down", "2h_lateral_to_front", "2h_lateral_raise", "2h_inward_circle",
        "2h_outward_circle", "2h_lift",        "2h_pull",        "2h_push",
        "2h_round"};
    return names;
}

inline bool gesture_is_two_handed(int class_id) { return class_id >= 13; }

namespace detail {

// Motion primitives evaluated at normalized time u in [0, 1]. The warp
// exponent skews the velocity profile (u -> u^warp); gestures and their
// spatial reverses therefore dwell in different parts of the path, the way
// human executions do, instead of producing mirror-image value
// distributions.
struct Motion {
    enum Kind { Linear, Circle, ArcSine, Hold } kind = Hold;
    double az0 = 0.0, az1 = 0.0;       // Linear endpoints / Hold pose
    double r0 = 3.0, r1 = 3.0;         // range endpoints (Linear/ArcSine) or center (Circle)
    double az_c = 0.0, az_amp = 0.0;   // Circle/ArcSine azimuth center and amplitude
    double r_amp = 0.0;                // Circle/ArcSine range modulation
    double sense = 1.0;                // Circle direction, ArcSine range-mod sign
    double warp = 1.0;                 // time-warp exponent
    double phase0 = 0.0;               // Circle start phase

    std::pair<double, double> at(double u) const {
        const double w = std::pow(std::clamp(u, 0.0, 1.0), warp);
        switch (kind) {
            case Linear:
                return {az0 + w * (az1 - az0), r0 + w * (r1 - r0)};
            case Circle: {
                const double ph = phase0 + 2.0 * kPi * w * sense;
                return {az_c + az_amp * std::sin(ph), r0 + r_amp * std::cos(ph)};
            }
            case ArcSine:
                return {az_c + az_amp * std::sin(kPi * w),
                        r0 + w * (r1 - r0) + r_amp * std::sin(2.0 * kPi * w) * sense};
            case Hold:
                return {az0, r0};
        }
        return {az0, r0};
    }
};

inline Motion linear(double az0, double az1, double r0, double r1, double warp = 1.0) {
    Motion m;
    m.kind = Motion::Linear;
    m.az0 = az0;
    m.az1 = az1;
    m.r0 = r0;
    m.r1 = r1;
    m.warp = warp;
    return m;
}
inline Motion circle(double az_c, double az_amp, double r_c, double r_amp, double sense,
                     double phase0 = 0.0, double warp = 1.0) {
    Motion m;
    m.kind = Motion::Circle;
    m.az_c = az_c;
    m.az_amp = az_amp;
    m.r0 = r_c;
    m.r_amp = r_amp;
    m.sense = sense;
    m.phase0 = phase0;
    m.warp = warp;
    return m;
}
inline Motion arc(double az_c, double az_amp, double r0, double r1, double r_amp, double sense,
                  double warp = 1.0) {
    Motion m;
    m.kind = Motion::ArcSine;
    m.az_c = az_c;
    m.az_amp = az_amp;
    m.r0 = r0;
    m.r1 = r1;
    m.r_amp = r_amp;
    m.sense = sense;
    m.warp = warp;
    return m;
}
inline Motion hold(double az, double r) {
    Motion m;
    m.kind = Motion::Hold;
    m.az0 = az;
    m.r0 = r;
    return m;
}

inline Motion mirrored(Motion m) {
    m.az0 = -m.az0;
    m.az1 = -m.az1;
    m.az_c = -m.az_c;
    m.az_amp = -m.az_amp;
    return m;
}

struct GestureTemplate {
    Motion tag1;
    Motion tag2;
};

inline const std::array<GestureTemplate, kGestureClassCount>& gesture_templates() {
    static const std::array<GestureTemplate, kGestureClassCount> t = [] {
        const Motion rest = hold(-10.0, 3.05);
        // Per-class extents, range profiles, and warps are all distinct so
        // no two classes share a value distribution on any channel.
        const Motion ld = linear(15.0, 4.0, 2.8, 3.2, 1.3);
        const Motion lf = linear(11.0, 6.0, 3.1, 2.6, 0.8);
        const Motion lr = linear(2.0, 13.0, 3.2, 2.75, 1.25);
        const Motion lac = circle(9.0, 5.0, 3.0, 0.22, +1.0, 0.0, 1.1);
        const Motion rac = circle(6.5, 4.0, 2.9, 0.16, -1.0, kPi / 2, 0.9);
        const Motion lift = arc(10.0, 3.5, 3.1, 2.65, 0.0, +1.0, 1.15);
        const Motion pull = linear(9.5, 6.5, 2.7, 3.3, 1.35);
        const Motion push = linear(6.0, 9.0, 3.2, 2.62, 0.75);
        const Motion lround = arc(5.0, 6.5, 3.0, 3.0, 0.2, -1.0, 0.85);
        const Motion rround = arc(13.0, -6.0, 2.95, 2.95, 0.18, +1.0, 1.2);
        const Motion swipe_l = linear(15.0, -7.0, 2.9, 3.05, 1.3);
        const Motion swipe_r = linear(-5.0, 14.0, 3.05, 2.85, 0.8);

        std::array<GestureTemplate, kGestureClassCount> g{};
        g[0] = {ld, rest};       // LD
        g[1] = {lf, rest};       // LF
        g[2] = {lr, rest};       // LR
        g[3] = {lac, rest};      // LAC
        g[4] = {rac, rest};      // RAC
        g[5] = {lift, rest};     // L
        g[6] = {pull, rest};     // Pl
        g[7] = {push, rest};     // Ps
        g[8] = {lround, rest};   // LRo
        g[9] = {rround, rest};   // RR
        g[10] = {swipe_l, rest}; // SL
        g[11] = {swipe_r, rest}; // SR
        g[12] = {ld, mirrored(ld)};            // 2HLD
        g[13] = {lf, mirrored(lf)};            // 2HLF
        g[14] = {lr, mirrored(lr)};            // 2HLR
        g[15] = {lac, mirrored(lac)};          // 2HIC
        g[16] = {rac, mirrored(rac)};          // 2HOC
        g[17] = {lift, mirrored(lift)};        // 2HL
        g[18] = {pull, mirrored(pull)};        // 2HPl
        g[19] = {push, mirrored(push)};        // 2HPs
        g[20] = {lround, mirrored(lround)};    // 2HR
        return g;
    }();
    return t;
}

// Smooth low-order sinusoidal jitter; amplitudes small enough to keep
// monotone templates monotone at the trajectory sampling rate.
struct Jitter {
    std::array<double, 3> az_amp{}, az_phase{};
    std::array<double, 3> r_amp{}, r_phase{};
    double az_offset = 0.0;
    double r_offset = 0.0;
    double scale = 1.0;

    double az(double u) const {
        double j = az_offset;
        for (int k = 0; k < 3; ++k)
            j += az_amp[k] * std::sin(2.0 * kPi * (k + 1) * u + az_phase[k]);
        return j;
    }
    double range(double u) const {
        double j = r_offset;
        for (int k = 0; k < 3; ++k)
            j += r_amp[k] * std::sin(2.0 * kPi * (k + 1) * u + r_phase[k]);
        return j;
    }
};

inline Jitter make_jitter(std::uint64_t seed, int class_id, int tag) {
    auto rng = make_rng(seed, 0x6a697474ULL /* jitter salt */, class_id, tag);
    std::uniform_real_distribution<double> uni(0.0, 1.0);
    Jitter j;
    for (int k = 0; k < 3; ++k) {
        j.az_amp[k] = 0.15 / (k + 1) * uni(rng);
        j.az_phase[k] = 2.0 * kPi * uni(rng);
        j.r_amp[k] = 0.02 / (k + 1) * uni(rng);
        j.r_phase[k] = 2.0 * kPi * uni(rng);
    }
    j.az_offset = -0.8 + 1.6 * uni(rng);
    j.r_offset = -0.04 + 0.08 * uni(rng);
    j.scale = 0.94 + 0.12 * uni(rng);
    return j;
}

}  // namespace detail

inline constexpr int kTrajectoryPoints = 128;

/// Seeded trajectories for one gesture execution. Both hands wear a tag, so
/// two trajectories are returned for every class; only two-handed classes
/// move the second tag, the idle hand keeps a jittered rest pose.
inline std::vector<TagTrajectory> gesture_trajectory(int class_id, double duration_s,
                                                     std::uint64_t seed) {
    require(class_id >= 1 && class_id <= kGestureClassCount,
            "gesture_trajectory: unknown class id");
    require(duration_s > 0.0, "gesture_trajectory: duration must be positive");

    const auto& tmpl = detail::gesture_templates()[class_id - 1];
    std::vector<TagTrajectory> out;
    for (int tag = 1; tag <= 2; ++tag) {
        const detail::Motion& motion = (tag == 1) ? tmpl.tag1 : tmpl.tag2;
        const detail::Jitter jit = detail::make_jitter(seed, class_id, tag);
        TagTrajectory tr;
        tr.tag_id = tag;
        tr.samples.reserve(kTrajectoryPoints);
        for (int p = 0; p < kTrajectoryPoints; ++p) {
            const double u = static_cast<double>(p) / (kTrajectoryPoints - 1);
            auto [az, r] = motion.at(u);
            // Scale the template excursion about its own start pose.
            const auto [az_start, r_start] = motion.at(0.0);
            az = az_start + jit.scale * (az - az_start) + jit.az(u);
            r = r_start + jit.scale * (r - r_start) + jit.range(u);
            tr.samples.push_back({u * duration_s, az, r});
        }
        out.push_back(std::move(tr));
    }
    return out;
}

}  // namespace einsense
