// SPDX-License-Identifier: Apache-2.0
//
// einsense: plain-text interchange formats (captures, AoA tracks, frames,
// feature sets), the JSON model file, and report rendering. All floating
// point is written with 17 significant digits so files round-trip bit-exact.

#pragma once

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "einsense/aoa.hpp"
#include "einsense/backscatter.hpp"
#include "einsense/common.hpp"
#include "einsense/features.hpp"
#include "einsense/einsum_network.hpp"
#include "einsense/fusion.hpp"
#include "einsense/preprocess.hpp"

namespace einsense {

inline std::string fmt_double(double v) {
    char buf[40];
    std::snprintf(buf, sizeof(buf), "%.17g", v);
    return buf;
}

namespace detail {

inline void expect_token(std::istream& in, const std::string& want, const std::string& ctx) {
    std::string got;
    if (!(in >> got) || got != want)
        throw DataError(ctx + ": expected '" + want + "', got '" + got + "'");
}

inline double read_double(std::istream& in, const std::string& ctx) {
    double v;
    if (!(in >> v)) throw DataError(ctx + ": malformed number");
    return v;
}

inline long long read_int(std::istream& in, const std::string& ctx) {
    long long v;
    if (!(in >> v)) throw DataError(ctx + ": malformed integer");
    return v;
}

inline std::uint64_t read_uint(std::istream& in, const std::string& ctx) {
    std::uint64_t v;
    if (!(in >> v)) throw DataError(ctx + ": malformed unsigned integer");
    return v;
}

inline std::ofstream open_out(const std::filesystem::path& path) {
    std::ofstream out(path);
    if (!out) throw DataError("cannot open for writing: " + path.string());
    return out;
}

inline std::ifstream open_in(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw DataError("cannot open for reading: " + path.string());
    return in;
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Capture files: header with geometry + config (seed included), then one
// record per read: slot antenna tag i q detected.

inline void write_capture(std::ostream& out, const IQCapture& cap) {
    out << "einsense-capture v1\n";
    out << "label " << cap.label << "\n";
    out << "duration_s " << fmt_double(cap.duration_s) << "\n";
    out << "carrier_frequency_hz " << fmt_double(cap.geometry.carrier_frequency_hz) << "\n";
    out << "element_spacing_wavelengths "
        << fmt_double(cap.geometry.element_spacing_wavelengths) << "\n";
    out << "num_elements " << cap.geometry.num_elements << "\n";
    out << "transmit_power " << fmt_double(cap.config.transmit_power) << "\n";
    out << "noise_variance " << fmt_double(cap.config.noise_variance) << "\n";
    out << "reads_per_second " << fmt_double(cap.config.reads_per_second) << "\n";
    out << "misdetect_rss_floor_db " << fmt_double(cap.config.misdetect_rss_floor_db) << "\n";
    out << "channel_gain_calibration " << fmt_double(cap.config.channel_gain_calibration)
        << "\n";
    out << "rng_seed " << cap.config.rng_seed << "\n";
    out << "nlos_paths " << cap.config.nlos_paths.size() << "\n";
    for (const auto& p : cap.config.nlos_paths)
        out << "nlos " << fmt_double(p.gain_ratio) << " " << fmt_double(p.azimuth_deg) << "\n";
    std::size_t reads = 0;
    for (const auto& s : cap.streams) reads += s.reads.size();
    out << "streams " << cap.streams.size() << "\n";
    out << "reads " << reads << "\n";
    out << "slot antenna tag i q detected\n";
    for (const auto& s : cap.streams)
        for (const auto& r : s.reads)
            out << r.slot << " " << s.antenna << " " << s.tag << " " << fmt_double(r.iq.real())
                << " " << fmt_double(r.iq.imag()) << " " << (r.detected ? 1 : 0) << "\n";
}

inline IQCapture read_capture(std::istream& in) {
    const std::string ctx = "read_capture";
    detail::expect_token(in, "einsense-capture", ctx);
    detail::expect_token(in, "v1", ctx);
    IQCapture cap;
    detail::expect_token(in, "label", ctx);
    cap.label = static_cast<int>(detail::read_int(in, ctx));
    detail::expect_token(in, "duration_s", ctx);
    cap.duration_s = detail::read_double(in, ctx);
    detail::expect_token(in, "carrier_frequency_hz", ctx);
    cap.geometry.carrier_frequency_hz = detail::read_double(in, ctx);
    detail::expect_token(in, "element_spacing_wavelengths", ctx);
    cap.geometry.element_spacing_wavelengths = detail::read_double(in, ctx);
    detail::expect_token(in, "num_elements", ctx);
    cap.geometry.num_elements = static_cast<int>(detail::read_int(in, ctx));
    detail::expect_token(in, "transmit_power", ctx);
    cap.config.transmit_power = detail::read_double(in, ctx);
    detail::expect_token(in, "noise_variance", ctx);
    cap.config.noise_variance = detail::read_double(in, ctx);
    detail::expect_token(in, "reads_per_second", ctx);
    cap.config.reads_per_second = detail::read_double(in, ctx);
    detail::expect_token(in, "misdetect_rss_floor_db", ctx);
    cap.config.misdetect_rss_floor_db = detail::read_double(in, ctx);
    detail::expect_token(in, "channel_gain_calibration", ctx);
    cap.config.channel_gain_calibration = detail::read_double(in, ctx);
    detail::expect_token(in, "rng_seed", ctx);
    cap.config.rng_seed = detail::read_uint(in, ctx);
    detail::expect_token(in, "nlos_paths", ctx);
    const long long n_paths = detail::read_int(in, ctx);
    cap.config.nlos_paths.clear();
    for (long long i = 0; i < n_paths; ++i) {
        detail::expect_token(in, "nlos", ctx);
        NlosPath p;
        p.gain_ratio = detail::read_double(in, ctx);
        p.azimuth_deg = detail::read_double(in, ctx);
        cap.config.nlos_paths.push_back(p);
    }
    detail::expect_token(in, "streams", ctx);
    const long long n_streams = detail::read_int(in, ctx);
    detail::expect_token(in, "reads", ctx);
    const long long n_reads = detail::read_int(in, ctx);
    for (const char* col : {"slot", "antenna", "tag", "i", "q", "detected"})
        detail::expect_token(in, col, ctx);

    const double slot_period = 1.0 / cap.config.reads_per_second;
    auto stream_of = [&](int antenna, int tag) -> IQStream& {
        for (auto& s : cap.streams)
            if (s.antenna == antenna && s.tag == tag) return s;
        cap.streams.push_back({antenna, tag, {}});
        return cap.streams.back();
    };
    for (long long i = 0; i < n_reads; ++i) {
        IQRead r;
        r.slot = detail::read_int(in, ctx);
        const int antenna = static_cast<int>(detail::read_int(in, ctx));
        const int tag = static_cast<int>(detail::read_int(in, ctx));
        const double re = detail::read_double(in, ctx);
        const double im = detail::read_double(in, ctx);
        r.iq = {re, im};
        r.detected = detail::read_int(in, ctx) != 0;
        r.time_s = static_cast<double>(r.slot) * slot_period;
        stream_of(antenna, tag).reads.push_back(r);
    }
    if (static_cast<long long>(cap.streams.size()) != n_streams)
        throw DataError(ctx + ": stream count mismatch");
    return cap;
}

inline void write_capture_file(const std::filesystem::path& path, const IQCapture& cap) {
    auto out = detail::open_out(path);
    write_capture(out, cap);
}

inline IQCapture read_capture_file(const std::filesystem::path& path) {
    auto in = detail::open_in(path);
    return read_capture(in);
}

// ---------------------------------------------------------------------------
// AoA track files: one record per MUSIC window, t theta_deg valid.

inline void write_track(std::ostream& out, const AoATrack& track, int tag) {
    track.validate();
    out << "einsense-aoa-track v1\n";
    out << "tag " << tag << "\n";
    out << "smoothed " << (track.smoothed ? 1 : 0) << "\n";
    out << "samples " << track.size() << "\n";
    out << "t theta_deg valid\n";
    for (std::size_t i = 0; i < track.size(); ++i)
        out << fmt_double(track.times_s[i]) << " " << fmt_double(track.azimuth_deg[i]) << " "
            << (track.valid[i] ? 1 : 0) << "\n";
}

inline AoATrack read_track(std::istream& in, int* tag_out = nullptr) {
    const std::string ctx = "read_track";
    detail::expect_token(in, "einsense-aoa-track", ctx);
    detail::expect_token(in, "v1", ctx);
    detail::expect_token(in, "tag", ctx);
    const int tag = static_cast<int>(detail::read_int(in, ctx));
    if (tag_out) *tag_out = tag;
    detail::expect_token(in, "smoothed", ctx);
    AoATrack track;
    track.smoothed = detail::read_int(in, ctx) != 0;
    detail::expect_token(in, "samples", ctx);
    const long long n = detail::read_int(in, ctx);
    for (const char* col : {"t", "theta_deg", "valid"}) detail::expect_token(in, col, ctx);
    for (long long i = 0; i < n; ++i) {
        track.times_s.push_back(detail::read_double(in, ctx));
        track.azimuth_deg.push_back(detail::read_double(in, ctx));
        track.valid.push_back(detail::read_int(in, ctx) != 0 ? 1 : 0);
    }
    return track;
}

/// Optional per-window spectrum dump for plotting: one line per grid point.
inline void write_music_spectra(std::ostream& out, const std::vector<MusicResult>& spectra) {
    out << "einsense-music-spectra v1\n";
    out << "windows " << spectra.size() << "\n";
    for (std::size_t w = 0; w < spectra.size(); ++w) {
        out << "window " << w << " points " << spectra[w].grid_deg.size() << "\n";
        for (std::size_t j = 0; j < spectra[w].grid_deg.size(); ++j)
            out << fmt_double(spectra[w].grid_deg[j]) << " " << fmt_double(spectra[w].spectrum[j])
                << "\n";
    }
}

// ---------------------------------------------------------------------------
// Frame files: named 35-value channels per sample.

inline void write_frames(std::ostream& out, const std::vector<SignalFrame>& frames) {
    require(!frames.empty(), "write_frames: no frames");
    out << "einsense-frames v1\n";
    out << "frame_length " << kFrameLength << "\n";
    out << "channels " << frames.front().channel_names.size() << "\n";
    out << "channel_names";
    for (const auto& n : frames.front().channel_names) out << " " << n;
    out << "\n";
    out << "samples " << frames.size() << "\n";
    for (std::size_t s = 0; s < frames.size(); ++s) {
        const auto& f = frames[s];
        if (f.channel_names != frames.front().channel_names)
            throw DataError("write_frames: inconsistent channel sets");
        out << "sample " << s << " " << f.label << " " << (f.degenerate ? 1 : 0) << "\n";
        for (std::size_t c = 0; c < f.channels.size(); ++c) {
            out << f.channel_names[c];
            for (double v : f.channels[c]) out << " " << fmt_double(v);
            out << "\n";
        }
    }
}

inline std::vector<SignalFrame> read_frames(std::istream& in) {
    const std::string ctx = "read_frames";
    detail::expect_token(in, "einsense-frames", ctx);
    detail::expect_token(in, "v1", ctx);
    detail::expect_token(in, "frame_length", ctx);
    const long long frame_len = detail::read_int(in, ctx);
    if (frame_len != kFrameLength) throw DataError(ctx + ": unexpected frame length");
    detail::expect_token(in, "channels", ctx);
    const long long n_channels = detail::read_int(in, ctx);
    detail::expect_token(in, "channel_names", ctx);
    std::vector<std::string> names(n_channels);
    for (auto& n : names)
        if (!(in >> n)) throw DataError(ctx + ": bad channel name");
    detail::expect_token(in, "samples", ctx);
    const long long n_samples = detail::read_int(in, ctx);

    std::vector<SignalFrame> frames;
    frames.reserve(n_samples);
    for (long long s = 0; s < n_samples; ++s) {
        detail::expect_token(in, "sample", ctx);
        detail::read_int(in, ctx);  // sample id (sequential)
        SignalFrame f;
        f.label = static_cast<int>(detail::read_int(in, ctx));
        f.degenerate = detail::read_int(in, ctx) != 0;
        f.channel_names = names;
        f.channels.assign(n_channels, std::vector<double>(frame_len));
        for (long long c = 0; c < n_channels; ++c) {
            detail::expect_token(in, names[c], ctx);
            for (long long j = 0; j < frame_len; ++j)
                f.channels[c][j] = detail::read_double(in, ctx);
        }
        frames.push_back(std::move(f));
    }
    return frames;
}

// ---------------------------------------------------------------------------
// Feature files: one record per sample, kind + label + named values.

inline void write_features(std::ostream& out, const std::vector<FeatureVector>& features) {
    require(!features.empty(), "write_features: empty feature set");
    const FeatureKind kind = features.front().kind;
    out << "einsense-features v1\n";
    out << "kind " << to_string(kind) << "\n";
    out << "dim " << feature_dim(kind) << "\n";
    out << "names";
    for (const auto& n : features.front().names) out << " " << n;
    out << "\n";
    out << "samples " << features.size() << "\n";
    for (std::size_t s = 0; s < features.size(); ++s) {
        const auto& fv = features[s];
        if (fv.kind != kind || fv.names != features.front().names)
            throw DataError("write_features: inconsistent feature records");
        fv.validate();
        out << "sample " << s << " " << fv.label;
        for (double v : fv.values) out << " " << fmt_double(v);
        out << "\n";
    }
}

inline std::vector<FeatureVector> read_features(std::istream& in) {
    const std::string ctx = "read_features";
    detail::expect_token(in, "einsense-features", ctx);
    detail::expect_token(in, "v1", ctx);
    detail::expect_token(in, "kind", ctx);
    std::string kind_str;
    in >> kind_str;
    const FeatureKind kind = feature_kind_from_string(kind_str);
    detail::expect_token(in, "dim", ctx);
    const long long dim = detail::read_int(in, ctx);
    if (dim != feature_dim(kind)) throw DataError(ctx + ": dimension does not match kind");
    detail::expect_token(in, "names", ctx);
    std::vector<std::string> names(dim);
    for (auto& n : names)
        if (!(in >> n)) throw DataError(ctx + ": bad feature name");
    detail::expect_token(in, "samples", ctx);
    const long long n_samples = detail::read_int(in, ctx);

    std::vector<FeatureVector> out;
    out.reserve(n_samples);
    for (long long s = 0; s < n_samples; ++s) {
        detail::expect_token(in, "sample", ctx);
        detail::read_int(in, ctx);
        FeatureVector fv;
        fv.kind = kind;
        fv.names = names;
        fv.label = static_cast<int>(detail::read_int(in, ctx));
        fv.values.resize(dim);
        for (long long j = 0; j < dim; ++j) fv.values[j] = detail::read_double(in, ctx);
        fv.validate();
        out.push_back(std::move(fv));
    }
    return out;
}

// ---------------------------------------------------------------------------
// Model files: JSON document with the spec, seed, explicit region scopes,
// all parameters, and training metadata. load(save(m)) reproduces inference
// bit-exactly (doubles are serialized with shortest round-trip encoding).

inline nlohmann::json model_to_json(const EinsumCircuit& c, const std::string& feature_kind = "") {
    nlohmann::json j;
    j["format"] = "einsense-model";
    j["version"] = 1;
    if (!feature_kind.empty()) j["feature_kind"] = feature_kind;
    j["spec"] = {{"depth", c.spec.depth},
                 {"sum_components", c.spec.sum_components},
                 {"leaf_components", c.spec.leaf_components},
                 {"repetitions", c.spec.repetitions},
                 {"classes", c.spec.classes},
                 {"num_variables", c.spec.num_variables},
                 {"structure_seed", c.spec.structure_seed}};
    j["standardization"] = {{"mean", c.feat_mean}, {"std", c.feat_std}};
    j["head_log"] = c.head_log;
    j["meta"] = {{"epochs_run", c.meta.epochs_run},
                 {"final_train_loglik", c.meta.final_train_loglik},
                 {"training_samples", c.meta.training_samples}};

    nlohmann::json reps = nlohmann::json::array();
    for (std::size_t r = 0; r < c.reps.size(); ++r) {
        const auto& regions = c.graph.repetitions[r];
        nlohmann::json jr;
        nlohmann::json jregions = nlohmann::json::array();
        for (const auto& region : regions)
            jregions.push_back({{"scope", region.scope},
                                {"left", region.left},
                                {"right", region.right},
                                {"depth", region.depth}});
        jr["regions"] = jregions;
        jr["root_log_w"] = c.reps[r].root_log_w;
        nlohmann::json jeinsum = nlohmann::json::array();
        nlohmann::json jleaves = nlohmann::json::array();
        for (std::size_t idx = 0; idx < regions.size(); ++idx) {
            if (regions[idx].is_leaf()) {
                const auto& lp = c.reps[r].leaf[idx];
                jleaves.push_back({{"region", idx},
                                   {"mean", lp.mean},
                                   {"stdev", lp.stdev},
                                   {"log_mix", lp.log_mix}});
            } else if (idx > 0) {
                jeinsum.push_back({{"region", idx}, {"log_w", c.reps[r].einsum[idx].log_w}});
            }
        }
        jr["einsum"] = jeinsum;
        jr["leaves"] = jleaves;
        reps.push_back(std::move(jr));
    }
    j["repetitions"] = reps;
    return j;
}

inline EinsumCircuit model_from_json(const nlohmann::json& j, std::string* feature_kind = nullptr) {
    if (!j.contains("format") || j["format"] != "einsense-model")
        throw DataError("model_from_json: not an einsense model document");
    if (feature_kind) *feature_kind = j.value("feature_kind", "");

    EinsumCircuit c;
    const auto& js = j.at("spec");
    c.spec.depth = js.at("depth");
    c.spec.sum_components = js.at("sum_components");
    c.spec.leaf_components = js.at("leaf_components");
    c.spec.repetitions = js.at("repetitions");
    c.spec.classes = js.at("classes");
    c.spec.num_variables = js.at("num_variables");
    c.spec.structure_seed = js.at("structure_seed");
    c.spec.validate();

    c.feat_mean = j.at("standardization").at("mean").get<std::vector<double>>();
    c.feat_std = j.at("standardization").at("std").get<std::vector<double>>();
    c.head_log = j.at("head_log").get<std::vector<double>>();
    c.meta.epochs_run = j.at("meta").at("epochs_run");
    c.meta.final_train_loglik = j.at("meta").at("final_train_loglik");
    c.meta.training_samples = j.at("meta").at("training_samples");

    for (const auto& jr : j.at("repetitions")) {
        std::vector<Region> regions;
        for (const auto& jregion : jr.at("regions")) {
            Region region;
            region.scope = jregion.at("scope").get<std::vector<int>>();
            region.left = jregion.at("left");
            region.right = jregion.at("right");
            region.depth = jregion.at("depth");
            regions.push_back(std::move(region));
        }
        RepetitionParams params;
        params.leaf.resize(regions.size());
        params.einsum.resize(regions.size());
        params.root_log_w = jr.at("root_log_w").get<std::vector<double>>();
        for (const auto& je : jr.at("einsum")) {
            const std::size_t idx = je.at("region");
            params.einsum.at(idx).log_w = je.at("log_w").get<std::vector<double>>();
        }
        for (const auto& jl : jr.at("leaves")) {
            const std::size_t idx = jl.at("region");
            params.leaf.at(idx).mean = jl.at("mean").get<std::vector<double>>();
            params.leaf.at(idx).stdev = jl.at("stdev").get<std::vector<double>>();
            params.leaf.at(idx).log_mix = jl.at("log_mix").get<std::vector<double>>();
        }
        c.graph.repetitions.push_back(std::move(regions));
        c.reps.push_back(std::move(params));
    }
    if (static_cast<int>(c.reps.size()) != c.spec.repetitions)
        throw DataError("model_from_json: repetition count mismatch");
    return c;
}

inline void save_model_file(const std::filesystem::path& path, const EinsumCircuit& c,
                            const std::string& feature_kind = "") {
    auto out = detail::open_out(path);
    out << model_to_json(c, feature_kind).dump(1) << "\n";
}

inline EinsumCircuit load_model_file(const std::filesystem::path& path,
                                     std::string* feature_kind = nullptr) {
    auto in = detail::open_in(path);
    nlohmann::json j;
    in >> j;
    return model_from_json(j, feature_kind);
}

// ---------------------------------------------------------------------------
// Report rendering.

inline std::string render_eval_report(const EvalReport& r, const std::string& title) {
    std::ostringstream os;
    os << title << "\n";
    os << "  samples   " << r.sample_count << "\n";
    char buf[128];
    std::snprintf(buf, sizeof(buf), "  accuracy  %.2f\n  precision %.2f\n  recall    %.2f\n  f1        %.2f\n",
                  r.accuracy, r.precision, r.recall, r.f1);
    os << buf;
    std::snprintf(buf, sizeof(buf), "  macro precision %.2f / recall %.2f / f1 %.2f\n",
                  r.macro_precision, r.macro_recall, r.macro_f1);
    os << buf;
    return os.str();
}

inline void write_confusion_csv(std::ostream& out, const ConfusionMatrix& cm, bool normalized) {
    out << "true\\pred";
    for (int c = 0; c < cm.classes; ++c) out << "," << (c + 1);
    out << "\n";
    for (int t = 0; t < cm.classes; ++t) {
        out << (t + 1);
        for (int p = 0; p < cm.classes; ++p) {
            if (normalized)
                out << "," << fmt_double(cm.normalized[t][p]);
            else
                out << "," << cm.raw[t][p];
        }
        out << "\n";
    }
}

}  // namespace einsense
