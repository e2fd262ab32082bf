// SPDX-License-Identifier: Apache-2.0
//
// einsense: end-to-end orchestration. Dataset synthesis, capture -> frame
// conversion, per-bundle feature extraction, circuit training, evaluation
// and fusion, and the report/artifact writing shared by the CLI subcommands.

#pragma once

#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "einsense/aoa.hpp"
#include "einsense/backscatter.hpp"
#include "einsense/common.hpp"
#include "einsense/costmodel.hpp"
#include "einsense/einsum_network.hpp"
#include "einsense/features.hpp"
#include "einsense/fusion.hpp"
#include "einsense/io.hpp"
#include "einsense/preprocess.hpp"
#include "einsense/version.hpp"

namespace einsense {

namespace fs = std::filesystem;

struct DatasetConfig {
    int classes = kGestureClassCount;
    int samples_per_class = 20;
    std::uint64_t seed = 1;
    double duration_s = 2.4;
    ArrayGeometry geometry{};
    SimConfig sim{};  // per-sample rng_seed is derived from `seed`

    void validate() const {
        require(classes >= 1 && classes <= kGestureClassCount,
                "DatasetConfig: classes must be in 1..21");
        require(samples_per_class >= 1, "DatasetConfig: samples_per_class must be >= 1");
        require(duration_s > 0.0, "DatasetConfig: duration must be positive");
        geometry.validate();
        sim.validate();
    }
};

/// One synthesized gesture capture, before serialization.
inline IQCapture simulate_sample(const DatasetConfig& cfg, int class_id, int sample_idx) {
    const std::uint64_t sample_seed = mix_seed(cfg.seed, class_id, sample_idx);
    const auto trajectories = gesture_trajectory(class_id, cfg.duration_s, sample_seed);
    SimConfig sim = cfg.sim;
    sim.rng_seed = sample_seed;
    return synth_capture(trajectories, cfg.geometry, sim, class_id);
}

inline std::string capture_filename(int class_id, int sample_idx) {
    char buf[48];
    std::snprintf(buf, sizeof(buf), "c%02d_s%03d.capture", class_id, sample_idx);
    return buf;
}

/// Writes captures/<c>_<s>.capture files plus labels.tsv and the resolved
/// dataset configuration.
inline std::vector<fs::path> write_dataset(const DatasetConfig& cfg, const fs::path& out_dir,
                                           unsigned max_threads = 0) {
    cfg.validate();
    fs::create_directories(out_dir / "captures");

    struct Entry {
        int class_id, sample_idx;
        fs::path path;
    };
    std::vector<Entry> entries;
    for (int c = 1; c <= cfg.classes; ++c)
        for (int s = 0; s < cfg.samples_per_class; ++s)
            entries.push_back({c, s, out_dir / "captures" / capture_filename(c, s)});

    parallel_for(
        entries.size(),
        [&](std::size_t i) {
            const IQCapture cap = simulate_sample(cfg, entries[i].class_id, entries[i].sample_idx);
            write_capture_file(entries[i].path, cap);
        },
        max_threads);

    {
        auto out = detail::open_out(out_dir / "labels.tsv");
        out << "file\tlabel\n";
        for (const auto& e : entries)
            out << "captures/" << e.path.filename().string() << "\t" << e.class_id << "\n";
    }
    {
        auto out = detail::open_out(out_dir / "dataset_config.txt");
        out << "version " << kVersion << "\n";
        out << "classes " << cfg.classes << "\n";
        out << "samples_per_class " << cfg.samples_per_class << "\n";
        out << "seed " << cfg.seed << "\n";
        out << "duration_s " << fmt_double(cfg.duration_s) << "\n";
        out << "carrier_frequency_hz " << fmt_double(cfg.geometry.carrier_frequency_hz) << "\n";
        out << "element_spacing_wavelengths "
            << fmt_double(cfg.geometry.element_spacing_wavelengths) << "\n";
        out << "transmit_power " << fmt_double(cfg.sim.transmit_power) << "\n";
        out << "noise_variance " << fmt_double(cfg.sim.noise_variance) << "\n";
        out << "reads_per_second " << fmt_double(cfg.sim.reads_per_second) << "\n";
        out << "misdetect_rss_floor_db " << fmt_double(cfg.sim.misdetect_rss_floor_db) << "\n";
        out << "channel_gain_calibration " << fmt_double(cfg.sim.channel_gain_calibration)
            << "\n";
        for (const auto& p : cfg.sim.nlos_paths)
            out << "nlos " << fmt_double(p.gain_ratio) << " " << fmt_double(p.azimuth_deg) << "\n";
    }

    std::vector<fs::path> paths;
    for (auto& e : entries) paths.push_back(std::move(e.path));
    return paths;
}

/// Capture paths listed in a dataset directory's labels.tsv, in file order.
inline std::vector<fs::path> dataset_captures(const fs::path& dataset_dir) {
    const fs::path labels = dataset_dir / "labels.tsv";
    if (!fs::exists(labels)) throw DataError("dataset has no labels.tsv: " + dataset_dir.string());
    auto in = detail::open_in(labels);
    std::string header;
    std::getline(in, header);
    std::vector<fs::path> out;
    std::string file;
    int label;
    while (in >> file >> label) out.push_back(dataset_dir / file);
    if (out.empty()) throw DataError("dataset is empty: " + dataset_dir.string());
    return out;
}

// ---------------------------------------------------------------------------
// Capture -> SignalFrame

/// Runs RSS/phase extraction and AoA recovery for both tags and assembles
/// the 10-channel frame.
inline SignalFrame capture_to_frame(const IQCapture& cap, const WindowConfig& wcfg = {},
                                    const SmootherConfig& scfg = {},
                                    const FrameConfig& fcfg = {}) {
    for (int tag : {1, 2})
        for (int antenna : {1, 2})
            if (!cap.has_stream(antenna, tag))
                throw DataError("capture_to_frame: capture lacks stream antenna " +
                                std::to_string(antenna) + " tag " + std::to_string(tag));

    std::array<SampledSeries, 4> rss, phase;
    for (int tag = 1; tag <= 2; ++tag)
        for (int antenna = 1; antenna <= 2; ++antenna) {
            const RawStreams raw = iq_to_raw_streams(cap.stream(antenna, tag));
            const int slot_idx = (tag - 1) * 2 + (antenna - 1);
            rss[slot_idx] = raw.rss_db;
            phase[slot_idx] = raw.phase_rad;
        }

    std::array<SampledSeries, 2> aoa;
    for (int tag = 1; tag <= 2; ++tag) {
        const AoATrack track = aoa_track(cap, tag, wcfg, scfg);
        aoa[tag - 1].values = track.azimuth_deg;
        aoa[tag - 1].valid.clear();  // smoothed tracks are gap free
    }

    return build_frame(rss, phase, aoa, cap.label, fcfg);
}

// ---------------------------------------------------------------------------
// Training helpers

/// Deployed circuit configuration for each bundle kind: (D, K, L, R, C) of
/// (6,2,10,10,C) for SPR, (4,2,10,10,C) for SA, (5,2,10,10,C) for WA.
inline CircuitSpec default_circuit_spec(FeatureKind kind, int classes,
                                        std::uint64_t structure_seed) {
    CircuitSpec spec;
    switch (kind) {
        case FeatureKind::SPR: spec.depth = 6; break;
        case FeatureKind::SA: spec.depth = 4; break;
        case FeatureKind::WA: spec.depth = 5; break;
    }
    spec.sum_components = 2;
    spec.leaf_components = 10;
    spec.repetitions = 10;
    spec.classes = classes;
    spec.num_variables = feature_dim(kind);
    // Salted per bundle so the three devices grow independent structures and
    // initializations; their residual confusions then decorrelate, which is
    // what prediction-level fusion feeds on.
    spec.structure_seed = mix_seed(structure_seed, 0x6b696e64ULL, static_cast<int>(kind) + 1);
    return spec;
}

/// Stratified index split; per class, a seeded shuffle sends the first
/// `train_fraction` to training. Every class keeps at least one sample on
/// each side when it has two or more.
inline std::pair<std::vector<std::size_t>, std::vector<std::size_t>> stratified_split(
    const std::vector<int>& labels, double train_fraction, std::uint64_t seed) {
    require(train_fraction > 0.0 && train_fraction < 1.0,
            "stratified_split: fraction must be inside (0, 1)");
    std::map<int, std::vector<std::size_t>> by_class;
    for (std::size_t i = 0; i < labels.size(); ++i) by_class[labels[i]].push_back(i);

    std::vector<std::size_t> train, test;
    for (auto& [label, idx] : by_class) {
        auto rng = make_rng(seed, 0x73706c6974ULL /* split salt */, label);
        std::shuffle(idx.begin(), idx.end(), rng);
        std::size_t n_train = static_cast<std::size_t>(
            std::floor(train_fraction * static_cast<double>(idx.size())));
        if (idx.size() >= 2) n_train = std::clamp<std::size_t>(n_train, 1, idx.size() - 1);
        for (std::size_t j = 0; j < idx.size(); ++j)
            (j < n_train ? train : test).push_back(idx[j]);
    }
    std::sort(train.begin(), train.end());
    std::sort(test.begin(), test.end());
    return {train, test};
}

inline int max_label(const std::vector<int>& labels) {
    int m = 0;
    for (int l : labels) m = std::max(m, l);
    return m;
}

/// Trains one circuit on the selected samples of a feature set.
inline EinsumCircuit train_model(const std::vector<FeatureVector>& features,
                                 const std::vector<std::size_t>& train_idx,
                                 const CircuitSpec& spec, const EmConfig& em) {
    require(!train_idx.empty(), "train_model: empty training selection");
    std::vector<std::vector<double>> xs;
    std::vector<int> labels;
    xs.reserve(train_idx.size());
    for (std::size_t i : train_idx) {
        const auto& fv = features[i];
        require(fv.label >= 1, "train_model: unlabeled sample in training set");
        xs.push_back(fv.values);
        labels.push_back(fv.label);
    }
    EinsumCircuit circuit = build_circuit(spec);
    em_fit(circuit, xs, labels, em);
    return circuit;
}

// ---------------------------------------------------------------------------
// Evaluation

struct ModelEvaluation {
    EvalReport spr, sa, wa, fused;
    double max_individual_accuracy() const {
        return std::max({spr.accuracy, sa.accuracy, wa.accuracy});
    }
};

/// Per-model and fused predictions over the test split. Posterior rows use
/// uniform priors; fusion multiplies the three posteriors (or averages them
/// when mode is Average).
inline ModelEvaluation evaluate_models(const std::array<const EinsumCircuit*, 3>& models,
                                       const std::array<const std::vector<FeatureVector>*, 3>& sets,
                                       const std::vector<std::size_t>& test_idx,
                                       FusionMode mode = FusionMode::Product,
                                       unsigned max_threads = 0) {
    require(!test_idx.empty(), "evaluate_models: empty test selection");
    const int classes = models[0]->num_classes();
    for (const auto* m : models)
        require(m->num_classes() == classes, "evaluate_models: class count mismatch");
    const std::vector<double> uniform(classes, 1.0 / classes);

    std::array<std::vector<std::pair<int, int>>, 3> per_model;
    std::vector<std::pair<int, int>> fused_pairs(test_idx.size());
    for (auto& v : per_model) v.resize(test_idx.size());

    parallel_for(
        test_idx.size(),
        [&](std::size_t j) {
            const std::size_t i = test_idx[j];
            std::vector<std::vector<double>> posts(3);
            int truth = 0;
            for (int m = 0; m < 3; ++m) {
                const auto& fv = (*sets[m])[i];
                require(fv.label >= 1 && fv.label <= classes,
                        "evaluate_models: test label out of range");
                truth = fv.label;
                posts[m] = posterior(*models[m], fv.values, uniform);
                int pred = 1;
                for (int c = 1; c < classes; ++c)
                    if (posts[m][c] > posts[m][pred - 1]) pred = c + 1;
                per_model[m][j] = {fv.label, pred};
            }
            fused_pairs[j] = {truth,
                              fuse_predict(std::span<const std::vector<double>>(posts), mode)};
        },
        max_threads);

    ModelEvaluation ev;
    ev.spr = evaluate_predictions(per_model[0], classes);
    ev.sa = evaluate_predictions(per_model[1], classes);
    ev.wa = evaluate_predictions(per_model[2], classes);
    ev.fused = evaluate_predictions(fused_pairs, classes);
    return ev;
}

// ---------------------------------------------------------------------------
// Full pipeline

struct PipelineConfig {
    WindowConfig window{};
    SmootherConfig smoother{};
    FrameConfig frame{};
    EmConfig em{};
    double train_fraction = 0.8;
    std::uint64_t split_seed = 1;
    std::uint64_t structure_seed = 1;
    FusionMode fusion_mode = FusionMode::Product;
    bool deterministic = false;
    bool drop_degenerate_from_training = true;

    unsigned threads() const { return deterministic ? 1 : 0; }
};

struct PipelineResult {
    ModelEvaluation evaluation;
    std::size_t samples = 0;
    std::size_t train_samples = 0;
    std::size_t test_samples = 0;
};

inline void write_resolved_pipeline_config(const fs::path& path, const PipelineConfig& cfg,
                                           const std::string& dataset_desc) {
    auto out = detail::open_out(path);
    out << "version " << kVersion << "\n";
    out << "dataset " << dataset_desc << "\n";
    out << "window_pairs " << cfg.window.window_pairs << "\n";
    out << "hop_pairs " << cfg.window.hop_pairs << "\n";
    out << "min_pairs " << cfg.window.min_pairs << "\n";
    out << "grid_step_deg " << fmt_double(cfg.window.grid_step_deg) << "\n";
    out << "fov_deg " << fmt_double(cfg.window.fov.theta_min_deg) << " "
        << fmt_double(cfg.window.fov.theta_max_deg) << "\n";
    out << "kalman_process_noise " << fmt_double(cfg.smoother.process_noise) << "\n";
    out << "kalman_measurement_noise " << fmt_double(cfg.smoother.measurement_noise) << "\n";
    out << "savgol_window " << cfg.frame.savgol_window << "\n";
    out << "savgol_polyorder " << cfg.frame.savgol_polyorder << "\n";
    out << "gaussian_sigma " << fmt_double(cfg.frame.gaussian_sigma) << "\n";
    out << "epochs " << cfg.em.epochs << "\n";
    out << "laplace_alpha " << fmt_double(cfg.em.laplace_alpha) << "\n";
    out << "variance_floor " << fmt_double(cfg.em.variance_floor) << "\n";
    out << "train_fraction " << fmt_double(cfg.train_fraction) << "\n";
    out << "split_seed " << cfg.split_seed << "\n";
    out << "structure_seed " << cfg.structure_seed << "\n";
    out << "fusion_mode " << (cfg.fusion_mode == FusionMode::Product ? "product" : "average")
        << "\n";
    out << "deterministic " << (cfg.deterministic ? 1 : 0) << "\n";
}

/// Frames for every capture in the dataset, in labels.tsv order.
inline std::vector<SignalFrame> dataset_to_frames(const std::vector<fs::path>& capture_paths,
                                                  const PipelineConfig& cfg) {
    std::vector<SignalFrame> frames(capture_paths.size());
    parallel_for(
        capture_paths.size(),
        [&](std::size_t i) {
            const IQCapture cap = read_capture_file(capture_paths[i]);
            frames[i] = capture_to_frame(cap, cfg.window, cfg.smoother, cfg.frame);
        },
        cfg.threads());
    return frames;
}

/// In-memory pipeline over already-loaded frames: features, split, training,
/// evaluation. Exposed separately so tests can drive it without touching the
/// filesystem.
inline PipelineResult run_pipeline_on_frames(
    const std::vector<SignalFrame>& frames, const PipelineConfig& cfg,
    std::array<EinsumCircuit, 3>* models_out = nullptr,
    std::array<std::vector<FeatureVector>, 3>* features_out = nullptr,
    std::vector<std::size_t>* test_idx_out = nullptr) {
    require(!frames.empty(), "run_pipeline_on_frames: no frames");

    const std::array<FeatureKind, 3> kinds = {FeatureKind::SPR, FeatureKind::SA, FeatureKind::WA};
    std::array<std::vector<FeatureVector>, 3> features;
    for (int m = 0; m < 3; ++m) {
        features[m].resize(frames.size());
        parallel_for(
            frames.size(),
            [&, m](std::size_t i) { features[m][i] = build_bundle(frames[i], kinds[m]); },
            cfg.threads());
    }

    std::vector<int> labels;
    labels.reserve(frames.size());
    for (const auto& f : frames) {
        require(f.label >= 1, "run_pipeline_on_frames: unlabeled frame");
        labels.push_back(f.label);
    }
    const int classes = max_label(labels);

    auto [train_idx, test_idx] = stratified_split(labels, cfg.train_fraction, cfg.split_seed);
    if (cfg.drop_degenerate_from_training) {
        std::vector<std::size_t> kept;
        for (std::size_t i : train_idx)
            if (!frames[i].degenerate) kept.push_back(i);
            else warn("dropping degenerate frame " + std::to_string(i) + " from training");
        require(!kept.empty(), "run_pipeline_on_frames: all training frames degenerate");
        train_idx = std::move(kept);
    }

    std::array<EinsumCircuit, 3> models;
    for (int m = 0; m < 3; ++m) {
        const CircuitSpec spec = default_circuit_spec(kinds[m], classes, cfg.structure_seed);
        models[m] = train_model(features[m], train_idx, spec, cfg.em);
    }

    PipelineResult result;
    result.samples = frames.size();
    result.train_samples = train_idx.size();
    result.test_samples = test_idx.size();
    result.evaluation = evaluate_models({&models[0], &models[1], &models[2]},
                                        {&features[0], &features[1], &features[2]}, test_idx,
                                        cfg.fusion_mode, cfg.threads());

    if (models_out) *models_out = std::move(models);
    if (features_out) *features_out = std::move(features);
    if (test_idx_out) *test_idx_out = test_idx;
    return result;
}

/// Full pipeline over a dataset directory; writes frames, feature sets,
/// models, metrics, confusion matrices, cost tables, and the resolved
/// configuration into out_dir.
inline PipelineResult run_pipeline(const fs::path& dataset_dir, const fs::path& out_dir,
                                   const PipelineConfig& cfg) {
    const auto capture_paths = dataset_captures(dataset_dir);
    fs::create_directories(out_dir / "models");
    write_resolved_pipeline_config(out_dir / "resolved_config.txt", cfg, dataset_dir.string());

    const auto frames = dataset_to_frames(capture_paths, cfg);
    {
        auto out = detail::open_out(out_dir / "frames.frames");
        write_frames(out, frames);
    }

    std::array<EinsumCircuit, 3> models;
    std::array<std::vector<FeatureVector>, 3> features;
    std::vector<std::size_t> test_idx;
    const PipelineResult result =
        run_pipeline_on_frames(frames, cfg, &models, &features, &test_idx);

    const std::array<const char*, 3> kind_names = {"spr", "sa", "wa"};
    for (int m = 0; m < 3; ++m) {
        auto out = detail::open_out(out_dir / (std::string("features_") + kind_names[m] +
                                               ".features"));
        write_features(out, features[m]);
        save_model_file(out_dir / "models" / (std::string(kind_names[m]) + ".model.json"),
                        models[m], to_string(features[m].front().kind));
    }

    {
        auto out = detail::open_out(out_dir / "metrics.txt");
        out << "version " << kVersion << "\n";
        out << "samples " << result.samples << " train " << result.train_samples << " test "
            << result.test_samples << "\n\n";
        out << render_eval_report(result.evaluation.spr, "model SPR");
        out << render_eval_report(result.evaluation.sa, "model SA");
        out << render_eval_report(result.evaluation.wa, "model WA");
        out << render_eval_report(result.evaluation.fused, "fused (joint likelihood)");
        const ops_t merged_macs = build_cost_report().einsum_merged_total();
        out << "\nefficiency_score (fused accuracy / log10 merged circuit MACs): "
            << fmt_double(efficiency_score(result.evaluation.fused.accuracy, merged_macs))
            << "\n";
    }
    for (const auto& [name, report] :
         std::initializer_list<std::pair<const char*, const EvalReport*>>{
             {"spr", &result.evaluation.spr},
             {"sa", &result.evaluation.sa},
             {"wa", &result.evaluation.wa},
             {"fused", &result.evaluation.fused}}) {
        auto raw = detail::open_out(out_dir / (std::string("confusion_") + name + "_raw.csv"));
        write_confusion_csv(raw, report->confusion, false);
        auto norm = detail::open_out(out_dir / (std::string("confusion_") + name + "_norm.csv"));
        write_confusion_csv(norm, report->confusion, true);
    }
    {
        const CostReport cost = build_cost_report();
        auto txt = detail::open_out(out_dir / "cost_tables.txt");
        txt << render_cost_report_text(cost);
        auto csv = detail::open_out(out_dir / "cost_tables.csv");
        csv << render_cost_report_csv(cost);
    }
    return result;
}

}  // namespace einsense
