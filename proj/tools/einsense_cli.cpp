// SPDX-License-Identifier: Apache-2.0
//
// einsense command-line front end. Subcommands cover every pipeline stage
// (simulate | aoa | preprocess | features | train | eval | fuse | cost |
// pipeline); each stage consumes and produces the documented text formats so
// stages can be run and inspected independently.
//
// Exit codes: 0 success, 1 usage error, 2 data error, 3 invariant violation.

#include <CLI11.hpp>

#include <filesystem>
#include <iostream>
#include <string>
#include <vector>

#include "einsense/pipeline.hpp"
#include "einsense/version.hpp"

namespace fs = std::filesystem;
using namespace einsense;

namespace {

struct SimFlags {
    DatasetConfig cfg;
    double nlos_gain = 0.2;
    double nlos_azimuth = 10.0;
    bool no_nlos = false;

    void attach(CLI::App* cmd) {
        cmd->add_option("--classes", cfg.classes, "Gesture classes to synthesize (1..21)")
            ->capture_default_str();
        cmd->add_option("--samples-per-class", cfg.samples_per_class, "Samples per class")
            ->capture_default_str();
        cmd->add_option("--seed", cfg.seed, "Master dataset seed")->capture_default_str();
        cmd->add_option("--duration", cfg.duration_s, "Gesture duration in seconds")
            ->capture_default_str();
        cmd->add_option("--carrier", cfg.geometry.carrier_frequency_hz, "Carrier frequency (Hz)")
            ->capture_default_str();
        cmd->add_option("--spacing", cfg.geometry.element_spacing_wavelengths,
                        "Element spacing d/lambda")
            ->capture_default_str();
        cmd->add_option("--transmit-power", cfg.sim.transmit_power, "Transmit power (linear)")
            ->capture_default_str();
        cmd->add_option("--noise-variance", cfg.sim.noise_variance, "Complex noise variance")
            ->capture_default_str();
        cmd->add_option("--reads-per-second", cfg.sim.reads_per_second, "Total slot rate")
            ->capture_default_str();
        cmd->add_option("--rss-floor", cfg.sim.misdetect_rss_floor_db,
                        "Misdetection RSS floor (dB)")
            ->capture_default_str();
        cmd->add_option("--nlos-gain", nlos_gain, "NLoS path gain ratio")->capture_default_str();
        cmd->add_option("--nlos-azimuth", nlos_azimuth, "NLoS path azimuth (deg)")
            ->capture_default_str();
        cmd->add_flag("--no-nlos", no_nlos, "Disable the NLoS path");
    }

    DatasetConfig resolve() const {
        DatasetConfig out = cfg;
        out.sim.nlos_paths.clear();
        if (!no_nlos) out.sim.nlos_paths.push_back({nlos_gain, nlos_azimuth});
        return out;
    }
};

struct StageFlags {
    WindowConfig window;
    SmootherConfig smoother;
    FrameConfig frame;

    void attach(CLI::App* cmd) {
        cmd->add_option("--window", window.window_pairs, "Paired reads per MUSIC window")
            ->capture_default_str();
        cmd->add_option("--hop", window.hop_pairs, "Window hop (pairs)")->capture_default_str();
        cmd->add_option("--min-pairs", window.min_pairs, "Minimum pairs for a valid window")
            ->capture_default_str();
        cmd->add_option("--grid-step", window.grid_step_deg, "MUSIC grid step (deg)")
            ->capture_default_str();
        cmd->add_option("--fov-min", window.fov.theta_min_deg, "Field of view lower bound (deg)")
            ->capture_default_str();
        cmd->add_option("--fov-max", window.fov.theta_max_deg, "Field of view upper bound (deg)")
            ->capture_default_str();
        cmd->add_option("--process-noise", smoother.process_noise,
                        "Kalman process noise (deg^2/s^3)")
            ->capture_default_str();
        cmd->add_option("--measurement-noise", smoother.measurement_noise,
                        "Kalman measurement noise (deg^2)")
            ->capture_default_str();
        cmd->add_option("--savgol-window", frame.savgol_window, "Savitzky-Golay window")
            ->capture_default_str();
        cmd->add_option("--savgol-polyorder", frame.savgol_polyorder, "Savitzky-Golay order")
            ->capture_default_str();
        cmd->add_option("--gaussian-sigma", frame.gaussian_sigma, "Gaussian filter sigma")
            ->capture_default_str();
    }
};

void write_cli_config(const fs::path& dir, CLI::App& app) {
    fs::create_directories(dir);
    auto out = einsense::detail::open_out(dir / "resolved_cli.txt");
    out << "# " << kVersion << "\n" << app.config_to_str(true, true);
}

int run_cli(int argc, char** argv) {
    CLI::App app{"einsense: backscatter gesture recognition with einsum circuits"};
    app.set_version_flag("--version", std::string(kVersion));
    app.set_config("--config", "", "Read options from a config file");
    app.require_subcommand(1);

    // --- simulate ----------------------------------------------------------
    auto* sim_cmd = app.add_subcommand("simulate", "Synthesize a labeled capture dataset");
    SimFlags sim_flags;
    std::string sim_out;
    sim_cmd->add_option("--out", sim_out, "Output dataset directory")->required();
    sim_flags.attach(sim_cmd);

    // --- aoa ---------------------------------------------------------------
    auto* aoa_cmd = app.add_subcommand("aoa", "Recover AoA tracks from captures");
    std::string aoa_capture, aoa_dataset, aoa_out;
    bool aoa_spectrum = false;
    StageFlags aoa_stage;
    aoa_cmd->add_option("--capture", aoa_capture, "Single capture file");
    aoa_cmd->add_option("--dataset", aoa_dataset, "Dataset directory (labels.tsv)");
    aoa_cmd->add_option("--out", aoa_out, "Output directory")->required();
    aoa_cmd->add_flag("--emit-spectrum", aoa_spectrum, "Write the MUSIC spectrum per window");
    aoa_stage.attach(aoa_cmd);

    // --- preprocess --------------------------------------------------------
    auto* pre_cmd = app.add_subcommand("preprocess", "Captures -> 35-sample SignalFrames");
    std::string pre_dataset, pre_out;
    StageFlags pre_stage;
    pre_cmd->add_option("--dataset", pre_dataset, "Dataset directory")->required();
    pre_cmd->add_option("--out", pre_out, "Output frames file")->required();
    pre_stage.attach(pre_cmd);

    // --- features ----------------------------------------------------------
    auto* feat_cmd = app.add_subcommand("features", "Frames -> feature bundles");
    std::string feat_frames, feat_out, feat_kind = "all";
    feat_cmd->add_option("--frames", feat_frames, "Frames file")->required();
    feat_cmd->add_option("--out", feat_out, "Output directory")->required();
    feat_cmd->add_option("--kind", feat_kind, "SPR, SA, WA, or all")->capture_default_str();

    // --- train -------------------------------------------------------------
    auto* train_cmd = app.add_subcommand("train", "Train one einsum circuit on a feature file");
    std::string train_features, train_out, train_spec;
    EmConfig train_em;
    std::uint64_t train_seed = 1;
    train_cmd->add_option("--features", train_features, "Feature file")->required();
    train_cmd->add_option("--out", train_out, "Output model file")->required();
    train_cmd->add_option("--epochs", train_em.epochs, "EM epochs")->capture_default_str();
    train_cmd->add_option("--alpha", train_em.laplace_alpha, "Laplace smoothing")
        ->capture_default_str();
    train_cmd->add_option("--variance-floor", train_em.variance_floor, "Leaf variance floor")
        ->capture_default_str();
    train_cmd->add_option("--structure-seed", train_seed, "Circuit structure seed")
        ->capture_default_str();
    train_cmd->add_option("--spec", train_spec, "Override circuit spec as D,K,L,R,C");
    bool train_verbose = false;
    train_cmd->add_flag("--verbose", train_verbose, "Log per-epoch likelihood");

    // --- eval --------------------------------------------------------------
    auto* eval_cmd = app.add_subcommand("eval", "Evaluate one model on a feature file");
    std::string eval_model, eval_features, eval_out;
    eval_cmd->add_option("--model", eval_model, "Model file")->required();
    eval_cmd->add_option("--features", eval_features, "Feature file")->required();
    eval_cmd->add_option("--out", eval_out, "Output directory")->required();

    // --- fuse --------------------------------------------------------------
    auto* fuse_cmd = app.add_subcommand("fuse", "Fuse three models at the prediction level");
    std::vector<std::string> fuse_models, fuse_features;
    std::string fuse_out;
    bool fuse_average = false;
    fuse_cmd->add_option("--models", fuse_models, "Three model files")->expected(3)->required();
    fuse_cmd->add_option("--features", fuse_features, "Matching three feature files")
        ->expected(3)
        ->required();
    fuse_cmd->add_option("--out", fuse_out, "Output directory")->required();
    fuse_cmd->add_flag("--average", fuse_average, "Average posteriors instead of multiplying");

    // --- cost --------------------------------------------------------------
    auto* cost_cmd = app.add_subcommand("cost", "Emit the MAC/ops cost tables");
    std::string cost_out;
    bool paper_check = false;
    cost_cmd->add_option("--out", cost_out, "Output directory for table files");
    cost_cmd->add_flag("--paper-check", paper_check,
                       "Assert every table value against the reference figures");

    // --- pipeline ----------------------------------------------------------
    auto* pipe_cmd = app.add_subcommand("pipeline", "Full dataset -> reports pipeline");
    std::string pipe_dataset, pipe_out;
    bool pipe_simulate = false, pipe_deterministic = false, pipe_average = false;
    SimFlags pipe_sim;
    StageFlags pipe_stage;
    PipelineConfig pipe_cfg;
    pipe_cmd->add_option("--dataset", pipe_dataset, "Existing dataset directory");
    pipe_cmd->add_flag("--simulate", pipe_simulate, "Synthesize the dataset first");
    pipe_cmd->add_option("--out", pipe_out, "Output directory")->required();
    pipe_sim.attach(pipe_cmd);
    pipe_stage.attach(pipe_cmd);
    pipe_cmd->add_option("--epochs", pipe_cfg.em.epochs, "EM epochs per model")
        ->capture_default_str();
    pipe_cmd->add_option("--train-fraction", pipe_cfg.train_fraction, "Stratified train share")
        ->capture_default_str();
    pipe_cmd->add_option("--split-seed", pipe_cfg.split_seed, "Split seed")
        ->capture_default_str();
    pipe_cmd->add_option("--structure-seed", pipe_cfg.structure_seed, "Circuit structure seed")
        ->capture_default_str();
    pipe_cmd->add_flag("--deterministic", pipe_deterministic,
                       "Sequential bit-exact mode (single thread)");
    pipe_cmd->add_flag("--average", pipe_average, "Average posteriors instead of multiplying");

    CLI11_PARSE(app, argc, argv);

    if (sim_cmd->parsed()) {
        const DatasetConfig cfg = sim_flags.resolve();
        const auto paths = write_dataset(cfg, sim_out);
        write_cli_config(sim_out, app);
        std::cout << "wrote " << paths.size() << " captures to " << sim_out << "\n";
        return 0;
    }

    if (aoa_cmd->parsed()) {
        std::vector<fs::path> captures;
        if (!aoa_capture.empty()) captures.push_back(aoa_capture);
        if (!aoa_dataset.empty()) {
            const auto more = dataset_captures(aoa_dataset);
            captures.insert(captures.end(), more.begin(), more.end());
        }
        if (captures.empty()) throw UsageError("aoa: need --capture or --dataset");
        fs::create_directories(aoa_out);
        for (const auto& path : captures) {
            const IQCapture cap = read_capture_file(path);
            for (int tag : cap.tags()) {
                std::vector<MusicResult> spectra;
                const AoATrack raw = music_track(cap, tag, aoa_stage.window,
                                                 aoa_spectrum ? &spectra : nullptr);
                const AoATrack smooth =
                    kalman_smooth(raw, aoa_stage.smoother.process_noise,
                                  aoa_stage.smoother.measurement_noise);
                const std::string base =
                    path.stem().string() + ".tag" + std::to_string(tag);
                {
                    auto out = einsense::detail::open_out(fs::path(aoa_out) / (base + ".raw.aoa"));
                    write_track(out, raw, tag);
                }
                {
                    auto out =
                        einsense::detail::open_out(fs::path(aoa_out) / (base + ".smoothed.aoa"));
                    write_track(out, smooth, tag);
                }
                if (aoa_spectrum) {
                    auto out =
                        einsense::detail::open_out(fs::path(aoa_out) / (base + ".spectrum"));
                    write_music_spectra(out, spectra);
                }
            }
        }
        write_cli_config(aoa_out, app);
        std::cout << "wrote AoA tracks for " << captures.size() << " captures to " << aoa_out
                  << "\n";
        return 0;
    }

    if (pre_cmd->parsed()) {
        PipelineConfig cfg;
        cfg.window = pre_stage.window;
        cfg.smoother = pre_stage.smoother;
        cfg.frame = pre_stage.frame;
        const auto paths = dataset_captures(pre_dataset);
        const auto frames = dataset_to_frames(paths, cfg);
        auto out = einsense::detail::open_out(pre_out);
        write_frames(out, frames);
        write_cli_config(fs::path(pre_out).parent_path().empty()
                             ? fs::path(".")
                             : fs::path(pre_out).parent_path(),
                         app);
        std::cout << "wrote " << frames.size() << " frames to " << pre_out << "\n";
        return 0;
    }

    if (feat_cmd->parsed()) {
        auto in = einsense::detail::open_in(feat_frames);
        const auto frames = read_frames(in);
        fs::create_directories(feat_out);
        std::vector<FeatureKind> kinds;
        if (feat_kind == "all")
            kinds = {FeatureKind::SPR, FeatureKind::SA, FeatureKind::WA};
        else
            kinds = {feature_kind_from_string(feat_kind)};
        for (FeatureKind kind : kinds) {
            std::vector<FeatureVector> features(frames.size());
            parallel_for(frames.size(),
                         [&](std::size_t i) { features[i] = build_bundle(frames[i], kind); });
            std::string name = to_string(kind);
            for (auto& ch : name) ch = static_cast<char>(std::tolower(ch));
            auto out = einsense::detail::open_out(fs::path(feat_out) /
                                                  ("features_" + name + ".features"));
            write_features(out, features);
        }
        write_cli_config(feat_out, app);
        std::cout << "wrote " << kinds.size() << " feature files to " << feat_out << "\n";
        return 0;
    }

    if (train_cmd->parsed()) {
        auto in = einsense::detail::open_in(train_features);
        const auto features = read_features(in);
        std::vector<int> labels;
        for (const auto& fv : features) labels.push_back(fv.label);
        const int classes = max_label(labels);
        CircuitSpec spec = default_circuit_spec(features.front().kind, classes, train_seed);
        if (!train_spec.empty()) {
            int d, k, l, r, cc;
            if (std::sscanf(train_spec.c_str(), "%d,%d,%d,%d,%d", &d, &k, &l, &r, &cc) != 5)
                throw UsageError("train: --spec must be D,K,L,R,C");
            spec.depth = d;
            spec.sum_components = k;
            spec.leaf_components = l;
            spec.repetitions = r;
            spec.classes = cc;
        }
        train_em.verbose = train_verbose;
        std::vector<std::size_t> all_idx(features.size());
        std::iota(all_idx.begin(), all_idx.end(), 0);
        const EinsumCircuit model = train_model(features, all_idx, spec, train_em);
        save_model_file(train_out, model, to_string(features.front().kind));
        std::cout << "trained " << to_string(features.front().kind) << " model ("
                  << model.meta.epochs_run << " epochs, final loglik "
                  << fmt_double(model.meta.final_train_loglik) << ") -> " << train_out << "\n";
        return 0;
    }

    if (eval_cmd->parsed()) {
        const EinsumCircuit model = load_model_file(eval_model);
        auto in = einsense::detail::open_in(eval_features);
        const auto features = read_features(in);
        const int classes = model.num_classes();
        std::vector<std::pair<int, int>> pairs(features.size());
        parallel_for(features.size(), [&](std::size_t i) {
            pairs[i] = {features[i].label, predict(model, features[i].values)};
        });
        const EvalReport report = evaluate_predictions(pairs, classes);
        fs::create_directories(eval_out);
        {
            auto out = einsense::detail::open_out(fs::path(eval_out) / "metrics.txt");
            out << "version " << kVersion << "\n";
            out << render_eval_report(report, "model " + fs::path(eval_model).stem().string());
        }
        auto raw = einsense::detail::open_out(fs::path(eval_out) / "confusion_raw.csv");
        write_confusion_csv(raw, report.confusion, false);
        auto norm = einsense::detail::open_out(fs::path(eval_out) / "confusion_norm.csv");
        write_confusion_csv(norm, report.confusion, true);
        write_cli_config(eval_out, app);
        std::cout << render_eval_report(report, "eval");
        return 0;
    }

    if (fuse_cmd->parsed()) {
        std::array<EinsumCircuit, 3> models;
        std::array<std::vector<FeatureVector>, 3> sets;
        for (int m = 0; m < 3; ++m) {
            models[m] = load_model_file(fuse_models[m]);
            auto in = einsense::detail::open_in(fuse_features[m]);
            sets[m] = read_features(in);
        }
        const std::size_t n = sets[0].size();
        require(sets[1].size() == n && sets[2].size() == n,
                "fuse: feature files disagree on sample count");
        std::vector<std::size_t> idx(n);
        std::iota(idx.begin(), idx.end(), 0);
        const ModelEvaluation ev = evaluate_models(
            {&models[0], &models[1], &models[2]}, {&sets[0], &sets[1], &sets[2]}, idx,
            fuse_average ? FusionMode::Average : FusionMode::Product);
        fs::create_directories(fuse_out);
        {
            auto out = einsense::detail::open_out(fs::path(fuse_out) / "metrics.txt");
            out << "version " << kVersion << "\n";
            out << render_eval_report(ev.spr, "model 1");
            out << render_eval_report(ev.sa, "model 2");
            out << render_eval_report(ev.wa, "model 3");
            out << render_eval_report(ev.fused, fuse_average ? "fused (average)"
                                                             : "fused (joint likelihood)");
        }
        auto raw = einsense::detail::open_out(fs::path(fuse_out) / "confusion_fused_raw.csv");
        write_confusion_csv(raw, ev.fused.confusion, false);
        auto norm = einsense::detail::open_out(fs::path(fuse_out) / "confusion_fused_norm.csv");
        write_confusion_csv(norm, ev.fused.confusion, true);
        write_cli_config(fuse_out, app);
        std::cout << render_eval_report(ev.fused, "fused");
        return 0;
    }

    if (cost_cmd->parsed()) {
        const CostReport report = build_cost_report();
        std::cout << render_cost_report_text(report);
        if (!cost_out.empty()) {
            fs::create_directories(cost_out);
            auto txt = einsense::detail::open_out(fs::path(cost_out) / "cost_tables.txt");
            txt << render_cost_report_text(report);
            auto csv = einsense::detail::open_out(fs::path(cost_out) / "cost_tables.csv");
            csv << render_cost_report_csv(report);
            write_cli_config(cost_out, app);
        }
        if (paper_check) {
            const auto failures = cost_reference_check();
            if (!failures.empty()) {
                for (const auto& f : failures) std::cerr << "MISMATCH: " << f << "\n";
                return 3;
            }
            std::cout << "paper-check: all table values match\n";
        }
        return 0;
    }

    if (pipe_cmd->parsed()) {
        pipe_cfg.window = pipe_stage.window;
        pipe_cfg.smoother = pipe_stage.smoother;
        pipe_cfg.frame = pipe_stage.frame;
        pipe_cfg.deterministic = pipe_deterministic;
        pipe_cfg.fusion_mode = pipe_average ? FusionMode::Average : FusionMode::Product;

        fs::path dataset_dir;
        if (pipe_simulate) {
            dataset_dir = fs::path(pipe_out) / "dataset";
            const DatasetConfig cfg = pipe_sim.resolve();
            write_dataset(cfg, dataset_dir, pipe_cfg.threads());
        } else {
            if (pipe_dataset.empty())
                throw UsageError("pipeline: need --dataset DIR or --simulate");
            dataset_dir = pipe_dataset;
        }

        const PipelineResult result = run_pipeline(dataset_dir, pipe_out, pipe_cfg);
        write_cli_config(pipe_out, app);
        std::cout << "samples " << result.samples << " (train " << result.train_samples
                  << ", test " << result.test_samples << ")\n";
        std::cout << render_eval_report(result.evaluation.spr, "model SPR");
        std::cout << render_eval_report(result.evaluation.sa, "model SA");
        std::cout << render_eval_report(result.evaluation.wa, "model WA");
        std::cout << render_eval_report(result.evaluation.fused, "fused");
        return 0;
    }

    throw UsageError("no subcommand given");
}

}  // namespace

int main(int argc, char** argv) {
    try {
        return run_cli(argc, argv);
    } catch (const CLI::ParseError&) {
        return 1;  // CLI11_PARSE handles printing; kept for safety
    } catch (const UsageError& e) {
        std::cerr << "usage error: " << e.what() << "\n";
        return 1;
    } catch (const InvariantError& e) {
        std::cerr << "invariant violation: " << e.what() << "\n";
        return 3;
    } catch (const DataError& e) {
        std::cerr << "data error: " << e.what() << "\n";
        return 2;
    } catch (const std::filesystem::filesystem_error& e) {
        std::cerr << "data error: " << e.what() << "\n";
        return 2;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 2;
    }
}
