// pipeline.hpp
// End-to-end drivers behind the CLI subcommands: scene simulation, mask-net
// training, keyword-cued enhancement and signal-level evaluation. The
// enhancement path estimates the MVDR filter exactly once per utterance,
// from the keyword region only, and applies it unchanged from the keyword
// onset onward; frames before the keyword pass through from channel 1.

#pragma once

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <map>
#include <string>
#include <vector>

#include <json.hpp>

#include "kwbeam/audio_io.hpp"
#include "kwbeam/beamformer.hpp"
#include "kwbeam/error.hpp"
#include "kwbeam/features.hpp"
#include "kwbeam/mask_net.hpp"
#include "kwbeam/metrics.hpp"
#include "kwbeam/parallel.hpp"
#include "kwbeam/simulator.hpp"
#include "kwbeam/stft.hpp"

namespace kwbeam {

struct SimulateDefaults {
    std::size_t mics = 4;
    double spacing_m = 0.05;
    double speed_of_sound = 343.0;
    double snr_mean_db = 3.2;  // training-mixture SNR statistics
    double snr_std_db = 3.4;
};

struct PipelineConfig {
    StftConfig stft;
    FeatureConfig feature;
    TrainConfig train;
    BeamformOptions beamform;
    SdriOptions metrics;
    SimulateDefaults simulate;
    unsigned jobs = 0;  // 0 keeps the hardware default

    ArrayGeometry geometry() const {
        ArrayGeometry g = ArrayGeometry::uniform_linear(simulate.mics, simulate.spacing_m);
        g.speed_of_sound = simulate.speed_of_sound;
        return g;
    }

    void validate() const {
        stft.validate();
        feature.validate();
        train.validate();
        require(feature.base_dim <= stft.fft_bins(),
                "config: feature.base_dim exceeds the stft bin count");
        require(simulate.mics >= 2, "config: simulate.mics must be at least 2");
        require(beamform.delta_loading >= 0.0, "config: negative diagonal loading");
        require(beamform.power_iter_tol > 0.0 && beamform.power_iter_max > 0,
                "config: bad power-iteration settings");
    }
};

// Flat "key = value" config file; '#' starts a comment. Unknown keys are
// rejected so typos cannot silently fall back to defaults. Precedence is
// handled by the CLI: flags > file > built-in defaults.
inline void apply_config_line(PipelineConfig &cfg, const std::string &key,
                              const std::string &value) {
    auto as_double = [&](const std::string &v) {
        std::size_t pos = 0;
        const double d = std::stod(v, &pos);
        require(pos == v.size(), "config: bad number for " + key + ": " + v);
        return d;
    };
    auto as_int = [&](const std::string &v) { return static_cast<long long>(as_double(v)); };
    auto as_bool = [&](const std::string &v) {
        if (v == "true" || v == "1") return true;
        if (v == "false" || v == "0") return false;
        throw ValidationError("config: bad boolean for " + key + ": " + v);
    };

    if (key == "stft.frame_len") cfg.stft.frame_len = static_cast<int>(as_int(value));
    else if (key == "stft.frame_shift") cfg.stft.frame_shift = static_cast<int>(as_int(value));
    else if (key == "feature.base_dim") cfg.feature.base_dim = static_cast<int>(as_int(value));
    else if (key == "feature.left_context")
        cfg.feature.left_context = static_cast<int>(as_int(value));
    else if (key == "feature.right_context")
        cfg.feature.right_context = static_cast<int>(as_int(value));
    else if (key == "train.batch_size")
        cfg.train.batch_size = static_cast<std::size_t>(as_int(value));
    else if (key == "train.lr") cfg.train.learning_rate = as_double(value);
    else if (key == "train.epochs") cfg.train.epochs = static_cast<std::size_t>(as_int(value));
    else if (key == "train.dropout_input") cfg.train.dropout_input = as_double(value);
    else if (key == "train.dropout_hidden") cfg.train.dropout_hidden = as_double(value);
    else if (key == "train.seed") cfg.train.seed = static_cast<std::uint64_t>(as_int(value));
    else if (key == "beamform.delta_loading") cfg.beamform.delta_loading = as_double(value);
    else if (key == "beamform.power_iter_tol") cfg.beamform.power_iter_tol = as_double(value);
    else if (key == "beamform.power_iter_max")
        cfg.beamform.power_iter_max = static_cast<int>(as_int(value));
    else if (key == "metrics.mask_squared") cfg.metrics.mask_squared = as_bool(value);
    else if (key == "simulate.mics") cfg.simulate.mics = static_cast<std::size_t>(as_int(value));
    else if (key == "simulate.spacing_m") cfg.simulate.spacing_m = as_double(value);
    else if (key == "simulate.speed_of_sound")
        cfg.simulate.speed_of_sound = as_double(value);
    else if (key == "simulate.snr_mean_db") cfg.simulate.snr_mean_db = as_double(value);
    else if (key == "simulate.snr_std_db") cfg.simulate.snr_std_db = as_double(value);
    else if (key == "jobs") cfg.jobs = static_cast<unsigned>(as_int(value));
    else
        throw ValidationError("config: unknown key " + key);
}

inline void apply_config_file(PipelineConfig &cfg, const std::string &path) {
    std::ifstream in(path);
    if (!in) throw IoError("config: cannot open " + path);
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        const std::size_t hash = line.find('#');
        if (hash != std::string::npos) line.erase(hash);
        const std::size_t eq = line.find('=');
        if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
        require(eq != std::string::npos,
                "config: missing '=' at line " + std::to_string(lineno) + " of " + path);
        auto trim = [](std::string s) {
            const std::size_t a = s.find_first_not_of(" \t\r");
            const std::size_t b = s.find_last_not_of(" \t\r");
            return a == std::string::npos ? std::string() : s.substr(a, b - a + 1);
        };
        apply_config_line(cfg, trim(line.substr(0, eq)), trim(line.substr(eq + 1)));
    }
}

// ---- simulate --------------------------------------------------------------

struct SimulateOptions {
    std::string scene_spec_path;  // JSON array of scenes; empty -> batch mode
    std::string out_dir;
    // batch mode, shaped like the simu-set protocol: targets x interferers
    std::size_t batch_count = 0;
    int batch_targets = 4;
    int batch_interferers = 4;
    double batch_snr_db = 0.0;
    double batch_min_separation_deg = 30.0;
    std::uint64_t seed = 0;
};

inline std::vector<SceneSpec> load_scene_specs(const std::string &path) {
    std::ifstream in(path);
    if (!in) throw IoError("scenes: cannot open " + path);
    nlohmann::json j;
    try {
        in >> j;
    } catch (const nlohmann::json::exception &e) {
        throw IoError("scenes: bad JSON in " + path + ": " + e.what());
    }
    if (j.is_object() && j.contains("scenes")) j = j["scenes"];
    require(j.is_array() && !j.empty(), "scenes: expected a non-empty array in " + path);
    std::vector<SceneSpec> specs;
    for (const auto &item : j) specs.push_back(scene_from_json(item));
    return specs;
}

// Batch generator mirroring the simu-set protocol shape: every scene pairs
// one of `targets` target identities with one of `interferers` interferer
// identities, at seeded azimuths kept at least `min_separation` apart.
inline std::vector<SceneSpec> batch_scene_specs(std::size_t count, int targets, int interferers,
                                                double snr_db, double min_separation_deg,
                                                std::uint64_t seed) {
    require(count > 0 && targets > 0 && interferers > 0, "scenes: empty batch request");
    std::vector<SceneSpec> specs;
    specs.reserve(count);
    for (std::size_t i = 0; i < count; ++i) {
        Rng rng(hash_seed(seed, i));
        SceneSpec s;
        char name[64];
        std::snprintf(name, sizeof(name), "scene-%04zu", i);
        s.id = name;
        s.target_speaker = static_cast<int>(i % static_cast<std::size_t>(targets));
        s.interferer_speaker =
            targets + static_cast<int>((i / static_cast<std::size_t>(targets)) %
                                       static_cast<std::size_t>(interferers));
        s.snr_db = snr_db;
        s.seed = hash_seed(seed, 1000 + i);
        s.target_azimuth_deg = rng.uniform(-60.0, 60.0);
        do {
            s.interferer_azimuth_deg = rng.uniform(-60.0, 60.0);
        } while (std::abs(s.interferer_azimuth_deg - s.target_azimuth_deg) <
                 min_separation_deg);
        specs.push_back(std::move(s));
    }
    return specs;
}

inline std::vector<std::string> run_simulate(const PipelineConfig &cfg,
                                             const SimulateOptions &opts) {
    cfg.validate();
    require(!opts.out_dir.empty(), "simulate: no output directory");
    std::vector<SceneSpec> specs;
    if (!opts.scene_spec_path.empty()) {
        specs = load_scene_specs(opts.scene_spec_path);
    } else {
        require(opts.batch_count > 0, "simulate: need a scene spec file or a batch count");
        specs = batch_scene_specs(opts.batch_count, opts.batch_targets, opts.batch_interferers,
                                  opts.batch_snr_db, opts.batch_min_separation_deg, opts.seed);
    }

    const ArrayGeometry geometry = cfg.geometry();
    std::vector<std::string> scene_dirs;
    for (const SceneSpec &spec : specs) {
        const SceneRender render = build_eval_scene(spec, geometry, spec.seed);
        const std::filesystem::path dir = std::filesystem::path(opts.out_dir) / spec.id;
        std::filesystem::create_directories(dir);
        write_wav(render.mixture, (dir / "mixture.wav").string());
        write_wav(render.clean_target, (dir / "target.wav").string());
        write_wav(render.clean_interference, (dir / "interf.wav").string());
        save_regions_tsv({{"mixture.wav", render.keyword_region}},
                         (dir / "regions.tsv").string());
        std::ofstream spec_out(dir / "scene.json");
        spec_out << scene_to_json(spec).dump(2) << "\n";
        scene_dirs.push_back(dir.string());
    }
    return scene_dirs;
}

// ---- train -----------------------------------------------------------------

struct TrainOptions {
    std::string manifest_path;  // JSONL of keyword/background entries
    // synthetic corpus used when no manifest is given
    std::size_t synth_keywords = 64;
    std::size_t synth_backgrounds = 64;
    int synth_speakers = 8;
    std::size_t mixture_count = 500;
    std::string model_out;
    std::string loss_log_out;  // CSV "epoch,mean_loss"; optional
    std::uint64_t seed = 0;
};

struct TrainResult {
    MaskNetModel model;
    std::vector<double> epoch_losses;
};

inline TrainResult run_train(const PipelineConfig &cfg, const TrainOptions &opts) {
    cfg.validate();
    std::vector<SourceUtterance> keywords, backgrounds;
    if (!opts.manifest_path.empty()) {
        const auto entries = load_manifest(opts.manifest_path);
        validate_manifest_paths(entries);
        for (const ManifestEntry &e : entries) {
            if (!e.keyword_path.empty()) {
                AudioBuffer b = read_wav(e.keyword_path);
                b.validate_pipeline_rate();
                keywords.push_back({b.channels[0], e.speaker});
            }
            if (!e.background_path.empty()) {
                AudioBuffer b = read_wav(e.background_path);
                b.validate_pipeline_rate();
                backgrounds.push_back({b.channels[0], e.background_speaker.empty()
                                                          ? e.speaker
                                                          : e.background_speaker});
            }
        }
        require(!keywords.empty(), "train: manifest lists no keyword recordings");
        require(!backgrounds.empty(), "train: manifest lists no background recordings");
    } else {
        keywords = synth_corpus(SourceKind::Keyword, opts.synth_keywords, opts.synth_speakers,
                                hash_seed(opts.seed, 0xA), "kw");
        backgrounds = synth_corpus(SourceKind::Background, opts.synth_backgrounds,
                                   opts.synth_speakers, hash_seed(opts.seed, 0xB), "bg");
    }

    std::vector<TrainExample> dataset =
        build_training_set(keywords, backgrounds, opts.mixture_count, cfg.simulate.snr_mean_db,
                           cfg.simulate.snr_std_db, hash_seed(opts.seed, 0xC), cfg.stft);

    StatsAccumulator acc(cfg.feature.spliced_dim());
    std::vector<double> row(cfg.feature.spliced_dim());
    for (const TrainExample &ex : dataset)
        for (std::size_t t = 0; t < ex.mixture_mag.frames; ++t) {
            splice_row(ex.mixture_mag, t, cfg.feature, row.data());
            acc.add_row(row.data());
        }

    TrainResult result;
    result.model = init_model(cfg.feature, cfg.train.seed);
    result.model.norm_stats = acc.finalize();
    result.epoch_losses = train(result.model, dataset, cfg.train, cfg.feature);

    if (!opts.model_out.empty()) save_model(result.model, opts.model_out);
    if (!opts.loss_log_out.empty()) {
        std::ofstream log(opts.loss_log_out);
        if (!log) throw IoError("train: cannot open loss log " + opts.loss_log_out);
        log << "epoch,mean_loss\n";
        char buf[64];
        for (std::size_t e = 0; e < result.epoch_losses.size(); ++e) {
            std::snprintf(buf, sizeof(buf), "%zu,%.12f\n", e + 1, result.epoch_losses[e]);
            log << buf;
        }
    }
    return result;
}

// ---- enhance ---------------------------------------------------------------

struct EnhanceOptions {
    std::string model_path;
    std::string mixture_wav;
    std::string regions_tsv;
    std::string out_wav;
    std::string diagnostics_out;  // defaults to <out_wav>.diag.json
    std::string filter_out;       // optional KWBF1 dump
    // oracle mode: IBM from clean references instead of the estimated masks
    bool oracle = false;
    std::string clean_target_wav;
    std::string clean_interference_wav;
};

struct EnhanceResult {
    BeamformDiagnostics diagnostics;
    KeywordRegion region;
    std::size_t frames = 0;
    std::size_t region_start_frame = 0;
};

inline KeywordRegion lookup_region(const std::map<std::string, KeywordRegion> &regions,
                                   const std::string &wav_path) {
    auto it = regions.find(wav_path);
    if (it == regions.end())
        it = regions.find(std::filesystem::path(wav_path).filename().string());
    require(it != regions.end(), "enhance: no region entry for " + wav_path);
    return it->second;
}

namespace detail {

// Per-channel IBM over the keyword region from clean references, median
// fused: the Oracle (IBM) configuration.
inline void oracle_masks(const MultichannelSpectrogram &y, const AudioBuffer &clean_target,
                         const AudioBuffer &clean_interference,
                         std::span<const std::size_t> region, const StftConfig &stft_cfg,
                         Matrix &keyword_full, Matrix &non_keyword_full) {
    clean_target.validate_pipeline_rate();
    clean_interference.validate_pipeline_rate();
    require(clean_target.num_channels() == y.num_channels() &&
                clean_interference.num_channels() == y.num_channels(),
            "oracle: clean references must match the mixture channel count");
    const std::size_t c = y.num_channels();
    std::vector<Matrix> kmasks(c), nmasks(c);
    for (std::size_t ch = 0; ch < c; ++ch) {
        MagnitudeSpectrogram t_mag = magnitude(stft(clean_target.channels[ch], stft_cfg));
        MagnitudeSpectrogram n_mag = magnitude(stft(clean_interference.channels[ch], stft_cfg));
        require(t_mag.frames >= y.frames() && n_mag.frames >= y.frames(),
                "oracle: clean references shorter than the mixture");
        MagnitudeSpectrogram t_region(region.size(), t_mag.bins);
        MagnitudeSpectrogram n_region(region.size(), n_mag.bins);
        for (std::size_t i = 0; i < region.size(); ++i) {
            std::memcpy(t_region.row(i), t_mag.row(region[i]), t_mag.bins * sizeof(double));
            std::memcpy(n_region.row(i), n_mag.row(region[i]), n_mag.bins * sizeof(double));
        }
        IbmPair ibm = compute_ibm(t_region, n_region);
        kmasks[ch] = std::move(ibm.keyword);
        nmasks[ch] = std::move(ibm.non_keyword);
    }
    keyword_full = expand_region_mask(median_mask(kmasks), region, y.frames(), y.bins());
    non_keyword_full = expand_region_mask(median_mask(nmasks), region, y.frames(), y.bins());
}

}  // namespace detail

inline EnhanceResult run_enhance(const PipelineConfig &cfg, const EnhanceOptions &opts) {
    cfg.validate();
    AudioBuffer mixture = read_wav(opts.mixture_wav);
    mixture.validate_pipeline_rate();
    require(mixture.num_channels() >= 2, "enhance: beamforming requires a multichannel mixture");

    const KeywordRegion region =
        lookup_region(load_regions_tsv(opts.regions_tsv), opts.mixture_wav);
    require(region.end_s <= mixture.duration_s() + 1e-9,
            "enhance: keyword region extends past the end of " + opts.mixture_wav);

    const MultichannelSpectrogram y = stft_multichannel(mixture, cfg.stft);
    const std::vector<std::size_t> frames =
        region_to_frames(region, cfg.stft.frame_len, cfg.stft.frame_shift, y.frames());

    EnhanceResult result;
    result.region = region;
    result.frames = y.frames();
    result.region_start_frame = frames.front();

    // exactly one filter estimation per utterance
    BeamformerFilter gamma;
    if (opts.oracle) {
        require(!opts.clean_target_wav.empty() && !opts.clean_interference_wav.empty(),
                "enhance: oracle mode needs clean target and interference references");
        AudioBuffer clean_t = read_wav(opts.clean_target_wav);
        AudioBuffer clean_i = read_wav(opts.clean_interference_wav);
        Matrix kmask, nmask;
        detail::oracle_masks(y, clean_t, clean_i, frames, cfg.stft, kmask, nmask);
        gamma = estimate_from_masks(y, kmask, nmask, frames, cfg.beamform, &result.diagnostics);
    } else {
        require(!opts.model_path.empty(), "enhance: no model given");
        const MaskNetModel model = load_model(opts.model_path);
        gamma = estimate_from_keyword(y, model, frames, cfg.feature, cfg.beamform,
                                      &result.diagnostics);
    }

    const ComplexSpectrogram filtered = apply_filter(gamma, y);
    ComplexSpectrogram out_spec(y.frames(), y.bins(), cfg.stft);
    for (std::size_t t = 0; t < y.frames(); ++t) {
        const bool before_keyword = t < result.region_start_frame;
        const ComplexSpectrogram &src = before_keyword ? y.channels[0] : filtered;
        std::memcpy(out_spec.row(t), src.row(t), y.bins() * sizeof(cplx));
    }

    AudioBuffer out;
    out.channels.push_back(istft(out_spec, cfg.stft));
    write_wav(out, opts.out_wav);
    if (!opts.filter_out.empty()) save_filter(gamma, opts.filter_out);

    const std::string diag_path =
        opts.diagnostics_out.empty() ? opts.out_wav + ".diag.json" : opts.diagnostics_out;
    nlohmann::json diag;
    diag["mixture"] = opts.mixture_wav;
    diag["output"] = opts.out_wav;
    diag["oracle_masks"] = opts.oracle;
    diag["region_start_s"] = region.start_s;
    diag["region_end_s"] = region.end_s;
    diag["region_frames"] = frames.size();
    diag["total_frames"] = y.frames();
    diag["filter_estimations"] = result.diagnostics.filter_estimations;
    diag["degenerate_bins"] = result.diagnostics.degenerate_bins;
    diag["loaded_fallback_bins"] = result.diagnostics.loaded_fallback_bins;
    diag["keyword_mask_mean"] = result.diagnostics.keyword_mask_mean;
    diag["non_keyword_mask_mean"] = result.diagnostics.non_keyword_mask_mean;
    std::ofstream diag_out(diag_path);
    if (!diag_out) throw IoError("enhance: cannot write diagnostics " + diag_path);
    diag_out << diag.dump(2) << "\n";
    return result;
}

// ---- evaluate ----------------------------------------------------------------

struct EvaluateOptions {
    std::string model_path;
    std::string scenes_dir;
    std::string csv_out;
    std::string json_out;
};

struct SceneScores {
    std::string scene_id;
    double sdri_mk = 0.0, xi_mk = 0.0;
    double sdri_ibmk = 0.0, xi_ibmk = 0.0;
    double sdri_mn = 0.0, xi_mn = 0.0;
    double sdri_ibmn = 0.0, xi_ibmn = 0.0;
    double sir_improvement_estimated = 0.0;
    double sir_improvement_oracle = 0.0;
    double input_sir_db = 0.0;
};

struct Aggregate {
    double mean = 0.0;
    double stddev = 0.0;
};

struct EvaluateResult {
    std::vector<SceneScores> scenes;
    Aggregate sdri_mk, sdri_ibmk, sdri_mn, sdri_ibmn;
    Aggregate sir_estimated, sir_oracle;
};

namespace detail {

inline Aggregate aggregate(const std::vector<SceneScores> &rows,
                           double SceneScores::*field) {
    Aggregate a;
    if (rows.empty()) return a;
    for (const auto &r : rows) a.mean += r.*field;
    a.mean /= static_cast<double>(rows.size());
    for (const auto &r : rows) a.stddev += (r.*field - a.mean) * (r.*field - a.mean);
    a.stddev = std::sqrt(a.stddev / static_cast<double>(rows.size()));
    return a;
}

inline MagnitudeSpectrogram take_bins(const MagnitudeSpectrogram &mag, std::size_t bins) {
    MagnitudeSpectrogram out(mag.frames, bins);
    for (std::size_t t = 0; t < mag.frames; ++t)
        std::memcpy(out.row(t), mag.row(t), bins * sizeof(double));
    return out;
}

inline Matrix gather_rows(const Matrix &m, std::span<const std::size_t> rows) {
    Matrix out(rows.size(), m.cols());
    for (std::size_t i = 0; i < rows.size(); ++i)
        std::memcpy(out.row(i), m.row(rows[i]), m.cols() * sizeof(double));
    return out;
}

inline MagnitudeSpectrogram gather_rows(const MagnitudeSpectrogram &m,
                                        std::span<const std::size_t> rows) {
    MagnitudeSpectrogram out(rows.size(), m.bins);
    for (std::size_t i = 0; i < rows.size(); ++i)
        std::memcpy(out.row(i), m.row(rows[i]), m.bins * sizeof(double));
    return out;
}

}  // namespace detail

// Scores one rendered scene. Mask SDRi is measured on the reference channel
// over the keyword region, on the mask's 256 bins, for the four mask kinds
// of the evaluation protocol; the desired/undesired roles swap for the
// non-keyword masks. Output SIR is measured over the frames after the
// keyword (the command part), once with each filter family.
inline SceneScores evaluate_scene(const PipelineConfig &cfg, const MaskNetModel &model,
                                  const std::string &scene_dir) {
    const std::filesystem::path dir(scene_dir);
    AudioBuffer mixture = read_wav((dir / "mixture.wav").string());
    AudioBuffer clean_t = read_wav((dir / "target.wav").string());
    AudioBuffer clean_i = read_wav((dir / "interf.wav").string());
    mixture.validate_pipeline_rate();
    const KeywordRegion region =
        lookup_region(load_regions_tsv((dir / "regions.tsv").string()), "mixture.wav");

    const MultichannelSpectrogram y = stft_multichannel(mixture, cfg.stft);
    const MultichannelSpectrogram yt = stft_multichannel(clean_t, cfg.stft);
    const MultichannelSpectrogram yi = stft_multichannel(clean_i, cfg.stft);
    const std::vector<std::size_t> keyword_frames =
        region_to_frames(region, cfg.stft.frame_len, cfg.stft.frame_shift, y.frames());

    std::vector<std::size_t> command_frames;
    for (std::size_t t = keyword_frames.back() + 1; t < y.frames(); ++t)
        command_frames.push_back(t);
    require(!command_frames.empty(), "evaluate: no frames after the keyword region");

    SceneScores scores;
    scores.scene_id = dir.filename().string();

    // reference-channel magnitudes over the keyword region, mask bins only
    const std::size_t mask_bins = kMaskDim;
    const MagnitudeSpectrogram mix_mag = magnitude(y.channels[0]);
    const MagnitudeSpectrogram t_mag = magnitude(yt.channels[0]);
    const MagnitudeSpectrogram n_mag = magnitude(yi.channels[0]);
    const MagnitudeSpectrogram t_region =
        detail::take_bins(detail::gather_rows(t_mag, keyword_frames), mask_bins);
    const MagnitudeSpectrogram n_region =
        detail::take_bins(detail::gather_rows(n_mag, keyword_frames), mask_bins);

    const MaskPair estimated =
        forward(model, detail::gather_rows(mix_mag, keyword_frames), cfg.feature);
    const IbmPair ibm = compute_ibm(t_region, n_region);

    const auto region_rows = [&](std::size_t n) {
        std::vector<std::size_t> r(n);
        for (std::size_t i = 0; i < n; ++i) r[i] = i;
        return r;
    };
    const std::vector<std::size_t> rows = region_rows(keyword_frames.size());

    SdriReport r1 = sdri(estimated.keyword, t_region, n_region, rows, cfg.metrics);
    scores.sdri_mk = r1.sdri_db;
    scores.xi_mk = r1.xi_db;
    SdriReport r2 = sdri(ibm.keyword, t_region, n_region, rows, cfg.metrics);
    scores.sdri_ibmk = r2.sdri_db;
    scores.xi_ibmk = r2.xi_db;
    // the keyword signal is the undesired one for the non-keyword masks
    SdriReport r3 = sdri(estimated.non_keyword, n_region, t_region, rows, cfg.metrics);
    scores.sdri_mn = r3.sdri_db;
    scores.xi_mn = r3.xi_db;
    SdriReport r4 = sdri(ibm.non_keyword, n_region, t_region, rows, cfg.metrics);
    scores.sdri_ibmn = r4.sdri_db;
    scores.xi_ibmn = r4.xi_db;

    // beamformers from both mask families
    BeamformDiagnostics diag_est;
    const BeamformerFilter gamma_est =
        estimate_from_keyword(y, model, keyword_frames, cfg.feature, cfg.beamform, &diag_est);
    Matrix kmask, nmask;
    detail::oracle_masks(y, clean_t, clean_i, keyword_frames, cfg.stft, kmask, nmask);
    BeamformDiagnostics diag_orc;
    const BeamformerFilter gamma_orc =
        estimate_from_masks(y, kmask, nmask, keyword_frames, cfg.beamform, &diag_orc);

    const SirReport sir_est = output_sir(gamma_est, yt, yi, command_frames);
    const SirReport sir_orc = output_sir(gamma_orc, yt, yi, command_frames);
    scores.sir_improvement_estimated = sir_est.improvement_db;
    scores.sir_improvement_oracle = sir_orc.improvement_db;
    scores.input_sir_db = sir_est.input_sir_db;
    return scores;
}

inline EvaluateResult run_evaluate(const PipelineConfig &cfg, const EvaluateOptions &opts) {
    cfg.validate();
    require(!opts.model_path.empty(), "evaluate: no model given");
    const MaskNetModel model = load_model(opts.model_path);

    std::vector<std::string> scene_dirs;
    for (const auto &entry : std::filesystem::directory_iterator(opts.scenes_dir))
        if (entry.is_directory() && std::filesystem::exists(entry.path() / "mixture.wav"))
            scene_dirs.push_back(entry.path().string());
    std::sort(scene_dirs.begin(), scene_dirs.end());
    require(!scene_dirs.empty(), "evaluate: no scenes under " + opts.scenes_dir);

    EvaluateResult result;
    for (const std::string &dir : scene_dirs)
        result.scenes.push_back(evaluate_scene(cfg, model, dir));

    result.sdri_mk = detail::aggregate(result.scenes, &SceneScores::sdri_mk);
    result.sdri_ibmk = detail::aggregate(result.scenes, &SceneScores::sdri_ibmk);
    result.sdri_mn = detail::aggregate(result.scenes, &SceneScores::sdri_mn);
    result.sdri_ibmn = detail::aggregate(result.scenes, &SceneScores::sdri_ibmn);
    result.sir_estimated = detail::aggregate(result.scenes, &SceneScores::sir_improvement_estimated);
    result.sir_oracle = detail::aggregate(result.scenes, &SceneScores::sir_improvement_oracle);

    if (!opts.csv_out.empty()) {
        std::ofstream csv(opts.csv_out);
        if (!csv) throw IoError("evaluate: cannot write " + opts.csv_out);
        csv << "scene_id,mask_type,sdri_db,xi_db,sir_improvement_db\n";
        char buf[256];
        for (const SceneScores &s : result.scenes) {
            const struct {
                const char *name;
                double sdri, xi, sir;
            } rows[4] = {
                {"m_k", s.sdri_mk, s.xi_mk, s.sir_improvement_estimated},
                {"ibm_k", s.sdri_ibmk, s.xi_ibmk, s.sir_improvement_oracle},
                {"m_n", s.sdri_mn, s.xi_mn, s.sir_improvement_estimated},
                {"ibm_n", s.sdri_ibmn, s.xi_ibmn, s.sir_improvement_oracle},
            };
            for (const auto &row : rows) {
                std::snprintf(buf, sizeof(buf), "%s,%s,%.6f,%.6f,%.6f\n", s.scene_id.c_str(),
                              row.name, row.sdri, row.xi, row.sir);
                csv << buf;
            }
        }
    }
    if (!opts.json_out.empty()) {
        nlohmann::json j;
        auto agg = [](const Aggregate &a) {
            return nlohmann::json{{"mean", a.mean}, {"stddev", a.stddev}};
        };
        j["scene_count"] = result.scenes.size();
        j["sdri"] = {{"m_k", agg(result.sdri_mk)},
                     {"ibm_k", agg(result.sdri_ibmk)},
                     {"m_n", agg(result.sdri_mn)},
                     {"ibm_n", agg(result.sdri_ibmn)}};
        j["sir_improvement"] = {{"estimated", agg(result.sir_estimated)},
                                {"oracle_ibm", agg(result.sir_oracle)}};
        std::ofstream out(opts.json_out);
        if (!out) throw IoError("evaluate: cannot write " + opts.json_out);
        out << j.dump(2) << "\n";
    }
    return result;
}

}  // namespace kwbeam
