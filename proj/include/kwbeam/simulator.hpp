// simulator.hpp
// Synthetic multichannel keyword+command scenes: anechoic far-field steering
// by frequency-domain fractional delay, SNR-controlled mixing with clean
// components retained, seeded speech-like sources (colored noise with
// syllabic amplitude modulation) and the training-set builder that mixes
// single-channel keyword/background pairs and derives IBM targets.

#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "kwbeam/audio_io.hpp"
#include "kwbeam/error.hpp"
#include "kwbeam/mask_net.hpp"
#include "kwbeam/rng.hpp"
#include "kwbeam/stft.hpp"

namespace kwbeam {

struct ArrayGeometry {
    std::vector<std::array<double, 2>> mics;  // meters, x along the array
    double speed_of_sound = 343.0;

    static ArrayGeometry uniform_linear(std::size_t count = 4, double spacing_m = 0.05) {
        ArrayGeometry g;
        for (std::size_t i = 0; i < count; ++i)
            g.mics.push_back({static_cast<double>(i) * spacing_m, 0.0});
        return g;
    }

    double aperture() const {
        double best = 0.0;
        for (std::size_t i = 0; i < mics.size(); ++i)
            for (std::size_t j = i + 1; j < mics.size(); ++j)
                best = std::max(best, std::hypot(mics[i][0] - mics[j][0],
                                                 mics[i][1] - mics[j][1]));
        return best;
    }

    void validate() const {
        require(mics.size() >= 2, "geometry: beamforming scenes need at least 2 mics");
        for (std::size_t i = 0; i < mics.size(); ++i)
            for (std::size_t j = i + 1; j < mics.size(); ++j)
                require(mics[i] != mics[j], "geometry: duplicate mic positions");
        require(speed_of_sound > 0.0, "geometry: speed of sound must be positive");
    }
};

struct SceneSpec {
    std::string id = "scene";
    int target_speaker = 0;
    int interferer_speaker = 1;
    double target_azimuth_deg = -20.0;
    double interferer_azimuth_deg = 25.0;
    double target_distance_m = 2.0;
    double interferer_distance_m = 2.0;
    double snr_db = 0.0;
    double gap_s = 0.2;  // pause between keyword and command
    std::uint64_t seed = 0;
    // optional real recordings; synthetic sources are used when empty
    std::string keyword_wav;
    std::string command_wav;
    std::string interference_wav;

    void validate() const {
        require(std::isfinite(snr_db), "scene: snr_db must be finite");
        require(std::abs(target_azimuth_deg - interferer_azimuth_deg) >= 1.0,
                "scene: source azimuths must differ by at least 1 degree");
        require(gap_s >= 0.0, "scene: negative gap");
    }
};

inline SceneSpec scene_from_json(const nlohmann::json &j) {
    SceneSpec s;
    s.id = j.value("id", s.id);
    s.target_speaker = j.value("target_speaker", s.target_speaker);
    s.interferer_speaker = j.value("interferer_speaker", s.interferer_speaker);
    s.target_azimuth_deg = j.value("target_azimuth_deg", s.target_azimuth_deg);
    s.interferer_azimuth_deg = j.value("interferer_azimuth_deg", s.interferer_azimuth_deg);
    s.target_distance_m = j.value("target_distance_m", s.target_distance_m);
    s.interferer_distance_m = j.value("interferer_distance_m", s.interferer_distance_m);
    s.snr_db = j.value("snr_db", s.snr_db);
    s.gap_s = j.value("gap_s", s.gap_s);
    s.seed = j.value("seed", s.seed);
    s.keyword_wav = j.value("keyword_wav", s.keyword_wav);
    s.command_wav = j.value("command_wav", s.command_wav);
    s.interference_wav = j.value("interference_wav", s.interference_wav);
    return s;
}

inline nlohmann::json scene_to_json(const SceneSpec &s) {
    nlohmann::json j;
    j["id"] = s.id;
    j["target_speaker"] = s.target_speaker;
    j["interferer_speaker"] = s.interferer_speaker;
    j["target_azimuth_deg"] = s.target_azimuth_deg;
    j["interferer_azimuth_deg"] = s.interferer_azimuth_deg;
    j["target_distance_m"] = s.target_distance_m;
    j["interferer_distance_m"] = s.interferer_distance_m;
    j["snr_db"] = s.snr_db;
    j["gap_s"] = s.gap_s;
    j["seed"] = s.seed;
    if (!s.keyword_wav.empty()) j["keyword_wav"] = s.keyword_wav;
    if (!s.command_wav.empty()) j["command_wav"] = s.command_wav;
    if (!s.interference_wav.empty()) j["interference_wav"] = s.interference_wav;
    return j;
}

struct SceneRender {
    AudioBuffer mixture;
    AudioBuffer clean_target;
    AudioBuffer clean_interference;
    KeywordRegion keyword_region;
};

namespace detail {

inline std::size_t next_pow2(std::size_t n) {
    std::size_t p = 1;
    while (p < n) p <<= 1;
    return p;
}

}  // namespace detail

// Far-field plane-wave rendering. Azimuth is measured from broadside (the
// array normal), so 0 degrees reaches every mic of a linear array at the
// same instant. Delays are applied as a pure spectral phase ramp over the
// zero-padded whole signal, relative to mic 1, plus a common bulk delay that
// keeps every channel causal; the full padded length is returned so the
// operation stays exactly energy-preserving. Unit gain per channel
// (distance only sanity-checks the far-field assumption).
inline AudioBuffer steer(std::span<const double> signal, const ArrayGeometry &geometry,
                         double azimuth_deg, double distance_m,
                         int sample_rate_hz = kPipelineSampleRate) {
    geometry.validate();
    require(!signal.empty(), "steer: empty signal");
    require(distance_m > 4.0 * geometry.aperture(),
            "steer: source too close for the far-field model");

    const double az = azimuth_deg * M_PI / 180.0;
    const std::array<double, 2> u{std::sin(az), std::cos(az)};
    const std::size_t c = geometry.mics.size();

    const double fs = static_cast<double>(sample_rate_hz);
    const double bulk = std::ceil(fs * geometry.aperture() / geometry.speed_of_sound) + 4.0;
    std::vector<double> delay_samples(c);
    for (std::size_t ch = 0; ch < c; ++ch) {
        const double tau = ((geometry.mics[0][0] - geometry.mics[ch][0]) * u[0] +
                            (geometry.mics[0][1] - geometry.mics[ch][1]) * u[1]) /
                           geometry.speed_of_sound;
        delay_samples[ch] = bulk + fs * tau;
        require(delay_samples[ch] >= 0.0, "steer: internal delay bookkeeping went negative");
    }

    const std::size_t n = detail::next_pow2(signal.size() + 2 * static_cast<std::size_t>(bulk) + 8);
    std::vector<std::complex<double>> base(n);
    for (std::size_t i = 0; i < signal.size(); ++i) base[i] = {signal[i], 0.0};
    fft_inplace(base, false);

    AudioBuffer out;
    out.sample_rate_hz = sample_rate_hz;
    out.channels.assign(c, std::vector<double>(n));
    std::vector<std::complex<double>> spec(n);
    for (std::size_t ch = 0; ch < c; ++ch) {
        const double d = delay_samples[ch];
        for (std::size_t k = 0; k <= n / 2; ++k) {
            const double phase = -2.0 * M_PI * static_cast<double>(k) * d / static_cast<double>(n);
            std::complex<double> rot(std::cos(phase), std::sin(phase));
            if (k == n / 2) rot = {std::cos(phase), 0.0};  // keep the output real
            spec[k] = base[k] * rot;
            if (k != 0 && k != n / 2) spec[n - k] = std::conj(spec[k]);
        }
        fft_inplace(spec, true);
        for (std::size_t i = 0; i < n; ++i) out.channels[ch][i] = spec[i].real();
    }
    return out;
}

// Bulk delay steer() applies to every channel, in samples; scene builders
// shift the keyword region by this amount.
inline double steer_bulk_delay_samples(const ArrayGeometry &geometry,
                                       int sample_rate_hz = kPipelineSampleRate) {
    return std::ceil(static_cast<double>(sample_rate_hz) * geometry.aperture() /
                     geometry.speed_of_sound) +
           4.0;
}

// Scales the interference by one scalar so the target-to-interference power
// ratio on channel 1, measured over the temporal overlap of the two buffers,
// equals snr_db; the mixture is the sample-wise sum and both scaled clean
// components are retained.
inline SceneRender mix_at_snr(const AudioBuffer &target, const AudioBuffer &interference,
                              double snr_db) {
    target.validate();
    interference.validate();
    require(std::isfinite(snr_db), "mix: snr_db must be finite");
    require(target.num_channels() == interference.num_channels(),
            "mix: channel counts differ");
    require(target.sample_rate_hz == interference.sample_rate_hz, "mix: sample rates differ");

    const std::size_t overlap = std::min(target.num_samples(), interference.num_samples());
    require(overlap > 0, "mix: no temporal overlap");
    double p_target = 0.0, p_interf = 0.0;
    for (std::size_t i = 0; i < overlap; ++i) {
        p_target += target.channels[0][i] * target.channels[0][i];
        p_interf += interference.channels[0][i] * interference.channels[0][i];
    }
    require(p_target > 0.0, "mix: zero-power target over the overlap");
    require(p_interf > 0.0, "mix: zero-power interference over the overlap");

    const double scale = std::sqrt(p_target / (p_interf * std::pow(10.0, snr_db / 10.0)));

    const std::size_t len = std::max(target.num_samples(), interference.num_samples());
    const std::size_t c = target.num_channels();
    SceneRender render;
    render.clean_target.sample_rate_hz = target.sample_rate_hz;
    render.clean_interference.sample_rate_hz = target.sample_rate_hz;
    render.mixture.sample_rate_hz = target.sample_rate_hz;
    render.clean_target.channels.assign(c, std::vector<double>(len, 0.0));
    render.clean_interference.channels.assign(c, std::vector<double>(len, 0.0));
    render.mixture.channels.assign(c, std::vector<double>(len, 0.0));
    for (std::size_t ch = 0; ch < c; ++ch) {
        for (std::size_t i = 0; i < target.num_samples(); ++i)
            render.clean_target.channels[ch][i] = target.channels[ch][i];
        for (std::size_t i = 0; i < interference.num_samples(); ++i)
            render.clean_interference.channels[ch][i] = scale * interference.channels[ch][i];
        for (std::size_t i = 0; i < len; ++i)
            render.mixture.channels[ch][i] =
                render.clean_target.channels[ch][i] + render.clean_interference.channels[ch][i];
    }
    return render;
}

// ---- seeded speech-like sources ------------------------------------------

enum class SourceKind { Keyword, Command, Background };

namespace detail {

struct SpectralPeak {
    double center_hz;
    double width_hz;
    double gain;
};

inline std::vector<double> shaped_noise(std::size_t samples, double fs, Rng &rng,
                                        const std::vector<SpectralPeak> &peaks, double floor_gain,
                                        double tilt_pole_hz, double tilt_power) {
    const std::size_t n = next_pow2(std::max<std::size_t>(samples, 64));
    std::vector<std::complex<double>> spec(n);
    for (std::size_t i = 0; i < samples; ++i) spec[i] = {rng.normal(0.0, 1.0), 0.0};
    fft_inplace(spec, false);

    const double cutoff_hz = 7200.0, roll_hz = 400.0;
    for (std::size_t k = 0; k <= n / 2; ++k) {
        const double f = fs * static_cast<double>(k) / static_cast<double>(n);
        double h = floor_gain;
        for (const SpectralPeak &p : peaks) {
            const double d = (f - p.center_hz) / p.width_hz;
            h += p.gain * std::exp(-0.5 * d * d);
        }
        if (tilt_power > 0.0) h *= std::pow(tilt_pole_hz / (f + tilt_pole_hz), tilt_power);
        if (f > cutoff_hz) h = 0.0;
        else if (f > cutoff_hz - roll_hz) {
            const double x = (cutoff_hz - f) / roll_hz;
            h *= 0.5 - 0.5 * std::cos(M_PI * x);
        }
        spec[k] *= h;
        if (k != 0 && k != n / 2) spec[n - k] = std::conj(spec[k]);
    }
    fft_inplace(spec, true);
    std::vector<double> out(samples);
    for (std::size_t i = 0; i < samples; ++i) out[i] = spec[i].real();
    return out;
}

inline void apply_envelope(std::vector<double> &x, double fs, double bumps, double bump_shape,
                           double base, double phase) {
    const double dur = static_cast<double>(x.size()) / fs;
    for (std::size_t i = 0; i < x.size(); ++i) {
        const double t = static_cast<double>(i) / fs;
        const double osc = 0.5 - 0.5 * std::cos(2.0 * M_PI * bumps * t / dur + phase);
        x[i] *= base + (1.0 - base) * std::pow(osc, bump_shape);
    }
    // 10 ms half-cosine edges keep the padded spectrum clean
    const std::size_t ramp = std::min<std::size_t>(static_cast<std::size_t>(0.01 * fs),
                                                   x.size() / 2);
    for (std::size_t i = 0; i < ramp; ++i) {
        const double g = 0.5 - 0.5 * std::cos(M_PI * static_cast<double>(i) / ramp);
        x[i] *= g;
        x[x.size() - 1 - i] *= g;
    }
}

inline void normalize_rms(std::vector<double> &x, double rms_target) {
    double p = 0.0;
    for (double v : x) p += v * v;
    p = std::sqrt(p / static_cast<double>(x.size()));
    require_numeric(p > 0.0, "synth: generated a silent source");
    const double g = rms_target / p;
    for (double &v : x) v *= g;
}

}  // namespace detail

// The keyword is always the same three-syllable "word": a fixed formant
// triple, scaled a little per speaker, with a three-bump syllabic envelope.
// Commands share the speaker's scaling but draw fresh peak patterns per
// utterance; backgrounds are tilted broadband noise with random bumps and a
// slower modulation. Everything derives from (kind, speaker, utterance)
// seeds, so corpora are reproducible.
inline std::vector<double> synth_source(SourceKind kind, int speaker_id, std::uint64_t utt_seed,
                                        double duration_s = 0.0,
                                        int sample_rate_hz = kPipelineSampleRate) {
    const double fs = static_cast<double>(sample_rate_hz);
    Rng speaker_rng(hash_seed(0x5350454bULL, static_cast<std::uint64_t>(speaker_id)));
    const double speaker_scale = 0.9 + 0.2 * speaker_rng.uniform();
    Rng rng(hash_seed(hash_seed(static_cast<std::uint64_t>(kind) + 1, utt_seed),
                      static_cast<std::uint64_t>(speaker_id)));

    std::vector<detail::SpectralPeak> peaks;
    double floor_gain = 0.03, tilt_pole = 0.0, tilt_power = 0.0;
    double bumps = 3.0, bump_shape = 0.8, base = 0.12, phase = 0.0;
    double dur = duration_s;

    switch (kind) {
        case SourceKind::Keyword:
            if (dur <= 0.0) dur = 0.62 + 0.16 * rng.uniform();  // ~0.7 s, three syllables
            peaks = {{450.0 * speaker_scale, 70.0, 1.3},
                     {1150.0 * speaker_scale, 110.0, 1.0},
                     {2300.0 * speaker_scale, 220.0, 0.8}};
            floor_gain = 0.02;
            break;
        case SourceKind::Command:
            if (dur <= 0.0) dur = 1.0 + 0.4 * rng.uniform();
            bumps = 5.0;
            floor_gain = 0.04;
            for (int i = 0; i < 3; ++i)
                peaks.push_back({rng.uniform(350.0, 3000.0) * speaker_scale,
                                 rng.uniform(100.0, 300.0), rng.uniform(0.5, 1.0)});
            break;
        case SourceKind::Background:
            if (dur <= 0.0) dur = 2.0 + rng.uniform();
            bumps = 2.0 * dur;  // ~2 Hz modulation
            bump_shape = 1.0;
            base = 0.35;
            phase = rng.uniform(0.0, 2.0 * M_PI);
            floor_gain = 0.08;
            tilt_pole = 300.0;
            tilt_power = rng.uniform(0.4, 0.9);
            for (int i = 0; i < 2; ++i)
                peaks.push_back({rng.uniform(200.0, 5000.0), rng.uniform(300.0, 800.0),
                                 rng.uniform(0.15, 0.4)});
            break;
    }

    const std::size_t samples = static_cast<std::size_t>(dur * fs);
    std::vector<double> x =
        detail::shaped_noise(samples, fs, rng, peaks, floor_gain, tilt_pole, tilt_power);
    detail::apply_envelope(x, fs, bumps, bump_shape, base, phase);
    detail::normalize_rms(x, 0.08);
    return x;
}

// ---- training set ----------------------------------------------------------

struct SourceUtterance {
    std::vector<double> samples;
    std::string speaker;
};

struct TrainDraw {
    std::size_t keyword_index;
    std::size_t background_index;
    double snr_db;
};

// The pairing/SNR plan drawn from the seeded stream; SNR ~ Normal(3.2, 3.4^2)
// dB by default. Keyword and background speakers are kept disjoint whenever
// both carry labels.
inline std::vector<TrainDraw> draw_training_pairs(const std::vector<SourceUtterance> &keywords,
                                                  const std::vector<SourceUtterance> &backgrounds,
                                                  std::size_t count, double snr_mean_db,
                                                  double snr_std_db, std::uint64_t seed) {
    require(!keywords.empty() && !backgrounds.empty(), "training: empty source lists");
    Rng rng(seed);
    std::vector<TrainDraw> draws;
    draws.reserve(count);
    for (std::size_t i = 0; i < count; ++i) {
        std::size_t k = 0, b = 0;
        for (int attempt = 0; attempt < 128; ++attempt) {
            k = static_cast<std::size_t>(rng.below(keywords.size()));
            b = static_cast<std::size_t>(rng.below(backgrounds.size()));
            const std::string &ks = keywords[k].speaker;
            const std::string &bs = backgrounds[b].speaker;
            if (ks.empty() || bs.empty() || ks != bs) break;
        }
        draws.push_back({k, b, rng.normal(snr_mean_db, snr_std_db)});
    }
    return draws;
}

// Single-channel training mixtures: each drawn pair is truncated to the
// shorter signal, the background is scaled to the drawn SNR, and the IBM is
// computed from the clean parts.
inline std::vector<TrainExample> build_training_set(
    const std::vector<SourceUtterance> &keywords, const std::vector<SourceUtterance> &backgrounds,
    std::size_t count, double snr_mean_db = 3.2, double snr_std_db = 3.4, std::uint64_t seed = 0,
    const StftConfig &stft_cfg = {}, double ibm_margin_db = 0.0) {
    const std::vector<TrainDraw> draws =
        draw_training_pairs(keywords, backgrounds, count, snr_mean_db, snr_std_db, seed);

    std::vector<TrainExample> dataset(draws.size());
    parallel_for(draws.size(), [&](std::size_t i) {
        const TrainDraw &d = draws[i];
        const std::vector<double> &kw = keywords[d.keyword_index].samples;
        const std::vector<double> &bg = backgrounds[d.background_index].samples;
        const std::size_t len = std::min(kw.size(), bg.size());
        require(len >= static_cast<std::size_t>(stft_cfg.frame_len),
                "training: source shorter than one frame");

        double p_k = 0.0, p_b = 0.0;
        for (std::size_t s = 0; s < len; ++s) {
            p_k += kw[s] * kw[s];
            p_b += bg[s] * bg[s];
        }
        require(p_k > 0.0 && p_b > 0.0, "training: zero-power source in pair");
        const double scale = std::sqrt(p_k / (p_b * std::pow(10.0, d.snr_db / 10.0)));

        std::vector<double> clean_k(kw.begin(), kw.begin() + len);
        std::vector<double> clean_b(len);
        std::vector<double> mixture(len);
        for (std::size_t s = 0; s < len; ++s) {
            clean_b[s] = scale * bg[s];
            mixture[s] = clean_k[s] + clean_b[s];
        }

        TrainExample ex;
        ex.mixture_mag = magnitude(stft(mixture, stft_cfg));
        ex.ibm = compute_ibm(magnitude(stft(clean_k, stft_cfg)), magnitude(stft(clean_b, stft_cfg)),
                             ibm_margin_db);
        dataset[i] = std::move(ex);
    });
    return dataset;
}

// Synthetic corpus helpers: `count` utterances spread over `speakers`
// distinct synthetic voices.
inline std::vector<SourceUtterance> synth_corpus(SourceKind kind, std::size_t count,
                                                 int speakers, std::uint64_t seed,
                                                 const std::string &speaker_prefix) {
    std::vector<SourceUtterance> corpus(count);
    parallel_for(count, [&](std::size_t i) {
        const int speaker = static_cast<int>(i % static_cast<std::size_t>(speakers));
        corpus[i].samples = synth_source(kind, speaker, hash_seed(seed, i));
        corpus[i].speaker = speaker_prefix + std::to_string(speaker);
    });
    return corpus;
}

// ---- evaluation scenes -----------------------------------------------------

// Keyword, a silent gap, then the command, all from the target speaker;
// continuous interference across the whole scene; both sources steered to
// their azimuths and mixed at the requested SNR. The keyword region is known
// from construction (shifted by the steering bulk delay). A shared peak
// normalization keeps the mixture inside the 16-bit range without touching
// SNR or additivity.
inline SceneRender build_eval_scene(const SceneSpec &spec, const ArrayGeometry &geometry,
                                    std::uint64_t seed) {
    spec.validate();
    geometry.validate();
    const double fs = static_cast<double>(kPipelineSampleRate);

    std::vector<double> keyword, command, interference;
    if (!spec.keyword_wav.empty()) {
        AudioBuffer b = read_wav(spec.keyword_wav);
        b.validate_pipeline_rate();
        keyword = b.channels[0];
    } else {
        keyword = synth_source(SourceKind::Keyword, spec.target_speaker, hash_seed(seed, 1));
    }
    if (!spec.command_wav.empty()) {
        AudioBuffer b = read_wav(spec.command_wav);
        b.validate_pipeline_rate();
        command = b.channels[0];
    } else {
        command = synth_source(SourceKind::Command, spec.target_speaker, hash_seed(seed, 2));
    }

    const std::size_t gap = static_cast<std::size_t>(spec.gap_s * fs);
    std::vector<double> target_mono;
    target_mono.reserve(keyword.size() + gap + command.size());
    target_mono.insert(target_mono.end(), keyword.begin(), keyword.end());
    target_mono.insert(target_mono.end(), gap, 0.0);
    target_mono.insert(target_mono.end(), command.begin(), command.end());

    const double scene_dur = static_cast<double>(target_mono.size()) / fs;
    if (!spec.interference_wav.empty()) {
        AudioBuffer b = read_wav(spec.interference_wav);
        b.validate_pipeline_rate();
        interference = b.channels[0];
        require(interference.size() >= target_mono.size(),
                "scene: interference recording shorter than the scene");
    } else {
        interference = synth_source(SourceKind::Background, spec.interferer_speaker,
                                    hash_seed(seed, 3), scene_dur + 0.3);
    }

    AudioBuffer target_mc =
        steer(target_mono, geometry, spec.target_azimuth_deg, spec.target_distance_m);
    AudioBuffer interf_mc =
        steer(interference, geometry, spec.interferer_azimuth_deg, spec.interferer_distance_m);

    SceneRender render = mix_at_snr(target_mc, interf_mc, spec.snr_db);

    const double bulk_s = steer_bulk_delay_samples(geometry) / fs;
    render.keyword_region.start_s = bulk_s;
    render.keyword_region.end_s = bulk_s + static_cast<double>(keyword.size()) / fs;

    double peak = 0.0;
    for (const auto &ch : render.mixture.channels)
        for (double v : ch) peak = std::max(peak, std::abs(v));
    if (peak > 0.9) {
        const double g = 0.9 / peak;
        for (AudioBuffer *buf :
             {&render.mixture, &render.clean_target, &render.clean_interference})
            for (auto &ch : buf->channels)
                for (double &v : ch) v *= g;
    }
    return render;
}

}  // namespace kwbeam
