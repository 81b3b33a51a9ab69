// audio_io.hpp
// Multichannel 16-bit PCM WAV files, keyword-region annotations and JSONL
// dataset manifests. Channel 1 is the reference channel everywhere in the
// pipeline; samples are held as doubles in [-1, 1].

#pragma once

#include <cmath>
#include <cstdint>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "kwbeam/error.hpp"
#include "kwbeam/io_util.hpp"
#include "kwbeam/stft.hpp"

namespace kwbeam {

constexpr int kPipelineSampleRate = 16000;

struct AudioBuffer {
    int sample_rate_hz = kPipelineSampleRate;
    std::vector<std::vector<double>> channels;

    std::size_t num_channels() const { return channels.size(); }
    std::size_t num_samples() const { return channels.empty() ? 0 : channels[0].size(); }
    double duration_s() const {
        return static_cast<double>(num_samples()) / static_cast<double>(sample_rate_hz);
    }

    void validate() const {
        require(!channels.empty(), "audio: buffer has no channels");
        require(sample_rate_hz > 0, "audio: sample rate must be positive");
        for (const auto &ch : channels)
            require(ch.size() == channels[0].size(), "audio: channels differ in length");
    }

    // Pipeline entry points accept 16 kHz only.
    void validate_pipeline_rate() const {
        validate();
        require(sample_rate_hz == kPipelineSampleRate,
                "audio: pipeline requires 16 kHz input, got " + std::to_string(sample_rate_hz));
    }
};

struct KeywordRegion {
    double start_s = 0.0;
    double end_s = 0.0;

    void validate() const {
        require(start_s >= 0.0 && end_s > start_s, "region: need 0 <= start < end");
    }
};

namespace detail {

inline std::uint32_t read_u32(std::FILE *f) {
    unsigned char b[4];
    if (std::fread(b, 1, 4, f) != 4) throw IoError("wav: truncated file");
    return static_cast<std::uint32_t>(b[0]) | (static_cast<std::uint32_t>(b[1]) << 8) |
           (static_cast<std::uint32_t>(b[2]) << 16) | (static_cast<std::uint32_t>(b[3]) << 24);
}

inline std::uint16_t read_u16(std::FILE *f) {
    unsigned char b[2];
    if (std::fread(b, 1, 2, f) != 2) throw IoError("wav: truncated file");
    return static_cast<std::uint16_t>(b[0] | (b[1] << 8));
}

inline void write_u32(std::FILE *f, std::uint32_t v) {
    unsigned char b[4] = {static_cast<unsigned char>(v), static_cast<unsigned char>(v >> 8),
                          static_cast<unsigned char>(v >> 16), static_cast<unsigned char>(v >> 24)};
    std::fwrite(b, 1, 4, f);
}

inline void write_u16(std::FILE *f, std::uint16_t v) {
    unsigned char b[2] = {static_cast<unsigned char>(v), static_cast<unsigned char>(v >> 8)};
    std::fwrite(b, 1, 2, f);
}

}  // namespace detail

// RIFF/WAVE, PCM 16-bit, 1-8 channels. Samples are scaled by 1/32768; the
// sample rate is returned as read and checked against 16 kHz by the caller.
inline AudioBuffer read_wav(const std::string &path) {
    std::FILE *f = std::fopen(path.c_str(), "rb");
    if (!f) throw IoError("wav: cannot open " + path);
    detail::FileCloser closer{f};

    char tag[4];
    if (std::fread(tag, 1, 4, f) != 4 || std::memcmp(tag, "RIFF", 4) != 0)
        throw IoError("wav: not a RIFF file: " + path);
    detail::read_u32(f);  // riff size
    if (std::fread(tag, 1, 4, f) != 4 || std::memcmp(tag, "WAVE", 4) != 0)
        throw IoError("wav: not a WAVE file: " + path);

    bool have_fmt = false;
    std::uint16_t format = 0, channels = 0, bits = 0;
    std::uint32_t rate = 0;
    std::vector<std::int16_t> pcm;

    while (std::fread(tag, 1, 4, f) == 4) {
        std::uint32_t size = detail::read_u32(f);
        if (std::memcmp(tag, "fmt ", 4) == 0) {
            require(size >= 16, "wav: malformed fmt chunk in " + path);
            format = detail::read_u16(f);
            channels = detail::read_u16(f);
            rate = detail::read_u32(f);
            detail::read_u32(f);  // byte rate
            detail::read_u16(f);  // block align
            bits = detail::read_u16(f);
            if (size > 16) std::fseek(f, size - 16, SEEK_CUR);
            have_fmt = true;
        } else if (std::memcmp(tag, "data", 4) == 0) {
            require(have_fmt, "wav: data chunk before fmt in " + path);
            if (format != 1) throw IoError("wav: only PCM supported (format tag 1): " + path);
            if (bits != 16) throw IoError("wav: only 16-bit samples supported: " + path);
            require(channels >= 1 && channels <= 8, "wav: channel count out of range 1-8: " + path);
            const std::size_t count = size / 2;
            pcm.resize(count);
            if (count > 0 && std::fread(pcm.data(), 2, count, f) != count)
                throw IoError("wav: truncated data chunk in " + path);
            if (size & 1) std::fseek(f, 1, SEEK_CUR);
        } else {
            std::fseek(f, size + (size & 1), SEEK_CUR);
        }
    }
    require(have_fmt && !pcm.empty(), "wav: missing fmt or data chunk in " + path);

    AudioBuffer buf;
    buf.sample_rate_hz = static_cast<int>(rate);
    const std::size_t frames = pcm.size() / channels;
    buf.channels.assign(channels, std::vector<double>(frames));
    for (std::size_t i = 0; i < frames; ++i)
        for (std::uint16_t c = 0; c < channels; ++c)
            buf.channels[c][i] = static_cast<double>(pcm[i * channels + c]) / 32768.0;
    return buf;
}

inline std::int16_t quantize_sample(double x) {
    double scaled = std::floor(x * 32768.0 + 0.5);
    if (scaled > 32767.0) scaled = 32767.0;
    if (scaled < -32768.0) scaled = -32768.0;
    return static_cast<std::int16_t>(scaled);
}

inline void write_wav(const AudioBuffer &buf, const std::string &path) {
    buf.validate();
    for (const auto &ch : buf.channels)
        for (double v : ch)
            require(std::isfinite(v), "wav: non-finite sample, refusing to write " + path);

    std::FILE *f = std::fopen(path.c_str(), "wb");
    if (!f) throw IoError("wav: cannot open for write " + path);
    detail::FileCloser closer{f};

    const std::uint16_t channels = static_cast<std::uint16_t>(buf.num_channels());
    const std::uint32_t frames = static_cast<std::uint32_t>(buf.num_samples());
    const std::uint32_t data_bytes = frames * channels * 2;

    std::fwrite("RIFF", 1, 4, f);
    detail::write_u32(f, 36 + data_bytes);
    std::fwrite("WAVE", 1, 4, f);
    std::fwrite("fmt ", 1, 4, f);
    detail::write_u32(f, 16);
    detail::write_u16(f, 1);  // PCM
    detail::write_u16(f, channels);
    detail::write_u32(f, static_cast<std::uint32_t>(buf.sample_rate_hz));
    detail::write_u32(f, static_cast<std::uint32_t>(buf.sample_rate_hz) * channels * 2);
    detail::write_u16(f, channels * 2);
    detail::write_u16(f, 16);
    std::fwrite("data", 1, 4, f);
    detail::write_u32(f, data_bytes);
    for (std::uint32_t i = 0; i < frames; ++i) {
        for (std::uint16_t c = 0; c < channels; ++c) {
            const std::int16_t s = quantize_sample(buf.channels[c][i]);
            detail::write_u16(f, static_cast<std::uint16_t>(s));
        }
    }
    if (std::fflush(f) != 0) throw IoError("wav: write failed " + path);
}

// Frame indices whose center lies inside [start_s, end_s), clipped to
// [0, total_frames). An empty result is an error: the region is too short to
// cover a single frame center.
inline std::vector<std::size_t> region_to_frames(const KeywordRegion &region, int frame_len,
                                                 int frame_shift, std::size_t total_frames,
                                                 int sample_rate_hz = kPipelineSampleRate) {
    region.validate();
    require(frame_shift > 0, "region: frame_shift must be positive");
    std::vector<std::size_t> frames;
    for (std::size_t t = 0; t < total_frames; ++t) {
        const double center_s =
            (static_cast<double>(t) * frame_shift + frame_len / 2.0) / sample_rate_hz;
        if (center_s >= region.start_s && center_s < region.end_s) frames.push_back(t);
    }
    require(!frames.empty(), "region: no frame center falls inside the keyword region");
    return frames;
}

// Annotation file: one line per utterance, "<wav-path>\t<start_s>\t<end_s>".
inline std::map<std::string, KeywordRegion> load_regions_tsv(const std::string &path) {
    std::ifstream in(path);
    if (!in) throw IoError("regions: cannot open " + path);
    std::map<std::string, KeywordRegion> regions;
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        if (line.empty()) continue;
        std::istringstream ss(line);
        std::string wav, start, end;
        if (!std::getline(ss, wav, '\t') || !std::getline(ss, start, '\t') ||
            !std::getline(ss, end))
            throw IoError("regions: malformed line " + std::to_string(lineno) + " in " + path);
        KeywordRegion r{std::stod(start), std::stod(end)};
        r.validate();
        regions[wav] = r;
    }
    return regions;
}

inline void save_regions_tsv(const std::map<std::string, KeywordRegion> &regions,
                             const std::string &path) {
    std::ofstream out(path);
    if (!out) throw IoError("regions: cannot open for write " + path);
    char line[512];
    for (const auto &[wav, r] : regions) {
        std::snprintf(line, sizeof(line), "%s\t%.6f\t%.6f\n", wav.c_str(), r.start_s, r.end_s);
        out << line;
    }
}

// JSONL manifest. Training entries pair a keyword with a background
// recording; evaluation entries name a mixture, its keyword region and
// optional clean references.
struct ManifestEntry {
    std::string keyword_path;
    std::string background_path;
    std::string mixture_path;
    std::string clean_target_path;
    std::string clean_interference_path;
    std::optional<KeywordRegion> region;
    std::string speaker;             // optional label, used for disjoint pairing
    std::string background_speaker;  // optional label for the background side
};

inline std::vector<ManifestEntry> load_manifest(const std::string &path) {
    std::ifstream in(path);
    if (!in) throw IoError("manifest: cannot open " + path);
    std::vector<ManifestEntry> entries;
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
        nlohmann::json j;
        try {
            j = nlohmann::json::parse(line);
        } catch (const nlohmann::json::exception &e) {
            throw IoError("manifest: bad JSON at line " + std::to_string(lineno) + " of " + path +
                          ": " + e.what());
        }
        ManifestEntry e;
        e.keyword_path = j.value("keyword", "");
        e.background_path = j.value("background", "");
        e.mixture_path = j.value("mixture", "");
        e.clean_target_path = j.value("target", "");
        e.clean_interference_path = j.value("interference", "");
        e.speaker = j.value("speaker", "");
        e.background_speaker = j.value("background_speaker", "");
        if (j.contains("start_s") && j.contains("end_s"))
            e.region = KeywordRegion{j["start_s"].get<double>(), j["end_s"].get<double>()};
        require(!e.keyword_path.empty() || !e.background_path.empty() || !e.mixture_path.empty(),
                "manifest: entry names no audio at line " + std::to_string(lineno));
        entries.push_back(std::move(e));
    }
    return entries;
}

// All referenced paths must resolve at load time.
inline void validate_manifest_paths(const std::vector<ManifestEntry> &entries) {
    auto exists = [](const std::string &p) {
        if (p.empty()) return true;
        std::FILE *f = std::fopen(p.c_str(), "rb");
        if (f) std::fclose(f);
        return f != nullptr;
    };
    for (const auto &e : entries) {
        for (const std::string &p : {e.keyword_path, e.background_path, e.mixture_path,
                                     e.clean_target_path, e.clean_interference_path})
            require(exists(p), "manifest: unresolvable path " + p);
    }
}

}  // namespace kwbeam
