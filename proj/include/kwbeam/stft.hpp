// stft.hpp
// Short-time Fourier analysis/synthesis: 32 ms periodic-Hann frames at 50%
// hop, one-sided spectra of 257 bins at the 512-sample default. The radix-2
// FFT lives here; frame lengths are restricted to powers of two.

#pragma once

#include <algorithm>
#include <cmath>
#include <complex>
#include <cstdint>
#include <cstdio>
#include <cstring>
#include <span>
#include <string>
#include <vector>

#include "kwbeam/error.hpp"

namespace kwbeam {

struct StftConfig {
    int frame_len = 512;    // 32 ms at 16 kHz
    int frame_shift = 256;  // 16 ms

    int fft_bins() const { return frame_len / 2 + 1; }

    void validate() const {
        require(frame_len > 0 && (frame_len & (frame_len - 1)) == 0,
                "stft: frame_len must be a power of two");
        require(frame_shift == frame_len / 2,
                "stft: frame_shift must be frame_len/2 (COLA for Hann synthesis)");
    }

    bool operator==(const StftConfig &o) const = default;
};

struct ComplexSpectrogram {
    std::size_t frames = 0;
    std::size_t bins = 0;
    StftConfig config;
    std::vector<std::complex<double>> data;  // row-major by time

    ComplexSpectrogram() = default;
    ComplexSpectrogram(std::size_t t, std::size_t f, StftConfig cfg = {})
        : frames(t), bins(f), config(cfg), data(t * f) {}

    std::complex<double> &operator()(std::size_t t, std::size_t f) { return data[t * bins + f]; }
    std::complex<double> operator()(std::size_t t, std::size_t f) const { return data[t * bins + f]; }
    std::complex<double> *row(std::size_t t) { return data.data() + t * bins; }
    const std::complex<double> *row(std::size_t t) const { return data.data() + t * bins; }
};

struct MagnitudeSpectrogram {
    std::size_t frames = 0;
    std::size_t bins = 0;
    std::vector<double> data;

    MagnitudeSpectrogram() = default;
    MagnitudeSpectrogram(std::size_t t, std::size_t f) : frames(t), bins(f), data(t * f, 0.0) {}

    double &operator()(std::size_t t, std::size_t f) { return data[t * bins + f]; }
    double operator()(std::size_t t, std::size_t f) const { return data[t * bins + f]; }
    double *row(std::size_t t) { return data.data() + t * bins; }
    const double *row(std::size_t t) const { return data.data() + t * bins; }
};

// In-place iterative radix-2 Cooley-Tukey; inverse scales by 1/N.
inline void fft_inplace(std::vector<std::complex<double>> &x, bool inverse) {
    const std::size_t n = x.size();
    require(n > 0 && (n & (n - 1)) == 0, "fft: length must be a power of two");
    // bit-reversal permutation
    for (std::size_t i = 1, j = 0; i < n; ++i) {
        std::size_t bit = n >> 1;
        for (; j & bit; bit >>= 1) j ^= bit;
        j ^= bit;
        if (i < j) std::swap(x[i], x[j]);
    }
    const double sign = inverse ? 1.0 : -1.0;
    for (std::size_t len = 2; len <= n; len <<= 1) {
        const double ang = sign * 2.0 * M_PI / static_cast<double>(len);
        const std::complex<double> wlen(std::cos(ang), std::sin(ang));
        for (std::size_t i = 0; i < n; i += len) {
            std::complex<double> w(1.0, 0.0);
            for (std::size_t k = 0; k < len / 2; ++k) {
                const std::complex<double> u = x[i + k];
                const std::complex<double> v = x[i + k + len / 2] * w;
                x[i + k] = u + v;
                x[i + k + len / 2] = u - v;
                w *= wlen;
            }
        }
    }
    if (inverse) {
        const double scale = 1.0 / static_cast<double>(n);
        for (auto &v : x) v *= scale;
    }
}

// Periodic Hann; adjacent frames at 50% hop sum to exactly one.
inline std::vector<double> hann_window(int n) {
    std::vector<double> w(n);
    for (int i = 0; i < n; ++i)
        w[i] = 0.5 - 0.5 * std::cos(2.0 * M_PI * static_cast<double>(i) / static_cast<double>(n));
    return w;
}

inline std::size_t stft_frame_count(std::size_t samples, const StftConfig &cfg) {
    if (samples < static_cast<std::size_t>(cfg.frame_len)) return 0;
    return 1 + (samples - cfg.frame_len) / cfg.frame_shift;
}

inline ComplexSpectrogram stft(std::span<const double> signal, const StftConfig &cfg = {}) {
    cfg.validate();
    require(signal.size() >= static_cast<std::size_t>(cfg.frame_len),
            "stft: signal shorter than one frame");
    const std::size_t frames = stft_frame_count(signal.size(), cfg);
    const std::size_t bins = cfg.fft_bins();
    const std::vector<double> window = hann_window(cfg.frame_len);

    ComplexSpectrogram spec(frames, bins, cfg);
    std::vector<std::complex<double>> buf(cfg.frame_len);
    for (std::size_t t = 0; t < frames; ++t) {
        const double *x = signal.data() + t * cfg.frame_shift;
        for (int i = 0; i < cfg.frame_len; ++i) buf[i] = {window[i] * x[i], 0.0};
        fft_inplace(buf, false);
        std::copy(buf.begin(), buf.begin() + bins, spec.row(t));
    }
    return spec;
}

// Overlap-add synthesis. Frames were Hann-windowed once at analysis and the
// 50% hop makes the window sum one, so interior samples (beyond the first and
// last frame_len) reconstruct exactly; the edges keep their single-frame
// window taper.
inline std::vector<double> istft(const ComplexSpectrogram &spec, const StftConfig &cfg = {}) {
    cfg.validate();
    require(spec.config == cfg, "istft: spectrogram was produced with a different config");
    require(spec.bins == static_cast<std::size_t>(cfg.fft_bins()),
            "istft: bin count does not match config");
    require(spec.frames > 0, "istft: empty spectrogram");

    const std::size_t n = cfg.frame_len;
    std::vector<double> out((spec.frames - 1) * cfg.frame_shift + n, 0.0);
    std::vector<std::complex<double>> buf(n);
    for (std::size_t t = 0; t < spec.frames; ++t) {
        const std::complex<double> *row = spec.row(t);
        for (std::size_t k = 0; k < spec.bins; ++k) buf[k] = row[k];
        for (std::size_t k = spec.bins; k < n; ++k) buf[k] = std::conj(row[n - k]);
        fft_inplace(buf, true);
        double *o = out.data() + t * cfg.frame_shift;
        for (std::size_t i = 0; i < n; ++i) o[i] += buf[i].real();
    }
    return out;
}

inline MagnitudeSpectrogram magnitude(const ComplexSpectrogram &spec) {
    MagnitudeSpectrogram mag(spec.frames, spec.bins);
    for (std::size_t i = 0; i < spec.data.size(); ++i) mag.data[i] = std::abs(spec.data[i]);
    return mag;
}

// Debug dump, little-endian: "KWSPEC1", u32 T, u32 F, T*F complex64 pairs.
inline void write_spectrogram(const ComplexSpectrogram &spec, const std::string &path) {
    std::FILE *f = std::fopen(path.c_str(), "wb");
    if (!f) throw IoError("cannot open for write: " + path);
    std::fwrite("KWSPEC1", 1, 7, f);
    const std::uint32_t t = static_cast<std::uint32_t>(spec.frames);
    const std::uint32_t b = static_cast<std::uint32_t>(spec.bins);
    std::fwrite(&t, 4, 1, f);
    std::fwrite(&b, 4, 1, f);
    for (const auto &z : spec.data) {
        const float re = static_cast<float>(z.real());
        const float im = static_cast<float>(z.imag());
        std::fwrite(&re, 4, 1, f);
        std::fwrite(&im, 4, 1, f);
    }
    if (std::fclose(f) != 0) throw IoError("write failed: " + path);
}

inline ComplexSpectrogram read_spectrogram(const std::string &path, const StftConfig &cfg = {}) {
    std::FILE *f = std::fopen(path.c_str(), "rb");
    if (!f) throw IoError("cannot open for read: " + path);
    char magic[7];
    std::uint32_t t = 0, b = 0;
    bool ok = std::fread(magic, 1, 7, f) == 7 && std::memcmp(magic, "KWSPEC1", 7) == 0 &&
              std::fread(&t, 4, 1, f) == 1 && std::fread(&b, 4, 1, f) == 1;
    if (!ok) {
        std::fclose(f);
        throw IoError("not a KWSPEC1 file: " + path);
    }
    ComplexSpectrogram spec(t, b, cfg);
    for (auto &z : spec.data) {
        float re = 0.0f, im = 0.0f;
        if (std::fread(&re, 4, 1, f) != 1 || std::fread(&im, 4, 1, f) != 1) {
            std::fclose(f);
            throw IoError("truncated KWSPEC1 file: " + path);
        }
        z = {re, im};
    }
    std::fclose(f);
    return spec;
}

}  // namespace kwbeam
