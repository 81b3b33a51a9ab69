// features.hpp
// Feature pipeline for the mask estimator: 256 magnitude bins spliced with
// +-10 context frames into 5376-dim vectors, then global mean/variance
// normalization. Edge frames replicate outward so every row keeps the full
// context width.

#pragma once

#include <cmath>
#include <cstdio>
#include <cstring>
#include <span>
#include <string>
#include <vector>

#include "kwbeam/error.hpp"
#include "kwbeam/linalg.hpp"
#include "kwbeam/stft.hpp"

namespace kwbeam {

struct FeatureConfig {
    int base_dim = 256;
    int left_context = 10;
    int right_context = 10;

    int spliced_dim() const { return base_dim * (left_context + right_context + 1); }

    void validate() const {
        require(base_dim > 0 && left_context >= 0 && right_context >= 0,
                "features: invalid configuration");
    }
};

// One spliced row: frames t-left .. t+right, leftmost context first,
// clamped to the utterance boundaries.
inline void splice_row(const MagnitudeSpectrogram &mag, std::size_t t, const FeatureConfig &cfg,
                       double *out) {
    const std::size_t frames = mag.frames;
    const long last = static_cast<long>(frames) - 1;
    std::size_t offset = 0;
    for (int k = -cfg.left_context; k <= cfg.right_context; ++k) {
        long src = static_cast<long>(t) + k;
        if (src < 0) src = 0;
        if (src > last) src = last;
        std::memcpy(out + offset, mag.row(static_cast<std::size_t>(src)),
                    cfg.base_dim * sizeof(double));
        offset += cfg.base_dim;
    }
}

inline Matrix splice(const MagnitudeSpectrogram &mag, const FeatureConfig &cfg = {}) {
    cfg.validate();
    require(mag.frames >= 1, "splice: need at least one frame");
    require(mag.bins >= static_cast<std::size_t>(cfg.base_dim),
            "splice: spectrogram has fewer bins than base_dim");
    Matrix features(mag.frames, cfg.spliced_dim());
    for (std::size_t t = 0; t < mag.frames; ++t) splice_row(mag, t, cfg, features.row(t));
    return features;
}

constexpr double kStdFloor = 1e-8;

// Finalized global statistics as persisted with the model: per-element mean
// and floored standard deviation plus the frame count they aggregate.
struct NormStats {
    std::size_t dim = 0;
    double count = 0.0;
    std::vector<double> mean;
    std::vector<double> std;

    bool operator==(const NormStats &o) const = default;
};

// Streaming mean/variance (Welford), population convention. merge() combines
// partial accumulators with the exact pooled-moment formula so a parallel
// fold matches the sequential result to rounding.
struct StatsAccumulator {
    std::size_t dim = 0;
    double count = 0.0;
    std::vector<double> mean;
    std::vector<double> m2;

    StatsAccumulator() = default;
    explicit StatsAccumulator(std::size_t d) : dim(d), mean(d, 0.0), m2(d, 0.0) {}

    void add_row(const double *row) {
        count += 1.0;
        const double inv = 1.0 / count;
        for (std::size_t i = 0; i < dim; ++i) {
            const double delta = row[i] - mean[i];
            mean[i] += delta * inv;
            m2[i] += delta * (row[i] - mean[i]);
        }
    }

    void merge(const StatsAccumulator &other) {
        require(other.dim == dim, "stats: merging accumulators of different dimension");
        if (other.count == 0.0) return;
        if (count == 0.0) {
            *this = other;
            return;
        }
        const double total = count + other.count;
        for (std::size_t i = 0; i < dim; ++i) {
            const double delta = other.mean[i] - mean[i];
            mean[i] += delta * other.count / total;
            m2[i] += other.m2[i] + delta * delta * count * other.count / total;
        }
        count = total;
    }

    NormStats finalize() const {
        require(count >= 2.0, "stats: need at least two frames");
        NormStats stats;
        stats.dim = dim;
        stats.count = count;
        stats.mean = mean;
        stats.std.resize(dim);
        for (std::size_t i = 0; i < dim; ++i) {
            const double var = std::max(m2[i] / count, 0.0);
            stats.std[i] = std::max(std::sqrt(var), kStdFloor);
        }
        return stats;
    }
};

inline NormStats accumulate_stats(std::span<const Matrix> feature_matrices) {
    require(!feature_matrices.empty(), "stats: empty corpus");
    const std::size_t dim = feature_matrices.front().cols();
    StatsAccumulator acc(dim);
    for (const Matrix &m : feature_matrices) {
        require(m.cols() == dim, "stats: feature dimension varies across corpus");
        for (std::size_t r = 0; r < m.rows(); ++r) acc.add_row(m.row(r));
    }
    return acc.finalize();
}

inline void normalize_row(const double *row, const NormStats &stats, double *out) {
    for (std::size_t i = 0; i < stats.dim; ++i) out[i] = (row[i] - stats.mean[i]) / stats.std[i];
}

inline Matrix normalize(const Matrix &features, const NormStats &stats) {
    require(features.cols() == stats.dim, "normalize: dimension mismatch");
    Matrix out(features.rows(), features.cols());
    for (std::size_t r = 0; r < features.rows(); ++r)
        normalize_row(features.row(r), stats, out.row(r));
    return out;
}

inline Matrix denormalize(const Matrix &features, const NormStats &stats) {
    require(features.cols() == stats.dim, "denormalize: dimension mismatch");
    Matrix out(features.rows(), features.cols());
    for (std::size_t r = 0; r < features.rows(); ++r)
        for (std::size_t i = 0; i < stats.dim; ++i)
            out(r, i) = features(r, i) * stats.std[i] + stats.mean[i];
    return out;
}

// Binary block "KWNORM1": u32 dim, f64 count, dim f64 means, dim f64 stds.
inline void write_norm_stats(std::FILE *f, const NormStats &stats) {
    std::fwrite("KWNORM1", 1, 7, f);
    const std::uint32_t dim = static_cast<std::uint32_t>(stats.dim);
    std::fwrite(&dim, 4, 1, f);
    std::fwrite(&stats.count, 8, 1, f);
    std::fwrite(stats.mean.data(), 8, stats.dim, f);
    std::fwrite(stats.std.data(), 8, stats.dim, f);
}

inline NormStats read_norm_stats(std::FILE *f) {
    char magic[7];
    std::uint32_t dim = 0;
    if (std::fread(magic, 1, 7, f) != 7 || std::memcmp(magic, "KWNORM1", 7) != 0)
        throw IoError("stats: missing KWNORM1 block");
    if (std::fread(&dim, 4, 1, f) != 1) throw IoError("stats: truncated KWNORM1 block");
    NormStats stats;
    stats.dim = dim;
    stats.mean.resize(dim);
    stats.std.resize(dim);
    if (std::fread(&stats.count, 8, 1, f) != 1 ||
        std::fread(stats.mean.data(), 8, dim, f) != dim ||
        std::fread(stats.std.data(), 8, dim, f) != dim)
        throw IoError("stats: truncated KWNORM1 block");
    return stats;
}

inline void save_norm_stats(const NormStats &stats, const std::string &path) {
    std::FILE *f = std::fopen(path.c_str(), "wb");
    if (!f) throw IoError("stats: cannot open for write " + path);
    write_norm_stats(f, stats);
    if (std::fclose(f) != 0) throw IoError("stats: write failed " + path);
}

inline NormStats load_norm_stats(const std::string &path) {
    std::FILE *f = std::fopen(path.c_str(), "rb");
    if (!f) throw IoError("stats: cannot open " + path);
    try {
        NormStats s = read_norm_stats(f);
        std::fclose(f);
        return s;
    } catch (...) {
        std::fclose(f);
        throw;
    }
}

}  // namespace kwbeam
