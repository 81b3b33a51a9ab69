// beamformer.hpp
// Mask-driven MVDR estimation over the keyword region. Per-channel masks are
// fused by an element-wise median, the masked spatial covariances R_nn and
// R_kk are accumulated over the keyword frames, the steering vector is the
// principal eigenvector of R_kk (power iteration), and the filter is
// gamma = R_nn^-1 v / (v^h R_nn^-1 v) with diagonal loading before the
// inversion. The filter is computed once and never adapted afterwards.

#pragma once

#include <algorithm>
#include <cmath>
#include <complex>
#include <cstdio>
#include <cstring>
#include <span>
#include <string>
#include <vector>

#include "kwbeam/audio_io.hpp"
#include "kwbeam/error.hpp"
#include "kwbeam/io_util.hpp"
#include "kwbeam/linalg.hpp"
#include "kwbeam/mask_net.hpp"
#include "kwbeam/parallel.hpp"
#include "kwbeam/rng.hpp"
#include "kwbeam/stft.hpp"

namespace kwbeam {

using cplx = std::complex<double>;

struct MultichannelSpectrogram {
    std::vector<ComplexSpectrogram> channels;

    std::size_t num_channels() const { return channels.size(); }
    std::size_t frames() const { return channels.empty() ? 0 : channels[0].frames; }
    std::size_t bins() const { return channels.empty() ? 0 : channels[0].bins; }

    void validate() const {
        require(!channels.empty(), "beamformer: no channels");
        for (const auto &ch : channels)
            require(ch.frames == channels[0].frames && ch.bins == channels[0].bins,
                    "beamformer: channel spectrograms differ in shape");
    }
};

inline MultichannelSpectrogram stft_multichannel(const AudioBuffer &buf,
                                                 const StftConfig &cfg = {}) {
    buf.validate();
    MultichannelSpectrogram out;
    out.channels.resize(buf.num_channels());
    parallel_for(buf.num_channels(),
                 [&](std::size_t c) { out.channels[c] = stft(buf.channels[c], cfg); });
    return out;
}

// Per-frequency c x c second-order statistics, bins-major storage.
struct SpatialCovariance {
    std::size_t channels = 0;
    std::size_t bins = 0;
    std::vector<cplx> data;

    SpatialCovariance() = default;
    SpatialCovariance(std::size_t c, std::size_t f) : channels(c), bins(f), data(c * c * f) {}

    cplx *at(std::size_t f) { return data.data() + f * channels * channels; }
    const cplx *at(std::size_t f) const { return data.data() + f * channels * channels; }
};

struct SteeringVector {
    std::size_t channels = 0;
    std::size_t bins = 0;
    std::vector<cplx> data;  // bins x channels

    SteeringVector() = default;
    SteeringVector(std::size_t c, std::size_t f) : channels(c), bins(f), data(c * f) {}
    cplx *at(std::size_t f) { return data.data() + f * channels; }
    const cplx *at(std::size_t f) const { return data.data() + f * channels; }
};

struct BeamformerFilter {
    std::size_t channels = 0;
    std::size_t bins = 0;
    std::vector<cplx> data;  // bins x channels

    BeamformerFilter() = default;
    BeamformerFilter(std::size_t c, std::size_t f) : channels(c), bins(f), data(c * f) {}
    cplx *at(std::size_t f) { return data.data() + f * channels; }
    const cplx *at(std::size_t f) const { return data.data() + f * channels; }
};

struct BeamformOptions {
    // Keyword regions are ~43 frames, so the masked covariances are close to
    // rank deficient; loading below ~1e-4 lets the filter self-null through
    // tiny steering mismatches (white-noise gains in the hundreds).
    double delta_loading = 1e-3;
    double power_iter_tol = 1e-12;
    int power_iter_max = 10000;
    std::uint64_t seed = 0x6b77626d76647200ULL;  // start-vector perturbation stream
};

struct BeamformDiagnostics {
    std::vector<std::size_t> degenerate_bins;     // zero R_kk, steering fell back
    std::vector<std::size_t> loaded_fallback_bins;  // zero-trace R_nn, delay-and-sum
    double keyword_mask_mean = 0.0;
    double non_keyword_mask_mean = 0.0;
    int filter_estimations = 0;
};

// Element-wise median across channels; an even channel count averages the
// two middle order statistics.
inline Matrix median_mask(std::span<const Matrix> channel_masks) {
    require(!channel_masks.empty(), "median: no masks");
    const std::size_t rows = channel_masks[0].rows(), cols = channel_masks[0].cols();
    for (const Matrix &m : channel_masks)
        require(m.rows() == rows && m.cols() == cols, "median: mask shapes differ");
    const std::size_t c = channel_masks.size();
    Matrix out(rows, cols);
    std::vector<double> vals(c);
    for (std::size_t i = 0, n = rows * cols; i < n; ++i) {
        for (std::size_t ch = 0; ch < c; ++ch) vals[ch] = channel_masks[ch].data()[i];
        std::sort(vals.begin(), vals.end());
        out.data()[i] = c % 2 == 1 ? vals[c / 2] : 0.5 * (vals[c / 2 - 1] + vals[c / 2]);
    }
    return out;
}

// R(f) = sum over region frames of (m Y)(m Y)^h; the mask scales the snapshot
// on both sides, entering the sum squared. Output is exactly Hermitian by
// construction (upper triangle computed, lower mirrored).
inline SpatialCovariance masked_covariance(const MultichannelSpectrogram &y, const Matrix &mask,
                                           std::span<const std::size_t> region) {
    y.validate();
    require(!region.empty(), "covariance: empty frame region");
    require(mask.rows() == y.frames() && mask.cols() == y.bins(),
            "covariance: mask shape must cover the full spectrogram");
    for (std::size_t t : region)
        require(t < y.frames(), "covariance: region frame out of range");

    const std::size_t c = y.num_channels();
    SpatialCovariance cov(c, y.bins());
    parallel_for(y.bins(), [&](std::size_t f) {
        cplx *r = cov.at(f);
        std::vector<cplx> snapshot(c);
        for (std::size_t t : region) {
            const double m = mask(t, f);
            const double m2 = m * m;
            if (m2 == 0.0) continue;
            for (std::size_t ch = 0; ch < c; ++ch) snapshot[ch] = y.channels[ch](t, f);
            for (std::size_t i = 0; i < c; ++i)
                for (std::size_t j = i; j < c; ++j)
                    r[i * c + j] += m2 * snapshot[i] * std::conj(snapshot[j]);
        }
        for (std::size_t i = 0; i < c; ++i)
            for (std::size_t j = 0; j < i; ++j) r[i * c + j] = std::conj(r[j * c + i]);
    });
    return cov;
}

namespace detail {

inline double vec_norm(std::span<const cplx> v) {
    double s = 0.0;
    for (const cplx &z : v) s += std::norm(z);
    return std::sqrt(s);
}

inline cplx vec_dot(std::span<const cplx> a, std::span<const cplx> b) {
    cplx s = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) s += std::conj(a[i]) * b[i];
    return s;
}

// rotate so the first component is real and non-negative
inline void canonical_phase(std::span<cplx> v) {
    const double mag = std::abs(v[0]);
    if (mag == 0.0) return;
    const cplx rot = std::conj(v[0]) / mag;
    for (cplx &z : v) z *= rot;
    v[0] = {std::abs(v[0].real()), 0.0};  // crush residual rounding in the imaginary part
}

// Cholesky solve of a Hermitian positive definite c x c system, a overwritten
// with L. Returns false when a pivot fails.
inline bool cholesky_solve(std::vector<cplx> &a, std::size_t c, const cplx *b, cplx *x) {
    for (std::size_t j = 0; j < c; ++j) {
        double d = a[j * c + j].real();
        for (std::size_t k = 0; k < j; ++k) d -= std::norm(a[j * c + k]);
        if (!(d > 0.0)) return false;
        const double ljj = std::sqrt(d);
        a[j * c + j] = ljj;
        for (std::size_t i = j + 1; i < c; ++i) {
            cplx s = a[i * c + j];
            for (std::size_t k = 0; k < j; ++k) s -= a[i * c + k] * std::conj(a[j * c + k]);
            a[i * c + j] = s / ljj;
        }
    }
    // L y = b
    std::vector<cplx> y(c);
    for (std::size_t i = 0; i < c; ++i) {
        cplx s = b[i];
        for (std::size_t k = 0; k < i; ++k) s -= a[i * c + k] * y[k];
        y[i] = s / a[i * c + i].real();
    }
    // L^h x = y
    for (std::size_t i = c; i-- > 0;) {
        cplx s = y[i];
        for (std::size_t k = i + 1; k < c; ++k) s -= std::conj(a[k * c + i]) * x[k];
        x[i] = s / a[i * c + i].real();
    }
    return true;
}

}  // namespace detail

// Principal eigenvector per bin by power iteration from the deterministic
// start (1,..,1)/sqrt(c) plus a seeded perturbation; stops when the direction
// change drops below the tolerance. A zero covariance marks the bin
// degenerate and keeps the canonical start direction.
inline SteeringVector steering_from_covariance(const SpatialCovariance &rkk,
                                               const BeamformOptions &opts = {},
                                               BeamformDiagnostics *diag = nullptr) {
    const std::size_t c = rkk.channels;
    SteeringVector steering(c, rkk.bins);
    std::vector<char> degenerate(rkk.bins, 0);
    parallel_for(rkk.bins, [&](std::size_t f) {
        const cplx *r = rkk.at(f);
        cplx *v = steering.at(f);

        double scale = 0.0;
        for (std::size_t i = 0; i < c * c; ++i) scale = std::max(scale, std::abs(r[i]));
        if (scale == 0.0) {
            const double unit = 1.0 / std::sqrt(static_cast<double>(c));
            for (std::size_t i = 0; i < c; ++i) v[i] = unit;
            degenerate[f] = 1;
            return;
        }

        Rng rng(hash_seed(opts.seed, f));
        std::vector<cplx> w(c), next(c);
        const double unit = 1.0 / std::sqrt(static_cast<double>(c));
        for (std::size_t i = 0; i < c; ++i)
            w[i] = cplx(unit + 1e-3 * rng.uniform(-1.0, 1.0), 1e-3 * rng.uniform(-1.0, 1.0));
        double norm = detail::vec_norm(w);
        for (auto &z : w) z /= norm;

        for (int iter = 0; iter < opts.power_iter_max; ++iter) {
            for (std::size_t i = 0; i < c; ++i) {
                cplx s = 0.0;
                for (std::size_t j = 0; j < c; ++j) s += r[i * c + j] * w[j];
                next[i] = s;
            }
            norm = detail::vec_norm(next);
            if (norm == 0.0) break;  // w fell exactly into the null space
            for (auto &z : next) z /= norm;
            const double delta = 1.0 - std::abs(detail::vec_dot(w, next));
            w = next;
            if (delta < opts.power_iter_tol) break;
        }
        norm = detail::vec_norm(w);
        for (std::size_t i = 0; i < c; ++i) v[i] = w[i] / norm;
        detail::canonical_phase(std::span<cplx>(v, c));
    });
    if (diag)
        for (std::size_t f = 0; f < rkk.bins; ++f)
            if (degenerate[f]) diag->degenerate_bins.push_back(f);
    return steering;
}

// gamma(f) = Rl^-1 v / (v^h Rl^-1 v) with Rl = R + delta (tr R / c) I.
// A zero-trace bin falls back to the plain matched filter gamma = v and is
// reported through the diagnostics.
inline BeamformerFilter mvdr_filter(const SpatialCovariance &rnn, const SteeringVector &v,
                                    const BeamformOptions &opts = {},
                                    BeamformDiagnostics *diag = nullptr) {
    require(rnn.channels == v.channels && rnn.bins == v.bins,
            "mvdr: covariance and steering shapes differ");
    const std::size_t c = rnn.channels;
    BeamformerFilter gamma(c, rnn.bins);
    std::vector<char> fallback(rnn.bins, 0);
    parallel_for(rnn.bins, [&](std::size_t f) {
        const cplx *r = rnn.at(f);
        const cplx *vf = v.at(f);
        cplx *g = gamma.at(f);

        double trace = 0.0;
        for (std::size_t i = 0; i < c; ++i) trace += r[i * c + i].real();
        if (!(trace > 0.0)) {
            const cplx denom = detail::vec_dot(std::span<const cplx>(vf, c),
                                               std::span<const cplx>(vf, c));
            for (std::size_t i = 0; i < c; ++i) g[i] = vf[i] / denom.real();
            fallback[f] = 1;
            return;
        }

        std::vector<cplx> loaded(r, r + c * c);
        const double load = opts.delta_loading * trace / static_cast<double>(c);
        for (std::size_t i = 0; i < c; ++i) loaded[i * c + i] += load;

        std::vector<cplx> z(c);
        if (!detail::cholesky_solve(loaded, c, vf, z.data()))
            throw NumericError("mvdr: covariance not positive definite after loading at bin " +
                               std::to_string(f));
        const cplx denom = detail::vec_dot(std::span<const cplx>(vf, c), std::span<const cplx>(z));
        require_numeric(std::abs(denom) > 0.0, "mvdr: vanishing quadratic form at bin " +
                                                   std::to_string(f));
        for (std::size_t i = 0; i < c; ++i) g[i] = z[i] / denom;
    });
    if (diag)
        for (std::size_t f = 0; f < rnn.bins; ++f)
            if (fallback[f]) diag->loaded_fallback_bins.push_back(f);
    for (const cplx &z : gamma.data)
        require_numeric(std::isfinite(z.real()) && std::isfinite(z.imag()),
                        "mvdr: non-finite filter coefficient");
    return gamma;
}

// x(tau, f) = gamma(f)^h Y(tau, f); the filter stays fixed over all frames.
inline ComplexSpectrogram apply_filter(const BeamformerFilter &gamma,
                                       const MultichannelSpectrogram &y) {
    y.validate();
    require(gamma.channels == y.num_channels(), "apply: channel count mismatch");
    require(gamma.bins == y.bins(), "apply: bin count mismatch");
    ComplexSpectrogram out(y.frames(), y.bins(), y.channels[0].config);
    parallel_for(y.frames(), [&](std::size_t t) {
        for (std::size_t f = 0; f < y.bins(); ++f) {
            const cplx *g = gamma.at(f);
            cplx s = 0.0;
            for (std::size_t ch = 0; ch < y.num_channels(); ++ch)
                s += std::conj(g[ch]) * y.channels[ch](t, f);
            out(t, f) = s;
        }
    });
    return out;
}

// Shared tail of the estimation path: full-T masks (keyword and non-keyword)
// already fused across channels and extended to every bin.
inline BeamformerFilter estimate_from_masks(const MultichannelSpectrogram &y,
                                            const Matrix &keyword_mask,
                                            const Matrix &non_keyword_mask,
                                            std::span<const std::size_t> region,
                                            const BeamformOptions &opts,
                                            BeamformDiagnostics *diag = nullptr) {
    const SpatialCovariance rnn = masked_covariance(y, non_keyword_mask, region);
    const SpatialCovariance rkk = masked_covariance(y, keyword_mask, region);
    const SteeringVector v = steering_from_covariance(rkk, opts, diag);
    BeamformerFilter gamma = mvdr_filter(rnn, v, opts, diag);
    if (diag) {
        double ksum = 0.0, nsum = 0.0;
        for (std::size_t t : region)
            for (std::size_t f = 0; f < y.bins(); ++f) {
                ksum += keyword_mask(t, f);
                nsum += non_keyword_mask(t, f);
            }
        const double cells = static_cast<double>(region.size() * y.bins());
        diag->keyword_mask_mean = ksum / cells;
        diag->non_keyword_mask_mean = nsum / cells;
        diag->filter_estimations += 1;
    }
    return gamma;
}

// Extends a T_region x 256 mask to a full T x bins matrix: rows scattered at
// their absolute frame indices, bins past 255 reuse bin 255's value.
inline Matrix expand_region_mask(const Matrix &mask, std::span<const std::size_t> region,
                                 std::size_t total_frames, std::size_t bins) {
    require(mask.rows() == region.size(), "mask: row count must match the region");
    require(mask.cols() <= bins, "mask: more mask bins than spectrogram bins");
    Matrix full(total_frames, bins);
    for (std::size_t i = 0; i < region.size(); ++i) {
        double *row = full.row(region[i]);
        std::memcpy(row, mask.row(i), mask.cols() * sizeof(double));
        for (std::size_t f = mask.cols(); f < bins; ++f) row[f] = mask(i, mask.cols() - 1);
    }
    return full;
}

// Full estimation path of the enhancement pipeline: run the mask net per
// channel on the keyword-region magnitudes, median-fuse both mask kinds,
// extend them over all bins and hand off to the MVDR construction.
inline BeamformerFilter estimate_from_keyword(const MultichannelSpectrogram &y,
                                              const MaskNetModel &model,
                                              std::span<const std::size_t> region,
                                              const FeatureConfig &feat = {},
                                              const BeamformOptions &opts = {},
                                              BeamformDiagnostics *diag = nullptr) {
    y.validate();
    require(!region.empty(), "estimate: empty keyword region");
    for (std::size_t t : region) require(t < y.frames(), "estimate: region frame out of range");

    const std::size_t c = y.num_channels();
    std::vector<Matrix> keyword_masks(c), non_keyword_masks(c);
    parallel_for(c, [&](std::size_t ch) {
        const MagnitudeSpectrogram mag = magnitude(y.channels[ch]);
        MagnitudeSpectrogram region_mag(region.size(), mag.bins);
        for (std::size_t i = 0; i < region.size(); ++i)
            std::memcpy(region_mag.row(i), mag.row(region[i]), mag.bins * sizeof(double));
        MaskPair masks = forward(model, region_mag, feat);
        keyword_masks[ch] = std::move(masks.keyword);
        non_keyword_masks[ch] = std::move(masks.non_keyword);
    });

    const Matrix keyword_fused = median_mask(keyword_masks);
    const Matrix non_keyword_fused = median_mask(non_keyword_masks);
    const Matrix keyword_full = expand_region_mask(keyword_fused, region, y.frames(), y.bins());
    const Matrix non_keyword_full =
        expand_region_mask(non_keyword_fused, region, y.frames(), y.bins());
    return estimate_from_masks(y, keyword_full, non_keyword_full, region, opts, diag);
}

// Filter dump "KWBF1": u32 channels, u32 bins, then per bin c complex128.
inline void save_filter(const BeamformerFilter &gamma, const std::string &path) {
    std::FILE *f = std::fopen(path.c_str(), "wb");
    if (!f) throw IoError("filter: cannot open for write " + path);
    detail::FileCloser closer{f};
    std::fwrite("KWBF1", 1, 5, f);
    const std::uint32_t c = static_cast<std::uint32_t>(gamma.channels);
    const std::uint32_t b = static_cast<std::uint32_t>(gamma.bins);
    std::fwrite(&c, 4, 1, f);
    std::fwrite(&b, 4, 1, f);
    for (const cplx &z : gamma.data) {
        const double re = z.real(), im = z.imag();
        std::fwrite(&re, 8, 1, f);
        std::fwrite(&im, 8, 1, f);
    }
    if (std::fflush(f) != 0) throw IoError("filter: write failed " + path);
}

inline BeamformerFilter load_filter(const std::string &path) {
    std::FILE *f = std::fopen(path.c_str(), "rb");
    if (!f) throw IoError("filter: cannot open " + path);
    detail::FileCloser closer{f};
    char magic[5];
    std::uint32_t c = 0, b = 0;
    if (std::fread(magic, 1, 5, f) != 5 || std::memcmp(magic, "KWBF1", 5) != 0 ||
        std::fread(&c, 4, 1, f) != 1 || std::fread(&b, 4, 1, f) != 1)
        throw IoError("filter: not a KWBF1 file: " + path);
    BeamformerFilter gamma(c, b);
    for (cplx &z : gamma.data) {
        double re = 0.0, im = 0.0;
        if (std::fread(&re, 8, 1, f) != 1 || std::fread(&im, 8, 1, f) != 1)
            throw IoError("filter: truncated KWBF1 file: " + path);
        z = {re, im};
    }
    return gamma;
}

}  // namespace kwbeam
