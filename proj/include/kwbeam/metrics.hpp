// metrics.hpp
// Signal-level evaluation. SDRi: frequency-averaged log ratio of
// mask-weighted desired to undesired power minus the pre-mask ratio xi, the
// mask entering the power sums linearly (a squared-mask variant sits behind
// a flag). Output SIR: the beamformer applied to each clean component
// separately, valid because filtering is linear in the spectrogram.

#pragma once

#include <cmath>
#include <span>
#include <string>
#include <vector>

#include "kwbeam/beamformer.hpp"
#include "kwbeam/error.hpp"
#include "kwbeam/linalg.hpp"
#include "kwbeam/stft.hpp"

namespace kwbeam {

struct SdriOptions {
    bool mask_squared = false;  // sensitivity variant: m^2 in the power sums
};

struct SdriReport {
    double sdri_db = 0.0;
    double xi_db = 0.0;
    std::vector<double> per_bin_db;          // masked-minus-unmasked, 0 where excluded
    std::vector<std::size_t> excluded_bins;  // bins left out of both averages
};

// Bins whose masked or unmasked power sums (desired or undesired side) fall
// below 1e-20 of the largest sum are excluded from both frequency averages,
// with the averaging count reduced accordingly; this keeps the report finite
// on silent or fully suppressed bins.
inline SdriReport sdri(const Matrix &mask, const MagnitudeSpectrogram &desired,
                       const MagnitudeSpectrogram &undesired,
                       std::span<const std::size_t> region, const SdriOptions &opts = {}) {
    require(desired.frames == undesired.frames && desired.bins == undesired.bins,
            "sdri: spectrogram shapes differ");
    require(mask.rows() == desired.frames && mask.cols() == desired.bins,
            "sdri: mask shape must match the spectrograms");
    require(!region.empty(), "sdri: empty frame region");
    for (std::size_t t : region) {
        require(t < desired.frames, "sdri: region frame out of range");
        for (std::size_t f = 0; f < mask.cols(); ++f)
            require(mask(t, f) >= 0.0 && mask(t, f) <= 1.0 && std::isfinite(mask(t, f)),
                    "sdri: mask values must lie in [0,1]");
    }

    const std::size_t bins = desired.bins;
    std::vector<double> masked_x(bins, 0.0), masked_n(bins, 0.0);
    std::vector<double> plain_x(bins, 0.0), plain_n(bins, 0.0);
    for (std::size_t t : region) {
        for (std::size_t f = 0; f < bins; ++f) {
            const double m = opts.mask_squared ? mask(t, f) * mask(t, f) : mask(t, f);
            const double xx = desired(t, f) * desired(t, f);
            const double nn = undesired(t, f) * undesired(t, f);
            masked_x[f] += m * xx;
            masked_n[f] += m * nn;
            plain_x[f] += xx;
            plain_n[f] += nn;
        }
    }

    double scale = 0.0;
    for (std::size_t f = 0; f < bins; ++f)
        scale = std::max({scale, masked_x[f], masked_n[f], plain_x[f], plain_n[f]});
    const double eps = 1e-20 * scale;

    SdriReport report;
    report.per_bin_db.assign(bins, 0.0);
    double sdri_sum = 0.0, plain_sum = 0.0;
    std::size_t included = 0;
    for (std::size_t f = 0; f < bins; ++f) {
        if (masked_x[f] < eps || masked_n[f] < eps || plain_x[f] < eps || plain_n[f] < eps) {
            report.excluded_bins.push_back(f);
            continue;
        }
        // per-bin improvement as one ratio of ratios: for the unit mask the
        // argument is literally X/X = 1 and the contribution an exact zero
        const double bin_db =
            10.0 * std::log10((masked_x[f] * plain_n[f]) / (masked_n[f] * plain_x[f]));
        sdri_sum += bin_db;
        plain_sum += 10.0 * std::log10(plain_x[f] / plain_n[f]);
        report.per_bin_db[f] = bin_db;
        ++included;
    }
    require_numeric(included > 0, "sdri: every frequency bin was excluded");

    report.xi_db = plain_sum / static_cast<double>(included);
    report.sdri_db = sdri_sum / static_cast<double>(included);
    return report;
}

struct SirReport {
    double input_sir_db = 0.0;
    double output_sir_db = 0.0;
    double improvement_db = 0.0;
};

// Filters the clean target and clean interference separately and compares
// output powers over the region; the input SIR is measured on channel 1.
inline SirReport output_sir(const BeamformerFilter &gamma,
                            const MultichannelSpectrogram &clean_target,
                            const MultichannelSpectrogram &clean_interference,
                            std::span<const std::size_t> region) {
    clean_target.validate();
    clean_interference.validate();
    require(clean_target.frames() == clean_interference.frames() &&
                clean_target.bins() == clean_interference.bins(),
            "sir: component spectrogram shapes differ");
    require(clean_target.num_channels() == clean_interference.num_channels(),
            "sir: channel counts differ");
    require(!region.empty(), "sir: empty frame region");
    for (std::size_t t : region)
        require(t < clean_target.frames(), "sir: region frame out of range");

    const ComplexSpectrogram out_target = apply_filter(gamma, clean_target);
    const ComplexSpectrogram out_interf = apply_filter(gamma, clean_interference);

    auto power_over = [&region](const ComplexSpectrogram &spec) {
        double p = 0.0;
        for (std::size_t t : region)
            for (std::size_t f = 0; f < spec.bins; ++f) p += std::norm(spec(t, f));
        return p;
    };

    const double in_t = power_over(clean_target.channels[0]);
    const double in_i = power_over(clean_interference.channels[0]);
    require(in_t > 0.0, "sir: zero target power over the region");
    require(in_i > 0.0, "sir: zero interference power over the region");
    const double out_t = power_over(out_target);
    const double out_i = power_over(out_interf);
    require_numeric(out_t > 0.0 && out_i > 0.0,
                    "sir: filtered component has exactly zero power over the region");

    SirReport report;
    report.input_sir_db = 10.0 * std::log10(in_t / in_i);
    report.output_sir_db = 10.0 * std::log10(out_t / out_i);
    report.improvement_db = report.output_sir_db - report.input_sir_db;
    return report;
}

}  // namespace kwbeam
