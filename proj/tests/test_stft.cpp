// STFT analysis/synthesis checks: Fourier identities, round trips, Parseval
// at frame level and the KWSPEC1 dump format.

#include <catch2/catch.hpp>

#include <cmath>
#include <complex>
#include <cstdio>
#include <vector>

#include "kwbeam/rng.hpp"
#include "kwbeam/stft.hpp"

using namespace kwbeam;

namespace {

std::vector<double> random_signal(std::size_t n, std::uint64_t seed, double amp = 0.5) {
    Rng rng(seed);
    std::vector<double> x(n);
    for (auto &v : x) v = rng.uniform(-amp, amp);
    return x;
}

}  // namespace

TEST_CASE("pure cosine at a bin center concentrates energy there") {
    StftConfig cfg;
    const int bin = 5;
    std::vector<double> x(2048);
    for (std::size_t n = 0; n < x.size(); ++n)
        x[n] = std::cos(2.0 * M_PI * bin * static_cast<double>(n) / cfg.frame_len);
    ComplexSpectrogram spec = stft(x, cfg);
    REQUIRE(spec.frames == 1 + (2048 - 512) / 256);

    // periodic Hann has a three-bin kernel: bins 4..6 carry everything
    double inside_min = 1e300, outside_max = 0.0;
    for (std::size_t t = 0; t < spec.frames; ++t) {
        for (std::size_t f = 0; f < spec.bins; ++f) {
            const double m = std::abs(spec(t, f));
            if (f >= bin - 1 && f <= bin + 1)
                inside_min = std::min(inside_min, m);
            else
                outside_max = std::max(outside_max, m);
        }
    }
    CHECK(inside_min > 100.0 * outside_max);
}

TEST_CASE("zero signal gives an all-zero spectrogram") {
    std::vector<double> x(4096, 0.0);
    ComplexSpectrogram spec = stft(x);
    for (const auto &z : spec.data) CHECK(std::abs(z) == 0.0);
}

TEST_CASE("istft(stft(x)) reconstructs interior samples") {
    StftConfig cfg;
    for (std::uint64_t seed : {1ull, 2ull, 3ull}) {
        std::vector<double> x = random_signal(16000, seed);
        std::vector<double> y = istft(stft(x, cfg), cfg);
        REQUIRE(y.size() <= x.size());
        double max_err = 0.0;
        for (std::size_t n = cfg.frame_len; n + cfg.frame_len < y.size(); ++n)
            max_err = std::max(max_err, std::abs(y[n] - x[n]));
        CHECK(max_err < 1e-6);
    }
}

TEST_CASE("stft rejects signals shorter than one frame") {
    std::vector<double> x(511, 0.1);
    CHECK_THROWS_AS(stft(x), ValidationError);
}

TEST_CASE("istft rejects a mismatched config") {
    std::vector<double> x = random_signal(4096, 7);
    ComplexSpectrogram spec = stft(x);
    StftConfig other;
    other.frame_len = 256;
    other.frame_shift = 128;
    CHECK_THROWS_AS(istft(spec, other), ValidationError);
}

TEST_CASE("a single nonzero frame synthesizes to its windowed segment") {
    StftConfig cfg;
    std::vector<double> x = random_signal(4096, 11);
    ComplexSpectrogram spec = stft(x, cfg);
    const std::size_t keep = 3;
    for (std::size_t t = 0; t < spec.frames; ++t)
        if (t != keep)
            for (std::size_t f = 0; f < spec.bins; ++f) spec(t, f) = 0.0;

    std::vector<double> y = istft(spec, cfg);
    std::vector<double> w = hann_window(cfg.frame_len);
    const std::size_t off = keep * cfg.frame_shift;
    for (std::size_t n = 0; n < y.size(); ++n) {
        if (n >= off && n < off + cfg.frame_len) {
            CHECK(y[n] == Approx(w[n - off] * x[n]).margin(1e-12));
        } else {
            CHECK(y[n] == Approx(0.0).margin(1e-12));
        }
    }
}

TEST_CASE("istft is linear") {
    StftConfig cfg;
    ComplexSpectrogram s1 = stft(random_signal(4096, 21), cfg);
    ComplexSpectrogram s2 = stft(random_signal(4096, 22), cfg);
    const double a = 1.7, b = -0.4;
    ComplexSpectrogram mix = s1;
    for (std::size_t i = 0; i < mix.data.size(); ++i) mix.data[i] = a * s1.data[i] + b * s2.data[i];

    std::vector<double> y_mix = istft(mix, cfg);
    std::vector<double> y1 = istft(s1, cfg);
    std::vector<double> y2 = istft(s2, cfg);
    for (std::size_t n = 0; n < y_mix.size(); ++n)
        CHECK(y_mix[n] == Approx(a * y1[n] + b * y2[n]).margin(1e-9));
}

TEST_CASE("stft is linear in its input") {
    StftConfig cfg;
    std::vector<double> x1 = random_signal(2048, 31), x2 = random_signal(2048, 32);
    std::vector<double> mix(x1.size());
    const double a = 0.3, b = 2.1;
    for (std::size_t i = 0; i < mix.size(); ++i) mix[i] = a * x1[i] + b * x2[i];
    ComplexSpectrogram s1 = stft(x1, cfg), s2 = stft(x2, cfg), sm = stft(mix, cfg);
    for (std::size_t i = 0; i < sm.data.size(); ++i)
        CHECK(std::abs(sm.data[i] - (a * s1.data[i] + b * s2.data[i])) < 1e-9);
}

TEST_CASE("magnitude is the element-wise modulus") {
    ComplexSpectrogram spec(1, 2);
    spec(0, 0) = {3.0, 4.0};
    spec(0, 1) = {0.0, 0.0};
    MagnitudeSpectrogram mag = magnitude(spec);
    CHECK(mag(0, 0) == Approx(5.0));
    CHECK(mag(0, 1) == 0.0);
}

TEST_CASE("magnitude of a unit impulse is the window sample at its position") {
    StftConfig cfg;
    std::vector<double> x(cfg.frame_len, 0.0);
    const std::size_t pos = 100;
    x[pos] = 1.0;
    MagnitudeSpectrogram mag = magnitude(stft(x, cfg));
    REQUIRE(mag.frames == 1);
    const double expected = hann_window(cfg.frame_len)[pos];
    for (std::size_t f = 0; f < mag.bins; ++f) CHECK(mag(0, f) == Approx(expected).margin(1e-12));
}

TEST_CASE("frame-level Parseval holds") {
    StftConfig cfg;
    std::vector<double> x = random_signal(512, 41);
    ComplexSpectrogram spec = stft(x, cfg);
    REQUIRE(spec.frames == 1);

    std::vector<double> w = hann_window(cfg.frame_len);
    double time_energy = 0.0;
    for (int n = 0; n < cfg.frame_len; ++n) time_energy += (w[n] * x[n]) * (w[n] * x[n]);

    double freq_energy = std::norm(spec(0, 0)) + std::norm(spec(0, spec.bins - 1));
    for (std::size_t f = 1; f + 1 < spec.bins; ++f) freq_energy += 2.0 * std::norm(spec(0, f));
    freq_energy /= cfg.frame_len;

    CHECK(freq_energy == Approx(time_energy).epsilon(1e-9));
}

TEST_CASE("config invariants are enforced") {
    StftConfig bad;
    bad.frame_len = 500;  // not a power of two
    bad.frame_shift = 250;
    std::vector<double> x(1000, 0.0);
    CHECK_THROWS_AS(stft(x, bad), ValidationError);

    StftConfig bad_shift;
    bad_shift.frame_len = 512;
    bad_shift.frame_shift = 128;  // not 50%
    CHECK_THROWS_AS(stft(x, bad_shift), ValidationError);
}

TEST_CASE("KWSPEC1 dump round trips at float precision") {
    StftConfig cfg;
    ComplexSpectrogram spec = stft(random_signal(2048, 51), cfg);
    const std::string path = "test_spec_dump.kwspec";
    write_spectrogram(spec, path);
    ComplexSpectrogram back = read_spectrogram(path, cfg);
    std::remove(path.c_str());

    REQUIRE(back.frames == spec.frames);
    REQUIRE(back.bins == spec.bins);
    for (std::size_t i = 0; i < spec.data.size(); ++i) {
        CHECK(back.data[i].real() == static_cast<float>(spec.data[i].real()));
        CHECK(back.data[i].imag() == static_cast<float>(spec.data[i].imag()));
    }
}
