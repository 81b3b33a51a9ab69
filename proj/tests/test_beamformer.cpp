// MVDR construction checks: median fusion, masked covariances against a
// naive reference, steering vectors against a Jacobi eigensolver, the
// distortionless and optimality properties of the filter, and filter
// application identities.

#include <catch2/catch.hpp>

#include <cmath>
#include <complex>
#include <cstdio>
#include <vector>

#include "kwbeam/beamformer.hpp"
#include "kwbeam/rng.hpp"
#include "support/jacobi.hpp"

using namespace kwbeam;

namespace {

std::vector<cplx> random_hpd(std::size_t c, Rng &rng, double ridge = 0.0) {
    // B B^h (+ ridge I): Hermitian positive (semi)definite by construction
    std::vector<cplx> b(c * c), a(c * c, cplx(0.0, 0.0));
    for (auto &z : b) z = {rng.uniform(-1.0, 1.0), rng.uniform(-1.0, 1.0)};
    for (std::size_t i = 0; i < c; ++i)
        for (std::size_t j = 0; j < c; ++j) {
            cplx s = 0.0;
            for (std::size_t k = 0; k < c; ++k) s += b[i * c + k] * std::conj(b[j * c + k]);
            a[i * c + j] = s;
        }
    for (std::size_t i = 0; i < c; ++i) a[i * c + i] += ridge;
    return a;
}

std::vector<cplx> random_unit_vector(std::size_t c, Rng &rng) {
    std::vector<cplx> v(c);
    double norm = 0.0;
    for (auto &z : v) {
        z = {rng.uniform(-1.0, 1.0), rng.uniform(-1.0, 1.0)};
        norm += std::norm(z);
    }
    norm = std::sqrt(norm);
    for (auto &z : v) z /= norm;
    return v;
}

MultichannelSpectrogram random_multichannel(std::size_t c, std::size_t frames, std::size_t bins,
                                            std::uint64_t seed) {
    Rng rng(seed);
    MultichannelSpectrogram y;
    y.channels.assign(c, ComplexSpectrogram(frames, bins));
    for (auto &ch : y.channels)
        for (auto &z : ch.data) z = {rng.uniform(-1.0, 1.0), rng.uniform(-1.0, 1.0)};
    return y;
}

Matrix random_mask(std::size_t frames, std::size_t bins, std::uint64_t seed) {
    Rng rng(seed);
    Matrix m(frames, bins);
    for (std::size_t i = 0; i < frames * bins; ++i) m.data()[i] = rng.uniform(0.0, 1.0);
    return m;
}

std::vector<std::size_t> all_frames(std::size_t n) {
    std::vector<std::size_t> r(n);
    for (std::size_t i = 0; i < n; ++i) r[i] = i;
    return r;
}

cplx dot_h(const cplx *a, const cplx *b, std::size_t c) {
    cplx s = 0.0;
    for (std::size_t i = 0; i < c; ++i) s += std::conj(a[i]) * b[i];
    return s;
}

// w^h A w for Hermitian A
double quad_form(const cplx *a, const cplx *w, std::size_t c) {
    cplx s = 0.0;
    for (std::size_t i = 0; i < c; ++i)
        for (std::size_t j = 0; j < c; ++j) s += std::conj(w[i]) * a[i * c + j] * w[j];
    return s.real();
}

}  // namespace

TEST_CASE("median of one channel is the identity") {
    Matrix m = random_mask(6, 9, 1);
    std::vector<Matrix> masks{m};
    Matrix out = median_mask(masks);
    for (std::size_t i = 0; i < 54; ++i) REQUIRE(out.data()[i] == m.data()[i]);
}

TEST_CASE("even channel count averages the two middle statistics") {
    std::vector<Matrix> masks(4, Matrix(1, 1));
    masks[0](0, 0) = 0.1;
    masks[1](0, 0) = 0.2;
    masks[2](0, 0) = 0.8;
    masks[3](0, 0) = 0.9;
    CHECK(median_mask(masks)(0, 0) == Approx(0.5));
}

TEST_CASE("median of three channels matches sort-and-pick") {
    std::vector<Matrix> masks{random_mask(4, 7, 2), random_mask(4, 7, 3), random_mask(4, 7, 4)};
    Matrix out = median_mask(masks);
    for (std::size_t i = 0; i < 28; ++i) {
        std::vector<double> vals{masks[0].data()[i], masks[1].data()[i], masks[2].data()[i]};
        std::sort(vals.begin(), vals.end());
        REQUIRE(out.data()[i] == vals[1]);
    }
}

TEST_CASE("zero mask gives a zero covariance at every bin") {
    MultichannelSpectrogram y = random_multichannel(3, 10, 5, 11);
    Matrix mask(10, 5, 0.0);
    SpatialCovariance cov = masked_covariance(y, mask, all_frames(10));
    for (const cplx &z : cov.data) REQUIRE(z == cplx(0.0, 0.0));
}

TEST_CASE("single unmasked frame gives the rank-1 outer product") {
    const std::size_t c = 3;
    Rng rng(13);
    MultichannelSpectrogram y;
    y.channels.assign(c, ComplexSpectrogram(1, 2));
    std::vector<cplx> v = random_unit_vector(c, rng);
    for (std::size_t ch = 0; ch < c; ++ch)
        for (std::size_t f = 0; f < 2; ++f) y.channels[ch](0, f) = v[ch];
    Matrix mask(1, 2, 1.0);
    std::vector<std::size_t> region{0};
    SpatialCovariance cov = masked_covariance(y, mask, region);
    for (std::size_t f = 0; f < 2; ++f) {
        const cplx *r = cov.at(f);
        for (std::size_t i = 0; i < c; ++i)
            for (std::size_t j = 0; j < c; ++j)
                REQUIRE(std::abs(r[i * c + j] - v[i] * std::conj(v[j])) < 1e-15);
    }
}

TEST_CASE("masked covariance matches a naive double loop") {
    const std::size_t c = 4, frames = 12, bins = 6;
    MultichannelSpectrogram y = random_multichannel(c, frames, bins, 17);
    Matrix mask = random_mask(frames, bins, 18);
    std::vector<std::size_t> region{1, 3, 4, 7, 11};
    SpatialCovariance cov = masked_covariance(y, mask, region);

    for (std::size_t f = 0; f < bins; ++f) {
        for (std::size_t i = 0; i < c; ++i) {
            for (std::size_t j = 0; j < c; ++j) {
                cplx want = 0.0;
                for (std::size_t t : region) {
                    const cplx yi = mask(t, f) * y.channels[i](t, f);
                    const cplx yj = mask(t, f) * y.channels[j](t, f);
                    want += yi * std::conj(yj);
                }
                REQUIRE(std::abs(cov.at(f)[i * c + j] - want) < 1e-12);
            }
        }
    }
}

TEST_CASE("masked covariance is Hermitian PSD for any non-negative mask") {
    const std::size_t c = 4, frames = 20, bins = 8;
    MultichannelSpectrogram y = random_multichannel(c, frames, bins, 21);
    Matrix mask = random_mask(frames, bins, 22);
    SpatialCovariance cov = masked_covariance(y, mask, all_frames(frames));
    for (std::size_t f = 0; f < bins; ++f) {
        const cplx *r = cov.at(f);
        double trace = 0.0;
        for (std::size_t i = 0; i < c; ++i) trace += r[i * c + i].real();
        for (std::size_t i = 0; i < c; ++i)
            for (std::size_t j = 0; j < c; ++j)
                REQUIRE(std::abs(r[i * c + j] - std::conj(r[j * c + i])) < 1e-12);
        std::vector<cplx> a(r, r + c * c);
        CHECK(kwbeam_test::min_eigenvalue(a, c) >= -1e-10 * trace);
    }
}

TEST_CASE("steering recovers the principal direction of a rank-1 covariance") {
    const std::size_t c = 4;
    Rng rng(31);
    std::vector<cplx> v = random_unit_vector(c, rng);
    SpatialCovariance cov(c, 1);
    for (std::size_t i = 0; i < c; ++i)
        for (std::size_t j = 0; j < c; ++j) cov.at(0)[i * c + j] = v[i] * std::conj(v[j]);

    SteeringVector steer = steering_from_covariance(cov);
    // compare after rotating v into the same canonical phase
    std::vector<cplx> want = v;
    const cplx rot = std::conj(want[0]) / std::abs(want[0]);
    for (auto &z : want) z *= rot;
    for (std::size_t i = 0; i < c; ++i) REQUIRE(std::abs(steer.at(0)[i] - want[i]) < 1e-10);
}

TEST_CASE("identity covariance yields some unit vector in canonical phase") {
    const std::size_t c = 2;
    SpatialCovariance cov(c, 1);
    cov.at(0)[0] = 1.0;
    cov.at(0)[3] = 1.0;
    SteeringVector steer = steering_from_covariance(cov);
    double norm = 0.0;
    for (std::size_t i = 0; i < c; ++i) norm += std::norm(steer.at(0)[i]);
    CHECK(std::sqrt(norm) == Approx(1.0).margin(1e-12));
    CHECK(steer.at(0)[0].imag() == 0.0);
    CHECK(steer.at(0)[0].real() >= 0.0);
}

TEST_CASE("power iteration matches the Jacobi eigensolver on random HPD matrices") {
    for (std::size_t c : {2ul, 4ul, 8ul}) {
        Rng rng(41 + c);
        for (int trial = 0; trial < 20; ++trial) {
            std::vector<cplx> a = random_hpd(c, rng);
            SpatialCovariance cov(c, 1);
            std::copy(a.begin(), a.end(), cov.at(0));
            SteeringVector steer = steering_from_covariance(cov);

            // Rayleigh quotient of the returned vector vs the true maximum
            const double lambda = quad_form(a.data(), steer.at(0), c);
            const double want = kwbeam_test::max_eigenvalue(a, c);
            REQUIRE(lambda == Approx(want).epsilon(1e-9));
        }
    }
}

TEST_CASE("degenerate zero covariance is flagged") {
    SpatialCovariance cov(3, 2);  // all zeros
    BeamformDiagnostics diag;
    SteeringVector steer = steering_from_covariance(cov, {}, &diag);
    REQUIRE(diag.degenerate_bins.size() == 2);
    for (std::size_t i = 0; i < 3; ++i)
        CHECK(steer.at(0)[i].real() == Approx(1.0 / std::sqrt(3.0)));
}

TEST_CASE("scalar MVDR is the unit passthrough") {
    SpatialCovariance rnn(1, 1);
    rnn.at(0)[0] = 2.5;
    SteeringVector v(1, 1);
    v.at(0)[0] = 1.0;
    BeamformerFilter gamma = mvdr_filter(rnn, v);
    CHECK(std::abs(gamma.at(0)[0] - cplx(1.0, 0.0)) < 1e-12);
}

TEST_CASE("identity noise covariance returns the steering vector") {
    const std::size_t c = 4;
    Rng rng(51);
    SpatialCovariance rnn(c, 1);
    for (std::size_t i = 0; i < c; ++i) rnn.at(0)[i * c + i] = 1.0;
    std::vector<cplx> v = random_unit_vector(c, rng);
    SteeringVector steer(c, 1);
    std::copy(v.begin(), v.end(), steer.at(0));
    BeamformerFilter gamma = mvdr_filter(rnn, steer);
    for (std::size_t i = 0; i < c; ++i) CHECK(std::abs(gamma.at(0)[i] - v[i]) < 1e-6);
}

TEST_CASE("the filter is distortionless") {
    for (std::size_t c : {2ul, 4ul, 8ul}) {
        Rng rng(61 + c);
        for (int trial = 0; trial < 50; ++trial) {
            SpatialCovariance rnn(c, 1);
            std::vector<cplx> a = random_hpd(c, rng, 0.1);
            std::copy(a.begin(), a.end(), rnn.at(0));
            std::vector<cplx> v = random_unit_vector(c, rng);
            SteeringVector steer(c, 1);
            std::copy(v.begin(), v.end(), steer.at(0));
            BeamformerFilter gamma = mvdr_filter(rnn, steer);
            REQUIRE(std::abs(dot_h(gamma.at(0), v.data(), c) - cplx(1.0, 0.0)) < 1e-8);
        }
    }
}

TEST_CASE("no sampled unit-gain competitor beats the MVDR filter") {
    const std::size_t c = 4;
    Rng rng(71);
    BeamformOptions opts;
    for (int trial = 0; trial < 10; ++trial) {
        std::vector<cplx> a = random_hpd(c, rng, 0.05);
        SpatialCovariance rnn(c, 1);
        std::copy(a.begin(), a.end(), rnn.at(0));
        std::vector<cplx> v = random_unit_vector(c, rng);
        SteeringVector steer(c, 1);
        std::copy(v.begin(), v.end(), steer.at(0));
        BeamformerFilter gamma = mvdr_filter(rnn, steer, opts);

        // optimality is with respect to the loaded matrix actually inverted
        double trace = 0.0;
        for (std::size_t i = 0; i < c; ++i) trace += a[i * c + i].real();
        std::vector<cplx> loaded = a;
        for (std::size_t i = 0; i < c; ++i)
            loaded[i * c + i] += opts.delta_loading * trace / static_cast<double>(c);

        const double best = quad_form(loaded.data(), gamma.at(0), c);
        for (int k = 0; k < 1000; ++k) {
            std::vector<cplx> w(c);
            for (auto &z : w) z = {rng.uniform(-1.0, 1.0), rng.uniform(-1.0, 1.0)};
            const cplx s = dot_h(w.data(), v.data(), c);
            if (std::abs(s) < 1e-6) continue;
            for (auto &z : w) z /= std::conj(s);  // now w^h v = 1
            REQUIRE(quad_form(loaded.data(), w.data(), c) >= best - 1e-9);
        }
    }
}

TEST_CASE("zero-trace noise covariance falls back to delay-and-sum") {
    const std::size_t c = 3;
    Rng rng(81);
    SpatialCovariance rnn(c, 1);  // zero matrix
    std::vector<cplx> v = random_unit_vector(c, rng);
    SteeringVector steer(c, 1);
    std::copy(v.begin(), v.end(), steer.at(0));
    BeamformDiagnostics diag;
    BeamformerFilter gamma = mvdr_filter(rnn, steer, {}, &diag);
    REQUIRE(diag.loaded_fallback_bins == std::vector<std::size_t>{0});
    for (std::size_t i = 0; i < c; ++i) CHECK(std::abs(gamma.at(0)[i] - v[i]) < 1e-12);
}

TEST_CASE("gamma = e1 copies the reference channel") {
    const std::size_t c = 3, frames = 6, bins = 4;
    MultichannelSpectrogram y = random_multichannel(c, frames, bins, 91);
    BeamformerFilter gamma(c, bins);
    for (std::size_t f = 0; f < bins; ++f) gamma.at(f)[0] = 1.0;
    ComplexSpectrogram out = apply_filter(gamma, y);
    for (std::size_t t = 0; t < frames; ++t)
        for (std::size_t f = 0; f < bins; ++f) REQUIRE(out(t, f) == y.channels[0](t, f));
}

TEST_CASE("a source along the steering vector passes through undistorted") {
    const std::size_t c = 4, frames = 8, bins = 3;
    Rng rng(101);
    MultichannelSpectrogram y;
    y.channels.assign(c, ComplexSpectrogram(frames, bins));
    std::vector<std::vector<cplx>> v(bins);
    for (std::size_t f = 0; f < bins; ++f) v[f] = random_unit_vector(c, rng);

    ComplexSpectrogram source(frames, bins);
    for (auto &z : source.data) z = {rng.uniform(-1.0, 1.0), rng.uniform(-1.0, 1.0)};
    for (std::size_t ch = 0; ch < c; ++ch)
        for (std::size_t t = 0; t < frames; ++t)
            for (std::size_t f = 0; f < bins; ++f)
                y.channels[ch](t, f) = source(t, f) * v[f][ch];

    SpatialCovariance rnn(c, bins);
    for (std::size_t f = 0; f < bins; ++f)
        for (std::size_t i = 0; i < c; ++i) rnn.at(f)[i * c + i] = 1.0;
    SteeringVector steer(c, bins);
    for (std::size_t f = 0; f < bins; ++f) std::copy(v[f].begin(), v[f].end(), steer.at(f));
    BeamformerFilter gamma = mvdr_filter(rnn, steer);
    ComplexSpectrogram out = apply_filter(gamma, y);
    for (std::size_t t = 0; t < frames; ++t)
        for (std::size_t f = 0; f < bins; ++f)
            REQUIRE(std::abs(out(t, f) - source(t, f)) < 1e-8);
}

TEST_CASE("apply_filter is linear in the spectrogram") {
    const std::size_t c = 3, frames = 5, bins = 4;
    MultichannelSpectrogram y1 = random_multichannel(c, frames, bins, 111);
    MultichannelSpectrogram y2 = random_multichannel(c, frames, bins, 112);
    MultichannelSpectrogram sum = y1;
    for (std::size_t ch = 0; ch < c; ++ch)
        for (std::size_t i = 0; i < frames * bins; ++i)
            sum.channels[ch].data[i] += y2.channels[ch].data[i];

    Rng rng(113);
    BeamformerFilter gamma(c, bins);
    for (auto &z : gamma.data) z = {rng.uniform(-1.0, 1.0), rng.uniform(-1.0, 1.0)};

    ComplexSpectrogram a = apply_filter(gamma, y1);
    ComplexSpectrogram b = apply_filter(gamma, y2);
    ComplexSpectrogram s = apply_filter(gamma, sum);
    for (std::size_t i = 0; i < s.data.size(); ++i)
        REQUIRE(std::abs(s.data[i] - (a.data[i] + b.data[i])) < 1e-12);
}

TEST_CASE("scaling the masks leaves the filter unchanged") {
    const std::size_t c = 3, frames = 30, bins = 6;
    MultichannelSpectrogram y = random_multichannel(c, frames, bins, 121);
    Matrix kmask = random_mask(frames, bins, 122);
    Matrix nmask = random_mask(frames, bins, 123);
    auto region = all_frames(frames);

    BeamformerFilter g1 = estimate_from_masks(y, kmask, nmask, region, {});
    Matrix kmask2 = kmask, nmask2 = nmask;
    for (std::size_t i = 0; i < frames * bins; ++i) {
        kmask2.data()[i] *= 3.7;
        nmask2.data()[i] *= 3.7;
    }
    BeamformerFilter g2 = estimate_from_masks(y, kmask2, nmask2, region, {});
    for (std::size_t i = 0; i < g1.data.size(); ++i)
        REQUIRE(std::abs(g1.data[i] - g2.data[i]) < 1e-9);
}

TEST_CASE("oracle keyword mask on a single active source recovers its matched filter") {
    // Y contains only the target: keyword mask 1 and non-keyword mask 0 over
    // the region drive R_nn to zero, so the filter falls back to the matched
    // filter along the estimated steering vector.
    const std::size_t c = 4, frames = 12, bins = 5;
    Rng rng(131);
    MultichannelSpectrogram y;
    y.channels.assign(c, ComplexSpectrogram(frames, bins));
    std::vector<std::vector<cplx>> v(bins);
    for (std::size_t f = 0; f < bins; ++f) v[f] = random_unit_vector(c, rng);
    for (std::size_t t = 0; t < frames; ++t)
        for (std::size_t f = 0; f < bins; ++f) {
            const cplx s(rng.uniform(-1.0, 1.0), rng.uniform(-1.0, 1.0));
            for (std::size_t ch = 0; ch < c; ++ch) y.channels[ch](t, f) = v[f][ch] * s;
        }

    auto region = all_frames(frames);
    Matrix kmask(frames, bins, 1.0);
    Matrix nmask(frames, bins, 0.0);
    BeamformDiagnostics diag;
    BeamformerFilter gamma = estimate_from_masks(y, kmask, nmask, region, {}, &diag);
    REQUIRE(diag.loaded_fallback_bins.size() == bins);
    REQUIRE(diag.filter_estimations == 1);

    for (std::size_t f = 0; f < bins; ++f) {
        std::vector<cplx> want = v[f];
        const cplx rot = std::conj(want[0]) / std::abs(want[0]);
        for (auto &z : want) z *= rot;
        for (std::size_t i = 0; i < c; ++i) REQUIRE(std::abs(gamma.at(f)[i] - want[i]) < 1e-8);
    }
}

TEST_CASE("empty regions are rejected") {
    MultichannelSpectrogram y = random_multichannel(2, 4, 3, 141);
    Matrix mask(4, 3, 1.0);
    std::vector<std::size_t> empty;
    CHECK_THROWS_AS(masked_covariance(y, mask, empty), ValidationError);
}

TEST_CASE("KWBF1 filter files round trip") {
    Rng rng(151);
    BeamformerFilter gamma(4, 7);
    for (auto &z : gamma.data) z = {rng.uniform(-1.0, 1.0), rng.uniform(-1.0, 1.0)};
    const std::string path = "test_filter.kwbf";
    save_filter(gamma, path);
    BeamformerFilter back = load_filter(path);
    std::remove(path.c_str());
    REQUIRE(back.channels == 4);
    REQUIRE(back.bins == 7);
    REQUIRE(back.data == gamma.data);
}
