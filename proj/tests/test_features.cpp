// Splicing against a brute-force reference, Welford statistics against a
// naive two-pass oracle, and normalization self-consistency.

#include <catch2/catch.hpp>

#include <cmath>
#include <vector>

#include "kwbeam/features.hpp"
#include "kwbeam/rng.hpp"

using namespace kwbeam;

namespace {

MagnitudeSpectrogram random_mag(std::size_t frames, std::size_t bins, std::uint64_t seed) {
    Rng rng(seed);
    MagnitudeSpectrogram mag(frames, bins);
    for (auto &v : mag.data) v = rng.uniform(0.0, 2.0);
    return mag;
}

// reference splice: naive index arithmetic, no shared code with splice_row
Matrix splice_reference(const MagnitudeSpectrogram &mag, const FeatureConfig &cfg) {
    Matrix out(mag.frames, cfg.spliced_dim());
    for (long t = 0; t < static_cast<long>(mag.frames); ++t) {
        std::size_t col = 0;
        for (int k = -cfg.left_context; k <= cfg.right_context; ++k) {
            long src = t + k;
            src = std::max(src, 0l);
            src = std::min(src, static_cast<long>(mag.frames) - 1);
            for (int f = 0; f < cfg.base_dim; ++f) out(t, col++) = mag(src, f);
        }
    }
    return out;
}

}  // namespace

TEST_CASE("splice matches the brute-force reference on random input") {
    FeatureConfig cfg;
    cfg.base_dim = 8;
    cfg.left_context = 3;
    cfg.right_context = 3;
    MagnitudeSpectrogram mag = random_mag(17, 8, 5);
    Matrix got = splice(mag, cfg);
    Matrix want = splice_reference(mag, cfg);
    REQUIRE(got.rows() == want.rows());
    for (std::size_t r = 0; r < got.rows(); ++r)
        for (std::size_t c = 0; c < got.cols(); ++c) REQUIRE(got(r, c) == want(r, c));
}

TEST_CASE("single-frame input replicates the frame across the full context") {
    FeatureConfig cfg;
    MagnitudeSpectrogram mag = random_mag(1, 257, 6);
    Matrix out = splice(mag, cfg);
    REQUIRE(out.rows() == 1);
    REQUIRE(out.cols() == 5376);
    for (int k = 0; k < 21; ++k)
        for (int f = 0; f < 256; ++f) REQUIRE(out(0, k * 256 + f) == mag(0, f));
}

TEST_CASE("constant spectrogram splices to repeated copies") {
    FeatureConfig cfg;
    cfg.base_dim = 4;
    cfg.left_context = 2;
    cfg.right_context = 2;
    MagnitudeSpectrogram mag(9, 4);
    for (std::size_t t = 0; t < 9; ++t)
        for (std::size_t f = 0; f < 4; ++f) mag(t, f) = static_cast<double>(f) + 1.0;
    Matrix out = splice(mag, cfg);
    for (std::size_t r = 0; r < out.rows(); ++r)
        for (std::size_t c = 0; c < out.cols(); ++c)
            REQUIRE(out(r, c) == static_cast<double>(c % 4) + 1.0);
}

TEST_CASE("splice keeps the frame count") {
    FeatureConfig cfg;
    for (std::size_t frames : {1ul, 2ul, 21ul, 64ul}) {
        MagnitudeSpectrogram mag = random_mag(frames, 257, frames);
        CHECK(splice(mag, cfg).rows() == frames);
    }
}

TEST_CASE("statistics match a naive two-pass reference") {
    Rng rng(17);
    std::vector<Matrix> corpus;
    std::size_t total = 0;
    for (int u = 0; u < 5; ++u) {
        Matrix m(3 + static_cast<std::size_t>(rng.below(20)), 12);
        for (std::size_t i = 0; i < m.rows() * m.cols(); ++i)
            m.data()[i] = rng.normal(0.7, 2.3);
        total += m.rows();
        corpus.push_back(std::move(m));
    }
    NormStats stats = accumulate_stats(corpus);
    REQUIRE(stats.count == static_cast<double>(total));

    for (std::size_t d = 0; d < 12; ++d) {
        double sum = 0.0;
        for (const Matrix &m : corpus)
            for (std::size_t r = 0; r < m.rows(); ++r) sum += m(r, d);
        const double mean = sum / total;
        double sq = 0.0;
        for (const Matrix &m : corpus)
            for (std::size_t r = 0; r < m.rows(); ++r) sq += (m(r, d) - mean) * (m(r, d) - mean);
        const double sd = std::sqrt(sq / total);  // population convention
        CHECK(stats.mean[d] == Approx(mean).epsilon(1e-10));
        CHECK(stats.std[d] == Approx(sd).epsilon(1e-10));
    }
}

TEST_CASE("identical frames floor the standard deviation") {
    Matrix m(30, 6);
    for (std::size_t r = 0; r < m.rows(); ++r)
        for (std::size_t c = 0; c < m.cols(); ++c) m(r, c) = 3.25;
    std::vector<Matrix> corpus{m};
    NormStats stats = accumulate_stats(corpus);
    for (std::size_t d = 0; d < 6; ++d) {
        CHECK(stats.mean[d] == Approx(3.25));
        CHECK(stats.std[d] == kStdFloor);
    }
}

TEST_CASE("two frames give the closed-form mean and spread") {
    Matrix m(2, 3);
    m(0, 0) = 1.0; m(0, 1) = -2.0; m(0, 2) = 0.5;
    m(1, 0) = 3.0; m(1, 1) = 4.0;  m(1, 2) = 0.5;
    std::vector<Matrix> corpus{m};
    NormStats stats = accumulate_stats(corpus);
    CHECK(stats.mean[0] == Approx(2.0));
    CHECK(stats.std[0] == Approx(1.0));
    CHECK(stats.mean[1] == Approx(1.0));
    CHECK(stats.std[1] == Approx(3.0));
    CHECK(stats.std[2] == kStdFloor);  // |a-b|/2 = 0 floors
}

TEST_CASE("statistics are order-independent to rounding") {
    Rng rng(23);
    std::vector<Matrix> corpus;
    for (int u = 0; u < 6; ++u) {
        Matrix m(10, 8);
        for (std::size_t i = 0; i < m.rows() * m.cols(); ++i) m.data()[i] = rng.normal(0.0, 1.0);
        corpus.push_back(std::move(m));
    }
    NormStats a = accumulate_stats(corpus);
    std::reverse(corpus.begin(), corpus.end());
    NormStats b = accumulate_stats(corpus);
    for (std::size_t d = 0; d < 8; ++d) {
        CHECK(a.mean[d] == Approx(b.mean[d]).margin(1e-9));
        CHECK(a.std[d] == Approx(b.std[d]).epsilon(1e-9));
    }
}

TEST_CASE("parallel accumulator merge matches the sequential fold") {
    Rng rng(29);
    Matrix m(40, 5);
    for (std::size_t i = 0; i < m.rows() * m.cols(); ++i) m.data()[i] = rng.normal(1.0, 4.0);

    StatsAccumulator whole(5);
    for (std::size_t r = 0; r < m.rows(); ++r) whole.add_row(m.row(r));

    StatsAccumulator left(5), right(5);
    for (std::size_t r = 0; r < 23; ++r) left.add_row(m.row(r));
    for (std::size_t r = 23; r < m.rows(); ++r) right.add_row(m.row(r));
    left.merge(right);

    NormStats a = whole.finalize(), b = left.finalize();
    for (std::size_t d = 0; d < 5; ++d) {
        CHECK(a.mean[d] == Approx(b.mean[d]).margin(1e-12));
        CHECK(a.std[d] == Approx(b.std[d]).epsilon(1e-12));
    }
}

TEST_CASE("normalizing the corpus that built the stats recenters it") {
    Rng rng(31);
    Matrix m(500, 7);
    for (std::size_t i = 0; i < m.rows() * m.cols(); ++i) m.data()[i] = rng.normal(-3.0, 0.8);
    std::vector<Matrix> corpus{m};
    NormStats stats = accumulate_stats(corpus);
    Matrix z = normalize(m, stats);

    for (std::size_t d = 0; d < 7; ++d) {
        double mean = 0.0;
        for (std::size_t r = 0; r < z.rows(); ++r) mean += z(r, d);
        mean /= z.rows();
        double var = 0.0;
        for (std::size_t r = 0; r < z.rows(); ++r) var += (z(r, d) - mean) * (z(r, d) - mean);
        var /= z.rows();
        CHECK(std::abs(mean) < 1e-8);
        CHECK(std::sqrt(var) == Approx(1.0).epsilon(1e-6));
    }
}

TEST_CASE("x equal to the mean normalizes to zero") {
    NormStats stats;
    stats.dim = 3;
    stats.count = 10;
    stats.mean = {1.0, -2.0, 5.5};
    stats.std = {2.0, 0.5, 1.0};
    Matrix x(1, 3);
    x(0, 0) = 1.0; x(0, 1) = -2.0; x(0, 2) = 5.5;
    Matrix z = normalize(x, stats);
    for (std::size_t d = 0; d < 3; ++d) CHECK(z(0, d) == 0.0);
}

TEST_CASE("normalize/denormalize is an inverse pair") {
    Rng rng(37);
    NormStats stats;
    stats.dim = 4;
    stats.count = 2;
    stats.mean = {0.1, 2.0, -1.0, 4.0};
    stats.std = {1.5, 0.2, 3.0, 0.01};
    Matrix x(20, 4);
    for (std::size_t i = 0; i < x.rows() * x.cols(); ++i) x.data()[i] = rng.uniform(-5.0, 5.0);
    Matrix back = denormalize(normalize(x, stats), stats);
    for (std::size_t i = 0; i < x.rows() * x.cols(); ++i)
        CHECK(back.data()[i] == Approx(x.data()[i]).margin(1e-10));
}

TEST_CASE("dimension mismatches are rejected") {
    NormStats stats;
    stats.dim = 4;
    stats.mean.assign(4, 0.0);
    stats.std.assign(4, 1.0);
    Matrix x(2, 3);
    CHECK_THROWS_AS(normalize(x, stats), ValidationError);
}

TEST_CASE("KWNORM1 file round trips bit-exactly") {
    Rng rng(41);
    StatsAccumulator acc(6);
    Matrix m(50, 6);
    for (std::size_t i = 0; i < m.rows() * m.cols(); ++i) m.data()[i] = rng.normal(2.0, 3.0);
    for (std::size_t r = 0; r < m.rows(); ++r) acc.add_row(m.row(r));
    NormStats stats = acc.finalize();

    const std::string path = "test_stats.kwnorm";
    save_norm_stats(stats, path);
    NormStats back = load_norm_stats(path);
    std::remove(path.c_str());
    REQUIRE(back == stats);
}
