// linalg.hpp
// Row-major double matrix plus the three product shapes backprop needs.
// Products are parallelized over output rows only: each output element is a
// sequential accumulation owned by one worker, so the result is identical
// for any worker count.

#pragma once

#include <cstddef>
#include <cstring>
#include <vector>

#include "kwbeam/error.hpp"
#include "kwbeam/parallel.hpp"

namespace kwbeam {

class Matrix {
  public:
    Matrix() = default;
    Matrix(std::size_t rows, std::size_t cols, double value = 0.0)
        : rows_(rows), cols_(cols), data_(rows * cols, value) {}

    std::size_t rows() const { return rows_; }
    std::size_t cols() const { return cols_; }
    bool empty() const { return data_.empty(); }

    double &operator()(std::size_t r, std::size_t c) { return data_[r * cols_ + c]; }
    double operator()(std::size_t r, std::size_t c) const { return data_[r * cols_ + c]; }

    double *row(std::size_t r) { return data_.data() + r * cols_; }
    const double *row(std::size_t r) const { return data_.data() + r * cols_; }

    double *data() { return data_.data(); }
    const double *data() const { return data_.data(); }

    void fill(double v) { std::fill(data_.begin(), data_.end(), v); }

    bool operator==(const Matrix &o) const {
        return rows_ == o.rows_ && cols_ == o.cols_ && data_ == o.data_;
    }

  private:
    std::size_t rows_ = 0;
    std::size_t cols_ = 0;
    std::vector<double> data_;
};

// C = A * B
inline void matmul(const Matrix &a, const Matrix &b, Matrix &c) {
    require(a.cols() == b.rows(), "matmul: inner dimensions disagree");
    if (c.rows() != a.rows() || c.cols() != b.cols()) c = Matrix(a.rows(), b.cols());
    const std::size_t n = a.cols(), m = b.cols();
    parallel_for(a.rows(), [&](std::size_t i) {
        double *ci = c.row(i);
        std::memset(ci, 0, m * sizeof(double));
        const double *ai = a.row(i);
        for (std::size_t k = 0; k < n; ++k) {
            const double aik = ai[k];
            if (aik == 0.0) continue;
            const double *bk = b.row(k);
            for (std::size_t j = 0; j < m; ++j) ci[j] += aik * bk[j];
        }
    });
}

// C = A * B^t; four dot products run per pass to keep the FMA pipes busy.
inline void matmul_nt(const Matrix &a, const Matrix &b, Matrix &c) {
    require(a.cols() == b.cols(), "matmul_nt: inner dimensions disagree");
    if (c.rows() != a.rows() || c.cols() != b.rows()) c = Matrix(a.rows(), b.rows());
    const std::size_t n = a.cols(), m = b.rows();
    parallel_for(a.rows(), [&](std::size_t i) {
        const double *ai = a.row(i);
        double *ci = c.row(i);
        std::size_t j = 0;
        for (; j + 4 <= m; j += 4) {
            const double *b0 = b.row(j), *b1 = b.row(j + 1);
            const double *b2 = b.row(j + 2), *b3 = b.row(j + 3);
            double s0 = 0.0, s1 = 0.0, s2 = 0.0, s3 = 0.0;
            for (std::size_t k = 0; k < n; ++k) {
                const double aik = ai[k];
                s0 += aik * b0[k];
                s1 += aik * b1[k];
                s2 += aik * b2[k];
                s3 += aik * b3[k];
            }
            ci[j] = s0;
            ci[j + 1] = s1;
            ci[j + 2] = s2;
            ci[j + 3] = s3;
        }
        for (; j < m; ++j) {
            const double *bj = b.row(j);
            double s = 0.0;
            for (std::size_t k = 0; k < n; ++k) s += ai[k] * bj[k];
            ci[j] = s;
        }
    });
}

// C = A^t * B; partitioned over C's rows (columns of A), every worker scans
// all of A and B read-only.
inline void matmul_tn(const Matrix &a, const Matrix &b, Matrix &c) {
    require(a.rows() == b.rows(), "matmul_tn: inner dimensions disagree");
    if (c.rows() != a.cols() || c.cols() != b.cols()) c = Matrix(a.cols(), b.cols());
    const std::size_t rows = a.cols(), inner = a.rows(), m = b.cols();
    unsigned jobs = std::min<std::size_t>(job_count(), rows);
    std::size_t chunk = jobs ? (rows + jobs - 1) / jobs : rows;
    parallel_for(jobs, [&](std::size_t t) {
        const std::size_t lo = t * chunk, hi = std::min(rows, lo + chunk);
        if (lo >= hi) return;
        for (std::size_t i = lo; i < hi; ++i) std::memset(c.row(i), 0, m * sizeof(double));
        for (std::size_t k = 0; k < inner; ++k) {
            const double *ak = a.row(k);
            const double *bk = b.row(k);
            for (std::size_t i = lo; i < hi; ++i) {
                const double aki = ak[i];
                if (aki == 0.0) continue;
                double *ci = c.row(i);
                for (std::size_t j = 0; j < m; ++j) ci[j] += aki * bk[j];
            }
        }
    });
}

}  // namespace kwbeam
