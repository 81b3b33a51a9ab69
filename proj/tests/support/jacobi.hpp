// jacobi.hpp
// Test-only dense eigensolver for Hermitian matrices: classical two-sided
// Jacobi with complex rotations. Independent of the power-iteration path it
// is used to check.

#pragma once

#include <algorithm>
#include <cmath>
#include <complex>
#include <vector>

namespace kwbeam_test {

using cplx = std::complex<double>;

struct EigenResult {
    std::vector<double> values;  // unsorted
    std::vector<cplx> vectors;   // row-major c x c, column j is eigenvector j
};

inline EigenResult jacobi_hermitian(std::vector<cplx> a, std::size_t c) {
    EigenResult result;
    result.vectors.assign(c * c, cplx(0.0, 0.0));
    for (std::size_t i = 0; i < c; ++i) result.vectors[i * c + i] = 1.0;
    std::vector<cplx> &v = result.vectors;

    double scale = 0.0;
    for (const cplx &z : a) scale = std::max(scale, std::abs(z));
    if (scale == 0.0) scale = 1.0;

    for (int sweep = 0; sweep < 200; ++sweep) {
        // largest off-diagonal element
        double off = 0.0;
        std::size_t p = 0, q = 1;
        for (std::size_t i = 0; i < c; ++i)
            for (std::size_t j = i + 1; j < c; ++j)
                if (std::abs(a[i * c + j]) > off) {
                    off = std::abs(a[i * c + j]);
                    p = i;
                    q = j;
                }
        if (off <= 1e-15 * scale || c < 2) break;

        const cplx apq = a[p * c + q];
        const double r = std::abs(apq);
        const cplx u = apq / r;  // phase
        const double app = a[p * c + p].real();
        const double aqq = a[q * c + q].real();
        const double tau = (aqq - app) / (2.0 * r);
        const double t = (tau >= 0.0 ? 1.0 : -1.0) / (std::abs(tau) + std::sqrt(1.0 + tau * tau));
        const double cs = 1.0 / std::sqrt(1.0 + t * t);
        const double sn = t * cs;

        // rows/columns p and q (two-sided unitary update)
        for (std::size_t i = 0; i < c; ++i) {
            if (i == p || i == q) continue;
            const cplx aip = a[i * c + p];
            const cplx aiq = a[i * c + q];
            a[i * c + p] = cs * aip - sn * std::conj(u) * aiq;
            a[i * c + q] = sn * u * aip + cs * aiq;
            a[p * c + i] = std::conj(a[i * c + p]);
            a[q * c + i] = std::conj(a[i * c + q]);
        }
        a[p * c + p] = app - t * r;
        a[q * c + q] = aqq + t * r;
        a[p * c + q] = 0.0;
        a[q * c + p] = 0.0;

        for (std::size_t i = 0; i < c; ++i) {
            const cplx vip = v[i * c + p];
            const cplx viq = v[i * c + q];
            v[i * c + p] = cs * vip - sn * std::conj(u) * viq;
            v[i * c + q] = sn * u * vip + cs * viq;
        }
    }

    result.values.resize(c);
    for (std::size_t i = 0; i < c; ++i) result.values[i] = a[i * c + i].real();
    return result;
}

inline double max_eigenvalue(const std::vector<cplx> &a, std::size_t c) {
    EigenResult r = jacobi_hermitian(a, c);
    return *std::max_element(r.values.begin(), r.values.end());
}

inline double min_eigenvalue(const std::vector<cplx> &a, std::size_t c) {
    EigenResult r = jacobi_hermitian(a, c);
    return *std::min_element(r.values.begin(), r.values.end());
}

}  // namespace kwbeam_test
