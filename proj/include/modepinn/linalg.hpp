// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <numeric>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace modepinn {

/// Dense row-major matrix of 64-bit floats.
struct Matrix {
    int rows = 0;
    int cols = 0;
    std::vector<double> data;

    Matrix() = default;
    Matrix(int r, int c) : rows(r), cols(c), data(static_cast<std::size_t>(r) * c, 0.0) {
        if (r < 0 || c < 0) throw std::invalid_argument("Matrix: negative dimension");
    }

    double& operator()(int i, int j) { return data[static_cast<std::size_t>(i) * cols + j]; }
    double operator()(int i, int j) const { return data[static_cast<std::size_t>(i) * cols + j]; }

    double* row(int i) { return data.data() + static_cast<std::size_t>(i) * cols; }
    const double* row(int i) const { return data.data() + static_cast<std::size_t>(i) * cols; }

    static Matrix identity(int n) {
        Matrix m(n, n);
        for (int i = 0; i < n; ++i) m(i, i) = 1.0;
        return m;
    }

    bool all_finite() const {
        for (double v : data)
            if (!std::isfinite(v)) return false;
        return true;
    }
};

inline Matrix transpose(const Matrix& a) {
    Matrix t(a.cols, a.rows);
    for (int i = 0; i < a.rows; ++i)
        for (int j = 0; j < a.cols; ++j) t(j, i) = a(i, j);
    return t;
}

/// Dense product a*b.
inline Matrix gemm(const Matrix& a, const Matrix& b) {
    if (a.cols != b.rows)
        throw std::invalid_argument("gemm: inner dimensions differ (" + std::to_string(a.cols) +
                                    " vs " + std::to_string(b.rows) + ")");
    Matrix c(a.rows, b.cols);
    for (int i = 0; i < a.rows; ++i) {
        double* ci = c.row(i);
        const double* ai = a.row(i);
        for (int k = 0; k < a.cols; ++k) {
            const double aik = ai[k];
            const double* bk = b.row(k);
            for (int j = 0; j < b.cols; ++j) ci[j] += aik * bk[j];
        }
    }
    return c;
}

/// y = a*x for a column vector x.
inline std::vector<double> matvec(const Matrix& a, std::span<const double> x) {
    if (a.cols != static_cast<int>(x.size()))
        throw std::invalid_argument("matvec: dimension mismatch");
    std::vector<double> y(static_cast<std::size_t>(a.rows), 0.0);
    for (int i = 0; i < a.rows; ++i) {
        const double* ai = a.row(i);
        double s = 0.0;
        for (int j = 0; j < a.cols; ++j) s += ai[j] * x[static_cast<std::size_t>(j)];
        y[static_cast<std::size_t>(i)] = s;
    }
    return y;
}

inline double frobenius_norm(const Matrix& a) {
    double s = 0.0;
    for (double v : a.data) s += v * v;
    return std::sqrt(s);
}

inline Matrix subtract(const Matrix& a, const Matrix& b) {
    if (a.rows != b.rows || a.cols != b.cols)
        throw std::invalid_argument("subtract: shape mismatch");
    Matrix c(a.rows, a.cols);
    for (std::size_t i = 0; i < a.data.size(); ++i) c.data[i] = a.data[i] - b.data[i];
    return c;
}

/// Truncated SVD of a frozen weight matrix: orthonormal bases U_k, V_k and
/// the leading singular values, sorted non-increasing. The discarded tail
/// W - U_k diag(sigma) V_k^T is never stored.
struct SvdFactors {
    Matrix u_k;                  // d_out x k
    std::vector<double> sigma_k; // k, non-increasing, >= 0
    Matrix v_k;                  // d_in x k
    int k = 0;
};

namespace detail {

// One-sided Jacobi on the columns of work (m x n, m >= n required by caller):
// right-multiplies plane rotations until all column pairs are orthogonal.
// Returns the number of sweeps used, or -1 if the sweep cap was hit.
inline int jacobi_orthogonalize(Matrix& work, Matrix& v, int max_sweeps) {
    const int m = work.rows;
    const int n = work.cols;
    const double tol = 1e-15;
    for (int sweep = 0; sweep < max_sweeps; ++sweep) {
        bool converged = true;
        for (int i = 0; i < n - 1; ++i) {
            for (int j = i + 1; j < n; ++j) {
                double aii = 0.0, ajj = 0.0, aij = 0.0;
                for (int r = 0; r < m; ++r) {
                    const double wi = work(r, i), wj = work(r, j);
                    aii += wi * wi;
                    ajj += wj * wj;
                    aij += wi * wj;
                }
                if (std::abs(aij) <= tol * std::sqrt(aii * ajj)) continue;
                converged = false;
                const double zeta = (ajj - aii) / (2.0 * aij);
                const double t = (zeta >= 0.0 ? 1.0 : -1.0) /
                                 (std::abs(zeta) + std::sqrt(1.0 + zeta * zeta));
                const double cs = 1.0 / std::sqrt(1.0 + t * t);
                const double sn = cs * t;
                for (int r = 0; r < m; ++r) {
                    const double wi = work(r, i), wj = work(r, j);
                    work(r, i) = cs * wi - sn * wj;
                    work(r, j) = sn * wi + cs * wj;
                }
                for (int r = 0; r < n; ++r) {
                    const double vi = v(r, i), vj = v(r, j);
                    v(r, i) = cs * vi - sn * vj;
                    v(r, j) = sn * vi + cs * vj;
                }
            }
        }
        if (converged) return sweep + 1;
    }
    return -1;
}

} // namespace detail

/// Full SVD via one-sided Jacobi applied on the smaller-dimension side.
/// Columns are sorted by descending singular value; each U column has its
/// largest-magnitude entry made non-negative (paired V column flipped), so
/// the decomposition is deterministic. Near-zero singular directions get an
/// orthonormal completion so U, V stay orthonormal even for rank-deficient
/// input.
inline SvdFactors svd_full(const Matrix& w, int max_sweeps = 60) {
    if (w.rows <= 0 || w.cols <= 0) throw std::invalid_argument("svd_full: empty matrix");
    if (!w.all_finite()) throw std::invalid_argument("svd_full: non-finite entries");

    const bool transposed = w.rows < w.cols;
    Matrix work = transposed ? transpose(w) : w;
    const int m = work.rows;
    const int n = work.cols;

    Matrix v = Matrix::identity(n);
    const int sweeps = detail::jacobi_orthogonalize(work, v, max_sweeps);
    if (sweeps < 0)
        throw std::runtime_error("svd_full: Jacobi iteration did not converge after " +
                                 std::to_string(max_sweeps) + " sweeps");

    std::vector<double> sigma(static_cast<std::size_t>(n), 0.0);
    for (int j = 0; j < n; ++j) {
        double s = 0.0;
        for (int r = 0; r < m; ++r) s += work(r, j) * work(r, j);
        sigma[static_cast<std::size_t>(j)] = std::sqrt(s);
    }

    std::vector<int> order(static_cast<std::size_t>(n));
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(), [&](int a, int b) {
        return sigma[static_cast<std::size_t>(a)] > sigma[static_cast<std::size_t>(b)];
    });

    const double sig_max = sigma[static_cast<std::size_t>(order[0])];
    const double rank_tol = sig_max * 1e-13;

    Matrix u(m, n), vperm(n, n);
    for (int jj = 0; jj < n; ++jj) {
        const int j = order[static_cast<std::size_t>(jj)];
        const double s = sigma[static_cast<std::size_t>(j)];
        if (s > rank_tol && s > 0.0) {
            for (int r = 0; r < m; ++r) u(r, jj) = work(r, j) / s;
        } else {
            // complete with a coordinate direction orthogonal to earlier columns
            for (int cand = 0; cand < m; ++cand) {
                std::vector<double> col(static_cast<std::size_t>(m), 0.0);
                col[static_cast<std::size_t>(cand)] = 1.0;
                for (int prev = 0; prev < jj; ++prev) {
                    double dot = 0.0;
                    for (int r = 0; r < m; ++r) dot += col[static_cast<std::size_t>(r)] * u(r, prev);
                    for (int r = 0; r < m; ++r) col[static_cast<std::size_t>(r)] -= dot * u(r, prev);
                }
                double nrm = 0.0;
                for (double c : col) nrm += c * c;
                nrm = std::sqrt(nrm);
                if (nrm > 0.5) {
                    for (int r = 0; r < m; ++r) u(r, jj) = col[static_cast<std::size_t>(r)] / nrm;
                    break;
                }
            }
        }
        for (int r = 0; r < n; ++r) vperm(r, jj) = v(r, j);
    }
    std::vector<double> sig_sorted(static_cast<std::size_t>(n));
    for (int jj = 0; jj < n; ++jj) {
        const double s = sigma[static_cast<std::size_t>(order[static_cast<std::size_t>(jj)])];
        sig_sorted[static_cast<std::size_t>(jj)] = (s > rank_tol) ? s : 0.0;
    }

    // sign convention: largest-magnitude entry of each U column non-negative
    for (int j = 0; j < n; ++j) {
        int arg = 0;
        double best = 0.0;
        for (int r = 0; r < m; ++r) {
            if (std::abs(u(r, j)) > best) {
                best = std::abs(u(r, j));
                arg = r;
            }
        }
        if (u(arg, j) < 0.0) {
            for (int r = 0; r < m; ++r) u(r, j) = -u(r, j);
            for (int r = 0; r < n; ++r) vperm(r, j) = -vperm(r, j);
        }
    }

    SvdFactors f;
    f.k = n;
    f.sigma_k = std::move(sig_sorted);
    if (transposed) {
        f.u_k = std::move(vperm); // d_out = w.rows = n side
        f.v_k = std::move(u);
    } else {
        f.u_k = std::move(u);
        f.v_k = std::move(vperm);
    }
    return f;
}

/// Leading-k truncation of the SVD of w.
inline SvdFactors svd_truncate(const Matrix& w, int k, int max_sweeps = 60) {
    const int kmax = std::min(w.rows, w.cols);
    if (k < 1 || k > kmax)
        throw std::invalid_argument("svd_truncate: rank " + std::to_string(k) +
                                    " outside [1, " + std::to_string(kmax) + "]");
    SvdFactors full = svd_full(w, max_sweeps);
    SvdFactors f;
    f.k = k;
    f.sigma_k.assign(full.sigma_k.begin(), full.sigma_k.begin() + k);
    f.u_k = Matrix(w.rows, k);
    f.v_k = Matrix(w.cols, k);
    for (int i = 0; i < w.rows; ++i)
        for (int j = 0; j < k; ++j) f.u_k(i, j) = full.u_k(i, j);
    for (int i = 0; i < w.cols; ++i)
        for (int j = 0; j < k; ++j) f.v_k(i, j) = full.v_k(i, j);
    return f;
}

/// U_k diag(sigma) V_k^T, the principal part of the decomposed weight.
inline Matrix reconstruct_principal(const SvdFactors& f) {
    const int d_out = f.u_k.rows;
    const int d_in = f.v_k.rows;
    Matrix w(d_out, d_in);
    for (int i = 0; i < d_out; ++i) {
        double* wi = w.row(i);
        for (int r = 0; r < f.k; ++r) {
            const double us = f.u_k(i, r) * f.sigma_k[static_cast<std::size_t>(r)];
            for (int j = 0; j < d_in; ++j) wi[j] += us * f.v_k(j, r);
        }
    }
    return w;
}

} // namespace modepinn
