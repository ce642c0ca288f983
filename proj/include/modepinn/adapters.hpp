// SPDX-License-Identifier: Apache-2.0
//
// Per-layer reparameterizations over a frozen affine map (W0, b0).
//
// The MODE adapter trains a dense k x k core Phi mixing the truncated
// orthogonal bases, a single scalar tau scaling the (never materialized)
// residual spectrum, and a bias drift delta_b. Its efficient forward form
//     y = tau (W0 x) + U_k [Phi + (1 - tau) Sigma_k] (V_k^T x) + b0 + delta_b
// is algebraically identical to the two-spectrum form built from
// W_res = W0 - U_k Sigma_k V_k^T, without ever storing W_res.
#pragma once

#include <cmath>
#include <span>
#include <stdexcept>
#include <string>
#include <variant>
#include <vector>

#include "linalg.hpp"
#include "rng.hpp"

namespace modepinn {

enum class AdapterKind { none, mode, svd_diag, lora, ia3, bias_only, full };

inline const char* adapter_kind_name(AdapterKind k) {
    switch (k) {
    case AdapterKind::none: return "none";
    case AdapterKind::mode: return "mode";
    case AdapterKind::svd_diag: return "svd_diag";
    case AdapterKind::lora: return "lora";
    case AdapterKind::ia3: return "ia3";
    case AdapterKind::bias_only: return "bias_only";
    case AdapterKind::full: return "full";
    }
    return "?";
}

inline AdapterKind adapter_kind_from_name(const std::string& s) {
    for (AdapterKind k : {AdapterKind::none, AdapterKind::mode, AdapterKind::svd_diag,
                          AdapterKind::lora, AdapterKind::ia3, AdapterKind::bias_only,
                          AdapterKind::full})
        if (s == adapter_kind_name(k)) return k;
    throw std::invalid_argument("unknown adapter kind: " + s);
}

/// MODE trainables {Phi, tau, delta_b} plus the frozen factors of W0.
/// Construction state Phi = 0, tau = 1, delta_b = 0 reproduces W0 x + b0
/// exactly. The train_* flags exist for the diagnostic ablations.
struct ModeParams {
    Matrix phi;                  // k x k
    double tau = 1.0;
    std::vector<double> delta_b; // d_out
    SvdFactors factors;
    bool train_tau = true;
    bool train_delta_b = true;
};

/// Diagonal singular-value rescaling; alpha starts at sigma. The residual
/// spectrum is discarded by construction.
struct SvdDiagParams {
    std::vector<double> alpha; // k
    SvdFactors factors;
};

struct LoraParams {
    Matrix a; // r x d_in, Gaussian init
    Matrix b; // d_out x r, zero init
    int r = 0;
};

struct Ia3Params {
    std::vector<double> scale; // d_out, ones init
};

struct BiasOnlyParams {
    std::vector<double> delta_b; // d_out, zero init
};

using AdapterParams = std::variant<ModeParams, SvdDiagParams, LoraParams, Ia3Params, BiasOnlyParams>;

// ---------------------------------------------------------------------------
// Construction

inline ModeParams mode_init(const Matrix& w0, std::span<const double> b0, int k) {
    if (static_cast<int>(b0.size()) != w0.rows)
        throw std::invalid_argument("mode_init: bias length mismatch");
    ModeParams p;
    p.factors = svd_truncate(w0, k);
    p.phi = Matrix(k, k);
    p.tau = 1.0;
    p.delta_b.assign(b0.size(), 0.0);
    return p;
}

inline SvdDiagParams svd_diag_init(const Matrix& w0, int k) {
    SvdDiagParams p;
    p.factors = svd_truncate(w0, k);
    p.alpha = p.factors.sigma_k;
    return p;
}

inline LoraParams lora_init(int d_out, int d_in, int r, Rng& rng) {
    if (r < 1 || r > std::min(d_out, d_in)) throw std::invalid_argument("lora_init: bad rank");
    LoraParams p;
    p.r = r;
    p.a = Matrix(r, d_in);
    for (double& v : p.a.data) v = 0.01 * rng.normal();
    p.b = Matrix(d_out, r); // zero: delta W = 0 at start
    return p;
}

inline Ia3Params ia3_init(int d_out) {
    Ia3Params p;
    p.scale.assign(static_cast<std::size_t>(d_out), 1.0);
    return p;
}

inline BiasOnlyParams bias_only_init(int d_out) {
    BiasOnlyParams p;
    p.delta_b.assign(static_cast<std::size_t>(d_out), 0.0);
    return p;
}

// ---------------------------------------------------------------------------
// Forward maps (pre-activation). All take the frozen (w0, b0) plus input h.

namespace detail {
inline void check_dims(const Matrix& w0, std::span<const double> b0, std::span<const double> h,
                       const char* who) {
    if (static_cast<int>(h.size()) != w0.cols || static_cast<int>(b0.size()) != w0.rows)
        throw std::invalid_argument(std::string(who) + ": dimension mismatch");
}
} // namespace detail

/// Efficient MODE forward: O(d_out d_in + k (d_in + d_out) + k^2), W_res free.
inline std::vector<double> mode_forward(const ModeParams& p, const Matrix& w0,
                                        std::span<const double> b0, std::span<const double> h) {
    detail::check_dims(w0, b0, h, "mode_forward");
    const int k = p.factors.k;
    const int d_out = w0.rows;

    std::vector<double> y = matvec(w0, h);
    for (double& v : y) v *= p.tau;

    // q = [Phi + (1 - tau) Sigma] (V^T h)
    std::vector<double> vth(static_cast<std::size_t>(k), 0.0);
    for (int r = 0; r < k; ++r) {
        double s = 0.0;
        for (int j = 0; j < w0.cols; ++j) s += p.factors.v_k(j, r) * h[static_cast<std::size_t>(j)];
        vth[static_cast<std::size_t>(r)] = s;
    }
    std::vector<double> q(static_cast<std::size_t>(k), 0.0);
    const double one_minus_tau = 1.0 - p.tau;
    for (int i = 0; i < k; ++i) {
        double s = 0.0;
        for (int j = 0; j < k; ++j) s += p.phi(i, j) * vth[static_cast<std::size_t>(j)];
        s += one_minus_tau * p.factors.sigma_k[static_cast<std::size_t>(i)] * vth[static_cast<std::size_t>(i)];
        q[static_cast<std::size_t>(i)] = s;
    }
    for (int i = 0; i < d_out; ++i) {
        double s = 0.0;
        for (int r = 0; r < k; ++r) s += p.factors.u_k(i, r) * q[static_cast<std::size_t>(r)];
        y[static_cast<std::size_t>(i)] += s + b0[static_cast<std::size_t>(i)] + p.delta_b[static_cast<std::size_t>(i)];
    }
    return y;
}

/// Two-spectrum reference form that materializes W_res = W0 - U Sigma V^T.
/// Exists to certify the algebraic identity with mode_forward; not used on
/// any training path.
inline std::vector<double> mode_forward_standard(const ModeParams& p, const Matrix& w0,
                                                 std::span<const double> b0,
                                                 std::span<const double> h) {
    detail::check_dims(w0, b0, h, "mode_forward_standard");
    const Matrix w_prin = reconstruct_principal(p.factors);
    const Matrix w_res = subtract(w0, w_prin);
    const int k = p.factors.k;

    // U (Sigma + Phi) V^T
    Matrix core(k, k);
    for (int i = 0; i < k; ++i)
        for (int j = 0; j < k; ++j)
            core(i, j) = p.phi(i, j) + (i == j ? p.factors.sigma_k[static_cast<std::size_t>(i)] : 0.0);
    Matrix mixed = gemm(gemm(p.factors.u_k, core), transpose(p.factors.v_k));

    std::vector<double> y = matvec(mixed, h);
    std::vector<double> res = matvec(w_res, h);
    for (std::size_t i = 0; i < y.size(); ++i)
        y[i] += p.tau * res[i] + b0[i] + p.delta_b[i];
    return y;
}

inline std::vector<double> svd_diag_forward(const SvdDiagParams& p, std::span<const double> b0,
                                            std::span<const double> h) {
    const int k = p.factors.k;
    const int d_out = p.factors.u_k.rows;
    const int d_in = p.factors.v_k.rows;
    if (static_cast<int>(h.size()) != d_in || static_cast<int>(b0.size()) != d_out)
        throw std::invalid_argument("svd_diag_forward: dimension mismatch");
    std::vector<double> vth(static_cast<std::size_t>(k), 0.0);
    for (int r = 0; r < k; ++r) {
        double s = 0.0;
        for (int j = 0; j < d_in; ++j) s += p.factors.v_k(j, r) * h[static_cast<std::size_t>(j)];
        vth[static_cast<std::size_t>(r)] = p.alpha[static_cast<std::size_t>(r)] * s;
    }
    std::vector<double> y(b0.begin(), b0.end());
    for (int i = 0; i < d_out; ++i) {
        double s = 0.0;
        for (int r = 0; r < k; ++r) s += p.factors.u_k(i, r) * vth[static_cast<std::size_t>(r)];
        y[static_cast<std::size_t>(i)] += s;
    }
    return y;
}

inline std::vector<double> lora_forward(const LoraParams& p, const Matrix& w0,
                                        std::span<const double> b0, std::span<const double> h) {
    detail::check_dims(w0, b0, h, "lora_forward");
    std::vector<double> y = matvec(w0, h);
    std::vector<double> ah = matvec(p.a, h);
    std::vector<double> bah = matvec(p.b, ah);
    for (std::size_t i = 0; i < y.size(); ++i) y[i] += bah[i] + b0[i];
    return y;
}

inline std::vector<double> ia3_forward(const Ia3Params& p, const Matrix& w0,
                                       std::span<const double> b0, std::span<const double> h) {
    detail::check_dims(w0, b0, h, "ia3_forward");
    std::vector<double> y = matvec(w0, h);
    for (std::size_t i = 0; i < y.size(); ++i) y[i] = p.scale[i] * y[i] + b0[i];
    return y;
}

inline std::vector<double> bias_only_forward(const BiasOnlyParams& p, const Matrix& w0,
                                             std::span<const double> b0, std::span<const double> h) {
    detail::check_dims(w0, b0, h, "bias_only_forward");
    std::vector<double> y = matvec(w0, h);
    for (std::size_t i = 0; i < y.size(); ++i) y[i] += b0[i] + p.delta_b[i];
    return y;
}

/// Adapter forward dispatch on the variant.
inline std::vector<double> adapter_forward(const AdapterParams& ap, const Matrix& w0,
                                           std::span<const double> b0, std::span<const double> h) {
    return std::visit(
        [&](const auto& p) -> std::vector<double> {
            using T = std::decay_t<decltype(p)>;
            if constexpr (std::is_same_v<T, ModeParams>) return mode_forward(p, w0, b0, h);
            else if constexpr (std::is_same_v<T, SvdDiagParams>) return svd_diag_forward(p, b0, h);
            else if constexpr (std::is_same_v<T, LoraParams>) return lora_forward(p, w0, b0, h);
            else if constexpr (std::is_same_v<T, Ia3Params>) return ia3_forward(p, w0, b0, h);
            else return bias_only_forward(p, w0, b0, h);
        },
        ap);
}

// ---------------------------------------------------------------------------
// Export and accounting

/// Collapse the adapted layer into plain dense weights (W~, b~).
inline std::pair<Matrix, std::vector<double>> merge_to_dense(const AdapterParams& ap,
                                                             const Matrix& w0,
                                                             std::span<const double> b0) {
    return std::visit(
        [&](const auto& p) -> std::pair<Matrix, std::vector<double>> {
            using T = std::decay_t<decltype(p)>;
            if constexpr (std::is_same_v<T, ModeParams>) {
                // W~ = tau W0 + U [Phi + (1 - tau) Sigma] V^T
                const int k = p.factors.k;
                Matrix core(k, k);
                for (int i = 0; i < k; ++i)
                    for (int j = 0; j < k; ++j)
                        core(i, j) = p.phi(i, j) +
                                     (i == j ? (1.0 - p.tau) * p.factors.sigma_k[static_cast<std::size_t>(i)] : 0.0);
                Matrix w = gemm(gemm(p.factors.u_k, core), transpose(p.factors.v_k));
                for (std::size_t i = 0; i < w.data.size(); ++i) w.data[i] += p.tau * w0.data[i];
                std::vector<double> b(b0.begin(), b0.end());
                for (std::size_t i = 0; i < b.size(); ++i) b[i] += p.delta_b[i];
                return {std::move(w), std::move(b)};
            } else if constexpr (std::is_same_v<T, SvdDiagParams>) {
                SvdFactors f = p.factors;
                f.sigma_k = p.alpha;
                return {reconstruct_principal(f), std::vector<double>(b0.begin(), b0.end())};
            } else if constexpr (std::is_same_v<T, LoraParams>) {
                Matrix w = gemm(p.b, p.a);
                for (std::size_t i = 0; i < w.data.size(); ++i) w.data[i] += w0.data[i];
                return {std::move(w), std::vector<double>(b0.begin(), b0.end())};
            } else if constexpr (std::is_same_v<T, Ia3Params>) {
                Matrix w = w0;
                for (int i = 0; i < w.rows; ++i)
                    for (int j = 0; j < w.cols; ++j) w(i, j) *= p.scale[static_cast<std::size_t>(i)];
                return {std::move(w), std::vector<double>(b0.begin(), b0.end())};
            } else {
                std::vector<double> b(b0.begin(), b0.end());
                for (std::size_t i = 0; i < b.size(); ++i) b[i] += p.delta_b[i];
                return {w0, std::move(b)};
            }
        },
        ap);
}

/// Exact number of trainable scalars. MODE: k^2 + 1 + d_out (ablation flags
/// remove the frozen pieces from the count).
inline long param_count(const AdapterParams& ap) {
    return std::visit(
        [](const auto& p) -> long {
            using T = std::decay_t<decltype(p)>;
            if constexpr (std::is_same_v<T, ModeParams>) {
                long n = static_cast<long>(p.factors.k) * p.factors.k;
                if (p.train_tau) n += 1;
                if (p.train_delta_b) n += static_cast<long>(p.delta_b.size());
                return n;
            } else if constexpr (std::is_same_v<T, SvdDiagParams>) {
                return static_cast<long>(p.alpha.size());
            } else if constexpr (std::is_same_v<T, LoraParams>) {
                return static_cast<long>(p.a.rows) * p.a.cols + static_cast<long>(p.b.rows) * p.b.cols;
            } else if constexpr (std::is_same_v<T, Ia3Params>) {
                return static_cast<long>(p.scale.size());
            } else {
                return static_cast<long>(p.delta_b.size());
            }
        },
        ap);
}

/// Closed-form counts per kind for a d_out x d_in layer.
inline long param_count_closed_form(AdapterKind kind, int d_out, int d_in, int rank) {
    switch (kind) {
    case AdapterKind::mode: return static_cast<long>(rank) * rank + 1 + d_out;
    case AdapterKind::svd_diag: return rank;
    case AdapterKind::lora: return static_cast<long>(rank) * (d_in + d_out);
    case AdapterKind::ia3: return d_out;
    case AdapterKind::bias_only: return d_out;
    case AdapterKind::full: return static_cast<long>(d_out) * d_in + d_out;
    case AdapterKind::none: return 0;
    }
    return 0;
}

} // namespace modepinn
