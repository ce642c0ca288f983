// SPDX-License-Identifier: Apache-2.0
//
// The parameterized PINN: a coordinate encoder and a parameter encoder feed
// a manifold decoder through latent concatenation (coordinate latent first).
// Decoder intermediate layers carry optional adapter slots; when an adapter
// is attached, the layer's own weight and bias are frozen and only adapter
// parameters receive gradient slots.
#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "adapters.hpp"
#include "autodiff.hpp"
#include "io.hpp"
#include "linalg.hpp"
#include "rng.hpp"

namespace modepinn {

// ---------------------------------------------------------------------------
// Architecture

struct ArchConfig {
    int mu_dim = 3;
    int coord_width = 32, coord_depth = 2;
    int param_width = 32, param_depth = 2;
    int decoder_width = 50, decoder_depth = 4;
    Activation activation = Activation::tanh;
    std::uint64_t seed = 1;
    // input normalization: coordinates mapped to [0,1], mu scaled per entry
    double x_min = 0.0, x_max = 6.283185307179586476925286766559;
    double t_min = 0.0, t_max = 1.0;
    std::vector<double> mu_scale; // empty: 0.1 for every component

    double mu_scale_at(int i) const {
        if (mu_scale.empty()) return 0.1;
        return mu_scale[static_cast<std::size_t>(i) % mu_scale.size()];
    }
};

/// Gradient slot offsets of an attached adapter (-1: frozen piece).
struct AdapterSlots {
    long phi = -1, tau = -1, delta_b = -1;
    long alpha = -1;
    long a = -1, b = -1;
    long scale = -1;
};

struct AdapterState {
    AdapterKind kind = AdapterKind::none;
    AdapterParams params;
    AdapterSlots slots;
};

struct LayerSpec {
    int in_dim = 0, out_dim = 0;
    Matrix weight;
    std::vector<double> bias;
    bool frozen = false;
    std::optional<AdapterState> adapter;
    long slot_w = -1, slot_b = -1;
};

struct SubNet {
    std::vector<LayerSpec> layers;
};

struct P2innModel {
    ArchConfig cfg;
    SubNet coord_enc, param_enc, decoder;
    bool full_finetune = false; // decoder trainable, encoders frozen

    int latent_dim() const { return cfg.coord_width + cfg.param_width; }
};

// ---------------------------------------------------------------------------
// Construction

namespace detail {

inline LayerSpec make_layer(int in_dim, int out_dim, Rng& rng) {
    LayerSpec l;
    l.in_dim = in_dim;
    l.out_dim = out_dim;
    l.weight = Matrix(out_dim, in_dim);
    const double limit = std::sqrt(6.0 / (in_dim + out_dim));
    for (double& v : l.weight.data) v = rng.uniform(-limit, limit);
    l.bias.assign(static_cast<std::size_t>(out_dim), 0.0);
    return l;
}

} // namespace detail

/// Xavier-uniform weights, zero biases; deterministic for a given seed.
inline P2innModel build_p2inn(const ArchConfig& cfg) {
    if (cfg.mu_dim < 1 || cfg.coord_width < 1 || cfg.param_width < 1 || cfg.decoder_width < 1)
        throw std::invalid_argument("build_p2inn: widths must be >= 1");
    if (cfg.coord_depth < 1 || cfg.param_depth < 1 || cfg.decoder_depth < 2)
        throw std::invalid_argument("build_p2inn: encoder depth >= 1, decoder depth >= 2");
    P2innModel m;
    m.cfg = cfg;
    Rng rng(cfg.seed);

    m.coord_enc.layers.push_back(detail::make_layer(2, cfg.coord_width, rng));
    for (int i = 1; i < cfg.coord_depth; ++i)
        m.coord_enc.layers.push_back(detail::make_layer(cfg.coord_width, cfg.coord_width, rng));

    m.param_enc.layers.push_back(detail::make_layer(cfg.mu_dim, cfg.param_width, rng));
    for (int i = 1; i < cfg.param_depth; ++i)
        m.param_enc.layers.push_back(detail::make_layer(cfg.param_width, cfg.param_width, rng));

    const int dec_in = cfg.coord_width + cfg.param_width;
    m.decoder.layers.push_back(detail::make_layer(dec_in, cfg.decoder_width, rng));
    for (int i = 1; i < cfg.decoder_depth - 1; ++i)
        m.decoder.layers.push_back(detail::make_layer(cfg.decoder_width, cfg.decoder_width, rng));
    m.decoder.layers.push_back(detail::make_layer(cfg.decoder_width, 1, rng));
    return m;
}

inline long subnet_param_count(const SubNet& s) {
    long n = 0;
    for (const LayerSpec& l : s.layers)
        n += static_cast<long>(l.out_dim) * l.in_dim + l.out_dim;
    return n;
}

inline long model_total_params(const P2innModel& m) {
    return subnet_param_count(m.coord_enc) + subnet_param_count(m.param_enc) +
           subnet_param_count(m.decoder);
}

// ---------------------------------------------------------------------------
// Parameter slot maps

struct ParamSegment {
    double* data;
    long len;
    long slot0;
};

/// Flat view of the currently trainable scalars: contiguous storage segments
/// tagged with their first gradient slot.
struct ParamMap {
    std::vector<ParamSegment> segs;
    long n_slots = 0;

    void add(double* d, long n) {
        if (n <= 0) return;
        segs.push_back({d, n, n_slots});
        n_slots += n;
    }
};

inline void clear_slots(P2innModel& m) {
    for (SubNet* s : {&m.coord_enc, &m.param_enc, &m.decoder})
        for (LayerSpec& l : s->layers) {
            l.slot_w = l.slot_b = -1;
            if (l.adapter) l.adapter->slots = AdapterSlots{};
        }
}

/// Every weight and bias trainable (the pre-training scope).
inline ParamMap param_map_all(P2innModel& m) {
    clear_slots(m);
    ParamMap pm;
    for (SubNet* s : {&m.coord_enc, &m.param_enc, &m.decoder})
        for (LayerSpec& l : s->layers) {
            l.slot_w = pm.n_slots;
            pm.add(l.weight.data.data(), static_cast<long>(l.weight.data.size()));
            l.slot_b = pm.n_slots;
            pm.add(l.bias.data(), static_cast<long>(l.bias.size()));
        }
    return pm;
}

/// Adapter parameters only (or full decoder when full_finetune is set).
inline ParamMap param_map_finetune(P2innModel& m) {
    clear_slots(m);
    ParamMap pm;
    if (m.full_finetune) {
        for (LayerSpec& l : m.decoder.layers) {
            l.slot_w = pm.n_slots;
            pm.add(l.weight.data.data(), static_cast<long>(l.weight.data.size()));
            l.slot_b = pm.n_slots;
            pm.add(l.bias.data(), static_cast<long>(l.bias.size()));
        }
        return pm;
    }
    for (LayerSpec& l : m.decoder.layers) {
        if (!l.adapter) continue;
        AdapterState& st = *l.adapter;
        std::visit(
            [&](auto& p) {
                using T = std::decay_t<decltype(p)>;
                if constexpr (std::is_same_v<T, ModeParams>) {
                    st.slots.phi = pm.n_slots;
                    pm.add(p.phi.data.data(), static_cast<long>(p.phi.data.size()));
                    if (p.train_tau) {
                        st.slots.tau = pm.n_slots;
                        pm.add(&p.tau, 1);
                    }
                    if (p.train_delta_b) {
                        st.slots.delta_b = pm.n_slots;
                        pm.add(p.delta_b.data(), static_cast<long>(p.delta_b.size()));
                    }
                } else if constexpr (std::is_same_v<T, SvdDiagParams>) {
                    st.slots.alpha = pm.n_slots;
                    pm.add(p.alpha.data(), static_cast<long>(p.alpha.size()));
                } else if constexpr (std::is_same_v<T, LoraParams>) {
                    st.slots.a = pm.n_slots;
                    pm.add(p.a.data.data(), static_cast<long>(p.a.data.size()));
                    st.slots.b = pm.n_slots;
                    pm.add(p.b.data.data(), static_cast<long>(p.b.data.size()));
                } else if constexpr (std::is_same_v<T, Ia3Params>) {
                    st.slots.scale = pm.n_slots;
                    pm.add(p.scale.data(), static_cast<long>(p.scale.size()));
                } else {
                    st.slots.delta_b = pm.n_slots;
                    pm.add(p.delta_b.data(), static_cast<long>(p.delta_b.size()));
                }
            },
            st.params);
    }
    return pm;
}

// ---------------------------------------------------------------------------
// Attaching adapters

/// Freezes encoders and all decoder weights, then attaches adapters of the
/// given kind to decoder layers [lo, hi] (0-based, defaults to the
/// intermediate layers). MODE starts at the exact-recovery state.
inline void attach_adapters(P2innModel& m, AdapterKind kind, int rank, std::uint64_t seed = 1,
                            int lo = -1, int hi = -1) {
    for (SubNet* s : {&m.coord_enc, &m.param_enc, &m.decoder})
        for (LayerSpec& l : s->layers) l.frozen = true;
    m.full_finetune = false;

    if (kind == AdapterKind::none) return;
    if (kind == AdapterKind::full) {
        for (LayerSpec& l : m.decoder.layers) l.frozen = false;
        m.full_finetune = true;
        return;
    }

    const int depth = static_cast<int>(m.decoder.layers.size());
    if (lo < 0) lo = 1;
    if (hi < 0) hi = depth - 2;
    if (lo > hi || lo < 0 || hi >= depth)
        throw std::invalid_argument("attach_adapters: bad layer range");

    Rng rng(seed ^ 0xada97e5ULL);
    for (int i = lo; i <= hi; ++i) {
        LayerSpec& l = m.decoder.layers[static_cast<std::size_t>(i)];
        const int kmax = std::min(l.in_dim, l.out_dim);
        if ((kind == AdapterKind::mode || kind == AdapterKind::svd_diag ||
             kind == AdapterKind::lora) &&
            (rank < 1 || rank > kmax))
            throw std::invalid_argument("attach_adapters: rank " + std::to_string(rank) +
                                        " exceeds layer limit " + std::to_string(kmax));
        AdapterState st;
        st.kind = kind;
        switch (kind) {
        case AdapterKind::mode: st.params = mode_init(l.weight, l.bias, rank); break;
        case AdapterKind::svd_diag: st.params = svd_diag_init(l.weight, rank); break;
        case AdapterKind::lora: st.params = lora_init(l.out_dim, l.in_dim, rank, rng); break;
        case AdapterKind::ia3: st.params = ia3_init(l.out_dim); break;
        case AdapterKind::bias_only: st.params = bias_only_init(l.out_dim); break;
        default: break;
        }
        l.adapter = std::move(st);
    }
}

inline bool has_adapters(const P2innModel& m) {
    for (const LayerSpec& l : m.decoder.layers)
        if (l.adapter) return true;
    return false;
}

/// Total trainable scalars under the current adapter configuration.
inline long model_trainable_count(P2innModel& m) {
    const bool ft = m.full_finetune || has_adapters(m);
    ParamMap pm = ft ? param_map_finetune(m) : param_map_all(m);
    return pm.n_slots;
}

// ---------------------------------------------------------------------------
// Adapter chain records (reverse-mode through the adapted layer)

namespace detail {

// out[r,:] (+)= A[r,:] * B^T where B is (q x p) row-major; optional accumulate
inline void gemm_nt(const double* a, int n, int p, const Matrix& b, double* out, bool accumulate) {
    for (int r = 0; r < n; ++r) {
        const double* ar = a + static_cast<std::size_t>(r) * p;
        double* or_ = out + static_cast<std::size_t>(r) * b.rows;
        for (int o = 0; o < b.rows; ++o) {
            const double* br = b.row(o);
            double s = 0.0;
            for (int j = 0; j < p; ++j) s += ar[j] * br[j];
            if (accumulate) or_[o] += s; else or_[o] = s;
        }
    }
}

// out[r,:] += A[r,:] * B with B (p x q) row-major
inline void gemm_nn_acc(const double* a, int n, int p, const Matrix& b, double* out) {
    for (int r = 0; r < n; ++r) {
        const double* ar = a + static_cast<std::size_t>(r) * p;
        double* or_ = out + static_cast<std::size_t>(r) * b.cols;
        for (int o = 0; o < p; ++o) {
            const double v = ar[o];
            if (v == 0.0) continue;
            const double* br = b.row(o);
            for (int j = 0; j < b.cols; ++j) or_[j] += v * br[j];
        }
    }
}

} // namespace detail

/// MODE-adapted layer record. Forward (per channel, row-vector batches):
///   F = H W0^T, P = H V, Q = P M^T with M = Phi + (1 - tau) Sigma,
///   Y = tau F + Q U^T (+ b0 + delta_b on the value channel).
struct ModeChainOp final : ChainOp {
    const LayerSpec* layer = nullptr;
    const ModeParams* mp = nullptr;
    JetBatch saved_in;   // H
    JetBatch saved_full; // F
    AdapterSlots slots;

    void backward(ChainCtx& ctx, double* grad) override {
        const JetBatch& a_out = ctx.adj(out_slot);
        JetBatch& a_in = ctx.adj(in_slot);
        if (a_in.data.empty()) a_in.resize(saved_in.layout, saved_in.n, saved_in.dim);

        const int n = saved_in.n;
        const int d_in = saved_in.dim;
        const int d_out = layer->out_dim;
        const int k = mp->factors.k;
        const int C = saved_in.layout.channels();
        const Matrix& u = mp->factors.u_k;
        const Matrix& v = mp->factors.v_k;

        Matrix mbar(k, k); // accumulated core adjoint
        double tau_bar = 0.0;
        std::vector<double> p_buf(static_cast<std::size_t>(n) * k);
        std::vector<double> qbar(static_cast<std::size_t>(n) * k);
        std::vector<double> pbar(static_cast<std::size_t>(n) * k);

        Matrix m_core(k, k);
        for (int i = 0; i < k; ++i)
            for (int j = 0; j < k; ++j)
                m_core(i, j) = mp->phi(i, j) +
                               (i == j ? (1.0 - mp->tau) * mp->factors.sigma_k[static_cast<std::size_t>(i)] : 0.0);

        for (int c = 0; c < C; ++c) {
            const double* a = a_out.ch(c);
            const double* h = saved_in.ch(c);
            const double* f = saved_full.ch(c);
            double* ai = a_in.ch(c);

            // P = H V
            for (int r = 0; r < n; ++r) {
                const double* hr = h + static_cast<std::size_t>(r) * d_in;
                double* pr = p_buf.data() + static_cast<std::size_t>(r) * k;
                for (int j = 0; j < k; ++j) {
                    double s = 0.0;
                    for (int l = 0; l < d_in; ++l) s += hr[l] * v(l, j);
                    pr[j] = s;
                }
            }
            // Qbar = A U
            for (int r = 0; r < n; ++r) {
                const double* ar = a + static_cast<std::size_t>(r) * d_out;
                double* qr = qbar.data() + static_cast<std::size_t>(r) * k;
                for (int j = 0; j < k; ++j) {
                    double s = 0.0;
                    for (int o = 0; o < d_out; ++o) s += ar[o] * u(o, j);
                    qr[j] = s;
                }
            }
            // Mbar += Qbar^T P ; tau_bar += sum(A . F)
            for (int r = 0; r < n; ++r) {
                const double* qr = qbar.data() + static_cast<std::size_t>(r) * k;
                const double* pr = p_buf.data() + static_cast<std::size_t>(r) * k;
                for (int i = 0; i < k; ++i)
                    for (int j = 0; j < k; ++j) mbar(i, j) += qr[i] * pr[j];
            }
            {
                const double* ar = a;
                const double* fr = f;
                const std::size_t count = static_cast<std::size_t>(n) * d_out;
                double s = 0.0;
                for (std::size_t idx = 0; idx < count; ++idx) s += ar[idx] * fr[idx];
                tau_bar += s;
            }
            // Pbar = Qbar M ; Hbar += Pbar V^T + tau * A W0
            for (int r = 0; r < n; ++r) {
                const double* qr = qbar.data() + static_cast<std::size_t>(r) * k;
                double* pr = pbar.data() + static_cast<std::size_t>(r) * k;
                for (int j = 0; j < k; ++j) {
                    double s = 0.0;
                    for (int i = 0; i < k; ++i) s += qr[i] * m_core(i, j);
                    pr[j] = s;
                }
            }
            for (int r = 0; r < n; ++r) {
                const double* pr = pbar.data() + static_cast<std::size_t>(r) * k;
                double* air = ai + static_cast<std::size_t>(r) * d_in;
                for (int j = 0; j < k; ++j) {
                    const double pj = pr[j];
                    if (pj == 0.0) continue;
                    for (int l = 0; l < d_in; ++l) air[l] += pj * v(l, j);
                }
            }
            for (int r = 0; r < n; ++r) {
                const double* ar = a + static_cast<std::size_t>(r) * d_out;
                double* air = ai + static_cast<std::size_t>(r) * d_in;
                for (int o = 0; o < d_out; ++o) {
                    const double val = mp->tau * ar[o];
                    if (val == 0.0) continue;
                    const double* wo = layer->weight.row(o);
                    for (int l = 0; l < d_in; ++l) air[l] += val * wo[l];
                }
            }
        }

        if (slots.phi >= 0)
            for (int i = 0; i < k; ++i)
                for (int j = 0; j < k; ++j) grad[slots.phi + static_cast<std::size_t>(i) * k + j] += mbar(i, j);
        if (slots.tau >= 0) {
            double diag = 0.0;
            for (int i = 0; i < k; ++i) diag += mbar(i, i) * mp->factors.sigma_k[static_cast<std::size_t>(i)];
            grad[slots.tau] += tau_bar - diag;
        }
        if (slots.delta_b >= 0) {
            const double* a0 = a_out.ch(0);
            for (int r = 0; r < n; ++r)
                for (int o = 0; o < d_out; ++o) grad[slots.delta_b + o] += a0[static_cast<std::size_t>(r) * d_out + o];
        }
    }
};

/// Diagonal rescaling record: Y = (H V) diag(alpha) U^T (+ b0).
struct SvdDiagChainOp final : ChainOp {
    const SvdDiagParams* sp = nullptr;
    JetBatch saved_in;
    AdapterSlots slots;
    int d_out = 0;

    void backward(ChainCtx& ctx, double* grad) override {
        const JetBatch& a_out = ctx.adj(out_slot);
        JetBatch& a_in = ctx.adj(in_slot);
        if (a_in.data.empty()) a_in.resize(saved_in.layout, saved_in.n, saved_in.dim);
        const int n = saved_in.n, d_in = saved_in.dim, k = sp->factors.k;
        const int C = saved_in.layout.channels();
        const Matrix& u = sp->factors.u_k;
        const Matrix& v = sp->factors.v_k;
        std::vector<double> pr(static_cast<std::size_t>(k)), qr(static_cast<std::size_t>(k));
        for (int c = 0; c < C; ++c) {
            const double* a = a_out.ch(c);
            const double* h = saved_in.ch(c);
            double* ai = a_in.ch(c);
            for (int r = 0; r < n; ++r) {
                const double* hr = h + static_cast<std::size_t>(r) * d_in;
                const double* ar = a + static_cast<std::size_t>(r) * d_out;
                double* air = ai + static_cast<std::size_t>(r) * d_in;
                for (int j = 0; j < k; ++j) {
                    double s = 0.0;
                    for (int l = 0; l < d_in; ++l) s += hr[l] * v(l, j);
                    pr[static_cast<std::size_t>(j)] = s;
                }
                for (int j = 0; j < k; ++j) {
                    double s = 0.0;
                    for (int o = 0; o < d_out; ++o) s += ar[o] * u(o, j);
                    qr[static_cast<std::size_t>(j)] = s;
                }
                for (int j = 0; j < k; ++j) {
                    if (slots.alpha >= 0)
                        grad[slots.alpha + j] += qr[static_cast<std::size_t>(j)] * pr[static_cast<std::size_t>(j)];
                    const double w = qr[static_cast<std::size_t>(j)] * sp->alpha[static_cast<std::size_t>(j)];
                    if (w == 0.0) continue;
                    for (int l = 0; l < d_in; ++l) air[l] += w * v(l, j);
                }
            }
        }
    }
};

/// LoRA record: Y = H W0^T + (H A^T) B^T (+ b0).
struct LoraChainOp final : ChainOp {
    const LayerSpec* layer = nullptr;
    const LoraParams* lp = nullptr;
    JetBatch saved_in; // H
    JetBatch saved_g;  // G = H A^T
    AdapterSlots slots;

    void backward(ChainCtx& ctx, double* grad) override {
        const JetBatch& a_out = ctx.adj(out_slot);
        JetBatch& a_in = ctx.adj(in_slot);
        if (a_in.data.empty()) a_in.resize(saved_in.layout, saved_in.n, saved_in.dim);
        const int n = saved_in.n, d_in = saved_in.dim, d_out = layer->out_dim, r = lp->r;
        const int C = saved_in.layout.channels();
        std::vector<double> gbar(static_cast<std::size_t>(n) * r);
        for (int c = 0; c < C; ++c) {
            const double* a = a_out.ch(c);
            const double* h = saved_in.ch(c);
            const double* g = saved_g.ch(c);
            double* ai = a_in.ch(c);
            // gB += A^T G ; Gbar = A B ; gA += Gbar^T H ; Hbar += A W0 + Gbar A
            for (int p = 0; p < n; ++p) {
                const double* ap = a + static_cast<std::size_t>(p) * d_out;
                const double* gp = g + static_cast<std::size_t>(p) * r;
                double* gbp = gbar.data() + static_cast<std::size_t>(p) * r;
                for (int j = 0; j < r; ++j) gbp[j] = 0.0;
                for (int o = 0; o < d_out; ++o) {
                    const double apo = ap[o];
                    if (apo == 0.0) continue;
                    const double* bo = lp->b.row(o);
                    for (int j = 0; j < r; ++j) gbp[j] += apo * bo[j];
                    if (slots.b >= 0) {
                        double* gB = grad + slots.b + static_cast<std::size_t>(o) * r;
                        for (int j = 0; j < r; ++j) gB[j] += apo * gp[j];
                    }
                }
            }
            for (int p = 0; p < n; ++p) {
                const double* hp = h + static_cast<std::size_t>(p) * d_in;
                const double* gbp = gbar.data() + static_cast<std::size_t>(p) * r;
                double* aip = ai + static_cast<std::size_t>(p) * d_in;
                for (int j = 0; j < r; ++j) {
                    const double gj = gbp[j];
                    if (gj == 0.0) continue;
                    if (slots.a >= 0) {
                        double* gA = grad + slots.a + static_cast<std::size_t>(j) * d_in;
                        for (int l = 0; l < d_in; ++l) gA[l] += gj * hp[l];
                    }
                    const double* arow = lp->a.row(j);
                    for (int l = 0; l < d_in; ++l) aip[l] += gj * arow[l];
                }
                const double* ap = a + static_cast<std::size_t>(p) * d_out;
                for (int o = 0; o < d_out; ++o) {
                    const double apo = ap[o];
                    if (apo == 0.0) continue;
                    const double* wo = layer->weight.row(o);
                    for (int l = 0; l < d_in; ++l) aip[l] += apo * wo[l];
                }
            }
        }
    }
};

/// IA3 record: Y = (H W0^T) . scale (+ b0).
struct Ia3ChainOp final : ChainOp {
    const LayerSpec* layer = nullptr;
    const Ia3Params* ip = nullptr;
    JetBatch saved_full; // F = H W0^T
    AdapterSlots slots;
    JetLayout in_layout;
    int n = 0;

    void backward(ChainCtx& ctx, double* grad) override {
        const JetBatch& a_out = ctx.adj(out_slot);
        JetBatch& a_in = ctx.adj(in_slot);
        if (a_in.data.empty()) a_in.resize(in_layout, n, layer->in_dim);
        const int d_out = layer->out_dim, d_in = layer->in_dim;
        const int C = in_layout.channels();
        for (int c = 0; c < C; ++c) {
            const double* a = a_out.ch(c);
            const double* f = saved_full.ch(c);
            double* ai = a_in.ch(c);
            for (int p = 0; p < n; ++p) {
                const double* ap = a + static_cast<std::size_t>(p) * d_out;
                const double* fp = f + static_cast<std::size_t>(p) * d_out;
                double* aip = ai + static_cast<std::size_t>(p) * d_in;
                for (int o = 0; o < d_out; ++o) {
                    const double apo = ap[o];
                    if (apo == 0.0) continue;
                    if (slots.scale >= 0) grad[slots.scale + o] += apo * fp[o];
                    const double w = apo * ip->scale[static_cast<std::size_t>(o)];
                    const double* wo = layer->weight.row(o);
                    for (int l = 0; l < d_in; ++l) aip[l] += w * wo[l];
                }
            }
        }
    }
};

/// Bias-drift record: Y = H W0^T + b0 + delta_b.
struct BiasOnlyChainOp final : ChainOp {
    const LayerSpec* layer = nullptr;
    AdapterSlots slots;
    JetLayout in_layout;
    int n = 0;

    void backward(ChainCtx& ctx, double* grad) override {
        const JetBatch& a_out = ctx.adj(out_slot);
        JetBatch& a_in = ctx.adj(in_slot);
        if (a_in.data.empty()) a_in.resize(in_layout, n, layer->in_dim);
        const int d_out = layer->out_dim, d_in = layer->in_dim;
        const int C = in_layout.channels();
        for (int c = 0; c < C; ++c) {
            const double* a = a_out.ch(c);
            double* ai = a_in.ch(c);
            for (int p = 0; p < n; ++p) {
                const double* ap = a + static_cast<std::size_t>(p) * d_out;
                double* aip = ai + static_cast<std::size_t>(p) * d_in;
                for (int o = 0; o < d_out; ++o) {
                    const double apo = ap[o];
                    if (apo == 0.0) continue;
                    const double* wo = layer->weight.row(o);
                    for (int l = 0; l < d_in; ++l) aip[l] += apo * wo[l];
                }
            }
        }
        if (slots.delta_b >= 0) {
            const double* a0 = a_out.ch(0);
            for (int p = 0; p < n; ++p)
                for (int o = 0; o < d_out; ++o) grad[slots.delta_b + o] += a0[static_cast<std::size_t>(p) * d_out + o];
        }
    }
};

// ---------------------------------------------------------------------------
// Batched forward pass

namespace detail {

/// Adapted-layer forward on a jet batch. save_full, when given, receives the
/// frozen-path product H W0^T (or, for LoRA, G = H A^T).
inline void adapter_layer_forward(const LayerSpec& l, const JetBatch& in, JetBatch& out,
                                  JetBatch* save_aux) {
    const AdapterState& st = *l.adapter;
    const int n = in.n;
    const int C = in.layout.channels();
    out.resize(in.layout, n, l.out_dim);

    std::visit(
        [&](const auto& p) {
            using T = std::decay_t<decltype(p)>;
            if constexpr (std::is_same_v<T, ModeParams>) {
                const int k = p.factors.k;
                Matrix m_core(k, k);
                for (int i = 0; i < k; ++i)
                    for (int j = 0; j < k; ++j)
                        m_core(i, j) = p.phi(i, j) + (i == j ? (1.0 - p.tau) * p.factors.sigma_k[static_cast<std::size_t>(i)] : 0.0);
                JetBatch full(in.layout, n, l.out_dim);
                std::vector<double> pc(static_cast<std::size_t>(n) * k), qc(static_cast<std::size_t>(n) * k);
                for (int c = 0; c < C; ++c) {
                    const double* h = in.ch(c);
                    double* f = full.ch(c);
                    double* y = out.ch(c);
                    gemm_nt(h, n, in.dim, l.weight, f, false);
                    for (int r = 0; r < n; ++r) {
                        const double* hr = h + static_cast<std::size_t>(r) * in.dim;
                        double* pr = pc.data() + static_cast<std::size_t>(r) * k;
                        for (int j = 0; j < k; ++j) {
                            double s = 0.0;
                            for (int lidx = 0; lidx < in.dim; ++lidx) s += hr[lidx] * p.factors.v_k(lidx, j);
                            pr[j] = s;
                        }
                    }
                    for (int r = 0; r < n; ++r) {
                        const double* pr = pc.data() + static_cast<std::size_t>(r) * k;
                        double* qr = qc.data() + static_cast<std::size_t>(r) * k;
                        for (int i = 0; i < k; ++i) {
                            double s = 0.0;
                            for (int j = 0; j < k; ++j) s += m_core(i, j) * pr[j];
                            qr[i] = s;
                        }
                    }
                    for (int r = 0; r < n; ++r) {
                        const double* fr = f + static_cast<std::size_t>(r) * l.out_dim;
                        const double* qr = qc.data() + static_cast<std::size_t>(r) * k;
                        double* yr = y + static_cast<std::size_t>(r) * l.out_dim;
                        for (int o = 0; o < l.out_dim; ++o) {
                            double s = p.tau * fr[o];
                            for (int j = 0; j < k; ++j) s += p.factors.u_k(o, j) * qr[j];
                            yr[o] = s;
                        }
                    }
                }
                double* y0 = out.ch(0);
                for (int r = 0; r < n; ++r)
                    for (int o = 0; o < l.out_dim; ++o)
                        y0[static_cast<std::size_t>(r) * l.out_dim + o] += l.bias[static_cast<std::size_t>(o)] + p.delta_b[static_cast<std::size_t>(o)];
                if (save_aux) *save_aux = std::move(full);
            } else if constexpr (std::is_same_v<T, SvdDiagParams>) {
                const int k = p.factors.k;
                std::vector<double> pc(static_cast<std::size_t>(k));
                for (int c = 0; c < C; ++c) {
                    const double* h = in.ch(c);
                    double* y = out.ch(c);
                    for (int r = 0; r < n; ++r) {
                        const double* hr = h + static_cast<std::size_t>(r) * in.dim;
                        double* yr = y + static_cast<std::size_t>(r) * l.out_dim;
                        for (int j = 0; j < k; ++j) {
                            double s = 0.0;
                            for (int lidx = 0; lidx < in.dim; ++lidx) s += hr[lidx] * p.factors.v_k(lidx, j);
                            pc[static_cast<std::size_t>(j)] = p.alpha[static_cast<std::size_t>(j)] * s;
                        }
                        for (int o = 0; o < l.out_dim; ++o) {
                            double s = 0.0;
                            for (int j = 0; j < k; ++j) s += p.factors.u_k(o, j) * pc[static_cast<std::size_t>(j)];
                            yr[o] = s;
                        }
                    }
                }
                double* y0 = out.ch(0);
                for (int r = 0; r < n; ++r)
                    for (int o = 0; o < l.out_dim; ++o)
                        y0[static_cast<std::size_t>(r) * l.out_dim + o] += l.bias[static_cast<std::size_t>(o)];
            } else if constexpr (std::is_same_v<T, LoraParams>) {
                JetBatch g(in.layout, n, p.r);
                for (int c = 0; c < C; ++c) {
                    gemm_nt(in.ch(c), n, in.dim, l.weight, out.ch(c), false);
                    gemm_nt(in.ch(c), n, in.dim, p.a, g.ch(c), false);
                    gemm_nt(g.ch(c), n, p.r, p.b, out.ch(c), true);
                }
                double* y0 = out.ch(0);
                for (int r = 0; r < n; ++r)
                    for (int o = 0; o < l.out_dim; ++o)
                        y0[static_cast<std::size_t>(r) * l.out_dim + o] += l.bias[static_cast<std::size_t>(o)];
                if (save_aux) *save_aux = std::move(g);
            } else if constexpr (std::is_same_v<T, Ia3Params>) {
                JetBatch full(in.layout, n, l.out_dim);
                for (int c = 0; c < C; ++c) {
                    gemm_nt(in.ch(c), n, in.dim, l.weight, full.ch(c), false);
                    const double* f = full.ch(c);
                    double* y = out.ch(c);
                    for (int r = 0; r < n; ++r)
                        for (int o = 0; o < l.out_dim; ++o)
                            y[static_cast<std::size_t>(r) * l.out_dim + o] =
                                p.scale[static_cast<std::size_t>(o)] * f[static_cast<std::size_t>(r) * l.out_dim + o];
                }
                double* y0 = out.ch(0);
                for (int r = 0; r < n; ++r)
                    for (int o = 0; o < l.out_dim; ++o)
                        y0[static_cast<std::size_t>(r) * l.out_dim + o] += l.bias[static_cast<std::size_t>(o)];
                if (save_aux) *save_aux = std::move(full);
            } else { // BiasOnlyParams
                for (int c = 0; c < C; ++c) gemm_nt(in.ch(c), n, in.dim, l.weight, out.ch(c), false);
                double* y0 = out.ch(0);
                for (int r = 0; r < n; ++r)
                    for (int o = 0; o < l.out_dim; ++o)
                        y0[static_cast<std::size_t>(r) * l.out_dim + o] +=
                            l.bias[static_cast<std::size_t>(o)] + p.delta_b[static_cast<std::size_t>(o)];
            }
        },
        st.params);
}

struct StackCursor {
    JetBatch cur;
    int slot = -1; // chain slot holding cur
};

/// Runs one subnet over the cursor, recording ops on the tape when present.
/// `last_activated` controls the trailing activation.
inline void run_subnet(const SubNet& net, Activation act, bool last_activated, Tape* tape,
                       int chain, int& next_slot, StackCursor& sc) {
    JetBatch next;
    for (std::size_t li = 0; li < net.layers.size(); ++li) {
        const LayerSpec& l = net.layers[li];
        const bool activated = last_activated || li + 1 < net.layers.size();
        if (l.adapter) {
            if (tape) {
                const AdapterState& st = *l.adapter;
                switch (st.kind) {
                case AdapterKind::mode: {
                    auto op = std::make_unique<ModeChainOp>();
                    op->layer = &l;
                    op->mp = &std::get<ModeParams>(st.params);
                    op->slots = st.slots;
                    op->in_slot = sc.slot;
                    op->out_slot = ++next_slot;
                    op->saved_in = std::move(sc.cur);
                    adapter_layer_forward(l, op->saved_in, next, &op->saved_full);
                    sc.cur = std::move(next);
                    sc.slot = op->out_slot;
                    tape->push_op(chain, std::move(op));
                    break;
                }
                case AdapterKind::svd_diag: {
                    auto op = std::make_unique<SvdDiagChainOp>();
                    op->sp = &std::get<SvdDiagParams>(st.params);
                    op->slots = st.slots;
                    op->d_out = l.out_dim;
                    op->in_slot = sc.slot;
                    op->out_slot = ++next_slot;
                    op->saved_in = std::move(sc.cur);
                    adapter_layer_forward(l, op->saved_in, next, nullptr);
                    sc.cur = std::move(next);
                    sc.slot = op->out_slot;
                    tape->push_op(chain, std::move(op));
                    break;
                }
                case AdapterKind::lora: {
                    auto op = std::make_unique<LoraChainOp>();
                    op->layer = &l;
                    op->lp = &std::get<LoraParams>(st.params);
                    op->slots = st.slots;
                    op->in_slot = sc.slot;
                    op->out_slot = ++next_slot;
                    op->saved_in = std::move(sc.cur);
                    adapter_layer_forward(l, op->saved_in, next, &op->saved_g);
                    sc.cur = std::move(next);
                    sc.slot = op->out_slot;
                    tape->push_op(chain, std::move(op));
                    break;
                }
                case AdapterKind::ia3: {
                    auto op = std::make_unique<Ia3ChainOp>();
                    op->layer = &l;
                    op->ip = &std::get<Ia3Params>(st.params);
                    op->slots = st.slots;
                    op->in_layout = sc.cur.layout;
                    op->n = sc.cur.n;
                    op->in_slot = sc.slot;
                    op->out_slot = ++next_slot;
                    adapter_layer_forward(l, sc.cur, next, &op->saved_full);
                    sc.cur = std::move(next);
                    sc.slot = op->out_slot;
                    tape->push_op(chain, std::move(op));
                    break;
                }
                case AdapterKind::bias_only: {
                    auto op = std::make_unique<BiasOnlyChainOp>();
                    op->layer = &l;
                    op->slots = st.slots;
                    op->in_layout = sc.cur.layout;
                    op->n = sc.cur.n;
                    op->in_slot = sc.slot;
                    op->out_slot = ++next_slot;
                    adapter_layer_forward(l, sc.cur, next, nullptr);
                    sc.cur = std::move(next);
                    sc.slot = op->out_slot;
                    tape->push_op(chain, std::move(op));
                    break;
                }
                default:
                    throw std::invalid_argument("run_subnet: bad adapter kind");
                }
            } else {
                adapter_layer_forward(l, sc.cur, next, nullptr);
                sc.cur = std::move(next);
            }
        } else {
            if (tape) {
                auto op = std::make_unique<LinearOp>();
                op->w = &l.weight;
                op->bias = &l.bias;
                op->w_slot = static_cast<int>(l.slot_w);
                op->b_slot = static_cast<int>(l.slot_b);
                op->in_slot = sc.slot;
                op->out_slot = ++next_slot;
                op->saved_in = std::move(sc.cur);
                linear_forward(op->saved_in, l.weight, &l.bias, next);
                sc.cur = std::move(next);
                sc.slot = op->out_slot;
                tape->push_op(chain, std::move(op));
            } else {
                linear_forward(sc.cur, l.weight, &l.bias, next);
                sc.cur = std::move(next);
            }
        }
        if (activated) {
            if (tape) {
                auto op = std::make_unique<ActivationOp>();
                op->act = act;
                op->in_slot = sc.slot;
                op->out_slot = ++next_slot;
                op->saved_z = std::move(sc.cur);
                activation_forward(act, op->saved_z, next);
                sc.cur = std::move(next);
                sc.slot = op->out_slot;
                tape->push_op(chain, std::move(op));
            } else {
                activation_forward(act, sc.cur, next);
                sc.cur = std::move(next);
            }
        }
    }
}

} // namespace detail

/// Jet forward over a batch of points sharing one PDE parameter vector.
/// With a tape, the pass is recorded and the output jets are bridged into
/// scalar variables (channel-major, then point) returned via `vars_out`.
inline JetBatch model_forward_jets(const P2innModel& m, std::span<const double> xs,
                                   std::span<const double> ts, std::span<const double> mu,
                                   JetLayout layout, Tape* tape,
                                   std::vector<Var>* vars_out = nullptr) {
    const int n = static_cast<int>(xs.size());
    if (n == 0 || ts.size() != xs.size()) throw std::invalid_argument("model_forward_jets: bad points");
    if (static_cast<int>(mu.size()) != m.cfg.mu_dim)
        throw std::invalid_argument("model_forward_jets: mu dimension mismatch");

    const double inv_lx = 1.0 / (m.cfg.x_max - m.cfg.x_min);
    const double inv_lt = 1.0 / (m.cfg.t_max - m.cfg.t_min);

    detail::StackCursor coord;
    coord.cur.resize(layout, n, 2);
    for (int p = 0; p < n; ++p) {
        coord.cur.at(0, p, 0) = (xs[static_cast<std::size_t>(p)] - m.cfg.x_min) * inv_lx;
        coord.cur.at(0, p, 1) = (ts[static_cast<std::size_t>(p)] - m.cfg.t_min) * inv_lt;
        if (layout.n_first >= 1) coord.cur.at(1, p, 0) = inv_lx;
        if (layout.n_first >= 2) coord.cur.at(2, p, 1) = inv_lt;
    }

    detail::StackCursor par;
    par.cur.resize(JetLayout::value_only(), 1, m.cfg.mu_dim);
    for (int j = 0; j < m.cfg.mu_dim; ++j)
        par.cur.at(0, 0, j) = mu[static_cast<std::size_t>(j)] * m.cfg.mu_scale_at(j);

    int chain = -1;
    int next_slot = -1;
    if (tape) chain = tape->begin_chain();

    detail::run_subnet(m.coord_enc, m.cfg.activation, true, tape, chain, next_slot, coord);
    detail::run_subnet(m.param_enc, m.cfg.activation, true, tape, chain, next_slot, par);

    detail::StackCursor dec;
    if (tape) {
        auto op = std::make_unique<ConcatBroadcastOp>();
        op->in_slot = coord.slot;
        op->in_slot_b = par.slot;
        op->a_dim = coord.cur.dim;
        op->b_dim = par.cur.dim;
        op->n = n;
        op->a_layout = coord.cur.layout;
        op->b_layout = par.cur.layout;
        op->out_slot = ++next_slot;
        concat_broadcast_forward(coord.cur, par.cur, dec.cur);
        dec.slot = op->out_slot;
        tape->push_op(chain, std::move(op));
    } else {
        concat_broadcast_forward(coord.cur, par.cur, dec.cur);
    }

    detail::run_subnet(m.decoder, m.cfg.activation, false, tape, chain, next_slot, dec);

    if (dec.cur.dim != 1) throw std::runtime_error("model_forward_jets: decoder output not scalar");
    for (double v : dec.cur.data)
        if (!std::isfinite(v)) throw std::runtime_error("model_forward_jets: non-finite network output");

    if (tape && vars_out) *vars_out = tape->bridge(chain, dec.slot, dec.cur);
    return std::move(dec.cur);
}

/// Scalar prediction at one point (value channel only).
inline double forward_u(const P2innModel& m, double x, double t, std::span<const double> mu) {
    const double xs[1] = {x};
    const double ts[1] = {t};
    JetBatch out = model_forward_jets(m, xs, ts, mu, JetLayout::value_only(), nullptr);
    return out.at(0, 0, 0);
}

/// Full first/second-derivative jet at one 1D space-time point.
inline Jet1D model_forward_jet(const P2innModel& m, double x, double t, std::span<const double> mu) {
    const double xs[1] = {x};
    const double ts[1] = {t};
    JetBatch out = model_forward_jets(m, xs, ts, mu, JetLayout::cdr1d(), nullptr);
    return Jet1D{out.at(0, 0, 0), out.at(1, 0, 0), out.at(2, 0, 0), out.at(3, 0, 0)};
}

inline Jet2D model_forward_jet_2d(const P2innModel& m, double x, double y, std::span<const double> mu) {
    const double xs[1] = {x};
    const double ys[1] = {y};
    JetBatch out = model_forward_jets(m, xs, ys, mu, JetLayout::helm2d(), nullptr);
    return Jet2D{out.at(0, 0, 0), out.at(3, 0, 0), out.at(4, 0, 0)};
}

/// Batched value-only predictions (evaluation grids).
inline std::vector<double> eval_values(const P2innModel& m, std::span<const double> xs,
                                       std::span<const double> ts, std::span<const double> mu) {
    JetBatch out = model_forward_jets(m, xs, ts, mu, JetLayout::value_only(), nullptr);
    std::vector<double> v(static_cast<std::size_t>(out.n));
    for (int p = 0; p < out.n; ++p) v[static_cast<std::size_t>(p)] = out.at(0, p, 0);
    return v;
}

// ---------------------------------------------------------------------------
// Checkpoints

namespace detail {

inline void write_layer(std::ostream& os, const LayerSpec& l) {
    write_u64(os, static_cast<std::uint64_t>(l.in_dim));
    write_u64(os, static_cast<std::uint64_t>(l.out_dim));
    write_matrix(os, l.weight);
    write_vector(os, l.bias);
    write_u64(os, l.frozen ? 1 : 0);
}

inline LayerSpec read_layer(std::istream& is) {
    LayerSpec l;
    l.in_dim = static_cast<int>(read_u64(is));
    l.out_dim = static_cast<int>(read_u64(is));
    l.weight = read_matrix(is);
    l.bias = read_vector(is);
    l.frozen = read_u64(is) != 0;
    return l;
}

inline void write_factors(std::ostream& os, const SvdFactors& f) {
    write_u64(os, static_cast<std::uint64_t>(f.k));
    write_matrix(os, f.u_k);
    write_vector(os, f.sigma_k);
    write_matrix(os, f.v_k);
}

inline SvdFactors read_factors(std::istream& is) {
    SvdFactors f;
    f.k = static_cast<int>(read_u64(is));
    f.u_k = read_matrix(is);
    f.sigma_k = read_vector(is);
    f.v_k = read_matrix(is);
    return f;
}

} // namespace detail

inline constexpr std::uint64_t kCheckpointMagic = 0x4b43504d2e4d5550ULL; // "PUM.MPCK"
inline constexpr std::uint64_t kCheckpointVersion = 1;

inline void save_checkpoint(const P2innModel& m, const std::string& path) {
    std::ofstream os(path, std::ios::binary | std::ios::trunc);
    if (!os) throw std::runtime_error("save_checkpoint: cannot open " + path);
    write_u64(os, kCheckpointMagic);
    write_u64(os, kCheckpointVersion);
    write_u64(os, m.cfg.seed);
    for (int v : {m.cfg.mu_dim, m.cfg.coord_width, m.cfg.coord_depth, m.cfg.param_width,
                  m.cfg.param_depth, m.cfg.decoder_width, m.cfg.decoder_depth})
        write_u64(os, static_cast<std::uint64_t>(v));
    write_u64(os, m.cfg.activation == Activation::tanh ? 0 : 1);
    for (double d : {m.cfg.x_min, m.cfg.x_max, m.cfg.t_min, m.cfg.t_max}) write_f64(os, d);
    write_u64(os, m.cfg.mu_scale.size());
    write_f64_span(os, m.cfg.mu_scale);
    write_u64(os, m.full_finetune ? 1 : 0);

    for (const SubNet* s : {&m.coord_enc, &m.param_enc, &m.decoder}) {
        write_u64(os, s->layers.size());
        for (const LayerSpec& l : s->layers) detail::write_layer(os, l);
    }

    // adapter section
    std::uint64_t n_adapted = 0;
    for (const LayerSpec& l : m.decoder.layers)
        if (l.adapter) ++n_adapted;
    write_u64(os, n_adapted);
    for (std::size_t i = 0; i < m.decoder.layers.size(); ++i) {
        const LayerSpec& l = m.decoder.layers[i];
        if (!l.adapter) continue;
        const AdapterState& st = *l.adapter;
        write_u64(os, i);
        write_u64(os, static_cast<std::uint64_t>(st.kind));
        std::visit(
            [&](const auto& p) {
                using T = std::decay_t<decltype(p)>;
                if constexpr (std::is_same_v<T, ModeParams>) {
                    write_u64(os, static_cast<std::uint64_t>(p.factors.k));
                    write_matrix(os, p.phi);
                    write_f64(os, p.tau);
                    write_vector(os, p.delta_b);
                    detail::write_factors(os, p.factors);
                    write_u64(os, (p.train_tau ? 1u : 0u) | (p.train_delta_b ? 2u : 0u));
                } else if constexpr (std::is_same_v<T, SvdDiagParams>) {
                    write_u64(os, static_cast<std::uint64_t>(p.factors.k));
                    write_vector(os, p.alpha);
                    detail::write_factors(os, p.factors);
                } else if constexpr (std::is_same_v<T, LoraParams>) {
                    write_u64(os, static_cast<std::uint64_t>(p.r));
                    write_matrix(os, p.a);
                    write_matrix(os, p.b);
                } else if constexpr (std::is_same_v<T, Ia3Params>) {
                    write_u64(os, 0);
                    write_vector(os, p.scale);
                } else {
                    write_u64(os, 0);
                    write_vector(os, p.delta_b);
                }
            },
            st.params);
    }
    if (!os) throw std::runtime_error("save_checkpoint: write failed for " + path);
}

inline P2innModel load_checkpoint(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw std::runtime_error("load_checkpoint: cannot open " + path);
    if (read_u64(is) != kCheckpointMagic) throw std::runtime_error("load_checkpoint: bad magic in " + path);
    if (read_u64(is) != kCheckpointVersion) throw std::runtime_error("load_checkpoint: unsupported version");
    P2innModel m;
    m.cfg.seed = read_u64(is);
    m.cfg.mu_dim = static_cast<int>(read_u64(is));
    m.cfg.coord_width = static_cast<int>(read_u64(is));
    m.cfg.coord_depth = static_cast<int>(read_u64(is));
    m.cfg.param_width = static_cast<int>(read_u64(is));
    m.cfg.param_depth = static_cast<int>(read_u64(is));
    m.cfg.decoder_width = static_cast<int>(read_u64(is));
    m.cfg.decoder_depth = static_cast<int>(read_u64(is));
    m.cfg.activation = read_u64(is) == 0 ? Activation::tanh : Activation::silu;
    m.cfg.x_min = read_f64(is);
    m.cfg.x_max = read_f64(is);
    m.cfg.t_min = read_f64(is);
    m.cfg.t_max = read_f64(is);
    m.cfg.mu_scale.resize(read_u64(is));
    read_f64_span(is, m.cfg.mu_scale);
    m.full_finetune = read_u64(is) != 0;

    for (SubNet* s : {&m.coord_enc, &m.param_enc, &m.decoder}) {
        const std::uint64_t n = read_u64(is);
        s->layers.clear();
        for (std::uint64_t i = 0; i < n; ++i) s->layers.push_back(detail::read_layer(is));
    }

    const std::uint64_t n_adapted = read_u64(is);
    for (std::uint64_t i = 0; i < n_adapted; ++i) {
        const std::uint64_t idx = read_u64(is);
        const auto kind = static_cast<AdapterKind>(read_u64(is));
        AdapterState st;
        st.kind = kind;
        switch (kind) {
        case AdapterKind::mode: {
            ModeParams p;
            read_u64(is); // k echo
            p.phi = read_matrix(is);
            p.tau = read_f64(is);
            p.delta_b = read_vector(is);
            p.factors = detail::read_factors(is);
            const std::uint64_t flags = read_u64(is);
            p.train_tau = (flags & 1u) != 0;
            p.train_delta_b = (flags & 2u) != 0;
            st.params = std::move(p);
            break;
        }
        case AdapterKind::svd_diag: {
            SvdDiagParams p;
            read_u64(is);
            p.alpha = read_vector(is);
            p.factors = detail::read_factors(is);
            st.params = std::move(p);
            break;
        }
        case AdapterKind::lora: {
            LoraParams p;
            p.r = static_cast<int>(read_u64(is));
            p.a = read_matrix(is);
            p.b = read_matrix(is);
            st.params = std::move(p);
            break;
        }
        case AdapterKind::ia3: {
            Ia3Params p;
            read_u64(is);
            p.scale = read_vector(is);
            st.params = std::move(p);
            break;
        }
        case AdapterKind::bias_only: {
            BiasOnlyParams p;
            read_u64(is);
            p.delta_b = read_vector(is);
            st.params = std::move(p);
            break;
        }
        default: throw std::runtime_error("load_checkpoint: bad adapter kind");
        }
        m.decoder.layers.at(idx).adapter = std::move(st);
    }
    return m;
}

} // namespace modepinn
