// SPDX-License-Identifier: Apache-2.0
//
// Forward jets and reverse-mode gradients.
//
// Network inputs are carried as truncated Taylor numbers: a value channel,
// one channel per first input derivative and one per (pure) second input
// derivative. Propagating a batch of points through a layer is then a small
// number of dense matrix products, one per channel. Parameter gradients come
// from a reverse pass: every layer application is recorded on a tape, and the
// scalar operations that assemble residuals and losses from the network
// output jets are recorded as ordinary tape nodes. backward() runs the scalar
// sweep first and then unwinds the recorded layer chains, accumulating into
// one gradient slot per trainable scalar.
#pragma once

#include <array>
#include <cassert>
#include <cmath>
#include <cstdint>
#include <memory>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "linalg.hpp"

namespace modepinn {

// ---------------------------------------------------------------------------
// Jets

/// Output jet for 1D time-dependent problems.
struct Jet1D {
    double u = 0, u_x = 0, u_t = 0, u_xx = 0;
};

/// Output jet for 2D stationary problems (Laplacian terms only).
struct Jet2D {
    double u = 0, u_xx = 0, u_yy = 0;
};

/// Channel layout of a jet batch. Channel 0 is the value; then n_first
/// first-derivative channels; then n_second second-derivative channels, each
/// tied to the first-derivative channel it differentiates again.
struct JetLayout {
    int n_first = 0;
    int n_second = 0;
    std::array<int, 2> second_src{{0, 0}};

    int channels() const { return 1 + n_first + n_second; }

    /// [v, d/dx, d/dt, d2/dx2]
    static JetLayout cdr1d() { return JetLayout{2, 1, {{0, 0}}}; }
    /// [v, d/dx, d/dy, d2/dx2, d2/dy2]
    static JetLayout helm2d() { return JetLayout{2, 2, {{0, 1}}}; }
    /// value only (no input derivatives tracked)
    static JetLayout value_only() { return JetLayout{0, 0, {{0, 0}}}; }
};

/// Batch of n points, each carrying a jet of `dim`-vectors. Storage is
/// channel-major: data[c*n*dim + p*dim + j].
struct JetBatch {
    JetLayout layout;
    int n = 0;
    int dim = 0;
    std::vector<double> data;

    JetBatch() = default;
    JetBatch(JetLayout l, int n_, int dim_) { resize(l, n_, dim_); }

    void resize(JetLayout l, int n_, int dim_) {
        layout = l;
        n = n_;
        dim = dim_;
        data.assign(static_cast<std::size_t>(l.channels()) * n_ * dim_, 0.0);
    }

    std::size_t plane() const { return static_cast<std::size_t>(n) * dim; }
    double* ch(int c) { return data.data() + static_cast<std::size_t>(c) * plane(); }
    const double* ch(int c) const { return data.data() + static_cast<std::size_t>(c) * plane(); }

    double& at(int c, int p, int j) { return data[static_cast<std::size_t>(c) * plane() + static_cast<std::size_t>(p) * dim + j]; }
    double at(int c, int p, int j) const { return data[static_cast<std::size_t>(c) * plane() + static_cast<std::size_t>(p) * dim + j]; }
};

// ---------------------------------------------------------------------------
// Activations

enum class Activation { tanh, silu };

/// Value and first three derivatives of the activation at z.
struct ActDerivs {
    double s, sp, spp, sppp;
};

inline ActDerivs act_derivs(Activation act, double z) {
    if (act == Activation::tanh) {
        const double s = std::tanh(z);
        const double sp = 1.0 - s * s;
        const double spp = -2.0 * s * sp;
        const double sppp = -2.0 * (sp * sp + s * spp);
        return {s, sp, spp, sppp};
    }
    // silu: z * sigmoid(z)
    const double sg = 1.0 / (1.0 + std::exp(-z));
    const double sg1 = sg * (1.0 - sg);
    const double sg2 = sg1 * (1.0 - 2.0 * sg);
    const double sg3 = sg2 * (1.0 - 2.0 * sg) - 2.0 * sg1 * sg1;
    return {z * sg, sg + z * sg1, 2.0 * sg1 + z * sg2, 3.0 * sg2 + z * sg3};
}

// ---------------------------------------------------------------------------
// Layer kernels (shared by tape records and tape-free evaluation)

/// out = W h + b applied channel-wise; bias only on the value channel.
inline void linear_forward(const JetBatch& in, const Matrix& w,
                           const std::vector<double>* bias, JetBatch& out) {
    if (in.dim != w.cols) throw std::invalid_argument("linear_forward: dimension mismatch");
    out.resize(in.layout, in.n, w.rows);
    const int C = in.layout.channels();
    for (int c = 0; c < C; ++c) {
        const double* src = in.ch(c);
        double* dst = out.ch(c);
        for (int p = 0; p < in.n; ++p) {
            const double* hp = src + static_cast<std::size_t>(p) * in.dim;
            double* yp = dst + static_cast<std::size_t>(p) * w.rows;
            for (int o = 0; o < w.rows; ++o) {
                const double* wo = w.row(o);
                double s = 0.0;
                for (int j = 0; j < w.cols; ++j) s += wo[j] * hp[j];
                yp[o] = s;
            }
        }
    }
    if (bias) {
        double* dst = out.ch(0);
        for (int p = 0; p < in.n; ++p) {
            double* yp = dst + static_cast<std::size_t>(p) * w.rows;
            for (int o = 0; o < w.rows; ++o) yp[o] += (*bias)[static_cast<std::size_t>(o)];
        }
    }
}

/// Accumulates input adjoints and, when slots are given, weight/bias
/// gradients for the plain dense layer.
inline void linear_backward(const JetBatch& adj_out, const JetBatch& saved_in, const Matrix& w,
                            JetBatch& adj_in, double* grad_w, double* grad_b) {
    const int C = saved_in.layout.channels();
    const int d_in = saved_in.dim;
    const int d_out = w.rows;
    if (adj_in.data.empty()) adj_in.resize(saved_in.layout, saved_in.n, d_in);
    for (int c = 0; c < C; ++c) {
        const double* a = adj_out.ch(c);
        const double* h = saved_in.ch(c);
        double* ai = adj_in.ch(c);
        for (int p = 0; p < saved_in.n; ++p) {
            const double* ap = a + static_cast<std::size_t>(p) * d_out;
            const double* hp = h + static_cast<std::size_t>(p) * d_in;
            double* aip = ai + static_cast<std::size_t>(p) * d_in;
            for (int o = 0; o < d_out; ++o) {
                const double apo = ap[o];
                if (apo == 0.0) continue;
                const double* wo = w.row(o);
                for (int j = 0; j < d_in; ++j) aip[j] += apo * wo[j];
                if (grad_w) {
                    double* go = grad_w + static_cast<std::size_t>(o) * d_in;
                    for (int j = 0; j < d_in; ++j) go[j] += apo * hp[j];
                }
            }
        }
    }
    if (grad_b) {
        const double* a0 = adj_out.ch(0);
        for (int p = 0; p < saved_in.n; ++p)
            for (int o = 0; o < d_out; ++o) grad_b[o] += a0[static_cast<std::size_t>(p) * d_out + o];
    }
}

/// Elementwise activation with jet propagation:
///   value:  f(z)
///   first:  f'(z) z_i
///   second: f''(z) z_s^2 + f'(z) z_j   (s = paired first channel)
inline void activation_forward(Activation act, const JetBatch& z, JetBatch& out) {
    out.resize(z.layout, z.n, z.dim);
    const int nf = z.layout.n_first, ns = z.layout.n_second;
    const std::size_t plane = z.plane();
    const double* zv = z.ch(0);
    double* ov = out.ch(0);
    for (std::size_t i = 0; i < plane; ++i) {
        const ActDerivs d = act_derivs(act, zv[i]);
        ov[i] = d.s;
        for (int f = 0; f < nf; ++f) out.data[(1 + f) * plane + i] = d.sp * z.data[(1 + f) * plane + i];
        for (int g = 0; g < ns; ++g) {
            const double zs = z.data[(1 + z.layout.second_src[static_cast<std::size_t>(g)]) * plane + i];
            const double zg = z.data[(1 + nf + g) * plane + i];
            out.data[(1 + nf + g) * plane + i] = d.spp * zs * zs + d.sp * zg;
        }
    }
}

inline void activation_backward(Activation act, const JetBatch& adj_out, const JetBatch& saved_z,
                                JetBatch& adj_in) {
    const int nf = saved_z.layout.n_first, ns = saved_z.layout.n_second;
    const std::size_t plane = saved_z.plane();
    if (adj_in.data.empty()) adj_in.resize(saved_z.layout, saved_z.n, saved_z.dim);
    const double* zv = saved_z.ch(0);
    for (std::size_t i = 0; i < plane; ++i) {
        const ActDerivs d = act_derivs(act, zv[i]);
        const double a0 = adj_out.data[i];
        double az0 = a0 * d.sp;
        for (int f = 0; f < nf; ++f) {
            const double af = adj_out.data[(1 + f) * plane + i];
            const double zf = saved_z.data[(1 + f) * plane + i];
            az0 += af * d.spp * zf;
            adj_in.data[(1 + f) * plane + i] += af * d.sp;
        }
        for (int g = 0; g < ns; ++g) {
            const int src = saved_z.layout.second_src[static_cast<std::size_t>(g)];
            const double ag = adj_out.data[(1 + nf + g) * plane + i];
            const double zs = saved_z.data[(1 + src) * plane + i];
            const double zg = saved_z.data[(1 + nf + g) * plane + i];
            az0 += ag * (d.sppp * zs * zs + d.spp * zg);
            adj_in.data[(1 + src) * plane + i] += ag * 2.0 * d.spp * zs;
            adj_in.data[(1 + nf + g) * plane + i] += ag * d.sp;
        }
        adj_in.data[i] += az0;
    }
}

/// Concatenate a per-point batch `a` with a broadcast batch `b` (b.n == 1).
/// `b` may carry fewer channels (missing channels are zero).
inline void concat_broadcast_forward(const JetBatch& a, const JetBatch& b, JetBatch& out) {
    if (b.n != 1) throw std::invalid_argument("concat_broadcast: broadcast side must have n == 1");
    out.resize(a.layout, a.n, a.dim + b.dim);
    const int Ca = a.layout.channels();
    const int Cb = b.layout.channels();
    for (int c = 0; c < Ca; ++c) {
        const double* as = a.ch(c);
        const double* bs = (c < Cb) ? b.ch(c) : nullptr;
        double* os = out.ch(c);
        for (int p = 0; p < a.n; ++p) {
            double* op = os + static_cast<std::size_t>(p) * out.dim;
            const double* ap = as + static_cast<std::size_t>(p) * a.dim;
            for (int j = 0; j < a.dim; ++j) op[j] = ap[j];
            if (bs)
                for (int j = 0; j < b.dim; ++j) op[a.dim + j] = bs[j];
            else
                for (int j = 0; j < b.dim; ++j) op[a.dim + j] = 0.0;
        }
    }
}

inline void concat_broadcast_backward(const JetBatch& adj_out, int a_dim, int b_dim,
                                      JetBatch& adj_a, JetBatch& adj_b,
                                      JetLayout a_layout, JetLayout b_layout, int n) {
    if (adj_a.data.empty()) adj_a.resize(a_layout, n, a_dim);
    if (adj_b.data.empty()) adj_b.resize(b_layout, 1, b_dim);
    const int Ca = a_layout.channels();
    const int Cb = b_layout.channels();
    const int out_dim = a_dim + b_dim;
    for (int c = 0; c < Ca; ++c) {
        const double* as = adj_out.ch(c);
        double* aa = adj_a.ch(c);
        double* ab = (c < Cb) ? adj_b.ch(c) : nullptr;
        for (int p = 0; p < n; ++p) {
            const double* op = as + static_cast<std::size_t>(p) * out_dim;
            double* ap = aa + static_cast<std::size_t>(p) * a_dim;
            for (int j = 0; j < a_dim; ++j) ap[j] += op[j];
            if (ab)
                for (int j = 0; j < b_dim; ++j) ab[j] += op[a_dim + j];
        }
    }
}

// ---------------------------------------------------------------------------
// Tape

class Tape;

/// Adjoint workspace for one recorded chain: slot id -> jet adjoint buffer.
/// Buffers live behind stable pointers so references survive growth.
class ChainCtx {
public:
    JetBatch& adj(int slot) {
        if (slot >= static_cast<int>(bufs_.size())) bufs_.resize(static_cast<std::size_t>(slot) + 1);
        auto& p = bufs_[static_cast<std::size_t>(slot)];
        if (!p) p = std::make_unique<JetBatch>();
        return *p;
    }

private:
    std::vector<std::unique_ptr<JetBatch>> bufs_;
};

/// One recorded layer application inside a chain. Implementations hold the
/// saved forward state they need and know where their parameter gradients
/// live in the slot buffer (or that they are frozen).
struct ChainOp {
    int in_slot = -1;  // -1: chain input (constants, no upstream adjoint)
    int out_slot = -1;

    virtual ~ChainOp() = default;
    virtual void backward(ChainCtx& ctx, double* grad) = 0;
};

/// Scalar variable handle on the tape.
struct Var {
    std::int32_t id = -1;
};

/// Reverse-mode tape. Scalar nodes cover residual/loss assembly; heavier
/// network work is recorded as chains of layer ops whose outputs are bridged
/// into scalar leaf nodes. One gradient accumulator per trainable scalar;
/// the buffer is zeroed at the start of every backward pass.
class Tape {
    enum class Op : std::uint8_t {
        constant, param, bridge, add, sub, mul, axpb, square, tanh_op, mean_sq, weighted_sum
    };

    struct Node {
        Op op;
        std::int32_t a = -1, b = -1;
        double pa = 0.0, pb = 0.0;
    };

    struct Chain {
        std::vector<std::unique_ptr<ChainOp>> ops;
        int bridge_node_begin = -1;
        int bridge_count = 0;
        int bridge_slot = -1;
        JetLayout bridge_layout;
        int bridge_n = 0, bridge_dim = 0;
    };

public:
    int n_slots = 0; ///< number of trainable scalars gradients are kept for

    void reset(int slots) {
        n_slots = slots;
        nodes_.clear();
        vals_.clear();
        args_.clear();
        coefs_.clear();
        chains_.clear();
        forward_done_ = false;
    }

    double value(Var v) const { return vals_[static_cast<std::size_t>(v.id)]; }
    std::size_t node_count() const { return nodes_.size(); }

    Var constant(double v) { return push(Node{Op::constant}, v); }

    Var param(double v, int slot) {
        if (slot < 0 || slot >= n_slots) throw std::invalid_argument("Tape::param: bad slot");
        Node n{Op::param};
        n.a = slot;
        return push(n, v);
    }

    Var add(Var x, Var y) { return push(Node{Op::add, x.id, y.id}, val(x) + val(y)); }
    Var sub(Var x, Var y) { return push(Node{Op::sub, x.id, y.id}, val(x) - val(y)); }
    Var mul(Var x, Var y) { return push(Node{Op::mul, x.id, y.id, val(y), val(x)}, val(x) * val(y)); }

    /// a*x + b with constant a, b.
    Var axpb(Var x, double a, double b) {
        Node n{Op::axpb, x.id};
        n.pa = a;
        return push(n, a * val(x) + b);
    }

    Var square(Var x) { return push(Node{Op::square, x.id, -1, 2.0 * val(x)}, val(x) * val(x)); }

    Var tanh_(Var x) {
        const double s = std::tanh(val(x));
        Node n{Op::tanh_op, x.id};
        n.pa = s;
        return push(n, s);
    }

    /// (1/n) sum x_i^2
    Var mean_sq(std::span<const Var> xs) {
        if (xs.empty()) throw std::invalid_argument("Tape::mean_sq: empty");
        Node n{Op::mean_sq};
        n.a = static_cast<std::int32_t>(args_.size());
        n.b = static_cast<std::int32_t>(xs.size());
        double s = 0.0;
        for (Var x : xs) {
            args_.push_back(x.id);
            s += val(x) * val(x);
        }
        return push(n, s / static_cast<double>(xs.size()));
    }

    /// sum c_i x_i
    Var weighted_sum(std::span<const Var> xs, std::span<const double> cs) {
        if (xs.size() != cs.size() || xs.empty())
            throw std::invalid_argument("Tape::weighted_sum: bad arguments");
        Node n{Op::weighted_sum};
        n.a = static_cast<std::int32_t>(args_.size());
        n.b = static_cast<std::int32_t>(xs.size());
        double s = 0.0;
        for (std::size_t i = 0; i < xs.size(); ++i) {
            args_.push_back(xs[i].id);
            coefs_.resize(args_.size(), 0.0);
            coefs_[args_.size() - 1] = cs[i];
            s += cs[i] * val(xs[i]);
        }
        return push(n, s);
    }

    // --- chains ---

    int begin_chain() {
        chains_.emplace_back();
        return static_cast<int>(chains_.size()) - 1;
    }

    void push_op(int chain, std::unique_ptr<ChainOp> op) {
        chains_[static_cast<std::size_t>(chain)].ops.push_back(std::move(op));
    }

    /// Expose the jet batch `out` (produced into chain slot `slot`) as scalar
    /// leaf variables, channel-major then point-major then dim.
    std::vector<Var> bridge(int chain, int slot, const JetBatch& out) {
        Chain& ch = chains_[static_cast<std::size_t>(chain)];
        if (ch.bridge_node_begin >= 0) throw std::invalid_argument("Tape::bridge: chain already bridged");
        ch.bridge_node_begin = static_cast<int>(nodes_.size());
        ch.bridge_count = static_cast<int>(out.data.size());
        ch.bridge_slot = slot;
        ch.bridge_layout = out.layout;
        ch.bridge_n = out.n;
        ch.bridge_dim = out.dim;
        std::vector<Var> vars;
        vars.reserve(out.data.size());
        for (double v : out.data) vars.push_back(push(Node{Op::bridge}, v));
        return vars;
    }

    /// Reverse sweep seeded at `root` (d root / d root = seed). Gradients of
    /// all slot-mapped parameters are written to `grad` (zeroed first).
    void backward(Var root, std::span<double> grad, double seed = 1.0) {
        if (root.id < 0 || static_cast<std::size_t>(root.id) >= nodes_.size())
            throw std::invalid_argument("Tape::backward: no recorded forward value for the seed");
        if (static_cast<int>(grad.size()) != n_slots)
            throw std::invalid_argument("Tape::backward: gradient buffer size mismatch");
        for (double& g : grad) g = 0.0;

        std::vector<double> adj(nodes_.size(), 0.0);
        adj[static_cast<std::size_t>(root.id)] = seed;

        for (std::int32_t i = static_cast<std::int32_t>(nodes_.size()) - 1; i >= 0; --i) {
            const double a = adj[static_cast<std::size_t>(i)];
            if (a == 0.0) continue;
            const Node& n = nodes_[static_cast<std::size_t>(i)];
            switch (n.op) {
            case Op::constant:
            case Op::bridge:
                break;
            case Op::param:
                grad[static_cast<std::size_t>(n.a)] += a;
                break;
            case Op::add:
                adj[static_cast<std::size_t>(n.a)] += a;
                adj[static_cast<std::size_t>(n.b)] += a;
                break;
            case Op::sub:
                adj[static_cast<std::size_t>(n.a)] += a;
                adj[static_cast<std::size_t>(n.b)] -= a;
                break;
            case Op::mul:
                adj[static_cast<std::size_t>(n.a)] += a * n.pa;
                adj[static_cast<std::size_t>(n.b)] += a * n.pb;
                break;
            case Op::axpb:
                adj[static_cast<std::size_t>(n.a)] += a * n.pa;
                break;
            case Op::square:
                adj[static_cast<std::size_t>(n.a)] += a * n.pa;
                break;
            case Op::tanh_op:
                adj[static_cast<std::size_t>(n.a)] += a * (1.0 - n.pa * n.pa);
                break;
            case Op::mean_sq: {
                const double inv_n = 1.0 / static_cast<double>(n.b);
                for (std::int32_t j = 0; j < n.b; ++j) {
                    const std::int32_t arg = args_[static_cast<std::size_t>(n.a + j)];
                    adj[static_cast<std::size_t>(arg)] +=
                        a * 2.0 * vals_[static_cast<std::size_t>(arg)] * inv_n;
                }
                break;
            }
            case Op::weighted_sum:
                for (std::int32_t j = 0; j < n.b; ++j) {
                    const std::int32_t arg = args_[static_cast<std::size_t>(n.a + j)];
                    adj[static_cast<std::size_t>(arg)] += a * coefs_[static_cast<std::size_t>(n.a + j)];
                }
                break;
            }
        }

        // unwind recorded chains, most recent first
        for (auto it = chains_.rbegin(); it != chains_.rend(); ++it) {
            Chain& ch = *it;
            if (ch.bridge_node_begin < 0) continue; // never bridged: no loss dependence
            ChainCtx ctx;
            JetBatch& seed_adj = ctx.adj(ch.bridge_slot);
            seed_adj.resize(ch.bridge_layout, ch.bridge_n, ch.bridge_dim);
            bool any = false;
            for (int j = 0; j < ch.bridge_count; ++j) {
                const double a = adj[static_cast<std::size_t>(ch.bridge_node_begin + j)];
                seed_adj.data[static_cast<std::size_t>(j)] = a;
                any = any || (a != 0.0);
            }
            if (!any) continue;
            for (auto op = ch.ops.rbegin(); op != ch.ops.rend(); ++op)
                (*op)->backward(ctx, grad.data());
        }
    }

private:
    double val(Var v) const { return vals_[static_cast<std::size_t>(v.id)]; }

    Var push(Node n, double v) {
        nodes_.push_back(n);
        vals_.push_back(v);
        return Var{static_cast<std::int32_t>(nodes_.size()) - 1};
    }

    std::vector<Node> nodes_;
    std::vector<double> vals_;
    std::vector<std::int32_t> args_;
    std::vector<double> coefs_;
    std::vector<Chain> chains_;
    bool forward_done_ = false;
};

// ---------------------------------------------------------------------------
// Standard chain records

/// Dense layer record; grad offsets of -1 mean frozen.
struct LinearOp final : ChainOp {
    const Matrix* w = nullptr;
    const std::vector<double>* bias = nullptr;
    JetBatch saved_in;
    int w_slot = -1, b_slot = -1;

    void backward(ChainCtx& ctx, double* grad) override {
        JetBatch scratch;
        JetBatch& target = (in_slot >= 0) ? ctx.adj(in_slot) : scratch;
        linear_backward(ctx.adj(out_slot), saved_in, *w, target,
                        w_slot >= 0 ? grad + w_slot : nullptr,
                        b_slot >= 0 ? grad + b_slot : nullptr);
    }
};

struct ActivationOp final : ChainOp {
    Activation act = Activation::tanh;
    JetBatch saved_z;

    void backward(ChainCtx& ctx, double* grad) override {
        (void)grad;
        activation_backward(act, ctx.adj(out_slot), saved_z, ctx.adj(in_slot));
    }
};

struct ConcatBroadcastOp final : ChainOp {
    int in_slot_b = -1;
    int a_dim = 0, b_dim = 0, n = 0;
    JetLayout a_layout, b_layout;

    void backward(ChainCtx& ctx, double* grad) override {
        (void)grad;
        concat_broadcast_backward(ctx.adj(out_slot), a_dim, b_dim, ctx.adj(in_slot),
                                  ctx.adj(in_slot_b), a_layout, b_layout, n);
    }
};

// ---------------------------------------------------------------------------
// Plain dense stacks (network description used by the jet evaluators)

struct DenseLayer {
    Matrix w;
    std::vector<double> b;
    bool activated = true;
};

/// Jet evaluation of a dense stack on one 1D space-time point. Coordinate
/// inputs carry (value, d/dx, d/dt, d2/dx2); any extra latents enter with
/// zero derivative components.
inline Jet1D forward_jet(std::span<const DenseLayer> layers, Activation act, double x, double t,
                         std::span<const double> mu_latent = {}) {
    if (layers.empty()) throw std::invalid_argument("forward_jet: empty stack");
    const JetLayout layout = JetLayout::cdr1d();
    JetBatch cur(layout, 1, 2 + static_cast<int>(mu_latent.size()));
    cur.at(0, 0, 0) = x;
    cur.at(0, 0, 1) = t;
    cur.at(1, 0, 0) = 1.0; // dx
    cur.at(2, 0, 1) = 1.0; // dt
    for (std::size_t i = 0; i < mu_latent.size(); ++i) cur.at(0, 0, 2 + static_cast<int>(i)) = mu_latent[i];

    JetBatch next;
    for (std::size_t li = 0; li < layers.size(); ++li) {
        linear_forward(cur, layers[li].w, layers[li].b.empty() ? nullptr : &layers[li].b, next);
        if (layers[li].activated) {
            JetBatch activated;
            activation_forward(act, next, activated);
            next = std::move(activated);
        }
        for (double v : next.data)
            if (!std::isfinite(v))
                throw std::runtime_error("forward_jet: non-finite value after layer " + std::to_string(li));
        cur = std::move(next);
    }
    if (cur.dim != 1) throw std::invalid_argument("forward_jet: stack output is not scalar");
    return Jet1D{cur.at(0, 0, 0), cur.at(1, 0, 0), cur.at(2, 0, 0), cur.at(3, 0, 0)};
}

/// Same as forward_jet with two spatial Taylor directions.
inline Jet2D forward_jet_2d(std::span<const DenseLayer> layers, Activation act, double x, double y,
                            std::span<const double> mu_latent = {}) {
    if (layers.empty()) throw std::invalid_argument("forward_jet_2d: empty stack");
    const JetLayout layout = JetLayout::helm2d();
    JetBatch cur(layout, 1, 2 + static_cast<int>(mu_latent.size()));
    cur.at(0, 0, 0) = x;
    cur.at(0, 0, 1) = y;
    cur.at(1, 0, 0) = 1.0; // dx
    cur.at(2, 0, 1) = 1.0; // dy
    for (std::size_t i = 0; i < mu_latent.size(); ++i) cur.at(0, 0, 2 + static_cast<int>(i)) = mu_latent[i];

    JetBatch next;
    for (std::size_t li = 0; li < layers.size(); ++li) {
        linear_forward(cur, layers[li].w, layers[li].b.empty() ? nullptr : &layers[li].b, next);
        if (layers[li].activated) {
            JetBatch activated;
            activation_forward(act, next, activated);
            next = std::move(activated);
        }
        for (double v : next.data)
            if (!std::isfinite(v))
                throw std::runtime_error("forward_jet_2d: non-finite value after layer " + std::to_string(li));
        cur = std::move(next);
    }
    if (cur.dim != 1) throw std::invalid_argument("forward_jet_2d: stack output is not scalar");
    return Jet2D{cur.at(0, 0, 0), cur.at(3, 0, 0), cur.at(4, 0, 0)};
}

} // namespace modepinn
