// SPDX-License-Identifier: Apache-2.0
#include <catch2/catch_amalgamated.hpp>

#include <cstdio>
#include <filesystem>

#include <modepinn/model.hpp>

#include "oracles.hpp"

using namespace modepinn;

namespace {

ArchConfig small_cfg() {
    ArchConfig cfg;
    cfg.mu_dim = 2;
    cfg.coord_width = 6;
    cfg.coord_depth = 2;
    cfg.param_width = 6;
    cfg.param_depth = 2;
    cfg.decoder_width = 8;
    cfg.decoder_depth = 4;
    cfg.seed = 7;
    return cfg;
}

double& slot_ref(ParamMap& pm, long slot) {
    for (ParamSegment& s : pm.segs)
        if (slot >= s.slot0 && slot < s.slot0 + s.len) return s.data[slot - s.slot0];
    throw std::runtime_error("slot out of range");
}

/// PINN-style scalar objective over bridged jet variables; touches every
/// channel so gradients flow through all jet components.
Var jet_loss(Tape& t, std::span<const Var> vars, int n, double beta, double nu, double rho) {
    std::vector<Var> rs, us;
    for (int p = 0; p < n; ++p) {
        Var u = vars[static_cast<std::size_t>(0 * n + p)];
        Var ux = vars[static_cast<std::size_t>(1 * n + p)];
        Var ut = vars[static_cast<std::size_t>(2 * n + p)];
        Var uxx = vars[static_cast<std::size_t>(3 * n + p)];
        Var logistic = t.mul(u, t.axpb(u, -1.0, 1.0));
        Var r = t.add(ut, t.axpb(ux, beta, 0.0));
        r = t.add(r, t.axpb(uxx, -nu, 0.0));
        r = t.sub(r, t.axpb(logistic, rho, 0.0));
        rs.push_back(r);
        us.push_back(u);
    }
    return t.add(t.mean_sq(rs), t.mean_sq(us));
}

double eval_loss(const P2innModel& m, ParamMap& pm, std::span<const double> xs,
                 std::span<const double> ts, std::span<const double> mu) {
    Tape tape;
    tape.reset(static_cast<int>(pm.n_slots));
    std::vector<Var> vars;
    model_forward_jets(m, xs, ts, mu, JetLayout::cdr1d(), &tape, &vars);
    Var loss = jet_loss(tape, vars, static_cast<int>(xs.size()), 1.3, 0.4, 2.0);
    return tape.value(loss);
}

void check_gradient_fd(P2innModel& m, ParamMap& pm, int n_points, double tol) {
    Rng rng(4242);
    std::vector<double> xs(static_cast<std::size_t>(n_points)), ts(xs.size());
    for (auto& x : xs) x = rng.uniform(0.5, 5.5);
    for (auto& t : ts) t = rng.uniform(0.05, 0.95);
    std::vector<double> mu(static_cast<std::size_t>(m.cfg.mu_dim), 1.2);

    Tape tape;
    tape.reset(static_cast<int>(pm.n_slots));
    std::vector<Var> vars;
    model_forward_jets(m, xs, ts, mu, JetLayout::cdr1d(), &tape, &vars);
    Var loss = jet_loss(tape, vars, n_points, 1.3, 0.4, 2.0);
    std::vector<double> grad(static_cast<std::size_t>(pm.n_slots));
    tape.backward(loss, grad);

    const double h = 1e-5;
    double worst = 0.0;
    for (long s = 0; s < pm.n_slots; ++s) {
        double& p = slot_ref(pm, s);
        const double save = p;
        p = save + h;
        const double lp = eval_loss(m, pm, xs, ts, mu);
        p = save - h;
        const double lm = eval_loss(m, pm, xs, ts, mu);
        p = save;
        const double fd = (lp - lm) / (2.0 * h);
        const double g = grad[static_cast<std::size_t>(s)];
        if (std::abs(g) < 1e-8 && std::abs(fd) < 1e-6) continue;
        const double rel = std::abs(g - fd) / std::max({std::abs(g), std::abs(fd), 1e-8});
        worst = std::max(worst, rel);
    }
    CHECK(worst <= tol);
}

} // namespace

TEST_CASE("decoder input width is the latent concatenation") {
    ArchConfig cfg;
    cfg.coord_width = 8;
    cfg.param_width = 8;
    cfg.mu_dim = 3;
    P2innModel m = build_p2inn(cfg);
    CHECK(m.decoder.layers.front().in_dim == 16);
    CHECK(m.decoder.layers.back().out_dim == 1);
}

TEST_CASE("same seed twice gives bit-identical weights") {
    ArchConfig cfg = small_cfg();
    P2innModel a = build_p2inn(cfg);
    P2innModel b = build_p2inn(cfg);
    for (std::size_t i = 0; i < a.decoder.layers.size(); ++i)
        CHECK(a.decoder.layers[i].weight.data == b.decoder.layers[i].weight.data);
    CHECK(a.coord_enc.layers[0].weight.data == b.coord_enc.layers[0].weight.data);
}

TEST_CASE("desk architecture parameter count matches the hand sum") {
    ArchConfig cfg; // defaults: 2x32 encoders, decoder 64-50-50-50-1, mu_dim 3
    P2innModel m = build_p2inn(cfg);
    long expect = 0;
    expect += 2 * 32 + 32 + 32 * 32 + 32;       // coord encoder
    expect += 3 * 32 + 32 + 32 * 32 + 32;       // param encoder
    expect += 64 * 50 + 50;                     // decoder in
    expect += 2 * (50 * 50 + 50);               // decoder intermediates
    expect += 50 * 1 + 1;                       // decoder out
    CHECK(model_total_params(m) == expect);
}

TEST_CASE("alternate architecture reproduces a 76.9K total") {
    ArchConfig cfg;
    cfg.mu_dim = 3;
    cfg.coord_width = 64;
    cfg.coord_depth = 2;
    cfg.param_width = 64;
    cfg.param_depth = 2;
    cfg.decoder_width = 104;
    cfg.decoder_depth = 7;
    P2innModel m = build_p2inn(cfg);
    CHECK(model_total_params(m) == 76889);
}

TEST_CASE("forward_u is finite and consistent with the jet value") {
    P2innModel m = build_p2inn(small_cfg());
    Rng rng(1);
    std::vector<double> mu{1.0, 2.0};
    for (int i = 0; i < 100; ++i) {
        const double x = rng.uniform(0.0, 6.28);
        const double t = rng.uniform(0.0, 1.0);
        const double u = forward_u(m, x, t, mu);
        CHECK(std::isfinite(u));
        Jet1D j = model_forward_jet(m, x, t, mu);
        CHECK(u == Catch::Approx(j.u).margin(1e-14));
    }
}

TEST_CASE("zeroed final layer yields a constant model") {
    P2innModel m = build_p2inn(small_cfg());
    LayerSpec& last = m.decoder.layers.back();
    for (double& v : last.weight.data) v = 0.0;
    last.bias[0] = 0.625;
    std::vector<double> mu{0.5, 0.5};
    Rng rng(2);
    for (int i = 0; i < 20; ++i)
        CHECK(forward_u(m, rng.uniform(0, 6), rng.uniform(0, 1), mu) == Catch::Approx(0.625).margin(1e-15));
}

TEST_CASE("attach_adapters wires intermediate decoder layers") {
    ArchConfig cfg; // decoder depth 4, width 50
    P2innModel m = build_p2inn(cfg);
    attach_adapters(m, AdapterKind::mode, 4);

    CHECK_FALSE(m.decoder.layers[0].adapter.has_value());
    CHECK(m.decoder.layers[1].adapter.has_value());
    CHECK(m.decoder.layers[2].adapter.has_value());
    CHECK_FALSE(m.decoder.layers[3].adapter.has_value());
    for (const LayerSpec& l : m.decoder.layers) CHECK(l.frozen);

    CHECK(model_trainable_count(m) == 2 * (16 + 1 + 50));
    CHECK(model_trainable_count(m) == 134);
}

TEST_CASE("full and bias-only trainable counts") {
    ArchConfig cfg;
    P2innModel m = build_p2inn(cfg);
    attach_adapters(m, AdapterKind::full, 0);
    CHECK(model_trainable_count(m) == subnet_param_count(m.decoder));

    P2innModel m2 = build_p2inn(cfg);
    attach_adapters(m2, AdapterKind::bias_only, 0);
    CHECK(model_trainable_count(m2) == 2 * 50);
}

TEST_CASE("rank above the layer limit is rejected") {
    P2innModel m = build_p2inn(small_cfg()); // decoder width 8
    CHECK_THROWS_AS(attach_adapters(m, AdapterKind::mode, 9), std::invalid_argument);
}

TEST_CASE("attaching mode adapters leaves the model function unchanged") {
    P2innModel m = build_p2inn(small_cfg());
    P2innModel before = m;
    attach_adapters(m, AdapterKind::mode, 3);

    Rng rng(33);
    std::vector<double> mu{0.7, 1.4};
    double worst = 0.0;
    for (int i = 0; i < 1000; ++i) {
        const double x = rng.uniform(0.0, 6.28);
        const double t = rng.uniform(0.0, 1.0);
        worst = std::max(worst, std::abs(forward_u(m, x, t, mu) - forward_u(before, x, t, mu)));
    }
    CHECK(worst <= 1e-12);
}

TEST_CASE("finetune map only exposes adapter parameters") {
    P2innModel m = build_p2inn(small_cfg());
    attach_adapters(m, AdapterKind::mode, 2);
    ParamMap pm = param_map_finetune(m);
    CHECK(pm.n_slots == 2 * (4 + 1 + 8));

    // snapshot frozen state, poke every trainable slot, verify only adapters moved
    P2innModel snapshot = m;
    for (ParamSegment& s : pm.segs)
        for (long i = 0; i < s.len; ++i) s.data[i] += 0.5;
    for (std::size_t li = 0; li < m.decoder.layers.size(); ++li) {
        CHECK(m.decoder.layers[li].weight.data == snapshot.decoder.layers[li].weight.data);
        CHECK(m.decoder.layers[li].bias == snapshot.decoder.layers[li].bias);
    }
    for (std::size_t li = 0; li < m.coord_enc.layers.size(); ++li)
        CHECK(m.coord_enc.layers[li].weight.data == snapshot.coord_enc.layers[li].weight.data);
    const ModeParams& p1 = std::get<ModeParams>(m.decoder.layers[1].adapter->params);
    CHECK(p1.tau == 1.5);
}

TEST_CASE("gradients match finite differences for the pre-training scope") {
    P2innModel m = build_p2inn(small_cfg());
    ParamMap pm = param_map_all(m);
    check_gradient_fd(m, pm, 6, 1e-5);
}

TEST_CASE("gradients match finite differences for every adapter kind") {
    for (AdapterKind kind : {AdapterKind::mode, AdapterKind::svd_diag, AdapterKind::lora,
                             AdapterKind::ia3, AdapterKind::bias_only, AdapterKind::full}) {
        CAPTURE(adapter_kind_name(kind));
        P2innModel m = build_p2inn(small_cfg());
        attach_adapters(m, kind, 3, /*seed=*/11);
        if (kind == AdapterKind::mode) {
            // move off the exact-recovery point so all partials are generic
            ModeParams& p = std::get<ModeParams>(m.decoder.layers[1].adapter->params);
            Rng rng(55);
            for (double& v : p.phi.data) v = 0.3 * rng.normal();
            p.tau = 0.8;
            for (double& v : p.delta_b) v = 0.1 * rng.normal();
        }
        if (kind == AdapterKind::lora) {
            LoraParams& p = std::get<LoraParams>(m.decoder.layers[2].adapter->params);
            Rng rng(56);
            for (double& v : p.b.data) v = 0.2 * rng.normal();
        }
        ParamMap pm = param_map_finetune(m);
        REQUIRE(pm.n_slots > 0);
        check_gradient_fd(m, pm, 5, 1e-5);
    }
}

TEST_CASE("checkpoint round-trips bit-exactly") {
    namespace fs = std::filesystem;
    const fs::path path = fs::temp_directory_path() / "modepinn_ckpt_test.bin";

    P2innModel m = build_p2inn(small_cfg());
    attach_adapters(m, AdapterKind::mode, 3);
    ModeParams& p = std::get<ModeParams>(m.decoder.layers[1].adapter->params);
    p.tau = 0.731;
    p.phi(0, 1) = -0.25;

    save_checkpoint(m, path.string());
    P2innModel r = load_checkpoint(path.string());

    CHECK(r.cfg.mu_dim == m.cfg.mu_dim);
    for (std::size_t i = 0; i < m.decoder.layers.size(); ++i) {
        CHECK(r.decoder.layers[i].weight.data == m.decoder.layers[i].weight.data);
        CHECK(r.decoder.layers[i].bias == m.decoder.layers[i].bias);
    }
    const ModeParams& rp = std::get<ModeParams>(r.decoder.layers[1].adapter->params);
    CHECK(rp.tau == 0.731);
    CHECK(rp.phi.data == p.phi.data);
    CHECK(rp.factors.u_k.data == p.factors.u_k.data);

    std::vector<double> mu{0.3, 0.9};
    CHECK(forward_u(r, 1.0, 0.5, mu) == forward_u(m, 1.0, 0.5, mu));
    fs::remove(path);
}

TEST_CASE("mu dimension mismatch is reported") {
    P2innModel m = build_p2inn(small_cfg());
    std::vector<double> mu{1.0, 2.0, 3.0};
    CHECK_THROWS_AS(forward_u(m, 0.1, 0.1, mu), std::invalid_argument);
}
