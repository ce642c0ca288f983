// SPDX-License-Identifier: Apache-2.0
#include <catch2/catch_amalgamated.hpp>

#include <modepinn/adapters.hpp>

#include "oracles.hpp"

using namespace modepinn;

namespace {

double max_abs(std::span<const double> a, std::span<const double> b) {
    REQUIRE(a.size() == b.size());
    double m = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, std::abs(a[i] - b[i]));
    return m;
}

std::vector<double> plain_affine(const Matrix& w0, std::span<const double> b0,
                                 std::span<const double> h) {
    std::vector<double> y = matvec(w0, h);
    for (std::size_t i = 0; i < y.size(); ++i) y[i] += b0[i];
    return y;
}

void randomize_mode(ModeParams& p, Rng& rng) {
    for (double& v : p.phi.data) v = rng.uniform(-1.0, 1.0);
    p.tau = rng.uniform(-1.5, 2.5);
    for (double& v : p.delta_b) v = rng.uniform(-0.5, 0.5);
}

} // namespace

TEST_CASE("mode init reproduces the frozen affine map") {
    Rng rng(101);
    Matrix w0 = oracle::random_matrix(12, 9, rng);
    std::vector<double> b0 = oracle::random_vector(12, rng);
    ModeParams p = mode_init(w0, b0, 4);
    for (int trial = 0; trial < 100; ++trial) {
        std::vector<double> h = oracle::random_vector(9, rng);
        CHECK(max_abs(mode_forward(p, w0, b0, h), plain_affine(w0, b0, h)) <= 1e-12);
    }
}

TEST_CASE("trainable parameter counts") {
    Rng rng(5);
    Matrix w0 = oracle::random_matrix(50, 50, rng);
    std::vector<double> b0(50, 0.0);

    ModeParams mode = mode_init(w0, b0, 4);
    CHECK(param_count(AdapterParams{mode}) == 4 * 4 + 1 + 50);
    CHECK(param_count(AdapterParams{mode}) == 67);

    SvdDiagParams sd = svd_diag_init(w0, 4);
    CHECK(param_count(AdapterParams{sd}) == 4);

    LoraParams lora = lora_init(50, 50, 4, rng);
    CHECK(param_count(AdapterParams{lora}) == 4 * (50 + 50));

    CHECK(param_count(AdapterParams{ia3_init(50)}) == 50);
    CHECK(param_count(AdapterParams{bias_only_init(50)}) == 50);

    // closed forms across ranks and widths
    for (int d : {16, 50, 64})
        for (int k : {1, 2, 4, 8}) {
            CHECK(param_count_closed_form(AdapterKind::mode, d, d, k) == static_cast<long>(k) * k + 1 + d);
            CHECK(param_count_closed_form(AdapterKind::lora, d, d, k) == static_cast<long>(k) * 2 * d);
            CHECK(param_count_closed_form(AdapterKind::svd_diag, d, d, k) == k);
        }
}

TEST_CASE("efficient and two-spectrum forms agree") {
    Rng rng(222);
    for (int trial = 0; trial < 100; ++trial) {
        const int d_out = 2 + static_cast<int>(rng.uniform_index(63));
        const int d_in = 2 + static_cast<int>(rng.uniform_index(63));
        const int k = 1 + static_cast<int>(rng.uniform_index(
            static_cast<std::uint64_t>(std::min({8, d_out, d_in}))));
        Matrix w0 = oracle::random_matrix(d_out, d_in, rng);
        std::vector<double> b0 = oracle::random_vector(d_out, rng);
        ModeParams p = mode_init(w0, b0, k);
        randomize_mode(p, rng);
        std::vector<double> h = oracle::random_vector(d_in, rng);
        CHECK(max_abs(mode_forward(p, w0, b0, h), mode_forward_standard(p, w0, b0, h)) <= 1e-10);
    }
}

TEST_CASE("tau controls the residual path") {
    Rng rng(303);
    Matrix w0 = oracle::random_matrix(10, 8, rng);
    std::vector<double> b0 = oracle::random_vector(10, rng);
    ModeParams p = mode_init(w0, b0, 3);
    std::vector<double> h = oracle::random_vector(8, rng);

    SECTION("hard truncation at tau = 0") {
        p.tau = 0.0;
        Matrix w_prin = reconstruct_principal(p.factors);
        CHECK(max_abs(mode_forward(p, w0, b0, h), plain_affine(w_prin, b0, h)) <= 1e-12);
    }

    SECTION("standard form at tau = 1 is the frozen map") {
        CHECK(max_abs(mode_forward_standard(p, w0, b0, h), plain_affine(w0, b0, h)) <= 1e-10);
    }

    SECTION("tau = 2 adds the residual exactly once more") {
        p.tau = 2.0;
        Matrix w_res = subtract(w0, reconstruct_principal(p.factors));
        std::vector<double> res = matvec(w_res, h);
        std::vector<double> y = mode_forward_standard(p, w0, b0, h);
        std::vector<double> base = plain_affine(w0, b0, h);
        for (std::size_t i = 0; i < y.size(); ++i)
            CHECK(y[i] - base[i] == Catch::Approx(res[i]).margin(1e-10));
    }
}

TEST_CASE("svd_diag forward") {
    Rng rng(404);
    Matrix w0 = oracle::random_matrix(9, 7, rng);
    std::vector<double> b0 = oracle::random_vector(9, rng);
    SvdDiagParams p = svd_diag_init(w0, 3);
    std::vector<double> h = oracle::random_vector(7, rng);

    SECTION("alpha = sigma reproduces the principal map") {
        Matrix w_prin = reconstruct_principal(p.factors);
        CHECK(max_abs(svd_diag_forward(p, b0, h), plain_affine(w_prin, b0, h)) <= 1e-12);
    }

    SECTION("alpha = 0 returns the bias") {
        std::fill(p.alpha.begin(), p.alpha.end(), 0.0);
        CHECK(max_abs(svd_diag_forward(p, b0, h), b0) == 0.0);
    }

    SECTION("random alpha vs rank-1 summation oracle") {
        for (double& a : p.alpha) a = rng.uniform(-2.0, 2.0);
        std::vector<double> expect(b0.begin(), b0.end());
        for (int r = 0; r < 3; ++r) {
            double vth = 0.0;
            for (int j = 0; j < 7; ++j) vth += p.factors.v_k(j, r) * h[static_cast<std::size_t>(j)];
            for (int i = 0; i < 9; ++i)
                expect[static_cast<std::size_t>(i)] += p.alpha[static_cast<std::size_t>(r)] * p.factors.u_k(i, r) * vth;
        }
        CHECK(max_abs(svd_diag_forward(p, b0, h), expect) <= 1e-12);
    }
}

TEST_CASE("baseline forwards") {
    Rng rng(505);
    Matrix w0 = oracle::random_matrix(6, 5, rng);
    std::vector<double> b0 = oracle::random_vector(6, rng);
    std::vector<double> h = oracle::random_vector(5, rng);
    std::vector<double> base = plain_affine(w0, b0, h);

    SECTION("exact-recovery inits") {
        ModeParams mode = mode_init(w0, b0, 2);
        LoraParams lora = lora_init(6, 5, 2, rng);
        Ia3Params ia3 = ia3_init(6);
        BiasOnlyParams bias = bias_only_init(6);
        CHECK(max_abs(mode_forward(mode, w0, b0, h), base) <= 1e-12);
        CHECK(max_abs(lora_forward(lora, w0, b0, h), base) <= 1e-12);
        CHECK(max_abs(ia3_forward(ia3, w0, b0, h), base) <= 1e-12);
        CHECK(max_abs(bias_only_forward(bias, w0, b0, h), base) <= 1e-12);
    }

    SECTION("rank-1 lora with unit factors adds h_0 to output 0") {
        LoraParams lora = lora_init(6, 5, 1, rng);
        lora.a = Matrix(1, 5);
        lora.a(0, 0) = 1.0;
        lora.b = Matrix(6, 1);
        lora.b(0, 0) = 1.0;
        std::vector<double> y = lora_forward(lora, w0, b0, h);
        CHECK(y[0] == Catch::Approx(base[0] + h[0]).margin(1e-13));
        for (int i = 1; i < 6; ++i) CHECK(y[static_cast<std::size_t>(i)] == Catch::Approx(base[static_cast<std::size_t>(i)]).margin(1e-13));
    }

    SECTION("ia3 scales the frozen product") {
        Ia3Params ia3 = ia3_init(6);
        for (double& s : ia3.scale) s = rng.uniform(0.5, 1.5);
        std::vector<double> y = ia3_forward(ia3, w0, b0, h);
        std::vector<double> wh = matvec(w0, h);
        for (int i = 0; i < 6; ++i)
            CHECK(y[static_cast<std::size_t>(i)] ==
                  Catch::Approx(ia3.scale[static_cast<std::size_t>(i)] * wh[static_cast<std::size_t>(i)] + b0[static_cast<std::size_t>(i)]).margin(1e-13));
    }
}

TEST_CASE("merge_to_dense matches adapter forwards") {
    Rng rng(606);
    Matrix w0 = oracle::random_matrix(8, 7, rng);
    std::vector<double> b0 = oracle::random_vector(8, rng);

    SECTION("mode init merge returns the frozen pair") {
        ModeParams p = mode_init(w0, b0, 3);
        auto [wm, bm] = merge_to_dense(AdapterParams{p}, w0, b0);
        CHECK(max_abs(wm.data, w0.data) <= 1e-12);
        CHECK(max_abs(bm, b0) <= 1e-12);
    }

    SECTION("svd merge with alpha = 0 is the zero matrix") {
        SvdDiagParams p = svd_diag_init(w0, 3);
        std::fill(p.alpha.begin(), p.alpha.end(), 0.0);
        auto [wm, bm] = merge_to_dense(AdapterParams{p}, w0, b0);
        for (double v : wm.data) CHECK(v == 0.0);
    }

    SECTION("random merges agree with forwards on probes") {
        ModeParams mode = mode_init(w0, b0, 3);
        randomize_mode(mode, rng);
        LoraParams lora = lora_init(8, 7, 2, rng);
        for (double& v : lora.b.data) v = rng.uniform(-1, 1);
        Ia3Params ia3 = ia3_init(8);
        for (double& s : ia3.scale) s = rng.uniform(0.2, 1.8);
        BiasOnlyParams bias = bias_only_init(8);
        for (double& v : bias.delta_b) v = rng.uniform(-1, 1);

        for (const AdapterParams ap :
             {AdapterParams{mode}, AdapterParams{lora}, AdapterParams{ia3}, AdapterParams{bias}}) {
            auto [wm, bm] = merge_to_dense(ap, w0, b0);
            for (int probe = 0; probe < 50; ++probe) {
                std::vector<double> h = oracle::random_vector(7, rng);
                CHECK(max_abs(adapter_forward(ap, w0, b0, h), plain_affine(wm, bm, h)) <= 1e-10);
            }
        }
    }
}

TEST_CASE("mode subsumes diagonal rescaling") {
    Rng rng(707);
    Matrix w0 = oracle::random_matrix(12, 10, rng);
    std::vector<double> b0 = oracle::random_vector(12, rng);
    const int k = 4;

    SvdDiagParams sd = svd_diag_init(w0, k);
    for (double& a : sd.alpha) a = rng.uniform(-2.0, 2.0);

    ModeParams p = mode_init(w0, b0, k);
    p.tau = 0.0;
    for (int i = 0; i < k; ++i)
        p.phi(i, i) = sd.alpha[static_cast<std::size_t>(i)] - p.factors.sigma_k[static_cast<std::size_t>(i)];

    for (int trial = 0; trial < 50; ++trial) {
        std::vector<double> h = oracle::random_vector(10, rng);
        CHECK(max_abs(mode_forward(p, w0, b0, h), svd_diag_forward(sd, b0, h)) <= 1e-12);
    }
}

TEST_CASE("off-diagonal core entries unlock cross-modal transfer") {
    Rng rng(808);
    for (int trial = 0; trial < 10; ++trial) {
        Matrix w0 = oracle::random_matrix(10, 10, rng);
        std::vector<double> b0 = oracle::random_vector(10, rng);
        const int k = 4;
        const int i = static_cast<int>(rng.uniform_index(k));
        int j = static_cast<int>(rng.uniform_index(k));
        if (j == i) j = (j + 1) % k;

        SvdDiagParams sd = svd_diag_init(w0, k);
        std::vector<double> vj(10);
        for (int r = 0; r < 10; ++r) vj[static_cast<std::size_t>(r)] = sd.factors.v_k(r, j);

        // no diagonal rescaling reaches u_i from v_j
        for (int a_trial = 0; a_trial < 5; ++a_trial) {
            for (double& a : sd.alpha) a = rng.uniform(-3.0, 3.0);
            std::vector<double> y = svd_diag_forward(sd, b0, vj);
            double proj = 0.0;
            for (int r = 0; r < 10; ++r)
                proj += sd.factors.u_k(r, i) * (y[static_cast<std::size_t>(r)] - b0[static_cast<std::size_t>(r)]);
            CHECK(std::abs(proj) <= 1e-10);
        }

        // a single off-diagonal core entry does, with unit gain
        ModeParams p = mode_init(w0, b0, k);
        p.tau = 0.0;
        p.phi(i, j) = 1.0;
        std::vector<double> y = mode_forward(p, w0, b0, vj);
        double proj = 0.0;
        for (int r = 0; r < 10; ++r)
            proj += p.factors.u_k(r, i) * (y[static_cast<std::size_t>(r)] - b0[static_cast<std::size_t>(r)]);
        CHECK(proj == Catch::Approx(1.0).margin(1e-10));
    }
}

TEST_CASE("dimension mismatches are rejected") {
    Rng rng(909);
    Matrix w0 = oracle::random_matrix(6, 5, rng);
    std::vector<double> b0(6, 0.0);
    ModeParams p = mode_init(w0, b0, 2);
    std::vector<double> bad(4, 0.0);
    CHECK_THROWS_AS(mode_forward(p, w0, b0, bad), std::invalid_argument);
    CHECK_THROWS_AS(mode_init(w0, std::vector<double>(5, 0.0), 2), std::invalid_argument);
    CHECK_THROWS_AS(adapter_kind_from_name("bogus"), std::invalid_argument);
}
