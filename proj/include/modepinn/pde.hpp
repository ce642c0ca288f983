// SPDX-License-Identifier: Apache-2.0
//
// Problem definitions: residual operators, initial/boundary conditions,
// domains and collocation sampling.
#pragma once

#include <cmath>
#include <numbers>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "autodiff.hpp"
#include "rng.hpp"

namespace modepinn {

inline constexpr double kPi = std::numbers::pi_v<double>;
inline constexpr double kTwoPi = 2.0 * std::numbers::pi_v<double>;

/// Convection-diffusion-reaction coefficients mu = [beta, nu, rho].
struct CdrParams {
    double beta = 0.0;
    double nu = 0.0;
    double rho = 0.0;

    std::vector<double> as_vector() const { return {beta, nu, rho}; }
};

struct HelmholtzParams {
    double a = 2.5;

    std::vector<double> as_vector() const { return {a}; }
};

enum class Family { cdr, helmholtz };
enum class IcKind { gauss_wide, gauss_narrow, sinusoid };
enum class BcKind { periodic, dirichlet };

inline Family family_from_name(const std::string& s) {
    if (s == "cdr") return Family::cdr;
    if (s == "helmholtz") return Family::helmholtz;
    throw std::invalid_argument("unknown family: " + s);
}

inline IcKind ic_from_name(const std::string& s) {
    if (s == "gauss_wide") return IcKind::gauss_wide;
    if (s == "gauss_narrow") return IcKind::gauss_narrow;
    if (s == "sinusoid") return IcKind::sinusoid;
    throw std::invalid_argument("unknown initial condition: " + s);
}

inline const char* ic_name(IcKind k) {
    switch (k) {
    case IcKind::gauss_wide: return "gauss_wide";
    case IcKind::gauss_narrow: return "gauss_narrow";
    case IcKind::sinusoid: return "sinusoid";
    }
    return "?";
}

/// Equation family, domain and constraint choices for one run.
/// For the 2D family the t-axis doubles as y.
struct ProblemSpec {
    Family family = Family::cdr;
    double x_min = 0.0, x_max = kTwoPi;
    double t_min = 0.0, t_max = 1.0;
    IcKind ic = IcKind::gauss_wide;
    BcKind bc = BcKind::periodic;
    double ic_phase = 0.0; // spatial shift applied to the initial state

    static ProblemSpec cdr_default(IcKind ic = IcKind::gauss_wide) {
        ProblemSpec s;
        s.ic = ic;
        return s;
    }

    static ProblemSpec helmholtz_default() {
        ProblemSpec s;
        s.family = Family::helmholtz;
        s.x_min = -1.0;
        s.x_max = 1.0;
        s.t_min = -1.0;
        s.t_max = 1.0;
        s.bc = BcKind::dirichlet;
        return s;
    }
};

/// Sampled training points for one equation instance.
struct CollocationBatch {
    std::vector<double> xf, tf; // interior (x, t) or (x, y)
    std::vector<double> xu;     // initial-state points (t = 0), 1D families
    std::vector<double> tb;     // shared times of periodic boundary pairs
    std::vector<double> xb, yb; // Dirichlet boundary points, 2D families
    int n_f = 0, n_u = 0, n_b = 0;
};

// ---------------------------------------------------------------------------
// Residual operators

/// r = u_t + beta u_x - nu u_xx - rho u (1 - u)
inline double cdr_residual(const Jet1D& jet, const CdrParams& mu) {
    return jet.u_t + mu.beta * jet.u_x - mu.nu * jet.u_xx - mu.rho * jet.u * (1.0 - jet.u);
}

/// Manufactured solution u*(x, y) = sin(a pi x) sin(a pi y) with u = 0 on the
/// boundary of [-1, 1]^2; forcing chosen so u* solves the equation exactly.
inline double helmholtz_solution(const HelmholtzParams& p, double x, double y) {
    return std::sin(p.a * kPi * x) * std::sin(p.a * kPi * y);
}

inline double helmholtz_source(const HelmholtzParams& p, double x, double y, double kappa = 1.0) {
    return (kappa * kappa - 2.0 * p.a * p.a * kPi * kPi) * helmholtz_solution(p, x, y);
}

/// r = u_xx + u_yy + kappa^2 u - q(x, y)
inline double helmholtz_residual(const Jet2D& jet, double x, double y, const HelmholtzParams& p,
                                 double kappa = 1.0) {
    return jet.u_xx + jet.u_yy + kappa * kappa * jet.u - helmholtz_source(p, x, y, kappa);
}

// ---------------------------------------------------------------------------
// Initial conditions

/// Amplitude-1 initial profiles on [0, 2 pi]. `phase` shifts the profile by
/// a rigid translation with periodic wrap-around.
inline double initial_condition(IcKind kind, double x, double phase = 0.0) {
    double xs = x - phase;
    xs = std::fmod(xs, kTwoPi);
    if (xs < 0.0) xs += kTwoPi;
    switch (kind) {
    case IcKind::gauss_wide: {
        const double s = kPi / 2.0;
        const double d = xs - kPi;
        return std::exp(-d * d / (2.0 * s * s));
    }
    case IcKind::gauss_narrow: {
        const double s = kPi / 4.0;
        const double d = xs - kPi;
        return std::exp(-d * d / (2.0 * s * s));
    }
    case IcKind::sinusoid:
        return 1.0 + std::sin(xs);
    }
    throw std::invalid_argument("initial_condition: unknown kind");
}

// ---------------------------------------------------------------------------
// Sampling

/// Uniform i.i.d. collocation points per group; deterministic under the rng
/// seed. Periodic boundary pairs share the sampled time; Dirichlet boundary
/// points are spread over the four edges.
inline CollocationBatch sample_batch(const ProblemSpec& spec, int n_f, int n_u, int n_b, Rng& rng) {
    if (n_f < 1 || n_b < 1 || (spec.family == Family::cdr && n_u < 1))
        throw std::invalid_argument("sample_batch: counts must be >= 1");
    CollocationBatch b;
    b.n_f = n_f;
    b.n_u = (spec.family == Family::cdr) ? n_u : 0;
    b.n_b = n_b;
    b.xf.resize(static_cast<std::size_t>(n_f));
    b.tf.resize(static_cast<std::size_t>(n_f));
    for (int i = 0; i < n_f; ++i) {
        b.xf[static_cast<std::size_t>(i)] = rng.uniform(spec.x_min, spec.x_max);
        b.tf[static_cast<std::size_t>(i)] = rng.uniform(spec.t_min, spec.t_max);
    }
    if (spec.family == Family::cdr) {
        b.xu.resize(static_cast<std::size_t>(n_u));
        for (int i = 0; i < n_u; ++i) b.xu[static_cast<std::size_t>(i)] = rng.uniform(spec.x_min, spec.x_max);
        b.tb.resize(static_cast<std::size_t>(n_b));
        for (int i = 0; i < n_b; ++i) b.tb[static_cast<std::size_t>(i)] = rng.uniform(spec.t_min, spec.t_max);
    } else {
        b.xb.resize(static_cast<std::size_t>(n_b));
        b.yb.resize(static_cast<std::size_t>(n_b));
        for (int i = 0; i < n_b; ++i) {
            const int edge = static_cast<int>(rng.uniform_index(4));
            const double s = rng.uniform(spec.x_min, spec.x_max);
            switch (edge) {
            case 0: b.xb[static_cast<std::size_t>(i)] = spec.x_min; b.yb[static_cast<std::size_t>(i)] = s; break;
            case 1: b.xb[static_cast<std::size_t>(i)] = spec.x_max; b.yb[static_cast<std::size_t>(i)] = s; break;
            case 2: b.xb[static_cast<std::size_t>(i)] = s; b.yb[static_cast<std::size_t>(i)] = spec.t_min; break;
            default: b.xb[static_cast<std::size_t>(i)] = s; b.yb[static_cast<std::size_t>(i)] = spec.t_max; break;
            }
        }
    }
    return b;
}

} // namespace modepinn
