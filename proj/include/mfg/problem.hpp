#pragma once

#include <cmath>
#include <numbers>
#include <span>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include "mfg/grid.hpp"

namespace mfg {

/// The four Hamiltonian families of the benchmark catalog.  All are
/// separable: H(x, rho, p) couples to the density only through scalar
/// congestion factors.
enum class HamiltonianKind { SeparableLQ, Congestion1, Congestion2, TrafficFlow };

inline const char* kind_name(HamiltonianKind k) {
    switch (k) {
        case HamiltonianKind::SeparableLQ: return "SeparableLQ";
        case HamiltonianKind::Congestion1: return "Congestion1";
        case HamiltonianKind::Congestion2: return "Congestion2";
        case HamiltonianKind::TrafficFlow: return "TrafficFlow";
    }
    return "?";
}

/// A mean-field game on [0,T] x [lo,hi]^d:
///
///   value:    -d phi/dt - nu Lap(phi) + H(x, rho, grad phi) = 0,  phi(T) = g
///   density:   d rho/dt - nu Lap(rho) - div(rho q*) = 0,          rho(0) = rho0
///
/// with q* the optimal feedback policy grad_p H.
struct MFGProblem {
    std::string name = "lq";
    HamiltonianKind kind = HamiltonianKind::SeparableLQ;
    int d = 1;
    double nu = 1.0;       // viscosity
    double gamma = 0.0;    // log-density coupling weight (SeparableLQ)
    double beta = 1.0;     // quadratic potential weight (SeparableLQ)
    double lo = -2.0;
    double hi = 2.0;
    double T = 1.0;
    Boundary boundary = Boundary::SampledBox;
    bool clamp_rho0 = false;     // traffic only: apply max(rho0, 0.05)
    double policy_clamp = 1e3;   // R in the |q| <= R policy constraint
};

/// Closed-form coefficient of the quadratic value function,
/// alpha = (-gamma + sqrt(gamma^2 + 4 nu^2 beta)) / (2 nu).
inline double alpha_coefficient(double gamma, double nu, double beta) {
    if (nu == 0.0) throw std::domain_error("alpha_coefficient: nu must be nonzero");
    double disc = gamma * gamma + 4.0 * nu * nu * beta;
    if (disc < 0.0) throw std::domain_error("alpha_coefficient: negative discriminant");
    return (-gamma + std::sqrt(disc)) / (2.0 * nu);
}

/// Coefficients of the closed-form SeparableLQ solution
/// phi = alpha ||x||^2 / 2 - c t.
struct AnalyticParams {
    double alpha = 1.0;
    double c = 0.0;
};

inline AnalyticParams analytic_params(const MFGProblem& pb) {
    if (pb.kind != HamiltonianKind::SeparableLQ)
        throw std::invalid_argument("analytic_params: closed form exists only for SeparableLQ");
    AnalyticParams p;
    p.alpha = alpha_coefficient(pb.gamma, pb.nu, pb.beta);
    p.c = pb.nu * pb.d * p.alpha
        + pb.gamma * (pb.d / 2.0) * std::log(p.alpha / (2.0 * std::numbers::pi * pb.nu));
    return p;
}

inline double sq_norm(std::span<const double> x) {
    double s = 0.0;
    for (double v : x) s += v * v;
    return s;
}

/// Closed-form value function of the SeparableLQ game.
inline double analytic_phi(const MFGProblem& pb, const AnalyticParams& p, double t,
                           std::span<const double> x) {
    if (pb.kind != HamiltonianKind::SeparableLQ)
        throw std::invalid_argument("analytic_phi: closed form exists only for SeparableLQ");
    return 0.5 * p.alpha * sq_norm(x) - p.c * t;
}

/// Closed-form density: a stationary Gaussian with variance nu/alpha.  This is
/// the residual-verified companion of analytic_phi; at alpha = 1 it reduces to
/// the standard Gaussian.
inline double analytic_rho(const MFGProblem& pb, const AnalyticParams& p, double /*t*/,
                           std::span<const double> x) {
    if (pb.kind != HamiltonianKind::SeparableLQ)
        throw std::invalid_argument("analytic_rho: closed form exists only for SeparableLQ");
    double s = p.alpha / (2.0 * std::numbers::pi * pb.nu);
    return std::pow(s, pb.d / 2.0) * std::exp(-0.5 * p.alpha * sq_norm(x) / pb.nu);
}

/// The standard Gaussian (1/2pi)^{d/2} exp(-||x||^2/2).  Coincides with
/// analytic_rho only when alpha/nu = 1; kept available because published
/// benchmarks quote it verbatim.
inline double analytic_rho_printed(const MFGProblem& pb, std::span<const double> x) {
    double s = 1.0 / (2.0 * std::numbers::pi);
    return std::pow(s, pb.d / 2.0) * std::exp(-0.5 * sq_norm(x));
}

/// Gradient of analytic_phi, i.e. the closed-form optimal policy alpha*x
/// of the SeparableLQ game.
inline void analytic_policy(const MFGProblem& pb, const AnalyticParams& p,
                            std::span<const double> x, std::span<double> q_out) {
    if (pb.kind != HamiltonianKind::SeparableLQ)
        throw std::invalid_argument("analytic_policy: closed form exists only for SeparableLQ");
    for (int k = 0; k < pb.d; ++k) q_out[k] = p.alpha * x[k];
}

namespace detail {
inline void require_density(const MFGProblem& pb, double rho) {
    switch (pb.kind) {
        case HamiltonianKind::SeparableLQ:
            if (pb.gamma != 0.0 && rho <= 0.0)
                throw std::domain_error("hamiltonian: log(rho) needs rho > 0");
            break;
        case HamiltonianKind::Congestion1:
            if (1.0 + 4.0 * rho <= 0.0)
                throw std::domain_error("hamiltonian: congestion factor 1+4rho must be positive");
            break;
        case HamiltonianKind::Congestion2:
            if (rho <= 0.0)
                throw std::domain_error("hamiltonian: sqrt(rho) needs rho > 0");
            break;
        case HamiltonianKind::TrafficFlow:
            break;
    }
}
} // namespace detail

/// H(x, rho, p) for each kind.  Sign convention: the value equation reads
/// -phi_t - nu Lap(phi) + H = 0.
inline double hamiltonian(const MFGProblem& pb, std::span<const double> x, double rho,
                          std::span<const double> p) {
    detail::require_density(pb, rho);
    double p2 = sq_norm(p);
    switch (pb.kind) {
        case HamiltonianKind::SeparableLQ: {
            // at gamma == 0 the entropy term is absent and rho may be <= 0;
            // skip the log so 0 * log(rho) cannot produce NaN
            double h = 0.5 * p2 - 0.5 * pb.beta * sq_norm(x);
            if (pb.gamma != 0.0) h -= pb.gamma * std::log(rho);
            return h;
        }
        case HamiltonianKind::Congestion1:
            return p2 / (2.0 * (1.0 + 4.0 * rho));
        case HamiltonianKind::Congestion2:
            return p2 / (2.0 * std::sqrt(rho));
        case HamiltonianKind::TrafficFlow:
            return 0.5 * p2 - (1.0 - rho) * p[0];
    }
    return 0.0;
}

/// Closed-form argmax policy q* = grad_p H(rho, p), clamped componentwise to
/// [-R, R] with R = pb.policy_clamp.  The clamp is inert for every preset.
inline void optimal_policy(const MFGProblem& pb, std::span<const double> /*x*/, double rho,
                           std::span<const double> p, std::span<double> q_out) {
    detail::require_density(pb, rho);
    const double R = pb.policy_clamp;
    for (int k = 0; k < pb.d; ++k) {
        double q = 0.0;
        switch (pb.kind) {
            case HamiltonianKind::SeparableLQ: q = p[k]; break;
            case HamiltonianKind::Congestion1: q = p[k] / (1.0 + 4.0 * rho); break;
            case HamiltonianKind::Congestion2: q = p[k] / std::sqrt(rho); break;
            case HamiltonianKind::TrafficFlow: q = p[k] - (1.0 - rho); break;
        }
        if (q > R) q = R;
        if (q < -R) q = -R;
        q_out[k] = q;
    }
}

/// Legendre transform L(x, rho, q) = sup_p { p.q - H(x, rho, p) }.
inline double lagrangian(const MFGProblem& pb, std::span<const double> x, double rho,
                         std::span<const double> q) {
    detail::require_density(pb, rho);
    double q2 = sq_norm(q);
    switch (pb.kind) {
        case HamiltonianKind::SeparableLQ: {
            double l = 0.5 * q2 + 0.5 * pb.beta * sq_norm(x);
            if (pb.gamma != 0.0) l += pb.gamma * std::log(rho);
            return l;
        }
        case HamiltonianKind::Congestion1:
            return 0.5 * (1.0 + 4.0 * rho) * q2;
        case HamiltonianKind::Congestion2:
            return 0.5 * std::sqrt(rho) * q2;
        case HamiltonianKind::TrafficFlow: {
            double u = 1.0 - rho;
            return 0.5 * q2 + 0.5 * u * u + u * q[0];
        }
    }
    return 0.0;
}

/// Gradient of the Lagrangian in q (used to seed policy-loss backpropagation).
inline void lagrangian_grad_policy(const MFGProblem& pb, double rho, std::span<const double> q,
                                   std::span<double> dq_out) {
    detail::require_density(pb, rho);
    for (int k = 0; k < pb.d; ++k) {
        switch (pb.kind) {
            case HamiltonianKind::SeparableLQ: dq_out[k] = q[k]; break;
            case HamiltonianKind::Congestion1: dq_out[k] = (1.0 + 4.0 * rho) * q[k]; break;
            case HamiltonianKind::Congestion2: dq_out[k] = std::sqrt(rho) * q[k]; break;
            case HamiltonianKind::TrafficFlow: dq_out[k] = q[k] + (1.0 - rho); break;
        }
    }
}

/// rho0 of the benchmark, evaluated exactly as published.  The traffic
/// profile dips negative near x=0.5 unless clamp_rho0 is set.
inline double initial_density(const MFGProblem& pb, std::span<const double> x) {
    switch (pb.kind) {
        case HamiltonianKind::SeparableLQ:
            return analytic_rho_printed(pb, x);
        case HamiltonianKind::Congestion1:
        case HamiltonianKind::Congestion2: {
            double s2 = 0.0;
            for (int k = 0; k < pb.d; ++k) {
                double u = x[k] - 0.25;
                s2 += u * u;
            }
            double s = 1.0 / (2.0 * std::numbers::pi);
            return std::pow(s, pb.d / 2.0) * std::exp(-0.5 * s2);
        }
        case HamiltonianKind::TrafficFlow: {
            double u = (x[0] - 0.5) / 0.1;
            double v = 0.05 - 0.9 * std::exp(-0.5 * u * u);
            return pb.clamp_rho0 ? std::max(v, 0.05) : v;
        }
    }
    return 0.0;
}

/// Terminal cost g(x).  The rho_T argument is accepted for signature
/// uniformity; none of the catalog's terminal costs couple to the density.
inline double terminal_cost(const MFGProblem& pb, std::span<const double> x, double /*rho_T*/ = 0.0) {
    switch (pb.kind) {
        case HamiltonianKind::SeparableLQ:
            return analytic_phi(pb, analytic_params(pb), pb.T, x);
        case HamiltonianKind::Congestion1:
            return 0.0;
        case HamiltonianKind::Congestion2: {
            double s = 0.0;
            for (int k = 0; k < pb.d; ++k) s += std::cos(2.0 * std::numbers::pi * x[k]);
            return s;
        }
        case HamiltonianKind::TrafficFlow:
            return 0.0;
    }
    return 0.0;
}

/// Preset names addressable from configs and the command line.
inline const std::vector<std::string>& problem_names() {
    static const std::vector<std::string> names = {"lq", "example1", "example2", "traffic"};
    return names;
}

/// Builds a preset.  `dim` overrides the preset's default spatial dimension
/// when positive (the traffic model is one-dimensional only).
inline MFGProblem make_problem(std::string_view name, int dim = -1) {
    MFGProblem pb;
    pb.name = std::string(name);
    if (name == "lq") {
        pb.kind = HamiltonianKind::SeparableLQ;
        pb.d = dim > 0 ? dim : 1;
        pb.nu = 1.0;
        pb.beta = 1.0;
        pb.gamma = 0.0;
        pb.lo = -2.0;
        pb.hi = 2.0;
        pb.boundary = Boundary::SampledBox;
    } else if (name == "example1") {
        pb.kind = HamiltonianKind::Congestion1;
        pb.d = dim > 0 ? dim : 2;
        pb.nu = 0.3;
        pb.lo = 0.0;
        pb.hi = 1.0;
        pb.boundary = Boundary::SampledBox;
    } else if (name == "example2") {
        pb.kind = HamiltonianKind::Congestion2;
        pb.d = dim > 0 ? dim : 2;
        pb.nu = 0.3;
        pb.lo = 0.0;
        pb.hi = 1.0;
        pb.boundary = Boundary::SampledBox;
    } else if (name == "traffic") {
        pb.kind = HamiltonianKind::TrafficFlow;
        if (dim > 1)
            throw ConfigError("make_problem: the traffic model is one-dimensional");
        pb.d = 1;
        pb.nu = 0.1;
        pb.lo = 0.0;
        pb.hi = 1.0;
        pb.boundary = Boundary::Periodic;
    } else {
        throw ConfigError("make_problem: unknown preset '" + std::string(name) + "'");
    }
    pb.T = 1.0;
    return pb;
}

} // namespace mfg
