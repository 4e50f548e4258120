#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "mfg/error.hpp"
#include "mfg/grid.hpp"
#include "mfg/linsolve.hpp"
#include "mfg/problem.hpp"
#include "mfg/stencil.hpp"

namespace mfg {

/// Knobs of the finite-difference solvers.
struct FDConfig {
    int K = 50;                    // policy-iteration sweeps
    double linear_tol = 1e-12;     // relative tolerance of the implicit solves
    int max_linear_iters = 5000;   // operator applications per implicit solve
    double fp_damping = 0.5;       // density blend factor of the fixed-point solver
    double fp_tol = 1e-8;          // fixed-point stopping threshold (L-inf density change)
    int fp_max_iters = 500;
};

/// Per-sweep convergence record of run_policy_iteration.  The change_* series
/// hold L-inf distances between consecutive iterates; when a reference
/// solution is supplied the ref_* series hold L-inf distances to it.
struct PIHistory {
    std::vector<double> change_rho, change_phi, change_q;
    std::vector<double> ref_rho, ref_phi, ref_q;
};

namespace detail {

inline double linf_diff(std::span<const double> a, std::span<const double> b) {
    double m = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, std::abs(a[i] - b[i]));
    return m;
}

inline double linf_field_diff(const GridField& a, const GridField& b) {
    return linf_diff(a.values(), b.values());
}

/// Coordinates of every spatial node, node-major (nodes x d).
inline std::vector<double> all_coords(const SpaceTimeGrid& g) {
    std::vector<double> xs(static_cast<std::size_t>(g.space_nodes()) * g.d);
    for (std::int64_t i = 0; i < g.space_nodes(); ++i)
        node_coords(g, i, std::span<double>(xs.data() + i * g.d, g.d));
    return xs;
}

} // namespace detail

/// Samples rho0 onto time level 0 of a density field.
inline void sample_initial_density(const MFGProblem& pb, const SpaceTimeGrid& g,
                                   std::span<double> rho0_out) {
    std::vector<double> x(g.d);
    for (std::int64_t i = 0; i < g.space_nodes(); ++i) {
        node_coords(g, i, x);
        rho0_out[i] = initial_density(pb, x);
    }
}

/// Samples the terminal cost g(x, rho_T) onto a value slice.
inline void sample_terminal_cost(const MFGProblem& pb, const SpaceTimeGrid& g,
                                 std::span<const double> rho_T, std::span<double> phi_T_out) {
    std::vector<double> x(g.d);
    for (std::int64_t i = 0; i < g.space_nodes(); ++i) {
        node_coords(g, i, x);
        phi_T_out[i] = terminal_cost(pb, x, rho_T[i]);
    }
}

/// One implicit Euler step of the discrete continuity equation:
/// solves (I - dt*(nu*Lap + div_EO(. , q_next))) rho_next = rho_n.
/// Total mass is preserved up to the linear-solve tolerance because both
/// stencils telescope over the periodic grid.
inline LinearSolveReport fp_step_implicit(const MFGProblem& pb, const SpatialLayout& l, double dt,
                                          std::span<const double> rho_n,
                                          std::span<const double> q_next, const FDConfig& cfg,
                                          std::span<double> rho_next) {
    const std::size_t n = static_cast<std::size_t>(l.nodes);
    std::vector<double> lap(n), div(n);
    auto apply = [&](std::span<const double> v, std::span<double> out) {
        discrete_laplacian(l, v, lap);
        eo_divergence(l, v, q_next, div);
        for (std::size_t i = 0; i < n; ++i) out[i] = v[i] - dt * (pb.nu * lap[i] + div[i]);
    };
    std::copy(rho_n.begin(), rho_n.end(), rho_next.begin());  // warm start
    LinearSolveReport rep = bicgstab(apply, rho_n, rho_next, cfg.linear_tol, cfg.max_linear_iters);
    if (!rep.converged)
        throw SolverError("fp_step_implicit: linear solve stalled at relative residual " +
                          std::to_string(rep.rel_residual));
    return rep;
}

/// One implicit Euler step of the discrete value equation, backward in time:
/// solves (I - dt*(nu*Lap - q_n . D_upwind)) phi_n = phi_next + dt*L(x, rho_next, q_next).
/// The transport velocity is q_n; the running cost uses (rho_{n+1}, q_{n+1})
/// to match the policy-iteration scheme exactly.
inline LinearSolveReport hjb_step_implicit(const MFGProblem& pb, const SpatialLayout& l, double dt,
                                           std::span<const double> phi_next,
                                           std::span<const double> q_n,
                                           std::span<const double> rho_next,
                                           std::span<const double> q_next,
                                           std::span<const double> coords, const FDConfig& cfg,
                                           std::span<double> phi_n) {
    const std::size_t n = static_cast<std::size_t>(l.nodes);
    std::vector<double> lap(n), adv(n), rhs(n);
    for (std::size_t i = 0; i < n; ++i) {
        std::span<const double> x(coords.data() + i * l.d, l.d);
        std::span<const double> qi(q_next.data() + i * l.d, l.d);
        rhs[i] = phi_next[i] + dt * lagrangian(pb, x, rho_next[i], qi);
    }
    auto apply = [&](std::span<const double> v, std::span<double> out) {
        discrete_laplacian(l, v, lap);
        upwind_advection(l, v, q_n, adv);
        for (std::size_t i = 0; i < n; ++i) out[i] = v[i] - dt * (pb.nu * lap[i] - adv[i]);
    };
    std::copy(phi_next.begin(), phi_next.end(), phi_n.begin());  // warm start
    LinearSolveReport rep = bicgstab(apply, rhs, phi_n, cfg.linear_tol, cfg.max_linear_iters);
    if (!rep.converged)
        throw SolverError("hjb_step_implicit: linear solve stalled at relative residual " +
                          std::to_string(rep.rel_residual));
    return rep;
}

/// Feedback-policy update on one time slice: q = optimal_policy(x, rho, D_centred phi)
/// clamped componentwise to [-R, R].
inline void policy_update_fd(const MFGProblem& pb, const SpatialLayout& l,
                             std::span<const double> phi, std::span<const double> rho,
                             std::span<const double> coords, double R, std::span<double> q_out) {
    centred_gradient(l, phi, q_out);
    MFGProblem clamped = pb;
    clamped.policy_clamp = R;
    std::vector<double> p(l.d), q(l.d);
    for (std::int64_t i = 0; i < l.nodes; ++i) {
        std::span<const double> x(coords.data() + i * l.d, l.d);
        for (int k = 0; k < l.d; ++k) p[k] = q_out[i * l.d + k];
        optimal_policy(clamped, x, rho[i], p, q);
        for (int k = 0; k < l.d; ++k) q_out[i * l.d + k] = q[k];
    }
}

struct PIResult {
    Solution solution;
    PIHistory history;
};

/// Policy iteration on the full space-time grid: from the current policy q,
/// (i) march the density forward, (ii) march the value backward with the
/// policy frozen, (iii) refresh the policy from the new value; repeat K times.
/// When `reference` is supplied its fields must live on the same grid; per
/// sweep, L-inf distances to it are recorded alongside the successive changes.
inline PIResult run_policy_iteration(const MFGProblem& pb, const SpaceTimeGrid& g,
                                     const FDConfig& cfg, const GridField& q0,
                                     const Solution* reference = nullptr) {
    if (g.boundary != Boundary::Periodic)
        throw std::invalid_argument("run_policy_iteration: grid must be periodic");
    if (q0.channels() != g.d)
        throw std::invalid_argument("run_policy_iteration: q0 must have d channels");
    SpatialLayout l = SpatialLayout::from_grid(g);
    std::vector<double> coords = detail::all_coords(g);

    PIResult out;
    out.solution.rho = GridField(g, 1);
    out.solution.phi = GridField(g, 1);
    out.solution.q = q0;
    GridField& rho = out.solution.rho;
    GridField& phi = out.solution.phi;
    GridField& q = out.solution.q;

    sample_initial_density(pb, g, rho.slice(0));

    GridField prev_rho = rho, prev_phi = phi, prev_q = q;
    for (int k = 0; k < cfg.K; ++k) {
        try {
            // (i) density forward
            for (int n = 0; n < g.N; ++n)
                fp_step_implicit(pb, l, g.dt, rho.slice(n), q.slice(n + 1), cfg, rho.slice(n + 1));
            // (ii) value backward
            sample_terminal_cost(pb, g, rho.slice(g.N), phi.slice(g.N));
            for (int n = g.N - 1; n >= 0; --n)
                hjb_step_implicit(pb, l, g.dt, phi.slice(n + 1), q.slice(n), rho.slice(n + 1),
                                  q.slice(n + 1), coords, cfg, phi.slice(n));
            // (iii) policy refresh
            for (int n = 0; n <= g.N; ++n)
                policy_update_fd(pb, l, phi.slice(n), rho.slice(n), coords, pb.policy_clamp,
                                 q.slice(n));
        } catch (const SolverError& e) {
            throw SolverError("policy iteration sweep " + std::to_string(k) + ": " + e.what());
        }

        out.history.change_rho.push_back(detail::linf_field_diff(rho, prev_rho));
        out.history.change_phi.push_back(detail::linf_field_diff(phi, prev_phi));
        out.history.change_q.push_back(detail::linf_field_diff(q, prev_q));
        if (reference) {
            out.history.ref_rho.push_back(detail::linf_field_diff(rho, reference->rho));
            out.history.ref_phi.push_back(detail::linf_field_diff(phi, reference->phi));
            out.history.ref_q.push_back(detail::linf_field_diff(q, reference->q));
        }
        prev_rho = rho;
        prev_phi = phi;
        prev_q = q;
    }
    return out;
}

namespace detail {

/// Backward value sweep with the density frozen.  At each time level the
/// policy/value pair is iterated to self-consistency, so on exit
/// q_n = optimal_policy(rho_n, D phi_n) and phi satisfies the same discrete
/// system as the policy-iteration scheme.
inline void hjb_backward_pass(const MFGProblem& pb, const SpaceTimeGrid& g, const SpatialLayout& l,
                              const FDConfig& cfg, std::span<const double> coords,
                              const GridField& rho, GridField& phi, GridField& q) {
    const std::size_t nn = static_cast<std::size_t>(l.nodes);
    sample_terminal_cost(pb, g, rho.slice(g.N), phi.slice(g.N));
    policy_update_fd(pb, l, phi.slice(g.N), rho.slice(g.N), coords, pb.policy_clamp, q.slice(g.N));
    std::vector<double> phi_work(nn), phi_new(nn);
    std::vector<double> q_work(nn * l.d);
    const int max_inner = 100;
    const double inner_tol = 1e-12;
    for (int n = g.N - 1; n >= 0; --n) {
        auto src = phi.slice(n);  // warm start from the previous sweep's value
        std::copy(src.begin(), src.end(), phi_work.begin());
        for (int it = 0; it < max_inner; ++it) {
            policy_update_fd(pb, l, phi_work, rho.slice(n), coords, pb.policy_clamp, q_work);
            hjb_step_implicit(pb, l, g.dt, phi.slice(n + 1), q_work, rho.slice(n + 1),
                              q.slice(n + 1), coords, cfg, phi_new);
            double delta = linf_diff(phi_new, phi_work);
            std::swap(phi_work, phi_new);
            if (delta < inner_tol) break;
        }
        std::copy(phi_work.begin(), phi_work.end(), phi.slice(n).begin());
        policy_update_fd(pb, l, phi.slice(n), rho.slice(n), coords, pb.policy_clamp, q.slice(n));
    }
}

inline void fp_forward_pass(const MFGProblem& pb, const SpaceTimeGrid& g, const SpatialLayout& l,
                            const FDConfig& cfg, const GridField& q, GridField& rho) {
    for (int n = 0; n < g.N; ++n)
        fp_step_implicit(pb, l, g.dt, rho.slice(n), q.slice(n + 1), cfg, rho.slice(n + 1));
}

} // namespace detail

/// Damped fixed-point benchmark solver: alternate a frozen-density backward
/// value sweep with a forward density sweep, blending the density with factor
/// fp_damping, until the undamped density update moves by less than fp_tol in
/// L-inf.  A final consistency pass leaves the returned triple satisfying the
/// discrete system to solver tolerance.  When `sweep_changes` is non-null the
/// per-sweep change norms are appended to it.
inline Solution run_fixed_point(const MFGProblem& pb, const SpaceTimeGrid& g, const FDConfig& cfg,
                                std::vector<double>* sweep_changes = nullptr) {
    if (g.boundary != Boundary::Periodic)
        throw std::invalid_argument("run_fixed_point: grid must be periodic");
    SpatialLayout l = SpatialLayout::from_grid(g);
    std::vector<double> coords = detail::all_coords(g);

    Solution sol;
    sol.rho = GridField(g, 1);
    sol.phi = GridField(g, 1);
    sol.q = GridField(g, g.d);

    // start from the initial density copied across all time levels
    std::vector<double> rho0(static_cast<std::size_t>(g.space_nodes()));
    sample_initial_density(pb, g, rho0);
    for (int n = 0; n <= g.N; ++n)
        std::copy(rho0.begin(), rho0.end(), sol.rho.slice(n).begin());

    GridField rho_new = sol.rho;
    const double delta = cfg.fp_damping;
    double change = 0.0;
    for (int sweep = 0; sweep < cfg.fp_max_iters; ++sweep) {
        try {
            detail::hjb_backward_pass(pb, g, l, cfg, coords, sol.rho, sol.phi, sol.q);
            std::copy(rho0.begin(), rho0.end(), rho_new.slice(0).begin());
            detail::fp_forward_pass(pb, g, l, cfg, sol.q, rho_new);
        } catch (const SolverError& e) {
            throw SolverError("fixed-point sweep " + std::to_string(sweep) + ": " + e.what());
        }
        change = detail::linf_field_diff(rho_new, sol.rho);
        if (sweep_changes) sweep_changes->push_back(change);
        auto ra = sol.rho.values();
        auto rb = rho_new.values();
        for (std::size_t i = 0; i < ra.size(); ++i) ra[i] = (1.0 - delta) * ra[i] + delta * rb[i];
        if (change < cfg.fp_tol) {
            // consistency pass: value and policy for the final density, then
            // the density the final policy actually generates (no damping)
            detail::hjb_backward_pass(pb, g, l, cfg, coords, sol.rho, sol.phi, sol.q);
            std::copy(rho0.begin(), rho0.end(), sol.rho.slice(0).begin());
            detail::fp_forward_pass(pb, g, l, cfg, sol.q, sol.rho);
            return sol;
        }
    }
    throw SolverError("run_fixed_point: no convergence after " + std::to_string(cfg.fp_max_iters) +
                      " sweeps (last density change " + std::to_string(change) + ")");
}

} // namespace mfg
