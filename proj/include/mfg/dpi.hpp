#pragma once

#include <cmath>
#include <cstdint>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "mfg/adam.hpp"
#include "mfg/error.hpp"
#include "mfg/grid.hpp"
#include "mfg/metrics.hpp"
#include "mfg/net.hpp"
#include "mfg/problem.hpp"

namespace mfg {

/// Deterministic seed mixing for deriving per-network seeds from one master.
inline std::uint64_t splitmix64(std::uint64_t x) {
    x += 0x9e3779b97f4a7c15ULL;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
    return x ^ (x >> 31);
}

struct SampleRng {
    std::mt19937_64 gen;
    explicit SampleRng(std::uint64_t seed) : gen(seed) {}
    double next() { return uniform01(gen); }
};

/// Uniform (t, x) samples on [0,T] x Omega.
inline Batch sample_interior(int B, const MFGProblem& pb, SampleRng& rng) {
    Batch b;
    b.count = B;
    b.dim = pb.d;
    b.t.resize(B);
    b.x.resize(static_cast<std::size_t>(B) * pb.d);
    for (int i = 0; i < B; ++i) {
        b.t[i] = pb.T * rng.next();
        for (int k = 0; k < pb.d; ++k)
            b.x[static_cast<std::size_t>(i) * pb.d + k] = pb.lo + (pb.hi - pb.lo) * rng.next();
    }
    return b;
}

/// Uniform spatial samples on Omega (no time coordinate; callers supply one).
inline Batch sample_spatial(int S, const MFGProblem& pb, SampleRng& rng) {
    Batch b;
    b.count = S;
    b.dim = pb.d;
    b.x.resize(static_cast<std::size_t>(S) * pb.d);
    for (int i = 0; i < S; ++i)
        for (int k = 0; k < pb.d; ++k)
            b.x[static_cast<std::size_t>(i) * pb.d + k] = pb.lo + (pb.hi - pb.lo) * rng.next();
    return b;
}

struct TrainConfig {
    int interior_batch = 50;    // B
    int boundary_batch = 50;    // S
    int outer_iters = 20000;    // K
    int inner_steps = 1;        // Adam steps per stage per outer iteration
    double lr = 1e-4;
    double weight_decay = 1e-3;
    std::uint64_t seed = 1;     // master seed: init + sampling streams derive from it
    int eval_every = 100;
    int threads = 1;
    NetworkSpec density_spec, value_spec, policy_spec;  // N_theta, N_omega, N_tau
};

/// The three trained networks with their optimizer states.
struct DPIState {
    NetworkSpec density_spec, value_spec, policy_spec;
    std::vector<double> density_params, value_params, policy_params;
    AdamState density_adam, value_adam, policy_adam;
};

/// Per-iteration losses plus sparse evaluation rows (every eval_every
/// iterations) of distances to the configured reference.  Entries of the
/// sparse series may be NaN when a metric does not apply.
struct ConvergenceHistory {
    std::vector<double> loss_fp, loss_hjb, loss_policy;
    std::vector<long> eval_iters;
    std::vector<double> linf_rho, linf_phi, linf_q;
    std::vector<double> relerr_rho, relerr_phi;
};

/// What to compare against during training.
struct DPIReference {
    enum class Kind { None, Analytic, FixedPoint };
    Kind kind = Kind::None;
    SpaceTimeGrid eval_grid;          // Analytic: evaluation grid for errors
    const Solution* fd = nullptr;     // FixedPoint: benchmark fields (own grid)
};

namespace detail {

/// Per-thread workspaces for evaluating the frozen networks inside a stage.
struct StageCtx {
    JetWorkspace rho_ws, phi_ws, q_ws;
};

} // namespace detail

/// Mean squared residual of the continuity equation over the interior batch
/// (the divergence expanded as grad(rho).q + rho div(q) using both networks'
/// jets) plus the mean squared initial-condition mismatch at t=0.  When
/// `grad_density` is non-empty it receives the exact gradient with respect to
/// the density network's parameters.
inline double loss_fp(const MFGProblem& pb, const DPIState& st, const Batch& interior,
                      const Batch& initial, std::span<double> grad_density = {}, int threads = 1) {
    const int d = pb.d;
    std::fill(grad_density.begin(), grad_density.end(), 0.0);
    std::vector<detail::StageCtx> ctx(std::max(1, threads));
    const double wB = interior.count > 0 ? 1.0 / interior.count : 0.0;
    const double wS = initial.count > 0 ? 1.0 / initial.count : 0.0;

    double total = loss_and_param_grad(
        st.density_spec, st.density_params, interior, 0.0, 2,
        [&](int thread, int i, const JetView& rho, JetSeed& seed) {
            JetView q = jet_forward(st.policy_spec, st.policy_params, interior.t[i],
                                    interior.point(i), 1, ctx[thread].q_ws);
            double divq = 0.0;
            for (int k = 0; k < d; ++k) divq += q.grad[static_cast<std::size_t>(k) * d + k];
            double adv = 0.0;
            for (int k = 0; k < d; ++k) adv += rho.grad[k] * q.value[k];
            double r = rho.dt[0] - pb.nu * rho.lap[0] - adv - rho.value[0] * divq;
            double w = 2.0 * r * wB;
            seed.dt[0] = w;
            seed.lap[0] = -pb.nu * w;
            for (int k = 0; k < d; ++k) seed.grad[k] = -w * q.value[k];
            seed.value[0] = -w * divq;
            return r * r * wB;
        },
        grad_density, threads);

    total += loss_and_param_grad(
        st.density_spec, st.density_params, initial, 0.0, 0,
        [&](int /*thread*/, int i, const JetView& rho, JetSeed& seed) {
            double r = rho.value[0] - initial_density(pb, initial.point(i));
            seed.value[0] = 2.0 * r * wS;
            return r * r * wS;
        },
        grad_density, threads);
    return total;
}

/// Mean squared residual of the value equation over the interior batch plus
/// the mean squared terminal-condition mismatch at t=T.  The interior
/// residual is the (negated) linearised value equation of policy iteration,
///   d_t phi + nu Lap(phi) - q . grad(phi) + L(x, rho, q),
/// the same operator the grid solver discretises, so both solvers drive
/// toward the same value function for every coupling strength.  Gradient
/// (optional) is with respect to the value network only; density and policy
/// are frozen.
inline double loss_hjb(const MFGProblem& pb, const DPIState& st, const Batch& interior,
                       const Batch& terminal, std::span<double> grad_value = {}, int threads = 1) {
    const int d = pb.d;
    std::fill(grad_value.begin(), grad_value.end(), 0.0);
    std::vector<detail::StageCtx> ctx(std::max(1, threads));
    const double wB = interior.count > 0 ? 1.0 / interior.count : 0.0;
    const double wS = terminal.count > 0 ? 1.0 / terminal.count : 0.0;

    double total = loss_and_param_grad(
        st.value_spec, st.value_params, interior, 0.0, 2,
        [&](int thread, int i, const JetView& phi, JetSeed& seed) {
            detail::StageCtx& c = ctx[thread];
            auto x = interior.point(i);
            JetView rho = jet_forward(st.density_spec, st.density_params, interior.t[i], x, 0,
                                      c.rho_ws);
            JetView q = jet_forward(st.policy_spec, st.policy_params, interior.t[i], x, 0, c.q_ws);
            double adv = 0.0;
            for (int k = 0; k < d; ++k) adv += q.value[k] * phi.grad[k];
            double r = phi.dt[0] + pb.nu * phi.lap[0] - adv + lagrangian(pb, x, rho.value[0], q.value);
            double w = 2.0 * r * wB;
            seed.dt[0] = w;
            seed.lap[0] = pb.nu * w;
            for (int k = 0; k < d; ++k) seed.grad[k] = -w * q.value[k];
            return r * r * wB;
        },
        grad_value, threads);

    total += loss_and_param_grad(
        st.value_spec, st.value_params, terminal, pb.T, 0,
        [&](int thread, int i, const JetView& phi, JetSeed& seed) {
            detail::StageCtx& c = ctx[thread];
            auto x = terminal.point(i);
            JetView rho = jet_forward(st.density_spec, st.density_params, pb.T, x, 0, c.rho_ws);
            double r = phi.value[0] - terminal_cost(pb, x, rho.value[0]);
            seed.value[0] = 2.0 * r * wS;
            return r * r * wS;
        },
        grad_value, threads);
    return total;
}

/// Mean squared Legendre-duality gap |L(x,rho,q) - q.grad(phi)|^2 plus the
/// mean squared distance of q to the closed-form argmax policy.  Gradient
/// (optional) is with respect to the policy network only.
inline double loss_policy(const MFGProblem& pb, const DPIState& st, const Batch& interior,
                          std::span<double> grad_policy = {}, int threads = 1) {
    const int d = pb.d;
    std::fill(grad_policy.begin(), grad_policy.end(), 0.0);
    std::vector<detail::StageCtx> ctx(std::max(1, threads));
    const double wB = interior.count > 0 ? 1.0 / interior.count : 0.0;

    return loss_and_param_grad(
        st.policy_spec, st.policy_params, interior, 0.0, 0,
        [&](int thread, int i, const JetView& q, JetSeed& seed) {
            detail::StageCtx& c = ctx[thread];
            auto x = interior.point(i);
            JetView rho = jet_forward(st.density_spec, st.density_params, interior.t[i], x, 0,
                                      c.rho_ws);
            JetView phi = jet_forward(st.value_spec, st.value_params, interior.t[i], x, 1,
                                      c.phi_ws);
            double L = lagrangian(pb, x, rho.value[0], q.value);
            double adv = 0.0;
            for (int k = 0; k < d; ++k) adv += q.value[k] * phi.grad[k];
            double r1 = L - adv;
            std::vector<double> tgt(d), dLdq(d);
            optimal_policy(pb, x, rho.value[0], phi.grad, tgt);
            lagrangian_grad_policy(pb, rho.value[0], q.value, dLdq);
            double c2 = 0.0;
            for (int k = 0; k < d; ++k) {
                double r2 = q.value[k] - tgt[k];
                c2 += r2 * r2;
                seed.value[k] = 2.0 * wB * (r1 * (dLdq[k] - phi.grad[k]) + r2);
            }
            return (r1 * r1 + c2) * wB;
        },
        grad_policy, threads);
}

/// Evaluates the three networks on every node of a grid.
inline Solution sample_networks(const DPIState& st, const SpaceTimeGrid& g) {
    Solution s;
    s.rho = GridField(g, 1);
    s.phi = GridField(g, 1);
    s.q = GridField(g, g.d);
    JetWorkspace wr, wp, wq;
    std::vector<double> x(g.d), qv(g.d);
    for (int n = 0; n <= g.N; ++n) {
        double t = g.time_node(n);
        for (std::int64_t i = 0; i < g.space_nodes(); ++i) {
            node_coords(g, i, x);
            JetView vr = jet_forward(st.density_spec, st.density_params, t, x, 0, wr);
            s.rho(n, i) = vr.value[0];
            JetView vp = jet_forward(st.value_spec, st.value_params, t, x, 0, wp);
            s.phi(n, i) = vp.value[0];
            JetView vq = jet_forward(st.policy_spec, st.policy_params, t, x, 0, wq);
            for (int k = 0; k < g.d; ++k) s.q(n, i, k) = vq.value[k];
        }
    }
    return s;
}

/// Closed-form SeparableLQ solution sampled on a grid (density, value, and
/// the analytic feedback policy alpha*x).
inline Solution sample_analytic(const MFGProblem& pb, const SpaceTimeGrid& g) {
    AnalyticParams ap = analytic_params(pb);
    Solution s;
    s.rho = GridField(g, 1);
    s.phi = GridField(g, 1);
    s.q = GridField(g, g.d);
    std::vector<double> x(g.d), qv(g.d);
    for (int n = 0; n <= g.N; ++n) {
        double t = g.time_node(n);
        for (std::int64_t i = 0; i < g.space_nodes(); ++i) {
            node_coords(g, i, x);
            s.rho(n, i) = analytic_rho(pb, ap, t, x);
            s.phi(n, i) = analytic_phi(pb, ap, t, x);
            analytic_policy(pb, ap, x, qv);
            for (int k = 0; k < g.d; ++k) s.q(n, i, k) = qv[k];
        }
    }
    return s;
}

inline DPIState init_dpi_state(const TrainConfig& cfg) {
    DPIState st;
    st.density_spec = cfg.density_spec;
    st.value_spec = cfg.value_spec;
    st.policy_spec = cfg.policy_spec;
    st.density_params = init_network(cfg.density_spec, splitmix64(cfg.seed ^ 0x11));
    st.value_params = init_network(cfg.value_spec, splitmix64(cfg.seed ^ 0x22));
    st.policy_params = init_network(cfg.policy_spec, splitmix64(cfg.seed ^ 0x33));
    st.density_adam = AdamState(st.density_params.size());
    st.value_adam = AdamState(st.value_params.size());
    st.policy_adam = AdamState(st.policy_params.size());
    return st;
}

/// Trains the three networks by sequential stage updates: per outer
/// iteration, `inner_steps` Adam steps on the continuity loss (density net
/// only), then on the value loss with the fresh density (value net only),
/// then on the policy loss with the fresh density and value (policy net
/// only).  Each inner step draws fresh batches from one deterministic
/// sampling stream.  Aborts with stage and iteration context on non-finite
/// losses.
inline std::pair<DPIState, ConvergenceHistory> dpi_train(const MFGProblem& pb,
                                                         const TrainConfig& cfg,
                                                         const DPIReference& ref = {}) {
    if (cfg.density_spec.input_dim != 1 + pb.d || cfg.value_spec.input_dim != 1 + pb.d ||
        cfg.policy_spec.input_dim != 1 + pb.d)
        throw std::invalid_argument("dpi_train: network input_dim must be 1 + d");
    if (cfg.density_spec.output_dim != 1 || cfg.value_spec.output_dim != 1 ||
        cfg.policy_spec.output_dim != pb.d)
        throw std::invalid_argument("dpi_train: network output dims must be (1, 1, d)");

    DPIState st = init_dpi_state(cfg);
    ConvergenceHistory hist;
    SampleRng rng(splitmix64(cfg.seed ^ 0x44));

    // reference fields, sampled once
    Solution ref_fields;
    const Solution* ref_ptr = nullptr;
    SpaceTimeGrid eval_grid;
    if (ref.kind == DPIReference::Kind::Analytic) {
        eval_grid = ref.eval_grid;
        ref_fields = sample_analytic(pb, eval_grid);
        ref_ptr = &ref_fields;
    } else if (ref.kind == DPIReference::Kind::FixedPoint) {
        if (!ref.fd) throw std::invalid_argument("dpi_train: fixed-point reference missing fields");
        eval_grid = ref.fd->rho.grid();
        ref_ptr = ref.fd;
    }

    std::vector<double> grad_rho(st.density_params.size());
    std::vector<double> grad_phi(st.value_params.size());
    std::vector<double> grad_q(st.policy_params.size());

    auto guard = [](const char* stage, long iter, auto&& fn) {
        try {
            return fn();
        } catch (const std::exception& e) {
            throw SolverError(std::string("dpi_train: stage ") + stage + " failed at iteration " +
                              std::to_string(iter) + ": " + e.what());
        }
    };

    for (long iter = 0; iter < cfg.outer_iters; ++iter) {
        double lf = 0.0, lh = 0.0, lp = 0.0;
        for (int s = 0; s < cfg.inner_steps; ++s) {
            Batch bi = sample_interior(cfg.interior_batch, pb, rng);
            Batch bb = sample_spatial(cfg.boundary_batch, pb, rng);
            lf = guard("density", iter, [&] {
                return loss_fp(pb, st, bi, bb, grad_rho, cfg.threads);
            });
            adam_step(st.density_params, grad_rho, st.density_adam, cfg.lr, cfg.weight_decay);
        }
        for (int s = 0; s < cfg.inner_steps; ++s) {
            Batch bi = sample_interior(cfg.interior_batch, pb, rng);
            Batch bb = sample_spatial(cfg.boundary_batch, pb, rng);
            lh = guard("value", iter, [&] {
                return loss_hjb(pb, st, bi, bb, grad_phi, cfg.threads);
            });
            adam_step(st.value_params, grad_phi, st.value_adam, cfg.lr, cfg.weight_decay);
        }
        for (int s = 0; s < cfg.inner_steps; ++s) {
            Batch bi = sample_interior(cfg.interior_batch, pb, rng);
            lp = guard("policy", iter, [&] {
                return loss_policy(pb, st, bi, grad_q, cfg.threads);
            });
            adam_step(st.policy_params, grad_q, st.policy_adam, cfg.lr, cfg.weight_decay);
        }
        hist.loss_fp.push_back(lf);
        hist.loss_hjb.push_back(lh);
        hist.loss_policy.push_back(lp);

        if (ref_ptr && (iter % cfg.eval_every == 0 || iter == cfg.outer_iters - 1)) {
            Solution net = sample_networks(st, eval_grid);
            hist.eval_iters.push_back(iter);
            hist.linf_rho.push_back(linf_distance(net.rho, ref_ptr->rho));
            hist.linf_phi.push_back(linf_distance(net.phi, ref_ptr->phi));
            hist.linf_q.push_back(linf_distance(net.q, ref_ptr->q));
            // a reference field that is identically zero (the first congestion
            // example has phi* = q* = 0) carries no relative scale; leave the
            // column absent instead of dividing by zero
            auto rel_or_absent = [](const GridField& pred, const GridField& ref) {
                for (double v : ref.values())
                    if (v != 0.0) return relative_error(pred, ref);
                return std::numeric_limits<double>::quiet_NaN();
            };
            hist.relerr_rho.push_back(rel_or_absent(net.rho, ref_ptr->rho));
            hist.relerr_phi.push_back(rel_or_absent(net.phi, ref_ptr->phi));
        }
    }
    return {std::move(st), std::move(hist)};
}

/// Preset hyperparameters per benchmark family, following the published
/// experiments: one hidden layer (three Gelu layers for the traffic density
/// net), Softplus value activation, Tanh elsewhere, skip weight 0.5, and
/// batch/width/decay scaled with dimension.  The density net gets a Softplus
/// positivity head whenever its output feeds a sqrt, log, or reciprocal.
inline TrainConfig default_train_config(const MFGProblem& pb) {
    TrainConfig c;
    const int in = 1 + pb.d;
    c.lr = 1e-4;

    NetworkSpec rho, phi, q;
    rho.input_dim = phi.input_dim = q.input_dim = in;
    rho.output_dim = 1;
    phi.output_dim = 1;
    q.output_dim = pb.d;

    if (pb.kind == HamiltonianKind::TrafficFlow) {
        c.interior_batch = 50;
        c.weight_decay = 1e-3;
        rho.hidden = {100, 100, 100};
        rho.activation = Activation::Gelu;
        phi.hidden = {100};
        phi.activation = Activation::Sin;
        q.hidden = {100};
        q.activation = Activation::Sin;
    } else {
        int width, batch;
        if (pb.d <= 2) {
            width = 100;
            batch = pb.d == 1 ? 50 : 100;
        } else if (pb.d <= 50) {
            width = 200;
            batch = 500;
        } else {
            width = 256;
            batch = 1000;
        }
        if (pb.kind != HamiltonianKind::SeparableLQ) width = 100;  // congestion examples
        c.interior_batch = batch;
        c.weight_decay = pb.d == 1 && pb.kind == HamiltonianKind::SeparableLQ ? 1e-3 : 1e-4;
        rho.hidden = {width};
        rho.activation = Activation::Tanh;
        phi.hidden = {width};
        phi.activation = Activation::Softplus;
        q.hidden = {width};
        q.activation = Activation::Tanh;
    }

    bool needs_positive_rho = pb.kind == HamiltonianKind::Congestion1 ||
                              pb.kind == HamiltonianKind::Congestion2 ||
                              pb.kind == HamiltonianKind::TrafficFlow ||
                              (pb.kind == HamiltonianKind::SeparableLQ && pb.gamma != 0.0);
    rho.output_transform = needs_positive_rho ? OutputTransform::Softplus
                                              : OutputTransform::Identity;

    c.boundary_batch = c.interior_batch;
    c.density_spec = rho;
    c.value_spec = phi;
    c.policy_spec = q;
    return c;
}

} // namespace mfg
