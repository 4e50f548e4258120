#pragma once

#include <cstdint>
#include <span>
#include <stdexcept>

#include "mfg/grid.hpp"

namespace mfg {

/// Geometry of one periodic spatial slice, extracted from a SpaceTimeGrid.
/// All stencil operators below assume periodic wrap; they are the discrete
/// building blocks of the finite-difference solvers.
struct SpatialLayout {
    int d = 1;
    int I = 2;
    double h = 0.5;
    std::int64_t nodes = 2;

    static SpatialLayout from_grid(const SpaceTimeGrid& g) {
        if (g.boundary != Boundary::Periodic)
            throw std::invalid_argument("stencil operators require a periodic grid");
        SpatialLayout l;
        l.d = g.d;
        l.I = g.I;
        l.h = g.h;
        l.nodes = g.space_nodes();
        return l;
    }

    std::int64_t stride(int axis) const {
        std::int64_t s = 1;
        for (int k = axis + 1; k < d; ++k) s *= I;
        return s;
    }

    // Periodic neighbours of `node` along the axis whose stride is s; the
    // stride alone determines the coordinate: i = (node / s) mod I.
    std::int64_t up(std::int64_t node, std::int64_t s) const {
        int i = static_cast<int>((node / s) % I);
        return i + 1 == I ? node + s * (1 - I) : node + s;
    }
    std::int64_t down(std::int64_t node, std::int64_t s) const {
        int i = static_cast<int>((node / s) % I);
        return i == 0 ? node + s * (I - 1) : node - s;
    }
};

/// Second-order centred Laplacian: out_i = sum_k (u_{i+e_k} - 2u_i + u_{i-e_k}) / h^2.
inline void discrete_laplacian(const SpatialLayout& l, std::span<const double> u,
                               std::span<double> out) {
    const double ih2 = 1.0 / (l.h * l.h);
    for (std::int64_t i = 0; i < l.nodes; ++i) out[i] = 0.0;
    for (int k = 0; k < l.d; ++k) {
        const std::int64_t s = l.stride(k);
        for (std::int64_t i = 0; i < l.nodes; ++i) {
            double uu = u[l.up(i, s)];
            double ud = u[l.down(i, s)];
            out[i] += (uu - 2.0 * u[i] + ud) * ih2;
        }
    }
}

/// Engquist-Osher divergence of the flux rho*q.  The policy q is stored
/// node-major with d interleaved channels.  Face velocities are averages of
/// the adjacent nodes.  The density equation solved here is
///   d_t rho = nu*Lap(rho) + div(rho q),
/// whose transport speed is -q, so the flux takes rho from the node the mass
/// actually flows out of (the i+1 side where qf > 0):
///   F_{i+1/2} = rho_{i+1} max(qf, 0) + rho_i min(qf, 0),
///   out_i = sum_k (F_{i+1/2} - F_{i-1/2}) / h.
/// This orientation makes the implicit step operator I - dt*div(. q) an
/// M-matrix for every dt (stable pure transport as nu -> 0) and makes the
/// divergence the exact negative adjoint of upwind_advection below.
/// For rho == const and q == const the fluxes telescope to zero, and the sum
/// of out over all nodes always vanishes exactly (discrete mass conservation).
inline void eo_divergence(const SpatialLayout& l, std::span<const double> rho,
                          std::span<const double> q, std::span<double> out) {
    for (std::int64_t i = 0; i < l.nodes; ++i) out[i] = 0.0;
    const double ih = 1.0 / l.h;
    for (int k = 0; k < l.d; ++k) {
        const std::int64_t s = l.stride(k);
        for (std::int64_t i = 0; i < l.nodes; ++i) {
            std::int64_t iu = l.up(i, s);
            std::int64_t id = l.down(i, s);
            double qr = 0.5 * (q[i * l.d + k] + q[iu * l.d + k]);
            double ql = 0.5 * (q[id * l.d + k] + q[i * l.d + k]);
            double Fr = rho[iu] * std::max(qr, 0.0) + rho[i] * std::min(qr, 0.0);
            double Fl = rho[i] * std::max(ql, 0.0) + rho[id] * std::min(ql, 0.0);
            out[i] += (Fr - Fl) * ih;
        }
    }
}

/// Upwind advection term q . D(phi) of the discrete value equation.  The
/// value equation marches backward in time with +q.D(phi) on the implicit
/// side, i.e. in remaining-time the front moves with speed +q, so the
/// domain of dependence of a node with q > 0 lies to its left: backward
/// differences where the node velocity is positive, forward where negative.
/// This is the monotone (M-matrix) choice for I + dt*q.D and the negative
/// adjoint of eo_divergence up to the face-averaging of q.
inline void upwind_advection(const SpatialLayout& l, std::span<const double> phi,
                             std::span<const double> q, std::span<double> out) {
    for (std::int64_t i = 0; i < l.nodes; ++i) out[i] = 0.0;
    const double ih = 1.0 / l.h;
    for (int k = 0; k < l.d; ++k) {
        const std::int64_t s = l.stride(k);
        for (std::int64_t i = 0; i < l.nodes; ++i) {
            double qk = q[i * l.d + k];
            double fwd = (phi[l.up(i, s)] - phi[i]) * ih;
            double bwd = (phi[i] - phi[l.down(i, s)]) * ih;
            out[i] += std::max(qk, 0.0) * bwd + std::min(qk, 0.0) * fwd;
        }
    }
}

/// Second-order centred gradient, written into a node-major policy layout.
inline void centred_gradient(const SpatialLayout& l, std::span<const double> phi,
                             std::span<double> grad_out) {
    const double i2h = 0.5 / l.h;
    for (int k = 0; k < l.d; ++k) {
        const std::int64_t s = l.stride(k);
        for (std::int64_t i = 0; i < l.nodes; ++i) {
            grad_out[i * l.d + k] = (phi[l.up(i, s)] - phi[l.down(i, s)]) * i2h;
        }
    }
}

} // namespace mfg
