#pragma once

#include <cmath>
#include <cstdint>
#include <limits>
#include <span>
#include <stdexcept>
#include <vector>

#include "mfg/error.hpp"

namespace mfg {

/// How a field treats spatial indices outside [0, I).
///  - Periodic: indices wrap modulo I (torus geometry, used by the
///    finite-difference solvers).
///  - SampledBox: the domain is a plain box sampled by collocation points;
///    out-of-range indices are an error.
enum class Boundary { Periodic, SampledBox };

/// Uniform discretization of [0,T] x [lo,hi]^d.
///
/// Each spatial axis carries I nodes at the left cell edges,
/// x_i = lo + i*h with h = (hi-lo)/I, so under periodic boundary conditions
/// node I is identified with node 0.  Time has N+1 nodes t_n = n*dt with
/// dt = T/N.
struct SpaceTimeGrid {
    int d = 1;            // spatial dimension
    double lo = 0.0;      // per-axis lower bound
    double hi = 1.0;      // per-axis upper bound
    int I = 2;            // nodes per spatial axis
    int N = 1;            // time intervals (N+1 time nodes)
    double T = 1.0;       // horizon
    double h = 0.5;       // spatial step (hi-lo)/I
    double dt = 1.0;      // time step T/N
    Boundary boundary = Boundary::Periodic;

    std::int64_t space_nodes() const {
        std::int64_t n = 1;
        for (int k = 0; k < d; ++k) n *= I;
        return n;
    }

    /// Row-major stride of spatial axis `axis` (axis 0 varies slowest).
    std::int64_t stride(int axis) const {
        std::int64_t s = 1;
        for (int k = axis + 1; k < d; ++k) s *= I;
        return s;
    }

    double coord(int i) const { return lo + i * h; }
    double time_node(int n) const { return n * dt; }
};

/// Builds the uniform grid for a domain [lo,hi]^d with I spatial nodes per
/// axis and N time intervals.  Throws std::invalid_argument on degenerate
/// inputs (I < 2, N < 1, hi <= lo, T <= 0).
inline SpaceTimeGrid uniform_grid(int d, double lo, double hi, double T, int I,
                                  int N, Boundary boundary) {
    if (d < 1) throw std::invalid_argument("uniform_grid: dimension must be >= 1");
    if (I < 2) throw std::invalid_argument("uniform_grid: need at least two nodes per axis");
    if (N < 1) throw std::invalid_argument("uniform_grid: need at least one time interval");
    if (!(hi > lo)) throw std::invalid_argument("uniform_grid: domain bounds must satisfy lo < hi");
    if (!(T > 0.0)) throw std::invalid_argument("uniform_grid: horizon must be positive");
    SpaceTimeGrid g;
    g.d = d;
    g.lo = lo;
    g.hi = hi;
    g.I = I;
    g.N = N;
    g.T = T;
    g.h = (hi - lo) / I;
    g.dt = T / N;
    g.boundary = boundary;
    return g;
}

/// Wraps an index into [0, I) (periodic).
inline int wrap_index(int i, int I) {
    int r = i % I;
    return r < 0 ? r + I : r;
}

/// Flattens a spatial multi-index (row-major, axis 0 slowest) into a node id.
/// Periodic grids wrap each component; sampled-box grids range-check.
inline std::int64_t flatten_index(const SpaceTimeGrid& g, std::span<const int> idx) {
    if (static_cast<int>(idx.size()) != g.d)
        throw std::invalid_argument("flatten_index: index arity does not match dimension");
    std::int64_t node = 0;
    for (int k = 0; k < g.d; ++k) {
        int i = idx[k];
        if (g.boundary == Boundary::Periodic) {
            i = wrap_index(i, g.I);
        } else if (i < 0 || i >= g.I) {
            throw std::out_of_range("flatten_index: spatial index out of range on sampled-box grid");
        }
        node = node * g.I + i;
    }
    return node;
}

/// Inverse of flatten_index for in-range nodes.
inline void unflatten_index(const SpaceTimeGrid& g, std::int64_t node, std::span<int> idx) {
    for (int k = g.d - 1; k >= 0; --k) {
        idx[k] = static_cast<int>(node % g.I);
        node /= g.I;
    }
}

/// Physical coordinates of a node.
inline void node_coords(const SpaceTimeGrid& g, std::int64_t node, std::span<double> x) {
    for (int k = g.d - 1; k >= 0; --k) {
        x[k] = g.coord(static_cast<int>(node % g.I));
        node /= g.I;
    }
}

/// A scalar or vector field sampled on every node of a SpaceTimeGrid.
/// Storage is dense: time level n is a contiguous slice of
/// space_nodes() * channels values, laid out node-major (all channels of a
/// node are adjacent).
class GridField {
public:
    GridField() = default;

    GridField(const SpaceTimeGrid& grid, int channels = 1, double fill = 0.0)
        : grid_(grid), channels_(channels),
          values_(static_cast<std::size_t>((grid.N + 1) * grid.space_nodes() * channels), fill) {
        if (channels < 1) throw std::invalid_argument("GridField: channels must be >= 1");
    }

    const SpaceTimeGrid& grid() const { return grid_; }
    int channels() const { return channels_; }

    double& operator()(int n, std::int64_t node, int c = 0) {
        return values_[offset(n, node, c)];
    }
    double operator()(int n, std::int64_t node, int c = 0) const {
        return values_[offset(n, node, c)];
    }

    /// Access by multi-index with boundary handling: periodic wrap, or a
    /// range check on sampled-box grids.  The time index is always checked.
    double at(int n, std::span<const int> idx, int c = 0) const {
        check_time(n);
        return values_[offset(n, flatten_index(grid_, idx), c)];
    }

    void set(int n, std::span<const int> idx, double v, int c = 0) {
        check_time(n);
        values_[offset(n, flatten_index(grid_, idx), c)] = v;
    }

    /// One time level as a flat span (space_nodes * channels values).
    std::span<double> slice(int n) {
        check_time(n);
        std::size_t len = static_cast<std::size_t>(grid_.space_nodes()) * channels_;
        return {values_.data() + static_cast<std::size_t>(n) * len, len};
    }
    std::span<const double> slice(int n) const {
        check_time(n);
        std::size_t len = static_cast<std::size_t>(grid_.space_nodes()) * channels_;
        return {values_.data() + static_cast<std::size_t>(n) * len, len};
    }

    std::span<double> values() { return values_; }
    std::span<const double> values() const { return values_; }

    bool all_finite() const {
        for (double v : values_)
            if (!std::isfinite(v)) return false;
        return true;
    }

private:
    std::size_t offset(int n, std::int64_t node, int c) const {
        return (static_cast<std::size_t>(n) * grid_.space_nodes() + node) * channels_ + c;
    }
    void check_time(int n) const {
        if (n < 0 || n > grid_.N) throw std::out_of_range("GridField: time index out of range");
    }

    SpaceTimeGrid grid_;
    int channels_ = 1;
    std::vector<double> values_;
};

/// The triple of fields produced by a solver: density rho (1 channel),
/// value phi (1 channel) and feedback policy q (d channels).
struct Solution {
    GridField rho;
    GridField phi;
    GridField q;
};

/// Evaluates a field at an arbitrary (t, x) by multilinear interpolation:
/// linear in t (clamped to [0,T]) and per-axis linear in space.  Periodic
/// grids wrap; sampled-box grids clamp to the node range.
inline double interp_field(const GridField& f, double t, std::span<const double> x, int c = 0) {
    const SpaceTimeGrid& g = f.grid();
    if (static_cast<int>(x.size()) != g.d)
        throw std::invalid_argument("interp_field: coordinate arity does not match dimension");

    double s = t / g.dt;
    if (s < 0.0) s = 0.0;
    if (s > g.N) s = g.N;
    int n0 = static_cast<int>(std::floor(s));
    if (n0 >= g.N) n0 = g.N - 1;
    double wt = s - n0;

    // Per-axis base node and fraction.
    std::vector<int> base(g.d);
    std::vector<double> frac(g.d);
    for (int k = 0; k < g.d; ++k) {
        double u = (x[k] - g.lo) / g.h;
        int b = static_cast<int>(std::floor(u));
        double fr = u - b;
        if (g.boundary == Boundary::Periodic) {
            b = wrap_index(b, g.I);
        } else {
            if (b < 0) { b = 0; fr = 0.0; }
            if (b >= g.I - 1) { b = g.I - 2; fr = 1.0; }
        }
        base[k] = b;
        frac[k] = fr;
    }

    // Sum over the 2^d spatial corners at both bracketing time levels.
    std::vector<int> idx(g.d);
    double v0 = 0.0, v1 = 0.0;
    int corners = 1 << g.d;
    for (int m = 0; m < corners; ++m) {
        double w = 1.0;
        for (int k = 0; k < g.d; ++k) {
            int bit = (m >> k) & 1;
            idx[k] = base[k] + bit;
            w *= bit ? frac[k] : 1.0 - frac[k];
        }
        if (w == 0.0) continue;
        std::int64_t node;
        if (g.boundary == Boundary::Periodic) {
            node = 0;
            for (int k = 0; k < g.d; ++k) node = node * g.I + wrap_index(idx[k], g.I);
        } else {
            node = 0;
            for (int k = 0; k < g.d; ++k) node = node * g.I + idx[k];
        }
        v0 += w * f(n0, node, c);
        v1 += w * f(n0 + 1, node, c);
    }
    return (1.0 - wt) * v0 + wt * v1;
}

} // namespace mfg
