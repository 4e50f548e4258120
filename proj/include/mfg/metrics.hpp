#pragma once

#include <cmath>
#include <cstddef>
#include <functional>
#include <span>
#include <stdexcept>
#include <vector>

#include "mfg/grid.hpp"

namespace mfg {

/// Relative-error summary on an evaluation grid.
struct ErrorReport {
    double rel_err_rho = 0.0;
    double rel_err_phi = 0.0;
    SpaceTimeGrid eval_grid;
};

/// || pred - ref ||_2 / || ref ||_2 over flattened samples; with `max_norm`
/// set, the same ratio in the max norm.  Throws when the reference is
/// identically zero.
inline double relative_error(std::span<const double> pred, std::span<const double> ref,
                             bool max_norm = false) {
    if (pred.size() != ref.size())
        throw std::invalid_argument("relative_error: sample counts differ");
    if (max_norm) {
        double num = 0.0, den = 0.0;
        for (std::size_t i = 0; i < pred.size(); ++i) {
            num = std::max(num, std::abs(pred[i] - ref[i]));
            den = std::max(den, std::abs(ref[i]));
        }
        if (den == 0.0) throw std::invalid_argument("relative_error: zero reference norm");
        return num / den;
    }
    double num = 0.0, den = 0.0;
    for (std::size_t i = 0; i < pred.size(); ++i) {
        double dd = pred[i] - ref[i];
        num += dd * dd;
        den += ref[i] * ref[i];
    }
    if (den == 0.0) throw std::invalid_argument("relative_error: zero reference norm");
    return std::sqrt(num / den);
}

/// Samples a pointwise evaluator f(t, x, channel) on every node of a grid.
inline GridField sample_on_grid(const SpaceTimeGrid& g, int channels,
                                const std::function<double(double, std::span<const double>, int)>& f) {
    GridField out(g, channels);
    std::vector<double> x(g.d);
    for (int n = 0; n <= g.N; ++n) {
        double t = g.time_node(n);
        for (std::int64_t i = 0; i < g.space_nodes(); ++i) {
            node_coords(g, i, x);
            for (int c = 0; c < channels; ++c) out(n, i, c) = f(t, x, c);
        }
    }
    return out;
}

inline double relative_error(const GridField& pred, const GridField& ref, bool max_norm = false) {
    return relative_error(pred.values(), ref.values(), max_norm);
}

/// Relative L2 error per time slice (the whole-grid number can hide early- vs
/// late-time behaviour; this variant is exported for inspection).
inline std::vector<double> relative_error_per_slice(const GridField& pred, const GridField& ref) {
    if (pred.grid().N != ref.grid().N)
        throw std::invalid_argument("relative_error_per_slice: time levels differ");
    std::vector<double> out;
    for (int n = 0; n <= pred.grid().N; ++n)
        out.push_back(relative_error(pred.slice(n), ref.slice(n)));
    return out;
}

inline double linf_distance(std::span<const double> a, std::span<const double> b) {
    if (a.size() != b.size()) throw std::invalid_argument("linf_distance: sample counts differ");
    double m = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, std::abs(a[i] - b[i]));
    return m;
}

inline double linf_distance(const GridField& a, const GridField& b) {
    if (a.channels() != b.channels())
        throw std::invalid_argument("linf_distance: channel counts differ");
    return linf_distance(a.values(), b.values());
}

/// Per-field L-inf distances between two solution triples on a common grid;
/// the policy distance is maximized over components.
struct FieldLinf {
    double rho = 0.0, phi = 0.0, q = 0.0;
};

inline FieldLinf linf_distance(const Solution& a, const Solution& b) {
    FieldLinf out;
    out.rho = linf_distance(a.rho, b.rho);
    out.phi = linf_distance(a.phi, b.phi);
    out.q = linf_distance(a.q, b.q);
    return out;
}

/// Savitzky-Golay smoothing: at each position, least-squares fit a polynomial
/// of degree `polyorder` over a window of `window` neighbours and take its
/// value at the centre.  Near the edges the window is truncated one-sided,
/// which still reproduces polynomials of degree <= polyorder exactly.
inline std::vector<double> savgol(std::span<const double> series, int window = 11,
                                  int polyorder = 3) {
    if (window % 2 == 0 || window < 1)
        throw std::invalid_argument("savgol: window must be odd and positive");
    if (polyorder < 0 || polyorder >= window)
        throw std::invalid_argument("savgol: polyorder must satisfy 0 <= polyorder < window");
    const int n = static_cast<int>(series.size());
    if (n < window) throw std::invalid_argument("savgol: series shorter than window");
    const int half = window / 2;
    const int p = polyorder;
    std::vector<double> out(n);
    std::vector<double> A((p + 1) * (p + 1)), rhs(p + 1), pw(2 * p + 1);
    for (int i = 0; i < n; ++i) {
        int a = std::max(0, i - half);
        int b = std::min(n - 1, i + half);
        // normal equations of the fit in the local coordinate u = j - i
        std::fill(A.begin(), A.end(), 0.0);
        std::fill(rhs.begin(), rhs.end(), 0.0);
        for (int j = a; j <= b; ++j) {
            double u = j - i;
            pw[0] = 1.0;
            for (int k = 1; k <= 2 * p; ++k) pw[k] = pw[k - 1] * u;
            for (int r = 0; r <= p; ++r) {
                rhs[r] += pw[r] * series[j];
                for (int c = 0; c <= p; ++c) A[r * (p + 1) + c] += pw[r + c];
            }
        }
        // Gaussian elimination with partial pivoting on the (p+1)x(p+1) system
        int m = p + 1;
        std::vector<double> M(A), y(rhs);
        for (int col = 0; col < m; ++col) {
            int piv = col;
            for (int r = col + 1; r < m; ++r)
                if (std::abs(M[r * m + col]) > std::abs(M[piv * m + col])) piv = r;
            if (piv != col) {
                for (int c = 0; c < m; ++c) std::swap(M[col * m + c], M[piv * m + c]);
                std::swap(y[col], y[piv]);
            }
            double diag = M[col * m + col];
            if (diag == 0.0) throw std::runtime_error("savgol: singular normal equations");
            for (int r = col + 1; r < m; ++r) {
                double f = M[r * m + col] / diag;
                if (f == 0.0) continue;
                for (int c = col; c < m; ++c) M[r * m + c] -= f * M[col * m + c];
                y[r] -= f * y[col];
            }
        }
        for (int r = m - 1; r >= 0; --r) {
            double s = y[r];
            for (int c = r + 1; c < m; ++c) s -= M[r * m + c] * y[c];
            y[r] = s / M[r * m + r];
        }
        out[i] = y[0];  // fitted value at u = 0
    }
    return out;
}

} // namespace mfg
