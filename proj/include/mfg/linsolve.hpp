#pragma once

#include <cmath>
#include <cstdint>
#include <span>
#include <vector>

namespace mfg {

struct LinearSolveReport {
    bool converged = false;
    int iterations = 0;       // matrix applications spent
    double rel_residual = 0;  // ||b - Ax|| / ||b|| at exit (true residual)
};

namespace detail {
inline double dot(std::span<const double> a, std::span<const double> b) {
    double s = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
    return s;
}
inline double norm2(std::span<const double> a) { return std::sqrt(dot(a, a)); }
} // namespace detail

/// Unpreconditioned BiCGStab for the implicit time-stepping systems.  The
/// operator is applied matrix-free: `apply(v, out)` writes A v.  The initial
/// content of `x` is used as warm start.  Convergence is declared on the true
/// residual ||b - Ax|| <= tol * ||b||; on (near-)breakdown the method
/// restarts from the current iterate until `max_iters` operator applications
/// are exhausted.
template <class Op>
LinearSolveReport bicgstab(const Op& apply, std::span<const double> b, std::span<double> x,
                           double tol, int max_iters) {
    const std::size_t n = b.size();
    LinearSolveReport rep;

    double bnorm = detail::norm2(b);
    if (bnorm == 0.0) {
        for (std::size_t i = 0; i < n; ++i) x[i] = 0.0;
        rep.converged = true;
        return rep;
    }

    std::vector<double> r(n), r0(n), p(n), v(n), s(n), t(n);

    auto true_residual = [&]() {
        apply(std::span<const double>(x.data(), n), std::span<double>(v.data(), n));
        ++rep.iterations;
        for (std::size_t i = 0; i < n; ++i) r[i] = b[i] - v[i];
        return detail::norm2(r) / bnorm;
    };

    rep.rel_residual = true_residual();
    if (rep.rel_residual <= tol) {
        rep.converged = true;
        return rep;
    }

    while (rep.iterations < max_iters) {
        // (Re)start the Lanczos-type recurrence from the current residual.
        r0 = r;
        p = r;
        double rho_old = detail::dot(r0, r);
        if (rho_old == 0.0) break;

        bool restart = false;
        while (rep.iterations < max_iters && !restart) {
            apply(std::span<const double>(p.data(), n), std::span<double>(v.data(), n));
            ++rep.iterations;
            double r0v = detail::dot(r0, v);
            if (std::abs(r0v) < 1e-300) { restart = true; break; }
            double alpha = rho_old / r0v;
            for (std::size_t i = 0; i < n; ++i) s[i] = r[i] - alpha * v[i];

            if (detail::norm2(s) / bnorm <= tol) {
                for (std::size_t i = 0; i < n; ++i) x[i] += alpha * p[i];
                rep.rel_residual = true_residual();
                if (rep.rel_residual <= tol) { rep.converged = true; return rep; }
                restart = true;
                break;
            }

            apply(std::span<const double>(s.data(), n), std::span<double>(t.data(), n));
            ++rep.iterations;
            double tt = detail::dot(t, t);
            if (tt < 1e-300) { restart = true; break; }
            double omega = detail::dot(t, s) / tt;
            if (omega == 0.0) { restart = true; break; }
            for (std::size_t i = 0; i < n; ++i) x[i] += alpha * p[i] + omega * s[i];
            for (std::size_t i = 0; i < n; ++i) r[i] = s[i] - omega * t[i];

            double rel = detail::norm2(r) / bnorm;
            if (rel <= tol) {
                rep.rel_residual = true_residual();
                if (rep.rel_residual <= tol) { rep.converged = true; return rep; }
                restart = true;
                break;
            }

            double rho_new = detail::dot(r0, r);
            if (std::abs(rho_new) < 1e-300) { restart = true; break; }
            double beta = (rho_new / rho_old) * (alpha / omega);
            for (std::size_t i = 0; i < n; ++i) p[i] = r[i] + beta * (p[i] - omega * v[i]);
            rho_old = rho_new;
        }
        if (!restart) break;
        // refresh the true residual before restarting
        rep.rel_residual = true_residual();
        if (rep.rel_residual <= tol) { rep.converged = true; return rep; }
    }

    rep.rel_residual = true_residual();
    rep.converged = rep.rel_residual <= tol;
    return rep;
}

} // namespace mfg
