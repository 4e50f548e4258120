#pragma once

#include <cmath>
#include <cstdint>
#include <span>
#include <stdexcept>
#include <vector>

namespace mfg {

/// First/second moment estimates of Adam for one parameter vector.
struct AdamState {
    std::vector<double> m, v;
    long step = 0;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;

    explicit AdamState(std::size_t n = 0) : m(n, 0.0), v(n, 0.0) {}
};

/// One Adam update with decoupled weight decay: the decay term
/// p <- p - lr*wd*p is applied alongside the bias-corrected moment update and
/// never enters the moment estimates.
inline void adam_step(std::span<double> params, std::span<const double> grad, AdamState& st,
                      double lr, double weight_decay) {
    if (params.size() != grad.size() || params.size() != st.m.size())
        throw std::invalid_argument("adam_step: length mismatch");
    st.step += 1;
    const double b1 = st.beta1, b2 = st.beta2;
    const double c1 = 1.0 - std::pow(b1, static_cast<double>(st.step));
    const double c2 = 1.0 - std::pow(b2, static_cast<double>(st.step));
    for (std::size_t i = 0; i < params.size(); ++i) {
        double g = grad[i];
        st.m[i] = b1 * st.m[i] + (1.0 - b1) * g;
        st.v[i] = b2 * st.v[i] + (1.0 - b2) * g * g;
        double mhat = st.m[i] / c1;
        double vhat = st.v[i] / c2;
        params[i] -= lr * (mhat / (std::sqrt(vhat) + st.eps) + weight_decay * params[i]);
    }
}

} // namespace mfg
