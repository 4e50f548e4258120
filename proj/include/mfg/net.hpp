#pragma once

#include <cmath>
#include <cstdint>
#include <numbers>
#include <random>
#include <span>
#include <stdexcept>
#include <string>
#include <thread>
#include <vector>

#include "mfg/error.hpp"

namespace mfg {

enum class Activation { Tanh, Softplus, Sin, Gelu };
enum class OutputTransform { Identity, Softplus };

inline const char* activation_name(Activation a) {
    switch (a) {
        case Activation::Tanh: return "tanh";
        case Activation::Softplus: return "softplus";
        case Activation::Sin: return "sin";
        case Activation::Gelu: return "gelu";
    }
    return "?";
}

/// Architecture of a residual multilayer perceptron
///   h_0 = (t, x);  h_{k+1} = skip_weight * h_k + act(W_k h_k + b_k)
/// with the skip term present only between equal-width consecutive hidden
/// layers, followed by a linear output layer and an optional positivity head.
struct NetworkSpec {
    int input_dim = 2;                 // 1 + d
    int output_dim = 1;                // 1 for scalar fields, d for policies
    std::vector<int> hidden = {100};
    Activation activation = Activation::Tanh;
    double skip_weight = 0.5;
    OutputTransform output_transform = OutputTransform::Identity;
};

inline void validate_spec(const NetworkSpec& s) {
    if (s.input_dim < 1 || s.output_dim < 1)
        throw std::invalid_argument("NetworkSpec: input/output dims must be >= 1");
    for (int w : s.hidden)
        if (w < 1) throw std::invalid_argument("NetworkSpec: hidden widths must be >= 1");
    if (s.skip_weight < 0.0 || s.skip_weight > 1.0)
        throw std::invalid_argument("NetworkSpec: skip_weight must lie in [0,1]");
}

/// One linear layer's shape and location inside the flat parameter array.
struct LayerDims {
    int rows = 0, cols = 0;
    std::size_t w_off = 0, b_off = 0;
    bool skip = false;  // residual bypass into this layer's output
};

inline std::vector<LayerDims> layer_dims(const NetworkSpec& s) {
    validate_spec(s);
    std::vector<LayerDims> dims;
    std::size_t off = 0;
    int prev = s.input_dim;
    for (std::size_t l = 0; l < s.hidden.size(); ++l) {
        LayerDims d;
        d.rows = s.hidden[l];
        d.cols = prev;
        d.w_off = off;
        d.b_off = off + static_cast<std::size_t>(d.rows) * d.cols;
        d.skip = l > 0 && s.skip_weight != 0.0 && s.hidden[l] == s.hidden[l - 1];
        off = d.b_off + d.rows;
        dims.push_back(d);
        prev = d.rows;
    }
    LayerDims out;
    out.rows = s.output_dim;
    out.cols = prev;
    out.w_off = off;
    out.b_off = off + static_cast<std::size_t>(out.rows) * out.cols;
    dims.push_back(out);
    return dims;
}

inline std::size_t parameter_count(const NetworkSpec& s) {
    auto dims = layer_dims(s);
    const LayerDims& last = dims.back();
    return last.b_off + last.rows;
}

/// Deterministic uniform draw in [0,1) from the raw 64-bit stream; avoids
/// library-dependent distribution implementations so that checkpoints are
/// reproducible across standard libraries.
inline double uniform01(std::mt19937_64& gen) {
    return static_cast<double>(gen() >> 11) * 0x1.0p-53;
}

/// Weights uniform on (-1/sqrt(fan_in), 1/sqrt(fan_in)), biases zero.
inline std::vector<double> init_network(const NetworkSpec& s, std::uint64_t seed) {
    auto dims = layer_dims(s);
    std::vector<double> params(parameter_count(s), 0.0);
    std::mt19937_64 gen(seed);
    for (const LayerDims& d : dims) {
        double bound = 1.0 / std::sqrt(static_cast<double>(d.cols));
        for (std::size_t i = 0; i < static_cast<std::size_t>(d.rows) * d.cols; ++i)
            params[d.w_off + i] = (2.0 * uniform01(gen) - 1.0) * bound;
        // biases stay zero
    }
    return params;
}

/// Activation value and derivatives at a point, up to third order.
struct ActJet {
    double f = 0, d1 = 0, d2 = 0, d3 = 0;
};

inline ActJet act_eval(Activation a, double z, int deriv_order) {
    ActJet j;
    switch (a) {
        case Activation::Tanh: {
            double s = std::tanh(z);
            j.f = s;
            if (deriv_order >= 1) j.d1 = 1.0 - s * s;
            if (deriv_order >= 2) j.d2 = -2.0 * s * j.d1;
            if (deriv_order >= 3) j.d3 = -2.0 * (j.d1 * j.d1 + s * j.d2);
            break;
        }
        case Activation::Softplus: {
            j.f = z > 0 ? z + std::log1p(std::exp(-z)) : std::log1p(std::exp(z));
            if (deriv_order >= 1) {
                double s = 1.0 / (1.0 + std::exp(-z));
                j.d1 = s;
                if (deriv_order >= 2) j.d2 = s * (1.0 - s);
                if (deriv_order >= 3) j.d3 = j.d2 * (1.0 - 2.0 * s);
            }
            break;
        }
        case Activation::Sin: {
            double sn = std::sin(z), cs = std::cos(z);
            j.f = sn;
            if (deriv_order >= 1) j.d1 = cs;
            if (deriv_order >= 2) j.d2 = -sn;
            if (deriv_order >= 3) j.d3 = -cs;
            break;
        }
        case Activation::Gelu: {
            // exact Gaussian error-function form: f = z * Phi(z)
            double Phi = 0.5 * std::erfc(-z / std::numbers::sqrt2);
            double dens = std::exp(-0.5 * z * z) / std::sqrt(2.0 * std::numbers::pi);
            j.f = z * Phi;
            if (deriv_order >= 1) j.d1 = Phi + z * dens;
            if (deriv_order >= 2) j.d2 = (2.0 - z * z) * dens;
            if (deriv_order >= 3) j.d3 = -z * (4.0 - z * z) * dens;
            break;
        }
    }
    return j;
}

inline ActJet head_eval(OutputTransform tr, double z, int deriv_order) {
    if (tr == OutputTransform::Identity) {
        ActJet j;
        j.f = z;
        j.d1 = deriv_order >= 1 ? 1.0 : 0.0;
        return j;
    }
    return act_eval(Activation::Softplus, z, deriv_order);
}

/// Scratch for one network evaluation with derivative channels.  Layout: per
/// neuron, `cols` contiguous jet channels — channel 0 the value, channels
/// 1..ndir first derivatives along each input coordinate, channels
/// 1+ndir..2*ndir (order 2 only) the corresponding pure second derivatives.
/// Input coordinate 0 is t by caller convention.
class JetWorkspace {
public:
    void configure(const NetworkSpec& s, int order, bool tape) {
        dims_ = layer_dims(s);
        order_ = order;
        tape_ = tape;
        ndir = order >= 1 ? s.input_dim : 0;
        cols = 1 + ndir * (order >= 1 ? 1 : 0) + ndir * (order == 2 ? 1 : 0);
        const std::size_t L = s.hidden.size();
        X.assign(static_cast<std::size_t>(s.input_dim) * cols, 0.0);
        Z.resize(L);
        H.resize(L);
        act.resize(L);
        int maxw = s.input_dim;
        for (std::size_t l = 0; l < L; ++l) {
            Z[l].assign(static_cast<std::size_t>(s.hidden[l]) * cols, 0.0);
            H[l].assign(static_cast<std::size_t>(s.hidden[l]) * cols, 0.0);
            act[l].resize(s.hidden[l]);
            maxw = std::max(maxw, s.hidden[l]);
        }
        maxw = std::max(maxw, s.output_dim);
        Zout.assign(static_cast<std::size_t>(s.output_dim) * cols, 0.0);
        Y.assign(static_cast<std::size_t>(s.output_dim) * cols, 0.0);
        act_out.resize(s.output_dim);
        const int d = s.input_dim - 1;
        out_value.assign(s.output_dim, 0.0);
        out_dt.assign(s.output_dim, 0.0);
        out_grad.assign(static_cast<std::size_t>(s.output_dim) * std::max(d, 0), 0.0);
        out_lap.assign(s.output_dim, 0.0);
        bar_a.assign(static_cast<std::size_t>(maxw) * cols, 0.0);
        bar_b.assign(static_cast<std::size_t>(maxw) * cols, 0.0);
        bar_z.assign(static_cast<std::size_t>(maxw) * cols, 0.0);
    }

    int order() const { return order_; }
    bool taped() const { return tape_; }
    const std::vector<LayerDims>& dims() const { return dims_; }

    int ndir = 0;
    int cols = 1;
    std::vector<double> X;
    std::vector<std::vector<double>> Z, H;
    std::vector<std::vector<ActJet>> act;
    std::vector<double> Zout, Y;
    std::vector<ActJet> act_out;
    std::vector<double> out_value, out_dt, out_grad, out_lap;
    std::vector<double> bar_a, bar_b, bar_z;

private:
    std::vector<LayerDims> dims_;
    int order_ = -1;
    bool tape_ = false;
};

/// Read-only view of a network's value and input derivatives at one point:
/// the exact value, time derivative, spatial gradient and spatial Laplacian.
struct JetView {
    std::span<const double> value;  // output_dim
    std::span<const double> dt;     // output_dim           (order >= 1)
    std::span<const double> grad;   // output_dim x d       (order >= 1)
    std::span<const double> lap;    // output_dim           (order == 2)
};

/// Adjoint seed matching JetView; fill the entries your loss differentiates.
struct JetSeed {
    std::vector<double> value, dt, grad, lap;
    void resize(int output_dim, int d) {
        value.assign(output_dim, 0.0);
        dt.assign(output_dim, 0.0);
        grad.assign(static_cast<std::size_t>(output_dim) * std::max(d, 0), 0.0);
        lap.assign(output_dim, 0.0);
    }
    void zero() {
        std::fill(value.begin(), value.end(), 0.0);
        std::fill(dt.begin(), dt.end(), 0.0);
        std::fill(grad.begin(), grad.end(), 0.0);
        std::fill(lap.begin(), lap.end(), 0.0);
    }
};

namespace detail {

// Z = W * Hprev, bias added to the value channel only (derivative channels of
// a constant vanish).
inline void jet_linear(const double* W, const double* b, int rows, int colsin,
                       const double* Hprev, int C, double* Zm) {
    for (int j = 0; j < rows; ++j) {
        double* zr = Zm + static_cast<std::size_t>(j) * C;
        for (int c = 0; c < C; ++c) zr[c] = 0.0;
        const double* wr = W + static_cast<std::size_t>(j) * colsin;
        for (int k = 0; k < colsin; ++k) {
            const double wjk = wr[k];
            if (wjk == 0.0) continue;
            const double* hr = Hprev + static_cast<std::size_t>(k) * C;
            for (int c = 0; c < C; ++c) zr[c] += wjk * hr[c];
        }
        zr[0] += b[j];
    }
}

// Propagates jets through a pointwise nonlinearity:
//   a  = f(z)
//   a1 = f'(z) z1
//   a2 = f''(z) z1^2 + f'(z) z2      (per direction)
inline void jet_activate(const ActJet& aj, const double* zr, double* ar, int ndir, int order) {
    ar[0] = aj.f;
    if (order >= 1)
        for (int j = 0; j < ndir; ++j) ar[1 + j] = aj.d1 * zr[1 + j];
    if (order == 2)
        for (int j = 0; j < ndir; ++j) {
            double z1 = zr[1 + j];
            ar[1 + ndir + j] = aj.d2 * z1 * z1 + aj.d1 * zr[1 + ndir + j];
        }
}

// Adjoint of jet_activate.  Given the adjoint ar_bar of the outputs and the
// stored forward state, writes the adjoint of the pre-activation channels:
//   z_bar  = f' a_bar + sum_j [ f'' z1_j a1_bar_j + (f''' z1_j^2 + f'' z2_j) a2_bar_j ]
//   z1_bar = f' a1_bar + 2 f'' z1 a2_bar
//   z2_bar = f' a2_bar
inline void jet_activate_adjoint(const ActJet& aj, const double* zr, const double* abar,
                                 double* zbar, int ndir, int order) {
    double z0b = aj.d1 * abar[0];
    if (order >= 1)
        for (int j = 0; j < ndir; ++j) {
            double z1 = zr[1 + j];
            z0b += aj.d2 * z1 * abar[1 + j];
            if (order == 2)
                z0b += (aj.d3 * z1 * z1 + aj.d2 * zr[1 + ndir + j]) * abar[1 + ndir + j];
        }
    zbar[0] = z0b;
    if (order >= 1)
        for (int j = 0; j < ndir; ++j) {
            double v = aj.d1 * abar[1 + j];
            if (order == 2) v += 2.0 * aj.d2 * zr[1 + j] * abar[1 + ndir + j];
            zbar[1 + j] = v;
        }
    if (order == 2)
        for (int j = 0; j < ndir; ++j) zbar[1 + ndir + j] = aj.d1 * abar[1 + ndir + j];
}

// Parameter and input adjoints of jet_linear.  Hprev_bar is overwritten.
inline void jet_linear_adjoint(const double* W, int rows, int colsin, const double* Hprev,
                               const double* Zbar, int C, double* Wbar, double* bbar,
                               double* Hprev_bar) {
    for (int k = 0; k < colsin; ++k) {
        double* hb = Hprev_bar + static_cast<std::size_t>(k) * C;
        for (int c = 0; c < C; ++c) hb[c] = 0.0;
    }
    for (int j = 0; j < rows; ++j) {
        const double* zb = Zbar + static_cast<std::size_t>(j) * C;
        bbar[j] += zb[0];
        const double* wr = W + static_cast<std::size_t>(j) * colsin;
        double* wbr = Wbar + static_cast<std::size_t>(j) * colsin;
        for (int k = 0; k < colsin; ++k) {
            const double* hr = Hprev + static_cast<std::size_t>(k) * C;
            double* hb = Hprev_bar + static_cast<std::size_t>(k) * C;
            double acc = 0.0;
            const double wjk = wr[k];
            for (int c = 0; c < C; ++c) {
                acc += zb[c] * hr[c];
                hb[c] += wjk * zb[c];
            }
            wbr[k] += acc;
        }
    }
}

} // namespace detail

/// Evaluates the network at (t, x) together with its input derivatives up to
/// `order` (0: values only; 1: value + first derivatives; 2: adds pure second
/// derivatives, hence the Laplacian).  With `tape` set the workspace retains
/// everything jet_backward needs.  Returns a view into the workspace.
inline JetView jet_forward(const NetworkSpec& s, std::span<const double> params, double t,
                           std::span<const double> x, int order, JetWorkspace& ws,
                           bool tape = false) {
    if (static_cast<int>(x.size()) != s.input_dim - 1)
        throw std::invalid_argument("jet_forward: x must have input_dim-1 coordinates");
    if (params.size() != parameter_count(s))
        throw std::invalid_argument("jet_forward: parameter array has wrong length");
    ws.configure(s, order, tape);
    const int C = ws.cols;
    const int nd = ws.ndir;
    const int d = s.input_dim - 1;
    const int act_order = order + (tape ? 1 : 0);

    // input matrix: value channel (t, x); unit first derivative per direction
    std::fill(ws.X.begin(), ws.X.end(), 0.0);
    for (int k = 0; k < s.input_dim; ++k) {
        ws.X[static_cast<std::size_t>(k) * C] = k == 0 ? t : x[k - 1];
        if (order >= 1) ws.X[static_cast<std::size_t>(k) * C + 1 + k] = 1.0;
    }

    const auto& dims = ws.dims();
    const std::size_t L = s.hidden.size();
    const double* prev = ws.X.data();
    for (std::size_t l = 0; l < L; ++l) {
        const LayerDims& dm = dims[l];
        detail::jet_linear(params.data() + dm.w_off, params.data() + dm.b_off, dm.rows, dm.cols,
                           prev, C, ws.Z[l].data());
        for (int j = 0; j < dm.rows; ++j) {
            const double* zr = ws.Z[l].data() + static_cast<std::size_t>(j) * C;
            ActJet aj = act_eval(s.activation, zr[0], act_order);
            detail::jet_activate(aj, zr, ws.H[l].data() + static_cast<std::size_t>(j) * C, nd,
                                 order);
            if (tape) ws.act[l][j] = aj;
        }
        if (dm.skip) {
            const double w = s.skip_weight;
            double* hr = ws.H[l].data();
            for (std::size_t i = 0; i < ws.H[l].size(); ++i) hr[i] += w * prev[i];
        }
        prev = ws.H[l].data();
    }

    const LayerDims& od = dims.back();
    detail::jet_linear(params.data() + od.w_off, params.data() + od.b_off, od.rows, od.cols, prev,
                       C, ws.Zout.data());
    for (int m = 0; m < od.rows; ++m) {
        const double* zr = ws.Zout.data() + static_cast<std::size_t>(m) * C;
        ActJet aj = head_eval(s.output_transform, zr[0], act_order);
        detail::jet_activate(aj, zr, ws.Y.data() + static_cast<std::size_t>(m) * C, nd, order);
        if (tape) ws.act_out[m] = aj;
    }

    // compact views: channel 1 is d/dt, channels 2..1+d the spatial gradient,
    // the Laplacian sums the pure spatial second-derivative channels
    for (int m = 0; m < s.output_dim; ++m) {
        const double* yr = ws.Y.data() + static_cast<std::size_t>(m) * C;
        ws.out_value[m] = yr[0];
        if (order >= 1) {
            ws.out_dt[m] = yr[1];
            for (int k = 0; k < d; ++k) ws.out_grad[static_cast<std::size_t>(m) * d + k] = yr[2 + k];
        }
        if (order == 2) {
            double lap = 0.0;
            for (int k = 0; k < d; ++k) lap += yr[1 + nd + 1 + k];
            ws.out_lap[m] = lap;
        }
    }
    JetView v;
    v.value = ws.out_value;
    v.dt = ws.out_dt;
    v.grad = ws.out_grad;
    v.lap = ws.out_lap;
    return v;
}

/// Plain evaluation (no derivatives).
inline void forward(const NetworkSpec& s, std::span<const double> params, double t,
                    std::span<const double> x, JetWorkspace& ws, std::span<double> out) {
    JetView v = jet_forward(s, params, t, x, 0, ws, false);
    for (int m = 0; m < s.output_dim; ++m) out[m] = v.value[m];
}

/// Second-order jet convenience wrapper.
inline JetView input_jet(const NetworkSpec& s, std::span<const double> params, double t,
                         std::span<const double> x, JetWorkspace& ws) {
    return jet_forward(s, params, t, x, 2, ws, false);
}

/// Reverse accumulation through the jet computation of the last taped
/// jet_forward call on `ws`.  The seed holds the adjoints of the outputs the
/// loss actually uses (value/dt/grad/lap); parameter adjoints are *added*
/// into `grad`, so a batch accumulates naturally.
inline void jet_backward(const NetworkSpec& s, std::span<const double> params,
                         const JetWorkspace& ws, const JetSeed& seed, std::span<double> grad) {
    if (!ws.taped()) throw std::logic_error("jet_backward: forward pass was not taped");
    if (grad.size() != parameter_count(s))
        throw std::invalid_argument("jet_backward: gradient array has wrong length");
    const int C = ws.cols;
    const int nd = ws.ndir;
    const int d = s.input_dim - 1;
    const int order = ws.order();
    const auto& dims = ws.dims();
    const std::size_t L = s.hidden.size();

    JetWorkspace& w = const_cast<JetWorkspace&>(ws);  // scratch buffers only
    double* Ybar = w.bar_a.data();
    double* Hbar = w.bar_b.data();
    double* Zbar = w.bar_z.data();

    // seed the output jet matrix; the Laplacian seed fans out to every pure
    // spatial second-derivative channel
    for (int m = 0; m < s.output_dim; ++m) {
        double* yb = Ybar + static_cast<std::size_t>(m) * C;
        for (int c = 0; c < C; ++c) yb[c] = 0.0;
        yb[0] = seed.value[m];
        if (order >= 1) {
            yb[1] = seed.dt[m];
            for (int k = 0; k < d; ++k) yb[2 + k] = seed.grad[static_cast<std::size_t>(m) * d + k];
        }
        if (order == 2)
            for (int k = 0; k < d; ++k) yb[1 + nd + 1 + k] = seed.lap[m];
    }

    // output head
    const LayerDims& od = dims.back();
    for (int m = 0; m < od.rows; ++m) {
        const double* zr = ws.Zout.data() + static_cast<std::size_t>(m) * C;
        detail::jet_activate_adjoint(ws.act_out[m], zr, Ybar + static_cast<std::size_t>(m) * C,
                                     Zbar + static_cast<std::size_t>(m) * C, nd, order);
    }
    const double* prev = L > 0 ? ws.H[L - 1].data() : ws.X.data();
    detail::jet_linear_adjoint(params.data() + od.w_off, od.rows, od.cols, prev, Zbar, C,
                               grad.data() + od.w_off, grad.data() + od.b_off, Hbar);

    for (std::size_t li = L; li-- > 0;) {
        const LayerDims& dm = dims[li];
        // activation part: H = skip*Hprev + act(Z) — the act branch first
        for (int j = 0; j < dm.rows; ++j) {
            const double* zr = ws.Z[li].data() + static_cast<std::size_t>(j) * C;
            detail::jet_activate_adjoint(ws.act[li][j], zr, Hbar + static_cast<std::size_t>(j) * C,
                                         Zbar + static_cast<std::size_t>(j) * C, nd, order);
        }
        const double* below = li > 0 ? ws.H[li - 1].data() : ws.X.data();
        double* below_bar = Ybar;  // reuse as the next Hbar buffer
        detail::jet_linear_adjoint(params.data() + dm.w_off, dm.rows, dm.cols, below, Zbar, C,
                                   grad.data() + dm.w_off, grad.data() + dm.b_off, below_bar);
        if (dm.skip) {
            const double sw = s.skip_weight;
            for (std::size_t i = 0; i < static_cast<std::size_t>(dm.rows) * C; ++i)
                below_bar[i] += sw * Hbar[i];
        }
        std::swap(Ybar, Hbar);  // below_bar (in Ybar's storage) becomes Hbar
    }
}

/// A batch of sample points.  `x` is point-major (count x dim); `t` may be
/// empty for purely spatial batches, in which case callers supply the time.
struct Batch {
    int count = 0;
    int dim = 0;
    std::vector<double> t;
    std::vector<double> x;

    std::span<const double> point(int i) const {
        return {x.data() + static_cast<std::size_t>(i) * dim, static_cast<std::size_t>(dim)};
    }
    double time(int i, double fallback) const { return t.empty() ? fallback : t[i]; }
};

/// Evaluates a pointwise loss over a batch and accumulates its exact
/// parameter gradient.  For each point the trained network's jet (of the
/// requested order) is computed and handed to `fn(thread, index, jet, seed)`,
/// which returns the point's loss contribution and fills the seed with the
/// contribution's adjoints.  Pass an empty `grad` for a loss-only evaluation.
/// With `threads > 1` the batch is split into contiguous chunks summed in
/// chunk order, so results are deterministic for a fixed thread count.
template <class PointFn>
double loss_and_param_grad(const NetworkSpec& s, std::span<const double> params,
                           const Batch& batch, double t_fallback, int order, PointFn&& fn,
                           std::span<double> grad, int threads = 1) {
    const bool want_grad = !grad.empty();
    if (want_grad && grad.size() != parameter_count(s))
        throw std::invalid_argument("loss_and_param_grad: gradient array has wrong length");
    const int d = s.input_dim - 1;

    auto run_range = [&](int thread_id, int begin, int end, std::span<double> gacc) {
        JetWorkspace ws;
        JetSeed seed;
        seed.resize(s.output_dim, d);
        double local = 0.0;
        for (int i = begin; i < end; ++i) {
            JetView jet = jet_forward(s, params, batch.time(i, t_fallback), batch.point(i), order,
                                      ws, want_grad);
            seed.zero();
            double li = fn(thread_id, i, jet, seed);
            if (!std::isfinite(li))
                throw SolverError("loss_and_param_grad: non-finite loss contribution at batch index " +
                                  std::to_string(i));
            local += li;
            if (want_grad) jet_backward(s, params, ws, seed, gacc);
        }
        return local;
    };

    if (threads <= 1 || batch.count < 2 * threads) {
        return run_range(0, 0, batch.count, grad);
    }

    const int nt = threads;
    std::vector<std::vector<double>> gparts;
    if (want_grad) gparts.assign(nt, std::vector<double>(parameter_count(s), 0.0));
    std::vector<double> lparts(nt, 0.0);
    std::vector<std::exception_ptr> errs(nt);
    std::vector<std::thread> pool;
    const int chunk = (batch.count + nt - 1) / nt;
    for (int ti = 0; ti < nt; ++ti) {
        pool.emplace_back([&, ti]() {
            try {
                int b = ti * chunk;
                int e = std::min(batch.count, b + chunk);
                if (b < e)
                    lparts[ti] = run_range(ti, b, e,
                                           want_grad ? std::span<double>(gparts[ti]) : std::span<double>());
            } catch (...) {
                errs[ti] = std::current_exception();
            }
        });
    }
    for (auto& th : pool) th.join();
    for (auto& e : errs)
        if (e) std::rethrow_exception(e);
    double total = 0.0;
    for (int ti = 0; ti < nt; ++ti) total += lparts[ti];
    if (want_grad)
        for (int ti = 0; ti < nt; ++ti)
            for (std::size_t i = 0; i < grad.size(); ++i) grad[i] += gparts[ti][i];
    return total;
}

} // namespace mfg
