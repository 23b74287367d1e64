#pragma once
// Minimal deep-learning engine: one LSTM layer feeding a dense stack, exact
// backpropagation through time, adaptive-moment updates, inverted dropout,
// and a finite-difference gradient checker.  Everything is double precision
// and deterministic given a seed.

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <stdexcept>
#include <string>
#include <vector>

#include <json.hpp>

#include "covarcast/parallel.hpp"
#include "covarcast/rng.hpp"

namespace covarcast {

enum class Activation { sigmoid, tanh, identity };

inline std::string to_string(Activation a) {
    switch (a) {
        case Activation::sigmoid: return "sigmoid";
        case Activation::tanh: return "tanh";
        case Activation::identity: return "identity";
    }
    throw std::logic_error("to_string(Activation): unknown value");
}

inline Activation activation_from_string(const std::string& s) {
    if (s == "sigmoid") return Activation::sigmoid;
    if (s == "tanh") return Activation::tanh;
    if (s == "identity") return Activation::identity;
    throw std::runtime_error("unknown activation '" + s + "'");
}

namespace detail {

inline double sigmoid(double x) {
    if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
    const double e = std::exp(x);
    return e / (1.0 + e);
}

inline void apply_activation(Activation act, Eigen::VectorXd& z) {
    switch (act) {
        case Activation::sigmoid:
            for (Eigen::Index i = 0; i < z.size(); ++i) z(i) = sigmoid(z(i));
            return;
        case Activation::tanh:
            for (Eigen::Index i = 0; i < z.size(); ++i) z(i) = std::tanh(z(i));
            return;
        case Activation::identity:
            return;
    }
}

// Derivative expressed through the activation value itself, so the forward
// cache suffices: sigmoid' = a(1-a), tanh' = 1-a^2.
inline double activation_grad(Activation act, double a) {
    switch (act) {
        case Activation::sigmoid: return a * (1.0 - a);
        case Activation::tanh: return 1.0 - a * a;
        case Activation::identity: return 1.0;
    }
    return 1.0;
}

// splitmix64 finalizer; decorrelates derived seeds.
inline std::uint64_t mix_seed(std::uint64_t a, std::uint64_t b) {
    std::uint64_t z = a + 0x9E3779B97F4A7C15ull * (b + 1);
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ull;
    z = (z ^ (z >> 27)) * 0x94D049BB133111EBull;
    return z ^ (z >> 31);
}

}  // namespace detail

// ---- layers -----------------------------------------------------------------

struct DenseLayer {
    Eigen::MatrixXd weights;  // out x in
    Eigen::VectorXd biases;   // out
    Activation activation = Activation::sigmoid;
    double dropout = 0.0;  // inverted dropout on this layer's output

    Eigen::Index in_width() const { return weights.cols(); }
    Eigen::Index out_width() const { return weights.rows(); }
};

inline Eigen::VectorXd dense_forward(const DenseLayer& layer,
                                     const Eigen::VectorXd& input) {
    if (input.size() != layer.in_width() || layer.biases.size() != layer.out_width())
        throw std::invalid_argument("dense_forward: dimension mismatch");
    Eigen::VectorXd z = layer.weights * input + layer.biases;
    detail::apply_activation(layer.activation, z);
    return z;
}

struct LstmLayer {
    // Gate order everywhere: cell candidate, update, forget, output.
    Eigen::MatrixXd w_xc, w_xu, w_xf, w_xo;  // hidden x input
    Eigen::MatrixXd w_ac, w_au, w_af, w_ao;  // hidden x hidden
    Eigen::VectorXd b_c, b_u, b_f, b_o;      // hidden
    double dropout = 0.0;  // inverted dropout on the output hidden state

    Eigen::Index input_width() const { return w_xc.cols(); }
    Eigen::Index hidden_width() const { return w_xc.rows(); }

    void validate() const {
        const Eigen::Index h = hidden_width(), in = input_width();
        auto bad_x = [&](const Eigen::MatrixXd& m) {
            return m.rows() != h || m.cols() != in;
        };
        auto bad_a = [&](const Eigen::MatrixXd& m) {
            return m.rows() != h || m.cols() != h;
        };
        auto bad_b = [&](const Eigen::VectorXd& v) { return v.size() != h; };
        if (bad_x(w_xu) || bad_x(w_xf) || bad_x(w_xo) || bad_a(w_ac) || bad_a(w_au) ||
            bad_a(w_af) || bad_a(w_ao) || bad_b(b_c) || bad_b(b_u) || bad_b(b_f) ||
            bad_b(b_o))
            throw std::invalid_argument("LstmLayer: inconsistent kernel shapes");
    }
};

// All per-step states, kept because backpropagation through time needs them.
struct LstmTrace {
    Eigen::MatrixXd a_path;  // tau x hidden
    Eigen::MatrixXd c_path;
    Eigen::MatrixXd ctilde;
    Eigen::MatrixXd g_u, g_f, g_o;
};

// The six per-step equations: cell candidate through tanh, three sigmoid
// gates, memory-cell blend, gated hidden state.
inline LstmTrace lstm_forward(const LstmLayer& layer, const Eigen::MatrixXd& sequence,
                              const Eigen::VectorXd& a_init,
                              const Eigen::VectorXd& c_init) {
    layer.validate();
    const Eigen::Index tau = sequence.rows();
    const Eigen::Index h = layer.hidden_width();
    if (tau < 1) throw std::invalid_argument("lstm_forward: empty sequence");
    if (sequence.cols() != layer.input_width())
        throw std::invalid_argument("lstm_forward: sequence width mismatch");
    if (a_init.size() != h || c_init.size() != h)
        throw std::invalid_argument("lstm_forward: state width mismatch");

    LstmTrace tr;
    tr.a_path.resize(tau, h);
    tr.c_path.resize(tau, h);
    tr.ctilde.resize(tau, h);
    tr.g_u.resize(tau, h);
    tr.g_f.resize(tau, h);
    tr.g_o.resize(tau, h);

    Eigen::VectorXd a = a_init, c = c_init;
    for (Eigen::Index t = 0; t < tau; ++t) {
        const Eigen::VectorXd u = sequence.row(t).transpose();
        Eigen::VectorXd ct = layer.w_ac * a + layer.w_xc * u + layer.b_c;
        Eigen::VectorXd gu = layer.w_au * a + layer.w_xu * u + layer.b_u;
        Eigen::VectorXd gf = layer.w_af * a + layer.w_xf * u + layer.b_f;
        Eigen::VectorXd go = layer.w_ao * a + layer.w_xo * u + layer.b_o;
        detail::apply_activation(Activation::tanh, ct);
        detail::apply_activation(Activation::sigmoid, gu);
        detail::apply_activation(Activation::sigmoid, gf);
        detail::apply_activation(Activation::sigmoid, go);
        c = gu.cwiseProduct(ct) + gf.cwiseProduct(c);
        a = go.cwiseProduct(c.array().tanh().matrix());
        tr.ctilde.row(t) = ct.transpose();
        tr.g_u.row(t) = gu.transpose();
        tr.g_f.row(t) = gf.transpose();
        tr.g_o.row(t) = go.transpose();
        tr.c_path.row(t) = c.transpose();
        tr.a_path.row(t) = a.transpose();
    }
    return tr;
}

inline LstmTrace lstm_forward(const LstmLayer& layer,
                              const Eigen::MatrixXd& sequence) {
    const Eigen::VectorXd zero = Eigen::VectorXd::Zero(layer.hidden_width());
    return lstm_forward(layer, sequence, zero, zero);
}

// ---- network ----------------------------------------------------------------

struct Network {
    LstmLayer lstm;
    std::vector<DenseLayer> dense;  // last entry is the scalar output layer
    bool concat_one_hot_after_lstm = false;
    Eigen::Index one_hot_width = 0;
    std::uint64_t rng_seed = 0;

    void validate() const {
        lstm.validate();
        if (dense.empty()) throw std::invalid_argument("Network: no dense layers");
        Eigen::Index width = lstm.hidden_width();
        if (concat_one_hot_after_lstm) {
            if (one_hot_width < 1)
                throw std::invalid_argument("Network: one-hot width must be positive");
            width += one_hot_width;
        }
        for (const auto& d : dense) {
            if (d.in_width() != width || d.biases.size() != d.out_width())
                throw std::invalid_argument("Network: dense layer width chain broken");
            if (d.dropout < 0.0 || d.dropout >= 1.0)
                throw std::invalid_argument("Network: dropout rate outside [0,1)");
            width = d.out_width();
        }
        if (width != 1)
            throw std::invalid_argument("Network: output layer must have width 1");
        if (dense.back().dropout != 0.0)
            throw std::invalid_argument("Network: output layer cannot have dropout");
        if (lstm.dropout < 0.0 || lstm.dropout >= 1.0)
            throw std::invalid_argument("Network: dropout rate outside [0,1)");
    }
};

struct NetworkArch {
    Eigen::Index input_width = 0;
    Eigen::Index lstm_width = 0;
    std::vector<Eigen::Index> dense_widths;  // including the final width-1 layer
    Activation hidden_activation = Activation::sigmoid;
    bool concat_one_hot = false;
    Eigen::Index one_hot_width = 0;
    double lstm_dropout = 0.0;
    double dense_dropout = 0.0;
    std::uint64_t seed = 0;
};

// Kernels uniform in +/- sqrt(6/(fan_in+fan_out)); biases zero except the
// forget gate's, set to 1 so early training does not flush the memory cell.
inline Network make_network(const NetworkArch& arch) {
    if (arch.input_width < 1 || arch.lstm_width < 1 || arch.dense_widths.empty() ||
        arch.dense_widths.back() != 1)
        throw std::invalid_argument(
            "make_network: need input/lstm widths >= 1 and dense widths ending in 1");
    Rng rng(arch.seed);
    auto glorot = [&rng](Eigen::Index rows, Eigen::Index cols) {
        const double lim = std::sqrt(6.0 / double(rows + cols));
        Eigen::MatrixXd m(rows, cols);
        for (Eigen::Index i = 0; i < m.size(); ++i)
            m.data()[i] = rng.uniform(-lim, lim);
        return m;
    };

    Network net;
    net.rng_seed = arch.seed;
    net.concat_one_hot_after_lstm = arch.concat_one_hot;
    net.one_hot_width = arch.concat_one_hot ? arch.one_hot_width : 0;
    const Eigen::Index h = arch.lstm_width, in = arch.input_width;
    net.lstm.w_xc = glorot(h, in);
    net.lstm.w_xu = glorot(h, in);
    net.lstm.w_xf = glorot(h, in);
    net.lstm.w_xo = glorot(h, in);
    net.lstm.w_ac = glorot(h, h);
    net.lstm.w_au = glorot(h, h);
    net.lstm.w_af = glorot(h, h);
    net.lstm.w_ao = glorot(h, h);
    net.lstm.b_c = Eigen::VectorXd::Zero(h);
    net.lstm.b_u = Eigen::VectorXd::Zero(h);
    net.lstm.b_f = Eigen::VectorXd::Ones(h);
    net.lstm.b_o = Eigen::VectorXd::Zero(h);
    net.lstm.dropout = arch.lstm_dropout;

    Eigen::Index width = h + (arch.concat_one_hot ? arch.one_hot_width : 0);
    for (std::size_t l = 0; l < arch.dense_widths.size(); ++l) {
        DenseLayer d;
        d.weights = glorot(arch.dense_widths[l], width);
        d.biases = Eigen::VectorXd::Zero(arch.dense_widths[l]);
        const bool last = l + 1 == arch.dense_widths.size();
        d.activation = last ? Activation::sigmoid : arch.hidden_activation;
        d.dropout = last ? 0.0 : arch.dense_dropout;
        net.dense.push_back(std::move(d));
        width = arch.dense_widths[l];
    }
    net.validate();
    return net;
}

// Forward cache: everything backward() needs, including the inputs and the
// dropout masks that were actually drawn (masks hold the 1/(1-rate) scale).
struct ForwardPass {
    double prediction = 0.0;
    Eigen::MatrixXd sequence;
    Eigen::VectorXd one_hot;
    LstmTrace lstm;
    Eigen::VectorXd lstm_mask;
    std::vector<Eigen::VectorXd> dense_inputs;  // input to each dense layer
    std::vector<Eigen::VectorXd> dense_acts;    // post-activation, pre-dropout
    std::vector<Eigen::VectorXd> dense_masks;
};

namespace detail {

inline Eigen::VectorXd dropout_mask(Eigen::Index n, double rate, Rng& rng) {
    Eigen::VectorXd mask = Eigen::VectorXd::Constant(n, 1.0);
    if (rate <= 0.0) return mask;
    const double scale = 1.0 / (1.0 - rate);
    for (Eigen::Index i = 0; i < n; ++i)
        mask(i) = rng.uniform() < rate ? 0.0 : scale;
    return mask;
}

}  // namespace detail

inline ForwardPass network_forward(const Network& net, const Eigen::MatrixXd& sequence,
                                   const Eigen::VectorXd& one_hot, bool train_mode,
                                   Rng& rng) {
    net.validate();
    if (net.concat_one_hot_after_lstm) {
        if (one_hot.size() != net.one_hot_width)
            throw std::invalid_argument("network_forward: one-hot width mismatch");
    } else if (one_hot.size() != 0) {
        throw std::invalid_argument(
            "network_forward: one-hot supplied to a network configured without it");
    }

    ForwardPass pass;
    pass.sequence = sequence;
    pass.one_hot = one_hot;
    pass.lstm = lstm_forward(net.lstm, sequence);
    const Eigen::Index h = net.lstm.hidden_width();
    const Eigen::VectorXd a_last =
        pass.lstm.a_path.row(sequence.rows() - 1).transpose();
    pass.lstm_mask = train_mode ? detail::dropout_mask(h, net.lstm.dropout, rng)
                                : Eigen::VectorXd::Constant(h, 1.0);

    Eigen::VectorXd x(h + one_hot.size());
    x.head(h) = a_last.cwiseProduct(pass.lstm_mask);
    if (one_hot.size() > 0) x.tail(one_hot.size()) = one_hot;

    pass.dense_inputs.reserve(net.dense.size());
    pass.dense_acts.reserve(net.dense.size());
    pass.dense_masks.reserve(net.dense.size());
    for (const auto& d : net.dense) {
        pass.dense_inputs.push_back(x);
        Eigen::VectorXd a = dense_forward(d, x);
        pass.dense_acts.push_back(a);
        Eigen::VectorXd mask = train_mode
                                   ? detail::dropout_mask(a.size(), d.dropout, rng)
                                   : Eigen::VectorXd::Constant(a.size(), 1.0);
        pass.dense_masks.push_back(mask);
        x = a.cwiseProduct(mask);
    }
    pass.prediction = x(0);
    return pass;
}

inline double predict(const Network& net, const Eigen::MatrixXd& sequence,
                      const Eigen::VectorXd& one_hot = Eigen::VectorXd()) {
    Rng unused(0);
    return network_forward(net, sequence, one_hot, false, unused).prediction;
}

// ---- gradients --------------------------------------------------------------

struct LstmGradients {
    Eigen::MatrixXd w_xc, w_xu, w_xf, w_xo;
    Eigen::MatrixXd w_ac, w_au, w_af, w_ao;
    Eigen::VectorXd b_c, b_u, b_f, b_o;
};

struct DenseGradients {
    Eigen::MatrixXd weights;
    Eigen::VectorXd biases;
};

struct NetworkGradients {
    LstmGradients lstm;
    std::vector<DenseGradients> dense;
};

inline NetworkGradients make_gradients(const Network& net) {
    NetworkGradients g;
    auto zeros_like_m = [](const Eigen::MatrixXd& m) {
        return Eigen::MatrixXd::Zero(m.rows(), m.cols()).eval();
    };
    auto zeros_like_v = [](const Eigen::VectorXd& v) {
        return Eigen::VectorXd::Zero(v.size()).eval();
    };
    g.lstm.w_xc = zeros_like_m(net.lstm.w_xc);
    g.lstm.w_xu = zeros_like_m(net.lstm.w_xu);
    g.lstm.w_xf = zeros_like_m(net.lstm.w_xf);
    g.lstm.w_xo = zeros_like_m(net.lstm.w_xo);
    g.lstm.w_ac = zeros_like_m(net.lstm.w_ac);
    g.lstm.w_au = zeros_like_m(net.lstm.w_au);
    g.lstm.w_af = zeros_like_m(net.lstm.w_af);
    g.lstm.w_ao = zeros_like_m(net.lstm.w_ao);
    g.lstm.b_c = zeros_like_v(net.lstm.b_c);
    g.lstm.b_u = zeros_like_v(net.lstm.b_u);
    g.lstm.b_f = zeros_like_v(net.lstm.b_f);
    g.lstm.b_o = zeros_like_v(net.lstm.b_o);
    for (const auto& d : net.dense)
        g.dense.push_back({zeros_like_m(d.weights), zeros_like_v(d.biases)});
    return g;
}

// Canonical flat ordering of every trainable array; gradients, optimizer
// state, and the gradient checker all index parameters through this.
struct ParamSpan {
    double* data;
    Eigen::Index size;
};

namespace detail {

template <typename LstmT, typename DenseVecT>
std::vector<ParamSpan> collect_spans(LstmT& lstm, DenseVecT& dense) {
    std::vector<ParamSpan> spans;
    auto add = [&spans](auto& arr) {
        spans.push_back({const_cast<double*>(arr.data()), arr.size()});
    };
    add(lstm.w_xc); add(lstm.w_xu); add(lstm.w_xf); add(lstm.w_xo);
    add(lstm.w_ac); add(lstm.w_au); add(lstm.w_af); add(lstm.w_ao);
    add(lstm.b_c); add(lstm.b_u); add(lstm.b_f); add(lstm.b_o);
    for (auto& d : dense) {
        add(d.weights);
        add(d.biases);
    }
    return spans;
}

}  // namespace detail

inline std::vector<ParamSpan> parameter_spans(Network& net) {
    return detail::collect_spans(net.lstm, net.dense);
}

inline std::vector<ParamSpan> gradient_spans(NetworkGradients& g) {
    return detail::collect_spans(g.lstm, g.dense);
}

inline Eigen::Index count_parameters(const Network& net) {
    Eigen::Index n = 0;
    for (const auto& s : detail::collect_spans(net.lstm, net.dense)) n += s.size;
    return n;
}

inline void gradients_add(NetworkGradients& into, const NetworkGradients& from) {
    auto a = gradient_spans(into);
    auto b = gradient_spans(const_cast<NetworkGradients&>(from));
    if (a.size() != b.size())
        throw std::logic_error("gradients_add: mismatched structures");
    for (std::size_t i = 0; i < a.size(); ++i) {
        if (a[i].size != b[i].size)
            throw std::logic_error("gradients_add: mismatched structures");
        for (Eigen::Index k = 0; k < a[i].size; ++k) a[i].data[k] += b[i].data[k];
    }
}

inline void gradients_scale(NetworkGradients& g, double s) {
    for (auto& sp : gradient_spans(g))
        for (Eigen::Index k = 0; k < sp.size; ++k) sp.data[k] *= s;
}

// Exact gradients of the squared-error loss 0.5 (yhat - target)^2, unrolled
// through every LSTM step.
inline NetworkGradients backward(const Network& net, const ForwardPass& pass,
                                 double target) {
    const Eigen::Index h = net.lstm.hidden_width();
    const Eigen::Index tau = pass.sequence.rows();
    if (pass.dense_inputs.size() != net.dense.size() ||
        pass.dense_acts.size() != net.dense.size() ||
        pass.dense_masks.size() != net.dense.size() || pass.lstm.a_path.cols() != h ||
        pass.lstm.a_path.rows() != tau ||
        pass.sequence.cols() != net.lstm.input_width() ||
        pass.lstm_mask.size() != h)
        throw std::logic_error("backward: cached activations do not match the network");

    NetworkGradients g = make_gradients(net);

    // Dense stack, output first.
    Eigen::VectorXd dx(1);
    dx(0) = pass.prediction - target;
    for (std::size_t li = net.dense.size(); li-- > 0;) {
        const DenseLayer& d = net.dense[li];
        const Eigen::VectorXd da = dx.cwiseProduct(pass.dense_masks[li]);
        Eigen::VectorXd dz(da.size());
        for (Eigen::Index i = 0; i < da.size(); ++i)
            dz(i) = da(i) * detail::activation_grad(d.activation,
                                                    pass.dense_acts[li](i));
        g.dense[li].weights = dz * pass.dense_inputs[li].transpose();
        g.dense[li].biases = dz;
        dx = d.weights.transpose() * dz;
    }

    // Through the concat point and the LSTM output dropout.
    Eigen::VectorXd da_next = dx.head(h).cwiseProduct(pass.lstm_mask);
    Eigen::VectorXd dc_next = Eigen::VectorXd::Zero(h);

    for (Eigen::Index t = tau - 1; t >= 0; --t) {
        const Eigen::VectorXd u = pass.sequence.row(t).transpose();
        const Eigen::VectorXd a_prev =
            t > 0 ? pass.lstm.a_path.row(t - 1).transpose().eval()
                  : Eigen::VectorXd::Zero(h).eval();
        const Eigen::VectorXd c_prev =
            t > 0 ? pass.lstm.c_path.row(t - 1).transpose().eval()
                  : Eigen::VectorXd::Zero(h).eval();
        const Eigen::VectorXd ct = pass.lstm.ctilde.row(t).transpose();
        const Eigen::VectorXd gu = pass.lstm.g_u.row(t).transpose();
        const Eigen::VectorXd gf = pass.lstm.g_f.row(t).transpose();
        const Eigen::VectorXd go = pass.lstm.g_o.row(t).transpose();
        const Eigen::VectorXd tanh_c =
            pass.lstm.c_path.row(t).transpose().array().tanh().matrix();

        Eigen::VectorXd dz_o(h), dz_c(h), dz_u(h), dz_f(h), dc(h);
        for (Eigen::Index i = 0; i < h; ++i) {
            dz_o(i) = da_next(i) * tanh_c(i) * go(i) * (1.0 - go(i));
            dc(i) = da_next(i) * go(i) * (1.0 - tanh_c(i) * tanh_c(i)) + dc_next(i);
            dz_u(i) = dc(i) * ct(i) * gu(i) * (1.0 - gu(i));
            dz_c(i) = dc(i) * gu(i) * (1.0 - ct(i) * ct(i));
            dz_f(i) = dc(i) * c_prev(i) * gf(i) * (1.0 - gf(i));
            dc_next(i) = dc(i) * gf(i);
        }
        g.lstm.w_xc += dz_c * u.transpose();
        g.lstm.w_xu += dz_u * u.transpose();
        g.lstm.w_xf += dz_f * u.transpose();
        g.lstm.w_xo += dz_o * u.transpose();
        g.lstm.w_ac += dz_c * a_prev.transpose();
        g.lstm.w_au += dz_u * a_prev.transpose();
        g.lstm.w_af += dz_f * a_prev.transpose();
        g.lstm.w_ao += dz_o * a_prev.transpose();
        g.lstm.b_c += dz_c;
        g.lstm.b_u += dz_u;
        g.lstm.b_f += dz_f;
        g.lstm.b_o += dz_o;
        da_next = net.lstm.w_ac.transpose() * dz_c + net.lstm.w_au.transpose() * dz_u +
                  net.lstm.w_af.transpose() * dz_f + net.lstm.w_ao.transpose() * dz_o;
    }
    return g;
}

// Central finite differences against the analytic gradient on a sample of
// parameters; dropout is forced off (rates zeroed on a copy).
inline double gradcheck(const Network& net, const Eigen::MatrixXd& sequence,
                        const Eigen::VectorXd& one_hot, double target,
                        int n_samples = 200, std::uint64_t seed = 0) {
    Network work = net;
    work.lstm.dropout = 0.0;
    for (auto& d : work.dense) d.dropout = 0.0;

    Rng rng(seed);
    const ForwardPass pass = network_forward(work, sequence, one_hot, true, rng);
    NetworkGradients grads = backward(work, pass, target);
    auto pspan = parameter_spans(work);
    auto gspan = gradient_spans(grads);

    Eigen::Index total = 0;
    for (const auto& s : pspan) total += s.size;
    auto loss_now = [&]() {
        const double y = predict(work, sequence, one_hot);
        return 0.5 * (y - target) * (y - target);
    };

    const double hstep = 1e-4;
    double worst = 0.0;
    const Eigen::Index n_checks =
        std::min<Eigen::Index>(total, std::max(1, n_samples));
    for (Eigen::Index k = 0; k < n_checks; ++k) {
        Eigen::Index flat = static_cast<Eigen::Index>(
            rng.below(static_cast<std::uint64_t>(total)));
        std::size_t si = 0;
        while (flat >= pspan[si].size) {
            flat -= pspan[si].size;
            ++si;
        }
        double& p = pspan[si].data[flat];
        const double ga = gspan[si].data[flat];
        const double saved = p;
        p = saved + hstep;
        const double lp = loss_now();
        p = saved - hstep;
        const double lm = loss_now();
        p = saved;
        const double gn = (lp - lm) / (2.0 * hstep);
        const double rel =
            std::abs(ga - gn) / std::max(std::abs(ga) + std::abs(gn), 1e-8);
        worst = std::max(worst, rel);
    }
    return worst;
}

// ---- optimizer --------------------------------------------------------------

struct AdamState {
    Eigen::VectorXd m, v;  // flat, in canonical span order
    long step = 0;
    double learning_rate = 1e-3;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double epsilon = 1e-8;
};

inline AdamState make_adam_state(const Network& net, double learning_rate = 1e-3) {
    AdamState st;
    st.learning_rate = learning_rate;
    const Eigen::Index n = count_parameters(net);
    st.m = Eigen::VectorXd::Zero(n);
    st.v = Eigen::VectorXd::Zero(n);
    return st;
}

inline void adam_step(Network& net, const NetworkGradients& grads, AdamState& st) {
    auto pspan = parameter_spans(net);
    auto gspan = gradient_spans(const_cast<NetworkGradients&>(grads));
    st.step += 1;
    const double bc1 = 1.0 - std::pow(st.beta1, double(st.step));
    const double bc2 = 1.0 - std::pow(st.beta2, double(st.step));
    Eigen::Index off = 0;
    for (std::size_t si = 0; si < pspan.size(); ++si) {
        if (pspan[si].size != gspan[si].size)
            throw std::logic_error("adam_step: gradient shape mismatch");
        for (Eigen::Index k = 0; k < pspan[si].size; ++k, ++off) {
            const double gr = gspan[si].data[k];
            st.m(off) = st.beta1 * st.m(off) + (1.0 - st.beta1) * gr;
            st.v(off) = st.beta2 * st.v(off) + (1.0 - st.beta2) * gr * gr;
            const double mhat = st.m(off) / bc1;
            const double vhat = st.v(off) / bc2;
            pspan[si].data[k] -= st.learning_rate * mhat / (std::sqrt(vhat) + st.epsilon);
        }
    }
    if (off != st.m.size()) throw std::logic_error("adam_step: state size mismatch");
}

// ---- training ---------------------------------------------------------------

// Pooled training examples.  Example k occupies rows [k*tau, (k+1)*tau) of
// `features`; `one_hot` has one row per example (0 columns when unused).
struct TrainingSet {
    Eigen::MatrixXd features;
    Eigen::Index tau = 0;
    Eigen::MatrixXd one_hot;
    Eigen::VectorXd targets;

    Eigen::Index size() const { return targets.size(); }

    void validate(const Network& net) const {
        if (tau < 1 || size() < 1)
            throw std::invalid_argument("TrainingSet: need tau >= 1 and examples");
        if (features.rows() != tau * size() ||
            features.cols() != net.lstm.input_width())
            throw std::invalid_argument("TrainingSet: feature block shape mismatch");
        if (net.concat_one_hot_after_lstm &&
            (one_hot.rows() != size() || one_hot.cols() != net.one_hot_width))
            throw std::invalid_argument("TrainingSet: one-hot shape mismatch");
    }
};

struct TrainingConfig {
    int epochs = 100;
    int batch_size = 256;
    double learning_rate = 1e-3;
    std::uint64_t rng_seed = 0;
    bool dropout_enabled = true;
    int patience = 10;          // early stop on validation MSE; <= 0 disables
    double val_fraction = 0.1;  // tail split
    int threads = 1;

    void validate() const {
        if (epochs < 1 || batch_size < 1 || learning_rate <= 0.0)
            throw std::invalid_argument(
                "TrainingConfig: epochs, batch size, learning rate must be positive");
        if (val_fraction < 0.0 || val_fraction >= 1.0)
            throw std::invalid_argument("TrainingConfig: val_fraction outside [0,1)");
    }
};

struct TrainResult {
    std::vector<double> train_mse;  // one entry per completed epoch
    std::vector<double> val_mse;    // empty when no validation split
    int best_epoch = 0;
    bool stopped_early = false;
};

// Mini-batch adaptive-moment training with a seeded shuffle per epoch.
// Dropout masks derive from (seed, epoch, example index), so results are
// bit-identical for any thread count; batches are reduced in fixed chunks.
// Early stopping keeps the final parameters and reports the best epoch.
inline TrainResult train(Network& net, const TrainingSet& data,
                         const TrainingConfig& cfg) {
    cfg.validate();
    net.validate();
    data.validate(net);
    const Eigen::Index k_total = data.size();
    const Eigen::Index n_val = static_cast<Eigen::Index>(
        std::floor(double(k_total) * cfg.val_fraction));
    const Eigen::Index n_train = k_total - n_val;
    if (n_train < 1)
        throw std::invalid_argument("train: validation split leaves no training data");

    AdamState adam = make_adam_state(net, cfg.learning_rate);
    Rng shuffle_rng(cfg.rng_seed);
    std::vector<Eigen::Index> order(static_cast<std::size_t>(n_train));
    for (Eigen::Index i = 0; i < n_train; ++i) order[std::size_t(i)] = i;

    const Eigen::VectorXd no_one_hot;
    auto example_seq = [&](Eigen::Index k) {
        return data.features.middleRows(k * data.tau, data.tau);
    };
    auto example_hot = [&](Eigen::Index k) -> Eigen::VectorXd {
        if (!net.concat_one_hot_after_lstm) return no_one_hot;
        return data.one_hot.row(k).transpose();
    };

    // Fixed-size chunks make the parallel reduction independent of the
    // thread count.
    constexpr Eigen::Index kChunk = 16;
    const Eigen::Index max_chunks =
        (std::min<Eigen::Index>(cfg.batch_size, n_train) + kChunk - 1) / kChunk;
    std::vector<NetworkGradients> chunk_grads;
    std::vector<double> chunk_sqerr(static_cast<std::size_t>(max_chunks));
    for (Eigen::Index i = 0; i < max_chunks; ++i)
        chunk_grads.push_back(make_gradients(net));

    TrainResult result;
    double best_metric = std::numeric_limits<double>::infinity();
    int since_best = 0;

    for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
        shuffle(order, shuffle_rng);
        double epoch_sqerr = 0.0;
        for (Eigen::Index start = 0; start < n_train; start += cfg.batch_size) {
            const Eigen::Index count =
                std::min<Eigen::Index>(cfg.batch_size, n_train - start);
            const Eigen::Index n_chunks = (count + kChunk - 1) / kChunk;
            parallel_for(static_cast<std::size_t>(n_chunks), cfg.threads,
                         [&](std::size_t ci) {
                NetworkGradients& acc = chunk_grads[ci];
                gradients_scale(acc, 0.0);
                double sqerr = 0.0;
                const Eigen::Index lo = start + Eigen::Index(ci) * kChunk;
                const Eigen::Index hi = std::min(lo + kChunk, start + count);
                for (Eigen::Index pos = lo; pos < hi; ++pos) {
                    const Eigen::Index k = order[std::size_t(pos)];
                    Rng mask_rng(detail::mix_seed(
                        cfg.rng_seed,
                        std::uint64_t(epoch) * std::uint64_t(k_total) +
                            std::uint64_t(k)));
                    const bool use_dropout = cfg.dropout_enabled;
                    const ForwardPass pass = network_forward(
                        net, example_seq(k), example_hot(k), use_dropout, mask_rng);
                    const double err = pass.prediction - data.targets(k);
                    sqerr += err * err;
                    gradients_add(acc, backward(net, pass, data.targets(k)));
                }
                chunk_sqerr[ci] = sqerr;
            });
            NetworkGradients& total = chunk_grads[0];
            for (Eigen::Index ci = 1; ci < n_chunks; ++ci) {
                gradients_add(total, chunk_grads[std::size_t(ci)]);
                chunk_sqerr[0] += chunk_sqerr[std::size_t(ci)];
            }
            epoch_sqerr += chunk_sqerr[0];
            gradients_scale(total, 1.0 / double(count));
            adam_step(net, total, adam);
        }
        const double train_mse = epoch_sqerr / double(n_train);
        if (!std::isfinite(train_mse))
            throw std::runtime_error(
                "train: loss became non-finite at epoch " + std::to_string(epoch) +
                "; lower learning_rate or rescale the targets");
        result.train_mse.push_back(train_mse);

        double metric = train_mse;
        if (n_val > 0) {
            double val_sqerr = 0.0;
            for (Eigen::Index k = n_train; k < k_total; ++k) {
                const double err =
                    predict(net, example_seq(k), example_hot(k)) - data.targets(k);
                val_sqerr += err * err;
            }
            const double val_mse = val_sqerr / double(n_val);
            result.val_mse.push_back(val_mse);
            metric = val_mse;
        }
        if (metric < best_metric) {
            best_metric = metric;
            result.best_epoch = epoch;
            since_best = 0;
        } else if (cfg.patience > 0 && ++since_best >= cfg.patience) {
            result.stopped_early = true;
            break;
        }
    }
    return result;
}

// ---- serialization ----------------------------------------------------------

namespace detail {

inline nlohmann::json matrix_to_json(const Eigen::MatrixXd& m) {
    nlohmann::json arr = nlohmann::json::array();
    for (Eigen::Index i = 0; i < m.size(); ++i) arr.push_back(m.data()[i]);
    return nlohmann::json{{"rows", m.rows()}, {"cols", m.cols()}, {"data", arr}};
}

inline Eigen::MatrixXd matrix_from_json(const nlohmann::json& doc) {
    Eigen::MatrixXd m(doc.at("rows").get<Eigen::Index>(),
                      doc.at("cols").get<Eigen::Index>());
    const auto& arr = doc.at("data");
    if (static_cast<Eigen::Index>(arr.size()) != m.size())
        throw std::runtime_error("matrix_from_json: shape manifest mismatch");
    for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = arr[std::size_t(i)];
    return m;
}

}  // namespace detail

inline nlohmann::json network_to_json(const Network& net) {
    nlohmann::json lstm{
        {"w_xc", detail::matrix_to_json(net.lstm.w_xc)},
        {"w_xu", detail::matrix_to_json(net.lstm.w_xu)},
        {"w_xf", detail::matrix_to_json(net.lstm.w_xf)},
        {"w_xo", detail::matrix_to_json(net.lstm.w_xo)},
        {"w_ac", detail::matrix_to_json(net.lstm.w_ac)},
        {"w_au", detail::matrix_to_json(net.lstm.w_au)},
        {"w_af", detail::matrix_to_json(net.lstm.w_af)},
        {"w_ao", detail::matrix_to_json(net.lstm.w_ao)},
        {"b_c", detail::matrix_to_json(net.lstm.b_c)},
        {"b_u", detail::matrix_to_json(net.lstm.b_u)},
        {"b_f", detail::matrix_to_json(net.lstm.b_f)},
        {"b_o", detail::matrix_to_json(net.lstm.b_o)},
        {"dropout", net.lstm.dropout}};
    nlohmann::json dense = nlohmann::json::array();
    for (const auto& d : net.dense)
        dense.push_back(nlohmann::json{{"weights", detail::matrix_to_json(d.weights)},
                                       {"biases", detail::matrix_to_json(d.biases)},
                                       {"activation", to_string(d.activation)},
                                       {"dropout", d.dropout}});
    return nlohmann::json{{"format", "covarcast-network"},
                          {"version", 1},
                          {"lstm", lstm},
                          {"dense", dense},
                          {"concat_one_hot_after_lstm", net.concat_one_hot_after_lstm},
                          {"one_hot_width", net.one_hot_width},
                          {"rng_seed", net.rng_seed}};
}

inline Network network_from_json(const nlohmann::json& doc) {
    if (!doc.contains("format") || doc.at("format") != "covarcast-network")
        throw std::runtime_error("network_from_json: unrecognized document format");
    Network net;
    const auto& l = doc.at("lstm");
    net.lstm.w_xc = detail::matrix_from_json(l.at("w_xc"));
    net.lstm.w_xu = detail::matrix_from_json(l.at("w_xu"));
    net.lstm.w_xf = detail::matrix_from_json(l.at("w_xf"));
    net.lstm.w_xo = detail::matrix_from_json(l.at("w_xo"));
    net.lstm.w_ac = detail::matrix_from_json(l.at("w_ac"));
    net.lstm.w_au = detail::matrix_from_json(l.at("w_au"));
    net.lstm.w_af = detail::matrix_from_json(l.at("w_af"));
    net.lstm.w_ao = detail::matrix_from_json(l.at("w_ao"));
    net.lstm.b_c = detail::matrix_from_json(l.at("b_c"));
    net.lstm.b_u = detail::matrix_from_json(l.at("b_u"));
    net.lstm.b_f = detail::matrix_from_json(l.at("b_f"));
    net.lstm.b_o = detail::matrix_from_json(l.at("b_o"));
    net.lstm.dropout = l.at("dropout").get<double>();
    for (const auto& d : doc.at("dense")) {
        DenseLayer layer;
        layer.weights = detail::matrix_from_json(d.at("weights"));
        layer.biases = detail::matrix_from_json(d.at("biases"));
        layer.activation = activation_from_string(d.at("activation").get<std::string>());
        layer.dropout = d.at("dropout").get<double>();
        net.dense.push_back(std::move(layer));
    }
    net.concat_one_hot_after_lstm = doc.at("concat_one_hot_after_lstm").get<bool>();
    net.one_hot_width = doc.at("one_hot_width").get<Eigen::Index>();
    net.rng_seed = doc.at("rng_seed").get<std::uint64_t>();
    net.validate();
    return net;
}

}  // namespace covarcast
