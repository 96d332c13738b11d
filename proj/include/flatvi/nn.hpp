#ifndef FLATVI_NN_HPP_
#define FLATVI_NN_HPP_

#include "core.hpp"

#include <algorithm>
#include <span>
#include <string_view>

namespace flatvi {

enum class Activation { identity, elu, selu, softplus, softmax };

inline constexpr double kSeluAlpha = 1.6732632423543772848170429916717;
inline constexpr double kSeluScale = 1.0507009873554804934193349852946;

inline std::string_view to_string(Activation a)
{
    switch (a) {
    case Activation::identity: return "identity";
    case Activation::elu: return "elu";
    case Activation::selu: return "selu";
    case Activation::softplus: return "softplus";
    case Activation::softmax: return "softmax";
    }
    return "identity";
}

inline Activation activation_from_string(std::string_view s)
{
    for (auto a : {Activation::identity, Activation::elu, Activation::selu, Activation::softplus,
                   Activation::softmax})
        if (to_string(a) == s) return a;
    throw ParseError("unknown activation '" + std::string(s) + "'");
}

namespace act {

// Scalar activation, first and second derivative. The kink of ELU/SELU at 0
// takes the right-hand derivative.
inline double value(Activation a, double x)
{
    switch (a) {
    case Activation::elu: return x >= 0.0 ? x : std::expm1(x);
    case Activation::selu: return kSeluScale * (x >= 0.0 ? x : kSeluAlpha * std::expm1(x));
    case Activation::softplus: return x > 30.0 ? x : std::log1p(std::exp(x));
    default: return x;
    }
}

inline double d1(Activation a, double x)
{
    switch (a) {
    case Activation::elu: return x >= 0.0 ? 1.0 : std::exp(x);
    case Activation::selu: return kSeluScale * (x >= 0.0 ? 1.0 : kSeluAlpha * std::exp(x));
    case Activation::softplus: return 1.0 / (1.0 + std::exp(-x));
    default: return 1.0;
    }
}

inline double d2(Activation a, double x)
{
    switch (a) {
    case Activation::elu: return x >= 0.0 ? 0.0 : std::exp(x);
    case Activation::selu: return x >= 0.0 ? 0.0 : kSeluScale * kSeluAlpha * std::exp(x);
    case Activation::softplus: {
        const double s = 1.0 / (1.0 + std::exp(-x));
        return s * (1.0 - s);
    }
    default: return 0.0;
    }
}

}  // namespace act

inline Matrix softmax_rows(const Matrix &x)
{
    Matrix out(x.rows(), x.cols());
    for (Eigen::Index i = 0; i < x.rows(); ++i) {
        const double m = x.row(i).maxCoeff();
        out.row(i) = (x.row(i).array() - m).exp().matrix();
        out.row(i) /= out.row(i).sum();
    }
    return out;
}

inline Matrix apply_activation(Activation a, const Matrix &pre)
{
    if (a == Activation::softmax) return softmax_rows(pre);
    if (a == Activation::identity) return pre;
    return pre.unaryExpr([a](double v) { return act::value(a, v); });
}

struct Layer {
    Matrix weight;  // out x in
    RowVector bias; // out
    Activation activation = Activation::identity;
};

/// Dense feed-forward network; batches are rows, y = act(x W^T + b).
struct Mlp {
    std::vector<Layer> layers;

    Eigen::Index in_dim() const { return layers.empty() ? 0 : layers.front().weight.cols(); }
    Eigen::Index out_dim() const { return layers.empty() ? 0 : layers.back().weight.rows(); }

    std::vector<std::span<double>> parameters()
    {
        std::vector<std::span<double>> out;
        for (auto &l : layers) {
            out.emplace_back(l.weight.data(), static_cast<std::size_t>(l.weight.size()));
            out.emplace_back(l.bias.data(), static_cast<std::size_t>(l.bias.size()));
        }
        return out;
    }

    std::size_t parameter_count() const
    {
        std::size_t n = 0;
        for (const auto &l : layers) n += static_cast<std::size_t>(l.weight.size() + l.bias.size());
        return n;
    }
};

/// Glorot-uniform weights, zero biases. `sizes` lists every layer width
/// including input and output.
inline Mlp make_mlp(const std::vector<std::size_t> &sizes, Activation hidden, Activation output,
                    Rng &rng)
{
    require_dims(sizes.size() >= 2, "make_mlp: need at least input and output widths");
    Mlp net;
    for (std::size_t i = 0; i + 1 < sizes.size(); ++i) {
        const auto fan_in = static_cast<Eigen::Index>(sizes[i]);
        const auto fan_out = static_cast<Eigen::Index>(sizes[i + 1]);
        require_dims(fan_in > 0 && fan_out > 0, "make_mlp: zero-width layer");
        const double bound = std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
        std::uniform_real_distribution<double> dist(-bound, bound);
        Layer layer;
        layer.weight.resize(fan_out, fan_in);
        for (Eigen::Index k = 0; k < layer.weight.size(); ++k) layer.weight.data()[k] = dist(rng);
        layer.bias = RowVector::Zero(fan_out);
        layer.activation = (i + 2 == sizes.size()) ? output : hidden;
        net.layers.push_back(std::move(layer));
    }
    return net;
}

inline void check_mlp_shapes(const Mlp &net)
{
    for (std::size_t i = 0; i < net.layers.size(); ++i) {
        const auto &l = net.layers[i];
        require_dims(l.bias.size() == l.weight.rows(), "mlp: bias width mismatch");
        if (i > 0)
            require_dims(l.weight.cols() == net.layers[i - 1].weight.rows(),
                         "mlp: consecutive layer shapes do not compose");
    }
}

inline Matrix mlp_forward(const Mlp &net, const Matrix &x)
{
    require_dims(!net.layers.empty(), "mlp_forward: empty network");
    require_dims(x.cols() == net.in_dim(), "mlp_forward: input has " + std::to_string(x.cols()) +
                                               " columns, network expects " +
                                               std::to_string(net.in_dim()));
    Matrix a = x;
    for (const auto &l : net.layers) {
        Matrix pre = a * l.weight.transpose();
        pre.rowwise() += l.bias;
        a = apply_activation(l.activation, pre);
    }
    return a;
}

/// Exact Jacobian (out_dim x in_dim) at a single input by forward-mode chain rule.
inline Matrix mlp_jacobian(const Mlp &net, const Vector &z)
{
    require_dims(!net.layers.empty(), "mlp_jacobian: empty network");
    require_dims(z.size() == net.in_dim(), "mlp_jacobian: input width mismatch");
    if (!z.allFinite()) throw DomainError("mlp_jacobian: non-finite input");

    RowVector a = z.transpose();
    Matrix jac = Matrix::Identity(z.size(), z.size());
    for (const auto &l : net.layers) {
        RowVector pre = a * l.weight.transpose() + l.bias;
        jac = l.weight * jac;
        if (l.activation == Activation::softmax) {
            Matrix s = softmax_rows(pre);
            const RowVector srow = s.row(0);
            // (diag(s) - s s^T) J
            const RowVector sj = srow * jac;
            for (Eigen::Index r = 0; r < jac.rows(); ++r) jac.row(r) = srow(r) * (jac.row(r) - sj);
            a = srow;
        } else {
            for (Eigen::Index r = 0; r < jac.rows(); ++r) jac.row(r) *= act::d1(l.activation, pre(r));
            a = pre.unaryExpr([&](double v) { return act::value(l.activation, v); });
        }
    }
    return jac;
}

/// Central-difference Jacobian of f: R^n -> R^m; column i is
/// (f(z + h e_i) - f(z - h e_i)) / 2h.
template <class F>
Matrix finite_diff_jacobian(F &&f, const Vector &z, double h)
{
    if (!(h > 0.0)) throw DomainError("finite_diff_jacobian: step must be positive");
    const Vector f0 = f(z);
    Matrix jac(f0.size(), z.size());
    for (Eigen::Index i = 0; i < z.size(); ++i) {
        Vector zp = z, zm = z;
        zp(i) += h;
        zm(i) -= h;
        jac.col(i) = (f(zp) - f(zm)) / (2.0 * h);
    }
    return jac;
}

struct AdamState {
    std::vector<std::vector<double>> first_moment;
    std::vector<std::vector<double>> second_moment;
    std::uint64_t step = 0;
    double lr = 1e-3;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
};

inline AdamState make_adam(const std::vector<std::span<double>> &params, double lr = 1e-3)
{
    AdamState s;
    s.lr = lr;
    for (const auto &p : params) {
        s.first_moment.emplace_back(p.size(), 0.0);
        s.second_moment.emplace_back(p.size(), 0.0);
    }
    return s;
}

/// One bias-corrected Adam update in place. Throws TrainingError on a
/// non-finite gradient before touching any parameter.
inline void adam_step(const std::vector<std::span<double>> &params, const std::vector<Matrix> &grads,
                      AdamState &state)
{
    require_dims(params.size() == grads.size() && params.size() == state.first_moment.size(),
                 "adam_step: parameter/gradient/state count mismatch");
    for (std::size_t i = 0; i < params.size(); ++i) {
        require_dims(static_cast<std::size_t>(grads[i].size()) == params[i].size() &&
                         state.first_moment[i].size() == params[i].size(),
                     "adam_step: shape mismatch in parameter " + std::to_string(i));
        if (!grads[i].allFinite())
            throw TrainingError("adam_step: non-finite gradient in parameter " + std::to_string(i));
    }
    ++state.step;
    const double t = static_cast<double>(state.step);
    const double c1 = 1.0 - std::pow(state.beta1, t);
    const double c2 = 1.0 - std::pow(state.beta2, t);
    for (std::size_t i = 0; i < params.size(); ++i) {
        auto &m = state.first_moment[i];
        auto &v = state.second_moment[i];
        const double *g = grads[i].data();
        for (std::size_t k = 0; k < params[i].size(); ++k) {
            m[k] = state.beta1 * m[k] + (1.0 - state.beta1) * g[k];
            v[k] = state.beta2 * v[k] + (1.0 - state.beta2) * g[k] * g[k];
            params[i][k] -= state.lr * (m[k] / c1) / (std::sqrt(v[k] / c2) + state.eps);
        }
    }
}

}  // namespace flatvi

#endif  // FLATVI_NN_HPP_
