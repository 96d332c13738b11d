#ifndef FLATVI_TAPED_MLP_HPP_
#define FLATVI_TAPED_MLP_HPP_

#include "autodiff.hpp"

namespace flatvi::ad {

struct TapedLayer {
    Var weight;
    Var bias;
    Activation activation;
};

using TapedMlp = std::vector<TapedLayer>;

/// Records the network's parameters on the tape, as variables when
/// `trainable`, otherwise as constants.
inline TapedMlp bind(Tape &tape, const Mlp &net, bool trainable)
{
    TapedMlp out;
    for (const auto &l : net.layers) {
        Matrix b = l.bias;
        if (trainable)
            out.push_back({tape.variable(l.weight), tape.variable(std::move(b)), l.activation});
        else
            out.push_back({tape.constant(l.weight), tape.constant(std::move(b)), l.activation});
    }
    return out;
}

/// Parameter handles in the order of Mlp::parameters().
inline std::vector<Var> parameter_vars(const TapedMlp &net)
{
    std::vector<Var> out;
    for (const auto &l : net) {
        out.push_back(l.weight);
        out.push_back(l.bias);
    }
    return out;
}

inline Var forward(const TapedMlp &net, Var x)
{
    Var a = x;
    for (const auto &l : net) {
        Var pre = add_row(matmul_nt(a, l.weight), l.bias);
        a = l.activation == Activation::softmax ? softmax_rows(pre) : activation(pre, l.activation);
    }
    return a;
}

struct TangentPair {
    Var value;    // B x out
    Var tangent;  // B*dirs x out
};

/// Forward pass carrying `dirs` tangent directions per input row. Row
/// b*dirs + i of the output tangent is the directional derivative of output
/// row b along input tangent row b*dirs + i.
inline TangentPair forward_with_tangent(const TapedMlp &net, Var x, Var tangent, Eigen::Index dirs)
{
    require_dims(tangent.rows() == x.rows() * dirs && tangent.cols() == x.cols(),
                 "forward_with_tangent: tangent shape mismatch");
    Var a = x;
    Var t = tangent;
    for (const auto &l : net) {
        Var pre = add_row(matmul_nt(a, l.weight), l.bias);
        Var tpre = matmul_nt(t, l.weight);
        switch (l.activation) {
        case Activation::softmax: {
            Var s = softmax_rows(pre);
            Var srep = repeat_rows(s, dirs);
            Var dots = row_sum(mul(srep, tpre));
            t = mul(srep, sub_col(tpre, dots));
            a = s;
            break;
        }
        case Activation::identity:
            a = pre;
            t = tpre;
            break;
        default:
            t = mul(repeat_rows(activation_derivative(pre, l.activation), dirs), tpre);
            a = activation(pre, l.activation);
        }
    }
    return {a, t};
}

/// B stacked copies of the d x d identity, the tangent seed for a full Jacobian.
inline Matrix stacked_identity(Eigen::Index batch, Eigen::Index d)
{
    Matrix out(batch * d, d);
    for (Eigen::Index b = 0; b < batch; ++b) out.middleRows(b * d, d).setIdentity();
    return out;
}

}  // namespace flatvi::ad

#endif  // FLATVI_TAPED_MLP_HPP_
