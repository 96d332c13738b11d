#ifndef FLATVI_FISHER_HPP_
#define FLATVI_FISHER_HPP_

#include "taped_mlp.hpp"

namespace flatvi {

/// A d x d pullback metric at one latent point.
struct MetricTensor {
    Matrix entries;

    Eigen::Index dim() const { return entries.rows(); }
};

/// Fisher information of NB(mu, theta) w.r.t. the mean, per gene:
/// theta / (mu (mu + theta)).
inline RowVector nb_fim_weights(const RowVector &mu, const RowVector &theta)
{
    require_dims(mu.size() == theta.size(), "nb_fim_weights: mu/theta length mismatch");
    if ((mu.array() <= 0.0).any() || (theta.array() <= 0.0).any())
        throw DomainError("nb_fim_weights: mu and theta must be positive");
    return theta.array() / (mu.array() * (mu.array() + theta.array()));
}

/// M = sum_g w_g grad h_g grad h_g^T for a mean map with Jacobian `jac_mu`
/// (G x d) evaluated where the mean is `mu`.
inline MetricTensor pullback_from_mean_jacobian(const RowVector &mu, const Matrix &jac_mu,
                                                const RowVector &theta)
{
    require_dims(jac_mu.rows() == mu.size(), "pullback: Jacobian rows must equal genes");
    if (!jac_mu.allFinite()) throw DomainError("pullback: non-finite Jacobian");
    const RowVector w = nb_fim_weights(mu, theta);
    const Eigen::Index d = jac_mu.cols();
    Matrix m = Matrix::Zero(d, d);
    for (Eigen::Index g = 0; g < jac_mu.rows(); ++g)
        for (Eigen::Index i = 0; i < d; ++i)
            for (Eigen::Index j = i; j < d; ++j) m(i, j) += w(g) * jac_mu(g, i) * jac_mu(g, j);
    for (Eigen::Index i = 0; i < d; ++i)
        for (Eigen::Index j = 0; j < i; ++j) m(i, j) = m(j, i);
    return {std::move(m)};
}

/// Mean over the batch of ||M - alpha I||_F^2.
inline double flattening_loss(const std::vector<MetricTensor> &metrics, double alpha)
{
    require_dims(!metrics.empty(), "flattening_loss: empty batch");
    if (!(alpha > 0.0)) throw DomainError("flattening_loss: alpha must be positive");
    const Eigen::Index d = metrics.front().dim();
    double total = 0.0;
    for (const auto &m : metrics) {
        require_dims(m.dim() == d && m.entries.cols() == d, "flattening_loss: metric dims differ");
        total += (m.entries - alpha * Matrix::Identity(d, d)).squaredNorm();
    }
    return total / static_cast<double>(metrics.size());
}

namespace ad {

struct TapedDecode {
    Var softmax;  // B x G proportions
    Var mean;     // B x G NB means
    Var metrics;  // B*d x d stacked pullback metrics (unset when not requested)
    bool has_metrics = false;
};

/// Decoder means for latent rows `z` with size factors `size_factors` (B x 1),
/// optionally with the NB pullback metric at every row.
inline TapedDecode decode_with_metric(const TapedMlp &decoder, Var z, const Matrix &size_factors,
                                      Var theta, bool with_metric)
{
    Tape &tape = *z.tape;
    const Eigen::Index batch = z.rows();
    const Eigen::Index d = z.cols();
    Var lcol = tape.constant(size_factors);
    TapedDecode out;
    if (!with_metric) {
        out.softmax = forward(decoder, z);
        out.mean = mul_col(out.softmax, lcol);
        return out;
    }
    auto fwd = forward_with_tangent(decoder, z, tape.constant(stacked_identity(batch, d)), d);
    out.softmax = fwd.value;
    out.mean = mul_col(fwd.value, lcol);
    Matrix lrep(batch * d, 1);
    for (Eigen::Index b = 0; b < batch; ++b) lrep.middleRows(b * d, d).setConstant(size_factors(b, 0));
    Var jac_mu = mul_col(fwd.tangent, tape.constant(std::move(lrep)));
    Var weights = mul_row(reciprocal(mul(out.mean, add_row(out.mean, theta))), theta);
    out.metrics = weighted_gram(jac_mu, weights, d);
    out.has_metrics = true;
    return out;
}

/// Taped mean over the batch of ||M_b - alpha I||_F^2.
inline Var flattening_loss(Var metrics, Var alpha, Eigen::Index d)
{
    Tape &tape = *metrics.tape;
    const Eigen::Index batch = metrics.rows() / d;
    Var target = mul_scalar(tape.constant(stacked_identity(batch, d)), alpha);
    return scale(sum(square(sub(metrics, target))), 1.0 / static_cast<double>(batch));
}

}  // namespace ad
}  // namespace flatvi

#endif  // FLATVI_FISHER_HPP_
