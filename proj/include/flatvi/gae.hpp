#ifndef FLATVI_GAE_HPP_
#define FLATVI_GAE_HPP_

#include "assignment.hpp"
#include "nb_vae.hpp"
#include "taped_mlp.hpp"

namespace flatvi {

struct DiffusionOperators {
    Matrix kernel;      // K_eps
    Matrix normalized;  // M_eps = Q^-1 K Q^-1
    Matrix diffusion;   // P_eps = D^-1 M, row-stochastic
    Vector stationary;  // pi
};

inline DiffusionOperators build_diffusion_operators(const Matrix &x, double eps)
{
    if (!(eps > 0.0)) throw DomainError("build_diffusion_operators: eps must be positive");
    if (x.rows() < 2) throw DomainError("build_diffusion_operators: need at least two points");
    DiffusionOperators ops;
    ops.kernel = (-squared_distance_matrix(x, x) / eps).array().exp();
    const Vector q = ops.kernel.rowwise().sum();
    ops.normalized = ops.kernel.array().colwise() / q.array();
    ops.normalized = ops.normalized.array().rowwise() / q.transpose().array();
    const Vector deg = ops.normalized.rowwise().sum();
    ops.diffusion = ops.normalized.array().colwise() / deg.array();
    ops.stationary = deg / deg.sum();
    return ops;
}

/// Median squared pairwise distance over distinct pairs; the kernel scale used
/// when none is given.
inline double median_squared_distance(const Matrix &x)
{
    std::vector<double> d2;
    for (Eigen::Index i = 0; i < x.rows(); ++i)
        for (Eigen::Index j = i + 1; j < x.rows(); ++j) d2.push_back((x.row(i) - x.row(j)).squaredNorm());
    if (d2.empty()) throw DomainError("median_squared_distance: need at least two points");
    const auto mid = d2.begin() + static_cast<std::ptrdiff_t>(d2.size() / 2);
    std::nth_element(d2.begin(), mid, d2.end());
    double med = *mid;
    if (d2.size() % 2 == 0) med = 0.5 * (med + *std::max_element(d2.begin(), mid));
    return med > 0.0 ? med : 1.0;
}

/// G(i,j) = sum_{k=0..K} 2^{-(K-k) alpha} |P^{2^k}_i - P^{2^k}_j|_1 + 2^{-(K+1)/2} |pi_i - pi_j|.
/// Powers come from repeated squaring.
inline Matrix diffusion_geodesic_distance(const DiffusionOperators &ops, std::size_t scales = 4, double alpha = 0.25)
{
    if (!(alpha > 0.0 && alpha < 0.5)) throw DomainError("diffusion_geodesic_distance: alpha must lie in (0, 1/2)");
    const Eigen::Index n = ops.diffusion.rows();
    Matrix g = Matrix::Zero(n, n);
    Matrix power = ops.diffusion;
    const auto big_k = static_cast<double>(scales);
    for (std::size_t k = 0; k <= scales; ++k) {
        if (k > 0) power = power * power;
        const double w = std::pow(2.0, -(big_k - static_cast<double>(k)) * alpha);
        for (Eigen::Index i = 0; i < n; ++i)
            for (Eigen::Index j = i + 1; j < n; ++j) {
                const double v = w * (power.row(i) - power.row(j)).cwiseAbs().sum();
                g(i, j) += v;
                g(j, i) += v;
            }
    }
    const double wpi = std::pow(2.0, -(big_k + 1.0) / 2.0);
    for (Eigen::Index i = 0; i < n; ++i)
        for (Eigen::Index j = i + 1; j < n; ++j) {
            const double v = wpi * std::abs(ops.stationary(i) - ops.stationary(j));
            g(i, j) += v;
            g(j, i) += v;
        }
    return g;
}

/// Median-total-count normalisation followed by log1p.
inline Matrix log_normalize(const Matrix &counts)
{
    const Vector totals = counts.rowwise().sum();
    std::vector<double> sorted(totals.data(), totals.data() + totals.size());
    if (sorted.empty()) throw DomainError("log_normalize: empty matrix");
    std::sort(sorted.begin(), sorted.end());
    const std::size_t n = sorted.size();
    const double median = n % 2 ? sorted[n / 2] : 0.5 * (sorted[n / 2 - 1] + sorted[n / 2]);
    Matrix out(counts.rows(), counts.cols());
    for (Eigen::Index i = 0; i < counts.rows(); ++i) {
        if (!(totals(i) > 0.0)) throw DomainError("log_normalize: cell " + std::to_string(i) + " has no counts");
        out.row(i) = (counts.row(i) * (median / totals(i))).array().log1p();
    }
    return out;
}

struct GaeModel {
    Mlp encoder;
    Mlp decoder;

    Eigen::Index latent_dim() const { return encoder.out_dim(); }
    Matrix embed(const Matrix &x) const { return mlp_forward(encoder, x); }

    std::vector<std::span<double>> parameters()
    {
        auto p = encoder.parameters();
        auto q = decoder.parameters();
        p.insert(p.end(), q.begin(), q.end());
        return p;
    }
};

struct GaeConfig {
    double lr = 1e-3;
    std::size_t batch_size = 256;
    std::size_t max_epochs = 100;
    std::size_t scales = 4;
    double alpha = 0.25;
    std::uint64_t seed = 0;
    std::vector<std::size_t> hidden{256};
};

inline GaeModel make_gae_model(std::size_t genes, std::size_t latent_dim, const std::vector<std::size_t> &hidden,
                               Rng &rng)
{
    std::vector<std::size_t> enc{genes};
    enc.insert(enc.end(), hidden.begin(), hidden.end());
    enc.push_back(latent_dim);
    std::vector<std::size_t> dec(enc.rbegin(), enc.rend());
    GaeModel m;
    m.encoder = make_mlp(enc, Activation::elu, Activation::identity, rng);
    m.decoder = make_mlp(dec, Activation::elu, Activation::identity, rng);
    return m;
}

struct GaeLoss {
    double total = 0.0;
    double reconstruction = 0.0;
    double geodesic = 0.0;
    std::vector<Matrix> grads;
};

/// Mean squared reconstruction error plus (2/B) sum_{i<j} (|f_i - f_j| - G_ij)^2.
inline GaeLoss gae_loss(const GaeModel &model, const Matrix &x, const Matrix &target_distances, bool with_grad = true)
{
    using namespace ad;
    require_dims(target_distances.rows() == x.rows() && target_distances.cols() == x.rows(),
                 "gae_loss: distance matrix shape mismatch");
    const auto b = static_cast<double>(x.rows());
    Tape tape;
    TapedMlp enc = bind(tape, model.encoder, with_grad);
    TapedMlp dec = bind(tape, model.decoder, with_grad);
    Var in = tape.constant(x);
    Var f = forward(enc, in);
    Var recon = scale(sum(square(sub(forward(dec, f), in))), 1.0 / (b * static_cast<double>(x.cols())));
    // The full symmetric sum counts every unordered pair twice.
    Var geo = scale(sum(square(sub(pairwise_distances(f), tape.constant(target_distances)))), 1.0 / b);
    Var total = add(recon, geo);
    GaeLoss out;
    out.total = total.value()(0, 0);
    out.reconstruction = recon.value()(0, 0);
    out.geodesic = geo.value()(0, 0);
    if (!std::isfinite(out.total)) throw TrainingError("gae_loss: non-finite loss");
    if (!with_grad) return out;
    tape.backward(total);
    for (Var v : parameter_vars(enc)) out.grads.push_back(tape.grad(v));
    for (Var v : parameter_vars(dec)) out.grads.push_back(tape.grad(v));
    return out;
}

struct TrainedGae {
    GaeModel model;
    std::vector<double> loss_trace;  // mean batch loss per epoch
};

/// Trains on log-normalised expression; the diffusion graph is rebuilt on every
/// minibatch with eps set to the batch's median squared distance.
inline TrainedGae train_gae(const Matrix &x_lognorm, std::size_t latent_dim, const GaeConfig &config)
{
    const auto n = static_cast<std::size_t>(x_lognorm.rows());
    if (config.batch_size < 2) throw DomainError("train_gae: batch_size must be at least 2");
    if (n < config.batch_size) throw DomainError("train_gae: fewer cells than batch_size");
    if (!x_lognorm.allFinite()) throw DomainError("train_gae: non-finite input");
    Rng rng(config.seed);
    TrainedGae out;
    out.model = make_gae_model(static_cast<std::size_t>(x_lognorm.cols()), latent_dim, config.hidden, rng);
    auto params = out.model.parameters();
    AdamState adam = make_adam(params, config.lr);
    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), 0);
    for (std::size_t epoch = 0; epoch < config.max_epochs; ++epoch) {
        std::shuffle(order.begin(), order.end(), rng);
        double epoch_loss = 0.0;
        std::size_t batches = 0;
        for (std::size_t start = 0; start + 1 < n; start += config.batch_size) {
            const std::size_t stop = std::min(n, start + config.batch_size);
            std::vector<std::size_t> idx(order.begin() + static_cast<std::ptrdiff_t>(start),
                                         order.begin() + static_cast<std::ptrdiff_t>(stop));
            const Matrix batch = take_rows(x_lognorm, idx);
            const auto ops = build_diffusion_operators(batch, median_squared_distance(batch));
            const Matrix target = diffusion_geodesic_distance(ops, config.scales, config.alpha);
            try {
                GaeLoss l = gae_loss(out.model, batch, target);
                adam_step(params, l.grads, adam);
                epoch_loss += l.total;
            } catch (const TrainingError &e) {
                throw DivergenceError(std::string("train_gae: epoch ") + std::to_string(epoch) + ": " + e.what(),
                                      out.loss_trace);
            }
            ++batches;
        }
        out.loss_trace.push_back(epoch_loss / static_cast<double>(batches));
    }
    return out;
}

}  // namespace flatvi

#endif  // FLATVI_GAE_HPP_
