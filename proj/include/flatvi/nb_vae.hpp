#ifndef FLATVI_NB_VAE_HPP_
#define FLATVI_NB_VAE_HPP_

#include "fisher.hpp"

#include <numeric>

namespace flatvi {

/// Gaussian-posterior encoder, softmax mean decoder scaled by the size factor,
/// per-gene NB inverse dispersion and the trainable scale of the flat target.
struct FlatVIModel {
    Mlp encoder;       // G -> ... -> 2d  (mean | logvar)
    Mlp decoder;       // d -> ... -> G, softmax output
    RowVector log_theta;
    double log_alpha = 0.0;

    Eigen::Index genes() const { return decoder.out_dim(); }
    Eigen::Index latent_dim() const { return decoder.in_dim(); }
    RowVector theta() const { return log_theta.array().exp(); }
    double alpha() const { return std::exp(log_alpha); }

    /// Encoder params, decoder params, log_theta, log_alpha.
    std::vector<std::span<double>> parameters()
    {
        auto out = encoder.parameters();
        for (auto s : decoder.parameters()) out.push_back(s);
        out.emplace_back(log_theta.data(), static_cast<std::size_t>(log_theta.size()));
        out.emplace_back(&log_alpha, 1);
        return out;
    }
};

/// Encoder widths G, hidden..., 2d; decoder mirrors the hidden widths.
inline FlatVIModel make_flatvi_model(std::size_t genes, std::size_t latent_dim,
                                     const std::vector<std::size_t> &hidden, Rng &rng)
{
    require_dims(genes > 0 && latent_dim > 0, "make_flatvi_model: empty dimensions");
    std::vector<std::size_t> enc{genes};
    enc.insert(enc.end(), hidden.begin(), hidden.end());
    enc.push_back(2 * latent_dim);
    std::vector<std::size_t> dec{latent_dim};
    dec.insert(dec.end(), hidden.rbegin(), hidden.rend());
    dec.push_back(genes);
    FlatVIModel m;
    m.encoder = make_mlp(enc, Activation::elu, Activation::identity, rng);
    m.decoder = make_mlp(dec, Activation::elu, Activation::softmax, rng);
    m.log_theta = RowVector::Zero(static_cast<Eigen::Index>(genes));
    m.log_alpha = 0.0;
    return m;
}

/// Total count of a cell. Zero cells are rejected: the decoder mean would
/// collapse to zero.
inline double compute_size_factor(const RowVector &x)
{
    for (Eigen::Index g = 0; g < x.size(); ++g)
        if (!(x(g) >= 0.0) || x(g) != std::floor(x(g)))
            throw DomainError("compute_size_factor: counts must be non-negative integers");
    const double l = x.sum();
    if (l <= 0.0) throw DomainError("compute_size_factor: all-zero cell");
    return l;
}

inline Vector size_factors(const Matrix &counts)
{
    Vector out(counts.rows());
    for (Eigen::Index i = 0; i < counts.rows(); ++i) out(i) = compute_size_factor(counts.row(i));
    return out;
}

struct Encoding {
    Vector z;
    Vector mean;
    Vector logvar;
};

inline Encoding encode(const FlatVIModel &model, const RowVector &x, const Vector &noise)
{
    const Eigen::Index d = model.latent_dim();
    require_dims(x.size() == model.genes(), "encode: expected " + std::to_string(model.genes()) + " genes");
    require_dims(noise.size() == d, "encode: noise width mismatch");
    Matrix in = x.array().log1p().matrix();
    Matrix out = mlp_forward(model.encoder, in);
    Encoding e;
    e.mean = out.row(0).head(d).transpose();
    e.logvar = out.row(0).tail(d).transpose();
    e.z = e.mean.array() + (0.5 * e.logvar.array()).exp() * noise.array();
    return e;
}

/// Posterior means and log-variances for every row of a count matrix.
inline std::pair<Matrix, Matrix> encode_batch(const FlatVIModel &model, const Matrix &counts)
{
    require_dims(counts.cols() == model.genes(), "encode_batch: gene count mismatch");
    const Eigen::Index d = model.latent_dim();
    Matrix out = mlp_forward(model.encoder, counts.array().log1p().matrix());
    return {out.leftCols(d), out.rightCols(d)};
}

inline RowVector decode(const FlatVIModel &model, const Vector &z, double size_factor)
{
    require_dims(z.size() == model.latent_dim(), "decode: latent width mismatch");
    if (!(size_factor > 0.0)) throw DomainError("decode: size factor must be positive");
    Matrix s = mlp_forward(model.decoder, z.transpose());
    return size_factor * s.row(0);
}

/// Per-gene NB log-probabilities.
inline RowVector nb_log_pmf_terms(const RowVector &x, const RowVector &mu, const RowVector &theta)
{
    require_dims(x.size() == mu.size() && mu.size() == theta.size(), "nb_log_pmf: length mismatch");
    if ((mu.array() <= 0.0).any() || (theta.array() <= 0.0).any())
        throw DomainError("nb_log_pmf: mu and theta must be positive");
    RowVector out(x.size());
    for (Eigen::Index g = 0; g < x.size(); ++g) {
        const double t = theta(g), m = mu(g), c = x(g);
        out(g) = std::lgamma(t + c) - std::lgamma(c + 1.0) - std::lgamma(t) +
                 t * std::log(t / (t + m)) + c * std::log(m / (t + m));
    }
    return out;
}

inline double nb_log_pmf(const RowVector &x, const RowVector &mu, const RowVector &theta)
{
    const double v = nb_log_pmf_terms(x, mu, theta).sum();
    if (!std::isfinite(v)) throw DomainError("nb_log_pmf: non-finite log-likelihood");
    return v;
}

inline double kl_standard_normal(const Vector &mean, const Vector &logvar)
{
    require_dims(mean.size() == logvar.size(), "kl_standard_normal: length mismatch");
    return 0.5 * (logvar.array().exp() + mean.array().square() - 1.0 - logvar.array()).sum();
}

struct LossTerms {
    double total = 0.0;
    double nll = 0.0;   // batch mean of -log p(x | z)
    double kl = 0.0;    // batch mean of KL(q || p)
    double flat = 0.0;  // batch mean of ||M - alpha I||_F^2
};

struct LossResult {
    LossTerms terms;
    std::vector<Matrix> grads;  // ordered as FlatVIModel::parameters()
};

namespace detail {

inline void check_term(double v, const char *name)
{
    if (!std::isfinite(v)) throw TrainingError(std::string("flatvi_loss: non-finite ") + name + " term");
}

}  // namespace detail

/// Batch loss mean[-log p + kl_weight KL] + lambda L_flat and its gradient
/// for every model parameter. `noise` is B x d reparametrisation noise.
inline LossResult flatvi_loss(const FlatVIModel &model, const Matrix &counts, const Matrix &noise,
                              double lambda, double kl_weight, bool with_grad = true)
{
    using namespace ad;
    const Eigen::Index batch = counts.rows();
    const Eigen::Index d = model.latent_dim();
    require_dims(batch > 0, "flatvi_loss: empty batch");
    require_dims(counts.cols() == model.genes(), "flatvi_loss: gene count mismatch");
    require_dims(noise.rows() == batch && noise.cols() == d, "flatvi_loss: noise shape mismatch");
    if (lambda < 0.0) throw DomainError("flatvi_loss: lambda must be non-negative");

    Matrix lcol(batch, 1);
    for (Eigen::Index i = 0; i < batch; ++i) lcol(i, 0) = compute_size_factor(counts.row(i));

    Tape tape;
    TapedMlp enc = bind(tape, model.encoder, with_grad);
    TapedMlp dec = bind(tape, model.decoder, with_grad);
    Matrix lt = model.log_theta;
    Var log_theta = with_grad ? tape.variable(lt) : tape.constant(lt);
    Matrix la = Matrix::Constant(1, 1, model.log_alpha);
    Var log_alpha = with_grad ? tape.variable(la) : tape.constant(la);

    Var x = tape.constant(counts);
    Var enc_out = forward(enc, tape.constant(counts.array().log1p().matrix()));
    Var mean = slice_cols(enc_out, 0, d);
    Var logvar = slice_cols(enc_out, d, d);
    Var z = add(mean, mul(ad::exp(scale(logvar, 0.5)), tape.constant(noise)));

    Var theta = ad::exp(log_theta);
    const bool with_metric = lambda > 0.0;
    TapedDecode dec_out = decode_with_metric(dec, z, lcol, theta, with_metric);

    // log NB summed over batch and genes
    const double lgamma_x1 = counts.unaryExpr([](double c) { return std::lgamma(c + 1.0); }).sum();
    const double bsz = static_cast<double>(batch);
    Var log_tpm = ad::log(add_row(dec_out.mean, theta));
    Var ll = sum(lgamma(add_row(x, theta)));
    ll = add_scalar(ll, -lgamma_x1);
    ll = sub(ll, scale(sum(lgamma(theta)), bsz));
    ll = add(ll, scale(sum(mul(theta, log_theta)), bsz));
    ll = sub(ll, sum(mul_row(log_tpm, theta)));
    ll = add(ll, sum(mul(x, ad::log(dec_out.mean))));
    ll = sub(ll, sum(mul(x, log_tpm)));

    Var kl = scale(sum(add_scalar(sub(add(ad::exp(logvar), square(mean)), logvar), -1.0)), 0.5);

    Var nll_mean = scale(ll, -1.0 / bsz);
    Var kl_mean = scale(kl, 1.0 / bsz);
    Var total = add(nll_mean, scale(kl_mean, kl_weight));

    LossResult res;
    res.terms.nll = nll_mean.value()(0, 0);
    res.terms.kl = kl_mean.value()(0, 0);
    detail::check_term(res.terms.nll, "reconstruction");
    detail::check_term(res.terms.kl, "KL");
    if (with_metric) {
        Var flat = ad::flattening_loss(dec_out.metrics, ad::exp(log_alpha), d);
        res.terms.flat = flat.value()(0, 0);
        detail::check_term(res.terms.flat, "flattening");
        total = add(total, scale(flat, lambda));
    }
    res.terms.total = total.value()(0, 0);
    detail::check_term(res.terms.total, "total");
    if (!with_grad) return res;

    tape.backward(total);
    for (Var v : parameter_vars(enc)) res.grads.push_back(tape.grad(v));
    for (Var v : parameter_vars(dec)) res.grads.push_back(tape.grad(v));
    res.grads.push_back(tape.grad(log_theta));
    res.grads.push_back(tape.grad(log_alpha));
    return res;
}

/// Negative ELBO from the scalar routines, mean over the batch:
/// -log p(x | z) + kl_weight KL with z from the given noise.
inline double negative_elbo(const FlatVIModel &model, const Matrix &counts, const Matrix &noise,
                            double kl_weight)
{
    const RowVector theta = model.theta();
    double total = 0.0;
    for (Eigen::Index i = 0; i < counts.rows(); ++i) {
        const RowVector x = counts.row(i);
        const Encoding e = encode(model, x, noise.row(i).transpose());
        const RowVector mu = decode(model, e.z, compute_size_factor(x));
        total += -nb_log_pmf(x, mu, theta) + kl_weight * kl_standard_normal(e.mean, e.logvar);
    }
    return total / static_cast<double>(counts.rows());
}

struct TrainConfig {
    double lambda = 1.0;
    double lr = 1e-3;
    std::size_t batch_size = 32;
    std::size_t max_epochs = 100;
    std::size_t kl_anneal_epochs = 0;  // 0 disables annealing (weight 1)
    std::uint64_t seed = 0;
    std::size_t latent_dim = 10;
    std::vector<std::size_t> hidden{256};
};

/// Thrown when training produces a non-finite loss; carries the loss trace so far.
struct DivergenceError : TrainingError {
    DivergenceError(const std::string &what, std::vector<double> trace_)
        : TrainingError(what), trace(std::move(trace_))
    {
    }
    std::vector<double> trace;
};

struct TrainedFlatVI {
    FlatVIModel model;
    std::vector<double> loss_trace;  // mean batch loss per epoch
};

inline double kl_weight_for_epoch(std::size_t epoch, std::size_t anneal_epochs)
{
    if (anneal_epochs == 0) return 1.0;
    return std::min(1.0, static_cast<double>(epoch) / static_cast<double>(anneal_epochs));
}

/// Minibatch Adam on flatvi_loss with linear KL annealing. The model is
/// initialised from the config seed; the same seed replays bit-identically.
inline TrainedFlatVI train_flatvi(const Matrix &counts, const TrainConfig &config)
{
    if (config.lambda < 0.0) throw DomainError("train_flatvi: lambda must be non-negative");
    if (config.batch_size < 1) throw DomainError("train_flatvi: batch_size must be at least 1");
    const auto n = static_cast<std::size_t>(counts.rows());
    if (n < config.batch_size) throw DomainError("train_flatvi: fewer cells than batch_size");
    size_factors(counts);  // rejects zero cells up front

    Rng rng(config.seed);
    TrainedFlatVI out;
    out.model = make_flatvi_model(static_cast<std::size_t>(counts.cols()), config.latent_dim,
                                  config.hidden, rng);
    auto params = out.model.parameters();
    AdamState adam = make_adam(params, config.lr);
    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), 0);
    const auto d = static_cast<Eigen::Index>(config.latent_dim);

    for (std::size_t epoch = 0; epoch < config.max_epochs; ++epoch) {
        std::shuffle(order.begin(), order.end(), rng);
        const double kw = kl_weight_for_epoch(epoch, config.kl_anneal_epochs);
        double epoch_loss = 0.0;
        std::size_t batches = 0;
        for (std::size_t start = 0; start < n; start += config.batch_size) {
            const std::size_t stop = std::min(n, start + config.batch_size);
            std::vector<std::size_t> idx(order.begin() + static_cast<std::ptrdiff_t>(start),
                                         order.begin() + static_cast<std::ptrdiff_t>(stop));
            const Matrix batch = take_rows(counts, idx);
            const Matrix noise = standard_normal(rng, batch.rows(), d);
            LossResult res;
            try {
                res = flatvi_loss(out.model, batch, noise, config.lambda, kw);
                adam_step(params, res.grads, adam);
            } catch (const TrainingError &e) {
                throw DivergenceError(std::string("train_flatvi: epoch ") + std::to_string(epoch) +
                                          ": " + e.what(),
                                      out.loss_trace);
            }
            epoch_loss += res.terms.total;
            ++batches;
        }
        out.loss_trace.push_back(epoch_loss / static_cast<double>(batches));
    }
    return out;
}

}  // namespace flatvi

#endif  // FLATVI_NB_VAE_HPP_
