#ifndef FLATVI_GEOMETRY_HPP_
#define FLATVI_GEOMETRY_HPP_

#include "nb_vae.hpp"
#include "parallel.hpp"

namespace flatvi {

/// Pullback of the NB Fisher metric through the decoder mean
/// h(z) = l softmax(rho(z)).
inline MetricTensor pullback_metric(const FlatVIModel &model, const Vector &z, double size_factor)
{
    if (!z.allFinite()) throw DomainError("pullback_metric: non-finite latent point");
    if (!(size_factor > 0.0)) throw DomainError("pullback_metric: size factor must be positive");
    const RowVector mu = decode(model, z, size_factor);
    const Matrix jac = size_factor * mlp_jacobian(model.decoder, z);
    return pullback_from_mean_jacobian(mu, jac, model.theta());
}

inline std::vector<MetricTensor> pullback_metrics(const FlatVIModel &model, const Matrix &latent,
                                                  const Vector &size_factors)
{
    require_dims(latent.rows() == size_factors.size(), "pullback_metrics: row count mismatch");
    std::vector<MetricTensor> out(static_cast<std::size_t>(latent.rows()));
    parallel_for(out.size(), [&](std::size_t i) {
        const auto r = static_cast<Eigen::Index>(i);
        out[i] = pullback_metric(model, latent.row(r).transpose(), size_factors(r));
    });
    return out;
}

/// Draws one NB(mu, theta) count as a Gamma-Poisson mixture.
inline double sample_nb(double mu, double theta, Rng &rng)
{
    const double rate = std::gamma_distribution<double>(theta, mu / theta)(rng);
    if (!(rate > 0.0)) return 0.0;
    return static_cast<double>(std::poisson_distribution<long long>(rate)(rng));
}

/// Monte-Carlo estimate of E[(d/dmu log p(x | mu, theta))^2] per gene.
inline RowVector fim_mc_oracle(const RowVector &mu, const RowVector &theta, std::size_t n_samples,
                               std::uint64_t seed)
{
    require_dims(mu.size() == theta.size(), "fim_mc_oracle: length mismatch");
    if (n_samples < 10000) throw DomainError("fim_mc_oracle: need at least 1e4 samples");
    Rng rng(seed);
    RowVector out(mu.size());
    for (Eigen::Index g = 0; g < mu.size(); ++g) {
        const double m = mu(g), t = theta(g);
        double acc = 0.0;
        for (std::size_t s = 0; s < n_samples; ++s) {
            const double x = sample_nb(m, t, rng);
            const double score = x / m - (t + x) / (t + m);
            acc += score * score;
        }
        out(g) = acc / static_cast<double>(n_samples);
    }
    return out;
}

namespace detail {

inline Vector symmetric_eigenvalues(const Matrix &m)
{
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(m, Eigen::EigenvaluesOnly);
    if (es.info() != Eigen::Success) throw DomainError("eigendecomposition failed");
    return es.eigenvalues();
}

}  // namespace detail

/// sqrt(det M) from the eigenvalues; small negative eigenvalues from
/// round-off are clamped to zero.
inline double magnification_factor(const MetricTensor &m)
{
    const Vector ev = detail::symmetric_eigenvalues(m.entries);
    const double tol = 1e-8 * std::max(1.0, ev.cwiseAbs().maxCoeff());
    double det = 1.0;
    for (Eigen::Index i = 0; i < ev.size(); ++i) {
        if (ev(i) < -tol) throw DomainError("magnification_factor: metric is not positive semidefinite");
        det *= std::max(ev(i), 0.0);
    }
    return std::sqrt(det);
}

/// Squared affine-invariant distance sum_k log^2 lambda_k(B^-1 A), with
/// the generalised eigenvalues taken from L^-1 A L^-T where B = L L^T.
inline double affine_invariant_distance_sq(const Matrix &a, const Matrix &b)
{
    require_dims(a.rows() == a.cols() && b.rows() == b.cols() && a.rows() == b.rows(),
                 "affine_invariant_distance: shape mismatch");
    Eigen::LLT<Eigen::MatrixXd> llt(b);
    if (llt.info() != Eigen::Success) throw DomainError("affine_invariant_distance: reference metric is singular");
    const Eigen::MatrixXd lower = llt.matrixL();
    Eigen::MatrixXd w = lower.triangularView<Eigen::Lower>().solve(Eigen::MatrixXd(a));
    w = lower.triangularView<Eigen::Lower>().solve(Eigen::MatrixXd(w.transpose()));
    const Vector ev = detail::symmetric_eigenvalues(0.5 * (w + w.transpose()));
    double total = 0.0;
    for (Eigen::Index i = 0; i < ev.size(); ++i) {
        if (!(ev(i) > 0.0)) throw DomainError("affine_invariant_distance: non-positive generalised eigenvalue");
        total += std::log(ev(i)) * std::log(ev(i));
    }
    return total;
}

inline Matrix mean_metric(const std::vector<MetricTensor> &metrics)
{
    require_dims(!metrics.empty(), "mean_metric: empty batch");
    Matrix acc = Matrix::Zero(metrics.front().dim(), metrics.front().dim());
    for (const auto &m : metrics) acc += m.entries;
    return acc / static_cast<double>(metrics.size());
}

/// Variance of the Riemannian metric: mean squared affine-invariant distance
/// of each (regularised) metric to the batch mean.
inline double vor(const std::vector<MetricTensor> &metrics, double reg_eps = 1e-8)
{
    if (metrics.size() < 2) throw DomainError("vor: need at least two metrics");
    const Eigen::Index d = metrics.front().dim();
    for (const auto &m : metrics) require_dims(m.dim() == d, "vor: metric dims differ");
    const Matrix reg = reg_eps * Matrix::Identity(d, d);
    const Matrix ref = mean_metric(metrics) + reg;
    std::vector<double> dist(metrics.size());
    parallel_for(metrics.size(), [&](std::size_t i) {
        dist[i] = affine_invariant_distance_sq(metrics[i].entries + reg, ref);
    });
    double total = 0.0;
    for (double v : dist) total += v;
    return total / static_cast<double>(metrics.size());
}

/// VoR averaged over consecutive batches of `batch_size` metrics, the last
/// batch absorbing any remainder smaller than two.
inline double batched_vor(const std::vector<MetricTensor> &metrics, std::size_t batch_size = 256,
                          double reg_eps = 1e-8)
{
    if (metrics.size() < 2) throw DomainError("batched_vor: need at least two metrics");
    batch_size = std::max<std::size_t>(batch_size, 2);
    double total = 0.0;
    std::size_t count = 0;
    for (std::size_t start = 0; start < metrics.size(); start += batch_size) {
        std::size_t stop = std::min(metrics.size(), start + batch_size);
        if (metrics.size() - stop < 2) stop = metrics.size();
        std::vector<MetricTensor> chunk(metrics.begin() + static_cast<std::ptrdiff_t>(start),
                                        metrics.begin() + static_cast<std::ptrdiff_t>(stop));
        total += vor(chunk, reg_eps);
        ++count;
        if (stop == metrics.size()) break;
    }
    return total / static_cast<double>(count);
}

/// Latent curve gamma_0 .. gamma_K with fixed endpoints.
struct CurvePath {
    Matrix points;  // (K+1) x d
};

/// Maps K x d latent points to their K*d x d stacked metrics on a tape.
using MetricField = std::function<ad::Var(ad::Tape &, ad::Var)>;

inline MetricField model_metric_field(const FlatVIModel &model, double size_factor)
{
    return [&model, size_factor](ad::Tape &tape, ad::Var points) {
        ad::TapedMlp dec = ad::bind(tape, model.decoder, false);
        Matrix theta = model.theta();
        Matrix l = Matrix::Constant(points.rows(), 1, size_factor);
        return ad::decode_with_metric(dec, points, l, tape.constant(std::move(theta)), true).metrics;
    };
}

struct GeodesicOptions {
    std::size_t segments = 16;  // K
    std::size_t iters = 200;
    double lr = 1e-2;
};

struct GeodesicResult {
    double length = 0.0;           // best discretised length found
    double straight_length = 0.0;  // same discretisation on the straight line
    CurvePath path;
};

namespace detail {

struct CurveEval {
    double energy;
    double length;
    Matrix grad;  // w.r.t. interior points
};

inline CurveEval evaluate_curve(const MetricField &field, const Matrix &points, bool with_grad)
{
    using namespace ad;
    const Eigen::Index k = points.rows() - 1;
    Tape tape;
    Var head = tape.constant(points.topRows(1));
    Var tail = tape.constant(points.bottomRows(1));
    Matrix inner_rows = points.middleRows(1, k - 1);
    Var inner = with_grad ? tape.variable(inner_rows) : tape.constant(inner_rows);
    Var all = vstack({head, inner, tail});
    Matrix avg = Matrix::Zero(k, k + 1), diff = Matrix::Zero(k, k + 1);
    for (Eigen::Index i = 0; i < k; ++i) {
        avg(i, i) = avg(i, i + 1) = 0.5;
        diff(i, i) = -1.0;
        diff(i, i + 1) = 1.0;
    }
    Var mid = matmul(tape.constant(avg), all);
    Var delta = matmul(tape.constant(diff), all);
    Var q = block_quadratic(field(tape, mid), delta);
    Var energy = scale(sum(q), static_cast<double>(k));
    CurveEval out;
    out.energy = energy.value()(0, 0);
    out.length = 0.0;
    for (Eigen::Index i = 0; i < k; ++i) out.length += std::sqrt(std::max(0.0, q.value()(i, 0)));
    if (with_grad) {
        tape.backward(energy);
        out.grad = tape.grad(inner);
    }
    return out;
}

}  // namespace detail

/// Discrete geodesic between z1 and z2 under a latent metric field: starts
/// from the straight line and descends the curve energy over interior points
/// with a backtracking step. Returns the shortest curve visited, so the
/// length never exceeds the straight-line length.
inline GeodesicResult geodesic_distance(const MetricField &field, const Vector &z1, const Vector &z2,
                                        const GeodesicOptions &opts = {})
{
    require_dims(z1.size() == z2.size(), "geodesic_distance: endpoint dims differ");
    if (opts.segments < 2) throw DomainError("geodesic_distance: need at least 2 segments");
    const auto k = static_cast<Eigen::Index>(opts.segments);
    Matrix points(k + 1, z1.size());
    for (Eigen::Index i = 0; i <= k; ++i) {
        const double t = static_cast<double>(i) / static_cast<double>(k);
        points.row(i) = ((1.0 - t) * z1 + t * z2).transpose();
    }
    GeodesicResult res;
    auto cur = detail::evaluate_curve(field, points, true);
    res.straight_length = cur.length;
    res.length = cur.length;
    res.path.points = points;
    if ((z1 - z2).norm() == 0.0) return res;

    double lr = opts.lr;
    for (std::size_t it = 0; it < opts.iters; ++it) {
        if (!cur.grad.allFinite()) break;
        bool accepted = false;
        for (int tries = 0; tries < 30 && !accepted; ++tries) {
            Matrix trial = points;
            trial.middleRows(1, k - 1) -= lr * cur.grad;
            auto next = detail::evaluate_curve(field, trial, true);
            if (std::isfinite(next.energy) && next.energy < cur.energy) {
                points = std::move(trial);
                cur = std::move(next);
                accepted = true;
                lr *= 1.5;
            } else {
                lr *= 0.5;
            }
        }
        if (!accepted) break;
        if (cur.length < res.length) {
            res.length = cur.length;
            res.path.points = points;
        }
    }
    return res;
}

/// Geodesic under the model's pullback metric with a fixed size factor.
inline GeodesicResult geodesic_distance(const FlatVIModel &model, const Vector &z1, const Vector &z2,
                                        double size_factor, const GeodesicOptions &opts = {})
{
    if (!(size_factor > 0.0)) throw DomainError("geodesic_distance: size factor must be positive");
    return geodesic_distance(model_metric_field(model, size_factor), z1, z2, opts);
}

}  // namespace flatvi

#endif  // FLATVI_GEOMETRY_HPP_
