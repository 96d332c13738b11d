#ifndef FLATVI_OTCFM_HPP_
#define FLATVI_OTCFM_HPP_

#include "assignment.hpp"
#include "taped_mlp.hpp"

#include <numeric>

namespace flatvi {

/// One time point: latent codes and matching size factors.
struct Snapshot {
    Matrix latent;        // N_t x d
    Vector size_factors;  // N_t
};

/// Ordered snapshots with their (strictly increasing) observation times.
struct TimeSeriesLatent {
    std::vector<Snapshot> snapshots;
    std::vector<double> times;

    void validate() const
    {
        if (snapshots.size() < 2) throw DomainError("TimeSeriesLatent: need at least two snapshots");
        require_dims(times.size() == snapshots.size(), "TimeSeriesLatent: one time per snapshot");
        const Eigen::Index d = snapshots.front().latent.cols();
        for (std::size_t i = 0; i < snapshots.size(); ++i) {
            const auto &s = snapshots[i];
            if (s.latent.rows() < 1) throw DomainError("TimeSeriesLatent: empty snapshot");
            require_dims(s.latent.cols() == d, "TimeSeriesLatent: latent widths differ");
            require_dims(s.size_factors.size() == s.latent.rows(), "TimeSeriesLatent: size factor count mismatch");
            if ((s.size_factors.array() <= 0.0).any()) throw DomainError("TimeSeriesLatent: size factors must be positive");
            if (i > 0 && !(times[i] > times[i - 1])) throw DomainError("TimeSeriesLatent: times must increase");
        }
    }
};

/// Concatenates latent codes with log size factors: the (d+1)-wide state the
/// flow is learnt on.
inline Matrix augmented_state(const Snapshot &s)
{
    Matrix out(s.latent.rows(), s.latent.cols() + 1);
    out.leftCols(s.latent.cols()) = s.latent;
    out.col(s.latent.cols()) = s.size_factors.array().log().matrix();
    return out;
}

/// Time-conditioned vector field over the augmented state: input (t, s), output ds/dt.
struct VelocityNet {
    Mlp net;

    Eigen::Index state_dim() const { return net.out_dim(); }

    Matrix operator()(double t, const Matrix &states) const
    {
        require_dims(states.cols() == state_dim(), "VelocityNet: state width mismatch");
        Matrix in(states.rows(), states.cols() + 1);
        in.col(0).setConstant(t);
        in.rightCols(states.cols()) = states;
        return mlp_forward(net, in);
    }
};

inline VelocityNet make_velocity_net(std::size_t state_dim, const std::vector<std::size_t> &hidden, Rng &rng)
{
    std::vector<std::size_t> sizes{state_dim + 1};
    sizes.insert(sizes.end(), hidden.begin(), hidden.end());
    sizes.push_back(state_dim);
    return {make_mlp(sizes, Activation::selu, Activation::identity, rng)};
}

/// Bijection pairing source row i with target row perm[i].
struct Coupling {
    std::vector<std::size_t> perm;
};

/// Exact OT coupling of two equal-size batches under squared Euclidean cost.
inline Coupling ot_pair_batches(const Matrix &source, const Matrix &target)
{
    if (source.rows() == 0) throw DomainError("ot_pair_batches: empty batch");
    require_dims(source.rows() == target.rows(), "ot_pair_batches: batch sizes differ");
    return {solve_assignment(squared_distance_matrix(source, target))};
}

/// x_t = t x1 + (1 - t) x0 + sigma * noise, row-wise with per-row t.
inline Matrix sample_conditional_path(const Matrix &x0, const Matrix &x1, const Vector &t, double sigma,
                                      const Matrix &noise)
{
    require_dims(x0.rows() == x1.rows() && x0.cols() == x1.cols() && t.size() == x0.rows() &&
                     noise.rows() == x0.rows() && noise.cols() == x0.cols(),
                 "sample_conditional_path: shape mismatch");
    if (sigma < 0.0) throw DomainError("sample_conditional_path: sigma must be non-negative");
    if ((t.array() < 0.0).any() || (t.array() > 1.0).any())
        throw DomainError("sample_conditional_path: t must lie in [0, 1]");
    Matrix out = x0.array().colwise() * (1.0 - t.array()) + x1.array().colwise() * t.array();
    return out + sigma * noise;
}

/// Coupled pairs from one segment [t_offset, t_offset + t_span] of the series.
struct CfmSegment {
    Matrix x0;
    Matrix x1;     // already reordered by the coupling
    Vector t;      // per-row interpolation time in [0, 1]
    Matrix noise;  // standard normal, same shape as x0
    double t_offset = 0.0;
    double t_span = 1.0;
};

struct CfmLoss {
    double loss = 0.0;
    std::vector<Matrix> grads;  // ordered as Mlp::parameters()
};

/// Mean over all rows of ||v(t_offset + t t_span, x_t) - (x1 - x0) / t_span||^2.
inline CfmLoss cfm_loss(const VelocityNet &vnet, const std::vector<CfmSegment> &segments, double sigma,
                        bool with_grad = true)
{
    using namespace ad;
    require_dims(!segments.empty(), "cfm_loss: no segments");
    Eigen::Index rows = 0;
    const Eigen::Index m = vnet.state_dim();
    for (const auto &s : segments) {
        require_dims(s.x0.cols() == m, "cfm_loss: state width mismatch");
        if (!(s.t_span > 0.0)) throw DomainError("cfm_loss: segment span must be positive");
        rows += s.x0.rows();
    }
    Matrix input(rows, m + 1), target(rows, m);
    Eigen::Index r = 0;
    for (const auto &s : segments) {
        const Eigen::Index n = s.x0.rows();
        input.block(r, 0, n, 1) = (s.t_offset + s.t_span * s.t.array()).matrix();
        input.block(r, 1, n, m) = sample_conditional_path(s.x0, s.x1, s.t, sigma, s.noise);
        target.middleRows(r, n) = (s.x1 - s.x0) / s.t_span;
        r += n;
    }
    Tape tape;
    TapedMlp net = bind(tape, vnet.net, with_grad);
    Var pred = forward(net, tape.constant(std::move(input)));
    Var loss = scale(sum(square(sub(pred, tape.constant(std::move(target))))), 1.0 / static_cast<double>(rows));
    CfmLoss out;
    out.loss = loss.value()(0, 0);
    if (!std::isfinite(out.loss)) throw TrainingError("cfm_loss: non-finite loss");
    if (!with_grad) return out;
    tape.backward(loss);
    for (Var v : parameter_vars(net)) out.grads.push_back(tape.grad(v));
    return out;
}

struct CfmConfig {
    double sigma = 0.1;
    double lr = 1e-3;
    std::size_t iters = 2000;
    std::size_t batch_size = 32;
    std::uint64_t seed = 0;
    std::vector<std::size_t> hidden{64, 64, 64};
};

struct TrainedVelocity {
    VelocityNet field;
    std::vector<double> loss_trace;  // loss per iteration
};

/// Samples `n` rows with replacement.
inline Matrix sample_rows(const Matrix &m, std::size_t n, Rng &rng)
{
    std::vector<std::size_t> idx(n);
    for (auto &i : idx) i = uniform_index(rng, static_cast<std::size_t>(m.rows()));
    return take_rows(m, idx);
}

/// Builds the coupled segments of one training iteration: a batch from every
/// pair of consecutive snapshots, paired by exact OT.
inline std::vector<CfmSegment> draw_cfm_segments(const std::vector<Matrix> &states, const std::vector<double> &times,
                                                 std::size_t batch, Rng &rng)
{
    std::vector<CfmSegment> segs;
    for (std::size_t k = 0; k + 1 < states.size(); ++k) {
        CfmSegment s;
        s.x0 = sample_rows(states[k], batch, rng);
        Matrix x1 = sample_rows(states[k + 1], batch, rng);
        const Coupling c = ot_pair_batches(s.x0, x1);
        s.x1 = take_rows(x1, c.perm);
        s.t.resize(static_cast<Eigen::Index>(batch));
        for (Eigen::Index i = 0; i < s.t.size(); ++i) s.t(i) = uniform01(rng);
        s.noise = standard_normal(rng, s.x0.rows(), s.x0.cols());
        s.t_offset = times[k];
        s.t_span = times[k + 1] - times[k];
        segs.push_back(std::move(s));
    }
    return segs;
}

inline TrainedVelocity train_otcfm(const TimeSeriesLatent &series, const CfmConfig &config)
{
    series.validate();
    if (config.batch_size < 1) throw DomainError("train_otcfm: batch_size must be at least 1");
    if (config.sigma < 0.0) throw DomainError("train_otcfm: sigma must be non-negative");
    std::vector<Matrix> states;
    for (const auto &s : series.snapshots) states.push_back(augmented_state(s));
    Rng rng(config.seed);
    TrainedVelocity out;
    out.field = make_velocity_net(static_cast<std::size_t>(states.front().cols()), config.hidden, rng);
    auto params = out.field.net.parameters();
    AdamState adam = make_adam(params, config.lr);
    for (std::size_t it = 0; it < config.iters; ++it) {
        const auto segs = draw_cfm_segments(states, series.times, config.batch_size, rng);
        CfmLoss l = cfm_loss(out.field, segs, config.sigma);
        adam_step(params, l.grads, adam);
        out.loss_trace.push_back(l.loss);
    }
    return out;
}

/// Classical fixed-step RK4 of ds/dt = v(t, s) for every row of `start`.
inline Matrix integrate(const VelocityNet &field, const Matrix &start, double t_start, double t_end,
                        std::size_t steps)
{
    if (steps < 1) throw DomainError("integrate: need at least one step");
    const double h = (t_end - t_start) / static_cast<double>(steps);
    Matrix s = start;
    for (std::size_t i = 0; i < steps; ++i) {
        const double t = t_start + h * static_cast<double>(i);
        const Matrix k1 = field(t, s);
        const Matrix k2 = field(t + 0.5 * h, s + 0.5 * h * k1);
        const Matrix k3 = field(t + 0.5 * h, s + 0.5 * h * k2);
        const Matrix k4 = field(t + h, s + h * k3);
        s += (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4);
        if (!s.allFinite()) throw TrainingError("integrate: state became non-finite at t=" + std::to_string(t + h));
    }
    return s;
}

/// States at integer times from_t, from_t + 1, ..., to_t, integrating one
/// unit segment at a time from `start` (observed at from_t).
inline std::vector<Matrix> simulate_timepoints(const VelocityNet &field, const Matrix &start, int from_t, int to_t,
                                               std::size_t steps_per_segment = 50)
{
    if (to_t < from_t) throw DomainError("simulate_timepoints: to_t precedes from_t");
    std::vector<Matrix> out{start};
    for (int k = from_t; k < to_t; ++k)
        out.push_back(integrate(field, out.back(), static_cast<double>(k), static_cast<double>(k + 1),
                                steps_per_segment));
    return out;
}

}  // namespace flatvi

#endif  // FLATVI_OTCFM_HPP_
