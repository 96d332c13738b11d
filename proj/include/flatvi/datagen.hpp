#ifndef FLATVI_DATAGEN_HPP_
#define FLATVI_DATAGEN_HPP_

#include "geometry.hpp"

#include <numbers>

namespace flatvi {

/// Cells x genes integer counts (stored as doubles) with one time label per cell.
struct CountMatrix {
    Matrix counts;
    std::vector<std::string> gene_names;
    std::vector<int> time_labels;

    void validate() const
    {
        require_dims(static_cast<Eigen::Index>(gene_names.size()) == counts.cols(), "CountMatrix: gene name count mismatch");
        require_dims(static_cast<Eigen::Index>(time_labels.size()) == counts.rows(), "CountMatrix: time label count mismatch");
        for (Eigen::Index i = 0; i < counts.rows(); ++i)
            for (Eigen::Index j = 0; j < counts.cols(); ++j) {
                const double v = counts(i, j);
                if (!(v >= 0.0) || v != std::floor(v))
                    throw DomainError("CountMatrix: entry (" + std::to_string(i) + "," + std::to_string(j) +
                                      ") is not a non-negative integer");
            }
        for (int t : time_labels)
            if (t < 0) throw DomainError("CountMatrix: negative time label");
    }

    int max_time() const { return time_labels.empty() ? -1 : *std::max_element(time_labels.begin(), time_labels.end()); }

    std::vector<std::size_t> rows_at(int t) const
    {
        std::vector<std::size_t> idx;
        for (std::size_t i = 0; i < time_labels.size(); ++i)
            if (time_labels[i] == t) idx.push_back(i);
        return idx;
    }
};

struct SyntheticSpec {
    std::size_t d_true = 2;
    std::size_t genes = 50;
    std::size_t timepoints = 3;  // T: labels run 0..T
    std::size_t cells_per_timepoint = 500;
    std::vector<double> theta_true;  // per gene; empty draws log-uniform from theta_range
    double theta_min = 2.0;
    double theta_max = 20.0;
    std::size_t branch_count = 2;
    double size_factor_min = 500.0;  // library size range, counts per cell
    double size_factor_max = 2000.0;
    double latent_noise = 0.15;
    std::uint64_t seed = 0;

    void validate() const
    {
        if (d_true < 1 || genes < 2 || timepoints < 1 || cells_per_timepoint < 1 || branch_count < 1)
            throw DomainError("SyntheticSpec: sizes must be positive (genes >= 2)");
        if (!(size_factor_min > 0.0) || !(size_factor_max >= size_factor_min))
            throw DomainError("SyntheticSpec: size factor range must satisfy 0 < min <= max");
        if (!theta_true.empty()) {
            require_dims(theta_true.size() == genes, "SyntheticSpec: theta_true needs one value per gene");
            for (double t : theta_true)
                if (!(t > 0.0)) throw DomainError("SyntheticSpec: theta_true must be positive");
        } else if (!(theta_min > 0.0) || !(theta_max >= theta_min)) {
            throw DomainError("SyntheticSpec: theta range must satisfy 0 < min <= max");
        }
        if (!(latent_noise >= 0.0)) throw DomainError("SyntheticSpec: latent_noise must be non-negative");
    }
};

/// Fixed random map u -> proportions: softplus(A tanh(W u + c) + b), normalised.
struct MeanMap {
    Matrix w;  // H x d_true
    Vector c;
    Matrix a;  // G x H
    Vector b;

    RowVector proportions(const Vector &u) const
    {
        const Vector h = (w * u + c).array().tanh();
        const Vector pre = a * h + b;
        RowVector r = pre.unaryExpr([](double x) { return act::value(Activation::softplus, x); }).transpose();
        return r / r.sum();
    }

    RowVector mean(const Vector &u, double size_factor) const { return size_factor * proportions(u); }
};

struct GroundTruth {
    Matrix latent;  // N x d_true
    std::vector<int> branch;
    Vector size_factors;
    RowVector theta;
    MeanMap map;
};

/// Smooth branch centre at progress u in [0, 1]: a shared curved trunk that
/// splits into `branches` arms after u = 1/3.
inline Vector branch_centre(double u, std::size_t branch, std::size_t branches, std::size_t d)
{
    constexpr double pi = std::numbers::pi;
    Vector c = Vector::Zero(static_cast<Eigen::Index>(d));
    const double spread = branches > 1 ? 2.0 * static_cast<double>(branch) / static_cast<double>(branches - 1) - 1.0 : 0.0;
    const double split = std::max(0.0, u - 1.0 / 3.0);
    c(0) = 3.0 * u + 0.8 * spread * split;
    if (d >= 2) c(1) = 1.5 * std::sin(pi * u) + 3.0 * spread * split;
    for (std::size_t k = 2; k < d; ++k)
        c(static_cast<Eigen::Index>(k)) = 0.7 * std::sin(2.0 * pi * u + static_cast<double>(k)) + spread * split;
    return c;
}

namespace detail {

inline double log_uniform(Rng &rng, double lo, double hi)
{
    if (hi == lo) return lo;
    return std::exp(std::log(lo) + uniform01(rng) * (std::log(hi) - std::log(lo)));
}

inline MeanMap draw_mean_map(std::size_t d, std::size_t genes, Rng &rng)
{
    constexpr Eigen::Index hidden = 16;
    MeanMap m;
    m.w = standard_normal(rng, hidden, static_cast<Eigen::Index>(d)) * 0.8;
    m.c = standard_normal(rng, hidden, 1).col(0) * 0.5;
    m.a = standard_normal(rng, static_cast<Eigen::Index>(genes), hidden) * (2.0 / std::sqrt(double(hidden)));
    m.b = standard_normal(rng, static_cast<Eigen::Index>(genes), 1).col(0) * 0.5;
    return m;
}

}  // namespace detail

/// Draws one NB count per gene.
inline RowVector sample_counts(const RowVector &mu, const RowVector &theta, Rng &rng)
{
    RowVector x(mu.size());
    for (Eigen::Index g = 0; g < mu.size(); ++g) x(g) = sample_nb(mu(g), theta(g), rng);
    return x;
}

struct SyntheticData {
    CountMatrix data;
    GroundTruth truth;
};

inline SyntheticData gen_synthetic(const SyntheticSpec &spec)
{
    spec.validate();
    Rng rng(spec.seed);
    const auto d = static_cast<Eigen::Index>(spec.d_true);
    const auto genes = static_cast<Eigen::Index>(spec.genes);
    const std::size_t n = (spec.timepoints + 1) * spec.cells_per_timepoint;

    SyntheticData out;
    GroundTruth &truth = out.truth;
    truth.theta.resize(genes);
    for (Eigen::Index g = 0; g < genes; ++g)
        truth.theta(g) = spec.theta_true.empty() ? detail::log_uniform(rng, spec.theta_min, spec.theta_max)
                                                 : spec.theta_true[static_cast<std::size_t>(g)];

    truth.latent.resize(static_cast<Eigen::Index>(n), d);
    truth.branch.resize(n);
    truth.size_factors.resize(static_cast<Eigen::Index>(n));
    out.data.time_labels.resize(n);
    for (std::size_t t = 0, i = 0; t <= spec.timepoints; ++t) {
        const double u = static_cast<double>(t) / static_cast<double>(spec.timepoints);
        for (std::size_t c = 0; c < spec.cells_per_timepoint; ++c, ++i) {
            const auto r = static_cast<Eigen::Index>(i);
            truth.branch[i] = static_cast<int>(uniform_index(rng, spec.branch_count));
            const Vector centre = branch_centre(u, static_cast<std::size_t>(truth.branch[i]), spec.branch_count, spec.d_true);
            truth.latent.row(r) = (centre + spec.latent_noise * standard_normal(rng, d, 1).col(0)).transpose();
            truth.size_factors(r) = detail::log_uniform(rng, spec.size_factor_min, spec.size_factor_max);
            out.data.time_labels[i] = static_cast<int>(t);
        }
    }

    // A gene whose mean underflows at some cell would be all-zero; redraw the map.
    bool ok = false;
    Matrix means(static_cast<Eigen::Index>(n), genes);
    for (int attempt = 0; attempt < 32 && !ok; ++attempt) {
        truth.map = detail::draw_mean_map(spec.d_true, spec.genes, rng);
        for (Eigen::Index i = 0; i < means.rows(); ++i)
            means.row(i) = truth.map.mean(truth.latent.row(i).transpose(), truth.size_factors(i));
        ok = (means.colwise().sum().array() > 1e-9 * static_cast<double>(n)).all() && means.allFinite();
    }
    if (!ok) throw DomainError("gen_synthetic: could not draw a mean map with every gene expressed");

    out.data.counts.resize(static_cast<Eigen::Index>(n), genes);
    for (Eigen::Index i = 0; i < means.rows(); ++i) {
        RowVector x;
        int attempt = 0;
        do {
            if (++attempt > 1000) throw DomainError("gen_synthetic: cell " + std::to_string(i) + " stays all-zero");
            x = sample_counts(means.row(i), truth.theta, rng);
        } while (x.sum() == 0.0);
        out.data.counts.row(i) = x;
    }
    for (Eigen::Index g = 0; g < genes; ++g) out.data.gene_names.push_back("gene" + std::to_string(g));
    return out;
}

}  // namespace flatvi

#endif  // FLATVI_DATAGEN_HPP_
