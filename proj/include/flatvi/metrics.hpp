#ifndef FLATVI_METRICS_HPP_
#define FLATVI_METRICS_HPP_

#include "assignment.hpp"
#include "parallel.hpp"

#include <numeric>

namespace flatvi {

// Point clouds are Matrix values with one point per row.

namespace detail {

inline void require_cloud(const Matrix &m, const char *who)
{
    if (m.rows() < 1) throw DomainError(std::string(who) + ": empty point cloud");
    if (!m.allFinite()) throw DomainError(std::string(who) + ": non-finite point");
}

}  // namespace detail

/// 2-Wasserstein distance between empirical clouds. Unequal sizes: the
/// larger cloud is resampled with replacement down to the smaller size.
inline double wasserstein2(const Matrix &a, const Matrix &b, std::uint64_t seed = 0)
{
    detail::require_cloud(a, "wasserstein2");
    detail::require_cloud(b, "wasserstein2");
    require_dims(a.cols() == b.cols(), "wasserstein2: dimension mismatch");
    Matrix x = a, y = b;
    if (x.rows() != y.rows()) {
        Rng rng(seed);
        Matrix &big = x.rows() > y.rows() ? x : y;
        const auto n = static_cast<std::size_t>(std::min(x.rows(), y.rows()));
        std::vector<std::size_t> idx(n);
        for (auto &i : idx) i = uniform_index(rng, static_cast<std::size_t>(big.rows()));
        big = take_rows(big, idx);
    }
    const Matrix cost = squared_distance_matrix(x, y);
    const auto col = solve_assignment(cost);
    return std::sqrt(std::max(0.0, assignment_cost(cost, col) / static_cast<double>(x.rows())));
}

/// Distance between the barycentres of two clouds.
inline double mean_l2(const Matrix &a, const Matrix &b)
{
    detail::require_cloud(a, "mean_l2");
    detail::require_cloud(b, "mean_l2");
    require_dims(a.cols() == b.cols(), "mean_l2: dimension mismatch");
    return (a.colwise().mean() - b.colwise().mean()).norm();
}

struct Standardizer {
    RowVector mean;
    RowVector std;

    Matrix apply(const Matrix &x) const
    {
        return (x.rowwise() - mean).array().rowwise() / std.array();
    }
    Matrix invert(const Matrix &x) const
    {
        return (x.array().rowwise() * std.array()).matrix().rowwise() + mean;
    }
};

/// Per-dimension mean and (sample) standard deviation of `real`.
inline Standardizer fit_standardizer(const Matrix &real)
{
    if (real.rows() < 2) throw DomainError("standardize: need at least two real points");
    Standardizer s;
    s.mean = real.colwise().mean();
    s.std = ((real.rowwise() - s.mean).array().square().colwise().sum() / static_cast<double>(real.rows() - 1))
                .sqrt();
    for (Eigen::Index j = 0; j < s.std.size(); ++j)
        if (!(s.std(j) > 0.0)) throw DomainError("standardize: dimension " + std::to_string(j) + " has zero variance");
    return s;
}

inline Matrix standardize_generated(const Matrix &generated, const Matrix &real)
{
    require_dims(generated.cols() == real.cols(), "standardize_generated: dimension mismatch");
    return fit_standardizer(real).apply(generated);
}

/// Exact k nearest neighbours (self excluded), ties broken by lower index.
inline std::vector<std::vector<std::size_t>> knn(const Matrix &x, std::size_t k)
{
    const auto n = static_cast<std::size_t>(x.rows());
    if (k < 1 || n <= k) throw DomainError("knn: need 1 <= k < number of points");
    std::vector<std::vector<std::size_t>> out(n);
    parallel_for(n, [&](std::size_t i) {
        std::vector<std::pair<double, std::size_t>> cand;
        cand.reserve(n - 1);
        for (std::size_t j = 0; j < n; ++j)
            if (j != i)
                cand.emplace_back((x.row(static_cast<Eigen::Index>(i)) - x.row(static_cast<Eigen::Index>(j))).squaredNorm(),
                                  j);
        std::partial_sort(cand.begin(), cand.begin() + static_cast<std::ptrdiff_t>(k), cand.end());
        for (std::size_t r = 0; r < k; ++r) out[i].push_back(cand[r].second);
    });
    return out;
}

/// Distance from every real point to its k-th nearest other real point.
inline Vector knn_radii(const Matrix &real, std::size_t k)
{
    const auto nbrs = knn(real, k);
    Vector r(real.rows());
    for (Eigen::Index i = 0; i < real.rows(); ++i)
        r(i) = (real.row(i) - real.row(static_cast<Eigen::Index>(nbrs[static_cast<std::size_t>(i)].back()))).norm();
    return r;
}

namespace detail {

/// counts[j] = number of real spheres containing generated point j (inclusive boundary).
inline std::vector<std::size_t> sphere_membership(const Matrix &real, const Vector &radii, const Matrix &gen,
                                                  std::vector<char> *covered)
{
    const auto m = static_cast<std::size_t>(gen.rows());
    std::vector<std::size_t> counts(m, 0);
    std::vector<std::vector<char>> hits(m);
    parallel_for(m, [&](std::size_t j) {
        hits[j].assign(static_cast<std::size_t>(real.rows()), 0);
        for (Eigen::Index i = 0; i < real.rows(); ++i)
            if ((gen.row(static_cast<Eigen::Index>(j)) - real.row(i)).norm() <= radii(i)) {
                ++counts[j];
                hits[j][static_cast<std::size_t>(i)] = 1;
            }
    });
    if (covered) {
        covered->assign(static_cast<std::size_t>(real.rows()), 0);
        for (const auto &h : hits)
            for (std::size_t i = 0; i < h.size(); ++i) (*covered)[i] |= h[i];
    }
    return counts;
}

}  // namespace detail

/// (1 / (k m)) sum_j sum_i 1{ ||y_j - x_i|| <= NND_k(x_i) }
inline double density(const Matrix &real, const Matrix &gen, std::size_t k)
{
    detail::require_cloud(real, "density");
    detail::require_cloud(gen, "density");
    require_dims(real.cols() == gen.cols(), "density: dimension mismatch");
    const auto counts = detail::sphere_membership(real, knn_radii(real, k), gen, nullptr);
    const double total = static_cast<double>(std::accumulate(counts.begin(), counts.end(), std::size_t{0}));
    return total / (static_cast<double>(k) * static_cast<double>(gen.rows()));
}

/// Fraction of real points whose k-NN sphere contains a generated point.
inline double coverage(const Matrix &real, const Matrix &gen, std::size_t k)
{
    detail::require_cloud(real, "coverage");
    detail::require_cloud(gen, "coverage");
    require_dims(real.cols() == gen.cols(), "coverage: dimension mismatch");
    std::vector<char> covered;
    detail::sphere_membership(real, knn_radii(real, k), gen, &covered);
    const double hit = static_cast<double>(std::count(covered.begin(), covered.end(), 1));
    return hit / static_cast<double>(real.rows());
}

/// Pearson correlation across coordinates; 0 when either vector is constant.
inline double pearson(const RowVector &a, const RowVector &b)
{
    const RowVector ca = a.array() - a.mean();
    const RowVector cb = b.array() - b.mean();
    const double na = ca.norm(), nb = cb.norm();
    if (na == 0.0 || nb == 0.0) return 0.0;
    return std::clamp(ca.dot(cb) / (na * nb), -1.0, 1.0);
}

/// Mean over points of the average correlation between a point's velocity
/// and those of its k nearest neighbours (neighbourhoods taken on `points`).
inline double velocity_consistency(const Matrix &points, const Matrix &velocities, std::size_t k)
{
    require_dims(points.rows() == velocities.rows(), "velocity_consistency: row count mismatch");
    if (velocities.cols() < 2) throw DomainError("velocity_consistency: velocity dimension must be at least 2");
    const auto nbrs = knn(points, k);
    std::vector<double> per(nbrs.size());
    for (std::size_t j = 0; j < nbrs.size(); ++j) {
        double acc = 0.0;
        for (std::size_t i : nbrs[j])
            acc += pearson(velocities.row(static_cast<Eigen::Index>(j)), velocities.row(static_cast<Eigen::Index>(i)));
        per[j] = acc / static_cast<double>(k);
    }
    return std::accumulate(per.begin(), per.end(), 0.0) / static_cast<double>(per.size());
}

}  // namespace flatvi

#endif  // FLATVI_METRICS_HPP_
