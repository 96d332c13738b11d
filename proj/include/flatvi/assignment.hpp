#ifndef FLATVI_ASSIGNMENT_HPP_
#define FLATVI_ASSIGNMENT_HPP_

#include "core.hpp"

#include <limits>

namespace flatvi {

/// Squared Euclidean cost between rows of a and rows of b.
inline Matrix squared_distance_matrix(const Matrix &a, const Matrix &b)
{
    require_dims(a.cols() == b.cols(), "squared_distance_matrix: dimension mismatch");
    Matrix c(a.rows(), b.rows());
    for (Eigen::Index i = 0; i < a.rows(); ++i)
        for (Eigen::Index j = 0; j < b.rows(); ++j) c(i, j) = (a.row(i) - b.row(j)).squaredNorm();
    return c;
}

/// Exact minimum-cost perfect matching on a square cost matrix
/// (Kuhn-Munkres with row/column potentials, O(n^3)). Returns col[i], the
/// column assigned to row i.
inline std::vector<std::size_t> solve_assignment(const Matrix &cost)
{
    require_dims(cost.rows() == cost.cols(), "solve_assignment: cost matrix must be square");
    const auto n = static_cast<std::size_t>(cost.rows());
    if (n == 0) throw DomainError("solve_assignment: empty problem");
    if (!cost.allFinite()) throw DomainError("solve_assignment: non-finite cost");
    constexpr double inf = std::numeric_limits<double>::infinity();
    // 1-based arrays; index 0 is the virtual source column.
    std::vector<double> u(n + 1, 0.0), v(n + 1, 0.0), minv(n + 1);
    std::vector<std::size_t> match(n + 1, 0), way(n + 1, 0);
    std::vector<char> used(n + 1);
    for (std::size_t i = 1; i <= n; ++i) {
        match[0] = i;
        std::size_t j0 = 0;
        std::fill(minv.begin(), minv.end(), inf);
        std::fill(used.begin(), used.end(), 0);
        do {
            used[j0] = 1;
            const std::size_t i0 = match[j0];
            double delta = inf;
            std::size_t j1 = 0;
            for (std::size_t j = 1; j <= n; ++j) {
                if (used[j]) continue;
                const double cur = cost(static_cast<Eigen::Index>(i0 - 1), static_cast<Eigen::Index>(j - 1)) -
                                   u[i0] - v[j];
                if (cur < minv[j]) {
                    minv[j] = cur;
                    way[j] = j0;
                }
                if (minv[j] < delta) {
                    delta = minv[j];
                    j1 = j;
                }
            }
            for (std::size_t j = 0; j <= n; ++j) {
                if (used[j]) {
                    u[match[j]] += delta;
                    v[j] -= delta;
                } else {
                    minv[j] -= delta;
                }
            }
            j0 = j1;
        } while (match[j0] != 0);
        do {
            const std::size_t j1 = way[j0];
            match[j0] = match[j1];
            j0 = j1;
        } while (j0 != 0);
    }
    std::vector<std::size_t> col(n);
    for (std::size_t j = 1; j <= n; ++j) col[match[j] - 1] = j - 1;
    return col;
}

/// Total cost of an assignment, summed in row order.
inline double assignment_cost(const Matrix &cost, const std::vector<std::size_t> &col)
{
    double total = 0.0;
    for (std::size_t i = 0; i < col.size(); ++i)
        total += cost(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(col[i]));
    return total;
}

}  // namespace flatvi

#endif  // FLATVI_ASSIGNMENT_HPP_
