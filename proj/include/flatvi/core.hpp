#ifndef FLATVI_CORE_HPP_
#define FLATVI_CORE_HPP_

#include <Eigen/Dense>

#include <cmath>
#include <cstdint>
#include <random>
#include <stdexcept>
#include <string>
#include <vector>

namespace flatvi {

// Row-major so that a batch of observations is one row per item.
using Matrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using Vector = Eigen::VectorXd;
using RowVector = Eigen::RowVectorXd;

using Rng = std::mt19937_64;

struct DimensionError : std::invalid_argument {
    using std::invalid_argument::invalid_argument;
};

struct DomainError : std::domain_error {
    using std::domain_error::domain_error;
};

/// Raised when an optimisation produces non-finite values.
struct TrainingError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

struct ParseError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

inline void require_dims(bool ok, const std::string &what)
{
    if (!ok) throw DimensionError(what);
}

inline bool all_finite(const Matrix &m) { return m.allFinite(); }

inline Matrix standard_normal(Rng &rng, Eigen::Index rows, Eigen::Index cols)
{
    std::normal_distribution<double> dist(0.0, 1.0);
    Matrix out(rows, cols);
    for (Eigen::Index i = 0; i < out.size(); ++i) out.data()[i] = dist(rng);
    return out;
}

inline double uniform01(Rng &rng)
{
    return std::uniform_real_distribution<double>(0.0, 1.0)(rng);
}

inline std::size_t uniform_index(Rng &rng, std::size_t n)
{
    return std::uniform_int_distribution<std::size_t>(0, n - 1)(rng);
}

inline Matrix take_rows(const Matrix &m, const std::vector<std::size_t> &idx)
{
    Matrix out(static_cast<Eigen::Index>(idx.size()), m.cols());
    for (std::size_t i = 0; i < idx.size(); ++i)
        out.row(static_cast<Eigen::Index>(i)) = m.row(static_cast<Eigen::Index>(idx[i]));
    return out;
}

}  // namespace flatvi

#endif  // FLATVI_CORE_HPP_
