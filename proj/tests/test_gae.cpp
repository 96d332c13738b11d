#include "test_util.hpp"

using namespace flatvi;

namespace {

/// G built from explicit powers P^t = P * P * ... * P (t - 1 products).
Matrix geodesic_oracle(const Matrix &p, const Vector &pi, std::size_t scales, double alpha)
{
    const Eigen::Index n = p.rows();
    Matrix g = Matrix::Zero(n, n);
    for (std::size_t k = 0; k <= scales; ++k) {
        const std::size_t t = std::size_t{1} << k;
        Matrix pt = p;
        for (std::size_t r = 1; r < t; ++r) pt = pt * p;
        const double w = std::pow(2.0, -(static_cast<double>(scales) - static_cast<double>(k)) * alpha);
        for (Eigen::Index i = 0; i < n; ++i)
            for (Eigen::Index j = 0; j < n; ++j) g(i, j) += w * (pt.row(i) - pt.row(j)).lpNorm<1>();
    }
    for (Eigen::Index i = 0; i < n; ++i)
        for (Eigen::Index j = 0; j < n; ++j)
            g(i, j) += std::pow(2.0, -(static_cast<double>(scales) + 1.0) / 2.0) * std::abs(pi(i) - pi(j));
    return g;
}

Matrix pairwise(const Matrix &f)
{
    Matrix d(f.rows(), f.rows());
    for (Eigen::Index i = 0; i < f.rows(); ++i)
        for (Eigen::Index j = 0; j < f.rows(); ++j) d(i, j) = (f.row(i) - f.row(j)).norm();
    return d;
}

}  // namespace

TEST(DiffusionOperators, IdenticalPointsHaveZeroDistance)
{
    const Matrix x = Matrix::Ones(2, 3);
    const auto ops = build_diffusion_operators(x, 1.0);
    EXPECT_LT((ops.diffusion.array() - 0.5).abs().maxCoeff(), 1e-15);
    EXPECT_LT(diffusion_geodesic_distance(ops).cwiseAbs().maxCoeff(), 1e-15);
}

TEST(DiffusionOperators, RowStochasticWithStationaryLeftEigenvector)
{
    Rng rng(1);
    const Matrix x = standard_normal(rng, 30, 4);
    const auto ops = build_diffusion_operators(x, median_squared_distance(x));
    EXPECT_LT((ops.diffusion.rowwise().sum().array() - 1.0).abs().maxCoeff(), 1e-12);
    EXPECT_TRUE((ops.diffusion.array() >= 0.0).all());
    EXPECT_NEAR(ops.stationary.sum(), 1.0, 1e-12);
    EXPECT_LT((ops.stationary.transpose() * ops.diffusion - ops.stationary.transpose()).cwiseAbs().maxCoeff(), 1e-12);

    // Power iteration from uniform converges to the same vector.
    RowVector v = RowVector::Constant(30, 1.0 / 30.0);
    for (int it = 0; it < 2000; ++it) v = v * ops.diffusion;
    EXPECT_LT((v.transpose() - ops.stationary).cwiseAbs().maxCoeff(), 1e-10);
}

TEST(DiffusionOperators, KernelSymmetricWithUnitDiagonal)
{
    Rng rng(2);
    const Matrix x = standard_normal(rng, 12, 3);
    const auto ops = build_diffusion_operators(x, 2.0);
    EXPECT_LT((ops.kernel - ops.kernel.transpose()).cwiseAbs().maxCoeff(), 1e-15);
    EXPECT_LT((ops.kernel.diagonal().array() - 1.0).abs().maxCoeff(), 1e-15);
    EXPECT_LT((ops.normalized - ops.normalized.transpose()).cwiseAbs().maxCoeff(), 1e-15);
    EXPECT_THROW(build_diffusion_operators(x, 0.0), DomainError);
    EXPECT_THROW(build_diffusion_operators(Matrix::Ones(1, 3), 1.0), DomainError);
}

TEST(DiffusionGeodesic, SymmetricZeroDiagonalAndMatchesExplicitPowers)
{
    Rng rng(3);
    for (std::size_t scales : {0, 1, 4}) {
        const Matrix x = standard_normal(rng, 20, 3);
        const auto ops = build_diffusion_operators(x, median_squared_distance(x));
        const Matrix g = diffusion_geodesic_distance(ops, scales, 0.25);
        EXPECT_LT((g - g.transpose()).cwiseAbs().maxCoeff(), 1e-15);
        EXPECT_EQ(g.diagonal().cwiseAbs().maxCoeff(), 0.0);
        EXPECT_LT((g - geodesic_oracle(ops.diffusion, ops.stationary, scales, 0.25)).cwiseAbs().maxCoeff(), 1e-8);
        for (Eigen::Index i = 0; i < 20; ++i)
            for (Eigen::Index j = 0; j < 20; ++j)
                for (Eigen::Index k = 0; k < 20; ++k) ASSERT_LE(g(i, j), g(i, k) + g(k, j) + 1e-12);
    }
    const auto ops = build_diffusion_operators(Matrix::Identity(3, 3), 1.0);
    EXPECT_THROW(diffusion_geodesic_distance(ops, 4, 0.5), DomainError);
    EXPECT_THROW(diffusion_geodesic_distance(ops, 4, 0.0), DomainError);
}

TEST(MedianSquaredDistance, SmallCases)
{
    Matrix x(3, 1);
    x << 0, 1, 3;  // squared distances 1, 9, 4
    EXPECT_EQ(median_squared_distance(x), 4.0);
    Matrix y(4, 1);
    y << 0, 1, 2, 3;  // 1, 4, 9, 1, 4, 1 -> sorted 1 1 1 4 4 9
    EXPECT_EQ(median_squared_distance(y), 2.5);
    EXPECT_EQ(median_squared_distance(Matrix::Zero(3, 2)), 1.0);
}

TEST(LogNormalize, ScalesToMedianTotal)
{
    Matrix c(3, 2);
    c << 1, 1, 4, 4, 10, 0;
    const Matrix l = log_normalize(c);
    // Totals 2, 8, 10: median 8.
    EXPECT_NEAR(l(0, 0), std::log1p(4.0), 1e-15);
    EXPECT_NEAR(l(1, 1), std::log1p(4.0), 1e-15);
    EXPECT_NEAR(l(2, 0), std::log1p(8.0), 1e-15);
    EXPECT_EQ(l(2, 1), 0.0);
    c.row(1).setZero();
    EXPECT_THROW(log_normalize(c), DomainError);
}

TEST(GaeLoss, GeodesicTermVanishesForMatchingTargets)
{
    Rng rng(4);
    const GaeModel m = make_gae_model(6, 2, {8}, rng);
    const Matrix x = standard_normal(rng, 5, 6);
    const GaeLoss l = gae_loss(m, x, pairwise(m.embed(x)), false);
    EXPECT_LT(l.geodesic, 1e-20);
    EXPECT_NEAR(l.total, l.reconstruction, 1e-15);
}

TEST(GaeLoss, ClosedFormTerms)
{
    Rng rng(5);
    const GaeModel m = make_gae_model(4, 2, {6}, rng);
    const Matrix x = standard_normal(rng, 7, 4);
    const Matrix target = pairwise(standard_normal(rng, 7, 3));
    const GaeLoss l = gae_loss(m, x, target, false);
    const Matrix recon = mlp_forward(m.decoder, m.embed(x));
    EXPECT_NEAR(l.reconstruction, (recon - x).squaredNorm() / 28.0, 1e-12);
    const Matrix d = pairwise(m.embed(x));
    double pairs = 0.0;
    for (Eigen::Index i = 0; i < 7; ++i)
        for (Eigen::Index j = i + 1; j < 7; ++j) pairs += std::pow(d(i, j) - target(i, j), 2);
    EXPECT_NEAR(l.geodesic, 2.0 / 7.0 * pairs, 1e-12);
}

TEST(GaeLoss, GradientsMatchFiniteDifferences)
{
    Rng rng(6);
    GaeModel m = make_gae_model(5, 2, {7}, rng);
    const Matrix x = standard_normal(rng, 6, 5);
    const Matrix target = pairwise(standard_normal(rng, 6, 2));
    const GaeLoss l = gae_loss(m, x, target);
    auto params = m.parameters();
    double num = 0.0, den = 0.0;
    for (std::size_t p = 0; p < params.size(); ++p)
        for (std::size_t k = 0; k < params[p].size(); ++k) {
            const double orig = params[p][k];
            params[p][k] = orig + 1e-5;
            const double up = gae_loss(m, x, target, false).total;
            params[p][k] = orig - 1e-5;
            const double down = gae_loss(m, x, target, false).total;
            params[p][k] = orig;
            const double fd = (up - down) / 2e-5;
            num += std::pow(l.grads[p].data()[k] - fd, 2);
            den += fd * fd;
        }
    EXPECT_LT(std::sqrt(num / den), 1e-3);
}

TEST(TrainGae, LossDecreasesAndReplays)
{
    SyntheticSpec spec;
    spec.genes = 20;
    spec.cells_per_timepoint = 60;
    spec.seed = 11;
    const Matrix x = log_normalize(gen_synthetic(spec).data.counts);
    for (std::uint64_t seed : {1, 2, 3}) {
        GaeConfig c;
        c.batch_size = 64;
        c.max_epochs = 15;
        c.hidden = {32};
        c.lr = 3e-3;
        c.seed = seed;
        const TrainedGae a = train_gae(x, 2, c);
        ASSERT_EQ(a.loss_trace.size(), 15u);
        EXPECT_LT(a.loss_trace.back(), a.loss_trace.front()) << "seed " << seed;
        const TrainedGae b = train_gae(x, 2, c);
        EXPECT_EQ(a.loss_trace, b.loss_trace);
        EXPECT_EQ(a.model.embed(x), b.model.embed(x));
    }
}

TEST(TrainGae, RejectsBadConfig)
{
    GaeConfig c;
    c.batch_size = 1;
    EXPECT_THROW(train_gae(Matrix::Ones(10, 3), 2, c), DomainError);
    c.batch_size = 20;
    EXPECT_THROW(train_gae(Matrix::Ones(10, 3), 2, c), DomainError);
}
