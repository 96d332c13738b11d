#include "test_util.hpp"

using namespace flatvi;

namespace {

VelocityNet zero_field(std::size_t dim)
{
    Rng rng(0);
    VelocityNet v = make_velocity_net(dim, {4}, rng);
    for (auto &l : v.net.layers) {
        l.weight.setZero();
        l.bias.setZero();
    }
    return v;
}

/// Field that ignores t and returns `a s + c` (identity-output single layer on (t, s)).
VelocityNet linear_field(double a, const RowVector &c)
{
    const auto m = c.size();
    VelocityNet v;
    Layer l;
    l.weight = Matrix::Zero(m, m + 1);
    l.weight.rightCols(m) = a * Matrix::Identity(m, m);
    l.bias = c;
    l.activation = Activation::identity;
    v.net.layers.push_back(l);
    return v;
}

}  // namespace

TEST(OtPairing, IdenticalCloudsCostZero)
{
    Rng rng(1);
    const Matrix a = standard_normal(rng, 7, 3);
    const Coupling c = ot_pair_batches(a, a);
    EXPECT_EQ(assignment_cost(squared_distance_matrix(a, a), c.perm), 0.0);
}

TEST(OtPairing, OneDimensionalExample)
{
    Matrix s0(2, 1), s1(2, 1);
    s0 << 0, 10;
    s1 << 1, 9;
    const Coupling c = ot_pair_batches(s0, s1);
    EXPECT_EQ(c.perm, (std::vector<std::size_t>{0, 1}));
    EXPECT_EQ(assignment_cost(squared_distance_matrix(s0, s1), c.perm), 2.0);
}

TEST(OtPairing, MatchesFactorialEnumeration)
{
    Rng rng(2);
    for (int inst = 0; inst < 50; ++inst)
        for (Eigen::Index n = 1; n <= 8; ++n) {
            const Matrix a = standard_normal(rng, n, 2), b = standard_normal(rng, n, 2);
            const Matrix cost = squared_distance_matrix(a, b);
            const Coupling c = ot_pair_batches(a, b);
            std::vector<std::size_t> sorted = c.perm;
            std::sort(sorted.begin(), sorted.end());
            for (std::size_t i = 0; i < sorted.size(); ++i) ASSERT_EQ(sorted[i], i);
            EXPECT_NEAR(assignment_cost(cost, c.perm), brute_force_assignment(cost), 1e-12);
        }
}

TEST(OtPairing, EmptyOrMismatchedBatchesRejected)
{
    EXPECT_THROW(ot_pair_batches(Matrix(0, 2), Matrix(0, 2)), DomainError);
    EXPECT_THROW(ot_pair_batches(Matrix::Zero(2, 2), Matrix::Zero(3, 2)), DimensionError);
}

TEST(ConditionalPath, EndpointsAndNoiseScale)
{
    Rng rng(3);
    const Matrix x0 = standard_normal(rng, 4, 3), x1 = standard_normal(rng, 4, 3);
    const Matrix zero = Matrix::Zero(4, 3);
    EXPECT_EQ(sample_conditional_path(x0, x1, Vector::Zero(4), 0.1, zero), x0);
    EXPECT_EQ(sample_conditional_path(x0, x1, Vector::Ones(4), 0.1, zero), x1);
    const int n = 10000;
    Matrix a = Matrix::Zero(n, 1), b = Matrix::Ones(n, 1);
    const Matrix xs = sample_conditional_path(a, b, Vector::Constant(n, 0.5), 0.1, standard_normal(rng, n, 1));
    const double m = xs.mean();
    const double sd = std::sqrt((xs.array() - m).square().sum() / (n - 1));
    EXPECT_NEAR(sd / 0.1, 1.0, 0.05);
    EXPECT_THROW(sample_conditional_path(x0, x1, Vector::Constant(4, 1.5), 0.1, zero), DomainError);
}

TEST(CfmLoss, ZeroWhenFieldMatchesTarget)
{
    RowVector c(2);
    c << 0.7, -1.1;
    const VelocityNet v = linear_field(0.0, c);
    CfmSegment s;
    s.x0 = Matrix::Zero(1, 2);
    s.x1 = c;
    s.t = Vector::Constant(1, 0.3);
    s.noise = Matrix::Zero(1, 2);
    EXPECT_NEAR(cfm_loss(v, {s}, 0.1).loss, 0.0, 1e-15);
    // Same target reached across a span of two units: the regression target halves.
    s.x1 = 2.0 * c;
    s.t_span = 2.0;
    EXPECT_NEAR(cfm_loss(v, {s}, 0.1).loss, 0.0, 1e-15);
}

TEST(CfmLoss, ZeroNetworkAndStaticPairs)
{
    Rng rng(4);
    CfmSegment s;
    s.x0 = standard_normal(rng, 5, 3);
    s.x1 = s.x0;
    s.t = Vector::Constant(5, 0.5);
    s.noise = standard_normal(rng, 5, 3);
    EXPECT_EQ(cfm_loss(zero_field(3), {s}, 0.1).loss, 0.0);
}

TEST(CfmLoss, GradientsMatchFiniteDifferences)
{
    Rng rng(5);
    VelocityNet v = make_velocity_net(3, {8, 8}, rng);
    std::vector<CfmSegment> segs;
    for (int k = 0; k < 2; ++k) {
        CfmSegment s;
        s.x0 = standard_normal(rng, 4, 3);
        s.x1 = standard_normal(rng, 4, 3);
        s.t = Vector::Random(4).array().abs();
        s.noise = standard_normal(rng, 4, 3);
        s.t_offset = k;
        segs.push_back(s);
    }
    const CfmLoss l = cfm_loss(v, segs, 0.1);
    auto params = v.net.parameters();
    double num = 0.0, den = 0.0;
    for (std::size_t p = 0; p < params.size(); ++p)
        for (std::size_t k = 0; k < params[p].size(); ++k) {
            const double orig = params[p][k];
            params[p][k] = orig + 1e-5;
            const double up = cfm_loss(v, segs, 0.1, false).loss;
            params[p][k] = orig - 1e-5;
            const double down = cfm_loss(v, segs, 0.1, false).loss;
            params[p][k] = orig;
            const double fd = (up - down) / 2e-5;
            num += std::pow(l.grads[p].data()[k] - fd, 2);
            den += fd * fd;
        }
    EXPECT_LT(std::sqrt(num / den), 1e-3);
}

TEST(TrainOtcfm, GaussianTranslationRecoversDisplacement)
{
    for (std::uint64_t seed : {1, 2, 3}) {
        Rng rng(100 + seed);
        TimeSeriesLatent ts;
        Matrix a = standard_normal(rng, 300, 1), b = standard_normal(rng, 300, 1);
        b.array() += 5.0;
        // The size-factor coordinate stays put: identical log l in both snapshots.
        ts.snapshots = {{a, Vector::Ones(300)}, {b, Vector::Ones(300)}};
        ts.times = {0.0, 1.0};
        CfmConfig c;
        c.iters = 600;
        c.lr = 3e-3;
        c.batch_size = 64;
        c.seed = seed;
        const TrainedVelocity t = train_otcfm(ts, c);
        const Matrix start = augmented_state(ts.snapshots[0]);
        const Matrix mid = integrate(t.field, start, 0.0, 0.5, 25);
        const Matrix v = t.field(0.5, mid);
        EXPECT_NEAR(v.col(0).mean(), 5.0, 0.5) << "seed " << seed;
        const Matrix end = integrate(t.field, start, 0.0, 1.0, 50);
        EXPECT_NEAR(end.col(0).mean() - start.col(0).mean(), 5.0, 0.5) << "seed " << seed;
    }
}

TEST(TrainOtcfm, ZeroItersAndReplay)
{
    Rng rng(6);
    TimeSeriesLatent ts;
    ts.snapshots = {{standard_normal(rng, 10, 2), Vector::Ones(10)}, {standard_normal(rng, 3, 2), Vector::Ones(3) * 2}};
    ts.times = {0.0, 1.0};
    CfmConfig c;
    c.iters = 0;
    c.seed = 9;
    const TrainedVelocity t0 = train_otcfm(ts, c);
    Rng init(9);
    const VelocityNet fresh = make_velocity_net(3, c.hidden, init);
    EXPECT_EQ(t0.field(0.2, Matrix::Ones(2, 3)), fresh(0.2, Matrix::Ones(2, 3)));
    c.iters = 20;  // batch 32 > snapshot sizes: drawn with replacement
    const TrainedVelocity a = train_otcfm(ts, c), b = train_otcfm(ts, c);
    EXPECT_EQ(a.loss_trace, b.loss_trace);
    EXPECT_EQ(a.field(0.5, Matrix::Ones(2, 3)), b.field(0.5, Matrix::Ones(2, 3)));
}

TEST(TrainOtcfm, RejectsBadSeries)
{
    TimeSeriesLatent ts;
    ts.snapshots = {{Matrix::Zero(3, 2), Vector::Ones(3)}};
    ts.times = {0.0};
    EXPECT_THROW(train_otcfm(ts, {}), DomainError);
    ts.snapshots.push_back({Matrix::Zero(3, 2), Vector::Ones(3)});
    ts.times = {1.0, 1.0};
    EXPECT_THROW(train_otcfm(ts, {}), DomainError);
}

TEST(Integrate, ZeroAndConstantFields)
{
    Rng rng(7);
    const Matrix s0 = standard_normal(rng, 5, 3);
    EXPECT_EQ(integrate(zero_field(3), s0, 0.0, 1.0, 10), s0);
    RowVector c(3);
    c << 1.0, -2.0, 0.5;
    const Matrix out = integrate(linear_field(0.0, c), s0, 0.0, 1.0, 7);
    EXPECT_LT((out - (s0.rowwise() + c)).cwiseAbs().maxCoeff(), 1e-14);
}

TEST(Integrate, ExponentialGrowthAndReversibility)
{
    const VelocityNet f = linear_field(1.0, RowVector::Zero(2));
    Matrix s0(1, 2);
    s0 << 1.0, -3.0;
    const Matrix s1 = integrate(f, s0, 0.0, 1.0, 100);
    EXPECT_LT(((s1 - s0 * std::exp(1.0)).array() / (s0 * std::exp(1.0)).array()).abs().maxCoeff(), 1e-6);
    const Matrix back = integrate(f, s1, 1.0, 0.0, 100);
    EXPECT_LT((back - s0).cwiseAbs().maxCoeff(), 1e-6);
    EXPECT_THROW(integrate(f, s0, 0.0, 1.0, 0), DomainError);
    EXPECT_THROW(integrate(linear_field(1e200, RowVector::Zero(2)), s0, 0.0, 1.0, 1), TrainingError);
}

TEST(Simulate, IdentityZeroFieldAndComposition)
{
    Rng rng(8);
    const Matrix s0 = standard_normal(rng, 6, 3);
    EXPECT_EQ(simulate_timepoints(make_velocity_net(3, {5}, rng), s0, 2, 2).size(), 1u);
    const auto zero = simulate_timepoints(zero_field(3), s0, 0, 3);
    ASSERT_EQ(zero.size(), 4u);
    for (const auto &m : zero) EXPECT_EQ(m, s0);

    const VelocityNet f = make_velocity_net(3, {6, 6}, rng);
    const auto full = simulate_timepoints(f, s0, 0, 2);
    const auto first = simulate_timepoints(f, s0, 0, 1);
    const auto second = simulate_timepoints(f, first.back(), 1, 2);
    EXPECT_EQ(full[1], first[1]);
    EXPECT_EQ(full[2], second[1]);
    EXPECT_THROW(simulate_timepoints(f, s0, 2, 1), DomainError);
}

TEST(AugmentedState, AppendsLogSizeFactor)
{
    Snapshot s{Matrix::Ones(2, 2), Vector::Constant(2, std::exp(1.5))};
    const Matrix a = augmented_state(s);
    EXPECT_EQ(a.cols(), 3);
    EXPECT_NEAR(a(1, 2), 1.5, 1e-15);
}
