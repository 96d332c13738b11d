#include "test_util.hpp"

#include <boost/math/special_functions/gamma.hpp>

using namespace flatvi;

namespace {

FlatVIModel small_model(std::uint64_t seed, std::size_t genes = 5, std::size_t d = 2, std::size_t hidden = 4)
{
    Rng rng(seed);
    FlatVIModel m = make_flatvi_model(genes, d, {hidden}, rng);
    m.log_theta = standard_normal(rng, 1, static_cast<Eigen::Index>(genes)).row(0) * 0.3;
    m.log_alpha = 0.2;
    return m;
}

Matrix random_counts(Rng &rng, Eigen::Index rows, Eigen::Index genes)
{
    Matrix x(rows, genes);
    for (Eigen::Index i = 0; i < rows; ++i) {
        for (Eigen::Index g = 0; g < genes; ++g) x(i, g) = static_cast<double>(uniform_index(rng, 9));
        x(i, 0) += 1.0;  // no zero cells
    }
    return x;
}

}  // namespace

TEST(SizeFactor, SumsCounts)
{
    RowVector x(3);
    x << 1, 2, 3;
    EXPECT_EQ(compute_size_factor(x), 6.0);
    EXPECT_THROW(compute_size_factor(RowVector::Zero(4)), DomainError);
    RowVector bad(2);
    bad << 1.5, 2;
    EXPECT_THROW(compute_size_factor(bad), DomainError);
}

TEST(SizeFactor, DatasetRowSumsMatchPairwiseOracle)
{
    Rng rng(1);
    const Matrix x = random_counts(rng, 40, 33);
    const Vector l = size_factors(x);
    for (Eigen::Index i = 0; i < x.rows(); ++i) {
        std::vector<double> v(x.row(i).data(), x.row(i).data() + x.cols());
        while (v.size() > 1) {
            std::vector<double> next;
            for (std::size_t k = 0; k + 1 < v.size(); k += 2) next.push_back(v[k] + v[k + 1]);
            if (v.size() % 2) next.push_back(v.back());
            v = next;
        }
        EXPECT_EQ(l(i), v[0]);
    }
}

TEST(Encode, NoiseZeroGivesMeanAndUnitVarianceShiftsByNoise)
{
    FlatVIModel m = small_model(2);
    RowVector x(5);
    x << 1, 0, 3, 2, 7;
    const Encoding e0 = encode(m, x, Vector::Zero(2));
    EXPECT_EQ(e0.z, e0.mean);
    // Force logvar = 0 by zeroing the logvar half of the last layer.
    m.encoder.layers.back().weight.bottomRows(2).setZero();
    m.encoder.layers.back().bias.tail(2).setZero();
    Vector n(2);
    n << 0.3, -1.2;
    const Encoding e1 = encode(m, x, n);
    EXPECT_NEAR((e1.z - (e1.mean + n)).norm(), 0.0, 1e-15);
}

TEST(Encode, ConsumesLog1p)
{
    const FlatVIModel m = small_model(3);
    RowVector x(5);
    x << 4, 0, 1, 9, 2;
    const Matrix direct = mlp_forward(m.encoder, x.array().log1p().matrix());
    const Encoding e = encode(m, x, Vector::Zero(2));
    EXPECT_EQ(e.mean, direct.row(0).head(2).transpose());
    EXPECT_EQ(e.logvar, direct.row(0).tail(2).transpose());
}

TEST(Encode, SampleSpreadMatchesPosteriorStd)
{
    const FlatVIModel m = small_model(4);
    RowVector x(5);
    x << 2, 2, 0, 1, 5;
    Rng rng(5);
    const int n = 10000;
    Matrix zs(n, 2);
    Vector logvar;
    for (int i = 0; i < n; ++i) {
        const Encoding e = encode(m, x, standard_normal(rng, 2, 1).col(0));
        zs.row(i) = e.z.transpose();
        logvar = e.logvar;
    }
    const RowVector mean = zs.colwise().mean();
    for (int j = 0; j < 2; ++j) {
        const double sd = std::sqrt((zs.col(j).array() - mean(j)).square().sum() / (n - 1));
        EXPECT_NEAR(sd / std::exp(0.5 * logvar(j)), 1.0, 0.05);
    }
}

TEST(Decode, UniformLogitsSplitSizeFactorEvenly)
{
    FlatVIModel m = small_model(6);
    m.decoder.layers.back().weight.setZero();
    m.decoder.layers.back().bias.setConstant(0.4);
    const RowVector mu = decode(m, Vector::Random(2), 10.0);
    for (Eigen::Index g = 0; g < mu.size(); ++g) EXPECT_NEAR(mu(g), 2.0, 1e-14);
}

TEST(Decode, LinearInSizeFactorAndSumsToIt)
{
    const FlatVIModel m = small_model(7, 12, 3, 8);
    Rng rng(8);
    for (int trial = 0; trial < 20; ++trial) {
        const Vector z = standard_normal(rng, 3, 1).col(0) * 2.0;
        const double l = 1.0 + 100.0 * uniform01(rng);
        const RowVector mu = decode(m, z, l);
        EXPECT_GT(mu.minCoeff(), 0.0);
        EXPECT_NEAR(mu.sum() / l, 1.0, 1e-9);
        EXPECT_EQ(decode(m, z, 2.0 * l), 2.0 * mu);
    }
}

TEST(NbLogPmf, ClosedFormValues)
{
    RowVector one(1);
    one << 1.0;
    EXPECT_NEAR(nb_log_pmf(RowVector::Zero(1), one, one), std::log(0.5), 1e-12);
    EXPECT_NEAR(nb_log_pmf(one, one, one), std::log(0.25), 1e-12);
}

TEST(NbLogPmf, NormalisesOverSupport)
{
    RowVector mu(1), th(1), x(1);
    mu << 3.0;
    th << 2.0;
    double total = 0.0;
    for (int k = 0; k <= 500; ++k) {
        x << k;
        const double lp = nb_log_pmf(x, mu, th);
        EXPECT_LE(lp, 0.0);
        total += std::exp(lp);
    }
    EXPECT_NEAR(total, 1.0, 1e-6);
}

TEST(NbLogPmf, MatchesBoostGammaFormulation)
{
    // Independent path: pmf = Gamma(x+th) / (Gamma(th) x!) p^th (1-p)^x with p = th/(th+mu).
    Rng rng(9);
    for (int trial = 0; trial < 50; ++trial) {
        const double mu = 0.1 + 20.0 * uniform01(rng), th = 0.2 + 10.0 * uniform01(rng);
        const double k = static_cast<double>(uniform_index(rng, 40));
        const double p = th / (th + mu);
        const double ref = boost::math::lgamma(k + th) - boost::math::lgamma(th) - boost::math::lgamma(k + 1.0) +
                           th * std::log(p) + k * std::log1p(-p);
        RowVector a(1), b(1), c(1);
        a << k;
        b << mu;
        c << th;
        EXPECT_NEAR(nb_log_pmf(a, b, c), ref, 1e-10);
    }
}

TEST(NbLogPmf, NonFiniteIsRejected)
{
    RowVector x(1), mu(1), th(1);
    x << 1;
    mu << 0.0;
    th << 1.0;
    EXPECT_THROW(nb_log_pmf(x, mu, th), DomainError);
    mu << 1.0;
    x << std::numeric_limits<double>::infinity();
    EXPECT_THROW(nb_log_pmf(x, mu, th), DomainError);
}

TEST(Kl, ClosedFormValues)
{
    EXPECT_EQ(kl_standard_normal(Vector::Zero(3), Vector::Zero(3)), 0.0);
    Vector m(1);
    m << 1.0;
    EXPECT_NEAR(kl_standard_normal(m, Vector::Zero(1)), 0.5, 1e-15);
}

TEST(Kl, MatchesMonteCarloEstimate)
{
    Rng rng(10);
    for (int trial = 0; trial < 5; ++trial) {
        const Vector mean = standard_normal(rng, 3, 1).col(0);
        const Vector logvar = standard_normal(rng, 3, 1).col(0) * 0.5;
        const int n = 200000;
        double acc = 0.0;
        for (int s = 0; s < n; ++s) {
            const Vector eps = standard_normal(rng, 3, 1).col(0);
            const Vector z = mean + (0.5 * logvar).array().exp().matrix().cwiseProduct(eps);
            // log q - log p, the 2 pi terms cancel.
            acc += (-0.5 * (logvar.array() + eps.array().square()) + 0.5 * z.array().square()).sum();
        }
        EXPECT_NEAR(acc / n / kl_standard_normal(mean, logvar), 1.0, 0.02);
    }
}

TEST(FlatviLoss, LambdaZeroIsNegativeElbo)
{
    const FlatVIModel m = small_model(11);
    Rng rng(12);
    const Matrix x = random_counts(rng, 6, 5);
    const Matrix noise = standard_normal(rng, 6, 2);
    for (double kw : {0.0, 0.4, 1.0}) {
        const LossResult r = flatvi_loss(m, x, noise, 0.0, kw, false);
        EXPECT_NEAR(r.terms.total, negative_elbo(m, x, noise, kw), 1e-10);
        EXPECT_EQ(r.terms.flat, 0.0);
    }
}

TEST(FlatviLoss, FlatTermMatchesPlainPullbackComputation)
{
    const FlatVIModel m = small_model(13);
    Rng rng(14);
    const Matrix x = random_counts(rng, 4, 5);
    const Matrix noise = standard_normal(rng, 4, 2);
    const LossResult r = flatvi_loss(m, x, noise, 2.5, 1.0, false);
    const auto [mean, logvar] = encode_batch(m, x);
    std::vector<MetricTensor> metrics;
    for (Eigen::Index i = 0; i < x.rows(); ++i) {
        const Vector z = mean.row(i).transpose() + (0.5 * logvar.row(i).transpose()).array().exp().matrix().cwiseProduct(
                                                      noise.row(i).transpose());
        metrics.push_back(pullback_metric(m, z, x.row(i).sum()));
    }
    EXPECT_NEAR(r.terms.flat, flattening_loss(metrics, m.alpha()), 1e-9 * std::max(1.0, r.terms.flat));
    EXPECT_NEAR(r.terms.total, r.terms.nll + r.terms.kl + 2.5 * r.terms.flat, 1e-9 * std::abs(r.terms.total));
}

TEST(FlatviLoss, DuplicatedRowsGiveSameLossAsSingleRow)
{
    const FlatVIModel m = small_model(15);
    Rng rng(16);
    const Matrix x = random_counts(rng, 1, 5);
    const Matrix n = standard_normal(rng, 1, 2);
    const double single = flatvi_loss(m, x, n, 1.0, 1.0, false).terms.total;
    const Matrix x3 = x.replicate(3, 1), n3 = n.replicate(3, 1);
    EXPECT_NEAR(flatvi_loss(m, x3, n3, 1.0, 1.0, false).terms.total, single, 1e-10 * std::abs(single));
}

TEST(FlatviLoss, GradientsMatchFiniteDifferences)
{
    FlatVIModel m = small_model(17, 5, 2, 4);
    Rng rng(18);
    const Matrix x = random_counts(rng, 3, 5);
    const Matrix noise = standard_normal(rng, 3, 2);
    const LossResult r = flatvi_loss(m, x, noise, 1.5, 0.7);
    auto params = m.parameters();
    ASSERT_EQ(params.size(), r.grads.size());
    double num = 0.0, den = 0.0;
    for (std::size_t p = 0; p < params.size(); ++p)
        for (std::size_t k = 0; k < params[p].size(); ++k) {
            const double orig = params[p][k];
            params[p][k] = orig + 1e-5;
            const double up = flatvi_loss(m, x, noise, 1.5, 0.7, false).terms.total;
            params[p][k] = orig - 1e-5;
            const double down = flatvi_loss(m, x, noise, 1.5, 0.7, false).terms.total;
            params[p][k] = orig;
            const double fd = (up - down) / 2e-5;
            num += std::pow(r.grads[p].data()[k] - fd, 2);
            den += fd * fd;
        }
    EXPECT_LT(std::sqrt(num / den), 1e-3);
}

TEST(TrainFlatvi, ZeroEpochsReturnsInitialisation)
{
    Rng rng(19);
    const Matrix x = random_counts(rng, 40, 5);
    TrainConfig c;
    c.max_epochs = 0;
    c.latent_dim = 2;
    c.hidden = {8};
    c.seed = 21;
    const TrainedFlatVI t = train_flatvi(x, c);
    Rng init(21);
    const FlatVIModel fresh = make_flatvi_model(5, 2, {8}, init);
    EXPECT_EQ(mlp_forward(t.model.decoder, Matrix::Ones(1, 2)), mlp_forward(fresh.decoder, Matrix::Ones(1, 2)));
    EXPECT_TRUE(t.loss_trace.empty());
}

TEST(TrainFlatvi, ReducesNllAndReplaysExactly)
{
    SyntheticSpec spec;
    spec.genes = 20;
    spec.cells_per_timepoint = 100;
    for (std::uint64_t seed : {1, 2, 3}) {
        spec.seed = seed;
        const Matrix x = gen_synthetic(spec).data.counts;
        TrainConfig c;
        c.latent_dim = 2;
        c.hidden = {16};
        c.max_epochs = 5;
        c.lambda = 1.0;
        c.seed = seed;
        TrainConfig c0 = c;
        c0.max_epochs = 0;
        auto nll = [&](const FlatVIModel &m) {
            const auto enc = encode_batch(m, x);
            double s = 0.0;
            for (Eigen::Index i = 0; i < x.rows(); ++i)
                s -= nb_log_pmf(x.row(i), decode(m, enc.first.row(i).transpose(), x.row(i).sum()), m.theta());
            return s / static_cast<double>(x.rows());
        };
        const TrainedFlatVI a = train_flatvi(x, c);
        EXPECT_LT(nll(a.model), nll(train_flatvi(x, c0).model));
        const TrainedFlatVI b = train_flatvi(x, c);
        EXPECT_EQ(a.loss_trace, b.loss_trace);
        EXPECT_EQ(a.model.log_theta, b.model.log_theta);
    }
}

TEST(TrainFlatvi, RejectsBadConfig)
{
    Rng rng(22);
    const Matrix x = random_counts(rng, 10, 5);
    TrainConfig c;
    c.lambda = -1.0;
    EXPECT_THROW(train_flatvi(x, c), DomainError);
    c.lambda = 1.0;
    c.batch_size = 20;
    EXPECT_THROW(train_flatvi(x, c), DomainError);
}

TEST(KlAnneal, LinearRamp)
{
    EXPECT_EQ(kl_weight_for_epoch(0, 0), 1.0);
    EXPECT_EQ(kl_weight_for_epoch(0, 4), 0.0);
    EXPECT_EQ(kl_weight_for_epoch(2, 4), 0.5);
    EXPECT_EQ(kl_weight_for_epoch(9, 4), 1.0);
}
