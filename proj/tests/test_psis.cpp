#include "oracles.hpp"
#include "projpred/psis.hpp"

#include <gtest/gtest.h>

using namespace projpred;

namespace {

std::vector<double> sorted_gpd(std::size_t n, double k, double sigma, std::uint64_t seed)
{
    auto x = oracle::gpd_sample(n, k, sigma, seed);
    std::sort(x.begin(), x.end());
    return x;
}

}  // namespace

TEST(Gpd, ShapeRecovery)
{
    for (double k : {0.2, 0.5, 0.8}) {
        const auto x = sorted_gpd(4000, k, 1.3, 17);
        EXPECT_NEAR(fit_gpd(x, false).k, k, 0.15) << k;
        EXPECT_NEAR(fit_gpd(x, true).k, k, 0.15) << k;
        EXPECT_NEAR(fit_gpd(x, false).sigma, 1.3, 0.2) << k;
    }
}

TEST(Gpd, PriorShrinksTowardHalf)
{
    const auto x = sorted_gpd(60, 0.1, 1.0, 4);
    const double raw = fit_gpd(x, false).k;
    const double shrunk = fit_gpd(x, true).k;
    EXPECT_NEAR(shrunk, (raw * 60.0 + 5.0) / 70.0, 1e-12);
}

TEST(Gpd, QuantileInvertsCdf)
{
    for (double k : {-0.3, 0.0, 0.4}) {
        for (double p : {0.1, 0.5, 0.9}) {
            const double q = gpd_quantile(p, k, 2.0);
            const double cdf = k == 0.0 ? 1.0 - std::exp(-q / 2.0) : 1.0 - std::pow(1.0 + k * q / 2.0, -1.0 / k);
            EXPECT_NEAR(cdf, p, 1e-12);
        }
    }
}

TEST(Psis, TailLength)
{
    EXPECT_EQ(psis_tail_length(100), 20);
    EXPECT_EQ(psis_tail_length(400), 60);
    EXPECT_EQ(psis_tail_length(4000), 190);
    EXPECT_EQ(psis_tail_length(25), 5);
}

TEST(Psis, EqualRatiosUnchanged)
{
    const Vector lr = Vector::Constant(200, -3.0);
    const SmoothedRatios sm = pareto_smooth(lr);
    EXPECT_TRUE((sm.log_ratios.array() == 0.0).all());
    EXPECT_EQ(sm.khat, -std::numeric_limits<double>::infinity());
}

TEST(Psis, SmallSampleSentinel)
{
    ScopedSilence quiet;
    Vector lr(10);
    lr << 1, 2, 3, 4, 5, 6, 7, 8, 9, 10;
    const SmoothedRatios sm = pareto_smooth(lr);
    EXPECT_TRUE(std::isinf(sm.khat));
    EXPECT_GT(sm.khat, 0.0);
    EXPECT_TRUE(sm.log_ratios.isApprox(Vector(lr.array() - 10.0)));
}

TEST(Psis, SmoothingNeverExceedsRawMaximumAndKeepsBody)
{
    std::mt19937_64 rng(3);
    std::normal_distribution<double> nd(0.0, 1.5);
    Vector lr(1000);
    for (Index s = 0; s < lr.size(); ++s) lr(s) = nd(rng);
    const SmoothedRatios sm = pareto_smooth(lr);
    const Vector shifted = lr.array() - lr.maxCoeff();
    EXPECT_LE(sm.log_ratios.maxCoeff(), 0.0);
    EXPECT_TRUE(std::isfinite(sm.khat));
    const Index tail = psis_tail_length(1000);
    std::vector<double> sorted(shifted.data(), shifted.data() + shifted.size());
    std::sort(sorted.begin(), sorted.end());
    const double cutoff = sorted[static_cast<std::size_t>(1000 - tail - 1)];
    Index unchanged = 0;
    for (Index s = 0; s < lr.size(); ++s) {
        if (shifted(s) <= cutoff) {
            EXPECT_EQ(sm.log_ratios(s), shifted(s));
            ++unchanged;
        } else {
            EXPECT_GE(sm.log_ratios(s), cutoff - 1e-12);
        }
    }
    EXPECT_EQ(unchanged, 1000 - tail);
}

TEST(Psis, GpdRatiosRecoverShape)
{
    const auto x = oracle::gpd_sample(4000, 0.3, 1.0, 23);
    Vector lr(4000);
    for (Index s = 0; s < 4000; ++s) lr(s) = std::log1p(x[static_cast<std::size_t>(s)]);
    EXPECT_NEAR(pareto_smooth(lr).khat, 0.3, 0.15);
}

TEST(Psis, HeavyTailGivesLargeKhat)
{
    // log-ratios whose exponentials are Pareto with shape 1 (k = 1).
    const auto x = oracle::gpd_sample(2000, 1.0, 1.0, 8);
    Vector lr(2000);
    for (Index s = 0; s < 2000; ++s) lr(s) = std::log1p(x[static_cast<std::size_t>(s)]);
    EXPECT_GT(pareto_smooth(lr).khat, 0.7);
}

TEST(Psis, WeightsNormalizedPerObservation)
{
    const Matrix ll = oracle::normal_matrix(300, 4, 9) * 0.3;
    const PsisWeights w = psis_weights(ll, Vector::Ones(300));
    for (Index i = 0; i < 4; ++i) {
        EXPECT_NEAR(w.log_weights.col(i).array().exp().sum(), 1.0, 1e-10);
        EXPECT_LT(w.khat(i), 0.7);
    }
    EXPECT_THROW(psis_weights(ll, Vector::Ones(3)), Error);
}

TEST(Psis, LooMatchesRawImportanceSamplingWhenStable)
{
    // Small, well-behaved ratios: smoothing barely moves the estimate away from
    // the harmonic-mean identity  -log mean_s exp(-ll_s).
    std::mt19937_64 rng(21);
    std::normal_distribution<double> nd(-1.0, 0.05);
    Matrix ll(2000, 3);
    for (Index i = 0; i < ll.size(); ++i) ll.data()[i] = nd(rng);
    const PsisWeights w = psis_weights(ll, Vector::Ones(2000));
    const Vector loo = psis_loo_pointwise(ll, w);
    for (Index i = 0; i < 3; ++i) {
        const double raw = -std::log(ll.col(i).array().unaryExpr([](double v) { return std::exp(-v); }).mean());
        EXPECT_NEAR(loo(i), raw, 1e-3);
    }
}

TEST(Psis, UnequalDrawWeightsEnterRatios)
{
    Matrix ll = Matrix::Zero(100, 1);
    Vector dw = Vector::Ones(100);
    dw(0) = 3.0;
    const PsisWeights w = psis_weights(ll, dw);
    // Equal likelihoods: weights are proportional to the draw weights (below the tail cut).
    EXPECT_NEAR(w.log_weights(1, 0), std::log(1.0 / 102.0), 1e-2);
}
