#include "oracles.hpp"
#include "projpred/selection.hpp"

#include <gtest/gtest.h>

using namespace projpred;

namespace {

Vector vec(std::initializer_list<double> v)
{
    Vector out(static_cast<Index>(v.size()));
    Index i = 0;
    for (double x : v) out(i++) = x;
    return out;
}

// Four predictors in two tight pairs: {0,1} and {2,3}.
Dataset paired_data(std::uint64_t seed)
{
    const Matrix z = oracle::normal_matrix(200, 2, seed);
    const Matrix e = oracle::normal_matrix(200, 4, seed + 1) * 0.2;
    Matrix x(200, 4);
    x.col(0) = z.col(0) + e.col(0);
    x.col(1) = z.col(0) + e.col(1);
    x.col(2) = z.col(1) + e.col(2);
    x.col(3) = z.col(1) + e.col(3);
    const Vector y = x.col(0) + x.col(2);
    return Dataset(x, y, Family::gaussian());
}

PosteriorDraws dense_draws(Index p, std::uint64_t seed)
{
    Matrix coef = Matrix::Constant(10, p + 1, 0.5) + oracle::normal_matrix(10, p + 1, seed) * 0.05;
    return PosteriorDraws(coef, Vector::Ones(10));
}

}  // namespace

TEST(SeRule, Examples)
{
    EXPECT_EQ(select_size_se(vec({-10, -3, -0.5, 0}), vec({2, 2, 1, 0})).size, 2);
    EXPECT_EQ(select_size_se(vec({-10, -2, -0.5, 0}), vec({2, 2, 1, 0})).size, 1);  // boundary counts
    const SizeChoice f = select_size_se(vec({-10, -5, -3}), vec({1, 1, 1}));
    EXPECT_EQ(f.size, 2);
    EXPECT_TRUE(f.fallback_used);
    EXPECT_FALSE(select_size_se(vec({-10, 0}), vec({1, 0})).fallback_used);
    EXPECT_THROW(select_size_se(vec({}), vec({})), Error);
}

TEST(SeRule, SpecArithmetic)
{
    // reference utility -100: -100.5 with s = 1 qualifies, -102 does not.
    EXPECT_EQ(select_size_se(vec({-102.0 + 100.0, -100.5 + 100.0}), vec({1.0, 1.0})).size, 1);
    std::mt19937_64 rng(8);
    std::uniform_real_distribution<double> u(0.5, 2.0);
    Vector d(12), s(12);
    for (Index k = 0; k < 12; ++k) {
        s(k) = u(rng);
        d(k) = k < 7 ? -s(k) - u(rng) : -s(k) + 0.1;
    }
    Index scan = -1;
    for (Index k = 0; k < 12 && scan < 0; ++k)
        if (d(k) + s(k) >= 0.0) scan = k;
    EXPECT_EQ(scan, 7);
    EXPECT_EQ(select_size_se(d, s).size, scan);
}

TEST(DeltaRule, Examples)
{
    const Vector d = vec({-20, -6, -4, -1, 0});
    EXPECT_EQ(select_size_delta(d, 4.0).size, 2);
    EXPECT_EQ(select_size_delta(d, 3.9).size, 3);
    EXPECT_EQ(select_size_delta(d, 0.0).size, 4);
    const SizeChoice f = select_size_delta(vec({-20, -6}), 4.0);
    EXPECT_EQ(f.size, 1);
    EXPECT_TRUE(f.fallback_used);
    EXPECT_THROW(select_size_delta(d, -1.0), Error);
    EXPECT_EQ(select_size_delta(vec({-4.1, -3.9, 0}), 4.0).size, 1);
    EXPECT_EQ(parse_selection_rule("se"), SelectionRule::se);
    EXPECT_THROW(parse_selection_rule("bic"), Error);
}

TEST(Isotonic, Example)
{
    const Vector fit = isotonic_regression(vec({-10, -2, -5, -1}));
    EXPECT_TRUE(fit.isApprox(vec({-10, -3.5, -3.5, -1})));
}

TEST(Isotonic, Weighted)
{
    const Vector fit = isotonic_regression(vec({3, 1}), vec({1, 3}));
    EXPECT_NEAR(fit(0), 1.5, 1e-12);
    EXPECT_NEAR(fit(1), 1.5, 1e-12);
}

TEST(Isotonic, MatchesExhaustiveOracle)
{
    std::mt19937_64 rng(4);
    std::normal_distribution<double> nd;
    for (int rep = 0; rep < 40; ++rep) {
        const Index m = 2 + rep % 9;
        Vector v(m);
        for (Index i = 0; i < m; ++i) v(i) = nd(rng) + 0.2 * static_cast<double>(i);
        const Vector fit = isotonic_regression(v);
        const Vector best = oracle::brute_isotonic(v);
        EXPECT_NEAR(oracle::sse(fit, v), oracle::sse(best, v), 1e-10);
        for (Index i = 1; i < m; ++i) EXPECT_GE(fit(i), fit(i - 1) - 1e-12);
    }
}

TEST(Smoothing, FixedPointAndNormalizedExample)
{
    const Vector mono = vec({-9, -4, -4, -1, 0});
    const Vector se = vec({3, 2, 2, 1, 0.5});
    const SmoothedCurve a = smooth_monotone(mono, se, 0);
    EXPECT_LE((a.elpd_scale - mono).cwiseAbs().maxCoeff(), 1e-12);
    const SmoothedCurve b = smooth_monotone(vec({-10, -2, -5, -1}), Vector::Ones(4), 0);
    EXPECT_TRUE(b.normalized.isApprox(vec({-10, -3.5, -3.5, -1}), 1e-12));
}

TEST(Smoothing, DropPrefixKeptRaw)
{
    const Vector d = vec({-50, -10, -2, -5, -1, 0});
    const Vector s = vec({5, 2, 1, 1, 1, 0});
    const SmoothedCurve c = smooth_monotone(d, s, 1);
    EXPECT_TRUE(c.smoothed);
    EXPECT_EQ(c.elpd_scale(0), -50.0);
    EXPECT_EQ(c.normalized(0), -10.0);
    for (Index k = 2; k < 6; ++k) EXPECT_GE(c.normalized(k), c.normalized(k - 1) - 1e-12);
    EXPECT_NEAR(c.normalized(2), -3.5, 1e-12);
    EXPECT_NEAR(c.elpd_scale(3), -3.5, 1e-12);
    // s floored at kMinSe: the zero-se full model stays at zero.
    EXPECT_NEAR(c.elpd_scale(5), 0.0, 1e-12);
}

TEST(Smoothing, ShortCurvePassesThrough)
{
    ScopedSilence quiet;
    const SmoothedCurve c = smooth_monotone(vec({-3, -1, 0}), vec({1, 1, 1}), 1);
    EXPECT_FALSE(c.smoothed);
    EXPECT_EQ(c.elpd_scale, vec({-3, -1, 0}));
}

TEST(SelectSize, UsesSmoothedCurveWhenRequested)
{
    PathEvaluation e;
    e.delta_elpd = vec({-50, -10, -2, -5, -1, 0});
    e.se_delta = vec({5, 2, 1, 1, 1, 0});
    SelectionConfig raw;
    raw.rule = SelectionRule::delta;
    raw.delta_threshold = 2.5;
    EXPECT_EQ(select_size(e, raw).selected_size, 2);
    SelectionConfig sm = raw;
    sm.smooth = true;
    const SelectionReport r = select_size(e, sm);
    EXPECT_EQ(r.selected_size, 4);
    EXPECT_TRUE(r.smoothed);
    ASSERT_TRUE(r.smoothed_curve);
    SelectionConfig se;
    se.rule = SelectionRule::se;
    EXPECT_EQ(select_size(e, se).selected_size, 4);
}

TEST(Distance, Axioms)
{
    const Dataset d = paired_data(3);
    const PosteriorDraws draws = dense_draws(4, 5);
    const Matrix m = distance_matrix(d, draws);
    for (Index a = 0; a < 4; ++a) {
        EXPECT_EQ(m(a, a), 0.0);
        for (Index b = 0; b < 4; ++b) {
            EXPECT_EQ(m(a, b), m(b, a));
            EXPECT_GE(m(a, b), 0.0);
            EXPECT_LE(m(a, b), 1.0);
        }
    }
    EXPECT_NEAR(predictor_distance(d, draws, 0, 2), m(0, 2), 1e-14);
    EXPECT_EQ(predictor_distance(d, draws, 1, 1), 0.0);
    EXPECT_EQ(m, distance_matrix(d, draws, 3));
}

TEST(Distance, GaussianEqualsOneMinusAbsCorrelation)
{
    const Dataset d = paired_data(7);
    const Matrix m = distance_matrix(d, dense_draws(4, 2));
    for (Index a = 0; a < 4; ++a)
        for (Index b = a + 1; b < 4; ++b)
            EXPECT_NEAR(m(a, b), 1.0 - std::abs(oracle::correlation(d.x().col(a), d.x().col(b))), 1e-10);
    EXPECT_LT(m(0, 1), m(0, 2));
    EXPECT_LT(m(2, 3), m(1, 3));
}

TEST(Distance, AntiCorrelatedIsZero)
{
    Vector a = Vector::LinSpaced(10, 0, 9);
    EXPECT_NEAR(correlation_distance(a, -2.0 * a), 0.0, 1e-14);
    ScopedSilence quiet;
    EXPECT_EQ(correlation_distance(a, Vector::Constant(10, 3.0)), 1.0);
}

TEST(Distance, IndependentNoiseNearOne)
{
    const Matrix x = oracle::normal_matrix(20000, 3, 6);
    const Dataset d(x, x.col(0), Family::gaussian());
    const Matrix m = distance_matrix(d, dense_draws(3, 4));
    EXPECT_GT(m(0, 1), 0.97);
    EXPECT_GT(m(1, 2), 0.97);
}

TEST(Distance, ZeroVarianceWarns)
{
    Matrix x = oracle::normal_matrix(30, 2, 1);
    x.col(1).setConstant(2.0);
    const Dataset d(x, x.col(0), Family::gaussian());
    int warnings = 0;
    const WarningSink prev = set_warning_sink([&](const std::string&) { ++warnings; });
    const Matrix m = distance_matrix(d, dense_draws(2, 1));
    set_warning_sink(prev);
    EXPECT_EQ(m(0, 1), 1.0);
    EXPECT_EQ(warnings, 1);
}

TEST(Distance, BernoulliPairs)
{
    const Dataset g = paired_data(11);
    Vector y(200);
    for (Index i = 0; i < 200; ++i) y(i) = g.y()(i) > 0.0 ? 1.0 : 0.0;
    const Dataset d(g.x(), y, Family::bernoulli());
    const Matrix m = distance_matrix(d, dense_draws(4, 3));
    EXPECT_LT(m(0, 1), m(0, 3));
    EXPECT_LT(m(2, 3), m(1, 2));
}

TEST(Dendrogram, FourPredictorBlocks)
{
    Matrix dist(4, 4);
    dist << 0, 0.1, 0.8, 0.9, 0.1, 0, 0.7, 0.85, 0.8, 0.7, 0, 0.2, 0.9, 0.85, 0.2, 0;
    const Dendrogram t = build_dendrogram(dist);
    ASSERT_EQ(t.merges.size(), 3u);
    EXPECT_EQ(t.num_leaves, 4);
    EXPECT_EQ(std::min(t.merges[0].left, t.merges[0].right), 0);
    EXPECT_EQ(std::max(t.merges[0].left, t.merges[0].right), 1);
    EXPECT_NEAR(t.merges[0].height, 0.1, 1e-15);
    EXPECT_NEAR(t.merges[1].height, 0.2, 1e-15);
    EXPECT_NEAR(t.merges[2].height, 0.9, 1e-15);  // complete linkage: the largest cross distance
    EXPECT_EQ(t.merges[2].size, 4);
    EXPECT_EQ(t.root(), 6);
    auto leaves = t.leaves_under(t.root());
    std::sort(leaves.begin(), leaves.end());
    EXPECT_EQ(leaves, (std::vector<Index>{0, 1, 2, 3}));
    EXPECT_NEAR(cophenetic(t, 0, 1), 0.1, 1e-15);
    EXPECT_NEAR(cophenetic(t, 1, 3), 0.9, 1e-15);
    EXPECT_EQ(cophenetic(t, 2, 2), 0.0);
}

TEST(Dendrogram, HeightsMonotoneAndUltrametric)
{
    std::mt19937_64 rng(2);
    std::uniform_real_distribution<double> u;
    for (int rep = 0; rep < 10; ++rep) {
        const Index p = 3 + rep;
        Matrix d = Matrix::Zero(p, p);
        for (Index a = 0; a < p; ++a)
            for (Index b = a + 1; b < p; ++b) d(a, b) = d(b, a) = u(rng);
        const Dendrogram t = build_dendrogram(d);
        ASSERT_EQ(static_cast<Index>(t.merges.size()), p - 1);
        for (std::size_t m = 1; m < t.merges.size(); ++m) EXPECT_GE(t.merges[m].height, t.merges[m - 1].height);
        for (Index i = 0; i < p; ++i)
            for (Index j = 0; j < p; ++j)
                for (Index k = 0; k < p; ++k)
                    EXPECT_LE(cophenetic(t, i, j), std::max(cophenetic(t, i, k), cophenetic(t, k, j)) + 1e-12);
    }
}

TEST(Dendrogram, SingleLeafAndInvalid)
{
    const Dendrogram t = build_dendrogram(Matrix::Zero(1, 1));
    EXPECT_TRUE(t.merges.empty());
    EXPECT_EQ(t.root(), 0);
    EXPECT_THROW(build_dendrogram(Matrix::Zero(2, 3)), Error);
}
