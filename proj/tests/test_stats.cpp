#include "hileak/rng.hpp"
#include "hileak/stats.hpp"

#include <gtest/gtest.h>

#include <cmath>
#include <limits>
#include <numeric>
#include <vector>

using namespace hileak;

namespace {

struct TwoPass {
    double mean, var;
};

TwoPass two_pass(const std::vector<double> &xs) {
    double mean = std::accumulate(xs.begin(), xs.end(), 0.0) / static_cast<double>(xs.size());
    double ss = 0.0;
    for (double x : xs)
        ss += (x - mean) * (x - mean);
    return {mean, ss / static_cast<double>(xs.size() - 1)};
}

// Textbook Welch statistic computed from two-pass means and variances.
std::pair<double, double> naive_welch(const std::vector<double> &a, const std::vector<double> &b) {
    auto pa = two_pass(a), pb = two_pass(b);
    const double na = static_cast<double>(a.size()), nb = static_cast<double>(b.size());
    const double qa = pa.var / na, qb = pb.var / nb;
    const double t = (pa.mean - pb.mean) / std::sqrt(qa + qb);
    const double v = (qa + qb) * (qa + qb) / (qa * qa / (na - 1) + qb * qb / (nb - 1));
    return {t, v};
}

std::vector<double> draw(CounterRng &rng, std::size_t n, double mu, double sigma) {
    std::vector<double> xs(n);
    for (auto &x : xs)
        x = mu + sigma * rng.gaussian();
    return xs;
}

double rel(double a, double b) { return std::abs(a - b) / std::max(std::abs(b), 1e-300); }

} // namespace

TEST(Moments, FirstUpdate) {
    Moments m = update({}, 5.0);
    EXPECT_EQ(m.n, 1u);
    EXPECT_EQ(m.mean, 5.0);
    EXPECT_EQ(m.m2, 0.0);
}

TEST(Moments, SmallStream) {
    Moments m;
    for (double x : {1.0, 2.0, 3.0, 4.0})
        m = update(m, x);
    EXPECT_DOUBLE_EQ(m.mean, 2.5);
    EXPECT_NEAR(m.variance(), 5.0 / 3.0, 1e-15);
}

TEST(Moments, ShiftedDataKeepsPrecision) {
    Moments m;
    for (double x : {1e9, 1e9 + 1, 1e9 + 2})
        m = update(m, x);
    EXPECT_NEAR(m.variance(), 1.0, 1e-9);
}

TEST(Moments, RejectsNonFinite) {
    EXPECT_THROW(update({}, std::numeric_limits<double>::quiet_NaN()), std::invalid_argument);
    EXPECT_THROW(update({}, std::numeric_limits<double>::infinity()), std::invalid_argument);
}

TEST(Moments, MergeEqualsConcatenation) {
    CounterRng rng(11, 0);
    for (int rep = 0; rep < 200; ++rep) {
        auto a = draw(rng, 1 + rep % 37, 3.0, 2.0);
        auto b = draw(rng, 1 + rep % 53, -1.0, 0.5);
        std::vector<double> all = a;
        all.insert(all.end(), b.begin(), b.end());
        Moments merged = merge(moments_of(a), moments_of(b));
        auto ref = two_pass(all);
        EXPECT_EQ(merged.n, all.size());
        EXPECT_LE(rel(merged.mean, ref.mean), 1e-12);
        if (all.size() > 1)
            EXPECT_LE(rel(merged.variance(), ref.var), 1e-12);
    }
}

TEST(Moments, MergeIsAssociative) {
    CounterRng rng(12, 0);
    for (int rep = 0; rep < 1000; ++rep) {
        auto a = moments_of(draw(rng, 2 + rep % 11, 100.0, 3.0));
        auto b = moments_of(draw(rng, 2 + rep % 7, -50.0, 10.0));
        auto c = moments_of(draw(rng, 2 + rep % 5, 0.0, 0.1));
        auto l = merge(merge(a, b), c), r = merge(a, merge(b, c));
        EXPECT_EQ(l.n, r.n);
        EXPECT_LE(rel(l.mean, r.mean), 1e-10);
        EXPECT_LE(rel(l.m2, r.m2), 1e-10);
    }
}

TEST(Welch, WorkedExample) {
    auto r = welch_t(moments_of(std::vector<double>{1, 2, 3, 4}), moments_of(std::vector<double>{5, 6, 7, 8}));
    EXPECT_NEAR(r.t, -4.3818, 5e-5);
    EXPECT_NEAR(r.dof, 6.0, 5e-5);
}

TEST(Welch, IdenticalPopulationsGiveZero) {
    std::vector<double> a{1.5, 2.5, -3.0, 7.0};
    auto r = welch_t(moments_of(a), moments_of(a));
    EXPECT_EQ(r.t, 0.0);
    EXPECT_FALSE(r.infinite);
}

TEST(Welch, EqualVarianceDofReduces) {
    Moments a{1000, 0.0, 999.0 * 4.0}, b{1000, 1.0, 999.0 * 4.0};
    EXPECT_NEAR(welch_t(a, b).dof, 1998.0, 1e-9);
}

TEST(Welch, ZeroVarianceCases) {
    Moments a{10, 1.0, 0.0}, b{10, 1.0, 0.0}, c{10, 2.0, 0.0};
    auto same = welch_t(a, b);
    EXPECT_EQ(same.t, 0.0);
    EXPECT_FALSE(same.infinite);
    auto diff = welch_t(a, c);
    EXPECT_TRUE(diff.infinite);
    EXPECT_TRUE(std::isinf(diff.t));
    EXPECT_LT(diff.t, 0.0);
}

TEST(Welch, NeedsTwoPerClass) { EXPECT_THROW(welch_t(Moments{1, 0.0, 0.0}, Moments{5, 0.0, 1.0}), std::invalid_argument); }

TEST(Welch, AntisymmetricAndMatchesTwoPass) {
    CounterRng rng(13, 0);
    for (int rep = 0; rep < 1000; ++rep) {
        auto a = draw(rng, 2 + rep % 97, rng.uniform() * 4 - 2, 0.1 + rng.uniform() * 3);
        auto b = draw(rng, 2 + rep % 89, rng.uniform() * 4 - 2, 0.1 + rng.uniform() * 3);
        auto r = welch_t(moments_of(a), moments_of(b));
        auto [t, v] = naive_welch(a, b);
        EXPECT_LE(rel(r.t, t), 1e-9) << "rep " << rep;
        EXPECT_LE(rel(r.dof, v), 1e-9) << "rep " << rep;
        EXPECT_EQ(welch_t(moments_of(b), moments_of(a)).t, -r.t);
    }
}

TEST(StudentT, TabulatedQuantiles) {
    // Values from standard t tables.
    EXPECT_NEAR(student_t_isf(0.05, 99), 1.6604, 5e-5);
    EXPECT_NEAR(student_t_isf(0.025, 10), 2.2281, 5e-5);
    EXPECT_NEAR(student_t_isf(0.005, 5), 4.0321, 5e-5);
    EXPECT_NEAR(student_t_isf(0.05, 1), 6.3138, 5e-5);
    EXPECT_NEAR(two_sided_critical(0.05, 1e6), 1.95996, 1e-5);
}

TEST(StudentT, SurvivalRoundTrip) {
    for (double dof : {3.0, 17.0, 250.0, 5000.0})
        for (double p : {1e-9, 1e-5, 0.01, 0.3})
            EXPECT_LE(rel(student_t_sf(student_t_isf(p, dof), dof), p), 1e-6) << dof << ' ' << p;
}

TEST(CorrectedThreshold, SingleComparison) {
    EXPECT_NEAR(corrected_threshold(1, 1e-5, 1e7), 4.42, 0.01);
    for (double dof : {20.0, 300.0, 9000.0})
        EXPECT_DOUBLE_EQ(corrected_threshold(1, 1e-5, dof), two_sided_critical(1e-5, dof));
}

TEST(CorrectedThreshold, ThousandSampleBivariate) {
    const std::uint64_t n = 1000ull * 999 / 2 + 1000;
    EXPECT_NEAR(corrected_threshold(n, 1e-5, 1e6), 6.71, 0.05);
}

TEST(CorrectedThreshold, MonotoneInComparisons) {
    double prev = 0.0;
    for (std::uint64_t n : {1ull, 10ull, 1000ull, 1000000ull, 1000000000ull}) {
        double t = corrected_threshold(n, 1e-5, 5e4);
        EXPECT_GT(t, prev);
        prev = t;
    }
    EXPECT_THROW(corrected_threshold(10, 0.0, 100), std::invalid_argument);
    EXPECT_THROW(corrected_threshold(10, 1.0, 100), std::invalid_argument);
    EXPECT_THROW(corrected_threshold(0, 0.01, 100), std::invalid_argument);
}

TEST(Tost, WorkedBounds) {
    // 100 samples with mean 0 and sample standard deviation exactly 1.
    std::vector<double> xs(100);
    for (std::size_t i = 0; i < xs.size(); ++i)
        xs[i] = (i % 2 ? 1.0 : -1.0) * std::sqrt(0.99);
    auto b = tost_bounds(0.0, xs, 0.05);
    EXPECT_NEAR(b.s, 1.0, 1e-12);
    EXPECT_EQ(b.n, 100u);
    EXPECT_NEAR(b.upper, 0.1660, 5e-5);
    EXPECT_NEAR(b.lower, -0.1660, 5e-5);
    EXPECT_FALSE(b.degenerate);
    EXPECT_NEAR(b.upper - b.target_mu, student_t_isf(0.05, 99) * b.s / 10.0, 1e-15);
}

TEST(Tost, ZeroSpreadCollapses) {
    std::vector<double> xs(10, 0.25);
    auto b = tost_bounds(0.5, xs);
    EXPECT_TRUE(b.degenerate);
    EXPECT_EQ(b.lower, 0.5);
    EXPECT_EQ(b.upper, 0.5);
}

TEST(Tost, WidthScalesWithRootN) {
    CounterRng rng(14, 0);
    auto small = draw(rng, 50, 0.0, 1.0);
    std::vector<double> big = small;
    big.insert(big.end(), small.begin(), small.end());
    auto b1 = tost_bounds(0.0, small), b2 = tost_bounds(0.0, big);
    // Same data twice: s barely changes, so the width follows sqrt(n) once
    // the quantile and s changes are divided out.
    const double ratio = (b1.upper - b1.lower) / (b2.upper - b2.lower);
    const double expected = std::sqrt(2.0) * (student_t_isf(0.05, 49) * b1.s) / (student_t_isf(0.05, 99) * b2.s);
    EXPECT_NEAR(ratio, expected, 1e-12);
}

TEST(Tost, NotLeakyBasics) {
    CounterRng rng(15, 0);
    auto z = draw(rng, 200, 0.0, 1.0);
    std::vector<double> diffs{-0.5, 0.5, -0.4, 0.4, 0.3, -0.3};
    auto b = tost_bounds(0.0, diffs);
    EXPECT_TRUE(not_leaky(z, z, b));
    auto shifted = z;
    for (auto &x : shifted)
        x += 10.0;
    EXPECT_FALSE(not_leaky(shifted, z, b));
}

TEST(Tost, PlantedEquivalence) {
    // Two draws from one Gaussian; the margin comes from 100 chunk mean
    // differences of a third draw of the same size, at the margin level the
    // root-cause search uses.
    constexpr int kReps = 1000;
    constexpr std::size_t kN = 2000, kChunks = 100;
    int passes = 0;
    for (int rep = 0; rep < kReps; ++rep) {
        CounterRng rng(16, static_cast<std::uint64_t>(rep));
        auto f = draw(rng, kN, 1.0, 2.0), r = draw(rng, kN, 1.0, 2.0);
        auto third = draw(rng, 2 * kN, 1.0, 2.0);
        std::vector<double> diffs;
        const std::size_t chunk = third.size() / kChunks;
        for (std::size_t c = 0; c < kChunks; ++c) {
            Moments a, b;
            for (std::size_t i = 0; i < chunk; ++i)
                (i % 2 ? b : a) = update(i % 2 ? b : a, third[c * chunk + i]);
            diffs.push_back(a.mean - b.mean);
        }
        passes += not_leaky(f, r, tost_bounds(0.0, diffs, 1e-5), 0.05) ? 1 : 0;
    }
    EXPECT_GE(passes, 950);
}
