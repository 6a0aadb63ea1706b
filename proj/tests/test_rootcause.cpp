#include "hileak/error.hpp"
#include "hileak/rootcause.hpp"
#include "plant.hpp"

#include <gtest/gtest.h>

#include <cmath>

using namespace hileak;
using hileak::testing::Plant;

namespace {

RootCauseConfig config(std::uint64_t seed) {
    RootCauseConfig c;
    c.seed = seed;
    c.threads = 1;
    return c;
}

std::vector<Culprit> culprits(std::initializer_list<std::pair<std::uint32_t, std::uint32_t>> xs) {
    std::vector<Culprit> out;
    for (auto [s, c] : xs)
        out.push_back({s, c});
    return out;
}

} // namespace

TEST(Nps, MatchesHandComputation) {
    ComponentMatrix L(4, {5, 9}, {"x", "y", "z"}, {1.0, 2.0, 0.5});
    L.labels = {TraceClass::Fixed, TraceClass::Random, TraceClass::Fixed, TraceClass::Random};
    float v = 0.0f;
    for (auto &x : L.values)
        x = (v += 0.75f) * (static_cast<int>(v) % 3 == 0 ? -1.0f : 1.0f);
    const std::uint32_t points[2] = {5, 9};
    const std::uint32_t comps[2] = {0, 2};
    auto z = nps(L, points, comps);
    std::vector<double> p[2];
    for (std::size_t j = 0; j < 2; ++j) {
        p[j].resize(4);
        for (std::size_t i = 0; i < 4; ++i)
            p[j][i] = 1.0 * L.at(i, j, 0) + 0.5 * L.at(i, j, 2);
        const double mf = (p[j][0] + p[j][2]) / 2, mr = (p[j][1] + p[j][3]) / 2;
        for (std::size_t i = 0; i < 4; ++i)
            p[j][i] -= i % 2 == 0 ? mf : mr;
    }
    for (std::size_t i = 0; i < 4; ++i)
        EXPECT_NEAR(z[i], p[0][i] * p[1][i], 1e-9);
    EXPECT_THROW(nps(L, std::span<const std::uint32_t>{}, comps), std::invalid_argument);
    EXPECT_THROW(nps(L, points, std::span<const std::uint32_t>{}), std::invalid_argument);
    const std::uint32_t bad[1] = {7};
    EXPECT_THROW(nps(L, points, bad), std::out_of_range);
    const std::uint32_t missing[1] = {6};
    EXPECT_THROW(nps(L, missing, comps), std::out_of_range);
}

TEST(Nps, PlantedLeakIsVisible) {
    Plant p;
    auto L = p.make(1);
    const std::uint32_t pts[2] = {p.a, p.b};
    std::vector<std::uint32_t> all(p.components);
    for (std::uint32_t c = 0; c < all.size(); ++c)
        all[c] = c;
    EXPECT_GT(std::fabs(class_ttest(L, nps(L, pts, all)).t), 10.0);
    auto C = p.make(2, true);
    EXPECT_LT(std::fabs(class_ttest(C, nps(C, pts, all)).t), 4.5);
}

TEST(Flc, FindsSingleCulprit) {
    Plant p;
    int exact = 0;
    for (std::uint64_t seed = 0; seed < 10; ++seed) {
        auto rc = flc(p.make(100 + seed), p.make(200 + seed, true), p.leak(), config(seed));
        EXPECT_EQ(rc.method, RootCauseMethod::Elimination);
        exact += rc.culprits == culprits({{3, 2}});
    }
    EXPECT_GE(exact, 9);
}

TEST(Flc, RedundantCulpritsDefeatElimination) {
    Plant p;
    p.at_a = {2, 3};
    for (std::uint64_t seed = 0; seed < 5; ++seed) {
        auto rc = flc(p.make(300 + seed), p.make(400 + seed, true), p.leak(), config(seed));
        EXPECT_TRUE(rc.culprits.empty());
    }
}

TEST(Flc, RejectsMismatchedCompanion) {
    Plant p;
    Plant q;
    q.components = 10;
    q.at_b = {4};
    EXPECT_THROW(flc(p.make(1), q.make(2, true), p.leak(), config(0)), std::invalid_argument);
}

TEST(MonteCarlo, FindsRedundantCulprits) {
    Plant p;
    p.at_a = {2, 3};
    for (std::uint64_t seed = 0; seed < 5; ++seed) {
        MonteCarloStats stats;
        auto rc = monte_carlo(p.make(500 + seed), p.leak(), config(seed), &stats);
        EXPECT_EQ(rc.method, RootCauseMethod::MonteCarlo);
        EXPECT_EQ(rc.culprits, culprits({{3, 2}, {3, 3}, {8, 4}, {8, 5}}));
        EXPECT_EQ(stats.experiments, 100u);
        EXPECT_GT(stats.rate_in(2), stats.rate_out(2));
    }
}

TEST(MonteCarlo, DeterministicPerSeed) {
    Plant p;
    p.at_a = {2, 3};
    auto L = p.make(9);
    auto a = monte_carlo(L, p.leak(), config(4));
    auto c = config(4);
    c.threads = 3;
    auto b = monte_carlo(L, p.leak(), c);
    EXPECT_EQ(a.culprits, b.culprits);
    c.mc_experiments = 0;
    EXPECT_THROW(monte_carlo(L, p.leak(), c), std::invalid_argument);
}

TEST(MonteCarlo, CurveReachesFullReduction) {
    Plant p;
    p.at_a = {2, 3};
    auto curve = monte_carlo_curve(p.make(11), p.leak(), config(1), 40);
    ASSERT_EQ(curve.size(), 40u);
    for (std::size_t e = 29; e < 40; ++e)
        EXPECT_GT(curve[e], 0.8);
}

TEST(AnalyzeLeak, FallsBackAndConfirms) {
    Plant p;
    auto single = analyze_leak(p.make(20), p.make(21, true), p.leak(), config(0));
    EXPECT_EQ(single.method, RootCauseMethod::Elimination);
    Plant r;
    r.at_a = {2, 3};
    auto redundant = analyze_leak(r.make(22), r.make(23, true), r.leak(), config(0));
    EXPECT_EQ(redundant.method, RootCauseMethod::MonteCarlo);
    auto quiet = analyze_leak(p.make(24, true), p.make(25, true), p.leak(), config(0));
    EXPECT_EQ(quiet.method, RootCauseMethod::Unresolved);
    EXPECT_TRUE(quiet.culprits.empty());
}

TEST(CompanionBounds, CentredOnZero) {
    Plant p;
    auto C = p.make(30, true);
    const std::uint32_t pts[2] = {p.a, p.b};
    std::vector<std::uint32_t> all(p.components);
    for (std::uint32_t c = 0; c < all.size(); ++c)
        all[c] = c;
    auto z = nps(C, pts, all);
    auto b = companion_bounds(C, z, config(0));
    EXPECT_LT(b.lower, 0.0);
    EXPECT_GT(b.upper, 0.0);
    EXPECT_NEAR(b.lower, -b.upper, 1e-12);
    EXPECT_EQ(b.n, 100u);
}

TEST(RootCauseJson, RoundTrip) {
    RootCause rc{LeakPoint{pair_index(9, 22), -8.5, 100.0}, culprits({{9, 1}, {22, 4}}), RootCauseMethod::MonteCarlo};
    std::vector<std::string> names{"a", "b", "c", "d", "e"};
    auto j = to_json(rc, names);
    EXPECT_EQ(j["method"], "monte_carlo");
    EXPECT_EQ(j["culprits"][0]["name"], "b");
    auto back = root_cause_from_json(j);
    EXPECT_EQ(back.leak.index, rc.leak.index);
    EXPECT_DOUBLE_EQ(back.leak.t_value, -8.5);
    EXPECT_EQ(back.culprits, culprits({{9, 1}, {22, 4}}));
    EXPECT_EQ(back.method, RootCauseMethod::MonteCarlo);
    j["method"] = "guess";
    EXPECT_THROW(root_cause_from_json(j), FormatError);
    EXPECT_THROW(root_cause_from_json(nlohmann::json::object()), FormatError);
}
