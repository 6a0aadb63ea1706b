#include "hileak/pipeline.hpp"
#include "test_util.hpp"

#include <gtest/gtest.h>

#include <fstream>

using namespace hileak;
using hileak::testing::source_path;
using hileak::testing::TempDir;

namespace {

Program kernel(const std::string &name) { return load_program(source_path("corpus/" + name + ".s").string()); }

PipelineConfig small_config() {
    PipelineConfig cfg;
    cfg.schedule = {5000, 10000};
    cfg.noise_sigma_pct = 0.0;
    cfg.seed = 7;
    cfg.rootcause_traces = 20000;
    cfg.threads = 1;
    return cfg;
}

} // namespace

TEST(Schedule, Defaults) {
    auto d = default_schedule();
    ASSERT_EQ(d.size(), 25u);
    EXPECT_EQ(d.front(), 20000u);
    EXPECT_EQ(d.back(), 500000u);
    auto k = desk_schedule();
    ASSERT_EQ(k.size(), 10u);
    EXPECT_EQ(k.front(), 5000u);
    EXPECT_EQ(k.back(), 50000u);
}

TEST(RunLoop, RejectsBadConfig) {
    PipelineConfig cfg = small_config();
    cfg.schedule = {10000, 5000};
    EXPECT_THROW(run_loop(kernel("toy_second_order"), default_model(), cfg), std::invalid_argument);
    cfg.schedule = {};
    EXPECT_THROW(run_loop(kernel("toy_second_order"), default_model(), cfg), std::invalid_argument);
    cfg = small_config();
    cfg.max_iterations = 0;
    EXPECT_THROW(run_loop(kernel("toy_second_order"), default_model(), cfg), std::invalid_argument);
}

TEST(RunLoop, FixesToyNoiseFree) {
    PipelineConfig cfg = small_config();
    std::vector<std::string> log;
    cfg.log = [&](const std::string &s) { log.push_back(s); };
    auto run = run_loop(kernel("toy_second_order"), default_model(), cfg);
    EXPECT_FALSE(run.residual);
    ASSERT_GE(run.iterations.size(), 2u);
    const auto &first = run.iterations.front();
    EXPECT_EQ(first.traces, 5000u);
    ASSERT_FALSE(first.leaks.empty());
    EXPECT_EQ(first.leaks.front().index, pair_index(9, 22));
    EXPECT_EQ(first.fixed, first.discovered);
    EXPECT_EQ(first.remaining, 0u);
    EXPECT_EQ(run.iterations.back().discovered, 0u);
    EXPECT_EQ(run.iterations.back().traces, 10000u);
    for (std::size_t k = 1; k < run.iterations.size(); ++k)
        EXPECT_GE(run.iterations[k].traces, run.iterations[k - 1].traces);

    Program expected = kernel("toy_second_order_fixed");
    expected.code.erase(expected.code.begin() + 9);
    EXPECT_EQ(run.final_program, expected);
    EXPECT_EQ(run.overhead.before, 37u);
    EXPECT_EQ(run.overhead.after, 42u);
    EXPECT_FALSE(log.empty());
}

TEST(RunLoop, FixedToyIsLeftAlone) {
    auto run = run_loop(kernel("toy_second_order_fixed"), default_model(), small_config());
    EXPECT_FALSE(run.residual);
    ASSERT_EQ(run.iterations.size(), 2u);
    for (const auto &it : run.iterations) {
        EXPECT_EQ(it.discovered, 0u);
        EXPECT_TRUE(it.plan.empty());
    }
    EXPECT_EQ(run.final_program, run.original);
    EXPECT_EQ(run.overhead.after, run.overhead.before);
}

TEST(RunLoop, IterationCapLeavesResidual) {
    PipelineConfig cfg = small_config();
    cfg.schedule = {5000};
    cfg.max_iterations = 1;
    auto run = run_loop(kernel("toy_second_order"), default_model(), cfg);
    EXPECT_TRUE(run.residual);
    EXPECT_EQ(run.iterations.size(), 1u);
    EXPECT_FALSE(run.residual_leaks.empty());
    ASSERT_FALSE(run.warnings.empty());
    EXPECT_NE(run.warnings.back().find("not re-verified"), std::string::npos);
}

TEST(Detect, DeterministicPerSeed) {
    PipelineConfig cfg = small_config();
    cfg.noise_sigma_pct = 0.25;
    auto a = detect(kernel("toy_second_order"), default_model(), cfg, 4000, 3);
    auto b = detect(kernel("toy_second_order"), default_model(), cfg, 4000, 3);
    EXPECT_EQ(a.heatmap.dense, b.heatmap.dense);
    auto c = detect(kernel("toy_second_order"), default_model(), cfg, 4000, 4);
    EXPECT_NE(a.heatmap.dense, c.heatmap.dense);
}

TEST(RootCauses, ToyCulpritsAtLastLoad) {
    PipelineConfig cfg = small_config();
    auto analysis = detect(kernel("toy_second_order"), default_model(), cfg, 5000, 1);
    ASSERT_FALSE(analysis.leaks.empty());
    auto causes = find_root_causes(kernel("toy_second_order"), default_model(), cfg, {analysis.leaks.front()}, 5000,
                                   1, analysis.threshold);
    ASSERT_EQ(causes.size(), 1u);
    ASSERT_FALSE(causes[0].culprits.empty());
    // Value components may show up at either load; the fixable ones sit at the last.
    const LeakageModel m = default_model();
    std::size_t fixable = 0;
    for (const auto &c : causes[0].culprits) {
        const auto cls = m.components[c.component].cls;
        if (cls == ComponentClass::Pipeline || cls == ComponentClass::Memory) {
            EXPECT_EQ(c.sample, 22u);
            ++fixable;
        }
    }
    EXPECT_GT(fixable, 0u);
}

TEST(Report, BundleContents) {
    PipelineConfig cfg = small_config();
    LeakageModel model = default_model();
    auto run = run_loop(kernel("toy_second_order"), model, cfg);
    ReportInputs in{&run, &model, &cfg, "toy_second_order"};
    auto j = report_json(in);
    EXPECT_EQ(j["kernel"], "toy_second_order");
    EXPECT_EQ(j["model"]["components"].size(), 28u);
    EXPECT_EQ(j["iterations"].size(), run.iterations.size());
    EXPECT_EQ(j["residual"], false);
    EXPECT_EQ(j["overhead"]["before_cycles"], 37);
    EXPECT_EQ(j["iterations"][0]["actions"].size(), 2u);

    TempDir dir("report");
    write_report(in, dir.path());
    for (const char *f : {"report.json", "fixed.s", "overhead.txt", "heatmap_before.csv", "heatmap_after.csv",
                          "heatmap_before.pgm", "heatmap_after.pgm"})
        EXPECT_TRUE(std::filesystem::exists(dir / f)) << f;
    EXPECT_EQ(load_program((dir / "fixed.s").string()), run.final_program);
    std::ifstream rf(dir / "report.json");
    EXPECT_EQ(nlohmann::json::parse(rf), j);
    EXPECT_THROW(report_json(ReportInputs{}), std::invalid_argument);
}

TEST(Report, CleanRunHasNoResidual) {
    PipelineConfig cfg = small_config();
    cfg.schedule = {5000};
    LeakageModel model = default_model();
    auto run = run_loop(kernel("toy_second_order_fixed"), model, cfg);
    auto j = report_json({&run, &model, &cfg, "clean"});
    EXPECT_EQ(j["residual"], false);
    EXPECT_TRUE(j["residual_leaks"].empty());
    EXPECT_TRUE(j["iterations"][0]["leaks"].empty());
}
