#pragma once

#include "hileak/combiner.hpp"
#include "hileak/experiment.hpp"
#include "hileak/isa.hpp"
#include "hileak/model.hpp"
#include "hileak/rewriter.hpp"
#include "hileak/rootcause.hpp"

#include <json.hpp>

#include <filesystem>
#include <functional>
#include <optional>
#include <string>
#include <vector>

namespace hileak {

struct PipelineConfig {
    CombinerConfig combiner;
    std::vector<std::size_t> schedule;  // strictly increasing trace counts
    double noise_sigma_pct = 0.25;
    std::uint64_t seed = 0;
    std::vector<std::uint8_t> fixed_secret;
    std::size_t max_iterations = 20;
    std::size_t rootcause_traces = 200000;  // cap on traces emulated for the component matrix
    std::size_t max_columns_per_batch = 16; // sample points per component-matrix emulation
    RootCauseConfig rootcause;             // threshold and seed are filled per iteration
    FixRules rules;
    CycleTable cycle_table;
    unsigned threads = 0;
    std::function<void(const std::string &)> log;
};

/// The paper-scale schedule 20k..500k in 20k steps, and a desk-scale 5k..50k.
std::vector<std::size_t> default_schedule();
std::vector<std::size_t> desk_schedule();

struct IterationRecord {
    std::size_t iteration = 0;
    std::size_t traces = 0;
    std::size_t n_samples = 0;
    double threshold = 0.0;
    double dof_used = 0.0;
    std::size_t window = 0;
    std::size_t discovered = 0;
    std::size_t fixed = 0;
    std::size_t remaining = 0;
    double emulation_seconds = 0.0;
    double analysis_seconds = 0.0;
    double rootcause_seconds = 0.0;
    std::vector<LeakPoint> leaks;
    std::vector<RootCause> causes;
    RewritePlan plan;
};

struct RunResult {
    Program original;
    Program final_program;
    std::vector<IterationRecord> iterations;
    std::optional<AnalysisResult> first_analysis;
    std::optional<AnalysisResult> last_analysis;
    bool residual = false;
    std::vector<LeakPoint> residual_leaks;
    std::vector<std::string> warnings;
    Overhead overhead;
    std::vector<std::string> component_names;
};

/// Detect, root-cause and fix until an iteration at the largest scheduled
/// count finds nothing, no fix applies, or max_iterations is reached.
RunResult run_loop(const Program &kernel, const LeakageModel &model, const PipelineConfig &cfg);

/// One detection pass on a kernel: emulate, add noise, multivariate t-test.
AnalysisResult detect(const Program &kernel, const LeakageModel &model, const PipelineConfig &cfg,
                      std::size_t traces, std::uint64_t seed, double *emulation_seconds = nullptr);

/// Root-causes `leaks` of `kernel` on noise-free component matrices emulated
/// with `seed` and an all-random companion.
std::vector<RootCause> find_root_causes(const Program &kernel, const LeakageModel &model, const PipelineConfig &cfg,
                                        const std::vector<LeakPoint> &leaks, std::size_t traces, std::uint64_t seed,
                                        double threshold);

struct ReportInputs {
    const RunResult *run = nullptr;
    const LeakageModel *model = nullptr;
    const PipelineConfig *config = nullptr;
    std::string kernel_name;
};

nlohmann::json report_json(const ReportInputs &in);

/// Writes report.json, fixed.s, overhead.txt and before/after heatmaps
/// (CSV, plus PGM for order 2) into `dir`.
void write_report(const ReportInputs &in, const std::filesystem::path &dir);

} // namespace hileak
