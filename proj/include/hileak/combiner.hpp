#pragma once

#include "hileak/tracestore.hpp"

#include <json.hpp>

#include <algorithm>
#include <array>
#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

namespace hileak {

/// Sample points combined into one artificial trace value; j1 <= j2 [<= j3].
struct CombinationIndex {
    std::array<std::uint32_t, 3> points{};
    std::uint8_t order = 2;

    std::span<const std::uint32_t> view() const { return {points.data(), order}; }
    std::uint32_t first() const { return points[0]; }
    std::uint32_t last() const { return points[order - 1u]; }
    bool contains(std::uint32_t j) const;
    bool operator==(const CombinationIndex &o) const {
        return order == o.order && std::equal(points.begin(), points.begin() + order, o.points.begin());
    }
};

CombinationIndex pair_index(std::uint32_t j1, std::uint32_t j2);
CombinationIndex triple_index(std::uint32_t j1, std::uint32_t j2, std::uint32_t j3);
std::string to_string(const CombinationIndex &idx);

struct LeakPoint {
    CombinationIndex index;
    double t_value = 0.0;
    double dof = 0.0;
};

/// Order 2: dense symmetric m x m array of t-values. Order 3: one entry per
/// analysed triple.
struct Heatmap {
    int order = 2;
    std::size_t n_samples = 0;
    std::vector<double> dense;
    std::vector<CombinationIndex> triples;
    std::vector<double> triple_t;

    double at(std::size_t j1, std::size_t j2) const { return dense[j1 * n_samples + j2]; }
    /// t-value of any analysed index; throws std::out_of_range otherwise.
    double at(const CombinationIndex &idx) const;
};

struct CombinerConfig {
    int order = 2;
    std::size_t window = 50;     // order 3 only: max - min < window
    double alpha = 1e-5;
    bool include_diagonal = true; // order 2: pairs (j, j)
    bool allow_repeats = true;    // order 3: triples with repeated points
    unsigned threads = 0;         // 0 = resolve_threads default
    unsigned splits = 0;          // S; 0 = choose from memory budget and threads
    std::size_t trace_tile = 2048;
    std::size_t memory_budget = std::size_t{1} << 30;
};

struct AnalysisResult {
    Heatmap heatmap;
    std::vector<LeakPoint> leaks; // descending |t|
    std::uint64_t n_indices = 0;
    double threshold = 0.0;
    double dof_used = 0.0;        // minimum finite dof over all indices
    bool threshold_applied = false; // false when fewer than 1,000 traces were analysed
    std::size_t n_traces = 0;
    unsigned splits_used = 0;
};

inline constexpr std::size_t kMinTracesForThreshold = 1000;

/// Per-sample-point means of a set.
std::vector<double> center(const TraceSet &set);

/// Mean-centred product of the points of `idx` for trace i.
double combined_value(const TraceSet &set, std::span<const double> means, std::size_t i, const CombinationIndex &idx);

/// Number of combination indices analysed for m samples under `cfg`.
std::uint64_t count_indices(std::size_t n_samples, const CombinerConfig &cfg);

/// Every combination index under `cfg`, in canonical order (j1, then j2, then j3).
std::vector<CombinationIndex> enumerate_indices(std::size_t n_samples, const CombinerConfig &cfg);

/// Block-pair work unit over column ranges [a_first, a_last) x [b_first, b_last)
/// with a_first <= b_first. A diagonal unit (a == b) covers pairs inside one block.
struct WorkUnit {
    std::size_t a_first = 0, a_last = 0;
    std::size_t b_first = 0, b_last = 0;
    bool diagonal() const { return a_first == b_first; }
};

/// Splits [0, n_samples) into S near-equal blocks and returns the S(S+1)/2
/// block pairs. Throws std::invalid_argument unless 1 <= S <= n_samples.
std::vector<WorkUnit> partition_workload(std::size_t n_samples, std::size_t splits);

/// Fixed-vs-random multivariate t-test over mean-centred products, centring
/// each class by its own means. Labels come from the source.
AnalysisResult multivariate_ttest(const TraceSource &source, const CombinerConfig &cfg);
AnalysisResult multivariate_ttest(const TraceSet &fixed, const TraceSet &random, const CombinerConfig &cfg);
/// Uses the set's own labels.
AnalysisResult multivariate_ttest(const TraceSet &labelled, const CombinerConfig &cfg);

/// First-order fixed-vs-random t-value per sample point.
std::vector<double> univariate_ttest(const TraceSource &source);

void write_heatmap_csv(const Heatmap &h, const std::filesystem::path &path);
/// 16-bit greyscale image of |t| clipped at 2 x threshold. Order 2 only.
void write_heatmap_pgm(const Heatmap &h, double threshold, const std::filesystem::path &path);

void to_json(nlohmann::json &j, const CombinationIndex &idx);
void to_json(nlohmann::json &j, const LeakPoint &leak);
void from_json(const nlohmann::json &j, LeakPoint &leak);

} // namespace hileak
