#pragma once

#include "hileak/combiner.hpp"
#include "hileak/stats.hpp"
#include "hileak/tracestore.hpp"

#include <json.hpp>

#include <cstdint>
#include <span>
#include <vector>

namespace hileak {

enum class RootCauseMethod : std::uint8_t { Elimination, MonteCarlo, Unresolved };

std::string_view method_name(RootCauseMethod m);

struct Culprit {
    std::uint32_t sample = 0;
    std::uint32_t component = 0;
    bool operator==(const Culprit &) const = default;
    auto operator<=>(const Culprit &) const = default;
};

struct RootCause {
    LeakPoint leak;
    std::vector<Culprit> culprits; // sorted by (sample, component)
    RootCauseMethod method = RootCauseMethod::Unresolved;
};

struct MonteCarloStats {
    std::size_t experiments = 0;
    std::vector<std::size_t> participated; // per component
    std::vector<std::size_t> leaky_in;
    std::vector<std::size_t> leaky_out;

    double rate_in(std::size_t c) const;
    double rate_out(std::size_t c) const;
};

struct RootCauseConfig {
    double threshold = 4.5;      // multivariate t cutoff of the run
    double tost_alpha = 0.05;    // level of the two one-sided tests
    double margin_alpha = 1e-5;  // quantile level of the equivalence margin
    std::size_t bound_chunks = 100;
    std::size_t mc_experiments = 50;
    std::uint64_t seed = 0;
    unsigned threads = 0;
};

/// Reduced-model power at each point of `points` (original sample indices),
/// summed over `components`, centred per class and multiplied across points.
/// Throws std::invalid_argument on empty sets.
std::vector<double> nps(const ComponentMatrix &L, std::span<const std::uint32_t> points,
                        std::span<const std::uint32_t> components);

/// Welch test of a per-trace vector split by the labels of `L`.
WelchResult class_ttest(const ComponentMatrix &L, std::span<const double> z);

/// Equivalence bounds for z built from the all-random companion matrix: the
/// companion is cut into `chunks` disjoint pieces and each contributes one
/// between-class mean difference.
TostBounds companion_bounds(const ComponentMatrix &companion, std::span<const double> z_companion,
                            const RootCauseConfig &cfg);

/// Component elimination: (s, t) is a culprit when removing t at s makes the
/// leak statistically equivalent to no leak.
RootCause flc(const ComponentMatrix &L, const ComponentMatrix &companion, const LeakPoint &leak,
              const RootCauseConfig &cfg);

/// Random component subsets per leak point; returns a minimal culprit set per
/// point whose removal silences the leak.
RootCause monte_carlo(const ComponentMatrix &L, const LeakPoint &leak, const RootCauseConfig &cfg,
                      MonteCarloStats *stats = nullptr);

/// Confirms the leak on the full model, then elimination, then Monte-Carlo.
RootCause analyze_leak(const ComponentMatrix &L, const ComponentMatrix &companion, const LeakPoint &leak,
                       const RootCauseConfig &cfg);

/// Leak reduction 1 - |t_after| / |t_before| after removing the Monte-Carlo
/// culprits, for experiment counts 1..max_experiments.
std::vector<double> monte_carlo_curve(const ComponentMatrix &L, const LeakPoint &leak, const RootCauseConfig &cfg,
                                      std::size_t max_experiments);

nlohmann::json to_json(const RootCause &rc, const std::vector<std::string> &component_names);
/// Inverse of to_json; throws FormatError on malformed input.
RootCause root_cause_from_json(const nlohmann::json &j);

} // namespace hileak
