#pragma once

#include "hileak/isa.hpp"
#include "hileak/model.hpp"
#include "hileak/rootcause.hpp"

#include <json.hpp>

#include <array>
#include <optional>
#include <string>
#include <vector>

namespace hileak {

enum class FixKind : std::uint8_t {
    PipelineFlush, // mov r7, r7
    MemoryWipe     // push {r7}; pop {r7}
};

std::string_view fix_kind_name(FixKind k);

struct RewriteAction {
    FixKind kind = FixKind::PipelineFlush;
    std::size_t position = 0; // insert before this instruction index
    std::vector<CombinationIndex> leaks;
    std::vector<Culprit> culprits;
};

struct RewritePlan {
    std::vector<RewriteAction> actions; // ascending position, flush before wipe
    std::uint64_t fingerprint = 0;     // program the plan was made for
    std::vector<std::string> warnings;
    bool empty() const { return actions.empty(); }
};

/// Component class -> barrier. Classes mapped to nothing are not fixable.
struct FixRules {
    std::array<std::optional<FixKind>, 5> by_class{std::nullopt, FixKind::PipelineFlush, FixKind::MemoryWipe,
                                                   std::nullopt, std::nullopt};
};

/// One action per (kind, position). Culprits at sample s place the barrier
/// immediately before instruction s. Unresolved causes and unfixable
/// component classes produce warnings.
RewritePlan plan_fixes(const Program &program, const std::vector<RootCause> &causes, const LeakageModel &model,
                       const FixRules &rules = {});

/// Inserts the planned barriers back to front. Throws std::invalid_argument
/// if the program is not the one the plan was made for.
Program apply_fixes(const Program &program, const RewritePlan &plan);

/// Per-instruction cycle costs.
struct CycleTable {
    unsigned load = 2;
    unsigned store = 2;
    unsigned stack_per_register = 2;
    unsigned other = 1;
};

std::uint64_t cycles(const Instruction &ins, const CycleTable &table = {});
std::uint64_t cycles(const Program &program, const CycleTable &table = {});

struct Overhead {
    std::string name;
    std::uint64_t before = 0;
    std::uint64_t after = 0;
    double percent = 0.0;
};

Overhead overhead(const Program &before, const Program &after, const CycleTable &table = {}, std::string name = {});

/// Plain-text table: implementation, unprotected and protected size in cycles, increase.
std::string overhead_table(const std::vector<Overhead> &rows);

void to_json(nlohmann::json &j, const RewriteAction &a);
void to_json(nlohmann::json &j, const Overhead &o);
void to_json(nlohmann::json &j, const CycleTable &t);
void from_json(const nlohmann::json &j, CycleTable &t);

} // namespace hileak
