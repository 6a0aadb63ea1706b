#pragma once

#include "hileak/experiment.hpp"
#include "hileak/machine.hpp"

#include <algorithm>
#include <string>

namespace hileak::testing {

/// Runs both programs on `inputs` random inputs of the original's harness and
/// compares r0-r6, sp and live memory. Stack below the lower final sp is dead.
/// Returns the empty string on success, otherwise a description of the first
/// mismatch.
inline std::string check_equivalent(const Program &original, const Program &fixed, std::size_t inputs,
                                    std::uint64_t seed) {
    const KernelHarness h = parse_harness(original);
    ExperimentSpec spec;
    spec.kernel = original;
    spec.seed = seed;
    spec.mode = InputMode::AllRandom;
    const LeakageModel model = default_model();
    for (std::size_t i = 0; i < inputs; ++i) {
        const TraceInputs in = make_inputs(h, spec, i);
        const auto a = execute(original, in.state, model).final_state;
        const auto b = execute(fixed, in.state, model).final_state;
        const std::uint32_t floor = std::min(a.regs[kSp], b.regs[kSp]);
        if (!a.equivalent(b, floor))
            return "input " + std::to_string(i) + " differs";
    }
    return {};
}

} // namespace hileak::testing
