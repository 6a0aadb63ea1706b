#pragma once

#include "hileak/isa.hpp"
#include "hileak/model.hpp"

#include <array>
#include <cstdint>
#include <span>
#include <vector>

namespace hileak {

inline constexpr std::size_t kDefaultMemoryBytes = 8192;

struct MachineState {
    std::array<std::uint32_t, kRegisterCount> regs{}; // r0-r7, sp
    std::uint8_t flags = 0;                           // N Z C V in bits 3..0
    std::vector<std::uint8_t> memory;
    Shadow shadow;

    static MachineState blank(std::size_t memory_bytes = kDefaultMemoryBytes);

    std::uint32_t load(std::uint32_t addr, unsigned width) const;
    void store(std::uint32_t addr, std::uint32_t value, unsigned width);

    /// Architectural equality on r0-r6, sp and memory at or above `live_floor`.
    /// Memory below the floor is dead stack.
    bool equivalent(const MachineState &o, std::uint32_t live_floor) const;
};

struct ExecutionRecord {
    std::size_t n_steps = 0;
    std::size_t n_components = 0;
    std::vector<double> components; // [step * n_components + c]
    std::vector<double> power;
    std::vector<StepRecord> steps;
    MachineState final_state;
};

/// Runs one instruction, filling `step` and updating state and shadow.
/// Throws ExecutionError on out-of-bounds memory or stack underflow.
void step(const Instruction &ins, MachineState &state, StepRecord &step);

/// Executes the whole program: one sample per instruction.
ExecutionRecord execute(const Program &program, MachineState state, const LeakageModel &model);

/// Allocation-free variant used by the experiment harness. `components` may be
/// empty; otherwise it holds size() * model.size() values.
void execute_into(const Program &program, MachineState &state, const LeakageModel &model,
                  std::span<double> components, std::span<double> power);

} // namespace hileak
