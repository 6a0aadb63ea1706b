#pragma once

#include "hileak/isa.hpp"
#include "hileak/machine.hpp"
#include "hileak/model.hpp"
#include "hileak/rng.hpp"
#include "hileak/tracestore.hpp"

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

namespace hileak {

/// Input layout of a kernel, declared in its comments:
///   ; @secret <name> width=<bytes> shares=<k>
///   ; @share <name> <index> [<reg>+<offset>]   share stored in memory
///   ; @share <name> <index> <reg>              share held in a register
///   ; @const <reg> <value>                     fixed register value
///   ; @table <reg> <hex bytes>                 constant bytes at the region of <reg>
/// Every base register gets its own 256-byte region starting at 0x400.
struct KernelHarness {
    struct Secret {
        std::string name;
        std::size_t width = 1;
        std::size_t shares = 2;
    };
    struct Share {
        std::size_t secret = 0;
        std::size_t index = 0;
        bool in_memory = true;
        std::uint8_t reg = 0;
        std::uint32_t offset = 0;
    };
    struct Constant {
        std::uint8_t reg = 0;
        std::uint32_t value = 0;
    };
    struct Table {
        std::uint8_t reg = 0;
        std::vector<std::uint8_t> bytes;
    };

    std::vector<Secret> secrets;
    std::vector<Share> shares;
    std::vector<Constant> constants;
    std::vector<Table> tables;
    std::vector<std::pair<std::uint8_t, std::uint32_t>> regions; // base register -> address

    std::size_t secret_bytes() const;
    std::uint32_t region_of(std::uint8_t reg) const;
};

inline constexpr std::uint32_t kRegionBase = 0x400;
inline constexpr std::uint32_t kRegionSize = 0x100;

/// Reads the directives. Throws ParseError on malformed directives and
/// std::invalid_argument on inconsistent layouts.
KernelHarness parse_harness(const Program &program);

enum class InputMode : std::uint8_t {
    FixedVsRandom, // even traces FIXED, odd traces RANDOM
    AllRandom      // same labels, every secret random
};

struct ExperimentSpec {
    Program kernel;
    int order = 2;
    std::vector<std::uint8_t> fixed_secret; // concatenated secrets; empty = zeros
    std::size_t n_traces = 0;
    double noise_sigma_pct = 0.0;
    std::uint64_t seed = 0;
    InputMode mode = InputMode::FixedVsRandom;
    bool record_components = true;
    /// Sample points whose components are recorded; empty = all.
    std::vector<std::uint64_t> component_columns;
    unsigned threads = 0;
    std::size_t memory_bytes = kDefaultMemoryBytes;
};

struct TraceInputs {
    TraceClass label = TraceClass::Random;
    std::vector<std::uint8_t> secret;
    MachineState state;
};

/// Initial machine state of trace i: secret per class, fresh masks, random r7,
/// random unused registers and random shadow state.
TraceInputs make_inputs(const KernelHarness &h, const ExperimentSpec &spec, std::size_t i);

/// Splits `secret` (width bytes) into `shares` Boolean shares using `rng`:
/// (v ^ m1 ^ ... ^ m_{k-1}, m1, ..., m_{k-1}).
std::vector<std::vector<std::uint8_t>> share_secret(std::span<const std::uint8_t> secret, std::size_t shares,
                                                    CounterRng &rng);

struct ExperimentResult {
    TraceSet traces;
    ComponentMatrix components; // empty when not recorded
};

/// Emulates spec.n_traces traces. Noise, if any, is added after the component
/// matrix is recorded, so the matrix reproduces the clean power.
ExperimentResult run_experiment(const ExperimentSpec &spec, const LeakageModel &model);

/// Adds N(0, sigma) with sigma = sigma_percent/100 * (max - min) of the set.
TraceSet add_noise(TraceSet set, double sigma_percent, std::uint64_t seed);

struct SnrResult {
    std::vector<double> snr;
    std::vector<bool> infinite; // zero within-group variance with distinct group means
};

/// Per-sample SNR of `target` values: variance of the group means over the
/// mean within-group variance, both weighted by group size. Every group needs
/// at least two traces.
SnrResult snr(const TraceSet &set, std::span<const std::uint32_t> target);

} // namespace hileak
