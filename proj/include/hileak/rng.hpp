#pragma once

#include <cstdint>

namespace hileak {

/// Counter-based generator: every draw is a pure function of
/// (seed, stream, counter), so any trace can be regenerated in isolation.
class CounterRng {
  public:
    constexpr CounterRng(std::uint64_t seed, std::uint64_t stream) noexcept
        : key_(mix(seed ^ 0x9e3779b97f4a7c15ULL) ^ mix(stream + 0x632be59bd9b4e019ULL)) {}

    static constexpr std::uint64_t mix(std::uint64_t z) noexcept {
        z += 0x9e3779b97f4a7c15ULL;
        z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
        z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
        return z ^ (z >> 31);
    }

    /// Output for an explicit counter value; does not advance the stream.
    constexpr std::uint64_t at(std::uint64_t counter) const noexcept {
        return mix(key_ ^ mix(counter * 0xd1b54a32d192ed03ULL + 1));
    }

    std::uint64_t next() noexcept { return at(counter_++); }
    std::uint32_t next_u32() noexcept { return static_cast<std::uint32_t>(next() >> 32); }

    /// Uniform in (0, 1).
    double uniform() noexcept { return (static_cast<double>(next() >> 11) + 0.5) * 0x1.0p-53; }

    double gaussian() noexcept;

    std::uint64_t counter() const noexcept { return counter_; }

  private:
    std::uint64_t key_;
    std::uint64_t counter_ = 0;
};

/// Derive an independent seed for a sub-task (iteration, companion run, ...).
constexpr std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t tag) noexcept {
    return CounterRng::mix(CounterRng::mix(seed) ^ (tag * 0xa0761d6478bd642fULL + 0xe7037ed1a0b428dbULL));
}

} // namespace hileak
