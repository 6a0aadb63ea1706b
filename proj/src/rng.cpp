#include "hileak/rng.hpp"

#include <cmath>
#include <numbers>

namespace hileak {

double CounterRng::gaussian() noexcept {
    // Box-Muller; one normal per two uniforms keeps draws stateless.
    const double u1 = uniform();
    const double u2 = uniform();
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * std::numbers::pi * u2);
}

} // namespace hileak
