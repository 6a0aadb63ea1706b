#include "hileak/parallel.hpp"

#include <cstdlib>
#include <string>

namespace hileak {

unsigned resolve_threads(unsigned requested) {
    if (requested > 0)
        return requested;
    if (const char *env = std::getenv("HILEAK_THREADS")) {
        try {
            const long v = std::stol(env);
            if (v > 0)
                return static_cast<unsigned>(v);
        } catch (const std::exception &) {
        }
    }
    const unsigned hw = std::thread::hardware_concurrency();
    return hw == 0 ? 1 : hw;
}

} // namespace hileak
