#pragma once

#include "hileak/rng.hpp"
#include "hileak/tracestore.hpp"

#include <filesystem>
#include <string>
#include <unistd.h>

namespace hileak::testing {

inline std::filesystem::path source_path(const std::string &rel) { return std::filesystem::path(HILEAK_SOURCE_DIR) / rel; }

/// Fresh directory under the system temp dir, removed on destruction.
class TempDir {
  public:
    explicit TempDir(const std::string &tag) {
        path_ = std::filesystem::temp_directory_path() /
                ("hileak_" + tag + "_" + std::to_string(::getpid()) + "_" + std::to_string(counter()++));
        std::filesystem::remove_all(path_);
        std::filesystem::create_directories(path_);
    }
    ~TempDir() {
        std::error_code ec;
        std::filesystem::remove_all(path_, ec);
    }
    TempDir(const TempDir &) = delete;
    TempDir &operator=(const TempDir &) = delete;
    const std::filesystem::path &path() const { return path_; }
    std::filesystem::path operator/(const std::string &name) const { return path_ / name; }

  private:
    static int &counter() {
        static int c = 0;
        return c;
    }
    std::filesystem::path path_;
};

/// Gaussian traces with alternating labels, all from one distribution.
inline TraceSet gaussian_set(std::size_t n, std::size_t m, std::uint64_t seed) {
    TraceSet s(n, m);
    for (std::size_t i = 0; i < n; ++i) {
        CounterRng rng(seed, i);
        s.labels[i] = i % 2 == 0 ? TraceClass::Fixed : TraceClass::Random;
        for (std::size_t j = 0; j < m; ++j)
            s.at(i, j) = static_cast<float>(rng.gaussian());
    }
    return s;
}

} // namespace hileak::testing
