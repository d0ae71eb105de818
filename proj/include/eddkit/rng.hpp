#pragma once

#include <cstdint>
#include <string_view>

namespace edd {

// Counter-based random stream: draw n is a pure function of (seed, n), so
// equal seed and position always give equal draws. Passed by value.
class RngStream {
public:
    explicit RngStream(std::uint64_t seed = 0, std::uint64_t position = 0) noexcept
        : seed_(seed), position_(position) {}

    std::uint64_t seed() const noexcept { return seed_; }
    std::uint64_t position() const noexcept { return position_; }

    std::uint64_t next_u64() noexcept;
    // Uniform on the open interval (0, 1).
    double uniform() noexcept;
    double uniform(double lo, double hi) noexcept { return lo + (hi - lo) * uniform(); }
    // Uniform integer in [0, n).
    std::uint64_t uniform_int(std::uint64_t n) noexcept;
    // Standard normal via Box-Muller; consumes two draws.
    double normal() noexcept;
    // Laplace(mu, sigma) by inverse CDF.
    double laplace(double mu, double sigma) noexcept;

    // Independent child stream for a named component or an index.
    RngStream derive(std::uint64_t tag) const noexcept;
    RngStream derive(std::string_view tag) const noexcept;

private:
    std::uint64_t seed_;
    std::uint64_t position_;
};

std::uint64_t mix64(std::uint64_t x) noexcept;

} // namespace edd
