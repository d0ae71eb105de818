#include "eddkit/rng.hpp"

#include <cmath>
#include <numbers>

namespace edd {

std::uint64_t mix64(std::uint64_t x) noexcept {
    x ^= x >> 30;
    x *= 0xbf58476d1ce4e5b9ULL;
    x ^= x >> 27;
    x *= 0x94d049bb133111ebULL;
    x ^= x >> 31;
    return x;
}

std::uint64_t RngStream::next_u64() noexcept {
    ++position_;
    return mix64(seed_ + 0x9e3779b97f4a7c15ULL * position_);
}

double RngStream::uniform() noexcept {
    return (static_cast<double>(next_u64() >> 11) + 0.5) * 0x1.0p-53;
}

std::uint64_t RngStream::uniform_int(std::uint64_t n) noexcept {
    return static_cast<std::uint64_t>((static_cast<unsigned __int128>(next_u64()) * n) >> 64);
}

double RngStream::normal() noexcept {
    const double u1 = uniform();
    const double u2 = uniform();
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * std::numbers::pi * u2);
}

double RngStream::laplace(double mu, double sigma) noexcept {
    const double u = uniform() - 0.5;
    const double sgn = u < 0 ? -1.0 : 1.0;
    return mu - sigma * sgn * std::log(1.0 - 2.0 * std::abs(u));
}

RngStream RngStream::derive(std::uint64_t tag) const noexcept {
    return RngStream(mix64(seed_ ^ mix64(tag + 0x632be59bd9b4e019ULL)));
}

RngStream RngStream::derive(std::string_view tag) const noexcept {
    // FNV-1a of the tag
    std::uint64_t h = 0xcbf29ce484222325ULL;
    for (unsigned char c : tag) {
        h ^= c;
        h *= 0x100000001b3ULL;
    }
    return derive(h);
}

} // namespace edd
