#include "xmodal/rng.hpp"

#include <cmath>
#include <cstdio>
#include <numbers>
#include <sstream>

#include "xmodal/errors.hpp"

namespace xmodal {

namespace {

std::uint64_t splitmix64(std::uint64_t x) {
    x += 0x9e3779b97f4a7c15ULL;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
    return x ^ (x >> 31);
}

}  // namespace

double Rng::uniform() {
    return static_cast<double>(engine_() >> 11) * 0x1.0p-53;
}

std::uint64_t Rng::uniform_int(std::uint64_t n) {
    if (n == 0) throw InvalidInput("uniform_int range must be positive");
    // Rejection sampling keeps the draw exactly uniform.
    // Draws below 2^64 mod n are the biased remainder of the range.
    const std::uint64_t reject_below = (0 - n) % n;
    std::uint64_t x = 0;
    do {
        x = engine_();
    } while (x < reject_below);
    return x % n;
}

double Rng::normal() {
    double u1 = uniform();
    const double u2 = uniform();
    if (u1 <= 0.0) u1 = 0x1.0p-53;
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * std::numbers::pi * u2);
}

std::string Rng::state() const {
    std::ostringstream os;
    os << engine_;
    return os.str();
}

void Rng::set_state(const std::string& state) {
    std::istringstream is(state);
    is >> engine_;
    if (is.fail()) throw InvalidInput("malformed RNG state");
}

Rng seeded_rng(std::uint64_t global_seed, std::string_view stream_label) {
    const std::uint64_t label_hash = fnv1a64(stream_label);
    return Rng(splitmix64(splitmix64(global_seed) ^ label_hash));
}

std::uint64_t fnv1a64(std::span<const unsigned char> bytes, std::uint64_t basis) {
    std::uint64_t h = basis;
    for (unsigned char b : bytes) {
        h ^= b;
        h *= 0x100000001b3ULL;
    }
    return h;
}

std::uint64_t fnv1a64(std::string_view text) {
    return fnv1a64(std::span(reinterpret_cast<const unsigned char*>(text.data()), text.size()));
}

std::string hex64(std::uint64_t value) {
    char buf[17];
    std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(value));
    return buf;
}

}  // namespace xmodal
