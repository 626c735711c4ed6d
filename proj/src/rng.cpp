#include "cstvae/rng.hpp"

#include <cmath>
#include <numbers>
#include <sstream>

#include "cstvae/errors.hpp"

namespace cstvae {

std::int64_t Rng::uniform_int(std::int64_t n) {
    if (n <= 0) throw ContractError("uniform_int: n must be positive");
    // Rejection sampling to avoid modulo bias.
    const std::uint64_t un = static_cast<std::uint64_t>(n);
    const std::uint64_t limit = UINT64_MAX - UINT64_MAX % un;
    std::uint64_t x;
    do {
        x = gen_();
    } while (x >= limit);
    return static_cast<std::int64_t>(x % un);
}

double Rng::normal() {
    const double u1 = uniform();
    const double u2 = uniform();
    const double r = std::sqrt(-2.0 * std::log(1.0 - u1));
    return r * std::cos(2.0 * std::numbers::pi * u2);
}

void Rng::normal_fill(std::span<double> out) {
    std::size_t i = 0;
    while (i + 1 < out.size()) {
        const double u1 = uniform();
        const double u2 = uniform();
        const double r = std::sqrt(-2.0 * std::log(1.0 - u1));
        out[i] = r * std::cos(2.0 * std::numbers::pi * u2);
        out[i + 1] = r * std::sin(2.0 * std::numbers::pi * u2);
        i += 2;
    }
    if (i < out.size()) out[i] = normal();
}

std::string Rng::state() const {
    std::ostringstream os;
    os << gen_;
    return os.str();
}

void Rng::set_state(const std::string& s) {
    std::istringstream is(s);
    is >> gen_;
    if (!is) throw FormatError("invalid RNG state string", 0);
}

std::uint64_t derive_seed(std::uint64_t master, std::uint64_t index) {
    // splitmix64 finalizer over the combined value
    std::uint64_t z = master + 0x9e3779b97f4a7c15ULL * (index + 1);
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
}

}  // namespace cstvae
