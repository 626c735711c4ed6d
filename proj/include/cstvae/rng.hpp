#pragma once

#include <cstdint>
#include <random>
#include <span>
#include <string>

namespace cstvae {

// Deterministic random source. All distribution transforms are implemented
// here (not via std::*_distribution, whose output is implementation-defined),
// so a seed pins the exact stream across toolchains.
class Rng {
  public:
    explicit Rng(std::uint64_t seed) : gen_(seed) {}

    std::uint64_t next_u64() { return gen_(); }

    // Uniform in [0, 1) with 53 random bits.
    double uniform() {
        return static_cast<double>(gen_() >> 11) * 0x1.0p-53;
    }

    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

    // Uniform integer in [0, n). n must be positive.
    std::int64_t uniform_int(std::int64_t n);

    // Standard normal via Box-Muller; one pair of uniforms per value.
    double normal();

    // Fills pairwise, consuming one uniform pair per two outputs.
    void normal_fill(std::span<double> out);

    // Serializable engine state (std::mt19937_64 text form).
    std::string state() const;
    void set_state(const std::string& s);

  private:
    std::mt19937_64 gen_;
};

// Stateless mix for per-item seeds: derived streams are independent of
// iteration order, which keeps parallel dataset generation deterministic.
std::uint64_t derive_seed(std::uint64_t master, std::uint64_t index);

}  // namespace cstvae
