#pragma once

#include <cstdint>
#include <random>
#include <string>

namespace mixenv {

inline constexpr const char* kRngTag = "mt19937_64";

/// splitmix64 finalizer, used to derive independent child seeds.
std::uint64_t splitmix64(std::uint64_t x);

/// Child seed for stream `index` of a parent seed.
std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t index);

/// mt19937_64 engine with distribution transforms fixed here rather than
/// delegated to the standard library, so draws match across toolchains.
class Rng {
public:
    explicit Rng(std::uint64_t seed) : engine_(seed) {}

    /// Uniform on [0, 1) with 53 random bits.
    double uniform();
    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }
    /// Uniform integer on [lo, hi].
    int uniform_int(int lo, int hi);
    /// Standard normal by Box-Muller (one draw per call, second value cached).
    double normal();

    std::mt19937_64& engine() { return engine_; }

private:
    std::mt19937_64 engine_;
    bool has_spare_ = false;
    double spare_ = 0.0;
};

}  // namespace mixenv
