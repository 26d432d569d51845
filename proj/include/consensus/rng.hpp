#pragma once

#include <cmath>
#include <cstdint>
#include <random>

namespace consensus {

/// splitmix64 step; used to decorrelate derived seeds.
inline std::uint64_t mix64(std::uint64_t x) {
    x += 0x9e3779b97f4a7c15ULL;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
    return x ^ (x >> 31);
}

inline std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t stream) {
    return mix64(mix64(seed) ^ mix64(stream + 0x517cc1b727220a95ULL));
}

/// Deterministic RNG wrapper. All variate transforms are implemented here
/// (not via std::*_distribution) so streams are reproducible across
/// standard libraries and identical run-to-run.
class Rng {
public:
    explicit Rng(std::uint64_t seed) : engine_(seed) {}

    std::uint64_t u64() { return engine_(); }

    /// Uniform integer in [0, n). n must be > 0.
    std::uint64_t bounded(std::uint64_t n) { return engine_() % n; }

    /// Uniform double in [0, 1).
    double real01() { return static_cast<double>(engine_() >> 11) * 0x1.0p-53; }

    /// Uniform double in (0, 1]; safe for log().
    double real01_open() { return static_cast<double>((engine_() >> 11) + 1) * 0x1.0p-53; }

    double uniform(double lo, double hi) { return lo + (hi - lo) * real01(); }

    bool bernoulli(double p) { return real01() < p; }

    /// Standard normal via Box-Muller; second variate of each pair is cached.
    double normal() {
        if (has_spare_) {
            has_spare_ = false;
            return spare_;
        }
        const double u1 = real01_open();
        const double u2 = real01();
        const double r = std::sqrt(-2.0 * std::log(u1));
        const double a = 2.0 * 3.14159265358979323846 * u2;
        spare_ = r * std::sin(a);
        has_spare_ = true;
        return r * std::cos(a);
    }

    double normal(double mu, double sigma) { return mu + sigma * normal(); }

private:
    std::mt19937_64 engine_;
    double spare_ = 0.0;
    bool has_spare_ = false;
};

} // namespace consensus
