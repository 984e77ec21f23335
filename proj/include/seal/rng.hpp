#pragma once

#include <cstdint>
#include <random>
#include <vector>

namespace seal {

std::uint64_t splitmix64(std::uint64_t x);

/// Child seed for stream `stream` of `base`. Distinct streams give
/// statistically independent children; the mapping is a pure function.
std::uint64_t derive_seed(std::uint64_t base, std::uint64_t stream);

class Rng {
public:
    explicit Rng(std::uint64_t seed) : engine_(splitmix64(seed)) {}

    double uniform() { return uniform_(engine_); }
    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }
    /// Uniform integer in [0, n).
    int uniform_int(int n);
    double normal() { return normal_(engine_); }
    std::vector<double> normal_vector(std::size_t n);

private:
    std::mt19937_64 engine_;
    std::uniform_real_distribution<double> uniform_{0.0, 1.0};
    std::normal_distribution<double> normal_{0.0, 1.0};
};

}  // namespace seal
