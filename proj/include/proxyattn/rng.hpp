#pragma once

#include <cstdint>
#include <random>
#include <string>

#include "proxyattn/tensor.hpp"

namespace proxyattn {

enum class Distribution { gaussian, laplacian, uniform };

struct DistributionSpec {
    Distribution kind = Distribution::gaussian;
    // gaussian: sigma; laplacian: scale b; uniform: [lo, hi).
    double a = 0.02;
    double b = 0.0;

    static DistributionSpec gaussian(double sigma) { return {Distribution::gaussian, sigma, 0.0}; }
    static DistributionSpec laplacian(double scale) { return {Distribution::laplacian, scale, 0.0}; }
    static DistributionSpec uniform(double lo, double hi) { return {Distribution::uniform, lo, hi}; }
};

// Deterministic 64-bit random stream. Same seed, same sequence of draws.
class Rng {
public:
    explicit Rng(std::uint64_t seed) : engine_(seed) {}

    std::uint64_t next_u64() { return engine_(); }
    // Uniform in [0, 1).
    double uniform();
    double uniform(double lo, double hi);
    double normal(double mean = 0.0, double stddev = 1.0);
    double laplace(double scale);
    // Uniform integer in [0, n).
    std::size_t index(std::size_t n);

    Tensor sample(const DistributionSpec& dist, Shape shape);

private:
    std::mt19937_64 engine_;
};

// Stateless seed derivation for independent sub-streams (per epoch, per step).
std::uint64_t mix_seed(std::uint64_t seed, std::uint64_t stream);

Distribution parse_distribution(const std::string& name);
std::string to_string(Distribution d);

}  // namespace proxyattn
