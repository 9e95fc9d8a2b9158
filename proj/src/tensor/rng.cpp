#include "proxyattn/rng.hpp"

#include <cmath>
#include <limits>

namespace proxyattn {

double Rng::uniform() {
    // 53 random mantissa bits -> [0, 1).
    return static_cast<double>(engine_() >> 11) * 0x1.0p-53;
}

double Rng::uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

double Rng::normal(double mean, double stddev) {
    std::normal_distribution<double> dist(mean, stddev);
    return dist(engine_);
}

double Rng::laplace(double scale) {
    // Inverse CDF on u in (-1/2, 1/2); u == -1/2 is mapped away from log(0).
    double u = uniform() - 0.5;
    if (u == -0.5) u = -0.5 + std::numeric_limits<double>::epsilon();
    const double s = u < 0 ? -1.0 : 1.0;
    return -scale * s * std::log(1.0 - 2.0 * std::abs(u));
}

std::size_t Rng::index(std::size_t n) {
    std::uniform_int_distribution<std::size_t> dist(0, n - 1);
    return dist(engine_);
}

Tensor Rng::sample(const DistributionSpec& dist, Shape shape) {
    Tensor t(std::move(shape));
    switch (dist.kind) {
    case Distribution::gaussian:
        if (!(dist.a > 0)) throw ConfigError("gaussian sigma must be > 0");
        for (auto& v : t.storage()) v = normal(0.0, dist.a);
        break;
    case Distribution::laplacian:
        if (!(dist.a > 0)) throw ConfigError("laplacian scale must be > 0");
        for (auto& v : t.storage()) v = laplace(dist.a);
        break;
    case Distribution::uniform:
        if (!(dist.a < dist.b)) throw ConfigError("uniform bounds require lo < hi");
        for (auto& v : t.storage()) v = uniform(dist.a, dist.b);
        break;
    }
    return t;
}

std::uint64_t mix_seed(std::uint64_t seed, std::uint64_t stream) {
    // splitmix64 finalizer over the combined words.
    std::uint64_t z = seed + 0x9E3779B97F4A7C15ULL * (stream + 1);
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
    z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
    return z ^ (z >> 31);
}

Distribution parse_distribution(const std::string& name) {
    if (name == "gaussian") return Distribution::gaussian;
    if (name == "laplacian") return Distribution::laplacian;
    if (name == "uniform" || name == "random") return Distribution::uniform;
    throw ConfigError("unknown distribution '" + name + "' (expected gaussian, laplacian or uniform)");
}

std::string to_string(Distribution d) {
    switch (d) {
    case Distribution::gaussian: return "gaussian";
    case Distribution::laplacian: return "laplacian";
    case Distribution::uniform: return "uniform";
    }
    return "gaussian";
}

}  // namespace proxyattn
