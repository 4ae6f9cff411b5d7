#pragma once

#include <cstdint>
#include <random>
#include <vector>

#include "cpunet/tensor.hpp"

namespace testing {

inline std::vector<double> uniform(std::size_t n, std::mt19937_64& rng, double lo = -1.0, double hi = 1.0) {
    std::uniform_real_distribution<double> dist(lo, hi);
    std::vector<double> v(n);
    for (auto& x : v) x = dist(rng);
    return v;
}

inline cpunet::Tensor random_variable(cpunet::Shape shape, std::mt19937_64& rng, double lo = -1.0, double hi = 1.0) {
    const std::size_t n = cpunet::numel(shape);
    return cpunet::Tensor::variable(std::move(shape), uniform(n, rng, lo, hi));
}

inline cpunet::Tensor random_constant(cpunet::Shape shape, std::mt19937_64& rng, double lo = -1.0, double hi = 1.0) {
    const std::size_t n = cpunet::numel(shape);
    return cpunet::Tensor::constant(std::move(shape), uniform(n, rng, lo, hi));
}

inline std::vector<std::uint8_t> random_mask(std::size_t n, std::mt19937_64& rng, double p = 0.5) {
    std::bernoulli_distribution bit(p);
    std::vector<std::uint8_t> m(n);
    for (auto& b : m) b = bit(rng) ? 1 : 0;
    return m;
}

/// Scalar probe: sum(t * r) with fixed random weights r, so every output
/// coordinate contributes to the gradient.
inline cpunet::Tensor probe(const cpunet::Tensor& t, std::uint64_t seed = 99) {
    std::mt19937_64 rng(seed);
    return cpunet::sum(cpunet::mul(t, random_constant(t.shape(), rng)));
}

}  // namespace testing
