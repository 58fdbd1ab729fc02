#pragma once

#include <hiflow/tensor.hpp>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <random>

namespace hiflow {

/// Seeded generator; every random draw in the library flows through one of these.
class Rng {
public:
    explicit Rng(std::uint64_t seed = 0) : engine_(seed) {}

    double normal(double mean = 0.0, double std = 1.0) { return std::normal_distribution<double>(mean, std)(engine_); }
    double uniform(double lo = 0.0, double hi = 1.0) { return std::uniform_real_distribution<double>(lo, hi)(engine_); }
    std::size_t index(std::size_t n) { return std::uniform_int_distribution<std::size_t>(0, n - 1)(engine_); }

    /// Normal(mean, std) conditioned on [a, b] (absolute bounds), by rejection.
    double trunc_normal(double mean, double std, double a, double b) {
        for (int tries = 0; tries < 1000; ++tries) {
            const double v = normal(mean, std);
            if (v >= a && v <= b) return v;
        }
        return std::clamp(mean, a, b);
    }

    std::uint64_t next_u64() { return engine_(); }
    std::mt19937_64& engine() { return engine_; }

private:
    std::mt19937_64 engine_;
};

template <class T>
Tensor<T> randn(Shape shape, Rng& rng, double std = 1.0) {
    Tensor<T> t(std::move(shape));
    for (auto& v : t.data()) v = static_cast<T>(rng.normal(0.0, std));
    return t;
}

template <class T>
Tensor<T> rand_uniform(Shape shape, Rng& rng, double lo, double hi) {
    Tensor<T> t(std::move(shape));
    for (auto& v : t.data()) v = static_cast<T>(rng.uniform(lo, hi));
    return t;
}

}  // namespace hiflow
