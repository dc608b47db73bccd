#pragma once

#include <cstdint>
#include <optional>

#include "diffq/tensor.hpp"

namespace diffq {

/*!
 * SplitMix64 generator with uniform and Box-Muller normal draws.
 *
 * The raw stream is bit-reproducible across implementations: every 64-bit
 * output is mixed from `state += 0x9E3779B97F4A7C15`. Doubles take the top
 * 53 bits. Normals are produced in pairs and the second one is cached.
 */
class Rng {
  public:
    explicit Rng(std::uint64_t seed = 0) noexcept : state_(seed) {}

    std::uint64_t next_u64() noexcept;
    /// Uniform on [0, 1).
    double next_unit() noexcept;
    /// Uniform on [-1, 1).
    double next_uniform() noexcept { return 2.0 * next_unit() - 1.0; }
    double next_gaussian() noexcept;
    /// Uniform integer in [0, n).
    std::uint64_t next_below(std::uint64_t n) noexcept;

    std::uint64_t state() const noexcept { return state_; }

  private:
    std::uint64_t state_;
    std::optional<double> cached_normal_;
};

Tensor sample_uniform(Rng& rng, const Shape& shape);
Tensor sample_gaussian(Rng& rng, const Shape& shape);

}  // namespace diffq
