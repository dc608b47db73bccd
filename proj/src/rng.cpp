#include "diffq/rng.hpp"

#include <cmath>
#include <numbers>

namespace diffq {

std::uint64_t Rng::next_u64() noexcept
{
    std::uint64_t z = (state_ += 0x9E3779B97F4A7C15ull);
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ull;
    z = (z ^ (z >> 27)) * 0x94D049BB133111EBull;
    return z ^ (z >> 31);
}

double Rng::next_unit() noexcept
{
    return static_cast<double>(next_u64() >> 11) * 0x1.0p-53;
}

double Rng::next_gaussian() noexcept
{
    if (cached_normal_) {
        double z = *cached_normal_;
        cached_normal_.reset();
        return z;
    }
    // 1 - u lies in (0, 1], so the log is finite.
    const double u1 = 1.0 - next_unit();
    const double u2 = next_unit();
    const double radius = std::sqrt(-2.0 * std::log(u1));
    const double theta = 2.0 * std::numbers::pi * u2;
    cached_normal_ = radius * std::sin(theta);
    return radius * std::cos(theta);
}

std::uint64_t Rng::next_below(std::uint64_t n) noexcept
{
    // Lemire's multiply-shift; the bias is below 2^-64 * n and irrelevant here.
    return static_cast<std::uint64_t>((static_cast<unsigned __int128>(next_u64()) * n) >> 64);
}

Tensor sample_uniform(Rng& rng, const Shape& shape)
{
    Tensor out(shape);
    for (auto& v : out.data()) {
        v = rng.next_uniform();
    }
    return out;
}

Tensor sample_gaussian(Rng& rng, const Shape& shape)
{
    Tensor out(shape);
    for (auto& v : out.data()) {
        v = rng.next_gaussian();
    }
    return out;
}

}  // namespace diffq
