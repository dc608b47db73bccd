#include "diffq/hardened.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <limits>
#include <stdexcept>

namespace diffq {

Tensor HardenedTensor::values() const
{
    return kind == TensorKind::raw ? raw : quant::dequantize(q);
}

const HardenedTensor* HardenedModel::find(const std::string& name) const
{
    auto it = std::find_if(tensors.begin(), tensors.end(), [&](const auto& t) { return t.name == name; });
    return it == tensors.end() ? nullptr : &*it;
}

int max_code_bits(std::span<const int> bits, int b_min)
{
    int max_code = 0;
    for (int b : bits) {
        if (b < b_min) {
            throw std::invalid_argument("bitwidth " + std::to_string(b) + " below b_min " + std::to_string(b_min));
        }
        max_code = std::max(max_code, b - b_min);
    }
    return static_cast<int>(std::bit_width(static_cast<unsigned>(max_code)));
}

std::uint64_t true_size_bits(const quant::QuantizedTensor& q, int b_min)
{
    std::uint64_t bits = 2 * 32 + 8;
    bits += static_cast<std::uint64_t>(q.num_groups()) * static_cast<std::uint64_t>(max_code_bits(q.bits, b_min));
    const std::size_t d = q.num_weights();
    for (std::size_t s = 0; s < q.num_groups(); ++s) {
        const std::size_t begin = s * q.group_size;
        const std::size_t len = std::min(q.group_size, d - begin);
        bits += static_cast<std::uint64_t>(len) * static_cast<std::uint64_t>(q.bits[s]);
    }
    return bits;
}

std::uint64_t true_size_bits(const HardenedTensor& t)
{
    if (t.kind == TensorKind::raw) {
        return 32ull * t.num_weights();
    }
    return true_size_bits(t.q, t.b_min);
}

TensorReport describe(const HardenedTensor& t)
{
    TensorReport r;
    r.name = t.name;
    r.num_weights = t.num_weights();
    r.true_bits = true_size_bits(t);
    if (t.kind == TensorKind::raw) {
        r.bit_histogram[32] = r.num_weights;
        r.mean_bits = 32.0;
        return r;
    }
    r.quantized = true;
    r.group_size = t.q.group_size;
    r.b_min = t.b_min;
    r.max_code_bits = max_code_bits(t.q.bits, t.b_min);
    r.code_overhead_bits = static_cast<std::uint64_t>(t.q.num_groups()) * static_cast<std::uint64_t>(r.max_code_bits);
    std::uint64_t payload = 0;
    for (std::size_t i = 0; i < r.num_weights; ++i) {
        const int b = t.q.bits_of(i);
        ++r.bit_histogram[b];
        payload += static_cast<std::uint64_t>(b);
    }
    r.mean_bits = static_cast<double>(payload) / static_cast<double>(r.num_weights);
    return r;
}

ModelReport describe(const HardenedModel& m)
{
    ModelReport report;
    double weighted = 0.0;
    std::size_t total = 0;
    for (const auto& t : m.tensors) {
        auto r = describe(t);
        weighted += r.mean_bits * static_cast<double>(r.num_weights);
        total += r.num_weights;
        report.true_bits += r.true_bits;
        report.tensors.push_back(std::move(r));
    }
    report.mean_bits = total ? weighted / static_cast<double>(total) : 0.0;
    report.true_size_mb = static_cast<double>(report.true_bits) / kBitsPerMegabyte;
    return report;
}

double to_f32(double v)
{
    return static_cast<double>(static_cast<float>(v));
}

quant::ScaleParams f32_outer_range(const quant::ScaleParams& scale)
{
    float lo = static_cast<float>(scale.min);
    float hi = static_cast<float>(scale.max);
    if (static_cast<double>(lo) > scale.min) {
        lo = std::nextafter(lo, -std::numeric_limits<float>::infinity());
    }
    if (static_cast<double>(hi) < scale.max) {
        hi = std::nextafter(hi, std::numeric_limits<float>::infinity());
    }
    return {static_cast<double>(lo), static_cast<double>(hi)};
}

}  // namespace diffq
