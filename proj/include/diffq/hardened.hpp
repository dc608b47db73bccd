#pragma once

#include <cstdint>
#include <map>
#include <span>
#include <string>
#include <vector>

#include "diffq/quant.hpp"
#include "diffq/tensor.hpp"

namespace diffq {

/// 1 MB = 8 * 2^20 bits.
inline constexpr double kBitsPerMegabyte = 8388608.0;

enum class TensorKind : std::uint8_t { raw = 0, quantized = 1 };

/*!
 * One tensor of a deployable model. Raw tensors keep f32-representable
 * values; quantized tensors carry grid indices, integer bitwidths per group,
 * and an f32-representable range.
 */
struct HardenedTensor {
    std::string name;
    TensorKind kind = TensorKind::raw;
    Tensor raw;                   // kind == raw
    quant::QuantizedTensor q;     // kind == quantized
    int b_min = 0;                // kind == quantized; group codes store bits - b_min

    const Shape& shape() const { return kind == TensorKind::raw ? raw.shape() : q.shape; }
    std::size_t num_weights() const { return shape_size(shape()); }
    Tensor values() const;

    friend bool operator==(const HardenedTensor&, const HardenedTensor&) = default;
};

struct HardenedModel {
    std::vector<HardenedTensor> tensors;

    const HardenedTensor* find(const std::string& name) const;
    friend bool operator==(const HardenedModel&, const HardenedModel&) = default;
};

/// Bits needed to store the largest group code: ceil(log2(1 + max(bits) - b_min)).
int max_code_bits(std::span<const int> bits, int b_min);

/// 2*32 + 8 + ceil(d/g) * maxC + sum_s len_s * bits_s for one quantized tensor.
std::uint64_t true_size_bits(const quant::QuantizedTensor& q, int b_min);
std::uint64_t true_size_bits(const HardenedTensor& t);

struct TensorReport {
    std::string name;
    std::size_t num_weights = 0;
    std::size_t group_size = 0;
    bool quantized = false;
    int b_min = 0;
    int max_code_bits = 0;
    std::map<int, std::size_t> bit_histogram; // bitwidth -> number of weights
    double mean_bits = 32.0;
    std::uint64_t true_bits = 0;
    /// Bits spent on group codes: ceil(d/g) * maxC.
    std::uint64_t code_overhead_bits = 0;
};

struct ModelReport {
    std::vector<TensorReport> tensors;
    /// Weighted over all weights; raw tensors count as 32 bits per weight.
    double mean_bits = 0.0;
    std::uint64_t true_bits = 0;
    double true_size_mb = 0.0;
};

TensorReport describe(const HardenedTensor& t);
ModelReport describe(const HardenedModel& m);

/// Rounds a range outward to f32-representable bounds so every value stays inside it.
quant::ScaleParams f32_outer_range(const quant::ScaleParams& scale);
double to_f32(double v);

}  // namespace diffq
