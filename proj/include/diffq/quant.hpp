#pragma once

#include <cstdint>
#include <vector>

#include "diffq/autodiff.hpp"
#include "diffq/tensor.hpp"

namespace diffq::quant {

/// Per-tensor affine range. Serialized as two f32 values.
struct ScaleParams {
    double min = 0.0;
    double max = 1.0;

    double range() const noexcept { return max - min; }
    friend bool operator==(const ScaleParams&, const ScaleParams&) = default;
};

/// Integer grid indices for one tensor, with one bitwidth per contiguous group.
struct QuantizedTensor {
    Shape shape;
    std::size_t group_size = 1;
    ScaleParams scale;
    std::vector<int> bits;              // one entry per group
    std::vector<std::uint32_t> indices; // one entry per weight

    std::size_t num_weights() const noexcept { return indices.size(); }
    std::size_t num_groups() const noexcept { return bits.size(); }
    int bits_of(std::size_t weight) const { return bits[weight / group_size]; }

    friend bool operator==(const QuantizedTensor&, const QuantizedTensor&) = default;
};

inline std::size_t num_groups(std::size_t d, std::size_t group_size)
{
    return (d + group_size - 1) / group_size;
}

/// Round half away from zero.
double round_half_away(double x);

/// Quantization step 1 / (2^B - 1) for a real bitwidth B > 0.
double delta(double bits);
/// Differentiable Delta(b), elementwise, built from exp2 / sub / reciprocal.
ad::Var delta(ad::Tape& tape, ad::Var bits);

/// Min-max normalization to [0, 1]. A constant tensor maps to all zeros.
std::pair<Tensor, ScaleParams> min_max_scale(const Tensor& w);
ScaleParams range_of(std::span<const double> w);
Tensor unscale(const Tensor& normalized, const ScaleParams& scale);

/// Quantizes normalized values in [0,1] with a single bitwidth.
QuantizedTensor uniform_quantize(const Tensor& normalized, int bits);
/// Quantizes normalized values with one bitwidth per group of `group_size`.
QuantizedTensor uniform_quantize(const Tensor& normalized, std::span<const int> bits, std::size_t group_size);

/// Grid values index / (2^b - 1), in [0, 1].
Tensor reconstruct(const QuantizedTensor& q);
/// Grid values mapped back through the stored scale.
Tensor dequantize(const QuantizedTensor& q);

/// Q(w, B) = round(w (2^B - 1)) / (2^B - 1) for a scalar in [0,1].
double quantize_value(double normalized, int bits);

/*!
 * Straight-through quantization: the forward value is the weight quantized to
 * `bits` under its own min-max range; the backward pass is the identity.
 * The range is recomputed from the current value and treated as a constant.
 */
ad::Var ste_qat_forward(ad::Tape& tape, ad::Var w, int bits);
/// Same, with a caller-provided range instead of the tensor's own min/max.
ad::Var ste_qat_forward(ad::Tape& tape, ad::Var w, int bits, const ScaleParams& scale);

}  // namespace diffq::quant
