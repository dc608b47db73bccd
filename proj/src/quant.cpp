#include "diffq/quant.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>
#include <string>

namespace diffq::quant {

namespace {

constexpr double kDomainTolerance = 1e-12;

double levels(int bits)
{
    return std::exp2(static_cast<double>(bits)) - 1.0;
}

void check_bits(int bits)
{
    if (bits < 1 || bits > 32) {
        throw std::invalid_argument("bitwidth must lie in [1, 32], got " + std::to_string(bits));
    }
}

}  // namespace

double round_half_away(double x)
{
    return std::round(x);
}

double delta(double bits)
{
    if (!(bits > 0.0)) {
        throw std::invalid_argument("delta: bitwidth must be positive, got " + std::to_string(bits));
    }
    return 1.0 / (std::exp2(bits) - 1.0);
}

ad::Var delta(ad::Tape& tape, ad::Var bits)
{
    const Tensor& b = tape.value(bits);
    for (double v : b.data()) {
        if (!(v > 0.0)) {
            throw std::invalid_argument("delta: bitwidth must be positive, got " + std::to_string(v));
        }
    }
    auto ones = tape.constant(Tensor(b.shape(), 1.0));
    return ad::reciprocal(tape, ad::sub(tape, ad::exp2(tape, bits), ones));
}

ScaleParams range_of(std::span<const double> w)
{
    if (w.empty()) {
        return {};
    }
    auto [lo, hi] = std::minmax_element(w.begin(), w.end());
    return {*lo, *hi};
}

std::pair<Tensor, ScaleParams> min_max_scale(const Tensor& w)
{
    const ScaleParams scale = range_of(w.data());
    Tensor out(w.shape());
    const double r = scale.range();
    if (r > 0.0) {
        for (std::size_t i = 0; i < w.size(); ++i) {
            out[i] = (w[i] - scale.min) / r;
        }
    }
    return {std::move(out), scale};
}

Tensor unscale(const Tensor& normalized, const ScaleParams& scale)
{
    Tensor out(normalized.shape());
    for (std::size_t i = 0; i < out.size(); ++i) {
        out[i] = scale.min + scale.range() * normalized[i];
    }
    return out;
}

double quantize_value(double normalized, int bits)
{
    const double n = levels(bits);
    return round_half_away(normalized * n) / n;
}

QuantizedTensor uniform_quantize(const Tensor& normalized, int bits)
{
    check_bits(bits);
    std::vector<int> one{bits};
    return uniform_quantize(normalized, one, std::max<std::size_t>(normalized.size(), 1));
}

QuantizedTensor uniform_quantize(const Tensor& normalized, std::span<const int> bits, std::size_t group_size)
{
    if (group_size == 0) {
        throw std::invalid_argument("uniform_quantize: group size must be positive");
    }
    const std::size_t d = normalized.size();
    if (bits.size() != num_groups(d, group_size)) {
        throw std::invalid_argument("uniform_quantize: " + std::to_string(bits.size()) + " bitwidths for " +
                                    std::to_string(num_groups(d, group_size)) + " groups");
    }
    for (int b : bits) {
        check_bits(b);
    }
    QuantizedTensor q;
    q.shape = normalized.shape();
    q.group_size = group_size;
    q.bits.assign(bits.begin(), bits.end());
    q.indices.resize(d);
    for (std::size_t i = 0; i < d; ++i) {
        double v = normalized[i];
        if (!(v >= -kDomainTolerance && v <= 1.0 + kDomainTolerance)) {
            throw std::domain_error("uniform_quantize: entry " + std::to_string(i) + " = " + std::to_string(v) +
                                    " lies outside [0, 1]");
        }
        v = std::clamp(v, 0.0, 1.0);
        q.indices[i] = static_cast<std::uint32_t>(round_half_away(v * levels(q.bits_of(i))));
    }
    return q;
}

Tensor reconstruct(const QuantizedTensor& q)
{
    Tensor out(q.shape);
    for (std::size_t i = 0; i < q.num_weights(); ++i) {
        out[i] = static_cast<double>(q.indices[i]) / levels(q.bits_of(i));
    }
    return out;
}

Tensor dequantize(const QuantizedTensor& q)
{
    return unscale(reconstruct(q), q.scale);
}

ad::Var ste_qat_forward(ad::Tape& tape, ad::Var w, int bits)
{
    return ste_qat_forward(tape, w, bits, range_of(tape.value(w).data()));
}

ad::Var ste_qat_forward(ad::Tape& tape, ad::Var w, int bits, const ScaleParams& scale)
{
    check_bits(bits);
    const Tensor& x = tape.value(w);
    if (!x.all_finite()) {
        throw std::invalid_argument("ste_qat_forward: non-finite weights");
    }
    Tensor out(x.shape());
    const double r = scale.range();
    for (std::size_t i = 0; i < x.size(); ++i) {
        const double normalized = r > 0.0 ? std::clamp((x[i] - scale.min) / r, 0.0, 1.0) : 0.0;
        out[i] = scale.min + r * quantize_value(normalized, bits);
    }
    return tape.record("ste_qat", {w}, std::move(out), [](const ad::AdjointArgs& args) {
        if (Tensor* g = args.in_grads[0]) {
            for (std::size_t i = 0; i < g->size(); ++i) {
                (*g)[i] += args.out_grad[i];
            }
        }
    });
}

}  // namespace diffq::quant
