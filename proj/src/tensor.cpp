#include "diffq/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

namespace diffq {

std::size_t shape_size(const Shape& shape)
{
    std::size_t n = 1;
    for (auto extent : shape) {
        n *= extent;
    }
    return n;
}

std::string shape_str(const Shape& shape)
{
    std::ostringstream os;
    os << '(';
    for (std::size_t i = 0; i < shape.size(); ++i) {
        os << (i ? "," : "") << shape[i];
    }
    os << ')';
    return os.str();
}

Tensor::Tensor(Shape shape, double fill) : shape_(std::move(shape))
{
    for (auto extent : shape_) {
        if (extent == 0) {
            throw ShapeError("tensor extents must be positive, got " + shape_str(shape_));
        }
    }
    data_.assign(shape_size(shape_), fill);
}

Tensor::Tensor(Shape shape, std::vector<double> data) : shape_(std::move(shape)), data_(std::move(data))
{
    for (auto extent : shape_) {
        if (extent == 0) {
            throw ShapeError("tensor extents must be positive, got " + shape_str(shape_));
        }
    }
    if (data_.size() != shape_size(shape_)) {
        throw ShapeError("tensor data length " + std::to_string(data_.size()) + " does not match shape " +
                         shape_str(shape_));
    }
}

Tensor Tensor::vector(std::initializer_list<double> values)
{
    return Tensor({values.size()}, std::vector<double>(values));
}

double Tensor::item() const
{
    if (data_.size() != 1) {
        throw ShapeError("item() requires a single-element tensor, got " + shape_str(shape_));
    }
    return data_[0];
}

void Tensor::fill(double v)
{
    std::fill(data_.begin(), data_.end(), v);
}

bool Tensor::all_finite() const noexcept
{
    return std::all_of(data_.begin(), data_.end(), [](double v) { return std::isfinite(v); });
}

}  // namespace diffq
