#pragma once

#include <cstddef>
#include <span>
#include <string>
#include <vector>

#include "diffq/tensor.hpp"

namespace diffq {

/// Named trainable tensors with matching gradient buffers. Ids are insertion indices.
class ParameterStore {
  public:
    std::size_t add(std::string name, Tensor value);

    std::size_t size() const noexcept { return values_.size(); }
    const std::string& name(std::size_t id) const { return names_.at(id); }
    Tensor& value(std::size_t id) { return values_.at(id); }
    const Tensor& value(std::size_t id) const { return values_.at(id); }
    Tensor& grad(std::size_t id) { return grads_.at(id); }
    const Tensor& grad(std::size_t id) const { return grads_.at(id); }

    std::span<Tensor> values() noexcept { return values_; }
    std::span<const Tensor> grads() const noexcept { return grads_; }
    void zero_grad();

  private:
    std::vector<std::string> names_;
    std::vector<Tensor> values_;
    std::vector<Tensor> grads_;
};

}  // namespace diffq
