#include "diffq/parameters.hpp"

namespace diffq {

std::size_t ParameterStore::add(std::string name, Tensor value)
{
    grads_.emplace_back(value.shape());
    values_.push_back(std::move(value));
    names_.push_back(std::move(name));
    return values_.size() - 1;
}

void ParameterStore::zero_grad()
{
    for (auto& g : grads_) {
        g.fill(0.0);
    }
}

}  // namespace diffq
