#pragma once

#include <cstddef>
#include <functional>
#include <span>
#include <vector>

#include "diffq/autodiff.hpp"
#include "diffq/parameters.hpp"
#include "diffq/rng.hpp"

namespace diffq {

/// Supplies the node used for a parameter id in the current pass.
using ParamReader = std::function<ad::Var(std::size_t)>;

/// Fully connected ReLU network; the last layer emits logits.
class Mlp {
  public:
    /// Registers "fc{i}.weight" (in, out) and "fc{i}.bias" (out) with uniform(+-1/sqrt(in)) init.
    Mlp(std::vector<std::size_t> widths, ParameterStore& store, Rng& rng);

    /// `pre_activations`, when given, receives the input node of every ReLU.
    ad::Var forward(ad::Tape& tape, ad::Var x, const ParamReader& read,
                    std::vector<ad::Var>* pre_activations = nullptr) const;

    const std::vector<std::size_t>& widths() const noexcept { return widths_; }
    std::size_t num_layers() const noexcept { return weights_.size(); }
    std::size_t weight_id(std::size_t layer) const { return weights_.at(layer); }
    std::size_t bias_id(std::size_t layer) const { return biases_.at(layer); }

  private:
    std::vector<std::size_t> widths_;
    std::vector<std::size_t> weights_;
    std::vector<std::size_t> biases_;
};

/// Row-major (n, k) features and integer labels.
struct Dataset {
    Tensor features;
    std::vector<int> labels;

    std::size_t size() const noexcept { return labels.size(); }
    std::size_t num_features() const { return features.dim(1); }
    int num_classes() const;
    /// Rows `rows` as a new dataset.
    Dataset subset(std::span<const std::size_t> rows) const;
};

/// Fraction of correctly classified samples using the weights in `store` as constants.
double accuracy(const Mlp& model, const ParameterStore& store, const Dataset& data);

}  // namespace diffq
