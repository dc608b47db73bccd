#include "diffq/mlp.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>
#include <string>

namespace diffq {

Mlp::Mlp(std::vector<std::size_t> widths, ParameterStore& store, Rng& rng) : widths_(std::move(widths))
{
    if (widths_.size() < 2) {
        throw std::invalid_argument("Mlp: need at least input and output widths");
    }
    for (std::size_t l = 0; l + 1 < widths_.size(); ++l) {
        const std::size_t in = widths_[l], out = widths_[l + 1];
        const double bound = 1.0 / std::sqrt(static_cast<double>(in));
        Tensor w({in, out});
        for (auto& v : w.data()) {
            v = bound * rng.next_uniform();
        }
        Tensor b({out});
        for (auto& v : b.data()) {
            v = bound * rng.next_uniform();
        }
        weights_.push_back(store.add("fc" + std::to_string(l) + ".weight", std::move(w)));
        biases_.push_back(store.add("fc" + std::to_string(l) + ".bias", std::move(b)));
    }
}

ad::Var Mlp::forward(ad::Tape& tape, ad::Var x, const ParamReader& read,
                     std::vector<ad::Var>* pre_activations) const
{
    ad::Var h = x;
    for (std::size_t l = 0; l < weights_.size(); ++l) {
        h = ad::add_bias(tape, ad::matmul(tape, h, read(weights_[l])), read(biases_[l]));
        if (l + 1 < weights_.size()) {
            if (pre_activations) {
                pre_activations->push_back(h);
            }
            h = ad::relu(tape, h);
        }
    }
    return h;
}

int Dataset::num_classes() const
{
    return labels.empty() ? 0 : *std::max_element(labels.begin(), labels.end()) + 1;
}

Dataset Dataset::subset(std::span<const std::size_t> rows) const
{
    const std::size_t k = num_features();
    Dataset out;
    out.features = Tensor({rows.size(), k});
    out.labels.reserve(rows.size());
    for (std::size_t i = 0; i < rows.size(); ++i) {
        for (std::size_t j = 0; j < k; ++j) {
            out.features.at(i, j) = features.at(rows[i], j);
        }
        out.labels.push_back(labels[rows[i]]);
    }
    return out;
}

double accuracy(const Mlp& model, const ParameterStore& store, const Dataset& data)
{
    if (data.size() == 0) {
        return 0.0;
    }
    ad::Tape tape;
    auto x = tape.constant(data.features);
    auto logits = model.forward(tape, x, [&](std::size_t id) { return tape.constant(store.value(id)); });
    const Tensor& z = tape.value(logits);
    std::size_t correct = 0;
    for (std::size_t i = 0; i < data.size(); ++i) {
        std::size_t best = 0;
        for (std::size_t j = 1; j < z.dim(1); ++j) {
            if (z.at(i, j) > z.at(i, best)) {
                best = j;
            }
        }
        correct += static_cast<int>(best) == data.labels[i] ? 1 : 0;
    }
    return static_cast<double>(correct) / static_cast<double>(data.size());
}

}  // namespace diffq
