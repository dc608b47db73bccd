#include "diffq/harness/gradcheck.hpp"

#include <algorithm>
#include <cmath>
#include <memory>

#include "diffq/mlp.hpp"

namespace diffq::harness {

namespace {

struct Evaluation {
    double loss = 0.0;
    std::vector<Tensor> pre_activations;
};

class Problem {
  public:
    Problem(std::uint64_t seed, const GradcheckOptions& opt) : rng_(seed), model_(opt.widths, store_, rng_)
    {
        cfg_.b_init = 3.0 + 4.0 * rng_.next_unit();
        const std::size_t group_choices[] = {1, 3, 4, 8};
        cfg_.group_size = group_choices[rng_.next_below(4)];
        cfg_.lambda = rng_.next_unit();
        cfg_.noise = opt.noise;
        cfg_.skip_threshold_mb = 0.0;
        quantizer_ = std::make_unique<DiffQuantizer>(store_, cfg_, Method::pqn, 8, rng_.next_u64());
        quantizer_->set_frozen(true);
        for (auto& logits : quantizer_->all_logits()) {
            for (auto& v : logits.data()) {
                v += 0.5 * rng_.next_gaussian();
            }
        }
        batch_.features = Tensor({opt.batch, opt.widths.front()});
        for (auto& v : batch_.features.data()) {
            v = rng_.next_gaussian();
        }
        for (std::size_t i = 0; i < opt.batch; ++i) {
            batch_.labels.push_back(static_cast<int>(rng_.next_below(opt.widths.back())));
        }
    }

    /// Loss value and ReLU inputs; when `with_grads`, parameter and logit gradients are collected too.
    Evaluation evaluate(bool with_grads)
    {
        ad::Tape tape;
        quantizer_->begin_pass(tape);
        std::vector<ad::Var> pre;
        auto logits = model_.forward(tape, tape.constant(batch_.features),
                                     [&](std::size_t id) { return quantizer_->read(id); }, &pre);
        auto task = ad::softmax_cross_entropy(tape, logits, batch_.labels);
        auto total = ad::add(tape, task, ad::scale(tape, quantizer_->size_penalty(), cfg_.lambda));
        Evaluation out;
        out.loss = tape.value(total).item();
        for (auto v : pre) {
            out.pre_activations.push_back(tape.value(v));
        }
        if (with_grads) {
            tape.backward(total);
            quantizer_->collect_grads();
        }
        return out;
    }

    ParameterStore& store() { return store_; }
    DiffQuantizer& quantizer() { return *quantizer_; }

  private:
    Rng rng_;
    ParameterStore store_;
    Mlp model_;
    DiffqConfig cfg_;
    std::unique_ptr<DiffQuantizer> quantizer_;
    Dataset batch_;
};

bool same_signs(const std::vector<Tensor>& a, const std::vector<Tensor>& b)
{
    for (std::size_t k = 0; k < a.size(); ++k) {
        for (std::size_t i = 0; i < a[k].size(); ++i) {
            if ((a[k][i] > 0.0) != (b[k][i] > 0.0)) {
                return false;
            }
        }
    }
    return true;
}

}  // namespace

GradcheckResult run_gradcheck(std::uint64_t seed, const GradcheckOptions& opt)
{
    Problem problem(seed, opt);
    const Evaluation base = problem.evaluate(true);
    auto& store = problem.store();
    auto& quantizer = problem.quantizer();

    std::vector<Tensor> weight_grads(store.grads().begin(), store.grads().end());
    std::vector<Tensor> logit_grads(quantizer.all_logit_grads().begin(), quantizer.all_logit_grads().end());

    GradcheckResult result;
    result.seed = seed;
    auto check = [&](double& slot, double analytic, const std::string& name, std::size_t index) {
        const double saved = slot;
        const double h = opt.step;
        double f[4];
        bool kink = false;
        const double offsets[4] = {2.0 * h, h, -h, -2.0 * h};
        for (int k = 0; k < 4; ++k) {
            slot = saved + offsets[k];
            const Evaluation e = problem.evaluate(false);
            f[k] = e.loss;
            kink = kink || !same_signs(base.pre_activations, e.pre_activations);
        }
        slot = saved;
        if (kink) {
            ++result.skipped_kinks;
            return;
        }
        // fourth-order central stencil
        const double numeric = (-f[0] + 8.0 * f[1] - 8.0 * f[2] + f[3]) / (12.0 * h);
        const double denom = std::max({std::abs(analytic), std::abs(numeric), opt.magnitude_floor});
        const double rel = std::abs(analytic - numeric) / denom;
        ++result.checked;
        if (rel >= result.max_rel_error) {
            result.max_rel_error = rel;
            result.worst = {name, index, analytic, numeric, rel};
        }
    };

    for (std::size_t id = 0; id < store.size(); ++id) {
        for (std::size_t i = 0; i < store.value(id).size(); ++i) {
            check(store.value(id)[i], weight_grads[id][i], store.name(id), i);
        }
    }
    std::size_t logit_index = 0;
    for (std::size_t id = 0; id < store.size(); ++id) {
        if (!quantizer.is_quantized(id)) {
            continue;
        }
        Tensor& logits = quantizer.logits(id);
        for (std::size_t i = 0; i < logits.size(); ++i) {
            check(logits[i], logit_grads[logit_index][i], store.name(id) + ".logits", i);
        }
        ++logit_index;
    }
    return result;
}

}  // namespace diffq::harness
