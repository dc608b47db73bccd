#include "diffq/diffq.hpp"

#include <algorithm>
#include <cmath>
#include <string>

namespace diffq {

namespace {

double sigmoid(double x)
{
    if (x >= 0.0) {
        return 1.0 / (1.0 + std::exp(-x));
    }
    const double e = std::exp(x);
    return e / (1.0 + e);
}

std::vector<double> group_lengths(std::size_t d, std::size_t g)
{
    std::vector<double> lens(quant::num_groups(d, g));
    for (std::size_t s = 0; s < lens.size(); ++s) {
        lens[s] = static_cast<double>(std::min(g, d - s * g));
    }
    return lens;
}

}  // namespace

void DiffqConfig::validate() const
{
    auto fail = [](const std::string& what) { throw std::invalid_argument("invalid diffq config: " + what); };
    if (!(1 <= b_min && b_min < b_init && b_init < b_max && b_max <= 32)) {
        fail("need 1 <= b_min < b_init < b_max <= 32, got b_min=" + std::to_string(b_min) +
             " b_init=" + std::to_string(b_init) + " b_max=" + std::to_string(b_max));
    }
    if (!(lambda >= 0.0)) {
        fail("lambda must be non-negative");
    }
    if (group_size < 1) {
        fail("group size must be at least 1");
    }
    if (!(skip_threshold_mb >= 0.0)) {
        fail("skip threshold must be non-negative");
    }
    if (!(logit_lr >= 0.0)) {
        fail("logit learning rate must be non-negative");
    }
    if (fixed_bits && (*fixed_bits < b_min || *fixed_bits > b_max)) {
        fail("fixed bits " + std::to_string(*fixed_bits) + " outside [b_min, b_max]");
    }
}

const char* to_string(NoiseKind kind)
{
    return kind == NoiseKind::uniform ? "uniform" : "gaussian";
}

const char* to_string(Method method)
{
    switch (method) {
    case Method::fp32:
        return "fp32";
    case Method::qat:
        return "qat";
    case Method::pqn:
        return "diffq";
    }
    return "?";
}

ad::Var bits_from_logits(ad::Tape& tape, ad::Var logits, const DiffqConfig& cfg)
{
    const double span = static_cast<double>(cfg.b_max - cfg.b_min);
    auto scaled = ad::scale(tape, ad::sigmoid(tape, logits), span);
    auto floor = tape.constant(Tensor(tape.value(logits).shape(), static_cast<double>(cfg.b_min)));
    return ad::add(tape, scaled, floor);
}

Tensor bits_from_logits(const Tensor& logits, const DiffqConfig& cfg)
{
    Tensor out(logits.shape());
    for (std::size_t i = 0; i < out.size(); ++i) {
        out[i] = cfg.b_min + sigmoid(logits[i]) * (cfg.b_max - cfg.b_min);
    }
    return out;
}

Tensor init_logits(const DiffqConfig& cfg, std::size_t num_groups)
{
    if (!(cfg.b_min < cfg.b_init && cfg.b_init < cfg.b_max)) {
        throw std::invalid_argument("init_logits: b_init must lie strictly inside (b_min, b_max)");
    }
    const double p = (cfg.b_init - cfg.b_min) / (cfg.b_max - cfg.b_min);
    return Tensor({num_groups}, std::log(p / (1.0 - p)));
}

const Tensor& NoiseRegistry::get_or_sample(std::size_t param, const Shape& shape, NoiseKind kind, Rng& rng)
{
    auto it = samples_.find(param);
    if (it == samples_.end()) {
        Tensor eps = kind == NoiseKind::uniform ? sample_uniform(rng, shape) : sample_gaussian(rng, shape);
        it = samples_.emplace(param, std::move(eps)).first;
    }
    if (it->second.shape() != shape) {
        throw ShapeError("noise registry: parameter " + std::to_string(param) + " sampled with shape " +
                         shape_str(it->second.shape()) + ", requested " + shape_str(shape));
    }
    return it->second;
}

void NoiseRegistry::put(std::size_t param, Tensor noise)
{
    samples_.insert_or_assign(param, std::move(noise));
}

ad::Var pqn_forward(ad::Tape& tape, ad::Var w, ad::Var bits, std::size_t param, std::size_t group_size,
                    const quant::ScaleParams& scale, NoiseKind kind, Rng& rng, NoiseRegistry& registry)
{
    const Shape shape = tape.value(w).shape();
    const Tensor& eps = registry.get_or_sample(param, shape, kind, rng);
    Tensor coeff(shape);
    const double half_range = 0.5 * scale.range();
    for (std::size_t i = 0; i < coeff.size(); ++i) {
        coeff[i] = half_range * eps[i];
    }
    auto step = ad::expand_groups(tape, quant::delta(tape, bits), group_size, shape);
    auto noise = ad::mul(tape, step, tape.constant(std::move(coeff)));
    return ad::add(tape, w, noise);
}

TrainingDiverged::TrainingDiverged(long step, const std::string& what)
    : std::runtime_error("training diverged at step " + std::to_string(step) + ": " + what), step_(step)
{
}

DiffQuantizer::DiffQuantizer(ParameterStore& store, DiffqConfig cfg, Method method, int qat_bits,
                             std::uint64_t seed)
    : store_(store), cfg_(std::move(cfg)), method_(method), qat_bits_(qat_bits), rng_(seed)
{
    cfg_.validate();
    if (method_ == Method::qat && (qat_bits_ < 1 || qat_bits_ > 32)) {
        throw std::invalid_argument("QAT bitwidth must lie in [1, 32]");
    }
    const double threshold_bits = cfg_.skip_threshold_mb * kBitsPerMegabyte;
    slots_.resize(store_.size());
    for (std::size_t id = 0; id < store_.size(); ++id) {
        const std::size_t d = store_.value(id).size();
        const bool excluded =
            std::find(cfg_.exclude.begin(), cfg_.exclude.end(), store_.name(id)) != cfg_.exclude.end();
        const bool too_small = 32.0 * static_cast<double>(d) < threshold_bits;
        if (method_ == Method::fp32 || excluded || too_small) {
            continue;
        }
        slots_[id].quantized = true;
        slots_[id].logit_index = logit_values_.size();
        logit_values_.push_back(init_logits(cfg_, quant::num_groups(d, cfg_.group_size)));
        logit_grads_.emplace_back(logit_values_.back().shape());
    }
}

bool DiffQuantizer::is_quantized(std::size_t param) const
{
    return slots_.at(param).quantized;
}

std::size_t DiffQuantizer::num_groups(std::size_t param) const
{
    return quant::num_groups(store_.value(param).size(), cfg_.group_size);
}

Tensor& DiffQuantizer::logits(std::size_t param)
{
    if (!is_quantized(param)) {
        throw std::invalid_argument("parameter '" + store_.name(param) + "' is not quantized");
    }
    return logit_values_[slots_[param].logit_index];
}

const Tensor& DiffQuantizer::logits(std::size_t param) const
{
    return const_cast<DiffQuantizer*>(this)->logits(param);
}

Tensor DiffQuantizer::bits(std::size_t param) const
{
    if (cfg_.fixed_bits) {
        return Tensor({num_groups(param)}, static_cast<double>(*cfg_.fixed_bits));
    }
    if (method_ == Method::qat) {
        return Tensor({num_groups(param)}, static_cast<double>(qat_bits_));
    }
    return bits_from_logits(logits(param), cfg_);
}

bool DiffQuantizer::logits_trainable() const noexcept
{
    return method_ == Method::pqn && !cfg_.fixed_bits && !logit_values_.empty();
}

void DiffQuantizer::begin_pass(ad::Tape& tape)
{
    tape_ = &tape;
    if (!frozen_) {
        registry_.clear();
    }
    weight_leaves_.clear();
    logit_leaves_.clear();
}

void DiffQuantizer::set_frozen(bool frozen)
{
    frozen_ = frozen;
    registry_.clear();
    frozen_ranges_.clear();
}

void DiffQuantizer::check_pass() const
{
    if (!tape_) {
        throw std::logic_error("DiffQuantizer: begin_pass() was not called");
    }
}

ad::Var DiffQuantizer::weight_leaf(std::size_t param)
{
    auto it = weight_leaves_.find(param);
    if (it == weight_leaves_.end()) {
        it = weight_leaves_.emplace(param, tape_->leaf(store_.value(param))).first;
    }
    return it->second;
}

ad::Var DiffQuantizer::bits_node(std::size_t param)
{
    if (!logits_trainable()) {
        return tape_->constant(bits(param));
    }
    auto it = logit_leaves_.find(param);
    if (it == logit_leaves_.end()) {
        it = logit_leaves_.emplace(param, tape_->leaf(logits(param))).first;
    }
    return bits_from_logits(*tape_, it->second, cfg_);
}

ad::Var DiffQuantizer::read(std::size_t param)
{
    check_pass();
    if (param >= store_.size()) {
        throw std::out_of_range("unregistered parameter id " + std::to_string(param));
    }
    auto w = weight_leaf(param);
    if (!is_quantized(param)) {
        return w;
    }
    if (method_ == Method::qat) {
        return quant::ste_qat_forward(*tape_, w, qat_bits_);
    }
    if (noise_override_ && !registry_.contains(param)) {
        registry_.put(param, Tensor(store_.value(param).shape(), *noise_override_));
    }
    auto scale = quant::range_of(store_.value(param).data());
    if (frozen_) {
        scale = frozen_ranges_.try_emplace(param, scale).first->second;
    }
    return pqn_forward(*tape_, w, bits_node(param), param, cfg_.group_size, scale, cfg_.noise, rng_, registry_);
}

ad::Var DiffQuantizer::size_penalty()
{
    check_pass();
    double constant_bits = 0.0;
    std::optional<ad::Var> total;
    for (std::size_t id = 0; id < store_.size(); ++id) {
        const std::size_t d = store_.value(id).size();
        if (!is_quantized(id)) {
            constant_bits += 32.0 * static_cast<double>(d);
            continue;
        }
        auto lens = group_lengths(d, cfg_.group_size);
        const std::size_t n = lens.size();
        auto weighted = ad::mul(*tape_, bits_node(id), tape_->constant(Tensor({n}, std::move(lens))));
        auto term = ad::sum(*tape_, weighted);
        total = total ? ad::add(*tape_, *total, term) : term;
    }
    auto constant = tape_->constant(Tensor::scalar(constant_bits));
    auto bits = total ? ad::add(*tape_, *total, constant) : constant;
    return ad::scale(*tape_, bits, 1.0 / kBitsPerMegabyte);
}

double DiffQuantizer::model_size_mb() const
{
    double total = 0.0;
    for (std::size_t id = 0; id < store_.size(); ++id) {
        const std::size_t d = store_.value(id).size();
        if (!is_quantized(id)) {
            total += 32.0 * static_cast<double>(d);
            continue;
        }
        const Tensor b = bits(id);
        const auto lens = group_lengths(d, cfg_.group_size);
        for (std::size_t s = 0; s < lens.size(); ++s) {
            total += lens[s] * b[s];
        }
    }
    return total / kBitsPerMegabyte;
}

void DiffQuantizer::collect_grads()
{
    check_pass();
    store_.zero_grad();
    for (auto& g : logit_grads_) {
        g.fill(0.0);
    }
    for (const auto& [param, leaf] : weight_leaves_) {
        store_.grad(param) = tape_->grad(leaf);
    }
    for (const auto& [param, leaf] : logit_leaves_) {
        logit_grads_[slots_[param].logit_index] = tape_->grad(leaf);
    }
}

HardenedModel DiffQuantizer::harden() const
{
    HardenedModel model;
    for (std::size_t id = 0; id < store_.size(); ++id) {
        HardenedTensor t;
        t.name = store_.name(id);
        const Tensor& w = store_.value(id);
        if (!is_quantized(id)) {
            t.kind = TensorKind::raw;
            t.raw = Tensor(w.shape());
            for (std::size_t i = 0; i < w.size(); ++i) {
                t.raw[i] = to_f32(w[i]);
            }
            model.tensors.push_back(std::move(t));
            continue;
        }
        t.kind = TensorKind::quantized;
        const auto scale = f32_outer_range(quant::range_of(w.data()));
        Tensor normalized(w.shape());
        if (scale.range() > 0.0) {
            for (std::size_t i = 0; i < w.size(); ++i) {
                normalized[i] = std::clamp((w[i] - scale.min) / scale.range(), 0.0, 1.0);
            }
        }
        const Tensor real_bits = bits(id);
        std::vector<int> rounded(real_bits.size());
        for (std::size_t s = 0; s < rounded.size(); ++s) {
            rounded[s] = static_cast<int>(quant::round_half_away(real_bits[s]));
        }
        t.q = quant::uniform_quantize(normalized, rounded, cfg_.group_size);
        t.q.scale = scale;
        // QAT shares one bitwidth across groups, so its codes are all zero.
        t.b_min = method_ == Method::qat ? qat_bits_ : cfg_.b_min;
        model.tensors.push_back(std::move(t));
    }
    return model;
}

StepResult diffq_train_step(DiffQuantizer& quantizer, const LossFn& loss, optim::Optimizer& weight_opt,
                            optim::Optimizer& logit_opt, long step_index)
{
    ad::Tape tape;
    quantizer.begin_pass(tape);
    auto task = loss(tape, quantizer);
    auto size = quantizer.size_penalty();
    const double lambda = quantizer.config().lambda;
    auto total = ad::add(tape, task, ad::scale(tape, size, lambda));

    StepResult result;
    result.task_loss = tape.value(task).item();
    result.model_size = tape.value(size).item();
    result.penalty = lambda * result.model_size;
    if (!std::isfinite(tape.value(total).item())) {
        throw TrainingDiverged(step_index, "non-finite loss " + std::to_string(tape.value(total).item()));
    }
    tape.backward(total);
    quantizer.collect_grads();

    weight_opt.step(quantizer.store().values(), quantizer.store().grads());
    if (quantizer.logits_trainable()) {
        logit_opt.step(quantizer.all_logits(), quantizer.all_logit_grads());
    }
    return result;
}

}  // namespace diffq
