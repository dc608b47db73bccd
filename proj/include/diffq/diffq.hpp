#pragma once

#include <cstdint>
#include <functional>
#include <map>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "diffq/autodiff.hpp"
#include "diffq/hardened.hpp"
#include "diffq/optim.hpp"
#include "diffq/parameters.hpp"
#include "diffq/quant.hpp"
#include "diffq/rng.hpp"

namespace diffq {

enum class NoiseKind { uniform, gaussian };

/// How quantized parameters are read during training.
enum class Method {
    fp32, ///< plain weights, nothing quantized
    qat,  ///< straight-through rounding to a fixed bitwidth
    pqn,  ///< additive pseudo quantization noise with learnable (or fixed) bitwidths
};

struct DiffqConfig {
    int b_min = 2;
    int b_max = 15;
    double b_init = 8.0;
    std::size_t group_size = 8;
    double lambda = 0.0;
    NoiseKind noise = NoiseKind::gaussian;
    double skip_threshold_mb = 0.01;
    double logit_lr = 1e-3;
    /// Parameter names never quantized, regardless of size.
    std::vector<std::string> exclude;
    /// When set, every group uses this bitwidth and the logits are frozen.
    std::optional<int> fixed_bits;

    /// Throws std::invalid_argument on 1 <= b_min < b_init < b_max <= 32, lambda >= 0, g >= 1 violations.
    void validate() const;
};

const char* to_string(NoiseKind kind);
const char* to_string(Method method);

/// b = b_min + sigmoid(l) * (b_max - b_min)
ad::Var bits_from_logits(ad::Tape& tape, ad::Var logits, const DiffqConfig& cfg);
Tensor bits_from_logits(const Tensor& logits, const DiffqConfig& cfg);

/// Constant logits that map to cfg.b_init.
Tensor init_logits(const DiffqConfig& cfg, std::size_t num_groups);

/// Noise samples keyed by parameter id, valid for a single forward pass.
class NoiseRegistry {
  public:
    /// Returns the sample already drawn for `param` in this pass, or draws and stores a new one.
    const Tensor& get_or_sample(std::size_t param, const Shape& shape, NoiseKind kind, Rng& rng);
    void put(std::size_t param, Tensor noise);
    bool contains(std::size_t param) const { return samples_.count(param) != 0; }
    void clear() { samples_.clear(); }
    std::size_t size() const noexcept { return samples_.size(); }

  private:
    std::map<std::size_t, Tensor> samples_;
};

/*!
 * Pseudo quantization noise: w + range * (Delta(b_s) / 2) * eps.
 *
 * `bits` holds one bitwidth per group of `group_size` consecutive weights
 * (flattened row-major). `range` is detached from the graph. The gradient
 * reaches `w` through the identity and `bits` through Delta.
 */
ad::Var pqn_forward(ad::Tape& tape, ad::Var w, ad::Var bits, std::size_t param, std::size_t group_size,
                    const quant::ScaleParams& scale, NoiseKind kind, Rng& rng, NoiseRegistry& registry);

/// Thrown when a training step produces a non-finite loss.
class TrainingDiverged : public std::runtime_error {
  public:
    TrainingDiverged(long step, const std::string& what);
    long step() const noexcept { return step_; }

  private:
    long step_;
};

struct StepResult {
    double task_loss = 0.0;
    double penalty = 0.0;   // lambda * M(b)
    double model_size = 0.0; // M(b) in MB
};

/*!
 * Attaches quantization state to a ParameterStore.
 *
 * Parameters whose f32 size is under the skip threshold, or whose name is
 * excluded, stay unquantized. Every other parameter gets exactly one logit
 * tensor, whatever the number of places it is read from.
 *
 * Usage per step: begin_pass(tape), build the loss with read(), backward,
 * then collect_grads().
 */
class DiffQuantizer {
  public:
    DiffQuantizer(ParameterStore& store, DiffqConfig cfg, Method method = Method::pqn, int qat_bits = 8,
                  std::uint64_t seed = 0);

    const DiffqConfig& config() const noexcept { return cfg_; }
    Method method() const noexcept { return method_; }
    int qat_bits() const noexcept { return qat_bits_; }
    ParameterStore& store() noexcept { return store_; }
    const ParameterStore& store() const noexcept { return store_; }

    bool is_quantized(std::size_t param) const;
    std::size_t num_groups(std::size_t param) const;
    /// Logits of a quantized parameter.
    Tensor& logits(std::size_t param);
    const Tensor& logits(std::size_t param) const;
    std::span<Tensor> all_logits() noexcept { return logit_values_; }
    std::span<const Tensor> all_logit_grads() const noexcept { return logit_grads_; }
    /// Current real-valued bitwidths of a quantized parameter.
    Tensor bits(std::size_t param) const;
    bool logits_trainable() const noexcept;

    void begin_pass(ad::Tape& tape);
    /// Node for a parameter as seen by the model in this pass.
    ad::Var read(std::size_t param);
    /// Continuous model size M(b) in MB; skipped tensors add 32 bits per weight.
    ad::Var size_penalty();
    double model_size_mb() const;
    /// Copies gradients from the tape into the store and logit buffers; zero for untouched parameters.
    void collect_grads();

    /// Replaces sampled noise with a constant (tests and ablations). nullopt restores sampling.
    void set_noise_override(std::optional<double> value) { noise_override_ = value; }
    const NoiseRegistry& registry() const noexcept { return registry_; }
    /// While frozen, noise samples and ranges from the first pass are reused by later passes.
    void set_frozen(bool frozen);

    /// Rounds bitwidths and quantizes every quantized parameter.
    HardenedModel harden() const;

  private:
    struct Slot {
        bool quantized = false;
        std::size_t logit_index = 0;
    };

    ad::Var weight_leaf(std::size_t param);
    ad::Var bits_node(std::size_t param);
    void check_pass() const;

    ParameterStore& store_;
    DiffqConfig cfg_;
    Method method_;
    int qat_bits_;
    Rng rng_;
    std::vector<Slot> slots_;
    std::vector<Tensor> logit_values_;
    std::vector<Tensor> logit_grads_;

    ad::Tape* tape_ = nullptr;
    NoiseRegistry registry_;
    std::map<std::size_t, ad::Var> weight_leaves_;
    std::map<std::size_t, ad::Var> logit_leaves_;
    std::optional<double> noise_override_;
    bool frozen_ = false;
    std::map<std::size_t, quant::ScaleParams> frozen_ranges_;
};

/// Builds the task loss for one batch, reading parameters through the quantizer.
using LossFn = std::function<ad::Var(ad::Tape&, DiffQuantizer&)>;

/*!
 * One optimization step on L + lambda * M(b): fresh noise, backward, then
 * the weight optimizer on the parameters and `logit_opt` on the logits
 * (skipped when the logits are frozen).
 */
StepResult diffq_train_step(DiffQuantizer& quantizer, const LossFn& loss, optim::Optimizer& weight_opt,
                            optim::Optimizer& logit_opt, long step_index = 0);

}  // namespace diffq
