#pragma once

#include <span>
#include <vector>

#include "diffq/tensor.hpp"

namespace diffq::optim {

/// First-order optimizer over a fixed list of parameter tensors.
class Optimizer {
  public:
    virtual ~Optimizer() = default;

    /// params[i] is updated in place from grads[i]; shapes must match pairwise.
    virtual void step(std::span<Tensor> params, std::span<const Tensor> grads) = 0;

    double lr() const noexcept { return lr_; }
    void set_lr(double lr) noexcept { lr_ = lr; }

  protected:
    explicit Optimizer(double lr) : lr_(lr) {}
    void check_shapes(std::span<Tensor> params, std::span<const Tensor> grads, const char* who);

    double lr_;
};

/// SGD with momentum and coupled weight decay: v <- mu v + (g + wd w); w <- w - lr v.
class Sgd final : public Optimizer {
  public:
    explicit Sgd(double lr, double momentum = 0.0, double weight_decay = 0.0)
        : Optimizer(lr), momentum_(momentum), weight_decay_(weight_decay)
    {
    }

    void step(std::span<Tensor> params, std::span<const Tensor> grads) override;

    const std::vector<Tensor>& velocity() const noexcept { return velocity_; }

  private:
    double momentum_;
    double weight_decay_;
    std::vector<Tensor> velocity_;
};

/// Bias-corrected Adam.
class Adam final : public Optimizer {
  public:
    explicit Adam(double lr = 1e-3, double beta1 = 0.9, double beta2 = 0.999, double eps = 1e-8)
        : Optimizer(lr), beta1_(beta1), beta2_(beta2), eps_(eps)
    {
    }

    void step(std::span<Tensor> params, std::span<const Tensor> grads) override;

    long step_count() const noexcept { return t_; }

  private:
    double beta1_;
    double beta2_;
    double eps_;
    long t_ = 0;
    std::vector<Tensor> m_;
    std::vector<Tensor> v_;
};

/// lr0 * factor^floor(epoch / every)
double step_decay(double lr0, double factor, int every, int epoch);

}  // namespace diffq::optim
