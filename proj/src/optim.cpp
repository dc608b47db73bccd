#include "diffq/optim.hpp"

#include <cmath>
#include <stdexcept>
#include <string>

namespace diffq::optim {

void Optimizer::check_shapes(std::span<Tensor> params, std::span<const Tensor> grads, const char* who)
{
    if (params.size() != grads.size()) {
        throw ShapeError(std::string(who) + ": " + std::to_string(params.size()) + " parameters but " +
                         std::to_string(grads.size()) + " gradients");
    }
    for (std::size_t i = 0; i < params.size(); ++i) {
        if (params[i].shape() != grads[i].shape()) {
            throw ShapeError(std::string(who) + ": parameter " + std::to_string(i) + " has shape " +
                             shape_str(params[i].shape()) + " but gradient " + shape_str(grads[i].shape()));
        }
    }
}

void Sgd::step(std::span<Tensor> params, std::span<const Tensor> grads)
{
    check_shapes(params, grads, "sgd_step");
    if (velocity_.empty()) {
        for (const auto& p : params) {
            velocity_.emplace_back(p.shape());
        }
    }
    if (velocity_.size() != params.size()) {
        throw ShapeError("sgd_step: parameter list changed between steps");
    }
    for (std::size_t k = 0; k < params.size(); ++k) {
        Tensor& w = params[k];
        Tensor& v = velocity_[k];
        if (v.shape() != w.shape()) {
            throw ShapeError("sgd_step: velocity shape " + shape_str(v.shape()) + " vs parameter " +
                             shape_str(w.shape()));
        }
        for (std::size_t i = 0; i < w.size(); ++i) {
            v[i] = momentum_ * v[i] + (grads[k][i] + weight_decay_ * w[i]);
            w[i] -= lr_ * v[i];
        }
    }
}

void Adam::step(std::span<Tensor> params, std::span<const Tensor> grads)
{
    check_shapes(params, grads, "adam_step");
    if (m_.empty()) {
        for (const auto& p : params) {
            m_.emplace_back(p.shape());
            v_.emplace_back(p.shape());
        }
    }
    if (m_.size() != params.size()) {
        throw ShapeError("adam_step: parameter list changed between steps");
    }
    ++t_;
    const double c1 = 1.0 - std::pow(beta1_, static_cast<double>(t_));
    const double c2 = 1.0 - std::pow(beta2_, static_cast<double>(t_));
    for (std::size_t k = 0; k < params.size(); ++k) {
        Tensor& w = params[k];
        for (std::size_t i = 0; i < w.size(); ++i) {
            const double g = grads[k][i];
            m_[k][i] = beta1_ * m_[k][i] + (1.0 - beta1_) * g;
            v_[k][i] = beta2_ * v_[k][i] + (1.0 - beta2_) * g * g;
            const double m_hat = m_[k][i] / c1;
            const double v_hat = v_[k][i] / c2;
            w[i] -= lr_ * m_hat / (std::sqrt(v_hat) + eps_);
        }
    }
}

double step_decay(double lr0, double factor, int every, int epoch)
{
    if (!(factor > 0.0 && factor <= 1.0) || every < 1) {
        throw std::invalid_argument("step_decay: need factor in (0,1] and every >= 1");
    }
    return lr0 * std::pow(factor, static_cast<double>(epoch / every));
}

}  // namespace diffq::optim
