#include "diffq/autodiff.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <utility>

namespace diffq::ad {

namespace {

[[noreturn]] void shape_error(std::string_view op, const Shape& a, const Shape& b)
{
    throw ShapeError(std::string(op) + ": incompatible shapes " + shape_str(a) + " and " + shape_str(b));
}

[[noreturn]] void shape_error(std::string_view op, const Shape& a, std::string_view why)
{
    throw ShapeError(std::string(op) + ": shape " + shape_str(a) + " " + std::string(why));
}

void require_same(std::string_view op, const Tensor& a, const Tensor& b)
{
    if (a.shape() != b.shape()) {
        shape_error(op, a.shape(), b.shape());
    }
}

template <typename F>
Var unary(Tape& t, std::string_view name, Var a, F&& forward, AdjointFn adjoint)
{
    const Tensor& x = t.value(a);
    Tensor out(x.shape());
    for (std::size_t i = 0; i < x.size(); ++i) {
        out[i] = forward(x[i]);
    }
    return t.record(name, {a}, std::move(out), std::move(adjoint));
}

}  // namespace

Var Tape::leaf(Tensor value, bool requires_grad)
{
    Tensor grad(value.shape());
    nodes_.push_back(Node{std::move(value), std::move(grad), requires_grad});
    return Var{nodes_.size() - 1};
}

Var Tape::record(std::string_view op, std::vector<Var> inputs, Tensor value, AdjointFn adjoint)
{
    bool needs_grad = false;
    for (auto in : inputs) {
        needs_grad = needs_grad || node(in).requires_grad;
    }
    Var out = leaf(std::move(value), needs_grad);
    ops_.push_back(Op{std::string(op), std::move(inputs), out, std::move(adjoint)});
    return out;
}

const Tape::Node& Tape::node(Var v) const
{
    if (v.id >= nodes_.size()) {
        throw std::out_of_range("unknown tape node " + std::to_string(v.id));
    }
    return nodes_[v.id];
}

Tape::Node& Tape::node(Var v)
{
    return const_cast<Node&>(std::as_const(*this).node(v));
}

void Tape::backward(Var loss)
{
    Node& root = node(loss);
    if (root.value.size() != 1) {
        throw ShapeError("backward: loss must be scalar, got shape " + shape_str(root.value.shape()));
    }
    root.grad[0] += 1.0;

    std::vector<const Tensor*> inputs;
    std::vector<Tensor*> in_grads;
    for (auto it = ops_.rbegin(); it != ops_.rend(); ++it) {
        if (it->output.id > loss.id || !nodes_[it->output.id].requires_grad) {
            continue;
        }
        inputs.clear();
        in_grads.clear();
        for (auto in : it->inputs) {
            Node& n = nodes_[in.id];
            inputs.push_back(&n.value);
            in_grads.push_back(n.requires_grad ? &n.grad : nullptr);
        }
        const Node& out = nodes_[it->output.id];
        it->adjoint(AdjointArgs{inputs, out.value, out.grad, in_grads});
        ++adjoint_calls_;
    }
}

void Tape::zero_grad()
{
    for (auto& n : nodes_) {
        n.grad.fill(0.0);
    }
}

Var matmul(Tape& t, Var a, Var b)
{
    const Tensor& x = t.value(a);
    const Tensor& y = t.value(b);
    if (x.rank() != 2 || y.rank() != 2 || x.dim(1) != y.dim(0)) {
        shape_error("matmul", x.shape(), y.shape());
    }
    const std::size_t n = x.dim(0), k = x.dim(1), m = y.dim(1);
    Tensor out({n, m});
    for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t p = 0; p < k; ++p) {
            const double xv = x.at(i, p);
            for (std::size_t j = 0; j < m; ++j) {
                out.at(i, j) += xv * y.at(p, j);
            }
        }
    }
    return t.record("matmul", {a, b}, std::move(out), [n, k, m](const AdjointArgs& args) {
        const Tensor& x = *args.inputs[0];
        const Tensor& y = *args.inputs[1];
        const Tensor& g = args.out_grad;
        if (Tensor* gx = args.in_grads[0]) {
            for (std::size_t i = 0; i < n; ++i) {
                for (std::size_t p = 0; p < k; ++p) {
                    double acc = 0.0;
                    for (std::size_t j = 0; j < m; ++j) {
                        acc += g.at(i, j) * y.at(p, j);
                    }
                    gx->at(i, p) += acc;
                }
            }
        }
        if (Tensor* gy = args.in_grads[1]) {
            for (std::size_t i = 0; i < n; ++i) {
                for (std::size_t p = 0; p < k; ++p) {
                    const double xv = x.at(i, p);
                    for (std::size_t j = 0; j < m; ++j) {
                        gy->at(p, j) += xv * g.at(i, j);
                    }
                }
            }
        }
    });
}

Var add(Tape& t, Var a, Var b)
{
    const Tensor& x = t.value(a);
    const Tensor& y = t.value(b);
    require_same("add", x, y);
    Tensor out(x.shape());
    for (std::size_t i = 0; i < x.size(); ++i) {
        out[i] = x[i] + y[i];
    }
    return t.record("add", {a, b}, std::move(out), [](const AdjointArgs& args) {
        for (std::size_t s = 0; s < 2; ++s) {
            if (Tensor* g = args.in_grads[s]) {
                for (std::size_t i = 0; i < g->size(); ++i) {
                    (*g)[i] += args.out_grad[i];
                }
            }
        }
    });
}

Var sub(Tape& t, Var a, Var b)
{
    const Tensor& x = t.value(a);
    const Tensor& y = t.value(b);
    require_same("sub", x, y);
    Tensor out(x.shape());
    for (std::size_t i = 0; i < x.size(); ++i) {
        out[i] = x[i] - y[i];
    }
    return t.record("sub", {a, b}, std::move(out), [](const AdjointArgs& args) {
        if (Tensor* g = args.in_grads[0]) {
            for (std::size_t i = 0; i < g->size(); ++i) {
                (*g)[i] += args.out_grad[i];
            }
        }
        if (Tensor* g = args.in_grads[1]) {
            for (std::size_t i = 0; i < g->size(); ++i) {
                (*g)[i] -= args.out_grad[i];
            }
        }
    });
}

Var mul(Tape& t, Var a, Var b)
{
    const Tensor& x = t.value(a);
    const Tensor& y = t.value(b);
    require_same("mul", x, y);
    Tensor out(x.shape());
    for (std::size_t i = 0; i < x.size(); ++i) {
        out[i] = x[i] * y[i];
    }
    return t.record("mul", {a, b}, std::move(out), [](const AdjointArgs& args) {
        const Tensor& x = *args.inputs[0];
        const Tensor& y = *args.inputs[1];
        if (Tensor* g = args.in_grads[0]) {
            for (std::size_t i = 0; i < g->size(); ++i) {
                (*g)[i] += args.out_grad[i] * y[i];
            }
        }
        if (Tensor* g = args.in_grads[1]) {
            for (std::size_t i = 0; i < g->size(); ++i) {
                (*g)[i] += args.out_grad[i] * x[i];
            }
        }
    });
}

Var scale(Tape& t, Var a, double c)
{
    return unary(t, "scale", a, [c](double x) { return c * x; }, [c](const AdjointArgs& args) {
        if (Tensor* g = args.in_grads[0]) {
            for (std::size_t i = 0; i < g->size(); ++i) {
                (*g)[i] += c * args.out_grad[i];
            }
        }
    });
}

Var add_bias(Tape& t, Var x, Var bias)
{
    const Tensor& v = t.value(x);
    const Tensor& b = t.value(bias);
    if (v.rank() != 2 || b.rank() != 1 || b.dim(0) != v.dim(1)) {
        shape_error("add_bias", v.shape(), b.shape());
    }
    const std::size_t n = v.dim(0), m = v.dim(1);
    Tensor out(v.shape());
    for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t j = 0; j < m; ++j) {
            out.at(i, j) = v.at(i, j) + b[j];
        }
    }
    return t.record("add_bias", {x, bias}, std::move(out), [n, m](const AdjointArgs& args) {
        if (Tensor* g = args.in_grads[0]) {
            for (std::size_t i = 0; i < g->size(); ++i) {
                (*g)[i] += args.out_grad[i];
            }
        }
        if (Tensor* g = args.in_grads[1]) {
            for (std::size_t i = 0; i < n; ++i) {
                for (std::size_t j = 0; j < m; ++j) {
                    (*g)[j] += args.out_grad.at(i, j);
                }
            }
        }
    });
}

Var relu(Tape& t, Var a)
{
    return unary(t, "relu", a, [](double x) { return x > 0.0 ? x : 0.0; }, [](const AdjointArgs& args) {
        const Tensor& x = *args.inputs[0];
        if (Tensor* g = args.in_grads[0]) {
            for (std::size_t i = 0; i < g->size(); ++i) {
                // derivative at exactly 0 is 0
                (*g)[i] += x[i] > 0.0 ? args.out_grad[i] : 0.0;
            }
        }
    });
}

Var sigmoid(Tape& t, Var a)
{
    auto fwd = [](double x) {
        if (x >= 0.0) {
            return 1.0 / (1.0 + std::exp(-x));
        }
        const double e = std::exp(x);
        return e / (1.0 + e);
    };
    return unary(t, "sigmoid", a, fwd, [](const AdjointArgs& args) {
        if (Tensor* g = args.in_grads[0]) {
            for (std::size_t i = 0; i < g->size(); ++i) {
                const double s = args.output[i];
                (*g)[i] += args.out_grad[i] * s * (1.0 - s);
            }
        }
    });
}

Var sum(Tape& t, Var a)
{
    double total = 0.0;
    for (double v : t.value(a).data()) {
        total += v;
    }
    return t.record("sum", {a}, Tensor::scalar(total), [](const AdjointArgs& args) {
        if (Tensor* g = args.in_grads[0]) {
            for (auto& v : g->data()) {
                v += args.out_grad[0];
            }
        }
    });
}

Var mean(Tape& t, Var a)
{
    const Tensor& x = t.value(a);
    double total = 0.0;
    for (double v : x.data()) {
        total += v;
    }
    const double n = static_cast<double>(x.size());
    return t.record("mean", {a}, Tensor::scalar(total / n), [n](const AdjointArgs& args) {
        if (Tensor* g = args.in_grads[0]) {
            for (auto& v : g->data()) {
                v += args.out_grad[0] / n;
            }
        }
    });
}

Var mse_loss(Tape& t, Var a, Var b)
{
    const Tensor& x = t.value(a);
    const Tensor& y = t.value(b);
    require_same("mse_loss", x, y);
    double total = 0.0;
    for (std::size_t i = 0; i < x.size(); ++i) {
        const double d = x[i] - y[i];
        total += d * d;
    }
    const double n = static_cast<double>(x.size());
    return t.record("mse_loss", {a, b}, Tensor::scalar(total / n), [n](const AdjointArgs& args) {
        const Tensor& x = *args.inputs[0];
        const Tensor& y = *args.inputs[1];
        const double coef = 2.0 * args.out_grad[0] / n;
        for (std::size_t i = 0; i < x.size(); ++i) {
            const double d = coef * (x[i] - y[i]);
            if (args.in_grads[0]) {
                (*args.in_grads[0])[i] += d;
            }
            if (args.in_grads[1]) {
                (*args.in_grads[1])[i] -= d;
            }
        }
    });
}

Var softmax_cross_entropy(Tape& t, Var logits, std::span<const int> labels)
{
    const Tensor& z = t.value(logits);
    if (z.rank() != 2 || z.dim(0) != labels.size()) {
        shape_error("softmax_cross_entropy", z.shape(),
                    "does not match " + std::to_string(labels.size()) + " labels");
    }
    const std::size_t n = z.dim(0), k = z.dim(1);
    Tensor probs(z.shape());
    double total = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        const int label = labels[i];
        if (label < 0 || static_cast<std::size_t>(label) >= k) {
            throw std::invalid_argument("softmax_cross_entropy: label " + std::to_string(label) +
                                        " outside [0," + std::to_string(k) + ")");
        }
        double zmax = z.at(i, 0);
        for (std::size_t j = 1; j < k; ++j) {
            zmax = std::max(zmax, z.at(i, j));
        }
        double denom = 0.0;
        for (std::size_t j = 0; j < k; ++j) {
            denom += std::exp(z.at(i, j) - zmax);
        }
        const double log_denom = std::log(denom);
        for (std::size_t j = 0; j < k; ++j) {
            probs.at(i, j) = std::exp(z.at(i, j) - zmax - log_denom);
        }
        total -= z.at(i, static_cast<std::size_t>(label)) - zmax - log_denom;
    }
    std::vector<int> lab(labels.begin(), labels.end());
    return t.record("softmax_cross_entropy", {logits}, Tensor::scalar(total / static_cast<double>(n)),
                    [probs = std::move(probs), lab = std::move(lab), n, k](const AdjointArgs& args) {
                        Tensor* g = args.in_grads[0];
                        if (!g) {
                            return;
                        }
                        const double coef = args.out_grad[0] / static_cast<double>(n);
                        for (std::size_t i = 0; i < n; ++i) {
                            for (std::size_t j = 0; j < k; ++j) {
                                const double onehot = static_cast<std::size_t>(lab[i]) == j ? 1.0 : 0.0;
                                g->at(i, j) += coef * (probs.at(i, j) - onehot);
                            }
                        }
                    });
}

Var reciprocal(Tape& t, Var a)
{
    return unary(t, "reciprocal", a, [](double x) { return 1.0 / x; }, [](const AdjointArgs& args) {
        if (Tensor* g = args.in_grads[0]) {
            for (std::size_t i = 0; i < g->size(); ++i) {
                const double r = args.output[i];
                (*g)[i] -= args.out_grad[i] * r * r;
            }
        }
    });
}

Var exp2(Tape& t, Var a)
{
    return unary(t, "exp2", a, [](double x) { return std::exp2(x); }, [](const AdjointArgs& args) {
        if (Tensor* g = args.in_grads[0]) {
            for (std::size_t i = 0; i < g->size(); ++i) {
                (*g)[i] += args.out_grad[i] * std::numbers::ln2 * args.output[i];
            }
        }
    });
}

Var expand_groups(Tape& t, Var x, std::size_t group_size, const Shape& out_shape)
{
    const Tensor& v = t.value(x);
    const std::size_t d = shape_size(out_shape);
    if (group_size == 0 || v.rank() != 1 || v.dim(0) != (d + group_size - 1) / group_size) {
        shape_error("expand_groups", v.shape(),
                    "cannot cover " + shape_str(out_shape) + " with groups of " + std::to_string(group_size));
    }
    Tensor out(out_shape);
    for (std::size_t i = 0; i < d; ++i) {
        out[i] = v[i / group_size];
    }
    return t.record("expand_groups", {x}, std::move(out), [group_size](const AdjointArgs& args) {
        if (Tensor* g = args.in_grads[0]) {
            for (std::size_t i = 0; i < args.out_grad.size(); ++i) {
                (*g)[i / group_size] += args.out_grad[i];
            }
        }
    });
}

}  // namespace diffq::ad
