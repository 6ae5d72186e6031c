#pragma once

// Minimal reverse-mode differentiation over Tensor values. Each op records its
// inputs and a backward closure; Var::backward() replays them in reverse
// topological order. Parameters are long-lived leaf Vars with requires_grad set.

#include "cgqr/tensor.hpp"

#include <functional>
#include <memory>
#include <vector>

namespace cgqr::nn {

struct Node {
    Tensor value;
    Tensor grad;
    bool requires_grad = false;
    std::vector<std::shared_ptr<Node>> inputs;
    std::function<void(Node&)> backward;

    /// Gradient buffer, zero-allocated on first use.
    Tensor& grad_buffer();
};

class Var {
public:
    Var() = default;
    explicit Var(Tensor value, bool requires_grad = false);

    bool defined() const { return node_ != nullptr; }
    const Tensor& value() const { return node_->value; }
    Tensor& value() { return node_->value; }
    const Tensor& grad() const { return node_->grad; }
    Tensor& grad_buffer() { return node_->grad_buffer(); }
    bool requires_grad() const { return node_ && node_->requires_grad; }
    const std::vector<int>& shape() const { return node_->value.shape(); }
    void zero_grad();

    /// Seeds d(self)/d(self) = 1 (self must hold one element) and propagates.
    void backward();

    const std::shared_ptr<Node>& node() const { return node_; }

private:
    std::shared_ptr<Node> node_;
};

/// Graph recording switch; thread-local so concurrent inference does not interact.
class GradMode {
public:
    static bool enabled();
    static void set_enabled(bool on);
};

class GradModeGuard {
public:
    explicit GradModeGuard(bool enabled) : previous_(GradMode::enabled()) { GradMode::set_enabled(enabled); }
    ~GradModeGuard() { GradMode::set_enabled(previous_); }
    GradModeGuard(const GradModeGuard&) = delete;
    GradModeGuard& operator=(const GradModeGuard&) = delete;

private:
    bool previous_;
};

class NoGradGuard : public GradModeGuard {
public:
    NoGradGuard() : GradModeGuard(false) {}
};

/// Builds a result Var. The backward closure is kept only when recording is on
/// and some input requires a gradient.
Var make_result(Tensor value, std::vector<Var> inputs, std::function<void(Node&)> backward);

/// Gradient buffer of the i-th input of `self`, or nullptr if that input does not need one.
Tensor* input_grad(Node& self, std::size_t i);

struct BatchNormStats {
    Tensor running_mean;
    Tensor running_var;
    explicit BatchNormStats(int channels = 0)
        : running_mean({channels}, 0.0), running_var({channels}, 1.0) {}
};

// Feature-map ops. All maps are (N, C, H, W).
Var conv2d(const Var& x, const Var& weight, const Var& bias, int stride, int padding);
Var batch_norm(const Var& x, const Var& gamma, const Var& beta, BatchNormStats& stats, bool training,
               double momentum = 0.1, double eps = 1e-5);
Var relu(const Var& x);
Var sigmoid(const Var& x);
Var add(const Var& a, const Var& b);
Var upsample_nearest(const Var& x, int factor);
/// Bilinear resize with half-pixel centers (align_corners = false).
Var upsample_bilinear(const Var& x, int out_h, int out_w);
/// Softmax over axis 1 of an (N, C, H, W) map, max-subtracted.
Var softmax_channels(const Var& x);
Var sum_all(const Var& x);
/// Scalar linear combination sum_i w_i * s_i of one-element Vars.
Var weighted_sum(const std::vector<Var>& scalars, const std::vector<double>& weights);

// Value-level kernels shared with non-differentiable callers.
Tensor resize_bilinear(const Tensor& x, int out_h, int out_w);
Tensor softmax_channels(const Tensor& x);

}  // namespace cgqr::nn
