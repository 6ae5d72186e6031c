#pragma once

#include "cgqr/parameters.hpp"

#include <nlohmann/json.hpp>

#include <random>
#include <string>
#include <vector>

namespace cgqr::heads {

constexpr double kDiceEps = 1e-6;
constexpr double kBceClamp = 1e-7;

/// Per-sample outputs of the network (value level, no graph).
struct PredictionBundle {
    Tensor coarse_logits;    // (K+1, h, w) at the deepest branch; empty without a coarse head
    Tensor coarse_probs;
    Tensor refined_logits;   // (K+1, H0, W0)
    Tensor refined_probs;
    Tensor boundary_logits;  // (H0, W0); empty without a boundary head
    Tensor boundary_probs;

    bool has_coarse() const { return !coarse_probs.empty(); }
    bool has_boundary() const { return !boundary_probs.empty(); }
};

/// 1x1 conv with bias from the deepest branch to K+1 classes.
struct CoarseHead {
    nn::Var weight;
    nn::Var bias;

    static CoarseHead create(nn::ParameterStore& store, const std::string& name, int in_channels, int n_out,
                             std::mt19937_64& rng);
    static std::size_t count(int in_channels, int n_out) { return static_cast<std::size_t>(n_out) * (in_channels + 1); }
    /// Logits (N, K+1, h, w).
    nn::Var forward(const nn::Var& f3) const;
};

/// 3x3 conv (bias) -> ReLU -> 1x1 conv (bias), then bilinear resize.
struct ConvHead {
    nn::Var w1, b1, w2, b2;

    static ConvHead create(nn::ParameterStore& store, const std::string& name, int in_channels, int hidden, int n_out,
                           std::mt19937_64& rng);
    static std::size_t count(int in_channels, int hidden, int n_out)
    {
        return static_cast<std::size_t>(hidden) * (in_channels * 9 + 1) + static_cast<std::size_t>(n_out) * (hidden + 1);
    }
    nn::Var forward(const nn::Var& x, int out_h, int out_w) const;
    /// Zeroes the final 1x1 conv (weights and bias).
    void zero_output();
};

// ---------------------------------------------------------------------------
// Losses. Value-level functions take one sample; the *_op variants take a
// batch and average per-sample losses.
// ---------------------------------------------------------------------------

/// 1 - mean_k 2 sum p g / (sum p + sum g + eps) over foreground classes 1..K.
/// probs is (K+1, H, W).
double dice_loss(const Tensor& probs, const LabelGrid& target, double eps = kDiceEps);
/// d loss / d probs, same shape as probs (background channel gets zeros).
Tensor dice_loss_grad(const Tensor& probs, const LabelGrid& target, double eps = kDiceEps);

/// Mean binary cross-entropy; probs (H, W) clamped to [1e-7, 1 - 1e-7].
double boundary_bce(const Tensor& probs, const BinaryGrid& target);
Tensor boundary_bce_grad(const Tensor& probs, const BinaryGrid& target);

/// probs (N, K+1, H, W); one target per batch element.
nn::Var dice_loss_op(const nn::Var& probs, const std::vector<LabelGrid>& targets, double eps = kDiceEps);
/// probs (N, 1, H, W); mean over every pixel of the batch.
nn::Var boundary_bce_op(const nn::Var& probs, const std::vector<BinaryGrid>& targets);

/// Nearest-neighbour label downsampling (same index rule as resize_pair).
LabelGrid downsample_labels(const LabelGrid& mask, int height, int width);

struct LossWeights {
    double lambda = 0.5;
    double mu_aux = 0.4;
    bool use_boundary = true;  // false under no_boundary_head
    bool use_coarse = true;    // false under no_coarse_head

    void validate() const;
};

struct LossReport {
    long step = 0;
    double l_seg = 0.0;
    double l_boundary = 0.0;
    double l_coarse = 0.0;
    double total = 0.0;
    double lambda = 0.0;
    double mu_aux = 0.0;

    nlohmann::json to_json() const;
};

/// total = l_seg + lambda l_boundary + mu_aux l_coarse with disabled terms
/// contributing zero weight.
LossReport combine(double l_seg, double l_boundary, double l_coarse, const LossWeights& w);

/// Value-level total loss of one prediction.
LossReport total_loss(const PredictionBundle& bundle, const LabelGrid& mask, const BinaryGrid& boundary,
                      const LossWeights& w);

}  // namespace cgqr::heads
