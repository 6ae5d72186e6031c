#pragma once

#include "cgqr/parameters.hpp"

#include <array>
#include <cstdint>
#include <string>

namespace cgqr::encoder {

constexpr int kBranches = 3;

struct EncoderConfig {
    int in_channels = 1;
    std::array<int, kBranches> branch_channels{32, 64, 128};
    std::array<int, kBranches> branch_strides{4, 8, 16};
    int n_stages = 3;

    /// Strides must be increasing powers of two; channels and stages positive.
    void validate() const;
    bool operator==(const EncoderConfig&) const = default;
};

/// Per-image feature maps, each (C_k, H0 / s_k, W0 / s_k).
struct FeatureSet {
    std::array<Tensor, kBranches> maps;
    const Tensor& f1() const { return maps[0]; }
    const Tensor& f2() const { return maps[1]; }
    const Tensor& f3() const { return maps[2]; }
};

/// Closed-form learned-parameter count (conv weights plus norm affines).
std::size_t parameter_count(const EncoderConfig& cfg);

/// Throws ShapeError naming the first stride that does not divide the input.
void check_input_size(const EncoderConfig& cfg, int height, int width);

/// Parallel multi-resolution encoder. Each stage updates every branch as
///   X_k <- f_k(X_k) + sum_{j != k} phi_{j->k}(X_j)
/// with f_k a residual block, phi a strided conv chain (to coarser branches)
/// or a 1x1 conv followed by nearest upsampling (to finer branches).
class Encoder {
public:
    using Branches = std::array<nn::Var, kBranches>;

    Encoder(const EncoderConfig& cfg, nn::ParameterStore& store, std::mt19937_64& rng,
            const std::string& prefix = "encoder");

    const EncoderConfig& config() const { return cfg_; }

    /// Input (N, 1, H, W); output three (N, C_k, H/s_k, W/s_k) maps.
    Branches forward(const nn::Var& images, bool training) const;
    /// Stem and transitions only (the stage-0 branch states).
    Branches initial_branches(const nn::Var& images, bool training) const;
    /// One fusion round.
    Branches stage_forward(int stage, const Branches& in, bool training) const;

    /// Inference-mode encode of one standardized (H, W) image.
    FeatureSet encode(const ImageGrid& image) const;

private:
    struct Residual {
        nn::ConvBn first;
        nn::ConvBn second;
    };
    struct Fuse {
        std::vector<nn::ConvBn> chain;  // downsampling chain, or a single 1x1 for upsampling
        int upsample = 1;
    };
    struct Stage {
        std::array<Residual, kBranches> blocks;
        std::array<std::array<Fuse, kBranches>, kBranches> fuse;  // fuse[from][to]
    };

    EncoderConfig cfg_;
    std::vector<nn::ConvBn> stem_;
    std::array<std::vector<nn::ConvBn>, kBranches> transitions_;
    std::vector<Stage> stages_;
};

}  // namespace cgqr::encoder
