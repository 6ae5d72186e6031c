#pragma once

#include "cgqr/contour.hpp"
#include "cgqr/data_pipeline.hpp"
#include "cgqr/encoder.hpp"
#include "cgqr/heads_losses.hpp"
#include "cgqr/query_refinement.hpp"

#include <nlohmann/json.hpp>

#include <functional>
#include <memory>
#include <optional>
#include <string>
#include <vector>

namespace cgqr::model {

struct Ablations {
    bool no_boundary_head = false;
    bool no_coarse_head = false;
    bool no_contour_queries = false;
    bool no_pyramid_fusion = false;
    bool no_teacher_forcing = false;

    static const std::vector<std::string>& names();
    /// Accepts the flag names above; throws ConfigError otherwise.
    void enable(const std::string& name);
    bool is_enabled(const std::string& name) const;
    std::vector<std::string> enabled() const;
    bool operator==(const Ablations&) const = default;
};

struct ModelConfig {
    encoder::EncoderConfig encoder;
    int n_classes = 3;     // foreground classes K
    int token_dim = 128;   // d
    int base_queries = 4;  // Q_b
    int head_hidden = 64;
    int contour_points = contour::kDefaultPoints;
    Ablations ablations;

    /// Small profile for 64x64 inputs.
    static ModelConfig desk();
    void validate() const;
    nlohmann::json to_json() const;
    static ModelConfig from_json(const nlohmann::json& j);
    bool operator==(const ModelConfig&) const = default;
};

/// Emitted once per sample whenever contour queries are built.
struct ContourSourceEvent {
    std::string sample_id;
    bool from_ground_truth = false;
    std::uint64_t source_hash = 0;  // hash_labels of the mask the contours came from
    std::vector<contour::ShapeDescriptor> descriptors;
};
using ContourHook = std::function<void(const ContourSourceEvent&)>;

struct Batch {
    Tensor images;  // (N, 1, H, W)
    std::vector<LabelGrid> masks;
    std::vector<BinaryGrid> boundaries;
    std::vector<std::string> ids;

    static Batch from_samples(const std::vector<data::ImageSample>& samples, const std::vector<std::size_t>& indices);
    int size() const { return static_cast<int>(ids.size()); }
};

/// Differentiable outputs of one batched forward pass.
struct GraphOutputs {
    nn::Var coarse_logits;  // undefined under no_coarse_head
    nn::Var coarse_probs;
    nn::Var fused;          // (N, d, H', W') before refinement
    nn::Var refined;        // after the gated residual
    nn::Var refined_logits; // (N, K+1, H0, W0)
    nn::Var refined_probs;
    nn::Var boundary_logits;  // (N, 1, H0, W0); undefined under no_boundary_head
    nn::Var boundary_probs;
    std::vector<query::AttentionTrace> traces;
    std::vector<std::vector<contour::Contour>> contours;  // empty under no_contour_queries
    Tensor descriptors;                                   // (N, K, 6)
    int query_count = 0;
};

class CgqrNet {
public:
    CgqrNet(const ModelConfig& cfg, std::uint64_t seed);
    CgqrNet(const CgqrNet&) = delete;
    CgqrNet& operator=(const CgqrNet&) = delete;

    const ModelConfig& config() const { return cfg_; }
    nn::ParameterStore& store() { return store_; }
    const nn::ParameterStore& store() const { return store_; }
    std::size_t parameter_count() const { return store_.parameter_count(); }

    /// Teacher forcing takes contours from batch.masks; otherwise from the
    /// argmax of the coarse probabilities resized to the input size.
    GraphOutputs forward(const Batch& batch, bool teacher_forcing, bool training,
                         const ContourHook* hook = nullptr) const;

    /// Segmentation head applied to an arbitrary (N, d, H', W') grid.
    nn::Var segment(const nn::Var& grid, int out_h, int out_w) const;

    query::AttentionParams attention_params() const;
    std::array<query::Matrix, encoder::kBranches> alignment() const;
    query::EmbeddingParams embedding_params() const;

    const encoder::Encoder& encoder() const { return *encoder_; }
    const std::optional<heads::CoarseHead>& coarse_head() const { return coarse_; }
    heads::ConvHead& seg_head() { return seg_; }
    std::optional<heads::ConvHead>& boundary_head() { return boundary_; }
    nn::Var gamma() const { return gamma_; }

private:
    LabelGrid contour_source(const GraphOutputs& out, const Batch& batch, int n, bool teacher_forcing) const;

    ModelConfig cfg_;
    nn::ParameterStore store_;
    std::unique_ptr<encoder::Encoder> encoder_;
    std::optional<heads::CoarseHead> coarse_;
    std::array<nn::Var, encoder::kBranches> align_;
    nn::Var q_proj_, q_bias_, q_base_;
    nn::Var w_query_, w_key_, w_value_, w_mod_, gamma_;
    heads::ConvHead seg_;
    std::optional<heads::ConvHead> boundary_;
};

/// Argmax over the class axis of a (C, H, W) tensor (lowest index wins ties).
LabelGrid argmax_labels(const Tensor& probs);

struct InferenceResult {
    heads::PredictionBundle bundle;
    query::AttentionTrace trace;
    std::vector<contour::Contour> contours;
    std::vector<contour::ShapeDescriptor> descriptors;
    int query_count = 0;
};

/// Inference-mode forward of one sample (no graph, running normalization stats).
InferenceResult forward_pass(const CgqrNet& net, const data::ImageSample& sample, bool teacher_forcing,
                             const ContourHook* hook = nullptr);

/// Inference for several samples, one network call per sample, spread over
/// `workers` threads. Results are in input order.
std::vector<InferenceResult> forward_many(const CgqrNet& net, const std::vector<data::ImageSample>& samples,
                                          int workers);

}  // namespace cgqr::model
