#pragma once

#include "cgqr/contour.hpp"
#include "cgqr/encoder.hpp"
#include "cgqr/parameters.hpp"

#include <Eigen/Core>

#include <array>
#include <vector>

namespace cgqr::query {

using Matrix = Eigen::MatrixXd;
using Vector = Eigen::VectorXd;

enum class Provenance { Contour, Base };

/// Contour-derived queries stacked above the learned base queries (M x d).
struct QueryBank {
    Matrix queries;
    std::vector<Provenance> provenance;

    int size() const { return static_cast<int>(queries.rows()); }
    int dim() const { return static_cast<int>(queries.cols()); }
    int contour_count() const;
};

/// Row-major flattened spatial tokens: row i is pixel (i / width, i % width).
struct FusedTokens {
    Matrix tokens;  // N x d
    int height = 0;
    int width = 0;
};

struct AttentionTrace {
    Matrix weights;     // M x N, rows on the simplex
    Matrix context;     // M x d
    Matrix modulation;  // N x d
};

struct EmbeddingParams {
    Matrix projection;  // d x 6
    Vector bias;        // d
    Matrix base;        // Q_b x d
};

struct AttentionParams {
    Matrix w_query;   // d x d, applied as Q W
    Matrix w_key;
    Matrix w_value;
    Matrix w_modulation;
    double gamma = 0.0;
};

struct AttentionGradients {
    Matrix d_tokens;
    Matrix d_queries;
    Matrix d_w_query;
    Matrix d_w_key;
    Matrix d_w_value;
    Matrix d_w_modulation;
    double d_gamma = 0.0;
};

/// Intermediates kept for the backward pass.
struct AttentionCache {
    Matrix projected_queries;  // Q W_Q
    Matrix keys;               // F W_K
    Matrix values;             // F W_V
    Matrix weights;            // A
    Matrix context;            // H = A V
    Matrix spread;             // A^T H
    Matrix modulation;         // A^T H W_M
};

/// q_k = W_q d_k + b_q for each descriptor, followed by the base queries.
/// With include_contour = false only the base queries are returned.
QueryBank embed_queries(const std::vector<contour::ShapeDescriptor>& descriptors, const EmbeddingParams& params,
                        bool include_contour = true);

/// 1x1 alignment of each branch to d channels (no bias), nearest upsampling to
/// the finest branch, summation, row-major flattening. With single_branch only
/// the finest branch contributes.
FusedTokens fuse_pyramid(const encoder::FeatureSet& features, const std::array<Matrix, encoder::kBranches>& align,
                         bool single_branch = false);

FusedTokens flatten(const Tensor& grid);     // (d, H, W) -> tokens
Tensor unflatten(const FusedTokens& tokens);  // tokens -> (d, H, W)

/// A = softmax(Q W_Q (F W_K)^T / sqrt(d)), H = A F W_V, M = A^T H W_M,
/// F_ref = F + gamma M.
Matrix attention_forward(const Matrix& tokens, const Matrix& queries, const AttentionParams& params,
                         AttentionCache* cache = nullptr);
AttentionGradients attention_backward(const Matrix& tokens, const Matrix& queries, const AttentionParams& params,
                                      const AttentionCache& cache, const Matrix& d_refined);

std::pair<FusedTokens, AttentionTrace> refine(const FusedTokens& tokens, const QueryBank& queries,
                                              const AttentionParams& params);

/// Row-wise max-subtracted softmax.
Matrix softmax_rows(const Matrix& logits);

// ---------------------------------------------------------------------------
// Differentiable wrappers used by the network.
// ---------------------------------------------------------------------------

/// Descriptors are constants (B, K, 6); result is (B, M, d). Without contour
/// queries only `base` is read and the projection Vars may be undefined.
nn::Var embed_queries_op(const Tensor& descriptors, const nn::Var& projection, const nn::Var& bias,
                         const nn::Var& base, bool include_contour);

/// Grid (B, d, H, W) refined against queries (B, M, d). Per-sample traces are
/// appended to `traces` when non-null.
nn::Var cross_attention_op(const nn::Var& grid, const nn::Var& queries, const nn::Var& w_query, const nn::Var& w_key,
                           const nn::Var& w_value, const nn::Var& w_modulation, const nn::Var& gamma,
                           std::vector<AttentionTrace>* traces);

}  // namespace cgqr::query
