#include "cgqr/query_refinement.hpp"

#include <cmath>
#include <memory>

namespace cgqr::query {

namespace {

using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using ConstRowMap = Eigen::Map<const RowMat>;
using RowMap = Eigen::Map<RowMat>;
using ConstColMap = Eigen::Map<const Matrix>;
using ColMap = Eigen::Map<Matrix>;

Matrix square_param(const nn::Var& v, int d, const char* name)
{
    const Tensor& t = v.value();
    if (t.rank() != 2 || t.dim(0) != d || t.dim(1) != d)
        throw ShapeError(std::string(name) + " must be (" + std::to_string(d) + ", " + std::to_string(d) + "), got " +
                         shape_string(t.shape()));
    return ConstRowMap(t.data(), d, d);
}

}  // namespace

int QueryBank::contour_count() const
{
    int n = 0;
    for (auto p : provenance)
        n += p == Provenance::Contour;
    return n;
}

QueryBank embed_queries(const std::vector<contour::ShapeDescriptor>& descriptors, const EmbeddingParams& params,
                        bool include_contour)
{
    const int d = static_cast<int>(params.projection.rows());
    if (params.projection.cols() != contour::kDescriptorSize || params.bias.size() != d || params.base.cols() != d)
        throw ShapeError("query embedding parameters are inconsistent");
    const int k = include_contour ? static_cast<int>(descriptors.size()) : 0;
    const int qb = static_cast<int>(params.base.rows());
    QueryBank bank;
    bank.queries.resize(k + qb, d);
    for (int i = 0; i < k; ++i) {
        const auto a = descriptors[static_cast<std::size_t>(i)].as_array();
        Eigen::Map<const Eigen::Matrix<double, contour::kDescriptorSize, 1>> desc(a.data());
        bank.queries.row(i) = (params.projection * desc + params.bias).transpose();
        bank.provenance.push_back(Provenance::Contour);
    }
    bank.queries.bottomRows(qb) = params.base;
    bank.provenance.insert(bank.provenance.end(), static_cast<std::size_t>(qb), Provenance::Base);
    return bank;
}

FusedTokens flatten(const Tensor& grid)
{
    if (grid.rank() != 3)
        throw ShapeError("flatten expects (d, H, W), got " + shape_string(grid.shape()));
    FusedTokens t;
    t.height = grid.dim(1);
    t.width = grid.dim(2);
    t.tokens = ConstColMap(grid.data(), static_cast<Eigen::Index>(t.height) * t.width, grid.dim(0));
    return t;
}

Tensor unflatten(const FusedTokens& tokens)
{
    const Eigen::Index n = tokens.tokens.rows();
    if (n != static_cast<Eigen::Index>(tokens.height) * tokens.width)
        throw ShapeError("token count " + std::to_string(n) + " does not match spatial shape " +
                         std::to_string(tokens.height) + "x" + std::to_string(tokens.width));
    const int d = static_cast<int>(tokens.tokens.cols());
    Tensor grid({d, tokens.height, tokens.width});
    ColMap(grid.data(), n, d) = tokens.tokens;
    return grid;
}

FusedTokens fuse_pyramid(const encoder::FeatureSet& features, const std::array<Matrix, encoder::kBranches>& align,
                         bool single_branch)
{
    const Tensor& fine = features.maps[0];
    const int h = fine.dim(1), w = fine.dim(2);
    const int d = static_cast<int>(align[0].rows());
    FusedTokens out;
    out.height = h;
    out.width = w;
    out.tokens = Matrix::Zero(static_cast<Eigen::Index>(h) * w, d);
    const int branches = single_branch ? 1 : encoder::kBranches;
    for (int k = 0; k < branches; ++k) {
        const Tensor& f = features.maps[k];
        const int c = f.dim(0), fh = f.dim(1), fw = f.dim(2);
        if (align[k].cols() != c || align[k].rows() != d)
            throw ShapeError("alignment " + std::to_string(k) + " does not match branch channels");
        if (h % fh != 0 || w % fw != 0 || h / fh != w / fw)
            throw ShapeError("branch " + std::to_string(k) + " resolution does not divide the finest branch");
        const int factor = h / fh;
        // aligned: (fh * fw) x d tokens at the branch's own resolution
        Matrix aligned = ConstColMap(f.data(), static_cast<Eigen::Index>(fh) * fw, c) * align[k].transpose();
        for (int y = 0; y < h; ++y)
            for (int x = 0; x < w; ++x)
                out.tokens.row(static_cast<Eigen::Index>(y) * w + x) +=
                    aligned.row(static_cast<Eigen::Index>(y / factor) * fw + x / factor);
    }
    return out;
}

Matrix softmax_rows(const Matrix& logits)
{
    Matrix out(logits.rows(), logits.cols());
    for (Eigen::Index r = 0; r < logits.rows(); ++r) {
        const double mx = logits.row(r).maxCoeff();
        out.row(r) = (logits.row(r).array() - mx).exp().matrix();
        out.row(r) /= out.row(r).sum();
    }
    return out;
}

Matrix attention_forward(const Matrix& tokens, const Matrix& queries, const AttentionParams& p, AttentionCache* cache)
{
    const Eigen::Index d = tokens.cols();
    if (queries.cols() != d)
        throw ShapeError("query dim " + std::to_string(queries.cols()) + " != token dim " + std::to_string(d));
    if (p.w_query.rows() != d || p.w_key.rows() != d || p.w_value.rows() != d || p.w_modulation.rows() != d)
        throw ShapeError("attention projections do not match token dim " + std::to_string(d));

    const double scale = 1.0 / std::sqrt(static_cast<double>(d));
    Matrix qp = queries * p.w_query;
    Matrix keys = tokens * p.w_key;
    Matrix values = tokens * p.w_value;
    Matrix weights = softmax_rows((qp * keys.transpose()) * scale);
    Matrix context = weights * values;
    Matrix spread = weights.transpose() * context;
    Matrix modulation = spread * p.w_modulation;
    Matrix refined = tokens;
    if (p.gamma != 0.0)
        refined += p.gamma * modulation;
    if (cache)
        *cache = {std::move(qp), std::move(keys), std::move(values), std::move(weights),
                  std::move(context), std::move(spread), std::move(modulation)};
    return refined;
}

AttentionGradients attention_backward(const Matrix& tokens, const Matrix& queries, const AttentionParams& p,
                                      const AttentionCache& c, const Matrix& d_refined)
{
    const double scale = 1.0 / std::sqrt(static_cast<double>(tokens.cols()));
    AttentionGradients g;
    g.d_gamma = (d_refined.array() * c.modulation.array()).sum();
    const Matrix d_mod = p.gamma * d_refined;
    g.d_w_modulation = c.spread.transpose() * d_mod;
    const Matrix d_spread = d_mod * p.w_modulation.transpose();  // N x d
    // spread = A^T H
    Matrix d_weights = c.context * d_spread.transpose();           // M x N
    const Matrix d_context = c.weights * d_spread;                 // M x d
    // H = A V
    d_weights += d_context * c.values.transpose();
    const Matrix d_values = c.weights.transpose() * d_context;     // N x d
    // A = softmax(S)
    const Eigen::VectorXd row_dot = (d_weights.array() * c.weights.array()).rowwise().sum();
    const Matrix d_logits = (c.weights.array() * (d_weights.colwise() - row_dot).array()).matrix() * scale;
    const Matrix d_qp = d_logits * c.keys;                         // M x d
    const Matrix d_keys = d_logits.transpose() * c.projected_queries;  // N x d

    g.d_w_query = queries.transpose() * d_qp;
    g.d_queries = d_qp * p.w_query.transpose();
    g.d_w_key = tokens.transpose() * d_keys;
    g.d_w_value = tokens.transpose() * d_values;
    g.d_tokens = d_refined + d_keys * p.w_key.transpose() + d_values * p.w_value.transpose();
    return g;
}

std::pair<FusedTokens, AttentionTrace> refine(const FusedTokens& tokens, const QueryBank& queries,
                                              const AttentionParams& params)
{
    AttentionCache cache;
    FusedTokens out;
    out.height = tokens.height;
    out.width = tokens.width;
    out.tokens = attention_forward(tokens.tokens, queries.queries, params, &cache);
    AttentionTrace trace{std::move(cache.weights), std::move(cache.context), std::move(cache.modulation)};
    return {std::move(out), std::move(trace)};
}

nn::Var embed_queries_op(const Tensor& descriptors, const nn::Var& projection, const nn::Var& bias,
                         const nn::Var& base, bool include_contour)
{
    if (descriptors.rank() != 3 || descriptors.dim(2) != contour::kDescriptorSize)
        throw ShapeError("descriptors must be (B, K, 6), got " + shape_string(descriptors.shape()));
    const int nb = descriptors.dim(0), k = include_contour ? descriptors.dim(1) : 0;
    const int d = base.value().dim(1), qb = base.value().dim(0);
    const int m = k + qb;
    Tensor out({nb, m, d});
    ConstRowMap base_m(base.value().data(), qb, d);
    for (int n = 0; n < nb; ++n)
        RowMap(out.data() + static_cast<std::size_t>(n) * m * d, m, d).bottomRows(qb) = base_m;

    if (!include_contour) {
        return nn::make_result(std::move(out), {base}, [=](nn::Node& self) {
            if (Tensor* gbase = nn::input_grad(self, 0))
                for (int n = 0; n < nb; ++n)
                    RowMap(gbase->data(), qb, d) += ConstRowMap(self.grad.data() + static_cast<std::size_t>(n) * m * d, m, d);
        });
    }

    if (projection.value().dim(0) != d || projection.value().dim(1) != contour::kDescriptorSize ||
        bias.value().size() != static_cast<std::size_t>(d))
        throw ShapeError("query embedding parameters are inconsistent");
    ConstRowMap w(projection.value().data(), d, contour::kDescriptorSize);
    Eigen::Map<const Eigen::VectorXd> b(bias.value().data(), d);
    auto desc_row = [descriptors](int n, int i) {
        return Eigen::Map<const Eigen::VectorXd>(
            descriptors.data() + (static_cast<std::size_t>(n) * descriptors.dim(1) + i) * contour::kDescriptorSize,
            contour::kDescriptorSize);
    };
    for (int n = 0; n < nb; ++n) {
        RowMap q(out.data() + static_cast<std::size_t>(n) * m * d, m, d);
        for (int i = 0; i < k; ++i)
            q.row(i) = (w * desc_row(n, i) + b).transpose();
    }
    return nn::make_result(std::move(out), {projection, bias, base}, [=](nn::Node& self) {
        Tensor* gw = nn::input_grad(self, 0);
        Tensor* gb = nn::input_grad(self, 1);
        Tensor* gbase = nn::input_grad(self, 2);
        for (int n = 0; n < nb; ++n) {
            ConstRowMap dq(self.grad.data() + static_cast<std::size_t>(n) * m * d, m, d);
            for (int i = 0; i < k; ++i) {
                if (gw)
                    RowMap(gw->data(), d, contour::kDescriptorSize).noalias() +=
                        dq.row(i).transpose() * desc_row(n, i).transpose();
                if (gb)
                    Eigen::Map<Eigen::VectorXd>(gb->data(), d) += dq.row(i).transpose();
            }
            if (gbase)
                RowMap(gbase->data(), qb, d) += dq.bottomRows(qb);
        }
    });
}

nn::Var cross_attention_op(const nn::Var& grid, const nn::Var& queries, const nn::Var& w_query, const nn::Var& w_key,
                           const nn::Var& w_value, const nn::Var& w_modulation, const nn::Var& gamma,
                           std::vector<AttentionTrace>* traces)
{
    const Tensor& gv = grid.value();
    const Tensor& qv = queries.value();
    if (gv.rank() != 4 || qv.rank() != 3 || qv.dim(0) != gv.dim(0))
        throw ShapeError("cross attention expects grid (B, d, H, W) and queries (B, M, d)");
    const int nb = gv.dim(0), d = gv.dim(1), m = qv.dim(1);
    if (qv.dim(2) != d)
        throw ShapeError("query dim " + std::to_string(qv.dim(2)) + " != token dim " + std::to_string(d));
    const Eigen::Index n_tok = static_cast<Eigen::Index>(gv.dim(2)) * gv.dim(3);

    auto params = std::make_shared<AttentionParams>();
    params->w_query = square_param(w_query, d, "W_Q");
    params->w_key = square_param(w_key, d, "W_K");
    params->w_value = square_param(w_value, d, "W_V");
    params->w_modulation = square_param(w_modulation, d, "W_M");
    params->gamma = gamma.value()[0];

    const bool keep = nn::GradMode::enabled();
    auto caches = std::make_shared<std::vector<AttentionCache>>(keep ? nb : 0);
    Tensor out(gv.shape());
    for (int b = 0; b < nb; ++b) {
        const std::size_t off = static_cast<std::size_t>(b) * d * n_tok;
        Matrix tokens = ConstColMap(gv.data() + off, n_tok, d);
        Matrix q = ConstRowMap(qv.data() + static_cast<std::size_t>(b) * m * d, m, d);
        AttentionCache local;
        AttentionCache& cache = keep ? (*caches)[b] : local;
        ColMap(out.data() + off, n_tok, d) = attention_forward(tokens, q, *params, &cache);
        if (traces)
            traces->push_back({cache.weights, cache.context, cache.modulation});
    }

    return nn::make_result(std::move(out), {grid, queries, w_query, w_key, w_value, w_modulation, gamma},
                           [=](nn::Node& self) {
                               const Tensor& gin = self.inputs[0]->value;
                               const Tensor& qin = self.inputs[1]->value;
                               Tensor* g_grid = nn::input_grad(self, 0);
                               Tensor* g_q = nn::input_grad(self, 1);
                               std::array<Tensor*, 4> g_w{nn::input_grad(self, 2), nn::input_grad(self, 3),
                                                          nn::input_grad(self, 4), nn::input_grad(self, 5)};
                               Tensor* g_gamma = nn::input_grad(self, 6);
                               for (int b = 0; b < nb; ++b) {
                                   const std::size_t off = static_cast<std::size_t>(b) * d * n_tok;
                                   Matrix tokens = ConstColMap(gin.data() + off, n_tok, d);
                                   Matrix q = ConstRowMap(qin.data() + static_cast<std::size_t>(b) * m * d, m, d);
                                   Matrix d_ref = ConstColMap(self.grad.data() + off, n_tok, d);
                                   AttentionGradients g = attention_backward(tokens, q, *params, (*caches)[b], d_ref);
                                   if (g_grid)
                                       ColMap(g_grid->data() + off, n_tok, d) += g.d_tokens;
                                   if (g_q)
                                       RowMap(g_q->data() + static_cast<std::size_t>(b) * m * d, m, d) += g.d_queries;
                                   const std::array<const Matrix*, 4> dw{&g.d_w_query, &g.d_w_key, &g.d_w_value,
                                                                         &g.d_w_modulation};
                                   for (int i = 0; i < 4; ++i)
                                       if (g_w[i])
                                           RowMap(g_w[i]->data(), d, d) += *dw[i];
                                   if (g_gamma)
                                       (*g_gamma)[0] += g.d_gamma;
                               }
                           });
}

}  // namespace cgqr::query
