#include "cgqr/model.hpp"

#include <algorithm>
#include <atomic>
#include <exception>
#include <mutex>
#include <cmath>
#include <random>
#include <thread>

namespace cgqr::model {

const std::vector<std::string>& Ablations::names()
{
    static const std::vector<std::string> n{"no_boundary_head", "no_coarse_head", "no_contour_queries",
                                            "no_pyramid_fusion", "no_teacher_forcing"};
    return n;
}

namespace {

bool* ablation_slot(Ablations& a, const std::string& name)
{
    if (name == "no_boundary_head")
        return &a.no_boundary_head;
    if (name == "no_coarse_head")
        return &a.no_coarse_head;
    if (name == "no_contour_queries")
        return &a.no_contour_queries;
    if (name == "no_pyramid_fusion")
        return &a.no_pyramid_fusion;
    if (name == "no_teacher_forcing")
        return &a.no_teacher_forcing;
    return nullptr;
}

Tensor normal_scaled(std::vector<int> shape, double scale, std::mt19937_64& rng)
{
    Tensor t(std::move(shape));
    std::normal_distribution<double> dist(0.0, 1.0);
    for (auto& v : t.storage())
        v = dist(rng) * scale;
    return t;
}

// Each component draws from its own stream so that ablating one part leaves
// the initial values of the others unchanged.
std::mt19937_64 component_rng(std::uint64_t seed, const std::string& name)
{
    const std::uint64_t h = fnv1a(name.data(), name.size());
    std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                      static_cast<std::uint32_t>(h), static_cast<std::uint32_t>(h >> 32)};
    return std::mt19937_64(seq);
}

Tensor sample_slice(const Tensor& t, int n)
{
    std::vector<int> shape(t.shape().begin() + 1, t.shape().end());
    const std::size_t per = Tensor::numel(shape);
    return Tensor(shape, std::vector<double>(t.data() + n * per, t.data() + (n + 1) * per));
}

}  // namespace

void Ablations::enable(const std::string& name)
{
    bool* slot = ablation_slot(*this, name);
    if (!slot)
        throw ConfigError("unknown ablation flag '" + name + "'");
    *slot = true;
}

bool Ablations::is_enabled(const std::string& name) const
{
    Ablations copy = *this;
    bool* slot = ablation_slot(copy, name);
    if (!slot)
        throw ConfigError("unknown ablation flag '" + name + "'");
    return *slot;
}

std::vector<std::string> Ablations::enabled() const
{
    std::vector<std::string> out;
    for (const auto& n : names())
        if (is_enabled(n))
            out.push_back(n);
    return out;
}

ModelConfig ModelConfig::desk()
{
    ModelConfig c;
    c.encoder.branch_channels = {16, 32, 64};
    c.encoder.branch_strides = {2, 4, 8};
    c.encoder.n_stages = 2;
    c.token_dim = 32;
    c.head_hidden = 32;
    return c;
}

void ModelConfig::validate() const
{
    encoder.validate();
    if (n_classes < 1)
        throw ConfigError("n_classes must be >= 1");
    if (token_dim < 1 || base_queries < 0 || head_hidden < 1)
        throw ConfigError("token_dim and head_hidden must be positive, base_queries non-negative");
    if (contour_points < 4)
        throw ConfigError("contour resampling needs at least 4 points");
    if (base_queries == 0 && ablations.no_contour_queries)
        throw ConfigError("no_contour_queries needs at least one base query");
}

nlohmann::json ModelConfig::to_json() const
{
    return {{"in_channels", encoder.in_channels},
            {"branch_channels", encoder.branch_channels},
            {"branch_strides", encoder.branch_strides},
            {"n_stages", encoder.n_stages},
            {"n_classes", n_classes},
            {"token_dim", token_dim},
            {"base_queries", base_queries},
            {"head_hidden", head_hidden},
            {"contour_points", contour_points},
            {"ablations", ablations.enabled()}};
}

ModelConfig ModelConfig::from_json(const nlohmann::json& j)
{
    ModelConfig c;
    c.encoder.in_channels = j.at("in_channels").get<int>();
    c.encoder.branch_channels = j.at("branch_channels").get<std::array<int, encoder::kBranches>>();
    c.encoder.branch_strides = j.at("branch_strides").get<std::array<int, encoder::kBranches>>();
    c.encoder.n_stages = j.at("n_stages").get<int>();
    c.n_classes = j.at("n_classes").get<int>();
    c.token_dim = j.at("token_dim").get<int>();
    c.base_queries = j.at("base_queries").get<int>();
    c.head_hidden = j.at("head_hidden").get<int>();
    c.contour_points = j.at("contour_points").get<int>();
    for (const auto& a : j.at("ablations"))
        c.ablations.enable(a.get<std::string>());
    c.validate();
    return c;
}

Batch Batch::from_samples(const std::vector<data::ImageSample>& samples, const std::vector<std::size_t>& indices)
{
    if (indices.empty())
        throw ShapeError("empty batch");
    const auto& first = samples.at(indices[0]);
    const int h = first.image.height, w = first.image.width;
    Batch b;
    b.images = Tensor({static_cast<int>(indices.size()), 1, h, w});
    for (std::size_t i = 0; i < indices.size(); ++i) {
        const auto& s = samples.at(indices[i]);
        if (!s.image.same_size(h, w) || !s.mask.same_size(h, w) || !s.boundary.same_size(h, w))
            throw ShapeError("sample " + s.sample_id + " does not match the batch size " + std::to_string(h) + "x" +
                             std::to_string(w));
        std::copy(s.image.values.begin(), s.image.values.end(), b.images.data() + i * h * w);
        b.masks.push_back(s.mask);
        b.boundaries.push_back(s.boundary);
        b.ids.push_back(s.sample_id);
    }
    return b;
}

CgqrNet::CgqrNet(const ModelConfig& cfg, std::uint64_t seed) : cfg_(cfg)
{
    cfg_.validate();
    const auto& ch = cfg_.encoder.branch_channels;
    const int d = cfg_.token_dim;
    const int n_out = cfg_.n_classes + 1;

    auto rng = component_rng(seed, "encoder");
    encoder_ = std::make_unique<encoder::Encoder>(cfg_.encoder, store_, rng, "encoder");
    if (!cfg_.ablations.no_coarse_head) {
        rng = component_rng(seed, "coarse_head");
        coarse_ = heads::CoarseHead::create(store_, "coarse_head", ch[2], n_out, rng);
    }

    const int branches = cfg_.ablations.no_pyramid_fusion ? 1 : encoder::kBranches;
    for (int k = 0; k < branches; ++k) {
        const std::string name = "fusion.align" + std::to_string(k) + ".weight";
        rng = component_rng(seed, name);
        align_[k] = store_.add(name, nn::uniform_fan_in({d, ch[k], 1, 1}, ch[k], rng));
    }

    if (!cfg_.ablations.no_contour_queries) {
        rng = component_rng(seed, "queries.projection");
        q_proj_ = store_.add("queries.projection", nn::uniform_fan_in({d, contour::kDescriptorSize},
                                                                      contour::kDescriptorSize, rng));
        q_bias_ = store_.add("queries.bias", nn::uniform_fan_in({d}, contour::kDescriptorSize, rng));
    }
    rng = component_rng(seed, "queries.base");
    q_base_ = store_.add("queries.base", normal_scaled({cfg_.base_queries, d}, 1.0 / std::sqrt(double(d)), rng));

    rng = component_rng(seed, "attention");
    w_query_ = store_.add("attention.w_query", nn::uniform_fan_in({d, d}, d, rng));
    w_key_ = store_.add("attention.w_key", nn::uniform_fan_in({d, d}, d, rng));
    w_value_ = store_.add("attention.w_value", nn::uniform_fan_in({d, d}, d, rng));
    w_mod_ = store_.add("attention.w_modulation", nn::uniform_fan_in({d, d}, d, rng));
    gamma_ = store_.add("attention.gamma", Tensor({1}, 0.0));

    rng = component_rng(seed, "seg_head");
    seg_ = heads::ConvHead::create(store_, "seg_head", d, cfg_.head_hidden, n_out, rng);
    if (!cfg_.ablations.no_boundary_head) {
        rng = component_rng(seed, "boundary_head");
        boundary_ = heads::ConvHead::create(store_, "boundary_head", d, cfg_.head_hidden, 1, rng);
    }
}

nn::Var CgqrNet::segment(const nn::Var& grid, int out_h, int out_w) const
{
    return seg_.forward(grid, out_h, out_w);
}

LabelGrid CgqrNet::contour_source(const GraphOutputs& out, const Batch& batch, int n, bool teacher_forcing) const
{
    if (teacher_forcing)
        return batch.masks.at(n);
    const int h = batch.images.dim(2), w = batch.images.dim(3);
    if (coarse_) {
        Tensor probs = sample_slice(out.coarse_probs.value(), n);
        Tensor up = nn::resize_bilinear(probs.reshaped({1, probs.dim(0), probs.dim(1), probs.dim(2)}), h, w);
        return argmax_labels(up.reshaped({up.dim(1), h, w}));
    }
    // Without a coarse head the contour source is the segmentation head run on
    // the unrefined fused grid.
    nn::NoGradGuard guard;
    Tensor fused = sample_slice(out.fused.value(), n);
    nn::Var grid(fused.reshaped({1, fused.dim(0), fused.dim(1), fused.dim(2)}));
    Tensor logits = segment(grid, h, w).value();
    return argmax_labels(logits.reshaped({logits.dim(1), h, w}));
}

GraphOutputs CgqrNet::forward(const Batch& batch, bool teacher_forcing, bool training, const ContourHook* hook) const
{
    const Tensor& images = batch.images;
    if (images.rank() != 4 || images.dim(1) != 1)
        throw ShapeError("network expects (N, 1, H, W) images, got " + shape_string(images.shape()));
    const int nb = images.dim(0), h = images.dim(2), w = images.dim(3);
    if (teacher_forcing && batch.masks.size() != static_cast<std::size_t>(nb))
        throw ShapeError("teacher forcing needs one mask per batch element");

    GraphOutputs out;
    const auto branches = encoder_->forward(nn::Var(images), training);

    if (coarse_) {
        out.coarse_logits = coarse_->forward(branches[2]);
        out.coarse_probs = nn::softmax_channels(out.coarse_logits);
    }

    const int factor0 = cfg_.encoder.branch_strides[0];
    for (int k = 0; k < encoder::kBranches; ++k) {
        if (!align_[k].defined())
            continue;
        nn::Var z = nn::conv2d(branches[k], align_[k], nn::Var(), 1, 0);
        const int up = cfg_.encoder.branch_strides[k] / factor0;
        if (up > 1)
            z = nn::upsample_nearest(z, up);
        out.fused = out.fused.defined() ? nn::add(out.fused, z) : z;
    }

    const int kq = cfg_.n_classes;
    out.descriptors = Tensor({nb, kq, contour::kDescriptorSize});
    const bool use_contours = !cfg_.ablations.no_contour_queries;
    if (use_contours) {
        for (int n = 0; n < nb; ++n) {
            const LabelGrid src = contour_source(out, batch, n, teacher_forcing);
            auto contours = contour::extract_contours(src, kq, cfg_.contour_points);
            auto desc = contour::describe_all(contours, h, w);
            for (int k = 0; k < kq; ++k) {
                const auto a = desc[k].as_array();
                std::copy(a.begin(), a.end(),
                          out.descriptors.data() + (static_cast<std::size_t>(n) * kq + k) * contour::kDescriptorSize);
            }
            if (hook && *hook)
                (*hook)({batch.ids.at(n), teacher_forcing, hash_labels(src), desc});
            out.contours.push_back(std::move(contours));
        }
    }

    nn::Var queries = query::embed_queries_op(out.descriptors, q_proj_, q_bias_, q_base_, use_contours);
    out.query_count = queries.value().dim(1);
    out.refined = query::cross_attention_op(out.fused, queries, w_query_, w_key_, w_value_, w_mod_, gamma_,
                                            &out.traces);

    out.refined_logits = segment(out.refined, h, w);
    out.refined_probs = nn::softmax_channels(out.refined_logits);
    if (boundary_) {
        out.boundary_logits = boundary_->forward(out.refined, h, w);
        out.boundary_probs = nn::sigmoid(out.boundary_logits);
    }
    return out;
}

query::AttentionParams CgqrNet::attention_params() const
{
    using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
    const int d = cfg_.token_dim;
    auto m = [d](const nn::Var& v) { return query::Matrix(Eigen::Map<const RowMat>(v.value().data(), d, d)); };
    return {m(w_query_), m(w_key_), m(w_value_), m(w_mod_), gamma_.value()[0]};
}

std::array<query::Matrix, encoder::kBranches> CgqrNet::alignment() const
{
    using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
    std::array<query::Matrix, encoder::kBranches> out;
    for (int k = 0; k < encoder::kBranches; ++k) {
        const int c = cfg_.encoder.branch_channels[k];
        if (align_[k].defined())
            out[k] = Eigen::Map<const RowMat>(align_[k].value().data(), cfg_.token_dim, c);
        else
            out[k] = query::Matrix::Zero(cfg_.token_dim, c);
    }
    return out;
}

query::EmbeddingParams CgqrNet::embedding_params() const
{
    using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
    const int d = cfg_.token_dim;
    query::EmbeddingParams p;
    if (q_proj_.defined()) {
        p.projection = Eigen::Map<const RowMat>(q_proj_.value().data(), d, contour::kDescriptorSize);
        p.bias = Eigen::Map<const Eigen::VectorXd>(q_bias_.value().data(), d);
    } else {
        p.projection = query::Matrix::Zero(d, contour::kDescriptorSize);
        p.bias = Eigen::VectorXd::Zero(d);
    }
    p.base = Eigen::Map<const RowMat>(q_base_.value().data(), cfg_.base_queries, d);
    return p;
}

LabelGrid argmax_labels(const Tensor& probs)
{
    if (probs.rank() != 3)
        throw ShapeError("argmax expects (C, H, W), got " + shape_string(probs.shape()));
    const int c = probs.dim(0), h = probs.dim(1), w = probs.dim(2);
    const std::size_t plane = static_cast<std::size_t>(h) * w;
    LabelGrid out(h, w, 0);
    for (std::size_t i = 0; i < plane; ++i) {
        int best = 0;
        for (int k = 1; k < c; ++k)
            if (probs[k * plane + i] > probs[best * plane + i])
                best = k;
        out.values[i] = best;
    }
    return out;
}

InferenceResult forward_pass(const CgqrNet& net, const data::ImageSample& sample, bool teacher_forcing,
                             const ContourHook* hook)
{
    nn::NoGradGuard guard;
    std::vector<data::ImageSample> one{sample};
    Batch batch = Batch::from_samples(one, {0});
    GraphOutputs g = net.forward(batch, teacher_forcing, false, hook);

    InferenceResult r;
    auto drop_batch = [](const nn::Var& v) {
        if (!v.defined())
            return Tensor();
        const Tensor& t = v.value();
        std::vector<int> shape(t.shape().begin() + 1, t.shape().end());
        if (shape.size() == 3 && shape[0] == 1)
            shape.erase(shape.begin());
        return t.reshaped(shape);
    };
    r.bundle.coarse_logits = g.coarse_logits.defined() ? drop_batch(g.coarse_logits) : Tensor();
    r.bundle.coarse_probs = g.coarse_probs.defined() ? drop_batch(g.coarse_probs) : Tensor();
    r.bundle.refined_logits = drop_batch(g.refined_logits);
    r.bundle.refined_probs = drop_batch(g.refined_probs);
    r.bundle.boundary_logits = drop_batch(g.boundary_logits);
    r.bundle.boundary_probs = drop_batch(g.boundary_probs);
    r.trace = std::move(g.traces.at(0));
    if (!g.contours.empty()) {
        r.contours = std::move(g.contours[0]);
        r.descriptors = contour::describe_all(r.contours, sample.image.height, sample.image.width);
    }
    r.query_count = g.query_count;
    return r;
}

std::vector<InferenceResult> forward_many(const CgqrNet& net, const std::vector<data::ImageSample>& samples,
                                          int workers)
{
    std::vector<InferenceResult> out(samples.size());
    const int n_threads = std::clamp(workers, 1, std::max<int>(1, static_cast<int>(samples.size())));
    if (n_threads == 1) {
        for (std::size_t i = 0; i < samples.size(); ++i)
            out[i] = forward_pass(net, samples[i], false);
        return out;
    }
    std::atomic<std::size_t> next{0};
    std::exception_ptr failure;
    std::mutex failure_mutex;
    std::vector<std::thread> pool;
    for (int t = 0; t < n_threads; ++t)
        pool.emplace_back([&] {
            for (std::size_t i = next++; i < samples.size(); i = next++) {
                try {
                    out[i] = forward_pass(net, samples[i], false);
                } catch (...) {
                    std::lock_guard lock(failure_mutex);
                    if (!failure)
                        failure = std::current_exception();
                }
            }
        });
    for (auto& th : pool)
        th.join();
    if (failure)
        std::rethrow_exception(failure);
    return out;
}

}  // namespace cgqr::model
