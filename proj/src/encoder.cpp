#include "cgqr/encoder.hpp"

#include <bit>

namespace cgqr::encoder {

namespace {

bool power_of_two(int v)
{
    return v > 0 && std::has_single_bit(static_cast<unsigned>(v));
}

int log2i(int v)
{
    return std::bit_width(static_cast<unsigned>(v)) - 1;
}

}  // namespace

void EncoderConfig::validate() const
{
    if (in_channels < 1)
        throw ConfigError("encoder in_channels must be >= 1");
    if (n_stages < 1)
        throw ConfigError("encoder needs at least one stage");
    for (int k = 0; k < kBranches; ++k) {
        if (branch_channels[k] < 1)
            throw ConfigError("branch channel counts must be positive");
        if (!power_of_two(branch_strides[k]))
            throw ConfigError("branch stride " + std::to_string(branch_strides[k]) + " is not a power of two");
        if (k > 0 && branch_strides[k] <= branch_strides[k - 1])
            throw ConfigError("branch strides must be strictly increasing");
    }
}

std::size_t parameter_count(const EncoderConfig& cfg)
{
    cfg.validate();
    const auto& c = cfg.branch_channels;
    const auto& s = cfg.branch_strides;
    std::size_t n = 0;

    const int stem_steps = std::max(1, log2i(s[0]));
    n += nn::ConvBn::count(cfg.in_channels, c[0], 3);
    n += static_cast<std::size_t>(stem_steps - 1) * nn::ConvBn::count(c[0], c[0], 3);

    for (int k = 1; k < kBranches; ++k) {
        const int steps = log2i(s[k] / s[k - 1]);
        n += nn::ConvBn::count(c[k - 1], c[k], 3) + static_cast<std::size_t>(steps - 1) * nn::ConvBn::count(c[k], c[k], 3);
    }

    std::size_t per_stage = 0;
    for (int k = 0; k < kBranches; ++k) {
        per_stage += 2 * nn::ConvBn::count(c[k], c[k], 3);
        for (int j = 0; j < kBranches; ++j) {
            if (j < k) {
                const int steps = log2i(s[k] / s[j]);
                per_stage += static_cast<std::size_t>(steps - 1) * nn::ConvBn::count(c[j], c[j], 3) +
                             nn::ConvBn::count(c[j], c[k], 3);
            } else if (j > k) {
                per_stage += nn::ConvBn::count(c[j], c[k], 1);
            }
        }
    }
    return n + per_stage * static_cast<std::size_t>(cfg.n_stages);
}

void check_input_size(const EncoderConfig& cfg, int height, int width)
{
    for (int s : cfg.branch_strides)
        if (height % s != 0 || width % s != 0)
            throw ShapeError("input size " + std::to_string(height) + "x" + std::to_string(width) +
                             " is not divisible by branch stride " + std::to_string(s));
}

Encoder::Encoder(const EncoderConfig& cfg, nn::ParameterStore& store, std::mt19937_64& rng, const std::string& prefix)
    : cfg_(cfg)
{
    cfg_.validate();
    const auto& c = cfg_.branch_channels;
    const auto& s = cfg_.branch_strides;

    // Stem reaches stride s1 with stride-2 steps (a single stride-1 conv when s1 == 1).
    const int stem_steps = std::max(1, log2i(s[0]));
    const int stem_stride = s[0] == 1 ? 1 : 2;
    for (int i = 0; i < stem_steps; ++i)
        stem_.push_back(nn::ConvBn::create(store, prefix + ".stem." + std::to_string(i), i == 0 ? cfg_.in_channels : c[0],
                                           c[0], 3, stem_stride, rng));

    for (int k = 1; k < kBranches; ++k) {
        const int steps = log2i(s[k] / s[k - 1]);
        for (int i = 0; i < steps; ++i)
            transitions_[k].push_back(nn::ConvBn::create(store,
                                                         prefix + ".transition" + std::to_string(k) + "." +
                                                             std::to_string(i),
                                                         i == 0 ? c[k - 1] : c[k], c[k], 3, 2, rng));
    }

    for (int t = 0; t < cfg_.n_stages; ++t) {
        Stage st;
        const std::string sp = prefix + ".stage" + std::to_string(t);
        for (int k = 0; k < kBranches; ++k) {
            const std::string bp = sp + ".branch" + std::to_string(k);
            st.blocks[k].first = nn::ConvBn::create(store, bp + ".res.0", c[k], c[k], 3, 1, rng);
            st.blocks[k].second = nn::ConvBn::create(store, bp + ".res.1", c[k], c[k], 3, 1, rng);
        }
        for (int j = 0; j < kBranches; ++j)
            for (int k = 0; k < kBranches; ++k) {
                if (j == k)
                    continue;
                const std::string fp = sp + ".fuse" + std::to_string(j) + "to" + std::to_string(k);
                Fuse& f = st.fuse[j][k];
                if (j < k) {
                    const int steps = log2i(s[k] / s[j]);
                    for (int i = 0; i < steps; ++i)
                        f.chain.push_back(nn::ConvBn::create(store, fp + "." + std::to_string(i), c[j],
                                                             i + 1 == steps ? c[k] : c[j], 3, 2, rng));
                } else {
                    f.chain.push_back(nn::ConvBn::create(store, fp + ".0", c[j], c[k], 1, 1, rng));
                    f.upsample = s[j] / s[k];
                }
            }
        stages_.push_back(std::move(st));
    }
}

Encoder::Branches Encoder::initial_branches(const nn::Var& images, bool training) const
{
    if (images.value().rank() != 4 || images.value().dim(1) != cfg_.in_channels)
        throw ShapeError("encoder expects (N, " + std::to_string(cfg_.in_channels) + ", H, W), got " +
                         shape_string(images.shape()));
    check_input_size(cfg_, images.value().dim(2), images.value().dim(3));
    Branches b;
    nn::Var x = images;
    for (const auto& layer : stem_)
        x = layer.forward(x, training, true);
    b[0] = x;
    for (int k = 1; k < kBranches; ++k) {
        x = b[k - 1];
        for (const auto& layer : transitions_[k])
            x = layer.forward(x, training, true);
        b[k] = x;
    }
    return b;
}

Encoder::Branches Encoder::stage_forward(int stage, const Branches& in, bool training) const
{
    const Stage& st = stages_.at(static_cast<std::size_t>(stage));
    Branches out;
    for (int k = 0; k < kBranches; ++k) {
        const Residual& r = st.blocks[k];
        nn::Var y = r.second.forward(r.first.forward(in[k], training, true), training, false);
        nn::Var acc = nn::relu(nn::add(in[k], y));
        for (int j = 0; j < kBranches; ++j) {
            if (j == k)
                continue;
            const Fuse& f = st.fuse[j][k];
            nn::Var z = in[j];
            for (std::size_t i = 0; i < f.chain.size(); ++i)
                z = f.chain[i].forward(z, training, j < k && i + 1 < f.chain.size());
            if (f.upsample > 1)
                z = nn::upsample_nearest(z, f.upsample);
            acc = nn::add(acc, z);
        }
        out[k] = acc;
    }
    return out;
}

Encoder::Branches Encoder::forward(const nn::Var& images, bool training) const
{
    Branches b = initial_branches(images, training);
    for (int t = 0; t < cfg_.n_stages; ++t)
        b = stage_forward(t, b, training);
    return b;
}

FeatureSet Encoder::encode(const ImageGrid& image) const
{
    nn::NoGradGuard guard;
    nn::Var x(Tensor({1, 1, image.height, image.width}, image.values));
    Branches b = forward(x, false);
    FeatureSet fs;
    for (int k = 0; k < kBranches; ++k) {
        const Tensor& t = b[k].value();
        fs.maps[k] = t.reshaped({t.dim(1), t.dim(2), t.dim(3)});
    }
    return fs;
}

}  // namespace cgqr::encoder
