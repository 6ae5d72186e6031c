#include "cgqr/heads_losses.hpp"

#include <algorithm>
#include <cmath>

namespace cgqr::heads {

namespace {

void check_target(int channels, int h, int w, const LabelGrid& target)
{
    if (channels < 2)
        throw ShapeError("dice probabilities need at least one foreground channel");
    if (!target.same_size(h, w))
        throw ShapeError("dice target " + std::to_string(target.height) + "x" + std::to_string(target.width) +
                         " does not match probabilities " + std::to_string(h) + "x" + std::to_string(w));
    const int k = channels - 1;
    for (auto v : target.values)
        if (v < 0 || v > k)
            throw ShapeError("target label " + std::to_string(v) + " outside [0, " + std::to_string(k) + "]");
}

void check_boundary(const Tensor& probs, const BinaryGrid& target)
{
    const int r = probs.rank();
    if (r < 2 || !target.same_size(probs.dim(r - 2), probs.dim(r - 1)) ||
        probs.size() != target.size())
        throw ShapeError("boundary target " + std::to_string(target.height) + "x" + std::to_string(target.width) +
                         " does not match probabilities " + shape_string(probs.shape()));
}

// Per-class sums over one (K+1, H, W) block.
struct DiceSums {
    std::vector<double> inter, pred, truth;
};

DiceSums dice_sums(const double* probs, int channels, std::size_t plane, const LabelGrid& target)
{
    DiceSums s{std::vector<double>(channels, 0.0), std::vector<double>(channels, 0.0),
               std::vector<double>(channels, 0.0)};
    for (int c = 1; c < channels; ++c) {
        const double* p = probs + c * plane;
        for (std::size_t i = 0; i < plane; ++i) {
            s.pred[c] += p[i];
            if (target.values[i] == c) {
                s.inter[c] += p[i];
                s.truth[c] += 1.0;
            }
        }
    }
    return s;
}

double dice_from_sums(const DiceSums& s, int channels, double eps)
{
    double acc = 0.0;
    for (int c = 1; c < channels; ++c)
        acc += 2.0 * s.inter[c] / (s.pred[c] + s.truth[c] + eps);
    return 1.0 - acc / (channels - 1);
}

void dice_grad_into(const DiceSums& s, int channels, std::size_t plane, const LabelGrid& target, double eps,
                    double scale, double* out)
{
    const double k = channels - 1;
    for (int c = 1; c < channels; ++c) {
        const double den = s.pred[c] + s.truth[c] + eps;
        const double base = 2.0 * s.inter[c] / (den * den);
        double* g = out + c * plane;
        for (std::size_t i = 0; i < plane; ++i) {
            const double gi = target.values[i] == c ? 1.0 : 0.0;
            g[i] += scale * -(2.0 * gi / den - base) / k;
        }
    }
}

double bce_term(double p, bool b)
{
    p = std::clamp(p, kBceClamp, 1.0 - kBceClamp);
    return b ? -std::log(p) : -std::log(1.0 - p);
}

double bce_derivative(double p, bool b)
{
    if (p < kBceClamp || p > 1.0 - kBceClamp)
        return 0.0;
    return b ? -1.0 / p : 1.0 / (1.0 - p);
}

}  // namespace

CoarseHead CoarseHead::create(nn::ParameterStore& store, const std::string& name, int in_channels, int n_out,
                              std::mt19937_64& rng)
{
    CoarseHead h;
    h.weight = store.add(name + ".weight", nn::uniform_fan_in({n_out, in_channels, 1, 1}, in_channels, rng));
    h.bias = store.add(name + ".bias", nn::uniform_fan_in({n_out}, in_channels, rng));
    return h;
}

nn::Var CoarseHead::forward(const nn::Var& f3) const
{
    if (f3.value().rank() != 4 || f3.value().dim(1) != weight.value().dim(1))
        throw ShapeError("coarse head expects " + std::to_string(weight.value().dim(1)) + " input channels, got " +
                         shape_string(f3.shape()));
    return nn::conv2d(f3, weight, bias, 1, 0);
}

ConvHead ConvHead::create(nn::ParameterStore& store, const std::string& name, int in_channels, int hidden, int n_out,
                          std::mt19937_64& rng)
{
    ConvHead h;
    h.w1 = store.add(name + ".conv0.weight", nn::uniform_fan_in({hidden, in_channels, 3, 3}, in_channels * 9, rng));
    h.b1 = store.add(name + ".conv0.bias", nn::uniform_fan_in({hidden}, in_channels * 9, rng));
    h.w2 = store.add(name + ".conv1.weight", nn::uniform_fan_in({n_out, hidden, 1, 1}, hidden, rng));
    h.b2 = store.add(name + ".conv1.bias", nn::uniform_fan_in({n_out}, hidden, rng));
    return h;
}

nn::Var ConvHead::forward(const nn::Var& x, int out_h, int out_w) const
{
    nn::Var y = nn::conv2d(nn::relu(nn::conv2d(x, w1, b1, 1, 1)), w2, b2, 1, 0);
    return nn::upsample_bilinear(y, out_h, out_w);
}

void ConvHead::zero_output()
{
    w2.value().fill(0.0);
    b2.value().fill(0.0);
}

double dice_loss(const Tensor& probs, const LabelGrid& target, double eps)
{
    if (probs.rank() != 3)
        throw ShapeError("dice probabilities must be (K+1, H, W), got " + shape_string(probs.shape()));
    check_target(probs.dim(0), probs.dim(1), probs.dim(2), target);
    const int ch = probs.dim(0);
    return dice_from_sums(dice_sums(probs.data(), ch, target.size(), target), ch, eps);
}

Tensor dice_loss_grad(const Tensor& probs, const LabelGrid& target, double eps)
{
    if (probs.rank() != 3)
        throw ShapeError("dice probabilities must be (K+1, H, W), got " + shape_string(probs.shape()));
    check_target(probs.dim(0), probs.dim(1), probs.dim(2), target);
    const int ch = probs.dim(0);
    Tensor g(probs.shape());
    dice_grad_into(dice_sums(probs.data(), ch, target.size(), target), ch, target.size(), target, eps, 1.0, g.data());
    return g;
}

double boundary_bce(const Tensor& probs, const BinaryGrid& target)
{
    check_boundary(probs, target);
    double acc = 0.0;
    for (std::size_t i = 0; i < probs.size(); ++i)
        acc += bce_term(probs[i], target.values[i] != 0);
    return acc / static_cast<double>(probs.size());
}

Tensor boundary_bce_grad(const Tensor& probs, const BinaryGrid& target)
{
    check_boundary(probs, target);
    Tensor g(probs.shape());
    const double inv = 1.0 / static_cast<double>(probs.size());
    for (std::size_t i = 0; i < probs.size(); ++i)
        g[i] = bce_derivative(probs[i], target.values[i] != 0) * inv;
    return g;
}

nn::Var dice_loss_op(const nn::Var& probs, const std::vector<LabelGrid>& targets, double eps)
{
    const Tensor& pv = probs.value();
    if (pv.rank() != 4 || static_cast<std::size_t>(pv.dim(0)) != targets.size())
        throw ShapeError("dice_loss_op expects (N, K+1, H, W) with N targets, got " + shape_string(pv.shape()) +
                         " and " + std::to_string(targets.size()) + " targets");
    const int nb = pv.dim(0), ch = pv.dim(1);
    const std::size_t plane = static_cast<std::size_t>(pv.dim(2)) * pv.dim(3);
    std::vector<DiceSums> sums;
    double total = 0.0;
    for (int n = 0; n < nb; ++n) {
        check_target(ch, pv.dim(2), pv.dim(3), targets[n]);
        sums.push_back(dice_sums(pv.data() + n * ch * plane, ch, plane, targets[n]));
        total += dice_from_sums(sums.back(), ch, eps);
    }
    return nn::make_result(Tensor({1}, total / nb), {probs}, [=](nn::Node& self) {
        Tensor* g = nn::input_grad(self, 0);
        if (!g)
            return;
        const double scale = self.grad[0] / nb;
        for (int n = 0; n < nb; ++n)
            dice_grad_into(sums[n], ch, plane, targets[n], eps, scale, g->data() + n * ch * plane);
    });
}

nn::Var boundary_bce_op(const nn::Var& probs, const std::vector<BinaryGrid>& targets)
{
    const Tensor& pv = probs.value();
    if (pv.rank() != 4 || pv.dim(1) != 1 || static_cast<std::size_t>(pv.dim(0)) != targets.size())
        throw ShapeError("boundary_bce_op expects (N, 1, H, W) with N targets, got " + shape_string(pv.shape()));
    const std::size_t plane = static_cast<std::size_t>(pv.dim(2)) * pv.dim(3);
    for (const auto& t : targets)
        if (!t.same_size(pv.dim(2), pv.dim(3)))
            throw ShapeError("boundary target size does not match probabilities " + shape_string(pv.shape()));
    double acc = 0.0;
    for (std::size_t n = 0; n < targets.size(); ++n)
        for (std::size_t i = 0; i < plane; ++i)
            acc += bce_term(pv[n * plane + i], targets[n].values[i] != 0);
    const double inv = 1.0 / static_cast<double>(pv.size());
    return nn::make_result(Tensor({1}, acc * inv), {probs}, [=](nn::Node& self) {
        Tensor* g = nn::input_grad(self, 0);
        if (!g)
            return;
        const Tensor& p = self.inputs[0]->value;
        const double scale = self.grad[0] * inv;
        for (std::size_t n = 0; n < targets.size(); ++n)
            for (std::size_t i = 0; i < plane; ++i)
                (*g)[n * plane + i] += scale * bce_derivative(p[n * plane + i], targets[n].values[i] != 0);
    });
}

LabelGrid downsample_labels(const LabelGrid& mask, int height, int width)
{
    if (mask.same_size(height, width))
        return mask;
    LabelGrid out(height, width);
    // Sample at cell centres so each output label comes from inside its block.
    for (int y = 0; y < height; ++y) {
        const int sy = std::min(static_cast<int>((2LL * y + 1) * mask.height / (2LL * height)), mask.height - 1);
        for (int x = 0; x < width; ++x) {
            const int sx = std::min(static_cast<int>((2LL * x + 1) * mask.width / (2LL * width)), mask.width - 1);
            out(y, x) = mask(sy, sx);
        }
    }
    return out;
}

void LossWeights::validate() const
{
    if (!(lambda >= 0.0) || !std::isfinite(lambda))
        throw ConfigError("lambda must be a finite value >= 0");
    if (!(mu_aux >= 0.0) || !std::isfinite(mu_aux))
        throw ConfigError("mu_aux must be a finite value >= 0");
}

nlohmann::json LossReport::to_json() const
{
    return {{"step", step},          {"l_seg", l_seg}, {"l_boundary", l_boundary}, {"l_coarse", l_coarse},
            {"total", total},        {"lambda", lambda}, {"mu_aux", mu_aux}};
}

LossReport combine(double l_seg, double l_boundary, double l_coarse, const LossWeights& w)
{
    w.validate();
    LossReport r;
    r.l_seg = l_seg;
    r.l_boundary = w.use_boundary ? l_boundary : 0.0;
    r.l_coarse = w.use_coarse ? l_coarse : 0.0;
    r.lambda = w.use_boundary ? w.lambda : 0.0;
    r.mu_aux = w.use_coarse ? w.mu_aux : 0.0;
    r.total = r.l_seg + r.lambda * r.l_boundary + r.mu_aux * r.l_coarse;
    return r;
}

LossReport total_loss(const PredictionBundle& bundle, const LabelGrid& mask, const BinaryGrid& boundary,
                      const LossWeights& w)
{
    w.validate();
    const double l_seg = dice_loss(bundle.refined_probs, mask);
    double l_boundary = 0.0, l_coarse = 0.0;
    if (w.use_boundary && bundle.has_boundary())
        l_boundary = boundary_bce(bundle.boundary_probs, boundary);
    if (w.use_coarse && bundle.has_coarse())
        l_coarse = dice_loss(bundle.coarse_probs,
                             downsample_labels(mask, bundle.coarse_probs.dim(1), bundle.coarse_probs.dim(2)));
    LossWeights eff = w;
    eff.use_boundary = w.use_boundary && bundle.has_boundary();
    eff.use_coarse = w.use_coarse && bundle.has_coarse();
    return combine(l_seg, l_boundary, l_coarse, eff);
}

}  // namespace cgqr::heads
