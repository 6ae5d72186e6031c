#include "cgqr/autograd.hpp"

#include <Eigen/Core>

#include <algorithm>
#include <cmath>
#include <unordered_set>

namespace cgqr::nn {

namespace {

using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using RowMap = Eigen::Map<RowMat>;
using ConstRowMap = Eigen::Map<const RowMat>;

thread_local bool grad_enabled = true;

void require_rank4(const Tensor& t, const char* op)
{
    if (t.rank() != 4)
        throw ShapeError(std::string(op) + ": expected (N, C, H, W), got " + shape_string(t.shape()));
}

void topo_visit(Node* n, std::unordered_set<Node*>& seen, std::vector<Node*>& order)
{
    // Iterative post-order; graphs can be a few thousand nodes deep.
    std::vector<std::pair<Node*, std::size_t>> stack{{n, 0}};
    seen.insert(n);
    while (!stack.empty()) {
        auto& [node, next] = stack.back();
        if (next < node->inputs.size()) {
            Node* child = node->inputs[next++].get();
            if (child->requires_grad && !seen.contains(child)) {
                seen.insert(child);
                stack.emplace_back(child, 0);
            }
        } else {
            order.push_back(node);
            stack.pop_back();
        }
    }
}

struct BilinearAxis {
    std::vector<int> lo, hi;
    std::vector<double> frac;
};

BilinearAxis bilinear_axis(int in, int out)
{
    BilinearAxis a;
    a.lo.resize(out);
    a.hi.resize(out);
    a.frac.resize(out);
    const double scale = static_cast<double>(in) / out;
    for (int i = 0; i < out; ++i) {
        double src = std::max(scale * (i + 0.5) - 0.5, 0.0);
        int lo = std::min(static_cast<int>(std::floor(src)), in - 1);
        a.lo[i] = lo;
        a.hi[i] = std::min(lo + 1, in - 1);
        a.frac[i] = src - lo;
    }
    return a;
}

}  // namespace

Tensor& Node::grad_buffer()
{
    if (grad.size() != value.size() || grad.shape() != value.shape())
        grad = Tensor(value.shape(), 0.0);
    return grad;
}

Var::Var(Tensor value, bool requires_grad) : node_(std::make_shared<Node>())
{
    node_->value = std::move(value);
    node_->requires_grad = requires_grad;
}

void Var::zero_grad()
{
    if (node_ && !node_->grad.empty())
        node_->grad.fill(0.0);
}

void Var::backward()
{
    if (!node_ || node_->value.size() != 1)
        throw ShapeError("backward() requires a one-element result");
    if (!node_->requires_grad)
        return;
    std::unordered_set<Node*> seen;
    std::vector<Node*> order;
    topo_visit(node_.get(), seen, order);
    node_->grad_buffer()[0] += 1.0;
    for (auto it = order.rbegin(); it != order.rend(); ++it) {
        Node* n = *it;
        if (n->backward && !n->grad.empty())
            n->backward(*n);
    }
}

bool GradMode::enabled()
{
    return grad_enabled;
}

void GradMode::set_enabled(bool on)
{
    grad_enabled = on;
}

Var make_result(Tensor value, std::vector<Var> inputs, std::function<void(Node&)> backward)
{
    bool needs = false;
    if (GradMode::enabled())
        for (const auto& in : inputs)
            needs = needs || in.requires_grad();
    Var out(std::move(value), needs);
    if (needs) {
        auto& node = *out.node();
        node.inputs.reserve(inputs.size());
        for (auto& in : inputs)
            node.inputs.push_back(in.defined() ? in.node() : std::make_shared<Node>());
        node.backward = std::move(backward);
    }
    return out;
}

Tensor* input_grad(Node& self, std::size_t i)
{
    auto& in = self.inputs[i];
    return in->requires_grad ? &in->grad_buffer() : nullptr;
}

Var conv2d(const Var& x, const Var& weight, const Var& bias, int stride, int padding)
{
    const Tensor& xv = x.value();
    const Tensor& wv = weight.value();
    require_rank4(xv, "conv2d");
    if (wv.rank() != 4 || wv.dim(1) != xv.dim(1) || wv.dim(2) != wv.dim(3))
        throw ShapeError("conv2d: weight " + shape_string(wv.shape()) + " incompatible with input " +
                         shape_string(xv.shape()));
    const int n_batch = xv.dim(0), cin = xv.dim(1), h = xv.dim(2), w = xv.dim(3);
    const int cout = wv.dim(0), k = wv.dim(2);
    const int ho = (h + 2 * padding - k) / stride + 1;
    const int wo = (w + 2 * padding - k) / stride + 1;
    if (ho <= 0 || wo <= 0)
        throw ShapeError("conv2d: empty output for input " + shape_string(xv.shape()));
    const bool has_bias = bias.defined();
    if (has_bias && bias.value().size() != static_cast<std::size_t>(cout))
        throw ShapeError("conv2d: bias size does not match output channels");

    const int rows = cin * k * k;
    const int cols = ho * wo;
    const bool pointwise = (k == 1 && stride == 1 && padding == 0);

    auto im2col = [=](const double* src, RowMat& col) {
        col.resize(rows, cols);
        for (int c = 0; c < cin; ++c)
            for (int ky = 0; ky < k; ++ky)
                for (int kx = 0; kx < k; ++kx) {
                    double* dst = col.data() + static_cast<std::size_t>((c * k + ky) * k + kx) * cols;
                    const double* plane = src + static_cast<std::size_t>(c) * h * w;
                    for (int oy = 0; oy < ho; ++oy) {
                        const int iy = oy * stride - padding + ky;
                        double* row = dst + static_cast<std::size_t>(oy) * wo;
                        if (iy < 0 || iy >= h) {
                            std::fill(row, row + wo, 0.0);
                            continue;
                        }
                        for (int ox = 0; ox < wo; ++ox) {
                            const int ix = ox * stride - padding + kx;
                            row[ox] = (ix >= 0 && ix < w) ? plane[iy * w + ix] : 0.0;
                        }
                    }
                }
    };

    Tensor out({n_batch, cout, ho, wo});
    ConstRowMap wmat(wv.data(), cout, rows);
    const bool keep_cols = GradMode::enabled() && weight.requires_grad() && !pointwise;
    auto cols_cache = std::make_shared<std::vector<RowMat>>();
    if (keep_cols)
        cols_cache->resize(n_batch);
    RowMat col;
    for (int n = 0; n < n_batch; ++n) {
        const double* src = xv.data() + static_cast<std::size_t>(n) * cin * h * w;
        RowMap dst(out.data() + static_cast<std::size_t>(n) * cout * cols, cout, cols);
        if (pointwise) {
            dst.noalias() = wmat * ConstRowMap(src, cin, cols);
        } else {
            RowMat& c = keep_cols ? (*cols_cache)[n] : col;
            im2col(src, c);
            dst.noalias() = wmat * c;
        }
        if (has_bias) {
            Eigen::Map<const Eigen::VectorXd> b(bias.value().data(), cout);
            dst.colwise() += b;
        }
    }

    return make_result(std::move(out), {x, weight, bias},
                       [=](Node& self) {
                           const Tensor& xin = self.inputs[0]->value;
                           const Tensor& win = self.inputs[1]->value;
                           Tensor* gx = input_grad(self, 0);
                           Tensor* gw = input_grad(self, 1);
                           Tensor* gb = has_bias ? input_grad(self, 2) : nullptr;
                           ConstRowMap wm(win.data(), cout, rows);
                           RowMat scratch;
                           for (int n = 0; n < n_batch; ++n) {
                               ConstRowMap dout(self.grad.data() + static_cast<std::size_t>(n) * cout * cols, cout,
                                                cols);
                               const double* src = xin.data() + static_cast<std::size_t>(n) * cin * h * w;
                               if (gw) {
                                   RowMap dw(gw->data(), cout, rows);
                                   if (pointwise) {
                                       dw.noalias() += dout * ConstRowMap(src, cin, cols).transpose();
                                   } else {
                                       const RowMat* c = nullptr;
                                       if (!cols_cache->empty()) {
                                           c = &(*cols_cache)[n];
                                       } else {
                                           im2col(src, scratch);
                                           c = &scratch;
                                       }
                                       dw.noalias() += dout * c->transpose();
                                   }
                               }
                               if (gb) {
                                   Eigen::Map<Eigen::VectorXd> db(gb->data(), cout);
                                   db += dout.rowwise().sum();
                               }
                               if (gx) {
                                   double* dst = gx->data() + static_cast<std::size_t>(n) * cin * h * w;
                                   if (pointwise) {
                                       RowMap(dst, cin, cols).noalias() += wm.transpose() * dout;
                                       continue;
                                   }
                                   RowMat dcol = wm.transpose() * dout;
                                   for (int c = 0; c < cin; ++c)
                                       for (int ky = 0; ky < k; ++ky)
                                           for (int kx = 0; kx < k; ++kx) {
                                               const double* row =
                                                   dcol.data() + static_cast<std::size_t>((c * k + ky) * k + kx) * cols;
                                               double* plane = dst + static_cast<std::size_t>(c) * h * w;
                                               for (int oy = 0; oy < ho; ++oy) {
                                                   const int iy = oy * stride - padding + ky;
                                                   if (iy < 0 || iy >= h)
                                                       continue;
                                                   for (int ox = 0; ox < wo; ++ox) {
                                                       const int ix = ox * stride - padding + kx;
                                                       if (ix >= 0 && ix < w)
                                                           plane[iy * w + ix] += row[oy * wo + ox];
                                                   }
                                               }
                                           }
                               }
                           }
                       });
}

Var batch_norm(const Var& x, const Var& gamma, const Var& beta, BatchNormStats& stats, bool training,
               double momentum, double eps)
{
    const Tensor& xv = x.value();
    require_rank4(xv, "batch_norm");
    const int n_batch = xv.dim(0), ch = xv.dim(1);
    const std::size_t plane = static_cast<std::size_t>(xv.dim(2)) * xv.dim(3);
    if (gamma.value().size() != static_cast<std::size_t>(ch) || beta.value().size() != static_cast<std::size_t>(ch))
        throw ShapeError("batch_norm: affine size does not match channels");
    const double count = static_cast<double>(n_batch) * plane;

    std::vector<double> mean(ch), inv_std(ch);
    for (int c = 0; c < ch; ++c) {
        if (training) {
            double s = 0.0;
            for (int n = 0; n < n_batch; ++n) {
                const double* p = xv.data() + (static_cast<std::size_t>(n) * ch + c) * plane;
                for (std::size_t i = 0; i < plane; ++i)
                    s += p[i];
            }
            const double m = s / count;
            double v = 0.0;
            for (int n = 0; n < n_batch; ++n) {
                const double* p = xv.data() + (static_cast<std::size_t>(n) * ch + c) * plane;
                for (std::size_t i = 0; i < plane; ++i)
                    v += (p[i] - m) * (p[i] - m);
            }
            const double biased = v / count;
            mean[c] = m;
            inv_std[c] = 1.0 / std::sqrt(biased + eps);
            if (GradMode::enabled()) {
                const double unbiased = count > 1 ? v / (count - 1) : biased;
                stats.running_mean[c] = (1 - momentum) * stats.running_mean[c] + momentum * m;
                stats.running_var[c] = (1 - momentum) * stats.running_var[c] + momentum * unbiased;
            }
        } else {
            mean[c] = stats.running_mean[c];
            inv_std[c] = 1.0 / std::sqrt(stats.running_var[c] + eps);
        }
    }

    Tensor out(xv.shape());
    Tensor xhat(xv.shape());
    for (int n = 0; n < n_batch; ++n)
        for (int c = 0; c < ch; ++c) {
            const std::size_t off = (static_cast<std::size_t>(n) * ch + c) * plane;
            const double g = gamma.value()[c], b = beta.value()[c];
            for (std::size_t i = 0; i < plane; ++i) {
                const double xh = (xv[off + i] - mean[c]) * inv_std[c];
                xhat[off + i] = xh;
                out[off + i] = g * xh + b;
            }
        }

    return make_result(std::move(out), {x, gamma, beta},
                       [=, xhat = std::move(xhat)](Node& self) {
                           const Tensor& gv = self.inputs[1]->value;
                           Tensor* gx = input_grad(self, 0);
                           Tensor* gg = input_grad(self, 1);
                           Tensor* gbeta = input_grad(self, 2);
                           const Tensor& dy = self.grad;
                           for (int c = 0; c < ch; ++c) {
                               double sum_dy = 0.0, sum_dy_xhat = 0.0;
                               for (int n = 0; n < n_batch; ++n) {
                                   const std::size_t off = (static_cast<std::size_t>(n) * ch + c) * plane;
                                   for (std::size_t i = 0; i < plane; ++i) {
                                       sum_dy += dy[off + i];
                                       sum_dy_xhat += dy[off + i] * xhat[off + i];
                                   }
                               }
                               if (gg)
                                   (*gg)[c] += sum_dy_xhat;
                               if (gbeta)
                                   (*gbeta)[c] += sum_dy;
                               if (!gx)
                                   continue;
                               const double g = gv[c];
                               for (int n = 0; n < n_batch; ++n) {
                                   const std::size_t off = (static_cast<std::size_t>(n) * ch + c) * plane;
                                   for (std::size_t i = 0; i < plane; ++i) {
                                       if (training)
                                           (*gx)[off + i] += g * inv_std[c] *
                                                             (dy[off + i] - sum_dy / count -
                                                              xhat[off + i] * sum_dy_xhat / count);
                                       else
                                           (*gx)[off + i] += g * inv_std[c] * dy[off + i];
                                   }
                               }
                           }
                       });
}

Var relu(const Var& x)
{
    Tensor out = x.value();
    for (auto& v : out.storage())
        v = v < 0.0 ? 0.0 : v;  // NaN passes through so divergence stays visible
    return make_result(std::move(out), {x}, [](Node& self) {
        Tensor* gx = input_grad(self, 0);
        const Tensor& in = self.inputs[0]->value;
        for (std::size_t i = 0; i < in.size(); ++i)
            if (in[i] > 0.0)
                (*gx)[i] += self.grad[i];
    });
}

Var sigmoid(const Var& x)
{
    Tensor out = x.value();
    for (auto& v : out.storage())
        v = v >= 0 ? 1.0 / (1.0 + std::exp(-v)) : std::exp(v) / (1.0 + std::exp(v));
    return make_result(out, {x}, [out](Node& self) {
        Tensor* gx = input_grad(self, 0);
        for (std::size_t i = 0; i < out.size(); ++i)
            (*gx)[i] += self.grad[i] * out[i] * (1.0 - out[i]);
    });
}

Var add(const Var& a, const Var& b)
{
    if (!a.value().same_shape(b.value()))
        throw ShapeError("add: shapes " + shape_string(a.shape()) + " and " + shape_string(b.shape()) + " differ");
    Tensor out = a.value();
    for (std::size_t i = 0; i < out.size(); ++i)
        out[i] += b.value()[i];
    return make_result(std::move(out), {a, b}, [](Node& self) {
        for (std::size_t k = 0; k < 2; ++k)
            if (Tensor* g = input_grad(self, k))
                for (std::size_t i = 0; i < g->size(); ++i)
                    (*g)[i] += self.grad[i];
    });
}

Var upsample_nearest(const Var& x, int factor)
{
    const Tensor& xv = x.value();
    require_rank4(xv, "upsample_nearest");
    if (factor < 1)
        throw ShapeError("upsample_nearest: factor must be >= 1");
    if (factor == 1)
        return x;
    const int nb = xv.dim(0), ch = xv.dim(1), h = xv.dim(2), w = xv.dim(3);
    const int oh = h * factor, ow = w * factor;
    Tensor out({nb, ch, oh, ow});
    for (int n = 0; n < nb; ++n)
        for (int c = 0; c < ch; ++c)
            for (int y = 0; y < oh; ++y)
                for (int xx = 0; xx < ow; ++xx)
                    out.at(n, c, y, xx) = xv.at(n, c, y / factor, xx / factor);
    return make_result(std::move(out), {x}, [=](Node& self) {
        Tensor* gx = input_grad(self, 0);
        for (int n = 0; n < nb; ++n)
            for (int c = 0; c < ch; ++c)
                for (int y = 0; y < oh; ++y)
                    for (int xx = 0; xx < ow; ++xx)
                        gx->at(n, c, y / factor, xx / factor) += self.grad.at(n, c, y, xx);
    });
}

Tensor resize_bilinear(const Tensor& xv, int out_h, int out_w)
{
    require_rank4(xv, "resize_bilinear");
    const int nb = xv.dim(0), ch = xv.dim(1), h = xv.dim(2), w = xv.dim(3);
    if (out_h == h && out_w == w)
        return xv;
    const BilinearAxis ay = bilinear_axis(h, out_h), ax = bilinear_axis(w, out_w);
    Tensor out({nb, ch, out_h, out_w});
    for (int n = 0; n < nb; ++n)
        for (int c = 0; c < ch; ++c)
            for (int y = 0; y < out_h; ++y) {
                const double fy = ay.frac[y];
                for (int x = 0; x < out_w; ++x) {
                    const double fx = ax.frac[x];
                    const double top = (1 - fx) * xv.at(n, c, ay.lo[y], ax.lo[x]) + fx * xv.at(n, c, ay.lo[y], ax.hi[x]);
                    const double bot = (1 - fx) * xv.at(n, c, ay.hi[y], ax.lo[x]) + fx * xv.at(n, c, ay.hi[y], ax.hi[x]);
                    out.at(n, c, y, x) = (1 - fy) * top + fy * bot;
                }
            }
    return out;
}

Var upsample_bilinear(const Var& x, int out_h, int out_w)
{
    const Tensor& xv = x.value();
    require_rank4(xv, "upsample_bilinear");
    const int nb = xv.dim(0), ch = xv.dim(1), h = xv.dim(2), w = xv.dim(3);
    if (out_h == h && out_w == w)
        return x;
    Tensor out = resize_bilinear(xv, out_h, out_w);
    return make_result(std::move(out), {x}, [=](Node& self) {
        const BilinearAxis ay = bilinear_axis(h, out_h), ax = bilinear_axis(w, out_w);
        Tensor* gx = input_grad(self, 0);
        for (int n = 0; n < nb; ++n)
            for (int c = 0; c < ch; ++c)
                for (int y = 0; y < out_h; ++y) {
                    const double fy = ay.frac[y];
                    for (int xx = 0; xx < out_w; ++xx) {
                        const double fx = ax.frac[xx];
                        const double g = self.grad.at(n, c, y, xx);
                        gx->at(n, c, ay.lo[y], ax.lo[xx]) += g * (1 - fy) * (1 - fx);
                        gx->at(n, c, ay.lo[y], ax.hi[xx]) += g * (1 - fy) * fx;
                        gx->at(n, c, ay.hi[y], ax.lo[xx]) += g * fy * (1 - fx);
                        gx->at(n, c, ay.hi[y], ax.hi[xx]) += g * fy * fx;
                    }
                }
    });
}

Tensor softmax_channels(const Tensor& xv)
{
    require_rank4(xv, "softmax_channels");
    const int nb = xv.dim(0), ch = xv.dim(1);
    const std::size_t plane = static_cast<std::size_t>(xv.dim(2)) * xv.dim(3);
    Tensor out(xv.shape());
    for (int n = 0; n < nb; ++n) {
        const std::size_t base = static_cast<std::size_t>(n) * ch * plane;
        for (std::size_t i = 0; i < plane; ++i) {
            double mx = xv[base + i];
            for (int c = 1; c < ch; ++c)
                mx = std::max(mx, xv[base + c * plane + i]);
            double z = 0.0;
            for (int c = 0; c < ch; ++c) {
                const double e = std::exp(xv[base + c * plane + i] - mx);
                out[base + c * plane + i] = e;
                z += e;
            }
            for (int c = 0; c < ch; ++c)
                out[base + c * plane + i] /= z;
        }
    }
    return out;
}

Var softmax_channels(const Var& x)
{
    Tensor out = softmax_channels(x.value());
    const int nb = out.dim(0), ch = out.dim(1);
    const std::size_t plane = static_cast<std::size_t>(out.dim(2)) * out.dim(3);
    return make_result(out, {x}, [=](Node& self) {
        Tensor* gx = input_grad(self, 0);
        for (int n = 0; n < nb; ++n) {
            const std::size_t base = static_cast<std::size_t>(n) * ch * plane;
            for (std::size_t i = 0; i < plane; ++i) {
                double dot = 0.0;
                for (int c = 0; c < ch; ++c)
                    dot += self.grad[base + c * plane + i] * out[base + c * plane + i];
                for (int c = 0; c < ch; ++c) {
                    const std::size_t j = base + c * plane + i;
                    (*gx)[j] += out[j] * (self.grad[j] - dot);
                }
            }
        }
    });
}

Var sum_all(const Var& x)
{
    double s = 0.0;
    for (double v : x.value().values())
        s += v;
    return make_result(Tensor({1}, s), {x}, [](Node& self) {
        Tensor* gx = input_grad(self, 0);
        const double g = self.grad[0];
        for (auto& v : gx->storage())
            v += g;
    });
}

Var weighted_sum(const std::vector<Var>& scalars, const std::vector<double>& weights)
{
    if (scalars.size() != weights.size())
        throw ShapeError("weighted_sum: arity mismatch");
    double s = 0.0;
    for (std::size_t i = 0; i < scalars.size(); ++i) {
        if (scalars[i].value().size() != 1)
            throw ShapeError("weighted_sum: inputs must be scalars");
        s += weights[i] * scalars[i].value()[0];
    }
    return make_result(Tensor({1}, s), scalars, [weights](Node& self) {
        for (std::size_t i = 0; i < weights.size(); ++i)
            if (Tensor* g = input_grad(self, i))
                (*g)[0] += weights[i] * self.grad[0];
    });
}

}  // namespace cgqr::nn
