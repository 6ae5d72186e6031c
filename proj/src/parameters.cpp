#include "cgqr/parameters.hpp"

#include <cmath>
#include <stdexcept>

namespace cgqr::nn {

Var ParameterStore::add(const std::string& name, Tensor init)
{
    if (find(name))
        throw std::logic_error("duplicate parameter name " + name);
    Var v(std::move(init), true);
    entries_.push_back({name, v});
    return v;
}

BatchNormStats& ParameterStore::add_batch_norm(const std::string& name, int channels)
{
    buffers_.push_back({name, std::make_unique<BatchNormStats>(channels)});
    return *buffers_.back().stats;
}

const ParameterStore::Entry* ParameterStore::find(const std::string& name) const
{
    for (const auto& e : entries_)
        if (e.name == name)
            return &e;
    return nullptr;
}

std::size_t ParameterStore::parameter_count() const
{
    std::size_t n = 0;
    for (const auto& e : entries_)
        n += e.var.value().size();
    return n;
}

void ParameterStore::zero_grad()
{
    for (auto& e : entries_)
        e.var.zero_grad();
}

std::uint64_t ParameterStore::checksum() const
{
    std::uint64_t h = 0xcbf29ce484222325ULL;
    for (const auto& e : entries_)
        h = fnv1a(e.var.value().data(), e.var.value().size() * sizeof(double), h);
    for (const auto& b : buffers_) {
        h = fnv1a(b.stats->running_mean.data(), b.stats->running_mean.size() * sizeof(double), h);
        h = fnv1a(b.stats->running_var.data(), b.stats->running_var.size() * sizeof(double), h);
    }
    return h;
}

void ParameterStore::copy_values_from(const ParameterStore& other)
{
    if (other.entries_.size() != entries_.size() || other.buffers_.size() != buffers_.size())
        throw ShapeError("parameter stores have different layouts");
    for (std::size_t i = 0; i < entries_.size(); ++i) {
        if (entries_[i].var.shape() != other.entries_[i].var.shape())
            throw ShapeError("parameter " + entries_[i].name + " shape mismatch");
        entries_[i].var.value() = other.entries_[i].var.value();
    }
    for (std::size_t i = 0; i < buffers_.size(); ++i)
        *buffers_[i].stats = *other.buffers_[i].stats;
}

Tensor uniform_fan_in(std::vector<int> shape, int fan_in, std::mt19937_64& rng)
{
    Tensor t(std::move(shape));
    const double bound = 1.0 / std::sqrt(static_cast<double>(fan_in));
    std::uniform_real_distribution<double> dist(-bound, bound);
    for (auto& v : t.storage())
        v = dist(rng);
    return t;
}

ConvBn ConvBn::create(ParameterStore& store, const std::string& name, int cin, int cout, int kernel, int stride,
                      std::mt19937_64& rng)
{
    ConvBn c;
    c.weight = store.add(name + ".conv.weight", uniform_fan_in({cout, cin, kernel, kernel}, cin * kernel * kernel, rng));
    c.gamma = store.add(name + ".bn.gamma", Tensor({cout}, 1.0));
    c.beta = store.add(name + ".bn.beta", Tensor({cout}, 0.0));
    c.stats = &store.add_batch_norm(name + ".bn", cout);
    c.stride = stride;
    c.padding = kernel / 2;
    return c;
}

std::size_t ConvBn::count(int cin, int cout, int kernel)
{
    return static_cast<std::size_t>(cout) * cin * kernel * kernel + 2u * cout;
}

Var ConvBn::forward(const Var& x, bool training, bool apply_relu) const
{
    Var y = batch_norm(conv2d(x, weight, Var{}, stride, padding), gamma, beta, *stats, training);
    return apply_relu ? relu(y) : y;
}

}  // namespace cgqr::nn
