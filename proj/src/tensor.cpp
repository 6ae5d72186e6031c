#include "cgqr/tensor.hpp"

#include <algorithm>
#include <cstdio>
#include <numeric>
#include <sstream>

namespace cgqr {

std::size_t Tensor::numel(const std::vector<int>& shape)
{
    std::size_t n = 1;
    for (int d : shape) {
        if (d < 0)
            throw ShapeError("negative dimension in shape " + shape_string(shape));
        n *= static_cast<std::size_t>(d);
    }
    return n;
}

Tensor::Tensor(std::vector<int> shape, double fill)
    : shape_(std::move(shape)), data_(numel(shape_), fill)
{
}

Tensor::Tensor(std::vector<int> shape, std::vector<double> values)
    : shape_(std::move(shape)), data_(std::move(values))
{
    if (data_.size() != numel(shape_))
        throw ShapeError("tensor data size " + std::to_string(data_.size()) + " does not match shape " +
                         shape_string(shape_));
}

void Tensor::fill(double v)
{
    std::fill(data_.begin(), data_.end(), v);
}

Tensor Tensor::reshaped(std::vector<int> shape) const
{
    return Tensor(std::move(shape), data_);
}

std::string shape_string(const std::vector<int>& shape)
{
    std::ostringstream os;
    os << '(';
    for (std::size_t i = 0; i < shape.size(); ++i)
        os << (i ? ", " : "") << shape[i];
    os << ')';
    return os.str();
}

std::uint64_t fnv1a(const void* bytes, std::size_t n, std::uint64_t seed)
{
    auto* p = static_cast<const unsigned char*>(bytes);
    std::uint64_t h = seed;
    for (std::size_t i = 0; i < n; ++i) {
        h ^= p[i];
        h *= 0x100000001b3ULL;
    }
    return h;
}

std::uint64_t hash_labels(const LabelGrid& mask)
{
    std::uint64_t h = fnv1a(&mask.height, sizeof(mask.height));
    h = fnv1a(&mask.width, sizeof(mask.width), h);
    return fnv1a(mask.values.data(), mask.values.size() * sizeof(std::int32_t), h);
}

std::string hex64(std::uint64_t v)
{
    char buf[17];
    std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(v));
    return buf;
}

}  // namespace cgqr
