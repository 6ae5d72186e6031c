#pragma once

#include <cstddef>
#include <cstdint>
#include <initializer_list>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace cgqr {

/// Thrown for violated shape contracts (mismatched or non-divisible sizes).
class ShapeError : public std::invalid_argument {
public:
    using std::invalid_argument::invalid_argument;
};

/// Thrown for invalid configuration values.
class ConfigError : public std::invalid_argument {
public:
    using std::invalid_argument::invalid_argument;
};

/// Dense row-major tensor of doubles. Rank is whatever the shape says;
/// the network uses (N, C, H, W) for feature maps and (rows, cols) for matrices.
class Tensor {
public:
    Tensor() = default;
    explicit Tensor(std::vector<int> shape, double fill = 0.0);
    Tensor(std::vector<int> shape, std::vector<double> values);

    const std::vector<int>& shape() const { return shape_; }
    int rank() const { return static_cast<int>(shape_.size()); }
    int dim(int axis) const { return shape_.at(static_cast<std::size_t>(axis)); }
    std::size_t size() const { return data_.size(); }
    bool empty() const { return data_.empty(); }

    double* data() { return data_.data(); }
    const double* data() const { return data_.data(); }
    std::span<double> values() { return data_; }
    std::span<const double> values() const { return data_; }
    std::vector<double>& storage() { return data_; }
    const std::vector<double>& storage() const { return data_; }

    double& operator[](std::size_t i) { return data_[i]; }
    double operator[](std::size_t i) const { return data_[i]; }

    double& at(int n, int c, int h, int w)
    {
        return data_[((static_cast<std::size_t>(n) * shape_[1] + c) * shape_[2] + h) * shape_[3] + w];
    }
    double at(int n, int c, int h, int w) const
    {
        return data_[((static_cast<std::size_t>(n) * shape_[1] + c) * shape_[2] + h) * shape_[3] + w];
    }

    void fill(double v);
    Tensor reshaped(std::vector<int> shape) const;

    bool same_shape(const Tensor& other) const { return shape_ == other.shape_; }
    bool operator==(const Tensor& other) const = default;

    static std::size_t numel(const std::vector<int>& shape);

private:
    std::vector<int> shape_;
    std::vector<double> data_;
};

std::string shape_string(const std::vector<int>& shape);

/// 2-D grid stored row-major; used for images, masks and boundary maps.
template <typename T>
struct Grid {
    int height = 0;
    int width = 0;
    std::vector<T> values;

    Grid() = default;
    Grid(int h, int w, T fill = T{}) : height(h), width(w), values(static_cast<std::size_t>(h) * w, fill) {}

    T& operator()(int y, int x) { return values[static_cast<std::size_t>(y) * width + x]; }
    const T& operator()(int y, int x) const { return values[static_cast<std::size_t>(y) * width + x]; }
    std::size_t size() const { return values.size(); }
    bool empty() const { return values.empty(); }
    bool same_size(int h, int w) const { return height == h && width == w; }
    template <typename U>
    bool same_size(const Grid<U>& o) const { return height == o.height && width == o.width; }
    bool operator==(const Grid&) const = default;
};

using ImageGrid = Grid<double>;
using LabelGrid = Grid<std::int32_t>;
using BinaryGrid = Grid<std::uint8_t>;

/// FNV-1a over raw bytes. Used for provenance and parameter checksums.
std::uint64_t fnv1a(const void* bytes, std::size_t n, std::uint64_t seed = 0xcbf29ce484222325ULL);
std::uint64_t hash_labels(const LabelGrid& mask);
std::string hex64(std::uint64_t v);

}  // namespace cgqr
