#pragma once

#include "cgqr/autograd.hpp"

#include <cstdint>
#include <memory>
#include <random>
#include <string>
#include <vector>

namespace cgqr::nn {

/// Ordered registry of learned tensors and normalization buffers. Order of
/// registration is the serialization order.
class ParameterStore {
public:
    struct Entry {
        std::string name;
        Var var;
    };
    struct Buffer {
        std::string name;
        std::unique_ptr<BatchNormStats> stats;
    };

    Var add(const std::string& name, Tensor init);
    BatchNormStats& add_batch_norm(const std::string& name, int channels);

    std::vector<Entry>& entries() { return entries_; }
    const std::vector<Entry>& entries() const { return entries_; }
    std::vector<Buffer>& buffers() { return buffers_; }
    const std::vector<Buffer>& buffers() const { return buffers_; }

    const Entry* find(const std::string& name) const;
    std::size_t parameter_count() const;
    void zero_grad();
    /// FNV-1a over every parameter and buffer value, in registration order.
    std::uint64_t checksum() const;
    void copy_values_from(const ParameterStore& other);

private:
    std::vector<Entry> entries_;
    std::vector<Buffer> buffers_;
};

/// PyTorch-style default init: U(-1/sqrt(fan_in), 1/sqrt(fan_in)).
Tensor uniform_fan_in(std::vector<int> shape, int fan_in, std::mt19937_64& rng);

/// Conv (no bias) + batch norm with learned affine, optional ReLU.
struct ConvBn {
    Var weight;
    Var gamma;
    Var beta;
    BatchNormStats* stats = nullptr;
    int stride = 1;
    int padding = 1;

    static ConvBn create(ParameterStore& store, const std::string& name, int cin, int cout, int kernel, int stride,
                         std::mt19937_64& rng);
    static std::size_t count(int cin, int cout, int kernel);
    Var forward(const Var& x, bool training, bool apply_relu) const;
};

}  // namespace cgqr::nn
