#pragma once

#include "cgqr/evaluator.hpp"
#include "cgqr/model.hpp"

#include <nlohmann/json.hpp>

#include <filesystem>
#include <functional>
#include <memory>
#include <ostream>
#include <stdexcept>
#include <string>
#include <vector>

namespace cgqr::train {

struct TrainConfig {
    int epochs = 100;
    int tf_epochs = 20;
    int batch_size = 4;
    double lr0 = 1e-4;
    double weight_decay = 1e-4;
    double lambda = 0.5;
    double mu_aux = 0.4;
    double clip_norm = 1.0;  // <= 0 disables clipping
    std::uint64_t seed = 0;
    data::Phase phase = data::Phase::None;
    model::Ablations ablations;

    void validate() const;
    nlohmann::json to_json() const;
    static TrainConfig from_json(const nlohmann::json& j);
};

/// 0.5 lr0 (1 + cos(pi epoch / E)); E = 0 yields lr0.
double lr_at(int epoch, const TrainConfig& cfg);

/// Adam moments with decoupled weight decay.
class AdamW {
public:
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;

    void step(nn::ParameterStore& store, double lr, double weight_decay);
    long steps() const { return t_; }
    const std::vector<Tensor>& first_moments() const { return m_; }
    const std::vector<Tensor>& second_moments() const { return v_; }

private:
    std::vector<Tensor> m_, v_;
    long t_ = 0;
};

/// Scales all gradients so their global L2 norm is at most max_norm; returns the norm before scaling.
double clip_grad_norm(nn::ParameterStore& store, double max_norm);

struct EpochRecord {
    int epoch = 0;
    double lr = 0.0;
    double val_dsc = 0.0;
    bool teacher_forcing = false;
    double train_loss = 0.0;
    bool improved = false;

    nlohmann::json to_json() const;
};

struct TrainState {
    std::unique_ptr<model::CgqrNet> net;
    AdamW optimizer;
    int epoch = 0;
    double best_val_dsc = -1.0;  // below any attainable DSC until the first validation
    std::uint64_t rng_draws = 0;
    TrainConfig config;
    model::ModelConfig model_config;
    std::filesystem::path best_checkpoint;
    std::filesystem::path last_checkpoint;
    std::vector<EpochRecord> history;
    std::vector<heads::LossReport> steps;
};

struct TrainOptions {
    std::filesystem::path out_dir;      // checkpoints and log; empty keeps everything in memory
    std::ostream* log = nullptr;        // JSONL sink in addition to <out_dir>/train_log.jsonl
    model::ContourHook contour_hook;    // receives every contour-source event
    std::function<void(const EpochRecord&)> on_epoch;
    int workers = 1;                    // validation parallelism
    nlohmann::json run_info;            // stored under "run" in every checkpoint's train_config
};

/// Raised when the loss becomes non-finite; a snapshot checkpoint is written first when out_dir is set.
class TrainingAborted : public std::runtime_error {
public:
    TrainingAborted(const std::string& what, std::filesystem::path snapshot)
        : std::runtime_error(what), snapshot_(std::move(snapshot)) {}
    const std::filesystem::path& snapshot() const { return snapshot_; }

private:
    std::filesystem::path snapshot_;
};

/// Mean foreground DSC of inference-mode predictions without teacher forcing.
double validate(const model::CgqrNet& net, const std::vector<data::ImageSample>& samples, int workers = 1);

/// Loss of one batch as a differentiable scalar plus the value-level report.
std::pair<nn::Var, heads::LossReport> batch_loss(const model::GraphOutputs& out, const model::Batch& batch,
                                                 const heads::LossWeights& weights);

TrainState train(const TrainConfig& cfg, const model::ModelConfig& model_cfg, const data::DatasetSplit& split,
                 const TrainOptions& options = {});

// ---------------------------------------------------------------------------
// Checkpoints: "CGQRCKPT" magic, u64 little-endian manifest length, JSON
// manifest, then float32 little-endian blocks (parameters, then normalization
// buffers as running_mean, running_var) in manifest order.
// ---------------------------------------------------------------------------

struct CheckpointInfo {
    model::ModelConfig model_config;
    nlohmann::json train_config;
    int epoch = 0;
    double best_val_dsc = 0.0;
};

void save_checkpoint(const std::filesystem::path& path, const model::CgqrNet& net, const nlohmann::json& train_config,
                     int epoch, double best_val_dsc);
/// Rebuilds the network described by the manifest and loads its values.
std::unique_ptr<model::CgqrNet> load_checkpoint(const std::filesystem::path& path, CheckpointInfo* info = nullptr);

}  // namespace cgqr::train
