#include "cgqr/trainer.hpp"

#include "cgqr/image_io.hpp"

#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <numbers>
#include <numeric>
#include <random>

namespace cgqr::train {

namespace fs = std::filesystem;

namespace {

constexpr char kMagic[8] = {'C', 'G', 'Q', 'R', 'C', 'K', 'P', 'T'};

void put_u64(std::string& out, std::uint64_t v)
{
    for (int i = 0; i < 8; ++i)
        out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

std::uint64_t get_u64(const std::string& in, std::size_t pos)
{
    std::uint64_t v = 0;
    for (int i = 0; i < 8; ++i)
        v |= static_cast<std::uint64_t>(static_cast<unsigned char>(in[pos + i])) << (8 * i);
    return v;
}

void put_f32(std::string& out, const Tensor& t)
{
    for (double d : t.values()) {
        const auto bits = std::bit_cast<std::uint32_t>(static_cast<float>(d));
        for (int i = 0; i < 4; ++i)
            out.push_back(static_cast<char>((bits >> (8 * i)) & 0xff));
    }
}

void get_f32(const std::string& in, std::size_t& pos, Tensor& t)
{
    if (pos + 4 * t.size() > in.size())
        throw io::IoError("checkpoint truncated");
    for (auto& d : t.storage()) {
        std::uint32_t bits = 0;
        for (int i = 0; i < 4; ++i)
            bits |= static_cast<std::uint32_t>(static_cast<unsigned char>(in[pos + i])) << (8 * i);
        d = std::bit_cast<float>(bits);
        pos += 4;
    }
}

bool all_finite(const heads::LossReport& r)
{
    return std::isfinite(r.l_seg) && std::isfinite(r.l_boundary) && std::isfinite(r.l_coarse) && std::isfinite(r.total);
}

class JsonlLog {
public:
    JsonlLog(const fs::path& dir, std::ostream* extra) : extra_(extra)
    {
        if (!dir.empty()) {
            fs::create_directories(dir);
            file_.open(dir / "train_log.jsonl", std::ios::trunc);
            if (!file_)
                throw io::IoError("cannot write " + (dir / "train_log.jsonl").string());
        }
    }
    void write(const nlohmann::json& j)
    {
        const std::string line = j.dump();
        if (file_.is_open())
            file_ << line << '\n';
        if (extra_)
            *extra_ << line << '\n';
    }

private:
    std::ofstream file_;
    std::ostream* extra_;
};

}  // namespace

void TrainConfig::validate() const
{
    if (epochs < 0)
        throw ConfigError("epochs must be >= 0");
    if (tf_epochs < 0 || tf_epochs > epochs)
        throw ConfigError("teacher-forcing epochs must lie in [0, epochs]");
    if (batch_size < 1)
        throw ConfigError("batch size must be >= 1");
    if (!(lr0 > 0.0))
        throw ConfigError("learning rate must be > 0");
    if (!(weight_decay >= 0.0))
        throw ConfigError("weight decay must be >= 0");
    heads::LossWeights{lambda, mu_aux}.validate();
}

nlohmann::json TrainConfig::to_json() const
{
    return {{"epochs", epochs},       {"tf_epochs", tf_epochs},       {"batch_size", batch_size},
            {"lr0", lr0},             {"weight_decay", weight_decay}, {"lambda", lambda},
            {"mu_aux", mu_aux},       {"clip_norm", clip_norm},       {"seed", seed},
            {"phase", data::to_string(phase)}, {"ablations", ablations.enabled()}};
}

TrainConfig TrainConfig::from_json(const nlohmann::json& j)
{
    TrainConfig c;
    c.epochs = j.at("epochs").get<int>();
    c.tf_epochs = j.at("tf_epochs").get<int>();
    c.batch_size = j.at("batch_size").get<int>();
    c.lr0 = j.at("lr0").get<double>();
    c.weight_decay = j.at("weight_decay").get<double>();
    c.lambda = j.at("lambda").get<double>();
    c.mu_aux = j.at("mu_aux").get<double>();
    c.clip_norm = j.at("clip_norm").get<double>();
    c.seed = j.at("seed").get<std::uint64_t>();
    c.phase = data::parse_phase(j.at("phase").get<std::string>());
    for (const auto& a : j.at("ablations"))
        c.ablations.enable(a.get<std::string>());
    return c;
}

double lr_at(int epoch, const TrainConfig& cfg)
{
    if (epoch < 0 || epoch > cfg.epochs)
        throw ConfigError("epoch " + std::to_string(epoch) + " outside [0, " + std::to_string(cfg.epochs) + "]");
    if (cfg.epochs == 0)
        return cfg.lr0;
    return 0.5 * cfg.lr0 * (1.0 + std::cos(std::numbers::pi * epoch / cfg.epochs));
}

void AdamW::step(nn::ParameterStore& store, double lr, double weight_decay)
{
    auto& entries = store.entries();
    if (m_.empty()) {
        for (const auto& e : entries) {
            m_.emplace_back(e.var.shape());
            v_.emplace_back(e.var.shape());
        }
    }
    ++t_;
    const double c1 = 1.0 - std::pow(beta1, static_cast<double>(t_));
    const double c2 = 1.0 - std::pow(beta2, static_cast<double>(t_));
    for (std::size_t i = 0; i < entries.size(); ++i) {
        nn::Var& p = entries[i].var;
        const Tensor& g = p.grad();
        if (g.empty())
            continue;
        Tensor& w = p.value();
        Tensor& m = m_[i];
        Tensor& v = v_[i];
        for (std::size_t j = 0; j < w.size(); ++j) {
            m[j] = beta1 * m[j] + (1.0 - beta1) * g[j];
            v[j] = beta2 * v[j] + (1.0 - beta2) * g[j] * g[j];
            w[j] -= lr * weight_decay * w[j];
            w[j] -= lr * (m[j] / c1) / (std::sqrt(v[j] / c2) + eps);
        }
    }
}

double clip_grad_norm(nn::ParameterStore& store, double max_norm)
{
    double sq = 0.0;
    for (auto& e : store.entries())
        for (double g : e.var.grad().values())
            sq += g * g;
    const double norm = std::sqrt(sq);
    if (max_norm > 0.0 && norm > max_norm) {
        const double s = max_norm / (norm + 1e-12);
        for (auto& e : store.entries())
            if (!e.var.grad().empty())
                for (double& g : e.var.grad_buffer().storage())
                    g *= s;
    }
    return norm;
}

nlohmann::json EpochRecord::to_json() const
{
    return {{"type", "epoch"},   {"epoch", epoch},           {"lr", lr},
            {"val_dsc", val_dsc}, {"teacher_forcing", teacher_forcing}, {"train_loss", train_loss},
            {"improved", improved}};
}

double validate(const model::CgqrNet& net, const std::vector<data::ImageSample>& samples, int workers)
{
    if (samples.empty())
        throw ConfigError("validation needs at least one sample");
    return eval::evaluate(net, samples, "validation", eval::Aggregation::Micro, workers).mean_dsc;
}

std::pair<nn::Var, heads::LossReport> batch_loss(const model::GraphOutputs& out, const model::Batch& batch,
                                                 const heads::LossWeights& weights)
{
    std::vector<nn::Var> terms{heads::dice_loss_op(out.refined_probs, batch.masks)};
    double l_boundary = 0.0, l_coarse = 0.0;
    heads::LossWeights eff = weights;
    eff.use_boundary = weights.use_boundary && out.boundary_probs.defined();
    eff.use_coarse = weights.use_coarse && out.coarse_probs.defined();
    std::vector<double> coeffs{1.0};
    if (eff.use_boundary) {
        terms.push_back(heads::boundary_bce_op(out.boundary_probs, batch.boundaries));
        l_boundary = terms.back().value()[0];
        coeffs.push_back(weights.lambda);
    }
    if (eff.use_coarse) {
        const Tensor& cp = out.coarse_probs.value();
        std::vector<LabelGrid> small;
        for (const auto& m : batch.masks)
            small.push_back(heads::downsample_labels(m, cp.dim(2), cp.dim(3)));
        terms.push_back(heads::dice_loss_op(out.coarse_probs, small));
        l_coarse = terms.back().value()[0];
        coeffs.push_back(weights.mu_aux);
    }
    heads::LossReport report = heads::combine(terms[0].value()[0], l_boundary, l_coarse, eff);
    return {nn::weighted_sum(terms, coeffs), report};
}

TrainState train(const TrainConfig& cfg_in, const model::ModelConfig& model_cfg_in, const data::DatasetSplit& split,
                 const TrainOptions& options)
{
    // Recording must be on even when the caller sits inside a NoGradGuard.
    nn::GradModeGuard recording(true);
    cfg_in.validate();
    if (split.train.empty())
        throw ConfigError("training split is empty");
    if (split.val.empty())
        throw ConfigError("validation split is empty");

    TrainState st;
    st.config = cfg_in;
    st.model_config = model_cfg_in;
    st.model_config.ablations = cfg_in.ablations;
    st.net = std::make_unique<model::CgqrNet>(st.model_config, cfg_in.seed);
    const TrainConfig& cfg = st.config;

    JsonlLog log(options.out_dir, options.log);
    nlohmann::json cfg_json = cfg.to_json();
    if (!options.run_info.is_null())
        cfg_json["run"] = options.run_info;
    const bool write_files = !options.out_dir.empty();
    if (write_files) {
        st.best_checkpoint = options.out_dir / "best.ckpt";
        st.last_checkpoint = options.out_dir / "last.ckpt";
    }

    heads::LossWeights weights{cfg.lambda, cfg.mu_aux, !cfg.ablations.no_boundary_head, !cfg.ablations.no_coarse_head};
    std::mt19937_64 rng(cfg.seed);
    std::vector<std::size_t> order(split.train.size());
    long step = 0;

    auto finish_epoch = [&](int epoch, double lr, bool tf, double train_loss) {
        EpochRecord rec;
        rec.epoch = epoch;
        rec.lr = lr;
        rec.teacher_forcing = tf;
        rec.train_loss = train_loss;
        rec.val_dsc = validate(*st.net, split.val, options.workers);
        // Strict improvement only; ties keep the earlier checkpoint.
        if (rec.val_dsc > st.best_val_dsc) {
            st.best_val_dsc = rec.val_dsc;
            rec.improved = true;
            if (write_files)
                save_checkpoint(st.best_checkpoint, *st.net, cfg_json, epoch, st.best_val_dsc);
        }
        st.epoch = epoch;
        st.history.push_back(rec);
        log.write(rec.to_json());
        if (options.on_epoch)
            options.on_epoch(rec);
    };

    if (cfg.epochs == 0)
        finish_epoch(0, lr_at(0, cfg), false, 0.0);

    for (int epoch = 1; epoch <= cfg.epochs; ++epoch) {
        const double lr = lr_at(epoch - 1, cfg);
        const bool tf = epoch <= cfg.tf_epochs && !cfg.ablations.no_teacher_forcing;
        std::iota(order.begin(), order.end(), 0);
        std::shuffle(order.begin(), order.end(), rng);
        ++st.rng_draws;

        double loss_sum = 0.0;
        int n_batches = 0;
        for (std::size_t start = 0; start < order.size(); start += cfg.batch_size) {
            const std::size_t end = std::min(order.size(), start + static_cast<std::size_t>(cfg.batch_size));
            const std::vector<std::size_t> idx(order.begin() + start, order.begin() + end);
            const model::Batch batch = model::Batch::from_samples(split.train, idx);

            const model::ContourHook* hook = options.contour_hook ? &options.contour_hook : nullptr;
            const model::GraphOutputs out = st.net->forward(batch, tf, true, hook);
            auto [loss, report] = batch_loss(out, batch, weights);
            report.step = ++step;
            if (!all_finite(report)) {
                fs::path snap;
                if (write_files) {
                    snap = options.out_dir / "nonfinite_snapshot.ckpt";
                    save_checkpoint(snap, *st.net, cfg_json, epoch, st.best_val_dsc);
                    nlohmann::json diag = report.to_json();
                    diag["epoch"] = epoch;
                    diag["batch"] = batch.ids;
                    io::write_atomic(options.out_dir / "nonfinite_snapshot.json", diag.dump(2) + "\n");
                }
                throw TrainingAborted("non-finite loss at step " + std::to_string(step) + " (epoch " +
                                          std::to_string(epoch) + ")",
                                      snap);
            }

            st.net->store().zero_grad();
            loss.backward();
            if (cfg.clip_norm > 0.0)
                clip_grad_norm(st.net->store(), cfg.clip_norm);
            st.optimizer.step(st.net->store(), lr, cfg.weight_decay);

            nlohmann::json j = report.to_json();
            j["type"] = "step";
            j["epoch"] = epoch;
            j["teacher_forcing"] = tf;
            log.write(j);
            st.steps.push_back(report);
            loss_sum += report.total;
            ++n_batches;
        }
        finish_epoch(epoch, lr, tf, loss_sum / std::max(1, n_batches));
    }

    if (write_files)
        save_checkpoint(st.last_checkpoint, *st.net, cfg_json, st.epoch, st.best_val_dsc);
    return st;
}

void save_checkpoint(const fs::path& path, const model::CgqrNet& net, const nlohmann::json& train_config, int epoch,
                     double best_val_dsc)
{
    const auto& store = net.store();
    nlohmann::json params = nlohmann::json::array();
    for (const auto& e : store.entries())
        params.push_back({{"name", e.name}, {"shape", e.var.shape()}});
    nlohmann::json buffers = nlohmann::json::array();
    for (const auto& b : store.buffers())
        buffers.push_back({{"name", b.name}, {"channels", b.stats->running_mean.size()}});
    const nlohmann::json manifest{{"format", 1},
                                  {"model_config", net.config().to_json()},
                                  {"train_config", train_config},
                                  {"epoch", epoch},
                                  {"best_val_dsc", best_val_dsc},
                                  {"parameters", params},
                                  {"buffers", buffers}};
    const std::string header = manifest.dump();
    std::string bytes(kMagic, sizeof(kMagic));
    put_u64(bytes, header.size());
    bytes += header;
    for (const auto& e : store.entries())
        put_f32(bytes, e.var.value());
    for (const auto& b : store.buffers()) {
        put_f32(bytes, b.stats->running_mean);
        put_f32(bytes, b.stats->running_var);
    }
    io::write_atomic(path, bytes);
}

std::unique_ptr<model::CgqrNet> load_checkpoint(const fs::path& path, CheckpointInfo* info)
{
    const std::string bytes = io::read_file(path);
    if (bytes.size() < 16 || std::memcmp(bytes.data(), kMagic, sizeof(kMagic)) != 0)
        throw io::IoError(path.string() + " is not a checkpoint");
    const std::uint64_t len = get_u64(bytes, 8);
    if (16 + len > bytes.size())
        throw io::IoError("checkpoint manifest truncated in " + path.string());
    nlohmann::json manifest;
    try {
        manifest = nlohmann::json::parse(bytes.substr(16, len));
    } catch (const nlohmann::json::exception& e) {
        throw io::IoError("bad checkpoint manifest in " + path.string() + ": " + e.what());
    }
    const auto cfg = model::ModelConfig::from_json(manifest.at("model_config"));
    auto net = std::make_unique<model::CgqrNet>(cfg, 0);
    auto& store = net->store();
    const auto& params = manifest.at("parameters");
    if (params.size() != store.entries().size() || manifest.at("buffers").size() != store.buffers().size())
        throw io::IoError("checkpoint layout does not match its model config");
    std::size_t pos = 16 + len;
    for (std::size_t i = 0; i < params.size(); ++i) {
        auto& e = store.entries()[i];
        if (params[i].at("name").get<std::string>() != e.name ||
            params[i].at("shape").get<std::vector<int>>() != e.var.shape())
            throw io::IoError("checkpoint parameter " + params[i].at("name").get<std::string>() + " does not match");
        get_f32(bytes, pos, e.var.value());
    }
    for (auto& b : store.buffers()) {
        get_f32(bytes, pos, b.stats->running_mean);
        get_f32(bytes, pos, b.stats->running_var);
    }
    if (pos != bytes.size())
        throw io::IoError("trailing bytes in checkpoint " + path.string());
    if (info) {
        info->model_config = cfg;
        info->train_config = manifest.at("train_config");
        info->epoch = manifest.at("epoch").get<int>();
        info->best_val_dsc = manifest.at("best_val_dsc").get<double>();
    }
    return net;
}

}  // namespace cgqr::train
