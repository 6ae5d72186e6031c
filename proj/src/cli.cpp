#include "cgqr/cli.hpp"

#include "cgqr/evaluator.hpp"
#include "cgqr/image_io.hpp"
#include "cgqr/trainer.hpp"

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include <algorithm>
#include <bit>
#include <cstdlib>
#include <filesystem>
#include <optional>
#include <set>
#include <sstream>
#include <thread>

namespace cgqr::cli {

namespace fs = std::filesystem;

namespace {

std::string trim(const std::string& s)
{
    const auto b = s.find_first_not_of(" \t\r");
    if (b == std::string::npos)
        return {};
    const auto e = s.find_last_not_of(" \t\r");
    return s.substr(b, e - b + 1);
}

// Flags that take no value; a config entry for them must be true or false.
const std::set<std::string>& bare_flags()
{
    static const std::set<std::string> f{"emit-panels", "validate-on-train", "no-clip"};
    return f;
}

bool parse_bool(const std::string& key, const std::string& v)
{
    std::string s = v;
    std::transform(s.begin(), s.end(), s.begin(), [](unsigned char c) { return std::tolower(c); });
    if (s == "true" || s == "1" || s == "yes" || s == "on")
        return true;
    if (s == "false" || s == "0" || s == "no" || s == "off")
        return false;
    throw ConfigError("config key '" + key + "' expects true or false, got '" + v + "'");
}

// Everything the subcommands can be told; each subcommand registers a subset.
struct Options {
    fs::path data;
    fs::path out;
    fs::path checkpoint;
    fs::path image;
    fs::path mask;
    fs::path reference_data;
    std::string config;
    std::string sample;
    std::string tag;
    std::string phase = "none";
    std::string report = "json";
    std::string aggregation = "micro";
    std::string profile = "desk";
    std::vector<std::string> ablate;
    int epochs = 100;
    int tf_epochs = 20;
    int batch = 4;
    int image_size = 256;
    int patients = 10;
    int frames = 4;
    int classes = 3;
    double lr = 1e-4;
    double lambda = 0.5;
    double mu_aux = 0.4;
    double weight_decay = 1e-4;
    double clip = 1.0;
    double split_ratio = 0.8;
    double noise = 0.3;
    double contrast = 0.7;
    double domain_shift = 0.0;
    std::uint64_t seed = 0;
    bool emit_panels = false;
    bool validate_on_train = false;
    bool no_clip = false;
};

int detect_classes(const fs::path& root, const std::vector<data::RawSample>& raw)
{
    const fs::path manifest = root / "manifest.json";
    if (fs::exists(manifest)) {
        auto j = nlohmann::json::parse(io::read_file(manifest), nullptr, false);
        if (j.is_object() && j.contains("n_classes") && j["n_classes"].is_number_integer())
            return j["n_classes"].get<int>();
    }
    int k = 0;
    for (const auto& r : raw)
        for (auto v : r.mask.values)
            k = std::max(k, static_cast<int>(v));
    return k;
}

std::vector<data::RawSample> filter_phase(const std::vector<data::RawSample>& raw, data::Phase phase)
{
    if (phase == data::Phase::None)
        return raw;
    std::vector<data::RawSample> out;
    for (const auto& r : raw)
        if (r.phase == phase)
            out.push_back(r);
    if (out.empty())
        throw ConfigError("dataset has no samples with phase " + data::to_string(phase));
    return out;
}

std::vector<data::ImageSample> load_samples(const fs::path& root, int image_size, data::Phase phase,
                                            int* n_classes = nullptr)
{
    auto raw = data::load_dataset(root);
    if (raw.empty())
        throw ConfigError("dataset " + root.string() + " contains no samples");
    if (n_classes)
        *n_classes = detect_classes(root, raw);
    raw = filter_phase(raw, phase);
    data::PreprocessConfig pc;
    pc.height = pc.width = image_size;
    return data::preprocess_all(raw, pc);
}

void write_text(const fs::path& path, const std::string& text)
{
    io::write_atomic(path, text);
}

// Checkpoint plus the evaluation image size recorded by `train`.
struct LoadedModel {
    std::unique_ptr<model::CgqrNet> net;
    train::CheckpointInfo info;
    int image_size = 256;
    std::uint64_t seed = 0;
};

LoadedModel load_model(const Options& o, const CLI::App& sub)
{
    LoadedModel m;
    m.net = train::load_checkpoint(o.checkpoint, &m.info);
    const auto& tc = m.info.train_config;
    if (tc.contains("seed"))
        m.seed = tc["seed"].get<std::uint64_t>();
    if (sub.count("--image-size"))
        m.image_size = o.image_size;
    else if (tc.contains("run") && tc["run"].contains("image_size"))
        m.image_size = tc["run"]["image_size"].get<int>();
    return m;
}

std::string render(const eval::EvalReport& r, const std::string& format)
{
    if (format == "table")
        return r.to_table();
    if (format == "csv")
        return r.to_csv();
    return r.to_json().dump(2) + "\n";
}

std::string report_extension(const std::string& format)
{
    return format == "table" ? "txt" : format;
}

void emit_all_panels(const model::CgqrNet& net, const std::vector<data::ImageSample>& samples,
                     const fs::path& dir, int workers)
{
    const auto results = model::forward_many(net, samples, workers);
    for (std::size_t i = 0; i < samples.size(); ++i)
        eval::emit_panels(samples[i], results[i].bundle, results[i].contours, dir, net.config().n_classes);
}

// ---------------------------------------------------------------------------

int cmd_synth(const Options& o, std::ostream& out)
{
    data::SynthConfig sc;
    sc.n_patients = o.patients;
    sc.frames_per_patient = o.frames;
    sc.height = sc.width = o.image_size;
    sc.n_classes = o.classes;
    sc.noise_level = o.noise;
    sc.contrast = o.contrast;
    sc.domain_shift = o.domain_shift;
    sc.seed = o.seed;
    sc.validate();
    const auto samples = data::generate_synthetic(sc);

    fs::path name = o.out;
    if (!name.has_filename())
        name = name.parent_path();
    nlohmann::json manifest;
    manifest["tag"] = o.tag.empty() ? name.filename().string() : o.tag;
    manifest["n_classes"] = sc.n_classes;
    manifest["seed"] = sc.seed;
    manifest["synth"] = sc.to_json();
    data::write_dataset(o.out, samples, manifest);

    nlohmann::json summary{{"dataset", o.out.string()},
                           {"tag", manifest["tag"]},
                           {"patients", sc.n_patients},
                           {"samples", samples.size()},
                           {"seed", sc.seed}};
    out << summary.dump() << "\n";
    return kExitOk;
}

int cmd_train(const Options& o, const CLI::App& sub, std::ostream& out)
{
    train::TrainConfig tc;
    tc.epochs = o.epochs;
    // The built-in warm-up length shrinks to fit short runs; an explicit value is validated as given.
    tc.tf_epochs = sub.count("--tf-epochs") ? o.tf_epochs : std::min(o.tf_epochs, o.epochs);
    tc.batch_size = o.batch;
    tc.lr0 = o.lr;
    tc.lambda = o.lambda;
    tc.mu_aux = o.mu_aux;
    tc.weight_decay = o.weight_decay;
    tc.clip_norm = o.no_clip ? 0.0 : o.clip;
    tc.seed = o.seed;
    for (const auto& a : o.ablate)
        tc.ablations.enable(a);
    tc.validate();

    model::ModelConfig mc = o.profile == "full" ? model::ModelConfig{} : model::ModelConfig::desk();

    auto raw = data::load_dataset(o.data);
    if (raw.empty())
        throw ConfigError("dataset " + o.data.string() + " contains no samples");
    mc.n_classes = detect_classes(o.data, raw);
    mc.ablations = tc.ablations;
    mc.validate();
    const std::string tag = data::dataset_tag(o.data);

    std::vector<data::Phase> phases;
    if (o.phase == "both")
        phases = {data::Phase::ED, data::Phase::ES};
    else
        phases = {data::parse_phase(o.phase)};

    const int workers = worker_count();
    nlohmann::json runs = nlohmann::json::array();
    for (auto phase : phases) {
        tc.phase = phase;
        data::PreprocessConfig pc;
        pc.height = pc.width = o.image_size;
        const auto samples = data::preprocess_all(filter_phase(raw, phase), pc);

        data::DatasetSplit split;
        if (o.validate_on_train) {
            split.train = samples;
            split.val = samples;
        } else {
            split = data::split_by_patient(samples, o.split_ratio, o.seed);
        }

        train::TrainOptions opt;
        opt.out_dir = phases.size() > 1 ? o.out / data::to_string(phase) : o.out;
        opt.workers = workers;
        opt.run_info = {{"image_size", o.image_size},
                        {"profile", o.profile},
                        {"data_tag", tag},
                        {"validate_on_train", o.validate_on_train},
                        {"split_ratio", o.split_ratio}};
        fs::create_directories(opt.out_dir);

        const auto st = train::train(tc, mc, split, opt);
        nlohmann::json r{{"phase", data::to_string(phase)},
                         {"seed", tc.seed},
                         {"epochs", st.epoch},
                         {"best_val_dsc", st.best_val_dsc},
                         {"checksum", hex64(st.net->store().checksum())},
                         {"parameters", st.net->parameter_count()},
                         {"train_samples", split.train.size()},
                         {"val_samples", split.val.size()},
                         {"best_checkpoint", st.best_checkpoint.string()},
                         {"last_checkpoint", st.last_checkpoint.string()}};
        write_text(opt.out_dir / "summary.json", r.dump(2) + "\n");
        runs.push_back(r);
    }
    out << nlohmann::json{{"runs", runs}}.dump() << "\n";
    return kExitOk;
}

int cmd_eval(const Options& o, const CLI::App& sub, bool cross, std::ostream& out)
{
    const auto m = load_model(o, sub);
    const int workers = worker_count();
    const auto phase = data::parse_phase(o.phase);
    const auto agg = eval::parse_aggregation(o.aggregation);

    int k = 0;
    const auto samples = load_samples(o.data, m.image_size, phase, &k);
    if (k > m.net->config().n_classes)
        throw ConfigError("dataset has " + std::to_string(k) + " classes, checkpoint was trained for " +
                          std::to_string(m.net->config().n_classes));
    const auto report = eval::evaluate(*m.net, samples, data::dataset_tag(o.data), agg, workers);

    std::string text;
    if (o.report == "json") {
        nlohmann::json j = report.to_json();
        j["seed"] = m.seed;
        j["checkpoint_epoch"] = m.info.epoch;
        j["image_size"] = m.image_size;
        if (cross) {
            j["mode"] = "xeval";
            const auto& tc = m.info.train_config;
            if (tc.contains("run") && tc["run"].contains("data_tag"))
                j["source_tag"] = tc["run"]["data_tag"];
            if (!o.reference_data.empty()) {
                const auto ref = load_samples(o.reference_data, m.image_size, phase);
                const auto in_domain =
                    eval::evaluate(*m.net, ref, data::dataset_tag(o.reference_data), agg, workers);
                j["in_domain"] = in_domain.to_json();
                j["gap"] = in_domain.mean_dsc - report.mean_dsc;
            }
        }
        text = j.dump(2) + "\n";
    } else {
        text = render(report, o.report);
    }
    out << text;

    if (!o.out.empty()) {
        fs::create_directories(o.out);
        write_text(o.out / ((cross ? "xeval." : "eval.") + report_extension(o.report)), text);
        if (o.emit_panels)
            emit_all_panels(*m.net, samples, o.out / "panels", workers);
    } else if (o.emit_panels) {
        throw ConfigError("--emit-panels needs --out");
    }
    return kExitOk;
}

int cmd_predict(const Options& o, const CLI::App& sub, std::ostream& out)
{
    const auto m = load_model(o, sub);
    data::RawSample raw;
    raw.image = io::image_from_gray8(io::read_pgm(o.image));
    raw.mask = o.mask.empty() ? LabelGrid(raw.image.height, raw.image.width)
                              : io::labels_from_gray8(io::read_pgm(o.mask));
    raw.patient_id = o.image.stem().string();
    data::PreprocessConfig pc;
    pc.height = pc.width = m.image_size;
    data::ImageSample sample = data::preprocess(raw, pc);
    sample.sample_id = o.image.stem().string();

    const auto res = model::forward_pass(*m.net, sample, false);
    const LabelGrid pred = model::argmax_labels(res.bundle.refined_probs);

    const int k = m.net->config().n_classes;
    std::vector<long long> counts(k + 1, 0);
    for (auto v : pred.values)
        ++counts[v];
    nlohmann::json j{{"sample_id", sample.sample_id},
                     {"image_size", m.image_size},
                     {"seed", m.seed},
                     {"class_pixels", counts},
                     {"queries", res.query_count}};

    fs::create_directories(o.out);
    io::write_pgm(o.out / (sample.sample_id + "_mask.pgm"), io::to_gray8(pred));
    write_text(o.out / (sample.sample_id + "_prediction.json"), j.dump(2) + "\n");
    if (o.emit_panels)
        eval::emit_panels(sample, res.bundle, res.contours, o.out, k);
    out << j.dump() << "\n";
    return kExitOk;
}

std::string float32_le(const query::Matrix& m)
{
    // Row-major, one float per entry.
    std::string bytes(static_cast<std::size_t>(m.size()) * 4, '\0');
    std::size_t pos = 0;
    for (Eigen::Index r = 0; r < m.rows(); ++r)
        for (Eigen::Index c = 0; c < m.cols(); ++c) {
            const float f = static_cast<float>(m(r, c));
            const auto u = std::bit_cast<std::uint32_t>(f);
            for (int b = 0; b < 4; ++b)
                bytes[pos++] = static_cast<char>((u >> (8 * b)) & 0xff);
        }
    return bytes;
}

int cmd_inspect(const Options& o, const CLI::App& sub, std::ostream& out)
{
    const auto m = load_model(o, sub);
    const auto samples = load_samples(o.data, m.image_size, data::parse_phase(o.phase));
    const data::ImageSample* chosen = &samples.front();
    if (!o.sample.empty()) {
        auto it = std::find_if(samples.begin(), samples.end(),
                               [&](const data::ImageSample& s) { return s.sample_id == o.sample; });
        if (it == samples.end())
            throw ConfigError("sample '" + o.sample + "' not found in " + o.data.string());
        chosen = &*it;
    }
    const auto res = model::forward_pass(*m.net, *chosen, false);
    const auto& cfg = m.net->config();
    const int s1 = cfg.encoder.branch_strides[0];

    const int contour_queries = cfg.ablations.no_contour_queries ? 0 : cfg.n_classes;
    nlohmann::json provenance = nlohmann::json::array();
    for (int q = 0; q < res.query_count; ++q)
        provenance.push_back(q < contour_queries ? "contour" : "base");
    nlohmann::json descriptors = nlohmann::json::array();
    for (const auto& d : res.descriptors)
        descriptors.push_back(d.as_array());

    nlohmann::json header{{"sample_id", chosen->sample_id},
                          {"file", "attention.f32"},
                          {"dtype", "float32"},
                          {"byte_order", "little"},
                          {"layout", "row-major"},
                          {"shape", {res.trace.weights.rows(), res.trace.weights.cols()}},
                          {"token_grid", {m.image_size / s1, m.image_size / s1}},
                          {"query_provenance", provenance},
                          {"gamma", m.net->gamma().value()[0]},
                          {"descriptors", descriptors},
                          {"seed", m.seed}};

    fs::create_directories(o.out);
    write_text(o.out / "attention.f32", float32_le(res.trace.weights));
    write_text(o.out / "attention.json", header.dump(2) + "\n");
    write_text(o.out / "contours.csv", contour::contours_csv(res.contours));
    out << nlohmann::json{{"sample_id", chosen->sample_id},
                          {"attention", (o.out / "attention.f32").string()},
                          {"contours", (o.out / "contours.csv").string()}}
               .dump()
        << "\n";
    return kExitOk;
}

}  // namespace

std::map<std::string, std::string> parse_config_text(const std::string& text)
{
    std::map<std::string, std::string> kv;
    std::istringstream is(text);
    std::string line;
    int lineno = 0;
    while (std::getline(is, line)) {
        ++lineno;
        if (auto hash = line.find('#'); hash != std::string::npos)
            line.erase(hash);
        line = trim(line);
        if (line.empty())
            continue;
        const auto eq = line.find('=');
        if (eq == std::string::npos)
            throw ConfigError("config line " + std::to_string(lineno) + " is not key=value: '" + line + "'");
        std::string key = trim(line.substr(0, eq));
        std::replace(key.begin(), key.end(), '_', '-');
        if (key.empty())
            throw ConfigError("config line " + std::to_string(lineno) + " has an empty key");
        if (!kv.emplace(key, trim(line.substr(eq + 1))).second)
            throw ConfigError("config key '" + key + "' repeated");
    }
    return kv;
}

std::vector<std::string> expand_config(const std::vector<std::string>& args)
{
    std::string path;
    std::set<std::string> given;
    for (std::size_t i = 0; i < args.size(); ++i) {
        const std::string& a = args[i];
        if (a.rfind("--", 0) != 0)
            continue;
        std::string name = a.substr(2);
        std::optional<std::string> inline_value;
        if (auto eq = name.find('='); eq != std::string::npos) {
            inline_value = name.substr(eq + 1);
            name = name.substr(0, eq);
        }
        if (name == "config") {
            if (inline_value)
                path = *inline_value;
            else if (i + 1 < args.size())
                path = args[i + 1];
        }
        given.insert(name);
    }
    if (path.empty())
        return args;

    std::vector<std::string> out = args;
    for (const auto& [key, value] : parse_config_text(io::read_file(path))) {
        if (key == "config")
            throw ConfigError("config files cannot include other config files");
        if (given.contains(key))
            continue;
        if (bare_flags().contains(key)) {
            if (parse_bool(key, value))
                out.push_back("--" + key);
            continue;
        }
        if (key == "ablate") {
            std::istringstream is(value);
            std::string item;
            while (std::getline(is, item, ','))
                if (!trim(item).empty()) {
                    out.push_back("--ablate");
                    out.push_back(trim(item));
                }
            continue;
        }
        out.push_back("--" + key);
        out.push_back(value);
    }
    return out;
}

int worker_count()
{
    const int hw = std::max(1u, std::thread::hardware_concurrency());
    const char* env = std::getenv("CGQR_NUM_WORKERS");
    if (!env || !*env)
        return hw;
    char* end = nullptr;
    const long v = std::strtol(env, &end, 10);
    if (*end != '\0' || v < 1)
        throw ConfigError(std::string("CGQR_NUM_WORKERS must be a positive integer, got '") + env + "'");
    return static_cast<int>(std::min<long>(hw, v));
}

int run(const std::vector<std::string>& args_in, std::ostream& out, std::ostream& err)
{
    Options o;
    CLI::App app{"Contour-guided query refinement for echocardiography segmentation", "cgqr"};
    app.require_subcommand(1);

    auto add_config = [&](CLI::App* s) { s->add_option("--config", o.config, "flat key=value file")->check(CLI::ExistingFile); };
    auto add_seed = [&](CLI::App* s) { s->add_option("--seed", o.seed, "random seed")->capture_default_str(); };
    auto add_phase = [&](CLI::App* s) {
        s->add_option("--phase", o.phase, "cardiac phase filter")
            ->check(CLI::IsMember({"ed", "es", "both", "none"}, CLI::ignore_case))
            ->capture_default_str();
    };
    auto add_data = [&](CLI::App* s, bool required) {
        auto* opt = s->add_option("--data", o.data, "dataset directory")->check(CLI::ExistingDirectory);
        if (required)
            opt->required();
    };
    auto add_checkpoint = [&](CLI::App* s) {
        s->add_option("--checkpoint", o.checkpoint, "checkpoint file")->required()->check(CLI::ExistingFile);
    };
    auto add_image_size = [&](CLI::App* s) {
        s->add_option("--image-size", o.image_size, "square side length")->check(CLI::PositiveNumber)
            ->capture_default_str();
    };

    auto* synth = app.add_subcommand("synth", "generate a synthetic dataset");
    synth->add_option("--out", o.out, "dataset directory")->required();
    synth->add_option("--patients", o.patients)->capture_default_str();
    synth->add_option("--frames", o.frames, "frames per patient")->capture_default_str();
    synth->add_option("--classes", o.classes, "foreground classes")->capture_default_str();
    synth->add_option("--noise", o.noise, "speckle strength")->capture_default_str();
    synth->add_option("--contrast", o.contrast)->capture_default_str();
    synth->add_option("--domain-shift", o.domain_shift)->capture_default_str();
    synth->add_option("--tag", o.tag, "dataset tag (defaults to the directory name)");
    add_image_size(synth);
    add_seed(synth);
    add_config(synth);

    auto* train_cmd = app.add_subcommand("train", "train and checkpoint a model");
    add_data(train_cmd, true);
    train_cmd->add_option("--out", o.out, "run directory")->required();
    train_cmd->add_option("--epochs", o.epochs)->capture_default_str();
    train_cmd->add_option("--tf-epochs", o.tf_epochs, "teacher forcing epochs")->capture_default_str();
    train_cmd->add_option("--batch", o.batch)->capture_default_str();
    train_cmd->add_option("--lr", o.lr)->capture_default_str();
    train_cmd->add_option("--lambda", o.lambda, "boundary loss weight")->capture_default_str();
    train_cmd->add_option("--mu-aux", o.mu_aux, "coarse loss weight")->capture_default_str();
    train_cmd->add_option("--weight-decay", o.weight_decay)->capture_default_str();
    train_cmd->add_option("--clip", o.clip, "global gradient norm bound")->capture_default_str();
    train_cmd->add_flag("--no-clip", o.no_clip, "disable gradient clipping");
    train_cmd->add_option("--split-ratio", o.split_ratio, "fraction of patients used for training")
        ->capture_default_str();
    train_cmd->add_flag("--validate-on-train", o.validate_on_train, "validate on the training samples");
    train_cmd->add_option("--profile", o.profile, "model size")
        ->check(CLI::IsMember({"desk", "full"}))
        ->capture_default_str();
    train_cmd->add_option("--ablate", o.ablate, "disable a component (repeatable)")
        ->check(CLI::IsMember(model::Ablations::names()));
    add_phase(train_cmd);
    add_image_size(train_cmd);
    add_seed(train_cmd);
    add_config(train_cmd);

    std::vector<CLI::App*> evals;
    for (const char* name : {"eval", "xeval"}) {
        auto* s = app.add_subcommand(name, std::string(name) == "eval" ? "evaluate a checkpoint"
                                                                       : "evaluate a checkpoint on another domain");
        add_checkpoint(s);
        add_data(s, true);
        s->add_option("--out", o.out, "directory for the report and panels");
        s->add_option("--report", o.report, "report format")
            ->check(CLI::IsMember({"json", "table", "csv"}))
            ->capture_default_str();
        s->add_option("--aggregation", o.aggregation, "DSC pooling")
            ->check(CLI::IsMember({"micro", "macro"}))
            ->capture_default_str();
        s->add_flag("--emit-panels", o.emit_panels, "write per-sample figure panels");
        add_phase(s);
        add_image_size(s);
        add_config(s);
        evals.push_back(s);
    }
    evals[1]->add_option("--reference-data", o.reference_data, "in-domain dataset for the gap")
        ->check(CLI::ExistingDirectory);

    auto* predict = app.add_subcommand("predict", "segment a single image");
    add_checkpoint(predict);
    predict->add_option("--image", o.image, "input PGM")->required()->check(CLI::ExistingFile);
    predict->add_option("--mask", o.mask, "optional ground-truth PGM for the panels")->check(CLI::ExistingFile);
    predict->add_option("--out", o.out, "output directory")->required();
    predict->add_flag("--emit-panels", o.emit_panels, "write the figure panels");
    add_image_size(predict);
    add_config(predict);

    auto* inspect = app.add_subcommand("inspect", "dump attention weights and contours");
    add_checkpoint(inspect);
    add_data(inspect, true);
    inspect->add_option("--sample", o.sample, "sample id (defaults to the first)");
    inspect->add_option("--out", o.out, "output directory")->required();
    add_phase(inspect);
    add_image_size(inspect);
    add_config(inspect);

    try {
        std::vector<std::string> args = expand_config(args_in);
        std::reverse(args.begin(), args.end());
        app.parse(args);
        std::transform(o.phase.begin(), o.phase.end(), o.phase.begin(),
                       [](unsigned char c) { return std::tolower(c); });
        if (o.phase == "both" && !train_cmd->parsed())
            throw ConfigError("--phase both only applies to train");

        if (synth->parsed())
            return cmd_synth(o, out);
        if (train_cmd->parsed())
            return cmd_train(o, *train_cmd, out);
        if (evals[0]->parsed())
            return cmd_eval(o, *evals[0], false, out);
        if (evals[1]->parsed())
            return cmd_eval(o, *evals[1], true, out);
        if (predict->parsed())
            return cmd_predict(o, *predict, out);
        return cmd_inspect(o, *inspect, out);
    } catch (const CLI::CallForHelp&) {
        out << app.help();
        return kExitOk;
    } catch (const CLI::CallForAllHelp&) {
        out << app.help("", CLI::AppFormatMode::All);
        return kExitOk;
    } catch (const CLI::ParseError& e) {
        err << "error: " << e.what() << "\n\n" << app.help();
        return kExitValidation;
    } catch (const std::invalid_argument& e) {
        // ConfigError and ShapeError
        err << "error: " << e.what() << "\n";
        return kExitValidation;
    } catch (const train::TrainingAborted& e) {
        err << "training aborted: " << e.what();
        if (!e.snapshot().empty())
            err << " (snapshot " << e.snapshot().string() << ")";
        err << "\n";
        return kExitRuntime;
    } catch (const std::exception& e) {
        err << "error: " << e.what() << "\n";
        return kExitRuntime;
    }
}

}  // namespace cgqr::cli
