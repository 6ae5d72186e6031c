// Acceptance run: one PASS/FAIL line per criterion, nonzero exit if any fails.

#include "cgqr/cli.hpp"
#include "cgqr/image_io.hpp"
#include "cgqr/trainer.hpp"
#include "oracles/grid_oracles.hpp"
#include "oracles/mask_families.hpp"
#include "oracles/nn_oracles.hpp"

#include <chrono>
#include <cmath>
#include <filesystem>
#include <iostream>
#include <map>
#include <random>
#include <set>
#include <sstream>

using namespace cgqr;
namespace fs = std::filesystem;

namespace {

struct Outcome {
    bool pass = false;
    std::string detail;
};

struct CliResult {
    int code = 0;
    std::string out;
    std::string err;
};

CliResult cli_run(std::vector<std::string> args)
{
    std::ostringstream out, err;
    const int code = cli::run(args, out, err);
    return {code, out.str(), err.str()};
}

std::string fmt(double v)
{
    std::ostringstream s;
    s.precision(4);
    s << v;
    return s.str();
}

Tensor random_tensor(std::vector<int> shape, std::mt19937_64& rng, double scale = 1.0)
{
    std::normal_distribution<double> n(0.0, scale);
    Tensor t(std::move(shape));
    for (auto& v : t.storage())
        v = n(rng);
    return t;
}

query::Matrix random_matrix(int r, int c, std::mt19937_64& rng, double scale = 1.0)
{
    std::normal_distribution<double> n(0.0, scale);
    query::Matrix m(r, c);
    for (int i = 0; i < r; ++i)
        for (int j = 0; j < c; ++j)
            m(i, j) = n(rng);
    return m;
}

// Scalar <w, x> as a graph node.
nn::Var dot(const nn::Var& x, const Tensor& w)
{
    double s = 0.0;
    for (std::size_t i = 0; i < w.size(); ++i)
        s += w[i] * x.value()[i];
    return nn::make_result(Tensor({1}, s), {x}, [w](nn::Node& self) {
        if (Tensor* g = nn::input_grad(self, 0))
            for (std::size_t i = 0; i < w.size(); ++i)
                (*g)[i] += w[i] * self.grad[0];
    });
}

// Analytic vs central-difference gradient of objective() for every entry of vars.
double gradient_error(std::vector<nn::Var> vars, const std::function<nn::Var()>& objective)
{
    for (auto& v : vars)
        v.zero_grad();
    objective().backward();
    std::vector<double> analytic;
    std::vector<double*> ptrs;
    for (auto& v : vars) {
        const Tensor& g = v.grad();
        for (std::size_t i = 0; i < v.value().size(); ++i) {
            analytic.push_back(g.empty() ? 0.0 : g[i]);
            ptrs.push_back(&v.value()[i]);
        }
    }
    const auto numeric = oracle::numeric_gradient(
        [&]() {
            nn::NoGradGuard guard;
            return objective().value()[0];
        },
        ptrs);
    return oracle::relative_error(analytic, numeric);
}

std::vector<data::ImageSample> synth_samples(int patients, int frames, int size, std::uint64_t seed)
{
    data::SynthConfig sc;
    sc.n_patients = patients;
    sc.frames_per_patient = frames;
    sc.height = sc.width = size;
    sc.seed = seed;
    data::PreprocessConfig pc;
    pc.height = pc.width = size;
    return data::preprocess_all(data::generate_synthetic(sc), pc);
}

class Acceptance {
public:
    explicit Acceptance(fs::path root) : root_(std::move(root))
    {
        fs::remove_all(root_);
        fs::create_directories(root_);
    }

    Outcome overfit();
    Outcome identity_gate();
    Outcome attention_law();
    Outcome gradient_oracles();
    Outcome contour_oracle();
    Outcome loss_oracle();
    Outcome teacher_forcing();
    Outcome ablations();
    Outcome determinism();
    Outcome cross_domain();

private:
    // Trains the overfit configuration once per ablation set and caches the result.
    struct OverfitRun {
        int code = -1;
        double dsc = -1.0;
        double seconds = 0.0;
        fs::path checkpoint;
    };
    const OverfitRun& overfit_run(const std::string& ablation);
    const fs::path& overfit_data();

    fs::path root_;
    fs::path overfit_data_;
    std::map<std::string, OverfitRun> runs_;
};

const fs::path& Acceptance::overfit_data()
{
    if (overfit_data_.empty()) {
        overfit_data_ = root_ / "domain_a";
        const auto r = cli_run({"synth", "--out", overfit_data_.string(), "--patients", "4", "--frames", "4",
                                "--image-size", "64", "--classes", "3", "--seed", "0"});
        if (r.code != 0)
            throw std::runtime_error("synth failed: " + r.err);
    }
    return overfit_data_;
}

const Acceptance::OverfitRun& Acceptance::overfit_run(const std::string& ablation)
{
    if (auto it = runs_.find(ablation); it != runs_.end())
        return it->second;
    const fs::path out = root_ / ("overfit_" + (ablation.empty() ? std::string("full") : ablation));
    std::vector<std::string> args{"train",        "--data",   overfit_data().string(), "--out", out.string(),
                                  "--epochs",     "200",      "--tf-epochs",           "40",    "--profile",
                                  "desk",         "--image-size", "64",                "--seed", "0",
                                  "--validate-on-train"};
    if (!ablation.empty()) {
        args.push_back("--ablate");
        args.push_back(ablation);
    }
    const auto start = std::chrono::steady_clock::now();
    const auto r = cli_run(args);
    OverfitRun run;
    run.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    run.code = r.code;
    if (r.code == 0) {
        const auto j = nlohmann::json::parse(r.out).at("runs").at(0);
        run.dsc = j.at("best_val_dsc").get<double>();
        run.checkpoint = j.at("best_checkpoint").get<std::string>();
    }
    return runs_[ablation] = run;
}

Outcome Acceptance::overfit()
{
    const auto& r = overfit_run("");
    if (r.code != 0)
        return {false, "train exited with " + std::to_string(r.code)};
    const bool pass = r.dsc >= 0.90 && r.seconds <= 20 * 60;
    return {pass, "val-on-train DSC " + fmt(r.dsc) + ", runtime " + fmt(r.seconds) + " s (" +
                      std::to_string(cli::worker_count()) + " worker(s))"};
}

Outcome Acceptance::identity_gate()
{
    const auto samples = synth_samples(2, 1, 32, 3);
    model::CgqrNet net(model::ModelConfig::desk(), 9);
    if (net.gamma().value()[0] != 0.0)
        return {false, "gamma does not start at zero"};
    const auto batch = model::Batch::from_samples(samples, {0, 1});
    bool tokens_equal = true, logits_equal = true;
    for (bool training : {false, true}) {
        nn::NoGradGuard guard;
        const auto out = net.forward(batch, true, training);
        tokens_equal = tokens_equal && out.refined.value() == out.fused.value();
        logits_equal = logits_equal && net.segment(out.fused, 32, 32).value() == out.refined_logits.value();
    }

    // gamma = 0 on random attention problems
    std::mt19937_64 rng(1);
    for (int t = 0; t < 200; ++t) {
        const int m = 1 + rng() % 8, n = 1 + rng() % 40, d = 1 + rng() % 8;
        query::FusedTokens f{random_matrix(n, d, rng), 1, n};
        query::QueryBank q{random_matrix(m, d, rng), std::vector<query::Provenance>(m, query::Provenance::Base)};
        query::AttentionParams p{random_matrix(d, d, rng), random_matrix(d, d, rng), random_matrix(d, d, rng),
                                 random_matrix(d, d, rng), 0.0};
        tokens_equal = tokens_equal && query::refine(f, q, p).first.tokens == f.tokens;
    }
    return {tokens_equal && logits_equal, std::string("refined == fused: ") + (tokens_equal ? "exact" : "differs") +
                                              ", segmentation of refined == un-refined: " +
                                              (logits_equal ? "exact" : "differs")};
}

Outcome Acceptance::attention_law()
{
    std::mt19937_64 rng(2);
    double worst_sum = 0.0, min_weight = 1.0;
    for (int t = 0; t < 1000; ++t) {
        const int m = 1 + rng() % 16, n = 1 + rng() % 64, d = 1 + rng() % 16;
        const double scale = t % 2 ? 1.0 : 8.0;
        query::FusedTokens f{random_matrix(n, d, rng, scale), 1, n};
        query::QueryBank q{random_matrix(m, d, rng, scale), std::vector<query::Provenance>(m, query::Provenance::Base)};
        query::AttentionParams p{random_matrix(d, d, rng), random_matrix(d, d, rng), random_matrix(d, d, rng),
                                 random_matrix(d, d, rng), 0.5};
        const auto w = query::refine(f, q, p).second.weights;
        min_weight = std::min(min_weight, w.minCoeff());
        for (int i = 0; i < m; ++i)
            worst_sum = std::max(worst_sum, std::abs(w.row(i).sum() - 1.0));
    }
    return {worst_sum <= 1e-5 && min_weight >= 0.0,
            "1000 configurations, max |row sum - 1| " + fmt(worst_sum) + ", min weight " + fmt(min_weight)};
}

Outcome Acceptance::gradient_oracles()
{
    std::mt19937_64 rng(3);
    std::ostringstream detail;
    bool pass = true;

    // (a) cross-attention with the query embedding: W_q, W_Q, W_K, W_V, W_M and gamma
    {
        const int d = 3, k = 2;
        const Tensor descriptors = random_tensor({1, k, 6}, rng, 0.5);
        nn::Var grid(random_tensor({1, d, 2, 3}, rng), true);
        nn::Var proj(random_tensor({d, 6}, rng, 0.5), true), bias(random_tensor({d}, rng, 0.5), true);
        nn::Var base(random_tensor({2, d}, rng), true);
        nn::Var wq(random_tensor({d, d}, rng, 0.7), true), wk(random_tensor({d, d}, rng, 0.7), true);
        nn::Var wv(random_tensor({d, d}, rng, 0.7), true), wm(random_tensor({d, d}, rng, 0.7), true);
        nn::Var gamma(Tensor({1}, 0.6), true);
        const Tensor w = random_tensor({1, d, 2, 3}, rng);
        const double e = gradient_error({grid, proj, bias, base, wq, wk, wv, wm, gamma}, [&]() {
            auto q = query::embed_queries_op(descriptors, proj, bias, base, true);
            return dot(query::cross_attention_op(grid, q, wq, wk, wv, wm, gamma, nullptr), w);
        });
        pass = pass && e < 1e-5;
        detail << "attention " << fmt(e);
    }

    // (b) dice and (c) bce on 4x4
    {
        Tensor probs({3, 4, 4});
        std::uniform_real_distribution<double> u(0.05, 1.0);
        for (int i = 0; i < 16; ++i) {
            double z = 0.0;
            for (int c = 0; c < 3; ++c)
                z += probs[c * 16 + i] = u(rng);
            for (int c = 0; c < 3; ++c)
                probs[c * 16 + i] /= z;
        }
        LabelGrid target(4, 4);
        for (auto& v : target.values)
            v = static_cast<int>(rng() % 3);
        std::vector<double*> ptrs;
        for (auto& v : probs.storage())
            ptrs.push_back(&v);
        const auto g = heads::dice_loss_grad(probs, target);
        const double e_dice = oracle::relative_error(
            g.storage(), oracle::numeric_gradient([&]() { return heads::dice_loss(probs, target); }, ptrs));

        Tensor b({4, 4});
        BinaryGrid bt(4, 4);
        std::uniform_real_distribution<double> ub(0.05, 0.95);
        for (auto& v : b.storage())
            v = ub(rng);
        for (auto& v : bt.values)
            v = static_cast<int>(rng() % 2);
        std::vector<double*> bp;
        for (auto& v : b.storage())
            bp.push_back(&v);
        const auto gb = heads::boundary_bce_grad(b, bt);
        const double e_bce = oracle::relative_error(
            gb.storage(), oracle::numeric_gradient([&]() { return heads::boundary_bce(b, bt); }, bp));
        pass = pass && e_dice < 1e-5 && e_bce < 1e-5;
        detail << ", dice " << fmt(e_dice) << ", bce " << fmt(e_bce);
    }

    // (d) 1-stage encoder on 8x8, input and every parameter
    {
        encoder::EncoderConfig cfg;
        cfg.branch_channels = {2, 3, 4};
        cfg.branch_strides = {2, 4, 8};
        cfg.n_stages = 1;
        nn::ParameterStore store;
        encoder::Encoder enc(cfg, store, rng);
        for (auto& e : store.entries())
            if (e.name.ends_with(".bn.beta"))
                for (auto& v : e.var.value().storage())
                    v = 0.1 * (static_cast<double>(rng() % 7) - 3.0);
        nn::Var x(random_tensor({2, 1, 8, 8}, rng), true);
        std::array<Tensor, 3> w;
        {
            nn::NoGradGuard guard;
            const auto probe = enc.forward(x, true);
            for (int k = 0; k < 3; ++k)
                w[k] = random_tensor(probe[k].shape(), rng);
        }
        std::vector<nn::Var> vars{x};
        for (auto& e : store.entries())
            vars.push_back(e.var);
        const double e = gradient_error(vars, [&]() {
            auto out = enc.forward(x, true);
            return nn::weighted_sum({dot(out[0], w[0]), dot(out[1], w[1]), dot(out[2], w[2])}, {1.0, 1.0, 1.0});
        });
        pass = pass && e < 1e-5;
        detail << ", encoder " << fmt(e) << " (relative errors)";
    }
    return {pass, detail.str()};
}

Outcome Acceptance::contour_oracle()
{
    std::mt19937_64 rng(4);
    int traced = 0, trace_mismatch = 0, area_mismatch = 0;
    for (int t = 0; t < 300; ++t) {
        const LabelGrid m = t % 3 == 0   ? oracle::bernoulli_mask(rng, 16, 0.5)
                            : t % 3 == 1 ? oracle::bernoulli_mask(rng, 16, 0.75)
                                         : oracle::rectangle_union(rng, 16);
        const auto region = oracle::largest_component(m, 1);
        if (region.empty())
            continue;
        ++traced;
        const auto c = contour::extract_contours(m, 1)[0];
        std::set<std::pair<int, int>> got;
        for (const auto& p : c.traced)
            got.insert({p.x, p.y});
        trace_mismatch += got != oracle::outer_boundary(region, m.height, m.width);
        const double area = static_cast<double>(region.size()) / (m.height * m.width);
        area_mismatch += std::abs(contour::describe_all({c}, m.height, m.width)[0].area - area) > 2e-2;
    }

    // centroid against region enumeration on closed shapes
    int shapes = 0, centroid_mismatch = 0;
    double worst = 0.0;
    for (int t = 0; t < 150; ++t) {
        const LabelGrid m = oracle::closed_shape(rng, 16);
        const auto region = oracle::largest_component(m, 1);
        const auto centre = oracle::centroid(region, m.height, m.width);
        const auto d = contour::descriptors_from_mask(m, 1)[0];
        const double gap = std::max(std::abs(d.mu_x - centre.x), std::abs(d.mu_y - centre.y));
        worst = std::max(worst, gap);
        centroid_mismatch += gap >= 2e-2;
        ++shapes;
    }
    const bool pass = traced >= 100 && trace_mismatch == 0 && area_mismatch == 0 && centroid_mismatch == 0;
    return {pass, std::to_string(traced) + " random masks traced (" + std::to_string(trace_mismatch) +
                      " trace, " + std::to_string(area_mismatch) + " area mismatches); " + std::to_string(shapes) +
                      " closed shapes, worst centroid gap " + fmt(worst)};
}

Outcome Acceptance::loss_oracle()
{
    std::mt19937_64 rng(5);
    double worst = 0.0;
    for (int t = 0; t < 200; ++t) {
        const int k = 1 + static_cast<int>(rng() % 4);
        Tensor probs({k + 1, 5, 5});
        std::uniform_real_distribution<double> u(0.01, 1.0);
        for (int i = 0; i < 25; ++i) {
            double z = 0.0;
            for (int c = 0; c <= k; ++c)
                z += probs[c * 25 + i] = u(rng);
            for (int c = 0; c <= k; ++c)
                probs[c * 25 + i] /= z;
        }
        LabelGrid target(5, 5);
        for (auto& v : target.values)
            v = static_cast<int>(rng() % (k + 1));
        worst = std::max(worst, std::abs(heads::dice_loss(probs, target) -
                                         oracle::dice_loss(probs.storage(), target, k, heads::kDiceEps)));
    }

    bool linear = true;
    std::uniform_real_distribution<double> u(0.0, 2.0);
    for (int t = 0; t < 100; ++t) {
        const double seg = u(rng), bnd = u(rng), coarse = u(rng);
        heads::LossWeights a, b;
        a.lambda = u(rng);
        b.lambda = u(rng);
        const auto ra = heads::combine(seg, bnd, coarse, a), rb = heads::combine(seg, bnd, coarse, b);
        // exact up to the rounding of the two products
        const double expected = (b.lambda - a.lambda) * bnd;
        linear = linear && std::abs((rb.total - ra.total) - expected) <= 4 * std::numeric_limits<double>::epsilon() *
                                                                          (std::abs(rb.total) + std::abs(ra.total));
        linear = linear && std::abs(ra.total - (ra.l_seg + ra.lambda * ra.l_boundary + ra.mu_aux * ra.l_coarse)) < 1e-9;
    }
    return {worst <= 1e-9 && linear,
            "200 instances, max |dice - oracle| " + fmt(worst) + ", lambda linearity " + (linear ? "holds" : "broken")};
}

Outcome Acceptance::teacher_forcing()
{
    const auto samples = synth_samples(4, 1, 32, 7);
    const auto split = data::split_by_patient(samples, 0.5, 0);
    std::map<std::string, std::uint64_t> gt;
    for (const auto& s : split.train)
        gt[s.sample_id] = hash_labels(s.mask);

    int finished = 0, epoch1_ok = 0, epoch1 = 0, epoch2_ok = 0, epoch2 = 0;
    train::TrainOptions opt;
    opt.contour_hook = [&](const model::ContourSourceEvent& e) {
        if (finished == 0) {
            ++epoch1;
            epoch1_ok += e.from_ground_truth && e.source_hash == gt.at(e.sample_id);
        } else {
            ++epoch2;
            epoch2_ok += !e.from_ground_truth && e.source_hash != gt.at(e.sample_id);
        }
    };
    opt.on_epoch = [&](const train::EpochRecord&) { ++finished; };
    train::TrainConfig cfg;
    cfg.epochs = 2;
    cfg.tf_epochs = 1;
    cfg.batch_size = 2;
    const auto st = train::train(cfg, model::ModelConfig::desk(), split, opt);

    // Without teacher forcing the source is the argmax of the upsampled coarse map.
    int coarse_ok = 0, coarse_n = 0;
    std::vector<std::uint64_t> hook_hashes;
    model::ContourHook hook = [&](const model::ContourSourceEvent& e) { hook_hashes.push_back(e.source_hash); };
    const auto batch = model::Batch::from_samples(split.train, {0, 1});
    nn::NoGradGuard guard;
    const auto out = st.net->forward(batch, false, true, &hook);
    const Tensor& cp = out.coarse_probs.value();
    const int c = cp.dim(1), h = cp.dim(2), w = cp.dim(3);
    for (int n = 0; n < batch.size(); ++n) {
        Tensor one({1, c, h, w});
        std::copy(cp.data() + static_cast<std::size_t>(n) * c * h * w,
                  cp.data() + static_cast<std::size_t>(n + 1) * c * h * w, one.data());
        const Tensor up = nn::resize_bilinear(one, 32, 32);
        LabelGrid labels(32, 32, 0);
        for (int i = 0; i < 32 * 32; ++i)
            for (int k = 1; k < c; ++k)
                if (up[k * 1024 + i] > up[labels.values[i] * 1024 + i])
                    labels.values[i] = k;
        coarse_ok += hook_hashes.at(n) == hash_labels(labels);
        ++coarse_n;
    }

    const bool pass = epoch1 > 0 && epoch1_ok == epoch1 && epoch2 > 0 && epoch2_ok == epoch2 && coarse_ok == coarse_n;
    return {pass, "epoch 1: " + std::to_string(epoch1_ok) + "/" + std::to_string(epoch1) +
                      " from ground truth; epoch 2: " + std::to_string(epoch2_ok) + "/" + std::to_string(epoch2) +
                      " from predictions; coarse-argmax hash " + std::to_string(coarse_ok) + "/" +
                      std::to_string(coarse_n)};
}

Outcome Acceptance::ablations()
{
    const auto base_cfg = model::ModelConfig::desk();
    model::CgqrNet full(base_cfg, 0);
    const int d = base_cfg.token_dim, hidden = base_cfg.head_hidden, k = base_cfg.n_classes;
    const auto ch = base_cfg.encoder.branch_channels;
    const std::map<std::string, std::size_t> removed{
        {"no_boundary_head", heads::ConvHead::count(d, hidden, 1)},
        {"no_coarse_head", heads::CoarseHead::count(ch[2], k + 1)},
        {"no_contour_queries", static_cast<std::size_t>(d) * 6 + d},
        {"no_pyramid_fusion", static_cast<std::size_t>(d) * (ch[1] + ch[2])},
        {"no_teacher_forcing", 0},
    };

    const auto samples = synth_samples(2, 1, 32, 5);
    const auto batch = model::Batch::from_samples(samples, {0, 1});
    const auto full_out = full.forward(batch, true, false);

    std::ostringstream detail;
    bool pass = true;
    for (const auto& [name, delta] : removed) {
        auto cfg = base_cfg;
        cfg.ablations.enable(name);
        model::CgqrNet net(cfg, 0);
        const bool count_ok = net.parameter_count() + delta == full.parameter_count();
        const auto out = net.forward(batch, true, false);
        bool graph_ok = true;
        if (name == "no_boundary_head")
            graph_ok = !out.boundary_logits.defined() && full_out.boundary_logits.defined();
        else if (name == "no_coarse_head")
            graph_ok = !out.coarse_logits.defined() && full_out.coarse_logits.defined() && !out.contours.empty();
        else if (name == "no_contour_queries")
            graph_ok = out.query_count == cfg.base_queries && full_out.query_count == k + cfg.base_queries &&
                       out.contours.empty();
        else if (name == "no_pyramid_fusion") {
            // fused grid of sample 0 equals the finest-branch alignment alone
            const auto single = query::unflatten(
                query::fuse_pyramid(net.encoder().encode(samples[0].image), net.alignment(), true));
            const Tensor& fused = out.fused.value();
            double gap = 0.0;
            for (std::size_t i = 0; i < single.size(); ++i)
                gap = std::max(gap, std::abs(single[i] - fused[i]));
            graph_ok = gap < 1e-12 && net.alignment()[1].isZero(0.0) && net.alignment()[2].isZero(0.0);
        } else {
            int gt_sourced = 0;
            train::TrainOptions opt;
            opt.contour_hook = [&](const model::ContourSourceEvent& e) { gt_sourced += e.from_ground_truth; };
            train::TrainConfig tc;
            tc.epochs = 1;
            tc.tf_epochs = 1;
            tc.batch_size = 2;
            tc.ablations = cfg.ablations;
            data::DatasetSplit split = data::split_by_patient(synth_samples(4, 1, 32, 5), 0.5, 0);
            train::train(tc, base_cfg, split, opt);
            graph_ok = gt_sourced == 0;
        }
        pass = pass && count_ok && graph_ok;
        detail << name << (count_ok && graph_ok ? " ok" : " differs from expectation") << "; ";
    }

    const auto& full_run = overfit_run("");
    const auto& ablated = overfit_run("no_contour_queries");
    const bool directional = full_run.code == 0 && ablated.code == 0 && full_run.dsc >= ablated.dsc;
    detail << "overfit DSC full " << fmt(full_run.dsc) << " vs no_contour_queries " << fmt(ablated.dsc);
    return {pass && directional, detail.str()};
}

Outcome Acceptance::determinism()
{
    const fs::path data_dir = root_ / "det_data";
    if (cli_run({"synth", "--out", data_dir.string(), "--patients", "4", "--frames", "1", "--image-size", "32",
                 "--seed", "2"})
            .code != 0)
        return {false, "synth failed"};
    std::vector<std::string> checksums;
    for (const char* name : {"det_a", "det_b"}) {
        const auto r = cli_run({"train", "--data", data_dir.string(), "--out", (root_ / name).string(), "--epochs",
                                "3", "--tf-epochs", "1", "--batch", "2", "--image-size", "32", "--seed", "5"});
        if (r.code != 0)
            return {false, "train failed: " + r.err};
        checksums.push_back(nlohmann::json::parse(r.out).at("runs").at(0).at("checksum"));
    }
    const fs::path ckpt = root_ / "det_a" / "best.ckpt";
    std::vector<std::string> reports;
    for (const char* name : {"ev_a", "ev_b"}) {
        const auto r = cli_run({"eval", "--checkpoint", ckpt.string(), "--data", data_dir.string(), "--out",
                                (root_ / name).string()});
        if (r.code != 0)
            return {false, "eval failed: " + r.err};
        reports.push_back(io::read_file(root_ / name / "eval.json"));
    }
    const bool same_ckpt = checksums[0] == checksums[1];
    const bool same_eval = reports[0] == reports[1];
    return {same_ckpt && same_eval, "train checksums " + checksums[0] + " / " + checksums[1] + ", eval JSON " +
                                        (same_eval ? "byte-identical" : "differs")};
}

Outcome Acceptance::cross_domain()
{
    const auto& run = overfit_run("");
    if (run.code != 0)
        return {false, "no domain A checkpoint"};
    const fs::path shifted = root_ / "domain_b";
    if (cli_run({"synth", "--out", shifted.string(), "--patients", "4", "--frames", "4", "--image-size", "64",
                 "--classes", "3", "--seed", "0", "--domain-shift", "0.6", "--tag", "shifted"})
            .code != 0)
        return {false, "synth of domain B failed"};
    const auto r = cli_run({"xeval", "--checkpoint", run.checkpoint.string(), "--data", shifted.string(),
                            "--reference-data", overfit_data().string(), "--out", (root_ / "xeval").string()});
    if (r.code != 0)
        return {false, "xeval exited with " + std::to_string(r.code) + ": " + r.err};
    const auto j = nlohmann::json::parse(r.out);
    const double cross = j.at("mean_dsc").get<double>();
    const double in_domain = j.at("in_domain").at("mean_dsc").get<double>();
    const bool pass = std::isfinite(cross) && cross <= in_domain && j.at("dataset_tag") == "shifted";
    return {pass, "domain B DSC " + fmt(cross) + " vs in-domain " + fmt(in_domain)};
}

}  // namespace

int main(int argc, char** argv)
{
    const fs::path root = argc > 1 ? fs::path(argv[1]) : fs::temp_directory_path() / "cgqr_acceptance";
    Acceptance acc(root);
    const std::vector<std::pair<std::string, Outcome (Acceptance::*)()>> criteria{
        {"1 overfit", &Acceptance::overfit},
        {"2 identity gate", &Acceptance::identity_gate},
        {"3 attention law", &Acceptance::attention_law},
        {"4 gradient oracles", &Acceptance::gradient_oracles},
        {"5 contour oracle", &Acceptance::contour_oracle},
        {"6 loss oracle", &Acceptance::loss_oracle},
        {"7 teacher forcing", &Acceptance::teacher_forcing},
        {"8 ablations", &Acceptance::ablations},
        {"9 determinism", &Acceptance::determinism},
        {"10 cross-domain", &Acceptance::cross_domain},
    };
    int failed = 0;
    for (const auto& [name, fn] : criteria) {
        Outcome o;
        try {
            o = (acc.*fn)();
        } catch (const std::exception& e) {
            o = {false, std::string("exception: ") + e.what()};
        }
        failed += !o.pass;
        std::cout << (o.pass ? "PASS" : "FAIL") << "  " << name << ": " << o.detail << std::endl;
    }
    std::cout << (10 - failed) << "/10 criteria passed" << std::endl;
    return failed == 0 ? 0 : 1;
}
