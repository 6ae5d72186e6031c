#include "cgqr/evaluator.hpp"

#include "cgqr/image_io.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <sstream>

namespace cgqr::eval {

namespace {

constexpr std::array<std::array<std::uint8_t, 3>, 6> kPalette{{
    {230, 40, 40}, {40, 200, 60}, {50, 90, 230}, {235, 200, 30}, {30, 200, 210}, {200, 60, 200}}};

std::string class_name(int k, int n_classes)
{
    if (n_classes == 3) {
        static const char* names[] = {"LV_endo", "LV_epi", "LA"};
        return names[k - 1];
    }
    return "class_" + std::to_string(k);
}

io::Gray8 label_panel(const LabelGrid& labels, int n_classes)
{
    io::Gray8 g{labels.width, labels.height, std::vector<std::uint8_t>(labels.size())};
    for (std::size_t i = 0; i < labels.size(); ++i)
        g.pixels[i] = static_cast<std::uint8_t>(std::lround(255.0 * labels.values[i] / n_classes));
    return g;
}

LabelGrid upsample_labels(const LabelGrid& src, int height, int width)
{
    LabelGrid out(height, width);
    for (int y = 0; y < height; ++y)
        for (int x = 0; x < width; ++x)
            out(y, x) = src(std::min(y * src.height / height, src.height - 1),
                            std::min(x * src.width / width, src.width - 1));
    return out;
}

void draw_line(BinaryGrid& g, int x0, int y0, int x1, int y1)
{
    const int dx = std::abs(x1 - x0), sx = x0 < x1 ? 1 : -1;
    const int dy = -std::abs(y1 - y0), sy = y0 < y1 ? 1 : -1;
    int err = dx + dy;
    for (;;) {
        if (x0 >= 0 && y0 >= 0 && x0 < g.width && y0 < g.height)
            g(y0, x0) = 1;
        if (x0 == x1 && y0 == y1)
            break;
        const int e2 = 2 * err;
        if (e2 >= dy) {
            err += dy;
            x0 += sx;
        }
        if (e2 <= dx) {
            err += dx;
            y0 += sy;
        }
    }
}

}  // namespace

std::string to_string(Aggregation a)
{
    return a == Aggregation::Micro ? "micro" : "macro";
}

Aggregation parse_aggregation(const std::string& s)
{
    if (s == "micro")
        return Aggregation::Micro;
    if (s == "macro")
        return Aggregation::Macro;
    throw ConfigError("aggregation must be micro or macro, got '" + s + "'");
}

double dsc(const BinaryGrid& pred, const BinaryGrid& gt, double eps)
{
    if (!pred.same_size(gt))
        throw ShapeError("dsc: prediction " + std::to_string(pred.height) + "x" + std::to_string(pred.width) +
                         " and ground truth " + std::to_string(gt.height) + "x" + std::to_string(gt.width) + " differ");
    long long p = 0, g = 0, inter = 0;
    for (std::size_t i = 0; i < pred.size(); ++i) {
        const bool a = pred.values[i] != 0, b = gt.values[i] != 0;
        p += a;
        g += b;
        inter += a && b;
    }
    if (p == 0 && g == 0)
        return 1.0;
    return 2.0 * static_cast<double>(inter) / (static_cast<double>(p + g) + eps);
}

BinaryGrid class_mask(const LabelGrid& labels, int class_id)
{
    BinaryGrid out(labels.height, labels.width, 0);
    for (std::size_t i = 0; i < labels.size(); ++i)
        out.values[i] = labels.values[i] == class_id ? 1 : 0;
    return out;
}

EvalReport evaluate_masks(const std::vector<LabelGrid>& preds, const std::vector<LabelGrid>& gts, int n_classes,
                          Aggregation aggregation)
{
    if (preds.empty())
        throw ConfigError("evaluation needs at least one sample");
    if (preds.size() != gts.size())
        throw ShapeError("prediction and ground-truth counts differ");
    if (n_classes < 1)
        throw ConfigError("n_classes must be >= 1");
    EvalReport r;
    r.aggregation = aggregation;
    r.n_samples = preds.size();
    std::vector<double> macro(n_classes + 1, 0.0);
    r.per_class.resize(n_classes);
    for (int k = 1; k <= n_classes; ++k)
        r.per_class[k - 1].class_id = k;
    for (std::size_t s = 0; s < preds.size(); ++s) {
        const auto& p = preds[s];
        const auto& g = gts[s];
        if (!p.same_size(g))
            throw ShapeError("prediction and ground truth of sample " + std::to_string(s) + " differ in size");
        std::vector<long long> ps(n_classes + 1, 0), gs(n_classes + 1, 0), is(n_classes + 1, 0);
        for (std::size_t i = 0; i < p.size(); ++i) {
            const int a = p.values[i], b = g.values[i];
            if (a >= 1 && a <= n_classes)
                ++ps[a];
            if (b >= 1 && b <= n_classes)
                ++gs[b];
            if (a == b && a >= 1 && a <= n_classes)
                ++is[a];
        }
        for (int k = 1; k <= n_classes; ++k) {
            auto& c = r.per_class[k - 1];
            c.support += gs[k];
            c.predicted += ps[k];
            c.intersection += is[k];
            macro[k] += (ps[k] + gs[k] == 0) ? 1.0
                                             : 2.0 * static_cast<double>(is[k]) /
                                                   (static_cast<double>(ps[k] + gs[k]) + kDscEps);
        }
    }
    double sum = 0.0;
    for (auto& c : r.per_class) {
        if (aggregation == Aggregation::Macro)
            c.dsc = macro[c.class_id] / static_cast<double>(preds.size());
        else
            c.dsc = (c.support + c.predicted == 0)
                        ? 1.0
                        : 2.0 * static_cast<double>(c.intersection) /
                              (static_cast<double>(c.support + c.predicted) + kDscEps);
        sum += c.dsc;
    }
    r.mean_dsc = sum / n_classes;
    return r;
}

EvalReport evaluate(const model::CgqrNet& net, const std::vector<data::ImageSample>& samples, const std::string& tag,
                    Aggregation aggregation, int workers)
{
    if (samples.empty())
        throw ConfigError("evaluation needs at least one sample");
    const auto results = model::forward_many(net, samples, workers);
    std::vector<LabelGrid> preds, gts;
    preds.reserve(samples.size());
    for (std::size_t i = 0; i < samples.size(); ++i) {
        preds.push_back(model::argmax_labels(results[i].bundle.refined_probs));
        gts.push_back(samples[i].mask);
    }
    EvalReport r = evaluate_masks(preds, gts, net.config().n_classes, aggregation);
    r.dataset_tag = tag;
    r.config_echo = net.config().to_json().dump();
    return r;
}

nlohmann::json EvalReport::to_json() const
{
    nlohmann::json classes = nlohmann::json::array();
    for (const auto& c : per_class)
        classes.push_back({{"class_id", c.class_id},
                           {"dsc", c.dsc},
                           {"support", c.support},
                           {"predicted", c.predicted},
                           {"intersection", c.intersection}});
    return {{"dataset_tag", dataset_tag},   {"n_samples", n_samples}, {"aggregation", to_string(aggregation)},
            {"per_class", classes},         {"mean_dsc", mean_dsc},   {"config_echo", config_echo}};
}

std::string EvalReport::to_table(const std::string& model_name) const
{
    const int n = static_cast<int>(per_class.size());
    std::ostringstream os;
    char buf[64];
    os << "# dataset: " << dataset_tag << ", samples: " << n_samples << ", aggregation: " << to_string(aggregation)
       << "\n";
    std::snprintf(buf, sizeof(buf), "%-20s", "Model");
    os << buf;
    for (const auto& c : per_class) {
        std::snprintf(buf, sizeof(buf), " %10s", class_name(c.class_id, n).c_str());
        os << buf;
    }
    std::snprintf(buf, sizeof(buf), " %10s\n", "Average");
    os << buf;
    std::snprintf(buf, sizeof(buf), "%-20s", model_name.c_str());
    os << buf;
    for (const auto& c : per_class) {
        std::snprintf(buf, sizeof(buf), " %10.2f", 100.0 * c.dsc);
        os << buf;
    }
    std::snprintf(buf, sizeof(buf), " %10.2f\n", 100.0 * mean_dsc);
    os << buf;
    return os.str();
}

std::string EvalReport::to_csv() const
{
    std::ostringstream os;
    os << "dataset_tag,class_id,class_name,dsc,support,predicted,intersection\n";
    char buf[160];
    const int n = static_cast<int>(per_class.size());
    for (const auto& c : per_class) {
        std::snprintf(buf, sizeof(buf), ",%d,%s,%.9g,%lld,%lld,%lld\n", c.class_id, class_name(c.class_id, n).c_str(),
                      c.dsc, c.support, c.predicted, c.intersection);
        os << dataset_tag << buf;
    }
    std::snprintf(buf, sizeof(buf), ",mean,Average,%.9g,,,\n", mean_dsc);
    os << dataset_tag << buf;
    return os.str();
}

BinaryGrid rasterize_contours(const std::vector<contour::Contour>& contours, int height, int width)
{
    BinaryGrid g(height, width, 0);
    for (const auto& c : contours) {
        if (!c.present || c.points.empty())
            continue;
        const std::size_t m = c.points.size();
        for (std::size_t i = 0; i < m; ++i) {
            const auto& a = c.points[i];
            const auto& b = c.points[(i + 1) % m];
            draw_line(g, static_cast<int>(std::lround(a.x * width)), static_cast<int>(std::lround(a.y * height)),
                      static_cast<int>(std::lround(b.x * width)), static_cast<int>(std::lround(b.y * height)));
        }
    }
    return g;
}

std::vector<std::filesystem::path> emit_panels(const data::ImageSample& sample, const heads::PredictionBundle& bundle,
                                               const std::vector<contour::Contour>& contours,
                                               const std::filesystem::path& out_dir, int n_classes)
{
    std::error_code ec;
    std::filesystem::create_directories(out_dir, ec);
    if (ec)
        throw io::IoError("cannot create panel directory " + out_dir.string() + ": " + ec.message());
    const int h = sample.image.height, w = sample.image.width;
    const std::string id = sample.sample_id;
    std::vector<std::filesystem::path> written;
    auto gray = [&](const std::string& suffix, const io::Gray8& img) {
        auto p = out_dir / (id + "_" + suffix + ".pgm");
        io::write_pgm(p, img);
        written.push_back(p);
    };

    const io::Gray8 orig = io::stretch(sample.image);
    gray("orig", orig);
    gray("gt", label_panel(sample.mask, n_classes));

    LabelGrid coarse(h, w, 0);
    if (bundle.has_coarse())
        coarse = upsample_labels(model::argmax_labels(bundle.coarse_probs), h, w);
    gray("coarse", label_panel(coarse, n_classes));

    const BinaryGrid lines = rasterize_contours(contours, h, w);
    io::Gray8 cont{w, h, std::vector<std::uint8_t>(lines.size())};
    for (std::size_t i = 0; i < lines.size(); ++i)
        cont.pixels[i] = lines.values[i] ? 255 : 0;
    gray("contours", cont);

    io::Gray8 bnd{w, h, std::vector<std::uint8_t>(static_cast<std::size_t>(h) * w, 0)};
    if (bundle.has_boundary())
        for (std::size_t i = 0; i < bnd.pixels.size(); ++i)
            bnd.pixels[i] = static_cast<std::uint8_t>(std::lround(255.0 * std::clamp(bundle.boundary_probs[i], 0.0, 1.0)));
    gray("boundary", bnd);

    const LabelGrid final_labels = model::argmax_labels(bundle.refined_probs);
    gray("final", label_panel(final_labels, n_classes));

    io::Rgb8 overlay(w, h);
    constexpr double alpha = 0.4;
    for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x) {
            const std::uint8_t v = orig.pixels[static_cast<std::size_t>(y) * w + x];
            const int label = final_labels(y, x);
            if (label <= 0) {
                overlay.set(y, x, {v, v, v});
                continue;
            }
            const auto& c = kPalette[(label - 1) % kPalette.size()];
            std::array<std::uint8_t, 3> px{};
            for (int i = 0; i < 3; ++i)
                px[i] = static_cast<std::uint8_t>(std::lround((1.0 - alpha) * v + alpha * c[i]));
            overlay.set(y, x, px);
        }
    auto op = out_dir / (id + "_overlay.ppm");
    io::write_ppm(op, overlay);
    written.push_back(op);
    return written;
}

}  // namespace cgqr::eval
