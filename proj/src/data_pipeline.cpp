#include "cgqr/data_pipeline.hpp"

#include "cgqr/autograd.hpp"
#include "cgqr/image_io.hpp"

#include <numbers>
#include <regex>

namespace cgqr::data {

namespace fs = std::filesystem;

std::string to_string(View v)
{
    switch (v) {
    case View::TwoChamber:
        return "2CH";
    case View::FourChamber:
        return "4CH";
    case View::Synth:
        return "SYNTH";
    }
    return "SYNTH";
}

std::string to_string(Phase p)
{
    switch (p) {
    case Phase::ED:
        return "ED";
    case Phase::ES:
        return "ES";
    case Phase::None:
        return "NONE";
    }
    return "NONE";
}

View parse_view(const std::string& s)
{
    if (s == "2CH")
        return View::TwoChamber;
    if (s == "4CH")
        return View::FourChamber;
    if (s == "SYNTH")
        return View::Synth;
    throw ConfigError("unknown view '" + s + "'");
}

Phase parse_phase(const std::string& s)
{
    std::string u = s;
    std::transform(u.begin(), u.end(), u.begin(), [](unsigned char c) { return std::toupper(c); });
    if (u == "ED")
        return Phase::ED;
    if (u == "ES")
        return Phase::ES;
    if (u == "NONE")
        return Phase::None;
    throw ConfigError("unknown phase '" + s + "'");
}

std::string RawSample::sample_id() const
{
    char buf[16];
    std::snprintf(buf, sizeof(buf), "_f%03d", frame);
    return patient_id + "_" + to_string(view) + "_" + to_string(phase) + buf;
}

void SynthConfig::validate() const
{
    if (n_patients < 1 || frames_per_patient < 1)
        throw ConfigError("synthetic dataset needs at least one patient and one frame");
    if (n_classes < 1)
        throw ConfigError("n_classes must be >= 1");
    if (height < 32 || width < 32)
        throw ConfigError("synthetic image size must be at least 32x32");
    if (noise_level < 0.0 || domain_shift < 0.0)
        throw ConfigError("noise_level and domain_shift must be nonnegative");
    if (!(contrast > 0.0 && contrast <= 1.0))
        throw ConfigError("contrast must lie in (0, 1]");
}

nlohmann::json SynthConfig::to_json() const
{
    return {{"n_patients", n_patients}, {"frames_per_patient", frames_per_patient},
            {"image_size", {height, width}}, {"n_classes", n_classes},
            {"noise_level", noise_level}, {"contrast", contrast},
            {"domain_shift", domain_shift}, {"seed", seed}};
}

ImageGrid normalize_image(const ImageGrid& image, double eps)
{
    if (image.empty())
        throw std::invalid_argument("normalize_image: empty image");
    const double n = static_cast<double>(image.size());
    double mean = 0.0;
    for (double v : image.values)
        mean += v;
    mean /= n;
    double var = 0.0;
    for (double v : image.values)
        var += (v - mean) * (v - mean);
    const double sd = std::sqrt(var / n);
    ImageGrid out(image.height, image.width);
    for (std::size_t i = 0; i < image.size(); ++i)
        out.values[i] = (image.values[i] - mean) / (sd + eps);
    return out;
}

std::pair<ImageGrid, LabelGrid> resize_pair(const ImageGrid& image, const LabelGrid& mask, int height, int width)
{
    if (height < 1 || width < 1)
        throw ConfigError("resize target must be at least 1x1");
    if (!image.same_size(mask))
        throw ShapeError("resize_pair: image " + std::to_string(image.height) + "x" + std::to_string(image.width) +
                         " and mask " + std::to_string(mask.height) + "x" + std::to_string(mask.width) + " differ");
    if (image.height == height && image.width == width)
        return {image, mask};

    Tensor t({1, 1, image.height, image.width}, image.values);
    Tensor r = nn::resize_bilinear(t, height, width);
    ImageGrid img(height, width);
    img.values = r.storage();

    LabelGrid m(height, width);
    for (int y = 0; y < height; ++y) {
        const int sy = std::min(static_cast<int>(static_cast<long long>(y) * mask.height / height), mask.height - 1);
        for (int x = 0; x < width; ++x) {
            const int sx = std::min(static_cast<int>(static_cast<long long>(x) * mask.width / width), mask.width - 1);
            m(y, x) = mask(sy, sx);
        }
    }
    return {std::move(img), std::move(m)};
}

BinaryGrid make_boundary_target(const LabelGrid& mask, int thickness)
{
    if (thickness < 1)
        throw ConfigError("boundary thickness must be >= 1");
    const int h = mask.height, w = mask.width;
    // Iterated cross-shaped max/min filters; clamped indexing is replicate padding.
    LabelGrid hi = mask, lo = mask;
    for (int it = 0; it < thickness; ++it) {
        LabelGrid nhi = hi, nlo = lo;
        for (int y = 0; y < h; ++y)
            for (int x = 0; x < w; ++x) {
                const int ys[4] = {std::max(y - 1, 0), std::min(y + 1, h - 1), y, y};
                const int xs[4] = {x, x, std::max(x - 1, 0), std::min(x + 1, w - 1)};
                for (int k = 0; k < 4; ++k) {
                    nhi(y, x) = std::max(nhi(y, x), hi(ys[k], xs[k]));
                    nlo(y, x) = std::min(nlo(y, x), lo(ys[k], xs[k]));
                }
            }
        hi = std::move(nhi);
        lo = std::move(nlo);
    }
    BinaryGrid out(h, w, 0);
    for (std::size_t i = 0; i < out.size(); ++i)
        out.values[i] = hi.values[i] != lo.values[i] ? 1 : 0;
    return out;
}

std::vector<RawSample> extract_frames(const std::vector<RawSample>& sequence, bool drop_empty)
{
    std::vector<RawSample> out;
    out.reserve(sequence.size());
    for (const auto& s : sequence) {
        if (drop_empty && std::all_of(s.mask.values.begin(), s.mask.values.end(), [](auto v) { return v == 0; }))
            continue;
        out.push_back(s);
    }
    return out;
}

ImageSample preprocess(const RawSample& raw, const PreprocessConfig& cfg)
{
    if (!raw.image.same_size(raw.mask))
        throw ShapeError("sample " + raw.sample_id() + ": image and mask sizes differ");
    auto [img, mask] = resize_pair(raw.image, raw.mask, cfg.height, cfg.width);
    ImageSample s;
    s.image = normalize_image(img, cfg.eps);
    s.boundary = make_boundary_target(mask, cfg.boundary_thickness);
    s.mask = std::move(mask);
    s.patient_id = raw.patient_id;
    s.phase = raw.phase;
    s.sample_id = raw.sample_id();
    return s;
}

std::vector<ImageSample> preprocess_all(const std::vector<RawSample>& raw, const PreprocessConfig& cfg)
{
    std::vector<ImageSample> out;
    out.reserve(raw.size());
    for (const auto& r : raw)
        out.push_back(preprocess(r, cfg));
    return out;
}

// ---------------------------------------------------------------------------
// Synthetic echo-like generator
// ---------------------------------------------------------------------------

namespace {

struct Ellipse {
    double cx, cy, a, b, angle;

    bool contains(double x, double y) const
    {
        const double c = std::cos(angle), s = std::sin(angle);
        const double dx = x - cx, dy = y - cy;
        const double u = (c * dx + s * dy) / a;
        const double v = (-s * dx + c * dy) / b;
        return u * u + v * v <= 1.0;
    }
    // Conservative axis-aligned extent.
    double reach() const { return std::max(a, b); }
};

struct PatientLayout {
    Ellipse endo;
    double wall;
    Ellipse atrium;
    std::vector<Ellipse> extra;
};

double uniform(std::mt19937_64& rng, double lo, double hi)
{
    return std::uniform_real_distribution<double>(lo, hi)(rng);
}

bool inside_frame(const Ellipse& e, int h, int w, double margin)
{
    return e.cx - e.reach() >= margin && e.cx + e.reach() <= w - 1 - margin && e.cy - e.reach() >= margin &&
           e.cy + e.reach() <= h - 1 - margin;
}

PatientLayout make_layout(const SynthConfig& cfg, std::mt19937_64& rng)
{
    const double w = cfg.width, h = cfg.height;
    PatientLayout p{};
    p.endo = {w * uniform(rng, 0.44, 0.56), h * uniform(rng, 0.33, 0.40), w * uniform(rng, 0.11, 0.14),
              h * uniform(rng, 0.17, 0.21), uniform(rng, -0.25, 0.25)};
    p.wall = w * uniform(rng, 0.055, 0.07);
    const double la_b = h * uniform(rng, 0.08, 0.10);
    p.atrium = {p.endo.cx + w * uniform(rng, -0.04, 0.04), p.endo.cy + p.endo.b + p.wall + la_b + 1.5,
                w * uniform(rng, 0.10, 0.13), la_b, uniform(rng, -0.2, 0.2)};

    Ellipse outer{p.endo.cx, p.endo.cy, p.endo.a + p.wall, p.endo.b + p.wall, p.endo.angle};
    if (!inside_frame(outer, cfg.height, cfg.width, 1.0) ||
        (cfg.n_classes >= 3 && !inside_frame(p.atrium, cfg.height, cfg.width, 1.0)))
        throw ConfigError("synthetic regions do not fit a " + std::to_string(cfg.height) + "x" +
                          std::to_string(cfg.width) + " frame");

    std::vector<Ellipse> placed{outer};
    if (cfg.n_classes >= 3)
        placed.push_back(p.atrium);
    for (int k = 4; k <= cfg.n_classes; ++k) {
        bool ok = false;
        for (int attempt = 0; attempt < 500 && !ok; ++attempt) {
            Ellipse e{w * uniform(rng, 0.1, 0.9), h * uniform(rng, 0.1, 0.9), w * uniform(rng, 0.04, 0.07),
                      h * uniform(rng, 0.04, 0.07), uniform(rng, -0.5, 0.5)};
            if (!inside_frame(e, cfg.height, cfg.width, 1.0))
                continue;
            ok = std::none_of(placed.begin(), placed.end(), [&](const Ellipse& o) {
                return std::hypot(o.cx - e.cx, o.cy - e.cy) < o.reach() + e.reach() + 2.0;
            });
            if (ok) {
                placed.push_back(e);
                p.extra.push_back(e);
            }
        }
        if (!ok)
            throw ConfigError("cannot place region for class " + std::to_string(k) + " in a " +
                              std::to_string(cfg.height) + "x" + std::to_string(cfg.width) + " frame");
    }
    return p;
}

LabelGrid render_mask(const PatientLayout& p, const SynthConfig& cfg, double phase_angle)
{
    // Ventricle contracts over the cycle; the atrium fills in antiphase.
    const double squeeze = 1.0 - 0.12 * 0.5 * (1.0 - std::cos(phase_angle));
    Ellipse endo = p.endo;
    endo.a *= squeeze;
    endo.b *= squeeze;
    Ellipse outer{endo.cx, endo.cy, endo.a + p.wall, endo.b + p.wall, endo.angle};
    Ellipse atrium = p.atrium;
    atrium.a *= 2.0 - squeeze;

    LabelGrid m(cfg.height, cfg.width, 0);
    for (int y = 0; y < cfg.height; ++y)
        for (int x = 0; x < cfg.width; ++x) {
            int label = 0;
            if (endo.contains(x, y))
                label = 1;
            else if (cfg.n_classes >= 2 && outer.contains(x, y))
                label = 2;
            else if (cfg.n_classes >= 3 && atrium.contains(x, y))
                label = 3;
            else
                for (std::size_t e = 0; e < p.extra.size(); ++e)
                    if (p.extra[e].contains(x, y))
                        label = static_cast<int>(e) + 4;
            m(y, x) = label;
        }
    return m;
}

double class_level(int label)
{
    switch (label) {
    case 0:
        return 0.30;  // tissue background
    case 1:
        return 0.08;  // ventricular blood pool
    case 2:
        return 0.78;  // myocardium
    case 3:
        return 0.15;  // atrial blood pool
    default:
        return 0.45 + 0.04 * (label - 4);
    }
}

ImageGrid render_image(const LabelGrid& mask, const SynthConfig& cfg, std::mt19937_64& rng)
{
    const int h = cfg.height, w = cfg.width;
    std::normal_distribution<double> gauss(0.0, 1.0);
    std::vector<double> speckle(static_cast<std::size_t>(h) * w);
    for (auto& v : speckle)
        v = gauss(rng);

    // Shifted domains sample the speckle field through a smooth warp and
    // remap intensities with a gamma curve; label geometry is untouched.
    const double shift = cfg.domain_shift;
    const double amp = 3.0 * shift;
    const double gamma = 1.0 + 1.5 * shift;
    auto sample_speckle = [&](double x, double y) {
        if (amp == 0.0)
            return speckle[static_cast<std::size_t>(y) * w + static_cast<std::size_t>(x)];
        x = std::clamp(x, 0.0, w - 1.0);
        y = std::clamp(y, 0.0, h - 1.0);
        const int x0 = static_cast<int>(x), y0 = static_cast<int>(y);
        const int x1 = std::min(x0 + 1, w - 1), y1 = std::min(y0 + 1, h - 1);
        const double fx = x - x0, fy = y - y0;
        auto at = [&](int yy, int xx) { return speckle[static_cast<std::size_t>(yy) * w + xx]; };
        return (1 - fy) * ((1 - fx) * at(y0, x0) + fx * at(y0, x1)) + fy * ((1 - fx) * at(y1, x0) + fx * at(y1, x1));
    };

    const double bg = class_level(0);
    ImageGrid img(h, w);
    for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x) {
            const double level = bg + cfg.contrast * (class_level(mask(y, x)) - bg);
            const double wx = x + amp * std::sin(2.0 * std::numbers::pi * y / 17.0);
            const double wy = y + amp * std::cos(2.0 * std::numbers::pi * x / 23.0);
            double v = level * std::max(0.0, 1.0 + cfg.noise_level * sample_speckle(wx, wy));
            if (shift > 0.0)
                v = std::pow(std::clamp(v, 0.0, 1.0), gamma) + 0.08 * shift;
            img(y, x) = std::round(255.0 * std::clamp(v, 0.0, 1.0));
        }
    return img;
}

}  // namespace

std::vector<RawSample> generate_synthetic(const SynthConfig& cfg)
{
    cfg.validate();
    std::vector<RawSample> out;
    out.reserve(static_cast<std::size_t>(cfg.n_patients) * cfg.frames_per_patient);
    for (int p = 0; p < cfg.n_patients; ++p) {
        std::seed_seq layout_seed{cfg.seed, static_cast<std::uint64_t>(p), std::uint64_t{0x5eed}};
        std::mt19937_64 layout_rng(layout_seed);
        const PatientLayout layout = make_layout(cfg, layout_rng);
        char pid[32];
        std::snprintf(pid, sizeof(pid), "P%04d", p);
        for (int f = 0; f < cfg.frames_per_patient; ++f) {
            std::seed_seq frame_seed{cfg.seed, static_cast<std::uint64_t>(p), static_cast<std::uint64_t>(f) + 1};
            std::mt19937_64 frame_rng(frame_seed);
            const double angle = 2.0 * std::numbers::pi * f / cfg.frames_per_patient;
            RawSample s;
            s.mask = render_mask(layout, cfg, angle);
            s.image = render_image(s.mask, cfg, frame_rng);
            s.patient_id = pid;
            s.view = View::Synth;
            s.phase = Phase::None;
            s.frame = f;
            out.push_back(std::move(s));
        }
    }
    return out;
}

// ---------------------------------------------------------------------------
// Directory layout
// ---------------------------------------------------------------------------

namespace {

std::string file_stem(const RawSample& s)
{
    std::string stem = to_string(s.view) + "_" + to_string(s.phase);
    if (s.view == View::Synth) {
        char buf[16];
        std::snprintf(buf, sizeof(buf), "_f%03d", s.frame);
        stem += buf;
    }
    return stem;
}

}  // namespace

void write_dataset(const fs::path& root, const std::vector<RawSample>& samples, const nlohmann::json& manifest_extra)
{
    std::vector<std::string> patients;
    for (const auto& s : samples) {
        if (!s.image.same_size(s.mask))
            throw ShapeError("sample " + s.sample_id() + ": image and mask sizes differ");
        const fs::path dir = root / s.patient_id;
        const std::string stem = file_stem(s);
        io::write_pgm(dir / (stem + "_img.pgm"), io::quantize(s.image));
        io::write_pgm(dir / (stem + "_mask.pgm"), io::to_gray8(s.mask));
        if (patients.empty() || patients.back() != s.patient_id)
            patients.push_back(s.patient_id);
    }
    std::sort(patients.begin(), patients.end());
    patients.erase(std::unique(patients.begin(), patients.end()), patients.end());
    nlohmann::json manifest = manifest_extra;
    manifest["patients"] = patients;
    manifest["n_samples"] = samples.size();
    io::write_atomic(root / "manifest.json", manifest.dump(2) + "\n");
}

std::vector<RawSample> load_dataset(const fs::path& root)
{
    if (!fs::is_directory(root))
        throw io::IoError("dataset root " + root.string() + " is not a directory");
    static const std::regex pattern(R"(^(2CH|4CH|SYNTH)_(ED|ES|NONE)(?:_f(\d+))?_img\.pgm$)");
    std::vector<fs::path> patient_dirs;
    for (const auto& e : fs::directory_iterator(root))
        if (e.is_directory())
            patient_dirs.push_back(e.path());
    std::sort(patient_dirs.begin(), patient_dirs.end());

    std::vector<RawSample> out;
    for (const auto& dir : patient_dirs) {
        std::vector<fs::path> files;
        for (const auto& e : fs::directory_iterator(dir))
            if (e.is_regular_file())
                files.push_back(e.path());
        std::sort(files.begin(), files.end());
        for (const auto& f : files) {
            std::smatch m;
            const std::string name = f.filename().string();
            if (!std::regex_match(name, m, pattern))
                continue;
            fs::path mask_path = f;
            mask_path.replace_filename(name.substr(0, name.size() - std::string("_img.pgm").size()) + "_mask.pgm");
            if (!fs::exists(mask_path))
                throw io::IoError("missing mask for " + f.string());
            RawSample s;
            s.image = io::image_from_gray8(io::read_pgm(f));
            s.mask = io::labels_from_gray8(io::read_pgm(mask_path));
            if (!s.image.same_size(s.mask))
                throw ShapeError("image and mask sizes differ for " + f.string());
            s.patient_id = dir.filename().string();
            s.view = parse_view(m[1]);
            s.phase = parse_phase(m[2]);
            s.frame = m[3].matched ? std::stoi(m[3]) : 0;
            out.push_back(std::move(s));
        }
    }
    return out;
}

std::string dataset_tag(const fs::path& root)
{
    const fs::path manifest = root / "manifest.json";
    if (fs::exists(manifest)) {
        auto j = nlohmann::json::parse(io::read_file(manifest), nullptr, false);
        if (j.is_object() && j.contains("tag") && j["tag"].is_string())
            return j["tag"].get<std::string>();
    }
    fs::path p = root;
    if (!p.has_filename())
        p = p.parent_path();
    return p.filename().string();
}

}  // namespace cgqr::data
