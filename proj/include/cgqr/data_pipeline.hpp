#pragma once

#include "cgqr/tensor.hpp"

#include <nlohmann/json.hpp>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <map>
#include <random>
#include <set>
#include <stdexcept>
#include <string>
#include <vector>

namespace cgqr::data {

enum class View { TwoChamber, FourChamber, Synth };
enum class Phase { ED, ES, None };

std::string to_string(View v);
std::string to_string(Phase p);
View parse_view(const std::string& s);
Phase parse_phase(const std::string& s);

/// A frame as loaded from disk or generated, before preprocessing.
struct RawSample {
    ImageGrid image;  // nonnegative intensities
    LabelGrid mask;   // 0 = background, 1..K foreground classes
    std::string patient_id;
    View view = View::Synth;
    Phase phase = Phase::None;
    int frame = 0;

    std::string sample_id() const;
};

/// A preprocessed training / evaluation sample.
struct ImageSample {
    ImageGrid image;     // standardized
    LabelGrid mask;
    BinaryGrid boundary; // morphological gradient of mask
    std::string patient_id;
    Phase phase = Phase::None;
    std::string sample_id;
};

template <typename T>
struct Split {
    std::vector<T> train;
    std::vector<T> val;
    double split_ratio = 0.8;
    std::uint64_t seed = 0;
};

using DatasetSplit = Split<ImageSample>;

struct PreprocessConfig {
    int height = 256;
    int width = 256;
    int boundary_thickness = 1;
    double eps = 1e-6;
};

struct SynthConfig {
    int n_patients = 10;
    int frames_per_patient = 4;
    int height = 256;
    int width = 256;
    int n_classes = 3;
    double noise_level = 0.3;
    double contrast = 0.7;
    double domain_shift = 0.0;
    std::uint64_t seed = 0;

    void validate() const;
    nlohmann::json to_json() const;
};

/// (I - mean) / (std + eps); std is the population standard deviation.
ImageGrid normalize_image(const ImageGrid& image, double eps = 1e-6);

/// Bilinear (half-pixel centers) for the image, nearest-neighbour for the mask.
std::pair<ImageGrid, LabelGrid> resize_pair(const ImageGrid& image, const LabelGrid& mask, int height, int width);

/// 1 where labels inside the L1 ball of radius `thickness` are not all equal
/// (dilation minus erosion with a 3x3 cross iterated `thickness` times,
/// replicate padding).
BinaryGrid make_boundary_target(const LabelGrid& mask, int thickness = 1);

std::vector<RawSample> extract_frames(const std::vector<RawSample>& sequence, bool drop_empty);

ImageSample preprocess(const RawSample& raw, const PreprocessConfig& cfg);
std::vector<ImageSample> preprocess_all(const std::vector<RawSample>& raw, const PreprocessConfig& cfg);

/// Deterministic patient-level split. |train patients| = round(ratio * patients),
/// clamped so that both sides get at least one patient.
template <typename T>
Split<T> split_by_patient(const std::vector<T>& samples, double ratio, std::uint64_t seed)
{
    if (!(ratio > 0.0 && ratio < 1.0))
        throw ConfigError("split ratio must lie in (0, 1)");
    std::set<std::string> ids;
    for (const auto& s : samples)
        ids.insert(s.patient_id);
    if (ids.size() < 2)
        throw ConfigError("patient-level split needs at least two distinct patients, got " +
                          std::to_string(ids.size()));
    std::vector<std::string> order(ids.begin(), ids.end());
    std::mt19937_64 rng(seed);
    std::shuffle(order.begin(), order.end(), rng);
    const int n = static_cast<int>(order.size());
    const int n_train = std::clamp(static_cast<int>(std::lround(ratio * n)), 1, n - 1);
    const std::set<std::string> train_ids(order.begin(), order.begin() + n_train);

    Split<T> out;
    out.split_ratio = ratio;
    out.seed = seed;
    for (const auto& s : samples)
        (train_ids.contains(s.patient_id) ? out.train : out.val).push_back(s);
    return out;
}

std::vector<RawSample> generate_synthetic(const SynthConfig& cfg);

/// Writes `<root>/<patient>/<VIEW>_<PHASE>[_fNNN]_{img,mask}.pgm` plus manifest.json.
void write_dataset(const std::filesystem::path& root, const std::vector<RawSample>& samples,
                   const nlohmann::json& manifest_extra);
std::vector<RawSample> load_dataset(const std::filesystem::path& root);
/// Tag used in reports: manifest "tag" if present, otherwise the directory name.
std::string dataset_tag(const std::filesystem::path& root);

}  // namespace cgqr::data
