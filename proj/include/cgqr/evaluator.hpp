#pragma once

#include "cgqr/model.hpp"

#include <nlohmann/json.hpp>

#include <filesystem>
#include <string>
#include <vector>

namespace cgqr::eval {

constexpr double kDscEps = 1e-6;

enum class Aggregation { Micro, Macro };
std::string to_string(Aggregation a);
Aggregation parse_aggregation(const std::string& s);

struct ClassDice {
    int class_id = 0;
    double dsc = 0.0;
    long long support = 0;       // ground-truth pixels
    long long predicted = 0;     // predicted pixels
    long long intersection = 0;
};

struct EvalReport {
    std::vector<ClassDice> per_class;
    double mean_dsc = 0.0;
    std::string dataset_tag;
    std::size_t n_samples = 0;
    std::string config_echo;
    Aggregation aggregation = Aggregation::Micro;

    nlohmann::json to_json() const;
    /// Aligned text table: model name, per-class DSC (%), average.
    std::string to_table(const std::string& model_name = "CGQR-Net") const;
    std::string to_csv() const;
};

/// 2|P n G| / (|P| + |G| + eps); 1 when both masks are empty.
double dsc(const BinaryGrid& pred, const BinaryGrid& gt, double eps = kDscEps);
BinaryGrid class_mask(const LabelGrid& labels, int class_id);

/// Micro: pool intersections and sizes over all samples, then take the ratio.
/// Macro: per-sample DSC averaged over samples.
EvalReport evaluate_masks(const std::vector<LabelGrid>& preds, const std::vector<LabelGrid>& gts, int n_classes,
                          Aggregation aggregation = Aggregation::Micro);

/// Argmax of the refined probabilities for every sample, then evaluate_masks.
EvalReport evaluate(const model::CgqrNet& net, const std::vector<data::ImageSample>& samples, const std::string& tag,
                    Aggregation aggregation = Aggregation::Micro, int workers = 1);

/// Rasterized contour polylines: 255 on the closed polyline through the
/// points scaled back to pixel coordinates, 0 elsewhere.
BinaryGrid rasterize_contours(const std::vector<contour::Contour>& contours, int height, int width);

/// Seven panels per sample: <id>_{orig,gt,coarse,contours,boundary,final}.pgm and <id>_overlay.ppm.
std::vector<std::filesystem::path> emit_panels(const data::ImageSample& sample, const heads::PredictionBundle& bundle,
                                               const std::vector<contour::Contour>& contours,
                                               const std::filesystem::path& out_dir, int n_classes);

}  // namespace cgqr::eval
