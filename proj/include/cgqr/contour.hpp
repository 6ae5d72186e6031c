#pragma once

#include "cgqr/tensor.hpp"

#include <array>
#include <string>
#include <vector>

namespace cgqr::contour {

constexpr int kDefaultPoints = 64;
constexpr int kDescriptorSize = 6;

struct Point {
    double x = 0.0;
    double y = 0.0;
    bool operator==(const Point&) const = default;
};

struct PixelPos {
    int x = 0;
    int y = 0;
    bool operator==(const PixelPos&) const = default;
    auto operator<=>(const PixelPos&) const = default;
};

struct Contour {
    int class_id = 0;
    bool present = false;
    /// Arc-length resampled points in normalized coordinates (x / W, y / H),
    /// counter-clockwise (positive signed area in x-right, y-down axes).
    std::vector<Point> points;
    /// Pixels visited by the boundary trace before resampling, in trace order.
    std::vector<PixelPos> traced;
    /// Pixel count of the selected connected component.
    std::size_t region_pixels = 0;

    bool operator==(const Contour&) const = default;
};

struct ShapeDescriptor {
    double mu_x = 0.0;
    double mu_y = 0.0;
    double area = 0.0;       // pixels / (W * H)
    double perimeter = 0.0;  // pixel arc length / (2 (W + H))
    double sigma_x = 0.0;
    double sigma_y = 0.0;

    std::array<double, kDescriptorSize> as_array() const { return {mu_x, mu_y, area, perimeter, sigma_x, sigma_y}; }
    bool operator==(const ShapeDescriptor&) const = default;
};

/// Largest 4-connected component of `label` (ties broken by raster order of
/// the first pixel). Returns a 0/1 grid, all zeros if the label is absent.
BinaryGrid largest_component(const LabelGrid& mask, int label, std::size_t* pixel_count = nullptr);

/// Moore-neighbour trace of the outer boundary of a 0/1 region, starting at the
/// raster-first pixel and stopping once the first move would repeat.
std::vector<PixelPos> trace_boundary(const BinaryGrid& region);

/// Uniform arc-length resampling of a closed pixel polyline to exactly n points.
std::vector<Point> resample_closed(const std::vector<PixelPos>& polyline, int n_points);

/// One contour per foreground class 1..n_classes.
std::vector<Contour> extract_contours(const LabelGrid& mask, int n_classes, int n_points = kDefaultPoints);

ShapeDescriptor describe(const Contour& contour, std::size_t region_pixel_count, int height, int width);

std::vector<ShapeDescriptor> descriptors_from_mask(const LabelGrid& mask, int n_classes,
                                                   int n_points = kDefaultPoints);
std::vector<ShapeDescriptor> describe_all(const std::vector<Contour>& contours, int height, int width);

/// `class,x_norm,y_norm` rows for present contours.
std::string contours_csv(const std::vector<Contour>& contours);

}  // namespace cgqr::contour
