#include "cgqr/contour.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <queue>

namespace cgqr::contour {

namespace {

// Clockwise on screen (y grows downward), starting west.
constexpr std::array<PixelPos, 8> kRing{{{-1, 0}, {-1, -1}, {0, -1}, {1, -1}, {1, 0}, {1, 1}, {0, 1}, {-1, 1}}};

int ring_index(PixelPos center, PixelPos p)
{
    for (int i = 0; i < 8; ++i)
        if (center.x + kRing[i].x == p.x && center.y + kRing[i].y == p.y)
            return i;
    return -1;
}

}  // namespace

BinaryGrid largest_component(const LabelGrid& mask, int label, std::size_t* pixel_count)
{
    const int h = mask.height, w = mask.width;
    std::vector<int> comp(mask.size(), -1);
    int best = -1;
    std::size_t best_size = 0;
    int next_id = 0;
    std::queue<PixelPos> q;
    for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x) {
            const std::size_t idx = static_cast<std::size_t>(y) * w + x;
            if (mask.values[idx] != label || comp[idx] >= 0)
                continue;
            const int id = next_id++;
            std::size_t size = 0;
            comp[idx] = id;
            q.push({x, y});
            while (!q.empty()) {
                PixelPos p = q.front();
                q.pop();
                ++size;
                const PixelPos nb[4] = {{p.x - 1, p.y}, {p.x + 1, p.y}, {p.x, p.y - 1}, {p.x, p.y + 1}};
                for (const auto& n : nb) {
                    if (n.x < 0 || n.y < 0 || n.x >= w || n.y >= h)
                        continue;
                    const std::size_t j = static_cast<std::size_t>(n.y) * w + n.x;
                    if (mask.values[j] == label && comp[j] < 0) {
                        comp[j] = id;
                        q.push(n);
                    }
                }
            }
            if (size > best_size) {
                best_size = size;
                best = id;
            }
        }
    BinaryGrid out(h, w, 0);
    for (std::size_t i = 0; i < out.size(); ++i)
        out.values[i] = (best >= 0 && comp[i] == best) ? 1 : 0;
    if (pixel_count)
        *pixel_count = best_size;
    return out;
}

std::vector<PixelPos> trace_boundary(const BinaryGrid& region)
{
    const int h = region.height, w = region.width;
    auto inside = [&](PixelPos p) { return p.x >= 0 && p.y >= 0 && p.x < w && p.y < h && region(p.y, p.x) != 0; };

    PixelPos start{-1, -1};
    std::size_t area = 0;
    for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x)
            if (region(y, x)) {
                if (start.x < 0)
                    start = {x, y};
                ++area;
            }
    if (start.x < 0)
        return {};

    std::vector<PixelPos> trace{start};
    PixelPos cur = start, back{start.x - 1, start.y};
    // Stops when the first move (start -> trace[1]) is about to repeat. Entering
    // the start pixel with its initial backtrack is not enough: on one-pixel-wide
    // parts that backtrack never recurs.
    const std::size_t limit = 4 * area + 8;
    for (std::size_t step = 0; step < limit; ++step) {
        const int b = ring_index(cur, back);
        PixelPos prev = back, next{-1, -1};
        for (int k = 1; k <= 8; ++k) {
            const PixelPos& d = kRing[(b + k) % 8];
            PixelPos cand{cur.x + d.x, cur.y + d.y};
            if (inside(cand)) {
                next = cand;
                break;
            }
            prev = cand;
        }
        if (next.x < 0)
            return trace;  // isolated pixel
        if (trace.size() > 1 && cur == start && next == trace[1])
            break;
        cur = next;
        back = prev;
        trace.push_back(cur);
    }
    if (trace.size() > 1 && trace.back() == start)
        trace.pop_back();
    return trace;
}

std::vector<Point> resample_closed(const std::vector<PixelPos>& poly, int n_points)
{
    std::vector<Point> out;
    if (poly.empty() || n_points <= 0)
        return out;
    out.reserve(static_cast<std::size_t>(n_points));
    const std::size_t m = poly.size();
    std::vector<double> cum(m + 1, 0.0);
    for (std::size_t i = 0; i < m; ++i) {
        const PixelPos& a = poly[i];
        const PixelPos& b = poly[(i + 1) % m];
        cum[i + 1] = cum[i] + std::hypot(static_cast<double>(b.x - a.x), static_cast<double>(b.y - a.y));
    }
    const double total = cum[m];
    if (total <= 0.0) {
        out.assign(static_cast<std::size_t>(n_points), Point{static_cast<double>(poly[0].x), static_cast<double>(poly[0].y)});
        return out;
    }
    std::size_t seg = 0;
    for (int i = 0; i < n_points; ++i) {
        const double t = total * i / n_points;
        while (seg + 1 < m && cum[seg + 1] <= t)
            ++seg;
        const PixelPos& a = poly[seg];
        const PixelPos& b = poly[(seg + 1) % m];
        const double len = cum[seg + 1] - cum[seg];
        const double f = len > 0 ? (t - cum[seg]) / len : 0.0;
        out.push_back({a.x + f * (b.x - a.x), a.y + f * (b.y - a.y)});
    }
    return out;
}

std::vector<Contour> extract_contours(const LabelGrid& mask, int n_classes, int n_points)
{
    if (n_points < 4)
        throw ConfigError("contour resampling needs at least 4 points");
    std::vector<Contour> out;
    out.reserve(static_cast<std::size_t>(n_classes));
    const double w = mask.width, h = mask.height;
    for (int k = 1; k <= n_classes; ++k) {
        Contour c;
        c.class_id = k;
        const BinaryGrid region = largest_component(mask, k, &c.region_pixels);
        if (c.region_pixels == 0) {
            out.push_back(std::move(c));
            continue;
        }
        c.present = true;
        c.traced = trace_boundary(region);
        std::vector<Point> pts = resample_closed(c.traced, n_points);
        double signed_area = 0.0;
        for (std::size_t i = 0; i < pts.size(); ++i) {
            const Point& a = pts[i];
            const Point& b = pts[(i + 1) % pts.size()];
            signed_area += a.x * b.y - b.x * a.y;
        }
        if (signed_area < 0.0)
            std::reverse(pts.begin() + 1, pts.end());
        for (auto& p : pts)
            p = {p.x / w, p.y / h};
        c.points = std::move(pts);
        out.push_back(std::move(c));
    }
    return out;
}

ShapeDescriptor describe(const Contour& contour, std::size_t region_pixel_count, int height, int width)
{
    ShapeDescriptor d;
    if (!contour.present || contour.points.empty())
        return d;
    const auto& pts = contour.points;
    const double n = static_cast<double>(pts.size());
    // Mean as an offset from the first point, so identical points give exactly zero spread.
    double ox = 0.0, oy = 0.0;
    for (const auto& p : pts) {
        ox += p.x - pts[0].x;
        oy += p.y - pts[0].y;
    }
    d.mu_x = pts[0].x + ox / n;
    d.mu_y = pts[0].y + oy / n;
    double vx = 0.0, vy = 0.0, length = 0.0;
    for (std::size_t i = 0; i < pts.size(); ++i) {
        vx += (pts[i].x - d.mu_x) * (pts[i].x - d.mu_x);
        vy += (pts[i].y - d.mu_y) * (pts[i].y - d.mu_y);
        const Point& a = pts[i];
        const Point& b = pts[(i + 1) % pts.size()];
        length += std::hypot((b.x - a.x) * width, (b.y - a.y) * height);
    }
    d.sigma_x = std::sqrt(vx / n);
    d.sigma_y = std::sqrt(vy / n);
    d.area = static_cast<double>(region_pixel_count) / (static_cast<double>(width) * height);
    d.perimeter = length / (2.0 * (width + height));
    return d;
}

std::vector<ShapeDescriptor> describe_all(const std::vector<Contour>& contours, int height, int width)
{
    std::vector<ShapeDescriptor> out;
    out.reserve(contours.size());
    for (const auto& c : contours)
        out.push_back(describe(c, c.region_pixels, height, width));
    return out;
}

std::vector<ShapeDescriptor> descriptors_from_mask(const LabelGrid& mask, int n_classes, int n_points)
{
    return describe_all(extract_contours(mask, n_classes, n_points), mask.height, mask.width);
}

std::string contours_csv(const std::vector<Contour>& contours)
{
    std::string out = "class,x_norm,y_norm\n";
    char buf[96];
    for (const auto& c : contours) {
        if (!c.present)
            continue;
        for (const auto& p : c.points) {
            std::snprintf(buf, sizeof(buf), "%d,%.9g,%.9g\n", c.class_id, p.x, p.y);
            out += buf;
        }
    }
    return out;
}

}  // namespace cgqr::contour
