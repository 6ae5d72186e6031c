#pragma once

// Brute-force reference computations on label grids. Written against the
// definitions directly, without sharing code with the library.

#include "cgqr/tensor.hpp"

#include <cmath>
#include <deque>
#include <set>
#include <utility>
#include <vector>

namespace oracle {

using cgqr::BinaryGrid;
using cgqr::LabelGrid;

// Morphological gradient with a 3x3 cross iterated t times is equivalent to:
// some pixel within L1 distance t (coordinates clamped to the image) has a
// different label.
inline BinaryGrid boundary_target(const LabelGrid& m, int t)
{
    BinaryGrid out(m.height, m.width, 0);
    for (int y = 0; y < m.height; ++y)
        for (int x = 0; x < m.width; ++x) {
            bool edge = false;
            for (int dy = -t; dy <= t && !edge; ++dy)
                for (int dx = -t; dx <= t && !edge; ++dx) {
                    if (std::abs(dx) + std::abs(dy) > t)
                        continue;
                    int yy = std::min(std::max(y + dy, 0), m.height - 1);
                    int xx = std::min(std::max(x + dx, 0), m.width - 1);
                    edge = m(yy, xx) != m(y, x);
                }
            out(y, x) = edge;
        }
    return out;
}

// 4-connected components of `label`, each as a pixel set, in raster order of
// their first pixel.
inline std::vector<std::vector<std::pair<int, int>>> components(const LabelGrid& m, int label)
{
    std::vector<int> seen(m.size(), 0);
    std::vector<std::vector<std::pair<int, int>>> comps;
    for (int y = 0; y < m.height; ++y)
        for (int x = 0; x < m.width; ++x) {
            if (m(y, x) != label || seen[y * m.width + x])
                continue;
            std::vector<std::pair<int, int>> comp;
            std::deque<std::pair<int, int>> q{{x, y}};
            seen[y * m.width + x] = 1;
            while (!q.empty()) {
                auto [cx, cy] = q.front();
                q.pop_front();
                comp.push_back({cx, cy});
                const int dx[4] = {1, -1, 0, 0}, dy[4] = {0, 0, 1, -1};
                for (int k = 0; k < 4; ++k) {
                    int nx = cx + dx[k], ny = cy + dy[k];
                    if (nx < 0 || ny < 0 || nx >= m.width || ny >= m.height)
                        continue;
                    if (m(ny, nx) != label || seen[ny * m.width + nx])
                        continue;
                    seen[ny * m.width + nx] = 1;
                    q.push_back({nx, ny});
                }
            }
            comps.push_back(std::move(comp));
        }
    return comps;
}

inline std::vector<std::pair<int, int>> largest_component(const LabelGrid& m, int label)
{
    std::vector<std::pair<int, int>> best;
    for (auto& c : components(m, label))
        if (c.size() > best.size())
            best = c;
    return best;
}

// Region pixels with a 4-neighbour in the exterior. The exterior is the set of
// non-region cells (including a one-pixel frame around the image) 4-connected
// to the frame, so pixels facing only an enclosed hole are not boundary.
inline std::set<std::pair<int, int>> outer_boundary(const std::vector<std::pair<int, int>>& region, int h, int w)
{
    const int H = h + 2, W = w + 2;
    std::vector<int> inside(H * W, 0), ext(H * W, 0);
    for (auto [x, y] : region)
        inside[(y + 1) * W + x + 1] = 1;
    std::deque<int> q{0};
    ext[0] = 1;
    while (!q.empty()) {
        int c = q.front();
        q.pop_front();
        int cy = c / W, cx = c % W;
        const int dx[4] = {1, -1, 0, 0}, dy[4] = {0, 0, 1, -1};
        for (int k = 0; k < 4; ++k) {
            int nx = cx + dx[k], ny = cy + dy[k];
            if (nx < 0 || ny < 0 || nx >= W || ny >= H)
                continue;
            int n = ny * W + nx;
            if (inside[n] || ext[n])
                continue;
            ext[n] = 1;
            q.push_back(n);
        }
    }
    std::set<std::pair<int, int>> out;
    for (auto [x, y] : region) {
        const int dx[4] = {1, -1, 0, 0}, dy[4] = {0, 0, 1, -1};
        for (int k = 0; k < 4; ++k)
            if (ext[(y + 1 + dy[k]) * W + x + 1 + dx[k]]) {
                out.insert({x, y});
                break;
            }
    }
    return out;
}

struct Centroid {
    double x = 0.0;
    double y = 0.0;
};

// Mean of normalized pixel coordinates (x / W, y / H).
template <typename Pixels>
Centroid centroid(const Pixels& px, int h, int w)
{
    Centroid c;
    for (const auto& [x, y] : px) {
        c.x += static_cast<double>(x) / w;
        c.y += static_cast<double>(y) / h;
    }
    c.x /= static_cast<double>(px.size());
    c.y /= static_cast<double>(px.size());
    return c;
}

// Per-class hard Dice pooled over a set of prediction / target pairs.
struct Pooled {
    long long inter = 0, pred = 0, gt = 0;
};
inline std::vector<Pooled> pooled_counts(const std::vector<LabelGrid>& preds, const std::vector<LabelGrid>& gts,
                                         int k)
{
    std::vector<Pooled> out(k + 1);
    for (std::size_t s = 0; s < preds.size(); ++s)
        for (std::size_t i = 0; i < preds[s].size(); ++i)
            for (int c = 1; c <= k; ++c) {
                bool p = preds[s].values[i] == c, g = gts[s].values[i] == c;
                out[c].inter += p && g;
                out[c].pred += p;
                out[c].gt += g;
            }
    return out;
}

// Line rasterization by definition: one pixel per step along the major axis,
// the minor coordinate rounded to the nearest integer with exact halves
// resolved toward the segment's end point.
inline void line(BinaryGrid& g, int x0, int y0, int x1, int y1)
{
    const int dx = x1 - x0, dy = y1 - y0;
    const int n = std::max(std::abs(dx), std::abs(dy));
    auto nearest = [](int start, int num, int den, int direction) {
        // start + num / den with den > 0
        int q = num >= 0 ? num / den : -((-num + den - 1) / den);
        int r = num - q * den;
        if (2 * r > den || (2 * r == den && direction > 0))
            ++q;
        return start + q;
    };
    for (int i = 0; i <= n; ++i) {
        int x = x0, y = y0;
        if (n > 0 && std::abs(dx) >= std::abs(dy)) {
            x = x0 + (dx > 0 ? i : -i);
            y = nearest(y0, dy * i, n, dy);
        } else if (n > 0) {
            y = y0 + (dy > 0 ? i : -i);
            x = nearest(x0, dx * i, n, dx);
        }
        if (x >= 0 && y >= 0 && x < g.width && y < g.height)
            g(y, x) = 1;
    }
}

}  // namespace oracle
