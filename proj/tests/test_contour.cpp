#include "cgqr/contour.hpp"
#include "oracles/grid_oracles.hpp"
#include "oracles/mask_families.hpp"

#include <doctest.h>

#include <set>

using namespace cgqr;
using namespace cgqr::contour;

namespace {

LabelGrid block_mask()
{
    LabelGrid m(8, 8, 0);
    for (int y = 2; y <= 5; ++y)
        for (int x = 2; x <= 5; ++x)
            m(y, x) = 1;
    return m;
}

std::set<std::pair<int, int>> traced_set(const Contour& c)
{
    std::set<std::pair<int, int>> s;
    for (const auto& p : c.traced)
        s.insert({p.x, p.y});
    return s;
}

double signed_area(const std::vector<Point>& pts)
{
    double a = 0.0;
    for (std::size_t i = 0; i < pts.size(); ++i) {
        const auto& p = pts[i];
        const auto& q = pts[(i + 1) % pts.size()];
        a += p.x * q.y - q.x * p.y;
    }
    return a / 2.0;
}

}  // namespace

TEST_CASE("absent classes")
{
    const auto cs = extract_contours(LabelGrid(8, 8, 0), 3, 16);
    REQUIRE(cs.size() == 3);
    for (const auto& c : cs) {
        CHECK_FALSE(c.present);
        CHECK(c.points.empty());
        CHECK(describe(c, 0, 8, 8) == ShapeDescriptor{});
    }
}

TEST_CASE("square block")
{
    const auto m = block_mask();
    const auto cs = extract_contours(m, 1, 16);
    REQUIRE(cs[0].present);
    CHECK(cs[0].points.size() == 16);
    const auto expected = oracle::outer_boundary(oracle::largest_component(m, 1), 8, 8);
    CHECK(expected.size() == 12);
    CHECK(cs[0].traced.size() == expected.size());
    CHECK(traced_set(cs[0]) == expected);
    CHECK(signed_area(cs[0].points) > 0.0);

    const auto d = describe_all(cs, 8, 8)[0];
    CHECK(d.mu_x == doctest::Approx(0.4375).epsilon(1e-12));
    CHECK(d.mu_y == doctest::Approx(0.4375).epsilon(1e-12));
    CHECK(d.area == 0.25);
    const auto c = oracle::centroid(oracle::largest_component(m, 1), 8, 8);
    CHECK(c.x == doctest::Approx(0.4375));
    CHECK(c.y == doctest::Approx(0.4375));
}

TEST_CASE("largest component wins")
{
    LabelGrid m(10, 10, 0);
    for (int y = 0; y < 3; ++y)
        for (int x = 0; x < 3; ++x)
            m(y + 5, x + 5) = 1;
    for (int y = 0; y < 2; ++y)
        for (int x = 0; x < 2; ++x)
            m(y + 1, x + 1) = 1;
    const auto cs = extract_contours(m, 1, 16);
    CHECK(cs[0].region_pixels == 9);
    for (const auto& p : cs[0].traced) {
        CHECK(p.x >= 5);
        CHECK(p.y >= 5);
    }
    CHECK(traced_set(cs[0]) == oracle::outer_boundary(oracle::largest_component(m, 1), 10, 10));
}

TEST_CASE("describe edge cases")
{
    Contour same;
    same.present = true;
    same.points.assign(10, Point{0.3, 0.6});
    const auto d = describe(same, 1, 10, 10);
    CHECK(d.sigma_x == 0.0);
    CHECK(d.sigma_y == 0.0);
    CHECK(d.mu_x == doctest::Approx(0.3));

    // one-pixel-wide bar: the trace runs out and back exactly once
    LabelGrid bar(9, 7, 0);
    for (int x = 1; x <= 6; ++x)
        bar(8, x) = 1;
    const auto c = extract_contours(bar, 1, 64)[0];
    CHECK(c.traced.size() == 10);
    CHECK(describe(c, c.region_pixels, 9, 7).mu_x == doctest::Approx(3.5 / 7.0));
}

TEST_CASE("traced boundary equals the enumeration oracle on random masks")
{
    std::mt19937_64 rng(17);
    int checked = 0;
    for (int t = 0; t < 300; ++t) {
        const LabelGrid m = t % 3 == 0   ? oracle::bernoulli_mask(rng, 16, 0.5)
                            : t % 3 == 1 ? oracle::bernoulli_mask(rng, 16, 0.75)
                                         : oracle::rectangle_union(rng, 16);
        const auto region = oracle::largest_component(m, 1);
        const auto cs = extract_contours(m, 1, 32);
        CHECK(cs[0].present == !region.empty());
        if (region.empty())
            continue;
        ++checked;
        CHECK(traced_set(cs[0]) == oracle::outer_boundary(region, m.height, m.width));
        CHECK(cs[0].region_pixels == region.size());
        const auto d = describe_all(cs, m.height, m.width)[0];
        CHECK(d.area == static_cast<double>(region.size()) / (m.height * m.width));
        for (const auto& p : cs[0].points) {
            CHECK(p.x >= 0.0);
            CHECK(p.x <= 1.0);
            CHECK(p.y >= 0.0);
            CHECK(p.y <= 1.0);
        }
        for (double v : d.as_array())
            CHECK(std::isfinite(v));
    }
    CHECK(checked >= 100);
}

TEST_CASE("descriptor centroid tracks the region centroid on closed shapes")
{
    std::mt19937_64 rng(23);
    for (int t = 0; t < 150; ++t) {
        const LabelGrid m = oracle::closed_shape(rng, 16);
        const auto region = oracle::largest_component(m, 1);
        const auto c = oracle::centroid(region, m.height, m.width);
        const auto d = descriptors_from_mask(m, 1)[0];
        CHECK(std::abs(d.mu_x - c.x) < 2e-2);
        CHECK(std::abs(d.mu_y - c.y) < 2e-2);
        CHECK(d.area == doctest::Approx(static_cast<double>(region.size()) / (m.height * m.width)));
    }
}

TEST_CASE("translation, relabeling and scaling")
{
    LabelGrid a(20, 20, 0), b(20, 20, 0);
    for (int y = 3; y < 9; ++y)
        for (int x = 2; x < 7 + (y % 2); ++x) {
            a(y, x) = 1;
            b(y + 5, x + 4) = 1;
        }
    const auto da = descriptors_from_mask(a, 1)[0], db = descriptors_from_mask(b, 1)[0];
    CHECK(db.mu_x - da.mu_x == doctest::Approx(4.0 / 20).epsilon(1e-9));
    CHECK(db.mu_y - da.mu_y == doctest::Approx(5.0 / 20).epsilon(1e-9));
    CHECK(std::abs(db.area - da.area) < 1e-3);
    CHECK(std::abs(db.sigma_x - da.sigma_x) < 1e-3);
    CHECK(std::abs(db.sigma_y - da.sigma_y) < 1e-3);

    LabelGrid multi = a;
    for (int y = 12; y < 18; ++y)
        for (int x = 10; x < 16; ++x)
            multi(y, x) = 2;
    LabelGrid relabeled = multi;
    for (auto& v : relabeled.values)
        if (v == 2)
            v = 3;
    CHECK(descriptors_from_mask(multi, 3)[0] == descriptors_from_mask(relabeled, 3)[0]);

    LabelGrid big(40, 40, 0);
    for (int y = 0; y < 40; ++y)
        for (int x = 0; x < 40; ++x)
            big(y, x) = a(y / 2, x / 2);
    // Pixel-index coordinates: a doubled pixel x covers 2x and 2x + 1, so its
    // normalized position moves by half a pixel of the larger grid.
    const auto dbig = descriptors_from_mask(big, 1)[0];
    CHECK(std::abs(dbig.mu_x - (da.mu_x + 0.5 / 40)) < 1e-2);
    CHECK(std::abs(dbig.mu_y - (da.mu_y + 0.5 / 40)) < 1e-2);
}

TEST_CASE("extraction is repeatable and the CSV dump has one row per point")
{
    std::mt19937_64 rng(5);
    const auto m = oracle::rectangle_union(rng, 16);
    CHECK(extract_contours(m, 1) == extract_contours(m, 1));
    const auto cs = extract_contours(m, 1, 20);
    const std::string csv = contours_csv(cs);
    CHECK(csv.rfind("class,x_norm,y_norm\n", 0) == 0);
    CHECK(std::count(csv.begin(), csv.end(), '\n') == 21);
    CHECK_THROWS_AS(extract_contours(m, 1, 3), ConfigError);
}
