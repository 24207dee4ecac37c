#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <stdexcept>

#include "stdnet/density.hpp"
#include "stdnet/rng.hpp"

using namespace stdnet;

namespace {

DotAnnotations make_ann(i64 h, i64 w, std::vector<Point> pts) {
    DotAnnotations ann;
    ann.frame_id = 0;
    ann.height = h;
    ann.width = w;
    ann.points = std::move(pts);
    return ann;
}

}  // namespace

TEST_CASE("knn mean distance on the worked example") {
    // {(0,0),(3,0),(0,4)}: pairwise distances 3, 4, 5.
    std::vector<Point> pts = {{0, 0}, {3, 0}, {0, 4}};
    std::vector<double> d = knn_mean_distance(pts, 2);
    CHECK(d[0] == doctest::Approx(3.5).epsilon(1e-15));
    CHECK(d[1] == doctest::Approx(4.0).epsilon(1e-15));
    CHECK(d[2] == doctest::Approx(4.5).epsilon(1e-15));
}

TEST_CASE("knn mean distance matches brute force on random sets") {
    Rng rng(5);
    for (int rep = 0; rep < 20; ++rep) {
        std::vector<Point> pts;
        const int n = 2 + static_cast<int>(rng.below(12));
        for (int i = 0; i < n; ++i) pts.push_back({rng.uniform(0.0, 30.0), rng.uniform(0.0, 20.0)});
        const int k = 3;
        std::vector<double> got = knn_mean_distance(pts, k);
        for (int i = 0; i < n; ++i) {
            std::vector<double> ds;
            for (int j = 0; j < n; ++j) {
                if (j == i) continue;
                const double dx = pts[(std::size_t)i].x - pts[(std::size_t)j].x;
                const double dy = pts[(std::size_t)i].y - pts[(std::size_t)j].y;
                ds.push_back(std::sqrt(dx * dx + dy * dy));
            }
            std::sort(ds.begin(), ds.end());
            const int take = std::min<int>(k, n - 1);
            double mean = 0.0;
            for (int t = 0; t < take; ++t) mean += ds[(std::size_t)t];
            mean /= take;
            CHECK(got[(std::size_t)i] == doctest::Approx(mean).epsilon(1e-12));
        }
    }
}

TEST_CASE("knn handles coincident points and needs two points") {
    std::vector<Point> pts = {{5, 5}, {5, 5}, {8, 9}};
    std::vector<double> d = knn_mean_distance(pts, 1);
    CHECK(d[0] == 0.0);  // nearest other point coincides
    CHECK(d[1] == 0.0);
    CHECK(d[2] == doctest::Approx(5.0).epsilon(1e-15));
    CHECK_THROWS_AS(knn_mean_distance({{1, 1}}, 1), std::invalid_argument);
}

TEST_CASE("adaptive sigmas floor and fallback") {
    // Two nearly coincident points: beta * dbar would be ~0, the floor holds.
    DotAnnotations tight = make_ann(20, 20, {{10.0, 10.0}, {10.2, 10.0}});
    std::vector<double> s = adaptive_sigmas(tight);
    CHECK(s[0] == 0.5);
    CHECK(s[1] == 0.5);

    DotAnnotations lone = make_ann(20, 20, {{10.0, 10.0}});
    std::vector<double> one = adaptive_sigmas(lone);
    CHECK(one[0] == 3.0);  // too few points for a neighbour estimate

    DotAnnotations spread = make_ann(40, 40, {{5, 5}, {15, 5}, {5, 15}});
    std::vector<double> sp = adaptive_sigmas(spread, 0.3, 3);
    // (5,5): neighbours at 10 and 10 -> dbar 10 -> sigma 3.
    CHECK(sp[0] == doctest::Approx(3.0).epsilon(1e-12));
}

TEST_CASE("density render preserves count and stays nonnegative") {
    Rng rng(6);
    for (int rep = 0; rep < 25; ++rep) {
        const i64 h = 10 + static_cast<i64>(rng.below(30));
        const i64 w = 10 + static_cast<i64>(rng.below(30));
        std::vector<Point> pts;
        const int n = static_cast<int>(rng.below(8));
        for (int i = 0; i < n; ++i)
            pts.push_back({rng.uniform(0.0, static_cast<double>(w - 1)),
                           rng.uniform(0.0, static_cast<double>(h - 1))});
        // Border and coincident points are the interesting cases.
        pts.push_back({0.0, 0.0});
        pts.push_back({static_cast<double>(w - 1), static_cast<double>(h - 1)});
        pts.push_back({static_cast<double>(w - 1), static_cast<double>(h - 1)});
        DotAnnotations ann = make_ann(h, w, pts);

        DensityMap fixed = render_density(ann, SigmaPolicy::fixed(3.0));
        CHECK(std::abs(fixed.count() - static_cast<double>(pts.size())) < 1e-9);
        DensityMap adaptive = render_density(ann, SigmaPolicy::adaptive(0.3, 3));
        CHECK(std::abs(adaptive.count() - static_cast<double>(pts.size())) < 1e-9);
        double lo = 0.0;
        for (i64 i = 0; i < fixed.values.numel(); ++i) lo = std::min(lo, fixed.values[i]);
        CHECK(lo == 0.0);
    }
}

TEST_CASE("density render is a superposition of single-point renders") {
    DotAnnotations ann = make_ann(24, 18, {{3.2, 4.1}, {16.0, 20.0}, {0.0, 23.0}});
    std::vector<double> sigmas = {1.0, 2.0, 0.7};
    DensityMap all = render_density(ann, sigmas);
    Tensor acc = Tensor::zeros({24, 18});
    for (std::size_t i = 0; i < ann.points.size(); ++i) {
        DotAnnotations single = make_ann(24, 18, {ann.points[i]});
        DensityMap one = render_density(single, {sigmas[i]});
        acc = add(acc, one.values);
    }
    for (i64 i = 0; i < acc.numel(); ++i)
        CHECK(all.values[i] == doctest::Approx(acc[i]).epsilon(1e-12));
}

TEST_CASE("blob mass is truncated at radius ceil(4 sigma)") {
    DotAnnotations ann = make_ann(41, 41, {{20.0, 20.0}});
    DensityMap dm = render_density(ann, {1.0});  // radius 4
    CHECK(dm.values.at({20, 20}) > 0.0);
    CHECK(dm.values.at({20, 24}) > 0.0);
    CHECK(dm.values.at({20, 25}) == 0.0);  // outside the window, exactly zero
    CHECK(dm.values.at({25, 25}) == 0.0);
    CHECK(std::abs(dm.count() - 1.0) < 1e-12);
}

TEST_CASE("render rejects out-of-bounds points naming the point") {
    DotAnnotations bad = make_ann(10, 10, {{2.0, 3.0}, {10.0, 5.0}});
    try {
        render_density(bad, SigmaPolicy::fixed(3.0));
        CHECK(false);
    } catch (const std::invalid_argument& e) {
        const std::string msg = e.what();
        CHECK(msg.find("point 1") != std::string::npos);
    }
}

TEST_CASE("hflip mirrors annotations and rasters consistently") {
    DotAnnotations ann = make_ann(12, 17, {{0.0, 2.0}, {16.0, 3.0}, {5.25, 7.5}});
    DotAnnotations flipped = hflip(ann);
    CHECK(flipped.points[0].x == 16.0);
    CHECK(flipped.points[1].x == 0.0);
    CHECK(flipped.points[2].x == doctest::Approx(10.75).epsilon(1e-15));
    CHECK(flipped.points[2].y == 7.5);

    // Rendering the flipped annotation equals flipping the rendered raster.
    std::vector<double> sigmas = {1.0, 1.5, 2.0};
    DensityMap direct = render_density(flipped, sigmas);
    DensityMap mirrored = DensityMap(hflip_raster(render_density(ann, sigmas).values));
    for (i64 i = 0; i < direct.values.numel(); ++i)
        CHECK(direct.values[i] == doctest::Approx(mirrored.values[i]).epsilon(1e-12));
}

TEST_CASE("hflip_raster flips the last axis of any rank") {
    Tensor t = Tensor::zeros({2, 3});
    for (i64 i = 0; i < 6; ++i) t[i] = static_cast<double>(i);
    Tensor f = hflip_raster(t);
    CHECK(f.at({0, 0}) == 2.0);
    CHECK(f.at({0, 2}) == 0.0);
    CHECK(f.at({1, 1}) == 4.0);
}

TEST_CASE("sigma policy parse and print") {
    SigmaPolicy f = SigmaPolicy::parse("fixed:2.5");
    CHECK(f.kind == SigmaPolicy::Kind::fixed);
    CHECK(f.sigma == 2.5);
    SigmaPolicy a = SigmaPolicy::parse("adaptive:0.3,3");
    CHECK(a.kind == SigmaPolicy::Kind::adaptive);
    CHECK(a.beta == 0.3);
    CHECK(a.k == 3);
    CHECK(SigmaPolicy::parse(f.str()).sigma == 2.5);
    CHECK(SigmaPolicy::parse(a.str()).beta == 0.3);
    CHECK_THROWS_AS(SigmaPolicy::parse("triangular:2"), std::invalid_argument);
    CHECK_THROWS_AS(SigmaPolicy::parse("fixed:-1"), std::invalid_argument);
}
