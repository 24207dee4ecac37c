// Ground-truth density maps from dot annotations: a head at (x, y) becomes a
// truncated 2D Gaussian renormalized to unit mass, so the map integrates to
// the head count exactly.
#pragma once

#include <string>
#include <vector>

#include "stdnet/tensor.hpp"

namespace stdnet {

struct Point {
    double x = 0.0;  // column coordinate
    double y = 0.0;  // row coordinate
};

struct DotAnnotations {
    i64 frame_id = 0;
    i64 height = 0;
    i64 width = 0;
    std::vector<Point> points;
};

struct DensityMap {
    Tensor values;  // [H, W]

    DensityMap() = default;
    explicit DensityMap(Tensor v);

    i64 height() const { return values.dim(0); }
    i64 width() const { return values.dim(1); }
    double count() const { return values.sum(); }
};

// How per-point Gaussian widths are chosen when rendering ground truth.
struct SigmaPolicy {
    enum class Kind { fixed, adaptive };
    Kind kind = Kind::fixed;
    double sigma = 3.0;  // fixed width
    double beta = 0.3;   // adaptive: sigma = beta * mean kNN distance
    int k = 3;

    static SigmaPolicy fixed(double sigma);
    static SigmaPolicy adaptive(double beta, int k);
    // "fixed:3" or "adaptive:0.3,3"
    static SigmaPolicy parse(const std::string& text);
    std::string str() const;
};

// Per-point mean Euclidean distance to the k nearest *other* points.
// Fewer than k neighbours available: average over all of them. Neighbour
// order ties broken by (distance, point index). Needs at least 2 points.
std::vector<double> knn_mean_distance(const std::vector<Point>& points, int k);

// sigma_j = beta * mean kNN distance, floored at 0.5. Fewer than 2 points:
// falls back to sigma = 3 for every point.
std::vector<double> adaptive_sigmas(const DotAnnotations& ann, double beta = 0.3, int k = 3);

// Sum of per-point Gaussians sampled at integer pixel centres. Each blob is
// truncated to a square window of radius ceil(4 sigma), clipped to the image,
// and renormalized to sum exactly 1 over the surviving pixels. All points must
// lie in [0, W) x [0, H).
DensityMap render_density(const DotAnnotations& ann, const std::vector<double>& sigma_per_point);
DensityMap render_density(const DotAnnotations& ann, const SigmaPolicy& policy);

// Horizontal flip of the annotation: x' = W - 1 - x. Involution.
DotAnnotations hflip(const DotAnnotations& ann);

// Mirror a raster left-right (used to keep augmentation consistent with
// annotation flips).
Tensor hflip_raster(const Tensor& image);  // [..., W]: flips the last axis

}  // namespace stdnet
