#include "stdnet/density.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace stdnet {

DensityMap::DensityMap(Tensor v) : values(std::move(v)) {
    require(values.rank() == 2, "density map must be rank 2, got " + values.shape_str());
}

SigmaPolicy SigmaPolicy::fixed(double sigma) {
    require(sigma > 0.0 && std::isfinite(sigma), "fixed sigma must be positive");
    SigmaPolicy p;
    p.kind = Kind::fixed;
    p.sigma = sigma;
    return p;
}

SigmaPolicy SigmaPolicy::adaptive(double beta, int k) {
    require(beta > 0.0 && std::isfinite(beta), "adaptive beta must be positive");
    require(k >= 1, "adaptive k must be >= 1");
    SigmaPolicy p;
    p.kind = Kind::adaptive;
    p.beta = beta;
    p.k = k;
    return p;
}

SigmaPolicy SigmaPolicy::parse(const std::string& text) {
    const auto colon = text.find(':');
    require(colon != std::string::npos, "sigma policy must look like fixed:3 or adaptive:0.3,3");
    const std::string head = text.substr(0, colon);
    const std::string rest = text.substr(colon + 1);
    try {
        if (head == "fixed") return fixed(std::stod(rest));
        if (head == "adaptive") {
            const auto comma = rest.find(',');
            require(comma != std::string::npos, "adaptive sigma policy needs beta,k");
            return adaptive(std::stod(rest.substr(0, comma)),
                            std::stoi(rest.substr(comma + 1)));
        }
    } catch (const std::invalid_argument&) {
        throw;
    } catch (const std::exception&) {
        throw std::invalid_argument("could not parse sigma policy: " + text);
    }
    throw std::invalid_argument("unknown sigma policy kind: " + head);
}

std::string SigmaPolicy::str() const {
    if (kind == Kind::fixed) return "fixed:" + std::to_string(sigma);
    return "adaptive:" + std::to_string(beta) + "," + std::to_string(k);
}

std::vector<double> knn_mean_distance(const std::vector<Point>& points, int k) {
    require(k >= 1, "knn_mean_distance: k must be >= 1");
    const std::size_t n = points.size();
    require(n >= 2, "knn_mean_distance: need at least 2 points");

    std::vector<double> out(n, 0.0);
    std::vector<std::pair<double, std::size_t>> dists;  // (distance, neighbour index)
    dists.reserve(n - 1);
    for (std::size_t i = 0; i < n; ++i) {
        dists.clear();
        for (std::size_t j = 0; j < n; ++j) {
            if (j == i) continue;
            const double dx = points[i].x - points[j].x;
            const double dy = points[i].y - points[j].y;
            dists.emplace_back(std::sqrt(dx * dx + dy * dy), j);
        }
        const std::size_t take = std::min<std::size_t>(static_cast<std::size_t>(k), dists.size());
        std::partial_sort(dists.begin(), dists.begin() + static_cast<std::ptrdiff_t>(take),
                          dists.end());
        double acc = 0.0;
        for (std::size_t t = 0; t < take; ++t) acc += dists[t].first;
        out[i] = acc / static_cast<double>(take);
    }
    return out;
}

std::vector<double> adaptive_sigmas(const DotAnnotations& ann, double beta, int k) {
    require(beta > 0.0, "adaptive_sigmas: beta must be positive");
    require(k >= 1, "adaptive_sigmas: k must be >= 1");
    if (ann.points.size() < 2) {
        return std::vector<double>(ann.points.size(), 3.0);
    }
    std::vector<double> sig = knn_mean_distance(ann.points, k);
    for (double& s : sig) s = std::max(beta * s, 0.5);
    return sig;
}

DensityMap render_density(const DotAnnotations& ann, const std::vector<double>& sigma_per_point) {
    const i64 h = ann.height, w = ann.width;
    require(h > 0 && w > 0, "render_density: image size must be positive");
    require(sigma_per_point.size() == ann.points.size(),
            "render_density: one sigma per point required");

    Tensor map({h, w});
    double* mp = map.data();
    for (std::size_t p = 0; p < ann.points.size(); ++p) {
        const Point& pt = ann.points[p];
        require(pt.x >= 0.0 && pt.x < static_cast<double>(w) && pt.y >= 0.0 &&
                    pt.y < static_cast<double>(h),
                "render_density: point " + std::to_string(p) + " out of bounds");
        const double sigma = sigma_per_point[p];
        require(sigma > 0.0 && std::isfinite(sigma),
                "render_density: sigma for point " + std::to_string(p) + " must be positive");

        const double rad = std::ceil(4.0 * sigma);
        const i64 j0 = std::max<i64>(0, static_cast<i64>(std::ceil(pt.x - rad)));
        const i64 j1 = std::min<i64>(w - 1, static_cast<i64>(std::floor(pt.x + rad)));
        const i64 i0 = std::max<i64>(0, static_cast<i64>(std::ceil(pt.y - rad)));
        const i64 i1 = std::min<i64>(h - 1, static_cast<i64>(std::floor(pt.y + rad)));
        require(i0 <= i1 && j0 <= j1, "render_density: empty blob window");

        // First pass: unnormalized blob mass over surviving pixels.
        const double inv2s2 = 1.0 / (2.0 * sigma * sigma);
        double mass = 0.0;
        for (i64 i = i0; i <= i1; ++i) {
            const double dy = static_cast<double>(i) - pt.y;
            for (i64 j = j0; j <= j1; ++j) {
                const double dx = static_cast<double>(j) - pt.x;
                mass += std::exp(-(dx * dx + dy * dy) * inv2s2);
            }
        }
        // Second pass: deposit the unit-mass blob.
        const double inv_mass = 1.0 / mass;
        for (i64 i = i0; i <= i1; ++i) {
            const double dy = static_cast<double>(i) - pt.y;
            double* row = mp + i * w;
            for (i64 j = j0; j <= j1; ++j) {
                const double dx = static_cast<double>(j) - pt.x;
                row[j] += std::exp(-(dx * dx + dy * dy) * inv2s2) * inv_mass;
            }
        }
    }
    return DensityMap(std::move(map));
}

DensityMap render_density(const DotAnnotations& ann, const SigmaPolicy& policy) {
    if (policy.kind == SigmaPolicy::Kind::fixed) {
        return render_density(ann, std::vector<double>(ann.points.size(), policy.sigma));
    }
    return render_density(ann, adaptive_sigmas(ann, policy.beta, policy.k));
}

DotAnnotations hflip(const DotAnnotations& ann) {
    DotAnnotations out = ann;
    const double wm1 = static_cast<double>(ann.width - 1);
    for (Point& p : out.points) p.x = wm1 - p.x;
    return out;
}

Tensor hflip_raster(const Tensor& image) {
    require(image.rank() >= 1, "hflip_raster: rank >= 1 required");
    const i64 w = image.dim(image.rank() - 1);
    const i64 rows = image.numel() / w;
    Tensor out(image.shape());
    const double* src = image.data();
    double* dst = out.data();
    for (i64 r = 0; r < rows; ++r) {
        const double* s = src + r * w;
        double* d = dst + r * w;
        for (i64 j = 0; j < w; ++j) d[j] = s[w - 1 - j];
    }
    return out;
}

}  // namespace stdnet
