#include "stdnet/losses.hpp"

#include <cmath>
#include <string>

#include "stdnet/conv.hpp"

namespace stdnet {

namespace {

void validate_batch(const std::vector<DensityMap>& pred, const std::vector<DensityMap>& gt,
                    const char* who) {
    require(!pred.empty(), std::string(who) + ": empty batch");
    require(pred.size() == gt.size(), std::string(who) + ": batch size mismatch");
    for (std::size_t i = 0; i < pred.size(); ++i) {
        require(pred[i].values.same_shape(gt[i].values),
                std::string(who) + ": map shape mismatch at item " + std::to_string(i));
    }
}

// Same-size zero-padded correlation of a [H, W] map with a [k, k] kernel.
Tensor correlate_same(const Tensor& map, const Tensor& kernel) {
    ConvSpec s;
    s.in_channels = 1;
    s.out_channels = 1;
    s.kh = static_cast<int>(kernel.dim(0));
    s.kw = static_cast<int>(kernel.dim(1));
    s.bias = false;
    ConvWeights wts;
    wts.w = kernel.reshaped({1, 1, 1, kernel.dim(0), kernel.dim(1)});
    const Tensor x = map.reshaped({1, 1, map.dim(0), map.dim(1)});
    return conv3d(x, s, wts).reshaped({map.dim(0), map.dim(1)});
}

}  // namespace

LossReport pixelwise_l2(const std::vector<DensityMap>& pred, const std::vector<DensityMap>& gt,
                        std::vector<Tensor>* grads) {
    validate_batch(pred, gt, "pixelwise_l2");
    const double nb = static_cast<double>(pred.size());
    if (grads) grads->clear();

    double total = 0.0;
    for (std::size_t i = 0; i < pred.size(); ++i) {
        const Tensor& p = pred[i].values;
        const Tensor& g = gt[i].values;
        double sq = 0.0;
        for (i64 j = 0; j < p.numel(); ++j) {
            const double d = p[j] - g[j];
            sq += d * d;
        }
        total += sq;
        if (grads) {
            Tensor gr(p.shape());
            for (i64 j = 0; j < p.numel(); ++j) gr[j] = (p[j] - g[j]) / nb;
            grads->push_back(std::move(gr));
        }
    }

    LossReport rep;
    rep.kind = LossKind::pixelwise_l2;
    rep.total = total / (2.0 * nb);
    return rep;
}

Tensor smoothing_kernel(int z, double sigma) {
    require(z >= 1, "smoothing_kernel: z must be >= 1");
    require(sigma > 0.0 && std::isfinite(sigma), "smoothing_kernel: sigma must be positive");
    const int r = z - 1;
    const i64 k = 2 * z - 1;
    Tensor ker({k, k});
    const double inv2s2 = 1.0 / (2.0 * sigma * sigma);
    double mass = 0.0;
    for (int dy = -r; dy <= r; ++dy) {
        for (int dx = -r; dx <= r; ++dx) {
            const double v = std::exp(-(static_cast<double>(dx * dx + dy * dy)) * inv2s2);
            ker[(dy + r) * k + (dx + r)] = v;
            mass += v;
        }
    }
    for (i64 i = 0; i < ker.numel(); ++i) ker[i] /= mass;
    return ker;
}

LossReport prl(const std::vector<DensityMap>& pred, const std::vector<DensityMap>& gt,
               const PrlConfig& cfg, std::vector<Tensor>* grads) {
    validate_batch(pred, gt, "prl");
    require(cfg.n_p >= 1, "prl: n_p must be >= 1");
    require(static_cast<int>(cfg.lambdas.size()) == cfg.n_p,
            "prl: one lambda per window size required");
    const double nb = static_cast<double>(pred.size());

    LossReport rep;
    rep.kind = LossKind::prl;
    if (grads) {
        grads->clear();
        for (const DensityMap& p : pred) grads->push_back(Tensor(p.values.shape()));
    }

    for (int z = 1; z <= cfg.n_p; ++z) {
        const Tensor ker = smoothing_kernel(z, cfg.sigma);
        const double lambda = cfg.lambdas[static_cast<std::size_t>(z - 1)];
        double l1 = 0.0;
        for (std::size_t i = 0; i < pred.size(); ++i) {
            const Tensor sp = correlate_same(pred[i].values, ker);
            const Tensor sg = correlate_same(gt[i].values, ker);
            Tensor sgn(sp.shape());
            for (i64 j = 0; j < sp.numel(); ++j) {
                const double d = sp[j] - sg[j];
                l1 += std::abs(d);
                sgn[j] = d > 0.0 ? 1.0 : (d < 0.0 ? -1.0 : 0.0);
            }
            if (grads) {
                // Transpose conv: the kernel equals its own 180-degree rotation.
                const Tensor back = correlate_same(sgn, ker);
                Tensor& acc = (*grads)[i];
                const double c = lambda / nb;
                for (i64 j = 0; j < acc.numel(); ++j) acc[j] += c * back[j];
            }
        }
        const double unweighted = l1 / nb;
        rep.per_patch.push_back(PatchLoss{z, lambda, unweighted});
        rep.total += lambda * unweighted;
    }
    return rep;
}

CountMetrics mae_mse(const std::vector<double>& pred_counts,
                     const std::vector<double>& gt_counts) {
    require(!pred_counts.empty(), "mae_mse: empty inputs");
    require(pred_counts.size() == gt_counts.size(), "mae_mse: length mismatch");
    double abs_acc = 0.0, sq_acc = 0.0;
    for (std::size_t i = 0; i < pred_counts.size(); ++i) {
        const double d = pred_counts[i] - gt_counts[i];
        abs_acc += std::abs(d);
        sq_acc += d * d;
    }
    const double n = static_cast<double>(pred_counts.size());
    return CountMetrics{abs_acc / n, std::sqrt(sq_acc / n)};
}

}  // namespace stdnet
