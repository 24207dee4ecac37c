// Training losses over predicted density maps and the counting metrics.
// The patch-wise loss compares Gaussian-smoothed maps under an L1 norm at
// several window sizes; the plain pixel loss is a scaled squared error.
#pragma once

#include <vector>

#include "stdnet/density.hpp"
#include "stdnet/tensor.hpp"

namespace stdnet {

enum class LossKind { pixelwise_l2, prl };

struct PatchLoss {
    int z = 0;
    double lambda = 0.0;
    double value = 0.0;  // unweighted L1 term for this window size
};

struct LossReport {
    LossKind kind = LossKind::pixelwise_l2;
    double total = 0.0;
    std::vector<PatchLoss> per_patch;  // empty for pixelwise_l2
};

// (1 / 2 N_b) sum_i ||pred_i - gt_i||_2^2. Gradient wrt pred_i is
// (pred_i - gt_i) / N_b, written into *grads when non-null.
LossReport pixelwise_l2(const std::vector<DensityMap>& pred, const std::vector<DensityMap>& gt,
                        std::vector<Tensor>* grads = nullptr);

// (2z-1) x (2z-1) Gaussian sampled at integer offsets, renormalized to sum 1.
// z = 1 degenerates to the identity kernel [[1]].
Tensor smoothing_kernel(int z, double sigma);

struct PrlConfig {
    int n_p = 3;
    std::vector<double> lambdas = {1.0, 15.0, 3.0};
    double sigma = 1.0;
};

// total = sum_z lambda_z * (1 / N_b) sum_i || G_z * pred_i - G_z * gt_i ||_1
// with same-size zero padding. Gradient wrt pred_i uses the transpose
// convolution of sign(G_z * diff); the kernel equals its own 180-degree
// rotation. sign(0) contributes 0.
LossReport prl(const std::vector<DensityMap>& pred, const std::vector<DensityMap>& gt,
               const PrlConfig& cfg, std::vector<Tensor>* grads = nullptr);

struct CountMetrics {
    double mae = 0.0;
    double mse = 0.0;  // root of the mean squared count error
};

CountMetrics mae_mse(const std::vector<double>& pred_counts,
                     const std::vector<double>& gt_counts);

}  // namespace stdnet
