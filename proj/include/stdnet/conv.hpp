// Dilated convolutions over [C, D, H, W] stacks with same-size zero padding,
// plus their exact backward passes. One engine covers the three kernel
// families used by the network: spatiotemporal (kt x kh x kw), spatial
// (1 x kh x kw, shared over time slots) and temporal (kt x 1 x 1).
//
// Accumulation order is part of the contract: for each output cell the
// accumulator starts at zero, taps are added in (in_channel, kt, kh, kw)
// order, and the bias is added last. Reference tests rely on this order
// for bitwise comparisons.
#pragma once

#include <cstdint>

#include "stdnet/rng.hpp"
#include "stdnet/tensor.hpp"

namespace stdnet {

struct ConvSpec {
    i64 in_channels = 0;
    i64 out_channels = 0;
    int kt = 1;  // temporal extent, odd
    int kh = 1;  // vertical extent, odd
    int kw = 1;  // horizontal extent, odd
    int dilation = 1;
    bool bias = true;
};

struct ConvWeights {
    Tensor w;  // [out_c, in_c, kt, kh, kw]
    Tensor b;  // [out_c] when ConvSpec::bias is set, default tensor otherwise
};

// Parameter count of a spec, bias included when present.
i64 conv_param_count(const ConvSpec& spec);

// Kaiming fan-in init: w ~ N(0, sqrt(2 / (in_c * kt * kh * kw))), b = 0.
ConvWeights conv_init(const ConvSpec& spec, Rng& rng);

void validate_conv(const ConvSpec& spec, const Tensor& x, const ConvWeights& wts);

// x [C, D, H, W] -> y [out_c, D, H, W]. y(oc, s, i, j) accumulates
// w(oc, ic, l, m, n) * x(ic, s + r(l - lc), i + r(m - mc), j + r(n - nc))
// over in-range taps; out-of-range taps contribute zero.
Tensor conv3d(const Tensor& x, const ConvSpec& spec, const ConvWeights& wts);

// Spatial conv (kt == 1). Accepts [C, H, W] or [C, D, H, W]; the latter is
// convolved per time slot with shared weights.
Tensor conv2d(const Tensor& x, const ConvSpec& spec, const ConvWeights& wts);

// Temporal conv (kh == kw == 1) over [C, D, H, W].
Tensor conv1d_temporal(const Tensor& x, const ConvSpec& spec, const ConvWeights& wts);

struct ConvGrads {
    Tensor x;
    Tensor w;
    Tensor b;
};

// Exact gradients of conv3d w.r.t. input, weights and bias.
ConvGrads conv3d_backward(const Tensor& x, const ConvSpec& spec, const ConvWeights& wts,
                          const Tensor& upstream);
ConvGrads conv2d_backward(const Tensor& x, const ConvSpec& spec, const ConvWeights& wts,
                          const Tensor& upstream);

struct DecompositionCount {
    i64 full3d = 0;
    i64 decomposed = 0;
    double ratio = 0.0;  // decomposed / full3d
};

// Parameter cost of a full nt x ns1 x ns2 conv versus the factored pair
// (1 x ns1 x ns2 spatial into c_mid channels, then nt x 1 x 1 temporal),
// with c_mid = c_out. Extents must be positive odd.
DecompositionCount decomposition_param_count(int nt, int ns1, int ns2, i64 c_in, i64 c_out,
                                             bool bias = false);

}  // namespace stdnet
