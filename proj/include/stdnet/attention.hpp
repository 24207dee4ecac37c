// Channel attention: squeeze a feature stack to one value per channel by
// global average pooling, pass it through a two-layer bottleneck gate
// (reduction rho, no biases), and rescale channels by the sigmoid output.
// The temporal variant pools over D, H, W and emits one alpha for the whole
// stack; the spatial variant pools over H, W per time slot and emits one
// alpha per slot, sharing gate weights across slots.
#pragma once

#include <vector>

#include "stdnet/rng.hpp"
#include "stdnet/tensor.hpp"

namespace stdnet {

struct AttentionParams {
    Tensor w1;  // [hidden, C]
    Tensor w2;  // [C, hidden]
};

// hidden = max(1, ceil(C / rho)).
i64 attention_hidden(i64 channels, i64 rho);

AttentionParams attention_init(i64 channels, i64 rho, Rng& rng);

// [C, H, W] -> [C], mean over H, W.
Tensor gap_spatial(const Tensor& x);
// [C, D, H, W] -> [C], mean over D, H, W.
Tensor gap_temporal(const Tensor& x);

// alpha = sigmoid(W2 relu(W1 a)), each entry strictly inside (0, 1).
Tensor attention_gate(const Tensor& a, const AttentionParams& p);

// Multiply channel c of x by alpha[c]. x rank >= 1 with leading axis C.
Tensor channel_scale(const Tensor& x, const Tensor& alpha);

struct GateCache {
    Tensor a;      // pooled input
    Tensor h;      // relu(W1 a)
    Tensor alpha;  // sigmoid(W2 h)
};

struct AttentionGrads {
    Tensor x;
    Tensor w1;
    Tensor w2;
};

// Temporal block: x [C, D, H, W] -> alpha [C] -> alpha-scaled x.
struct TemporalAttentionCache {
    Tensor x;
    GateCache gate;
};
Tensor attention_temporal_forward(const Tensor& x, const AttentionParams& p,
                                  TemporalAttentionCache* cache);
AttentionGrads attention_temporal_backward(const TemporalAttentionCache& cache,
                                           const AttentionParams& p, const Tensor& upstream);

// Spatial block: x [C, D, H, W] -> per-slot alpha [C] -> scaled x.
struct SpatialAttentionCache {
    Tensor x;
    std::vector<GateCache> slots;  // one gate evaluation per time slot
};
Tensor attention_spatial_forward(const Tensor& x, const AttentionParams& p,
                                 SpatialAttentionCache* cache);
AttentionGrads attention_spatial_backward(const SpatialAttentionCache& cache,
                                          const AttentionParams& p, const Tensor& upstream);

}  // namespace stdnet
