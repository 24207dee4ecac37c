// Dense dilated blocks. Per dilation rate: a 1x1x1 conv squeezes the running
// concatenation to the bottleneck width, a dilated conv (3x3 spatial, shared
// over time slots, or 3-tap temporal) emits growth channels, and the result
// is concatenated onto the stack. A final 1x1x1 conv fuses back to fuse_to
// channels. ReLU follows every conv. The spatiotemporal block chains
// spatial block -> per-slot channel attention -> temporal block -> stack
// channel attention.
#pragma once

#include <vector>

#include "stdnet/attention.hpp"
#include "stdnet/conv.hpp"
#include "stdnet/tensor.hpp"

namespace stdnet {

struct BlockConfig {
    i64 in_channels = 512;
    i64 bottleneck_channels = 256;
    i64 growth_channels = 64;
    std::vector<int> dilation_rates = {1, 2, 3};
    i64 fuse_to = 512;
};

enum class BlockKind { spatial, temporal };

struct DenseBlockParams {
    std::vector<ConvWeights> reduce;   // 1x1x1, one per rate
    std::vector<ConvWeights> dilated;  // 3x3 spatial or 3-tap temporal, one per rate
    ConvWeights fuse;                  // final 1x1x1
};

// Conv specs for stage `idx` of a block (the reduce input grows with idx).
ConvSpec reduce_spec(const BlockConfig& cfg, std::size_t idx);
ConvSpec dilated_spec(const BlockConfig& cfg, std::size_t idx, BlockKind kind);
ConvSpec fuse_spec(const BlockConfig& cfg);

DenseBlockParams dense_block_init(const BlockConfig& cfg, BlockKind kind, Rng& rng);
i64 dense_block_param_count(const BlockConfig& cfg, BlockKind kind);

struct DenseBlockCache {
    Tensor input;
    std::vector<Tensor> reduce_pre;  // pre-ReLU squeeze outputs
    std::vector<Tensor> reduce_out;
    std::vector<Tensor> dilated_pre;
    std::vector<Tensor> concat;      // running stack before each squeeze, last entry feeds fuse
    Tensor fuse_pre;
};

// x [C_in, D, H, W] -> [fuse_to, D, H, W].
Tensor dense_block_forward(const Tensor& x, const BlockConfig& cfg, BlockKind kind,
                           const DenseBlockParams& params, DenseBlockCache* cache);
// Returns grad wrt x; accumulates parameter grads into `grads` (same shapes
// as params, zero-initialized by the caller or dense_block_grads_like).
Tensor dense_block_backward(const BlockConfig& cfg, BlockKind kind,
                            const DenseBlockParams& params, const DenseBlockCache& cache,
                            const Tensor& upstream, DenseBlockParams& grads);
DenseBlockParams dense_block_grads_like(const DenseBlockParams& params);

struct DstbConfig {
    BlockConfig dsb;
    BlockConfig dtb;  // dtb.in_channels must equal dsb.fuse_to
    i64 attention_rho = 16;
    bool attention_bypass = false;  // pins every attention vector to 1
};

struct DstbParams {
    DenseBlockParams dsb;
    DenseBlockParams dtb;
    AttentionParams attn_spatial;   // after the spatial block
    AttentionParams attn_temporal;  // after the temporal block
};

DstbParams dstb_init(const DstbConfig& cfg, Rng& rng);

struct DstbCache {
    DenseBlockCache dsb;
    DenseBlockCache dtb;
    SpatialAttentionCache attn_spatial;
    TemporalAttentionCache attn_temporal;
};

Tensor dstb_forward(const Tensor& x, const DstbConfig& cfg, const DstbParams& params,
                    DstbCache* cache);
Tensor dstb_backward(const DstbConfig& cfg, const DstbParams& params, const DstbCache& cache,
                     const Tensor& upstream, DstbParams& grads);
DstbParams dstb_grads_like(const DstbParams& params);

// Concatenate along the channel (leading) axis; trailing axes must agree.
Tensor concat_channels(const Tensor& a, const Tensor& b);
// Split along the channel axis after `head_channels`.
std::pair<Tensor, Tensor> split_channels(const Tensor& x, i64 head_channels);

// Bilinear upsample with half-pixel alignment: output cell i samples the
// input at (i + 0.5) / scale - 0.5, clamped to the valid range. Constant
// inputs stay constant.
Tensor bilinear_upsample(const Tensor& x, int scale);  // [C, H, W] -> [C, sH, sW]
Tensor bilinear_upsample_backward(const Tensor& upstream, i64 in_h, i64 in_w, int scale);

}  // namespace stdnet
