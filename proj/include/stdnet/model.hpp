// Full counting network: a per-frame 2D backbone with shared weights, a
// chain of dense spatiotemporal blocks over the stacked features, unweighted
// temporal mean collapse, a small 2D head, bilinear upsample back to input
// resolution and a clamp at zero. A clip of T frames predicts the density
// map of its last frame.
//
// Also here: the Adam optimizer, the halving learning-rate schedule, the
// training loop with flip augmentation and validation split, parameter
// accounting and the checkpoint format
//   "STDN" u32 version, length-prefixed canonical config JSON,
//   u32 tensor count, then per tensor a length-prefixed name and
//   (u32 rank, u32 dims, little-endian float32 payload).
#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "stdnet/blocks.hpp"
#include "stdnet/data.hpp"
#include "stdnet/losses.hpp"

namespace stdnet {

enum class BackbonePreset { full_vgg10, tiny };

struct ModelConfig {
    BackbonePreset backbone = BackbonePreset::tiny;
    i64 in_channels = 1;
    i64 t = 10;
    int dstb_count = 4;
    i64 bottleneck = 8;
    i64 growth = 8;
    i64 fuse_to = 16;
    std::vector<int> dsb_rates = {1, 2, 3};
    std::vector<int> dtb_rates = {1, 2, 3};
    i64 attention_rho = 4;
    bool attention_bypass = false;
    std::vector<i64> head_channels = {8, 8};
    int upsample_scale = 4;
    std::uint64_t seed = 1;
    double base_lr = 1e-4;
    i64 batch_size = 1;

    // Backbone layout per preset.
    std::vector<i64> backbone_channels() const;
    std::vector<int> pool_after() const;  // conv indices followed by a 2x2 max pool
    int downsample() const;
    i64 backbone_out() const;

    DstbConfig dstb_config(int index) const;

    static ModelConfig tiny_preset();
    static ModelConfig full_preset();
    static ModelConfig from_json_text(const std::string& text);
    static ModelConfig from_json_file(const std::string& path);
    std::string to_json() const;  // canonical: sorted keys, fixed field set
};

struct ModelParams {
    std::vector<ConvWeights> backbone;
    std::vector<DstbParams> dstbs;
    ConvWeights head0, head1, head_out;
};

ModelParams init_params(const ModelConfig& cfg);
ModelParams zeros_like(const ModelParams& params);
i64 param_count(const ModelParams& params);

// Visits every parameter tensor in a fixed order with a stable name.
void visit_params(ModelParams& p, const std::function<void(const std::string&, Tensor&)>& fn);
void visit_params(const ModelParams& p,
                  const std::function<void(const std::string&, const Tensor&)>& fn);

// 2x2 max pool with stride 2; even input sides required. argmax records the
// flat input index chosen per output cell (first max in scan order).
Tensor maxpool2(const Tensor& x, std::vector<i64>* argmax);
Tensor maxpool2_backward(const Tensor& upstream, const std::vector<i64>& in_shape,
                         const std::vector<i64>& argmax);

struct BackboneCache {
    std::vector<Tensor> conv_in;
    std::vector<Tensor> conv_pre;
    std::vector<std::vector<i64>> pool_argmax;
    std::vector<std::vector<i64>> pool_in_shape;
};

struct ModelCache {
    std::vector<BackboneCache> frames;
    Tensor stack;  // [C, T, H', W']
    std::vector<DstbCache> dstbs;
    Tensor collapsed;  // temporal mean, [C, H', W']
    Tensor h0_pre, h1_in, h1_pre, out_in, out_pre;
    Tensor upsampled;  // pre-clamp [1, H, W]
};

// clip: T frames of [in_channels, H, W]; H and W divisible by downsample().
DensityMap model_forward(const std::vector<Tensor>& clip, const ModelConfig& cfg,
                         const ModelParams& params, ModelCache* cache);
// grad_map: dLoss/dOutput, [H, W]. Returns parameter gradients.
ModelParams model_backward(const ModelConfig& cfg, const ModelParams& params,
                           const ModelCache& cache, const Tensor& grad_map);

// Per-block attention vectors captured by a cached forward pass. Block ids
// are "dstb<i>.spatial.t<slot>" and "dstb<i>.temporal". Empty when the model
// ran with attention bypassed.
struct AttentionDump {
    std::string block_id;
    Tensor alpha;
};
std::vector<AttentionDump> collect_attention(const ModelCache& cache);

// Adam with bias correction.
struct AdamConfig {
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
};

struct AdamState {
    std::vector<Tensor> m, v;  // aligned with visit_params order
    i64 step = 0;
    AdamConfig cfg;
};

AdamState adam_init(const ModelParams& params);
// One tensor update; t is the 1-based step count. Exposed for direct tests.
void adam_update(Tensor& p, const Tensor& g, Tensor& m, Tensor& v, i64 t, double lr,
                 const AdamConfig& cfg);
// Full-model step. Throws std::invalid_argument on non-finite gradients
// without touching the parameters.
void adam_step(ModelParams& params, const ModelParams& grads, AdamState& state, double lr);

// base / 2^floor(epoch / 30)
double lr_at(i64 epoch, double base_lr);

// Static parameter accounting straight from the config.
struct LayerCount {
    std::string name;
    i64 count = 0;
};
struct StageRatio {
    std::string stage;
    i64 full3d = 0;
    i64 decomposed = 0;
    double ratio = 0.0;
};
struct ParamReport {
    std::vector<LayerCount> layers;
    i64 total = 0;
    i64 backbone_total = 0;
    std::vector<StageRatio> dtb_stages;  // vs a hypothetical full 3x3x3 conv
};
ParamReport count_params(const ModelConfig& cfg);

void save_checkpoint(const std::string& path, const ModelConfig& cfg, const ModelParams& params);
struct Checkpoint {
    ModelConfig config;
    ModelParams params;
};
Checkpoint load_checkpoint(const std::string& path);

struct TrainOptions {
    i64 epochs = 1;
    LossKind loss = LossKind::prl;
    PrlConfig prl;
    std::string log_path;         // CSV; empty disables
    std::string checkpoint_path;  // empty disables
};

struct EpochStat {
    i64 epoch = 0;
    double mean_loss = 0.0;
    double val_mae = 0.0;
    double val_mse = 0.0;
};

struct TrainResult {
    ModelParams params;
    bool diverged = false;
    i64 steps = 0;
    std::uint64_t data_order_hash = 0;  // FNV-1a over shuffled ids + flip flags
    std::vector<EpochStat> curve;
    double final_val_mae = 0.0;
    double final_val_mse = 0.0;
};

// Deterministic for a fixed seed: same params, same data order, same files.
// Validation split is the last 20% of clips (at least one). On divergence
// (non-finite loss or gradients) training aborts and the checkpoint holds
// the last epoch snapshot.
TrainResult train(const ClipDataset& ds, const ModelConfig& cfg, const TrainOptions& opt);

}  // namespace stdnet
