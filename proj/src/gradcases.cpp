#include "stdnet/gradcases.hpp"

#include "stdnet/blocks.hpp"
#include "stdnet/losses.hpp"
#include "stdnet/model.hpp"
#include "stdnet/rng.hpp"

namespace stdnet {

namespace {

Tensor rand_tensor(std::vector<i64> shape, Rng& rng, double spread = 1.0) {
    Tensor t = Tensor::zeros(std::move(shape));
    for (i64 i = 0; i < t.numel(); ++i) t[i] = spread * rng.normal();
    return t;
}

double dot_all(const Tensor& a, const Tensor& b) {
    require(a.numel() == b.numel(), "dot_all: size mismatch");
    double s = 0.0;
    for (i64 i = 0; i < a.numel(); ++i) s += a[i] * b[i];
    return s;
}

// Every case projects the op output onto a fixed random tensor so the
// upstream gradient is non-uniform.

GradCheckResult conv3d_x() {
    Rng rng(11);
    ConvSpec spec{2, 3, 3, 3, 3, 2, true};
    const ConvWeights wts = conv_init(spec, rng);
    const Tensor x0 = rand_tensor({2, 3, 4, 5}, rng);
    const Tensor p = rand_tensor({3, 3, 4, 5}, rng);
    return gradcheck(
        [&](const Tensor& x) {
            Tensor y = conv3d(x, spec, wts);
            return std::make_pair(dot_all(y, p), conv3d_backward(x, spec, wts, p).x);
        },
        x0);
}

GradCheckResult conv3d_w() {
    Rng rng(12);
    ConvSpec spec{2, 3, 3, 3, 3, 2, true};
    const ConvWeights init = conv_init(spec, rng);
    const Tensor x0 = rand_tensor({2, 3, 4, 5}, rng);
    const Tensor p = rand_tensor({3, 3, 4, 5}, rng);
    return gradcheck(
        [&](const Tensor& w) {
            ConvWeights wts{w, init.b};
            Tensor y = conv3d(x0, spec, wts);
            return std::make_pair(dot_all(y, p), conv3d_backward(x0, spec, wts, p).w);
        },
        init.w);
}

GradCheckResult conv3d_b() {
    Rng rng(13);
    ConvSpec spec{2, 3, 3, 3, 3, 1, true};
    const ConvWeights init = conv_init(spec, rng);
    const Tensor x0 = rand_tensor({2, 3, 4, 5}, rng);
    const Tensor p = rand_tensor({3, 3, 4, 5}, rng);
    return gradcheck(
        [&](const Tensor& b) {
            ConvWeights wts{init.w, b};
            Tensor y = conv3d(x0, spec, wts);
            return std::make_pair(dot_all(y, p), conv3d_backward(x0, spec, wts, p).b);
        },
        rand_tensor({3}, rng));
}

GradCheckResult conv2d_x() {
    Rng rng(14);
    ConvSpec spec{2, 3, 1, 3, 3, 2, true};
    const ConvWeights wts = conv_init(spec, rng);
    const Tensor x0 = rand_tensor({2, 2, 5, 6}, rng);
    const Tensor p = rand_tensor({3, 2, 5, 6}, rng);
    return gradcheck(
        [&](const Tensor& x) {
            Tensor y = conv2d(x, spec, wts);
            return std::make_pair(dot_all(y, p), conv2d_backward(x, spec, wts, p).x);
        },
        x0);
}

GradCheckResult conv1d_x() {
    Rng rng(15);
    ConvSpec spec{3, 2, 3, 1, 1, 2, true};
    const ConvWeights wts = conv_init(spec, rng);
    const Tensor x0 = rand_tensor({3, 6, 2, 2}, rng);
    const Tensor p = rand_tensor({2, 6, 2, 2}, rng);
    return gradcheck(
        [&](const Tensor& x) {
            Tensor y = conv1d_temporal(x, spec, wts);
            return std::make_pair(dot_all(y, p), conv3d_backward(x, spec, wts, p).x);
        },
        x0);
}

GradCheckResult matvec_w() {
    Rng rng(16);
    const Tensor v = rand_tensor({5}, rng);
    const Tensor p = rand_tensor({4}, rng);
    return gradcheck(
        [&](const Tensor& w) {
            return std::make_pair(dot_all(matvec(w, v), p), matvec_backward_w(p, v));
        },
        rand_tensor({4, 5}, rng));
}

GradCheckResult matvec_v() {
    Rng rng(17);
    const Tensor w = rand_tensor({4, 5}, rng);
    const Tensor p = rand_tensor({4}, rng);
    return gradcheck(
        [&](const Tensor& v) {
            return std::make_pair(dot_all(matvec(w, v), p), matvec_backward_v(w, p));
        },
        rand_tensor({5}, rng));
}

GradCheckResult attention_temporal_x() {
    Rng rng(18);
    const AttentionParams ap = attention_init(4, 2, rng);
    const Tensor x0 = rand_tensor({4, 2, 3, 3}, rng);
    const Tensor p = rand_tensor({4, 2, 3, 3}, rng);
    return gradcheck(
        [&](const Tensor& x) {
            TemporalAttentionCache cache;
            Tensor y = attention_temporal_forward(x, ap, &cache);
            return std::make_pair(dot_all(y, p), attention_temporal_backward(cache, ap, p).x);
        },
        x0);
}

GradCheckResult attention_temporal_w1() {
    Rng rng(19);
    const AttentionParams init = attention_init(4, 2, rng);
    const Tensor x0 = rand_tensor({4, 2, 3, 3}, rng);
    const Tensor p = rand_tensor({4, 2, 3, 3}, rng);
    return gradcheck(
        [&](const Tensor& w1) {
            AttentionParams ap{w1, init.w2};
            TemporalAttentionCache cache;
            Tensor y = attention_temporal_forward(x0, ap, &cache);
            return std::make_pair(dot_all(y, p), attention_temporal_backward(cache, ap, p).w1);
        },
        init.w1);
}

GradCheckResult attention_temporal_w2() {
    Rng rng(42);  // seed chosen so relu(W1 a) has live units and the case is not vacuous
    const AttentionParams init = attention_init(4, 2, rng);
    const Tensor x0 = rand_tensor({4, 2, 3, 3}, rng);
    const Tensor p = rand_tensor({4, 2, 3, 3}, rng);
    return gradcheck(
        [&](const Tensor& w2) {
            AttentionParams ap{init.w1, w2};
            TemporalAttentionCache cache;
            Tensor y = attention_temporal_forward(x0, ap, &cache);
            return std::make_pair(dot_all(y, p), attention_temporal_backward(cache, ap, p).w2);
        },
        init.w2);
}

GradCheckResult attention_spatial_x() {
    Rng rng(21);
    const AttentionParams ap = attention_init(4, 2, rng);
    const Tensor x0 = rand_tensor({4, 3, 2, 2}, rng);
    const Tensor p = rand_tensor({4, 3, 2, 2}, rng);
    return gradcheck(
        [&](const Tensor& x) {
            SpatialAttentionCache cache;
            Tensor y = attention_spatial_forward(x, ap, &cache);
            return std::make_pair(dot_all(y, p), attention_spatial_backward(cache, ap, p).x);
        },
        x0);
}

GradCheckResult attention_spatial_w1() {
    Rng rng(22);
    const AttentionParams init = attention_init(4, 2, rng);
    const Tensor x0 = rand_tensor({4, 3, 2, 2}, rng);
    const Tensor p = rand_tensor({4, 3, 2, 2}, rng);
    return gradcheck(
        [&](const Tensor& w1) {
            AttentionParams ap{w1, init.w2};
            SpatialAttentionCache cache;
            Tensor y = attention_spatial_forward(x0, ap, &cache);
            return std::make_pair(dot_all(y, p), attention_spatial_backward(cache, ap, p).w1);
        },
        init.w1);
}

BlockConfig micro_block(i64 in_channels) {
    BlockConfig cfg;
    cfg.in_channels = in_channels;
    cfg.bottleneck_channels = 2;
    cfg.growth_channels = 2;
    cfg.dilation_rates = {1, 2};
    cfg.fuse_to = 4;
    return cfg;
}

GradCheckResult dense_block_x(BlockKind kind, std::uint64_t seed) {
    Rng rng(seed);
    const BlockConfig cfg = micro_block(3);
    const DenseBlockParams params = dense_block_init(cfg, kind, rng);
    const Tensor x0 = rand_tensor({3, 4, 4, 4}, rng);
    const Tensor p = rand_tensor({4, 4, 4, 4}, rng);
    return gradcheck(
        [&](const Tensor& x) {
            DenseBlockCache cache;
            Tensor y = dense_block_forward(x, cfg, kind, params, &cache);
            DenseBlockParams grads = dense_block_grads_like(params);
            return std::make_pair(dot_all(y, p),
                                  dense_block_backward(cfg, kind, params, cache, p, grads));
        },
        x0);
}

GradCheckResult dense_spatial_x() { return dense_block_x(BlockKind::spatial, 23); }
GradCheckResult dense_temporal_x() { return dense_block_x(BlockKind::temporal, 24); }

GradCheckResult dense_spatial_fuse_w() {
    Rng rng(25);
    const BlockConfig cfg = micro_block(3);
    const DenseBlockParams init = dense_block_init(cfg, BlockKind::spatial, rng);
    const Tensor x0 = rand_tensor({3, 2, 4, 4}, rng);
    const Tensor p = rand_tensor({4, 2, 4, 4}, rng);
    return gradcheck(
        [&](const Tensor& w) {
            DenseBlockParams params = init;
            params.fuse.w = w;
            DenseBlockCache cache;
            Tensor y = dense_block_forward(x0, cfg, BlockKind::spatial, params, &cache);
            DenseBlockParams grads = dense_block_grads_like(params);
            dense_block_backward(cfg, BlockKind::spatial, params, cache, p, grads);
            return std::make_pair(dot_all(y, p), grads.fuse.w);
        },
        init.fuse.w);
}

GradCheckResult dstb_x() {
    Rng rng(26);
    DstbConfig cfg;
    cfg.dsb = micro_block(3);
    cfg.dtb = micro_block(4);
    cfg.attention_rho = 2;
    const DstbParams params = dstb_init(cfg, rng);
    const Tensor x0 = rand_tensor({3, 2, 4, 4}, rng);
    const Tensor p = rand_tensor({4, 2, 4, 4}, rng);
    return gradcheck(
        [&](const Tensor& x) {
            DstbCache cache;
            Tensor y = dstb_forward(x, cfg, params, &cache);
            DstbParams grads = dstb_grads_like(params);
            return std::make_pair(dot_all(y, p), dstb_backward(cfg, params, cache, p, grads));
        },
        x0);
}

GradCheckResult upsample_x() {
    Rng rng(27);
    const Tensor x0 = rand_tensor({2, 3, 3}, rng);
    const Tensor p = rand_tensor({2, 6, 6}, rng);
    return gradcheck(
        [&](const Tensor& x) {
            Tensor y = bilinear_upsample(x, 2);
            return std::make_pair(dot_all(y, p), bilinear_upsample_backward(p, 3, 3, 2));
        },
        x0);
}

GradCheckResult maxpool_x() {
    Rng rng(28);
    const Tensor x0 = rand_tensor({2, 4, 4}, rng);
    const Tensor p = rand_tensor({2, 2, 2}, rng);
    return gradcheck(
        [&](const Tensor& x) {
            std::vector<i64> amax;
            Tensor y = maxpool2(x, &amax);
            return std::make_pair(dot_all(y, p), maxpool2_backward(p, x.shape(), amax));
        },
        x0);
}

GradCheckResult l2_pred() {
    Rng rng(29);
    const Tensor gt0 = rand_tensor({5, 5}, rng, 0.5);
    const Tensor gt1 = rand_tensor({5, 5}, rng, 0.5);
    const Tensor fixed1 = rand_tensor({5, 5}, rng);
    return gradcheck(
        [&](const Tensor& x) {
            std::vector<DensityMap> pred = {DensityMap{x}, DensityMap{fixed1}};
            std::vector<DensityMap> gt = {DensityMap{gt0}, DensityMap{gt1}};
            std::vector<Tensor> grads;
            LossReport rep = pixelwise_l2(pred, gt, &grads);
            return std::make_pair(rep.total, grads[0]);
        },
        rand_tensor({5, 5}, rng));
}

GradCheckResult prl_pred() {
    Rng rng(30);
    const Tensor gt0 = rand_tensor({6, 6}, rng, 0.5);
    const PrlConfig cfg;
    return gradcheck(
        [&](const Tensor& x) {
            std::vector<DensityMap> pred = {DensityMap{x}};
            std::vector<DensityMap> gt = {DensityMap{gt0}};
            std::vector<Tensor> grads;
            LossReport rep = prl(pred, gt, cfg, &grads);
            return std::make_pair(rep.total, grads[0]);
        },
        rand_tensor({6, 6}, rng));
}

ModelConfig probe_config() {
    ModelConfig cfg;  // tiny preset
    cfg.t = 2;
    cfg.dstb_count = 1;
    cfg.bottleneck = 2;
    cfg.growth = 2;
    cfg.fuse_to = 4;
    cfg.attention_rho = 2;
    cfg.head_channels = {2, 2};
    cfg.seed = 7;
    return cfg;
}

Tensor pack_params(const ModelParams& params) {
    i64 n = 0;
    visit_params(params, [&](const std::string&, const Tensor& t) { n += t.numel(); });
    Tensor flat = Tensor::zeros({n});
    i64 at = 0;
    visit_params(params, [&](const std::string&, const Tensor& t) {
        for (i64 i = 0; i < t.numel(); ++i) flat[at++] = t[i];
    });
    return flat;
}

void unpack_params(const Tensor& flat, ModelParams& params) {
    i64 at = 0;
    visit_params(params, [&](const std::string&, Tensor& t) {
        for (i64 i = 0; i < t.numel(); ++i) t[i] = flat[at++];
    });
    require(at == flat.numel(), "unpack_params: size mismatch");
}

// End-to-end probe: every parameter of a reduced network against central
// differences of the patch loss on one synthetic-style clip.
GradCheckResult model_params() {
    const ModelConfig cfg = probe_config();
    Rng rng(31);
    std::vector<Tensor> clip;
    for (i64 t = 0; t < cfg.t; ++t) clip.push_back(rand_tensor({cfg.in_channels, 8, 8}, rng, 0.5));
    Tensor gt = rand_tensor({8, 8}, rng, 0.25);
    for (i64 i = 0; i < gt.numel(); ++i) gt[i] = std::abs(gt[i]);
    const PrlConfig loss_cfg;
    ModelParams base = init_params(cfg);
    // Jitter every tensor (biases included) off the freshly initialized
    // point: zero biases leave whole relu chains exactly on their kinks,
    // where central differences and the analytic one-sided slope disagree.
    visit_params(base, [&rng](const std::string&, Tensor& t) {
        for (i64 i = 0; i < t.numel(); ++i) t[i] += 0.05 * rng.normal();
    });
    return gradcheck(
        [&](const Tensor& flat) {
            ModelParams params = zeros_like(base);
            unpack_params(flat, params);
            ModelCache cache;
            DensityMap predicted = model_forward(clip, cfg, params, &cache);
            std::vector<Tensor> grads;
            LossReport rep = prl({predicted}, {DensityMap{gt}}, loss_cfg, &grads);
            ModelParams pgrads = model_backward(cfg, params, cache, grads[0]);
            return std::make_pair(rep.total, pack_params(pgrads));
        },
        pack_params(base));
}

}  // namespace

const std::vector<GradCase>& gradcheck_cases() {
    static const std::vector<GradCase> cases = {
        {"conv3d.x", conv3d_x},
        {"conv3d.w", conv3d_w},
        {"conv3d.b", conv3d_b},
        {"conv2d.x", conv2d_x},
        {"conv1d.x", conv1d_x},
        {"matvec.w", matvec_w},
        {"matvec.v", matvec_v},
        {"attention_temporal.x", attention_temporal_x},
        {"attention_temporal.w1", attention_temporal_w1},
        {"attention_temporal.w2", attention_temporal_w2},
        {"attention_spatial.x", attention_spatial_x},
        {"attention_spatial.w1", attention_spatial_w1},
        {"dense_spatial.x", dense_spatial_x},
        {"dense_temporal.x", dense_temporal_x},
        {"dense_spatial.fuse_w", dense_spatial_fuse_w},
        {"dstb.x", dstb_x},
        {"upsample.x", upsample_x},
        {"maxpool.x", maxpool_x},
        {"loss_l2.pred", l2_pred},
        {"loss_prl.pred", prl_pred},
        {"model.params", model_params},
    };
    return cases;
}

const GradCase* find_gradcheck_case(const std::string& name) {
    for (const GradCase& c : gradcheck_cases()) {
        if (c.name == name) return &c;
    }
    return nullptr;
}

}  // namespace stdnet
