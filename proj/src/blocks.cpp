#include "stdnet/blocks.hpp"

#include <cmath>
#include <string>
#include <utility>

namespace stdnet {

namespace {

void validate_block(const BlockConfig& cfg) {
    require(cfg.in_channels > 0 && cfg.bottleneck_channels > 0 && cfg.growth_channels > 0 &&
                cfg.fuse_to > 0,
            "dense block: channel widths must be positive");
    require(!cfg.dilation_rates.empty(), "dense block: at least one dilation rate required");
    for (int r : cfg.dilation_rates) require(r >= 1, "dense block: dilation rates must be >= 1");
}

}  // namespace

ConvSpec reduce_spec(const BlockConfig& cfg, std::size_t idx) {
    ConvSpec s;
    s.in_channels = cfg.in_channels + static_cast<i64>(idx) * cfg.growth_channels;
    s.out_channels = cfg.bottleneck_channels;
    return s;  // 1x1x1, dilation 1, bias
}

ConvSpec dilated_spec(const BlockConfig& cfg, std::size_t idx, BlockKind kind) {
    require(idx < cfg.dilation_rates.size(), "dilated_spec: stage index out of range");
    ConvSpec s;
    s.in_channels = cfg.bottleneck_channels;
    s.out_channels = cfg.growth_channels;
    s.dilation = cfg.dilation_rates[idx];
    if (kind == BlockKind::spatial) {
        s.kh = 3;
        s.kw = 3;
    } else {
        s.kt = 3;
    }
    return s;
}

ConvSpec fuse_spec(const BlockConfig& cfg) {
    ConvSpec s;
    s.in_channels =
        cfg.in_channels + static_cast<i64>(cfg.dilation_rates.size()) * cfg.growth_channels;
    s.out_channels = cfg.fuse_to;
    return s;
}

DenseBlockParams dense_block_init(const BlockConfig& cfg, BlockKind kind, Rng& rng) {
    validate_block(cfg);
    DenseBlockParams p;
    for (std::size_t i = 0; i < cfg.dilation_rates.size(); ++i) {
        p.reduce.push_back(conv_init(reduce_spec(cfg, i), rng));
        p.dilated.push_back(conv_init(dilated_spec(cfg, i, kind), rng));
    }
    p.fuse = conv_init(fuse_spec(cfg), rng);
    return p;
}

i64 dense_block_param_count(const BlockConfig& cfg, BlockKind kind) {
    i64 n = 0;
    for (std::size_t i = 0; i < cfg.dilation_rates.size(); ++i) {
        n += conv_param_count(reduce_spec(cfg, i));
        n += conv_param_count(dilated_spec(cfg, i, kind));
    }
    return n + conv_param_count(fuse_spec(cfg));
}

Tensor dense_block_forward(const Tensor& x, const BlockConfig& cfg, BlockKind kind,
                           const DenseBlockParams& params, DenseBlockCache* cache) {
    validate_block(cfg);
    require(x.rank() == 4, "dense block: input must be [C, D, H, W], got " + x.shape_str());
    require(x.dim(0) == cfg.in_channels, "dense block: input channel mismatch");
    const std::size_t stages = cfg.dilation_rates.size();
    require(params.reduce.size() == stages && params.dilated.size() == stages,
            "dense block: parameter stage count mismatch");

    if (cache) {
        *cache = DenseBlockCache{};
        cache->input = x;
    }
    Tensor stack = x;
    for (std::size_t i = 0; i < stages; ++i) {
        if (cache) cache->concat.push_back(stack);
        const Tensor red_pre = conv3d(stack, reduce_spec(cfg, i), params.reduce[i]);
        const Tensor red = relu(red_pre);
        const Tensor dil_pre = conv3d(red, dilated_spec(cfg, i, kind), params.dilated[i]);
        const Tensor dil = relu(dil_pre);
        if (cache) {
            cache->reduce_pre.push_back(red_pre);
            cache->reduce_out.push_back(red);
            cache->dilated_pre.push_back(dil_pre);
        }
        stack = concat_channels(stack, dil);
    }
    if (cache) cache->concat.push_back(stack);
    const Tensor fuse_pre = conv3d(stack, fuse_spec(cfg), params.fuse);
    if (cache) cache->fuse_pre = fuse_pre;
    return relu(fuse_pre);
}

DenseBlockParams dense_block_grads_like(const DenseBlockParams& params) {
    DenseBlockParams g;
    for (const ConvWeights& cw : params.reduce) {
        ConvWeights z;
        z.w = Tensor(cw.w.shape());
        if (cw.b.numel() > 0) z.b = Tensor(cw.b.shape());
        g.reduce.push_back(std::move(z));
    }
    for (const ConvWeights& cw : params.dilated) {
        ConvWeights z;
        z.w = Tensor(cw.w.shape());
        if (cw.b.numel() > 0) z.b = Tensor(cw.b.shape());
        g.dilated.push_back(std::move(z));
    }
    g.fuse.w = Tensor(params.fuse.w.shape());
    if (params.fuse.b.numel() > 0) g.fuse.b = Tensor(params.fuse.b.shape());
    return g;
}

namespace {

void accumulate(Tensor& into, const Tensor& delta) {
    require(into.same_shape(delta), "grad accumulate shape mismatch");
    for (i64 i = 0; i < into.numel(); ++i) into[i] += delta[i];
}

void accumulate_conv(ConvWeights& into, const ConvGrads& g) {
    accumulate(into.w, g.w);
    if (into.b.numel() > 0) accumulate(into.b, g.b);
}

}  // namespace

Tensor dense_block_backward(const BlockConfig& cfg, BlockKind kind,
                            const DenseBlockParams& params, const DenseBlockCache& cache,
                            const Tensor& upstream, DenseBlockParams& grads) {
    const std::size_t stages = cfg.dilation_rates.size();
    require(cache.concat.size() == stages + 1, "dense block backward: cache incomplete");

    // Fuse conv and its ReLU.
    const Tensor dfuse_pre = relu_backward(cache.fuse_pre, upstream);
    ConvGrads gf = conv3d_backward(cache.concat[stages], fuse_spec(cfg), params.fuse, dfuse_pre);
    accumulate_conv(grads.fuse, gf);

    Tensor dstack = std::move(gf.x);
    for (std::size_t i = stages; i-- > 0;) {
        auto [dhead, dtail] = split_channels(dstack, cache.concat[i].dim(0));
        // Dilated conv stage.
        const Tensor ddil_pre = relu_backward(cache.dilated_pre[i], dtail);
        ConvGrads gd = conv3d_backward(cache.reduce_out[i], dilated_spec(cfg, i, kind),
                                       params.dilated[i], ddil_pre);
        accumulate_conv(grads.dilated[i], gd);
        // Squeeze stage.
        const Tensor dred_pre = relu_backward(cache.reduce_pre[i], gd.x);
        ConvGrads gr =
            conv3d_backward(cache.concat[i], reduce_spec(cfg, i), params.reduce[i], dred_pre);
        accumulate_conv(grads.reduce[i], gr);
        dstack = add(dhead, gr.x);
    }
    return dstack;
}

DstbParams dstb_init(const DstbConfig& cfg, Rng& rng) {
    require(cfg.dtb.in_channels == cfg.dsb.fuse_to,
            "dstb: temporal block input width must equal spatial fuse width");
    DstbParams p;
    p.dsb = dense_block_init(cfg.dsb, BlockKind::spatial, rng);
    p.dtb = dense_block_init(cfg.dtb, BlockKind::temporal, rng);
    p.attn_spatial = attention_init(cfg.dsb.fuse_to, cfg.attention_rho, rng);
    p.attn_temporal = attention_init(cfg.dtb.fuse_to, cfg.attention_rho, rng);
    return p;
}

DstbParams dstb_grads_like(const DstbParams& params) {
    DstbParams g;
    g.dsb = dense_block_grads_like(params.dsb);
    g.dtb = dense_block_grads_like(params.dtb);
    g.attn_spatial.w1 = Tensor(params.attn_spatial.w1.shape());
    g.attn_spatial.w2 = Tensor(params.attn_spatial.w2.shape());
    g.attn_temporal.w1 = Tensor(params.attn_temporal.w1.shape());
    g.attn_temporal.w2 = Tensor(params.attn_temporal.w2.shape());
    return g;
}

Tensor dstb_forward(const Tensor& x, const DstbConfig& cfg, const DstbParams& params,
                    DstbCache* cache) {
    Tensor s = dense_block_forward(x, cfg.dsb, BlockKind::spatial, params.dsb,
                                   cache ? &cache->dsb : nullptr);
    if (!cfg.attention_bypass) {
        s = attention_spatial_forward(s, params.attn_spatial,
                                      cache ? &cache->attn_spatial : nullptr);
    }
    Tensor t = dense_block_forward(s, cfg.dtb, BlockKind::temporal, params.dtb,
                                   cache ? &cache->dtb : nullptr);
    if (!cfg.attention_bypass) {
        t = attention_temporal_forward(t, params.attn_temporal,
                                       cache ? &cache->attn_temporal : nullptr);
    }
    return t;
}

Tensor dstb_backward(const DstbConfig& cfg, const DstbParams& params, const DstbCache& cache,
                     const Tensor& upstream, DstbParams& grads) {
    Tensor dt = upstream;
    if (!cfg.attention_bypass) {
        AttentionGrads ga =
            attention_temporal_backward(cache.attn_temporal, params.attn_temporal, dt);
        accumulate(grads.attn_temporal.w1, ga.w1);
        accumulate(grads.attn_temporal.w2, ga.w2);
        dt = std::move(ga.x);
    }
    Tensor ds = dense_block_backward(cfg.dtb, BlockKind::temporal, params.dtb, cache.dtb, dt,
                                     grads.dtb);
    if (!cfg.attention_bypass) {
        AttentionGrads ga =
            attention_spatial_backward(cache.attn_spatial, params.attn_spatial, ds);
        accumulate(grads.attn_spatial.w1, ga.w1);
        accumulate(grads.attn_spatial.w2, ga.w2);
        ds = std::move(ga.x);
    }
    return dense_block_backward(cfg.dsb, BlockKind::spatial, params.dsb, cache.dsb, ds,
                                grads.dsb);
}

Tensor concat_channels(const Tensor& a, const Tensor& b) {
    require(a.rank() == b.rank() && a.rank() >= 2, "concat_channels: rank mismatch");
    for (i64 ax = 1; ax < a.rank(); ++ax)
        require(a.dim(ax) == b.dim(ax), "concat_channels: trailing dims differ");
    std::vector<i64> shape = a.shape();
    shape[0] = a.dim(0) + b.dim(0);
    Tensor out(shape);
    std::copy(a.data(), a.data() + a.numel(), out.data());
    std::copy(b.data(), b.data() + b.numel(), out.data() + a.numel());
    return out;
}

std::pair<Tensor, Tensor> split_channels(const Tensor& x, i64 head_channels) {
    require(head_channels > 0 && head_channels < x.dim(0),
            "split_channels: split point out of range");
    std::vector<i64> hs = x.shape(), ts = x.shape();
    hs[0] = head_channels;
    ts[0] = x.dim(0) - head_channels;
    Tensor head(hs), tail(ts);
    std::copy(x.data(), x.data() + head.numel(), head.data());
    std::copy(x.data() + head.numel(), x.data() + x.numel(), tail.data());
    return {std::move(head), std::move(tail)};
}

namespace {

struct Lerp {
    i64 lo, hi;
    double w_hi;  // weight of the hi sample; lo gets 1 - w_hi
};

Lerp sample_coord(i64 out_idx, i64 in_n, int scale) {
    const double u =
        (static_cast<double>(out_idx) + 0.5) / static_cast<double>(scale) - 0.5;
    double fl = std::floor(u);
    double frac = u - fl;
    i64 lo = static_cast<i64>(fl);
    i64 hi = lo + 1;
    if (lo < 0) {
        lo = 0;
        hi = 0;
        frac = 0.0;
    } else if (hi > in_n - 1) {
        lo = in_n - 1;
        hi = in_n - 1;
        frac = 0.0;
    }
    return {lo, hi, frac};
}

}  // namespace

Tensor bilinear_upsample(const Tensor& x, int scale) {
    require(x.rank() == 3, "bilinear_upsample: input must be [C, H, W]");
    require(scale >= 1, "bilinear_upsample: scale must be >= 1");
    const i64 c = x.dim(0), h = x.dim(1), w = x.dim(2);
    const i64 oh = h * scale, ow = w * scale;
    Tensor out({c, oh, ow});

    std::vector<Lerp> rows(static_cast<std::size_t>(oh)), cols(static_cast<std::size_t>(ow));
    for (i64 i = 0; i < oh; ++i) rows[static_cast<std::size_t>(i)] = sample_coord(i, h, scale);
    for (i64 j = 0; j < ow; ++j) cols[static_cast<std::size_t>(j)] = sample_coord(j, w, scale);

    const double* xp = x.data();
    double* op = out.data();
    for (i64 ch = 0; ch < c; ++ch) {
        const double* plane = xp + ch * h * w;
        double* oplane = op + ch * oh * ow;
        for (i64 i = 0; i < oh; ++i) {
            const Lerp& ry = rows[static_cast<std::size_t>(i)];
            const double* r0 = plane + ry.lo * w;
            const double* r1 = plane + ry.hi * w;
            double* orow = oplane + i * ow;
            for (i64 j = 0; j < ow; ++j) {
                const Lerp& rx = cols[static_cast<std::size_t>(j)];
                const double top = (1.0 - rx.w_hi) * r0[rx.lo] + rx.w_hi * r0[rx.hi];
                const double bot = (1.0 - rx.w_hi) * r1[rx.lo] + rx.w_hi * r1[rx.hi];
                orow[j] = (1.0 - ry.w_hi) * top + ry.w_hi * bot;
            }
        }
    }
    return out;
}

Tensor bilinear_upsample_backward(const Tensor& upstream, i64 in_h, i64 in_w, int scale) {
    require(upstream.rank() == 3, "bilinear_upsample_backward: upstream must be [C, H, W]");
    const i64 c = upstream.dim(0), oh = upstream.dim(1), ow = upstream.dim(2);
    require(oh == in_h * scale && ow == in_w * scale,
            "bilinear_upsample_backward: upstream size mismatch");
    Tensor gx({c, in_h, in_w});

    std::vector<Lerp> rows(static_cast<std::size_t>(oh)), cols(static_cast<std::size_t>(ow));
    for (i64 i = 0; i < oh; ++i) rows[static_cast<std::size_t>(i)] = sample_coord(i, in_h, scale);
    for (i64 j = 0; j < ow; ++j) cols[static_cast<std::size_t>(j)] = sample_coord(j, in_w, scale);

    const double* up = upstream.data();
    double* gp = gx.data();
    for (i64 ch = 0; ch < c; ++ch) {
        const double* uplane = up + ch * oh * ow;
        double* gplane = gp + ch * in_h * in_w;
        for (i64 i = 0; i < oh; ++i) {
            const Lerp& ry = rows[static_cast<std::size_t>(i)];
            const double* urow = uplane + i * ow;
            for (i64 j = 0; j < ow; ++j) {
                const Lerp& rx = cols[static_cast<std::size_t>(j)];
                const double u = urow[j];
                gplane[ry.lo * in_w + rx.lo] += (1.0 - ry.w_hi) * (1.0 - rx.w_hi) * u;
                gplane[ry.lo * in_w + rx.hi] += (1.0 - ry.w_hi) * rx.w_hi * u;
                gplane[ry.hi * in_w + rx.lo] += ry.w_hi * (1.0 - rx.w_hi) * u;
                gplane[ry.hi * in_w + rx.hi] += ry.w_hi * rx.w_hi * u;
            }
        }
    }
    return gx;
}

}  // namespace stdnet
