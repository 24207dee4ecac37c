#include "stdnet/attention.hpp"

#include <cmath>

namespace stdnet {

i64 attention_hidden(i64 channels, i64 rho) {
    require(channels > 0, "attention: channel count must be positive");
    require(rho > 0, "attention: rho must be positive");
    const i64 hidden = (channels + rho - 1) / rho;
    return hidden > 0 ? hidden : 1;
}

AttentionParams attention_init(i64 channels, i64 rho, Rng& rng) {
    const i64 hidden = attention_hidden(channels, rho);
    AttentionParams p;
    p.w1 = Tensor({hidden, channels});
    p.w2 = Tensor({channels, hidden});
    const double s1 = std::sqrt(1.0 / static_cast<double>(channels));
    const double s2 = std::sqrt(1.0 / static_cast<double>(hidden));
    for (i64 i = 0; i < p.w1.numel(); ++i) p.w1[i] = rng.normal(0.0, s1);
    for (i64 i = 0; i < p.w2.numel(); ++i) p.w2[i] = rng.normal(0.0, s2);
    return p;
}

Tensor gap_spatial(const Tensor& x) {
    require(x.rank() == 3, "gap_spatial: input must be [C, H, W], got " + x.shape_str());
    const i64 c = x.dim(0), plane = x.dim(1) * x.dim(2);
    Tensor out({c});
    const double* xp = x.data();
    for (i64 ch = 0; ch < c; ++ch) {
        double acc = 0.0;
        const double* p = xp + ch * plane;
        for (i64 i = 0; i < plane; ++i) acc += p[i];
        out[ch] = acc / static_cast<double>(plane);
    }
    return out;
}

Tensor gap_temporal(const Tensor& x) {
    require(x.rank() == 4, "gap_temporal: input must be [C, D, H, W], got " + x.shape_str());
    const i64 c = x.dim(0), vol = x.dim(1) * x.dim(2) * x.dim(3);
    Tensor out({c});
    const double* xp = x.data();
    for (i64 ch = 0; ch < c; ++ch) {
        double acc = 0.0;
        const double* p = xp + ch * vol;
        for (i64 i = 0; i < vol; ++i) acc += p[i];
        out[ch] = acc / static_cast<double>(vol);
    }
    return out;
}

Tensor attention_gate(const Tensor& a, const AttentionParams& p) {
    require(a.rank() == 1, "attention_gate: pooled input must be rank 1");
    require(p.w1.rank() == 2 && p.w2.rank() == 2 && p.w1.dim(1) == a.dim(0) &&
                p.w2.dim(1) == p.w1.dim(0) && p.w2.dim(0) == a.dim(0),
            "attention_gate: weight shapes inconsistent with input");
    return sigmoid(matvec(p.w2, relu(matvec(p.w1, a))));
}

Tensor channel_scale(const Tensor& x, const Tensor& alpha) {
    require(x.rank() >= 1, "channel_scale: input must have a channel axis");
    require(alpha.rank() == 1 && alpha.dim(0) == x.dim(0),
            "channel_scale: alpha length must equal channel count");
    const i64 c = x.dim(0), per = x.numel() / c;
    Tensor out(x.shape());
    const double* xp = x.data();
    double* op = out.data();
    for (i64 ch = 0; ch < c; ++ch) {
        const double s = alpha[ch];
        const double* src = xp + ch * per;
        double* dst = op + ch * per;
        for (i64 i = 0; i < per; ++i) dst[i] = src[i] * s;
    }
    return out;
}

namespace {

GateCache gate_forward(const Tensor& a, const AttentionParams& p) {
    GateCache g;
    g.a = a;
    g.h = relu(matvec(p.w1, a));
    g.alpha = sigmoid(matvec(p.w2, g.h));
    return g;
}

// Given dL/dalpha, returns dL/da and accumulates gate weight grads.
Tensor gate_backward(const GateCache& g, const AttentionParams& p, const Tensor& dalpha,
                     Tensor& gw1, Tensor& gw2) {
    const Tensor dz2 = sigmoid_backward(g.alpha, dalpha);
    gw2 = add(gw2, matvec_backward_w(dz2, g.h));
    const Tensor dh = matvec_backward_v(p.w2, dz2);
    const Tensor dz1 = relu_backward(g.h, dh);  // h > 0 iff pre-activation > 0
    gw1 = add(gw1, matvec_backward_w(dz1, g.a));
    return matvec_backward_v(p.w1, dz1);
}

}  // namespace

Tensor attention_temporal_forward(const Tensor& x, const AttentionParams& p,
                                  TemporalAttentionCache* cache) {
    const Tensor a = gap_temporal(x);
    GateCache g = gate_forward(a, p);
    Tensor out = channel_scale(x, g.alpha);
    if (cache) {
        cache->x = x;
        cache->gate = std::move(g);
    }
    return out;
}

AttentionGrads attention_temporal_backward(const TemporalAttentionCache& cache,
                                           const AttentionParams& p, const Tensor& upstream) {
    const Tensor& x = cache.x;
    require(upstream.same_shape(x), "attention_temporal_backward: upstream shape mismatch");
    const i64 c = x.dim(0), vol = x.numel() / c;

    AttentionGrads g;
    g.w1 = Tensor(p.w1.shape());
    g.w2 = Tensor(p.w2.shape());

    // dL/dalpha[c] = sum over the channel of upstream * x.
    Tensor dalpha({c});
    const double* xp = x.data();
    const double* up = upstream.data();
    for (i64 ch = 0; ch < c; ++ch) {
        double acc = 0.0;
        const double* xs = xp + ch * vol;
        const double* us = up + ch * vol;
        for (i64 i = 0; i < vol; ++i) acc += us[i] * xs[i];
        dalpha[ch] = acc;
    }
    const Tensor da = gate_backward(cache.gate, p, dalpha, g.w1, g.w2);

    // Direct path alpha * upstream plus the pooled path spread uniformly.
    g.x = Tensor(x.shape());
    double* gx = g.x.data();
    const double inv_vol = 1.0 / static_cast<double>(vol);
    for (i64 ch = 0; ch < c; ++ch) {
        const double a_ch = cache.gate.alpha[ch];
        const double spread = da[ch] * inv_vol;
        const double* us = up + ch * vol;
        double* gs = gx + ch * vol;
        for (i64 i = 0; i < vol; ++i) gs[i] = a_ch * us[i] + spread;
    }
    return g;
}

Tensor attention_spatial_forward(const Tensor& x, const AttentionParams& p,
                                 SpatialAttentionCache* cache) {
    require(x.rank() == 4, "attention_spatial_forward: input must be [C, D, H, W]");
    const i64 c = x.dim(0), d = x.dim(1), h = x.dim(2), w = x.dim(3);
    const i64 plane = h * w, chan = d * plane;

    Tensor out(x.shape());
    if (cache) {
        cache->x = x;
        cache->slots.clear();
        cache->slots.reserve(static_cast<std::size_t>(d));
    }
    const double* xp = x.data();
    double* op = out.data();
    for (i64 slot = 0; slot < d; ++slot) {
        Tensor a({c});
        for (i64 ch = 0; ch < c; ++ch) {
            double acc = 0.0;
            const double* ps = xp + ch * chan + slot * plane;
            for (i64 i = 0; i < plane; ++i) acc += ps[i];
            a[ch] = acc / static_cast<double>(plane);
        }
        GateCache g = gate_forward(a, p);
        for (i64 ch = 0; ch < c; ++ch) {
            const double s = g.alpha[ch];
            const double* ps = xp + ch * chan + slot * plane;
            double* po = op + ch * chan + slot * plane;
            for (i64 i = 0; i < plane; ++i) po[i] = ps[i] * s;
        }
        if (cache) cache->slots.push_back(std::move(g));
    }
    return out;
}

AttentionGrads attention_spatial_backward(const SpatialAttentionCache& cache,
                                          const AttentionParams& p, const Tensor& upstream) {
    const Tensor& x = cache.x;
    require(upstream.same_shape(x), "attention_spatial_backward: upstream shape mismatch");
    const i64 c = x.dim(0), d = x.dim(1), plane = x.dim(2) * x.dim(3);
    const i64 chan = d * plane;
    require(static_cast<i64>(cache.slots.size()) == d,
            "attention_spatial_backward: cache slot count mismatch");

    AttentionGrads g;
    g.x = Tensor(x.shape());
    g.w1 = Tensor(p.w1.shape());
    g.w2 = Tensor(p.w2.shape());

    const double* xp = x.data();
    const double* up = upstream.data();
    double* gx = g.x.data();
    const double inv_plane = 1.0 / static_cast<double>(plane);

    for (i64 slot = 0; slot < d; ++slot) {
        const GateCache& gate = cache.slots[static_cast<std::size_t>(slot)];
        Tensor dalpha({c});
        for (i64 ch = 0; ch < c; ++ch) {
            double acc = 0.0;
            const double* xs = xp + ch * chan + slot * plane;
            const double* us = up + ch * chan + slot * plane;
            for (i64 i = 0; i < plane; ++i) acc += us[i] * xs[i];
            dalpha[ch] = acc;
        }
        const Tensor da = gate_backward(gate, p, dalpha, g.w1, g.w2);
        for (i64 ch = 0; ch < c; ++ch) {
            const double a_ch = gate.alpha[ch];
            const double spread = da[ch] * inv_plane;
            const double* us = up + ch * chan + slot * plane;
            double* gs = gx + ch * chan + slot * plane;
            for (i64 i = 0; i < plane; ++i) gs[i] = a_ch * us[i] + spread;
        }
    }
    return g;
}

}  // namespace stdnet
