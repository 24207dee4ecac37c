#include "stdnet/model.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <map>
#include <numeric>
#include <sstream>
#include <stdexcept>

#include "json.hpp"
#include "stdnet/rng.hpp"

namespace stdnet {

using nlohmann::json;

std::vector<i64> ModelConfig::backbone_channels() const {
    if (backbone == BackbonePreset::full_vgg10)
        return {64, 64, 128, 128, 256, 256, 256, 512, 512, 512};
    return {8, 8, 16, 16};
}

std::vector<int> ModelConfig::pool_after() const {
    if (backbone == BackbonePreset::full_vgg10) return {1, 3, 6};
    return {1, 3};
}

int ModelConfig::downsample() const {
    return 1 << static_cast<int>(pool_after().size());
}

i64 ModelConfig::backbone_out() const { return backbone_channels().back(); }

DstbConfig ModelConfig::dstb_config(int index) const {
    require(index >= 0 && index < dstb_count, "dstb_config: index out of range");
    DstbConfig c;
    c.dsb.in_channels = index == 0 ? backbone_out() : fuse_to;
    c.dsb.bottleneck_channels = bottleneck;
    c.dsb.growth_channels = growth;
    c.dsb.dilation_rates = dsb_rates;
    c.dsb.fuse_to = fuse_to;
    c.dtb = c.dsb;
    c.dtb.in_channels = fuse_to;
    c.dtb.dilation_rates = dtb_rates;
    c.attention_rho = attention_rho;
    c.attention_bypass = attention_bypass;
    return c;
}

ModelConfig ModelConfig::tiny_preset() { return ModelConfig{}; }

ModelConfig ModelConfig::full_preset() {
    ModelConfig c;
    c.backbone = BackbonePreset::full_vgg10;
    c.in_channels = 3;
    c.t = 10;
    c.bottleneck = 256;
    c.growth = 64;
    c.fuse_to = 512;
    c.attention_rho = 16;
    c.head_channels = {128, 64};
    c.upsample_scale = 8;
    return c;
}

namespace {

void validate_config(const ModelConfig& c) {
    require(c.in_channels > 0, "model config: in_channels must be positive");
    require(c.t >= 1, "model config: t must be >= 1");
    require(c.dstb_count >= 1, "model config: dstb_count must be >= 1");
    require(c.bottleneck > 0 && c.growth > 0 && c.fuse_to > 0,
            "model config: block widths must be positive");
    require(!c.dsb_rates.empty() && !c.dtb_rates.empty(),
            "model config: dilation rate lists must be non-empty");
    require(c.attention_rho > 0, "model config: attention_rho must be positive");
    require(c.head_channels.size() == 2, "model config: head_channels must list two widths");
    require(c.head_channels[0] > 0 && c.head_channels[1] > 0,
            "model config: head widths must be positive");
    require(c.upsample_scale == c.downsample(),
            "model config: upsample_scale must equal the backbone downsample factor");
    require(c.batch_size >= 1, "model config: batch_size must be >= 1");
    require(c.base_lr > 0.0, "model config: base_lr must be positive");
}

}  // namespace

ModelConfig ModelConfig::from_json_text(const std::string& text) {
    json doc;
    try {
        doc = json::parse(text);
    } catch (const json::exception& e) {
        throw std::invalid_argument(std::string("model config JSON malformed: ") + e.what());
    }
    require(doc.is_object(), "model config: top level must be a JSON object");
    // Unknown keys are rejected so a typo cannot silently fall back to a
    // default value.
    static const char* known[] = {"backbone",  "in_channels",      "t",
                                  "dstb_count", "bottleneck",      "growth",
                                  "fuse_to",    "dsb_rates",       "dtb_rates",
                                  "attention_rho", "attention_bypass", "head_channels",
                                  "upsample_scale", "seed",        "base_lr",
                                  "batch_size"};
    for (const auto& item : doc.items()) {
        require(std::find(std::begin(known), std::end(known), item.key()) != std::end(known),
                "model config: unknown key \"" + item.key() + "\"");
    }
    ModelConfig c;
    if (doc.contains("backbone")) {
        const std::string b = doc["backbone"].get<std::string>();
        if (b == "full_vgg10") {
            c = full_preset();
        } else if (b == "tiny") {
            c = tiny_preset();
        } else {
            throw std::invalid_argument("model config: unknown backbone preset " + b);
        }
    }
    if (doc.contains("in_channels")) c.in_channels = doc["in_channels"].get<i64>();
    if (doc.contains("t")) c.t = doc["t"].get<i64>();
    if (doc.contains("dstb_count")) c.dstb_count = doc["dstb_count"].get<int>();
    if (doc.contains("bottleneck")) c.bottleneck = doc["bottleneck"].get<i64>();
    if (doc.contains("growth")) c.growth = doc["growth"].get<i64>();
    if (doc.contains("fuse_to")) c.fuse_to = doc["fuse_to"].get<i64>();
    if (doc.contains("dsb_rates")) c.dsb_rates = doc["dsb_rates"].get<std::vector<int>>();
    if (doc.contains("dtb_rates")) c.dtb_rates = doc["dtb_rates"].get<std::vector<int>>();
    if (doc.contains("attention_rho")) c.attention_rho = doc["attention_rho"].get<i64>();
    if (doc.contains("attention_bypass")) c.attention_bypass = doc["attention_bypass"].get<bool>();
    if (doc.contains("head_channels"))
        c.head_channels = doc["head_channels"].get<std::vector<i64>>();
    if (doc.contains("upsample_scale")) c.upsample_scale = doc["upsample_scale"].get<int>();
    if (doc.contains("seed")) c.seed = doc["seed"].get<std::uint64_t>();
    if (doc.contains("base_lr")) c.base_lr = doc["base_lr"].get<double>();
    if (doc.contains("batch_size")) c.batch_size = doc["batch_size"].get<i64>();
    validate_config(c);
    return c;
}

ModelConfig ModelConfig::from_json_file(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    require(in.good(), "cannot open " + path);
    std::ostringstream os;
    os << in.rdbuf();
    return from_json_text(os.str());
}

std::string ModelConfig::to_json() const {
    json doc;
    doc["backbone"] = backbone == BackbonePreset::full_vgg10 ? "full_vgg10" : "tiny";
    doc["in_channels"] = in_channels;
    doc["t"] = t;
    doc["dstb_count"] = dstb_count;
    doc["bottleneck"] = bottleneck;
    doc["growth"] = growth;
    doc["fuse_to"] = fuse_to;
    doc["dsb_rates"] = dsb_rates;
    doc["dtb_rates"] = dtb_rates;
    doc["attention_rho"] = attention_rho;
    doc["attention_bypass"] = attention_bypass;
    doc["head_channels"] = head_channels;
    doc["upsample_scale"] = upsample_scale;
    doc["seed"] = seed;
    doc["base_lr"] = base_lr;
    doc["batch_size"] = batch_size;
    return doc.dump();  // nlohmann objects iterate sorted by key
}

namespace {

ConvSpec backbone_spec(const ModelConfig& cfg, std::size_t idx) {
    const std::vector<i64> ch = cfg.backbone_channels();
    ConvSpec s;
    s.in_channels = idx == 0 ? cfg.in_channels : ch[idx - 1];
    s.out_channels = ch[idx];
    s.kh = 3;
    s.kw = 3;
    return s;
}

ConvSpec head_spec(const ModelConfig& cfg, int which) {
    ConvSpec s;
    if (which == 0) {
        s.in_channels = cfg.fuse_to;
        s.out_channels = cfg.head_channels[0];
        s.kh = s.kw = 3;
    } else if (which == 1) {
        s.in_channels = cfg.head_channels[0];
        s.out_channels = cfg.head_channels[1];
        s.kh = s.kw = 3;
    } else {
        s.in_channels = cfg.head_channels[1];
        s.out_channels = 1;
    }
    return s;
}

}  // namespace

ModelParams init_params(const ModelConfig& cfg) {
    validate_config(cfg);
    Rng rng(substream(cfg.seed, 1));
    ModelParams p;
    const std::size_t n_convs = cfg.backbone_channels().size();
    for (std::size_t i = 0; i < n_convs; ++i)
        p.backbone.push_back(conv_init(backbone_spec(cfg, i), rng));
    for (int i = 0; i < cfg.dstb_count; ++i) p.dstbs.push_back(dstb_init(cfg.dstb_config(i), rng));
    p.head0 = conv_init(head_spec(cfg, 0), rng);
    p.head1 = conv_init(head_spec(cfg, 1), rng);
    p.head_out = conv_init(head_spec(cfg, 2), rng);
    return p;
}

namespace {

template <typename Params, typename Fn>
void visit_conv(Params& cw, const std::string& name, Fn&& fn) {
    fn(name + ".w", cw.w);
    if (cw.b.numel() > 0) fn(name + ".b", cw.b);
}

template <typename Params, typename Fn>
void visit_all(Params& p, Fn&& fn) {
    for (std::size_t i = 0; i < p.backbone.size(); ++i)
        visit_conv(p.backbone[i], "backbone.conv" + std::to_string(i), fn);
    for (std::size_t d = 0; d < p.dstbs.size(); ++d) {
        const std::string base = "dstb" + std::to_string(d);
        auto& blk = p.dstbs[d];
        for (std::size_t s = 0; s < blk.dsb.reduce.size(); ++s) {
            visit_conv(blk.dsb.reduce[s], base + ".dsb.reduce" + std::to_string(s), fn);
            visit_conv(blk.dsb.dilated[s], base + ".dsb.dilated" + std::to_string(s), fn);
        }
        visit_conv(blk.dsb.fuse, base + ".dsb.fuse", fn);
        for (std::size_t s = 0; s < blk.dtb.reduce.size(); ++s) {
            visit_conv(blk.dtb.reduce[s], base + ".dtb.reduce" + std::to_string(s), fn);
            visit_conv(blk.dtb.dilated[s], base + ".dtb.dilated" + std::to_string(s), fn);
        }
        visit_conv(blk.dtb.fuse, base + ".dtb.fuse", fn);
        fn(base + ".attn_s.w1", blk.attn_spatial.w1);
        fn(base + ".attn_s.w2", blk.attn_spatial.w2);
        fn(base + ".attn_t.w1", blk.attn_temporal.w1);
        fn(base + ".attn_t.w2", blk.attn_temporal.w2);
    }
    visit_conv(p.head0, "head.conv0", fn);
    visit_conv(p.head1, "head.conv1", fn);
    visit_conv(p.head_out, "head.out", fn);
}

}  // namespace

void visit_params(ModelParams& p, const std::function<void(const std::string&, Tensor&)>& fn) {
    visit_all(p, fn);
}

void visit_params(const ModelParams& p,
                  const std::function<void(const std::string&, const Tensor&)>& fn) {
    visit_all(p, fn);
}

ModelParams zeros_like(const ModelParams& params) {
    ModelParams z;
    for (const ConvWeights& cw : params.backbone) {
        ConvWeights c;
        c.w = Tensor(cw.w.shape());
        if (cw.b.numel() > 0) c.b = Tensor(cw.b.shape());
        z.backbone.push_back(std::move(c));
    }
    for (const DstbParams& d : params.dstbs) z.dstbs.push_back(dstb_grads_like(d));
    auto zc = [](const ConvWeights& cw) {
        ConvWeights c;
        c.w = Tensor(cw.w.shape());
        if (cw.b.numel() > 0) c.b = Tensor(cw.b.shape());
        return c;
    };
    z.head0 = zc(params.head0);
    z.head1 = zc(params.head1);
    z.head_out = zc(params.head_out);
    return z;
}

i64 param_count(const ModelParams& params) {
    i64 n = 0;
    visit_params(params, [&n](const std::string&, const Tensor& t) { n += t.numel(); });
    return n;
}

Tensor maxpool2(const Tensor& x, std::vector<i64>* argmax) {
    require(x.rank() == 3, "maxpool2: input must be [C, H, W]");
    const i64 c = x.dim(0), h = x.dim(1), w = x.dim(2);
    require(h % 2 == 0 && w % 2 == 0, "maxpool2: sides must be even, got " + x.shape_str());
    const i64 oh = h / 2, ow = w / 2;
    Tensor y({c, oh, ow});
    if (argmax) argmax->assign(static_cast<std::size_t>(c * oh * ow), 0);
    const double* xp = x.data();
    double* yp = y.data();
    for (i64 ch = 0; ch < c; ++ch) {
        const double* plane = xp + ch * h * w;
        for (i64 i = 0; i < oh; ++i) {
            for (i64 j = 0; j < ow; ++j) {
                // Scan the 2x2 window row-major; first max wins ties.
                i64 best_idx = (2 * i) * w + 2 * j;
                double best = plane[best_idx];
                const i64 cand[3] = {(2 * i) * w + 2 * j + 1, (2 * i + 1) * w + 2 * j,
                                     (2 * i + 1) * w + 2 * j + 1};
                for (i64 k : cand) {
                    if (plane[k] > best) {
                        best = plane[k];
                        best_idx = k;
                    }
                }
                yp[ch * oh * ow + i * ow + j] = best;
                if (argmax)
                    (*argmax)[static_cast<std::size_t>(ch * oh * ow + i * ow + j)] =
                        ch * h * w + best_idx;
            }
        }
    }
    return y;
}

Tensor maxpool2_backward(const Tensor& upstream, const std::vector<i64>& in_shape,
                         const std::vector<i64>& argmax) {
    require(in_shape.size() == 3, "maxpool2_backward: input shape must be rank 3");
    require(static_cast<i64>(argmax.size()) == upstream.numel(),
            "maxpool2_backward: argmax length mismatch");
    Tensor gx(in_shape);
    for (i64 i = 0; i < upstream.numel(); ++i)
        gx[argmax[static_cast<std::size_t>(i)]] += upstream[i];
    return gx;
}

namespace {

Tensor backbone_forward(const Tensor& frame, const ModelConfig& cfg, const ModelParams& params,
                        BackboneCache* cache) {
    const std::vector<int> pools = cfg.pool_after();
    Tensor x = frame;
    std::size_t pool_cursor = 0;
    for (std::size_t i = 0; i < params.backbone.size(); ++i) {
        if (cache) cache->conv_in.push_back(x);
        Tensor pre = conv2d(x, backbone_spec(cfg, i), params.backbone[i]);
        if (cache) cache->conv_pre.push_back(pre);
        x = relu(pre);
        if (pool_cursor < pools.size() && pools[pool_cursor] == static_cast<int>(i)) {
            std::vector<i64> amax;
            if (cache) cache->pool_in_shape.push_back(x.shape());
            x = maxpool2(x, cache ? &amax : nullptr);
            if (cache) cache->pool_argmax.push_back(std::move(amax));
            ++pool_cursor;
        }
    }
    return x;
}

// Returns grad wrt the frame; accumulates backbone weight grads.
Tensor backbone_backward(const ModelConfig& cfg, const ModelParams& params,
                         const BackboneCache& cache, const Tensor& upstream,
                         ModelParams& grads) {
    const std::vector<int> pools = cfg.pool_after();
    Tensor d = upstream;
    std::size_t pool_cursor = pools.size();
    for (std::size_t i = params.backbone.size(); i-- > 0;) {
        if (pool_cursor > 0 && pools[pool_cursor - 1] == static_cast<int>(i)) {
            --pool_cursor;
            d = maxpool2_backward(d, cache.pool_in_shape[pool_cursor],
                                  cache.pool_argmax[pool_cursor]);
        }
        d = relu_backward(cache.conv_pre[i], d);
        ConvGrads g = conv2d_backward(cache.conv_in[i], backbone_spec(cfg, i),
                                      params.backbone[i], d);
        for (i64 k = 0; k < g.w.numel(); ++k) grads.backbone[i].w[k] += g.w[k];
        if (g.b.numel() > 0)
            for (i64 k = 0; k < g.b.numel(); ++k) grads.backbone[i].b[k] += g.b[k];
        d = std::move(g.x);
    }
    return d;
}

}  // namespace

DensityMap model_forward(const std::vector<Tensor>& clip, const ModelConfig& cfg,
                         const ModelParams& params, ModelCache* cache) {
    validate_config(cfg);
    require(static_cast<i64>(clip.size()) == cfg.t,
            "model_forward: clip must hold exactly t frames");
    const Tensor& f0 = clip[0];
    require(f0.rank() == 3 && f0.dim(0) == cfg.in_channels,
            "model_forward: frames must be [in_channels, H, W]");
    const i64 h = f0.dim(1), w = f0.dim(2);
    const int ds = cfg.downsample();
    require(h % ds == 0 && w % ds == 0,
            "model_forward: frame sides must be divisible by " + std::to_string(ds));
    for (const Tensor& f : clip)
        require(f.same_shape(f0), "model_forward: all frames must share one shape");

    if (cache) *cache = ModelCache{};

    // Shared-weight backbone per frame, stacked along the temporal axis.
    const i64 hp = h / ds, wp = w / ds;
    const i64 cb = cfg.backbone_out();
    Tensor stack({cb, cfg.t, hp, wp});
    for (i64 t = 0; t < cfg.t; ++t) {
        BackboneCache bc;
        Tensor feat = backbone_forward(clip[static_cast<std::size_t>(t)], cfg, params,
                                       cache ? &bc : nullptr);
        if (cache) cache->frames.push_back(std::move(bc));
        const double* fp = feat.data();
        double* sp = stack.data();
        for (i64 c = 0; c < cb; ++c)
            std::copy(fp + c * hp * wp, fp + (c + 1) * hp * wp,
                      sp + c * cfg.t * hp * wp + t * hp * wp);
    }
    if (cache) cache->stack = stack;

    Tensor x = stack;
    for (int i = 0; i < cfg.dstb_count; ++i) {
        DstbCache dc;
        x = dstb_forward(x, cfg.dstb_config(i), params.dstbs[static_cast<std::size_t>(i)],
                         cache ? &dc : nullptr);
        if (cache) cache->dstbs.push_back(std::move(dc));
    }

    // Unweighted temporal mean.
    Tensor collapsed({cfg.fuse_to, hp, wp});
    {
        const double inv_t = 1.0 / static_cast<double>(cfg.t);
        const double* xp = x.data();
        double* cp = collapsed.data();
        for (i64 c = 0; c < cfg.fuse_to; ++c) {
            for (i64 t = 0; t < cfg.t; ++t) {
                const double* src = xp + c * cfg.t * hp * wp + t * hp * wp;
                double* dst = cp + c * hp * wp;
                for (i64 i = 0; i < hp * wp; ++i) dst[i] += src[i];
            }
        }
        for (i64 i = 0; i < collapsed.numel(); ++i) cp[i] *= inv_t;
    }
    if (cache) cache->collapsed = collapsed;

    const Tensor h0_pre = conv2d(collapsed, head_spec(cfg, 0), params.head0);
    const Tensor h1_in = relu(h0_pre);
    const Tensor h1_pre = conv2d(h1_in, head_spec(cfg, 1), params.head1);
    const Tensor out_in = relu(h1_pre);
    const Tensor out_pre = conv2d(out_in, head_spec(cfg, 2), params.head_out);
    const Tensor up = bilinear_upsample(out_pre, cfg.upsample_scale);
    if (cache) {
        cache->h0_pre = h0_pre;
        cache->h1_in = h1_in;
        cache->h1_pre = h1_pre;
        cache->out_in = out_in;
        cache->out_pre = out_pre;
        cache->upsampled = up;
    }
    Tensor clamped = relu(up);
    return DensityMap(clamped.reshaped({h, w}));
}

ModelParams model_backward(const ModelConfig& cfg, const ModelParams& params,
                           const ModelCache& cache, const Tensor& grad_map) {
    require(grad_map.rank() == 2, "model_backward: grad map must be [H, W]");
    ModelParams grads = zeros_like(params);

    const Tensor dclamp = grad_map.reshaped({1, grad_map.dim(0), grad_map.dim(1)});
    const Tensor dup = relu_backward(cache.upsampled, dclamp);
    const i64 hp = cache.out_pre.dim(1), wp = cache.out_pre.dim(2);
    Tensor d = bilinear_upsample_backward(dup, hp, wp, cfg.upsample_scale);

    ConvGrads g_out = conv2d_backward(cache.out_in, head_spec(cfg, 2), params.head_out, d);
    grads.head_out.w = g_out.w;
    if (g_out.b.numel() > 0) grads.head_out.b = g_out.b;
    d = relu_backward(cache.h1_pre, g_out.x);
    ConvGrads g_h1 = conv2d_backward(cache.h1_in, head_spec(cfg, 1), params.head1, d);
    grads.head1.w = g_h1.w;
    if (g_h1.b.numel() > 0) grads.head1.b = g_h1.b;
    d = relu_backward(cache.h0_pre, g_h1.x);
    ConvGrads g_h0 = conv2d_backward(cache.collapsed, head_spec(cfg, 0), params.head0, d);
    grads.head0.w = g_h0.w;
    if (g_h0.b.numel() > 0) grads.head0.b = g_h0.b;

    // Mean collapse spreads gradient uniformly over the temporal axis.
    const i64 cb = cfg.fuse_to;
    Tensor dstack({cb, cfg.t, hp, wp});
    {
        const double inv_t = 1.0 / static_cast<double>(cfg.t);
        const double* src = g_h0.x.data();
        double* dst = dstack.data();
        for (i64 c = 0; c < cb; ++c)
            for (i64 t = 0; t < cfg.t; ++t)
                for (i64 i = 0; i < hp * wp; ++i)
                    dst[c * cfg.t * hp * wp + t * hp * wp + i] = src[c * hp * wp + i] * inv_t;
    }

    Tensor dx = std::move(dstack);
    for (int i = cfg.dstb_count; i-- > 0;) {
        dx = dstb_backward(cfg.dstb_config(i), params.dstbs[static_cast<std::size_t>(i)],
                           cache.dstbs[static_cast<std::size_t>(i)], dx,
                           grads.dstbs[static_cast<std::size_t>(i)]);
    }

    // Unstack to per-frame gradients and run the shared backbone backward.
    const i64 cbb = cfg.backbone_out();
    for (i64 t = 0; t < cfg.t; ++t) {
        Tensor dframe({cbb, hp, wp});
        const double* sp = dx.data();
        double* fp = dframe.data();
        for (i64 c = 0; c < cbb; ++c)
            std::copy(sp + c * cfg.t * hp * wp + t * hp * wp,
                      sp + c * cfg.t * hp * wp + (t + 1) * hp * wp, fp + c * hp * wp);
        backbone_backward(cfg, params, cache.frames[static_cast<std::size_t>(t)], dframe, grads);
    }
    return grads;
}

std::vector<AttentionDump> collect_attention(const ModelCache& cache) {
    std::vector<AttentionDump> out;
    for (std::size_t i = 0; i < cache.dstbs.size(); ++i) {
        const DstbCache& dc = cache.dstbs[i];
        for (std::size_t slot = 0; slot < dc.attn_spatial.slots.size(); ++slot) {
            out.push_back({"dstb" + std::to_string(i) + ".spatial.t" + std::to_string(slot),
                           dc.attn_spatial.slots[slot].alpha});
        }
        if (dc.attn_temporal.gate.alpha.numel() > 0)
            out.push_back({"dstb" + std::to_string(i) + ".temporal", dc.attn_temporal.gate.alpha});
    }
    return out;
}

AdamState adam_init(const ModelParams& params) {
    AdamState st;
    visit_params(params, [&st](const std::string&, const Tensor& t) {
        st.m.push_back(Tensor(t.shape()));
        st.v.push_back(Tensor(t.shape()));
    });
    return st;
}

void adam_update(Tensor& p, const Tensor& g, Tensor& m, Tensor& v, i64 t, double lr,
                 const AdamConfig& cfg) {
    require(t >= 1, "adam_update: step count must be >= 1");
    const double bc1 = 1.0 - std::pow(cfg.beta1, static_cast<double>(t));
    const double bc2 = 1.0 - std::pow(cfg.beta2, static_cast<double>(t));
    for (i64 i = 0; i < p.numel(); ++i) {
        m[i] = cfg.beta1 * m[i] + (1.0 - cfg.beta1) * g[i];
        v[i] = cfg.beta2 * v[i] + (1.0 - cfg.beta2) * g[i] * g[i];
        const double mhat = m[i] / bc1;
        const double vhat = v[i] / bc2;
        p[i] -= lr * mhat / (std::sqrt(vhat) + cfg.eps);
    }
}

void adam_step(ModelParams& params, const ModelParams& grads, AdamState& state, double lr) {
    // Validate before mutating anything so a rejected step leaves the
    // parameters and moments untouched.
    visit_params(grads, [](const std::string& name, const Tensor& t) {
        require(t.all_finite(), "adam_step: non-finite gradient in " + name);
    });
    std::vector<Tensor*> ps;
    visit_params(params, [&ps](const std::string&, Tensor& t) { ps.push_back(&t); });
    std::vector<const Tensor*> gs;
    visit_params(grads, [&gs](const std::string&, const Tensor& t) { gs.push_back(&t); });
    require(ps.size() == gs.size() && ps.size() == state.m.size(),
            "adam_step: parameter/gradient/state layout mismatch");

    state.step += 1;
    for (std::size_t i = 0; i < ps.size(); ++i)
        adam_update(*ps[i], *gs[i], state.m[i], state.v[i], state.step, lr, state.cfg);
}

double lr_at(i64 epoch, double base_lr) {
    require(epoch >= 0, "lr_at: epoch must be >= 0");
    require(base_lr > 0.0, "lr_at: base_lr must be positive");
    return std::ldexp(base_lr, -static_cast<int>(epoch / 30));
}

ParamReport count_params(const ModelConfig& cfg) {
    validate_config(cfg);
    ParamReport rep;
    auto layer = [&rep](const std::string& name, i64 n) {
        rep.layers.push_back({name, n});
        rep.total += n;
    };

    const std::size_t n_convs = cfg.backbone_channels().size();
    for (std::size_t i = 0; i < n_convs; ++i) {
        const i64 n = conv_param_count(backbone_spec(cfg, i));
        layer("backbone.conv" + std::to_string(i), n);
        rep.backbone_total += n;
    }
    for (int d = 0; d < cfg.dstb_count; ++d) {
        const DstbConfig dc = cfg.dstb_config(d);
        const std::string base = "dstb" + std::to_string(d);
        for (std::size_t s = 0; s < dc.dsb.dilation_rates.size(); ++s) {
            layer(base + ".dsb.reduce" + std::to_string(s),
                  conv_param_count(reduce_spec(dc.dsb, s)));
            layer(base + ".dsb.dilated" + std::to_string(s),
                  conv_param_count(dilated_spec(dc.dsb, s, BlockKind::spatial)));
        }
        layer(base + ".dsb.fuse", conv_param_count(fuse_spec(dc.dsb)));
        for (std::size_t s = 0; s < dc.dtb.dilation_rates.size(); ++s) {
            layer(base + ".dtb.reduce" + std::to_string(s),
                  conv_param_count(reduce_spec(dc.dtb, s)));
            layer(base + ".dtb.dilated" + std::to_string(s),
                  conv_param_count(dilated_spec(dc.dtb, s, BlockKind::temporal)));
            const DecompositionCount dec = decomposition_param_count(
                3, 3, 3, dc.dtb.bottleneck_channels, dc.dtb.growth_channels, false);
            rep.dtb_stages.push_back({base + ".dtb.stage" + std::to_string(s), dec.full3d,
                                      dec.decomposed, dec.ratio});
        }
        layer(base + ".dtb.fuse", conv_param_count(fuse_spec(dc.dtb)));
        const i64 hs = attention_hidden(dc.dsb.fuse_to, dc.attention_rho);
        const i64 ht = attention_hidden(dc.dtb.fuse_to, dc.attention_rho);
        layer(base + ".attn_s", hs * dc.dsb.fuse_to * 2);
        layer(base + ".attn_t", ht * dc.dtb.fuse_to * 2);
    }
    layer("head.conv0", conv_param_count(head_spec(cfg, 0)));
    layer("head.conv1", conv_param_count(head_spec(cfg, 1)));
    layer("head.out", conv_param_count(head_spec(cfg, 2)));
    return rep;
}

void save_checkpoint(const std::string& path, const ModelConfig& cfg, const ModelParams& params) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    require(out.good(), "cannot write " + path);
    out.write("STDN", 4);
    write_u32(out, 1);  // format version
    write_lp_string(out, cfg.to_json());

    i64 count = 0;
    visit_params(params, [&count](const std::string&, const Tensor&) { ++count; });
    write_u32(out, static_cast<std::uint32_t>(count));
    visit_params(params, [&out](const std::string& name, const Tensor& t) {
        write_lp_string(out, name);
        write_tensor_f32(out, t);
    });
    require(out.good(), "short write to " + path);
}

Checkpoint load_checkpoint(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    require(in.good(), "cannot open " + path);
    char magic[4];
    in.read(magic, 4);
    require(in.good() && std::string(magic, 4) == "STDN", path + " is not a checkpoint");
    const std::uint32_t version = read_u32(in);
    require(version == 1, path + ": unsupported checkpoint version");

    Checkpoint ck;
    ck.config = ModelConfig::from_json_text(read_lp_string(in));
    ck.params = init_params(ck.config);

    const std::uint32_t count = read_u32(in);
    std::map<std::string, Tensor> loaded;
    for (std::uint32_t i = 0; i < count; ++i) {
        const std::string name = read_lp_string(in);
        loaded.emplace(name, read_tensor_f32(in));
    }
    i64 expected = 0;
    visit_params(ck.params, [&](const std::string& name, Tensor& t) {
        ++expected;
        auto it = loaded.find(name);
        require(it != loaded.end(), path + ": checkpoint missing tensor " + name);
        require(it->second.same_shape(t), path + ": checkpoint tensor " + name + " has shape " +
                                              it->second.shape_str() + ", expected " +
                                              t.shape_str());
        t = it->second;
    });
    require(expected == static_cast<i64>(count), path + ": checkpoint holds unexpected tensors");
    return ck;
}

namespace {

std::uint64_t fnv1a_init() { return 14695981039346656037ULL; }

void fnv1a_mix(std::uint64_t& h, const void* data, std::size_t n) {
    const auto* p = static_cast<const unsigned char*>(data);
    for (std::size_t i = 0; i < n; ++i) {
        h ^= p[i];
        h *= 1099511628211ULL;
    }
}

std::string fmt_double(double v) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.17g", v);
    return buf;
}

}  // namespace

TrainResult train(const ClipDataset& ds, const ModelConfig& cfg, const TrainOptions& opt) {
    validate_config(cfg);
    require(opt.epochs >= 1, "train: epochs must be >= 1");
    require(static_cast<i64>(ds.clips.size()) >= 2, "train: need at least two clips");
    require(ds.t == cfg.t, "train: dataset clip depth " + std::to_string(ds.t) +
                               " does not match model t " + std::to_string(cfg.t));
    require(ds.channels == cfg.in_channels, "train: dataset channel count mismatch");
    const int dsf = cfg.downsample();
    require(ds.height % dsf == 0 && ds.width % dsf == 0,
            "train: frame sides must be divisible by " + std::to_string(dsf));

    const i64 n = static_cast<i64>(ds.clips.size());
    const i64 n_val = std::max<i64>(1, n / 5);
    const i64 n_train = n - n_val;
    require(n_train >= 1, "train: no training clips left after the validation split");

    TrainResult res;
    res.params = init_params(cfg);
    AdamState adam = adam_init(res.params);
    Rng data_rng(substream(cfg.seed, 2));
    std::uint64_t hash = fnv1a_init();

    std::ofstream log;
    if (!opt.log_path.empty()) {
        log.open(opt.log_path, std::ios::binary | std::ios::trunc);
        require(log.good(), "train: cannot write log " + opt.log_path);
        log << "epoch,step,lr,loss_total,loss_z1,loss_z2,loss_z3,val_mae,val_mse\n";
    }

    ModelParams last_good = res.params;
    std::vector<i64> order(static_cast<std::size_t>(n_train));
    std::iota(order.begin(), order.end(), 0);

    i64 global_step = 0;
    for (i64 epoch = 0; epoch < opt.epochs && !res.diverged; ++epoch) {
        const double lr = lr_at(epoch, cfg.base_lr);
        data_rng.shuffle(order);

        double epoch_loss = 0.0;
        i64 epoch_batches = 0;
        for (i64 at = 0; at < n_train && !res.diverged; at += cfg.batch_size) {
            const i64 bsz = std::min<i64>(cfg.batch_size, n_train - at);
            std::vector<DensityMap> preds, gts;
            std::vector<ModelCache> caches(static_cast<std::size_t>(bsz));
            for (i64 b = 0; b < bsz; ++b) {
                const i64 idx = order[static_cast<std::size_t>(at + b)];
                const bool flip = data_rng.bernoulli(0.5);
                fnv1a_mix(hash, &idx, sizeof idx);
                const unsigned char fb = flip ? 1 : 0;
                fnv1a_mix(hash, &fb, 1);

                const Clip& clip = ds.clips[static_cast<std::size_t>(idx)];
                std::vector<Tensor> frames;
                frames.reserve(clip.frames.size());
                Tensor gt_vals = clip.gt.values;
                if (flip) {
                    for (const Tensor& f : clip.frames) frames.push_back(hflip_raster(f));
                    gt_vals = hflip_raster(gt_vals);
                } else {
                    frames = clip.frames;
                }
                preds.push_back(model_forward(frames, cfg, res.params,
                                              &caches[static_cast<std::size_t>(b)]));
                gts.push_back(DensityMap(std::move(gt_vals)));
            }

            std::vector<Tensor> loss_grads;
            LossReport rep;
            if (opt.loss == LossKind::prl) {
                rep = prl(preds, gts, opt.prl, &loss_grads);
            } else {
                rep = pixelwise_l2(preds, gts, &loss_grads);
            }

            if (!std::isfinite(rep.total)) {
                res.diverged = true;
                break;
            }

            ModelParams grads = zeros_like(res.params);
            bool grads_ok = true;
            for (i64 b = 0; b < bsz && grads_ok; ++b) {
                ModelParams g = model_backward(cfg, res.params,
                                               caches[static_cast<std::size_t>(b)],
                                               loss_grads[static_cast<std::size_t>(b)]);
                std::vector<Tensor*> into;
                visit_params(grads, [&into](const std::string&, Tensor& t) { into.push_back(&t); });
                std::size_t slot = 0;
                visit_params(g, [&](const std::string&, const Tensor& t) {
                    Tensor& dst = *into[slot++];
                    for (i64 k = 0; k < t.numel(); ++k) dst[k] += t[k];
                });
            }
            try {
                adam_step(res.params, grads, adam, lr);
            } catch (const std::invalid_argument&) {
                grads_ok = false;
            }
            if (!grads_ok) {
                res.diverged = true;
                break;
            }

            ++global_step;
            epoch_loss += rep.total;
            ++epoch_batches;
            if (log.is_open()) {
                log << epoch << ',' << global_step << ',' << fmt_double(lr) << ','
                    << fmt_double(rep.total);
                for (int z = 0; z < 3; ++z) {
                    log << ',';
                    if (z < static_cast<int>(rep.per_patch.size()))
                        log << fmt_double(rep.per_patch[static_cast<std::size_t>(z)].value);
                }
                log << ",,\n";
            }
        }
        if (res.diverged) break;

        // Validation on the held-out tail, no augmentation.
        std::vector<double> pc, gc;
        for (i64 v = n_train; v < n; ++v) {
            const Clip& clip = ds.clips[static_cast<std::size_t>(v)];
            const DensityMap pred = model_forward(clip.frames, cfg, res.params, nullptr);
            pc.push_back(pred.count());
            gc.push_back(static_cast<double>(clip.ann.points.size()));
        }
        const CountMetrics m = mae_mse(pc, gc);
        EpochStat st;
        st.epoch = epoch;
        st.mean_loss = epoch_batches > 0 ? epoch_loss / static_cast<double>(epoch_batches) : 0.0;
        st.val_mae = m.mae;
        st.val_mse = m.mse;
        res.curve.push_back(st);
        res.final_val_mae = m.mae;
        res.final_val_mse = m.mse;
        if (log.is_open()) {
            log << epoch << ",," << fmt_double(lr) << ",,,,," << fmt_double(m.mae) << ','
                << fmt_double(m.mse) << '\n';
        }
        last_good = res.params;
    }

    res.steps = global_step;
    res.data_order_hash = hash;
    if (res.diverged) res.params = last_good;
    if (!opt.checkpoint_path.empty()) save_checkpoint(opt.checkpoint_path, cfg, res.params);
    if (log.is_open()) {
        log.flush();
        require(log.good(), "train: short write to log " + opt.log_path);
    }
    return res;
}

}  // namespace stdnet
