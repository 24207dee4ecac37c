// Release gate. Each numbered criterion prints exactly one [PASS] or [FAIL]
// line with the measured evidence; the exit status is the number of failed
// criteria. The slow criteria (convergence, stability) train real models and
// dominate the runtime; everything else finishes in seconds.
#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdarg>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <functional>
#include <sstream>
#include <string>
#include <vector>

#include "stdnet/attention.hpp"
#include "stdnet/conv.hpp"
#include "stdnet/data.hpp"
#include "stdnet/density.hpp"
#include "stdnet/experiments.hpp"
#include "stdnet/gradcases.hpp"
#include "stdnet/losses.hpp"
#include "stdnet/model.hpp"
#include "stdnet/rng.hpp"

namespace {

using namespace stdnet;
namespace fs = std::filesystem;

struct Outcome {
    bool pass = false;
    std::string detail;
};

double seconds_since(std::chrono::steady_clock::time_point t0) {
    return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

Tensor randn(const std::vector<i64>& shape, Rng& rng) {
    Tensor t = Tensor::zeros(shape);
    for (i64 i = 0; i < t.numel(); ++i) t[i] = rng.normal();
    return t;
}

std::string read_file(const fs::path& path) {
    std::ifstream in(path, std::ios::binary);
    require(in.good(), "cannot read " + path.string());
    std::ostringstream buf;
    buf << in.rdbuf();
    return buf.str();
}

std::string fmt(const char* f, ...) {
    char buf[512];
    va_list args;
    va_start(args, f);
    std::vsnprintf(buf, sizeof buf, f, args);
    va_end(args);
    return buf;
}

ModelConfig micro_config() {
    ModelConfig cfg;  // tiny preset shrunk further; forwards run in microseconds
    cfg.t = 2;
    cfg.dstb_count = 1;
    cfg.bottleneck = 2;
    cfg.growth = 2;
    cfg.fuse_to = 4;
    cfg.attention_rho = 2;
    cfg.head_channels = {2, 2};
    return cfg;
}

SynthSpec micro_synth() {
    SynthSpec s;
    s.seed = 2;
    s.height = 8;
    s.width = 8;
    s.frames_per_seq = 2;
    s.t = 2;
    s.sequences = 6;
    s.n_people_max = 2;
    return s;
}

// --- 1: every hand-written backward pass matches central differences -------

Outcome check_gradients() {
    const auto t0 = std::chrono::steady_clock::now();
    double worst = 0.0;
    std::string failed;
    int n = 0;
    for (const GradCase& c : gradcheck_cases()) {
        const GradCheckResult r = c.run();
        worst = std::max(worst, r.max_rel_err);
        if (!r.pass) failed += (failed.empty() ? "" : ", ") + c.name;
        ++n;
    }
    const double secs = seconds_since(t0);
    const bool in_budget = secs < 300.0;
    Outcome out;
    out.pass = failed.empty() && in_budget;
    out.detail = fmt("%d cases, max rel err %.3e, %.1fs (budget 300s)%s%s", n, worst, secs,
                     failed.empty() ? "" : ", failed: ", failed.c_str());
    return out;
}

// --- 2: rate-1 dilated convolutions equal a plain convolution bitwise ------

// Standard (undilated) convolution written from first principles. It shares
// only the library's documented accumulation contract: the accumulator
// starts at zero, taps add in (in_channel, kt, kh, kw) order, bias last.
Tensor plain_conv(const Tensor& x, const Tensor& w, const Tensor* bias) {
    const i64 c_in = x.dim(0), d = x.dim(1), h = x.dim(2), wd = x.dim(3);
    const i64 oc = w.dim(0), kt = w.dim(2), kh = w.dim(3), kw = w.dim(4);
    Tensor y = Tensor::zeros({oc, d, h, wd});
    for (i64 o = 0; o < oc; ++o)
        for (i64 s = 0; s < d; ++s)
            for (i64 i = 0; i < h; ++i)
                for (i64 j = 0; j < wd; ++j) {
                    double acc = 0.0;
                    for (i64 c = 0; c < c_in; ++c)
                        for (i64 l = 0; l < kt; ++l)
                            for (i64 m = 0; m < kh; ++m)
                                for (i64 n = 0; n < kw; ++n) {
                                    const i64 ss = s + l - kt / 2;
                                    const i64 ii = i + m - kh / 2;
                                    const i64 jj = j + n - kw / 2;
                                    if (ss < 0 || ss >= d || ii < 0 || ii >= h || jj < 0 ||
                                        jj >= wd)
                                        continue;
                                    acc += w.at({o, c, l, m, n}) * x.at({c, ss, ii, jj});
                                }
                    if (bias) acc += (*bias)[o];
                    y.at({o, s, i, j}) = acc;
                }
    return y;
}

bool bitwise_equal(const Tensor& a, const Tensor& b) {
    if (a.numel() != b.numel()) return false;
    for (i64 i = 0; i < a.numel(); ++i)
        if (a[i] != b[i]) return false;
    return true;
}

Outcome check_dilation_identity() {
    int mismatches = 0;
    const int cases = 50;
    for (int k = 0; k < cases; ++k) {
        Rng rng(6000 + static_cast<std::uint64_t>(k));
        const i64 ci = rng.uniform_int(1, 3), co = rng.uniform_int(1, 3);
        const i64 d = rng.uniform_int(1, 3);
        const i64 h = rng.uniform_int(3, 6), w = rng.uniform_int(3, 6);
        const int kt = rng.bernoulli(0.5) ? 3 : 1;
        const int kh = 2 * static_cast<int>(rng.uniform_int(0, 2)) + 1;
        const int kw = 2 * static_cast<int>(rng.uniform_int(0, 2)) + 1;
        const bool bias = k % 2 == 0;
        const Tensor x = randn({ci, d, h, w}, rng);

        ConvSpec s3{ci, co, kt, kh, kw, 1, bias};
        const ConvWeights w3 = conv_init(s3, rng);
        if (!bitwise_equal(conv3d(x, s3, w3), plain_conv(x, w3.w, bias ? &w3.b : nullptr)))
            ++mismatches;

        ConvSpec s2{ci, co, 1, kh, kw, 1, bias};
        const ConvWeights w2 = conv_init(s2, rng);
        if (!bitwise_equal(conv2d(x, s2, w2), plain_conv(x, w2.w, bias ? &w2.b : nullptr)))
            ++mismatches;

        ConvSpec s1{ci, co, kt, 1, 1, 1, bias};
        const ConvWeights w1 = conv_init(s1, rng);
        if (!bitwise_equal(conv1d_temporal(x, s1, w1),
                           plain_conv(x, w1.w, bias ? &w1.b : nullptr)))
            ++mismatches;
    }
    Outcome out;
    out.pass = mismatches == 0;
    out.detail = fmt("%d cases x 3 kernel families, %d bitwise mismatches", cases, mismatches);
    return out;
}

// --- 3: factored kernel parameter accounting --------------------------------

Outcome check_decomposition_arithmetic() {
    const DecompositionCount base = decomposition_param_count(3, 3, 3, 1, 1);
    bool pass = base.full3d == 27 && base.decomposed == 12;
    int swept = 0;
    for (int n : {3, 5, 7})
        for (i64 c : {1, 64, 512}) {
            const DecompositionCount d = decomposition_param_count(n, n, n, c, c);
            pass = pass && d.ratio < 1.0;
            ++swept;
        }
    Outcome out;
    out.pass = pass;
    out.detail = fmt("3x3x3 single channel: full %lld, factored %lld; ratio < 1 on %d combos",
                     static_cast<long long>(base.full3d), static_cast<long long>(base.decomposed),
                     swept);
    return out;
}

// --- 4: rendered density mass equals the head count -------------------------

Outcome check_density_mass() {
    double worst = 0.0;
    const int sets = 100;
    for (int k = 0; k < sets; ++k) {
        Rng rng(2000 + static_cast<std::uint64_t>(k));
        DotAnnotations ann;
        ann.height = rng.uniform_int(6, 24);
        ann.width = rng.uniform_int(6, 24);
        const i64 n = k == 0 ? 0 : k == 1 ? 1 : rng.uniform_int(2, 12);
        for (i64 i = 0; i < n; ++i)
            ann.points.push_back({rng.uniform(0.0, static_cast<double>(ann.width) - 1e-9),
                                  rng.uniform(0.0, static_cast<double>(ann.height) - 1e-9)});
        if (n >= 2) {
            ann.points[0] = {0.0, 0.0};  // exact corner
            ann.points[1] = {static_cast<double>(ann.width) - 1e-9,
                             static_cast<double>(ann.height) - 1e-9};  // far border
        }
        if (n >= 4) ann.points[3] = ann.points[2];  // coincident pair
        for (const SigmaPolicy& policy :
             {SigmaPolicy::fixed(3.0), SigmaPolicy::adaptive(0.3, 3)}) {
            const DensityMap dm = render_density(ann, policy);
            worst = std::max(worst, std::abs(dm.count() - static_cast<double>(n)));
        }
    }
    Outcome out;
    out.pass = worst < 1e-9;
    out.detail = fmt("%d sets x {fixed, adaptive}, worst |mass - count| %.2e (tol 1e-9)", sets,
                     worst);
    return out;
}

// --- 5: patch loss algebra ---------------------------------------------------

DensityMap unit_blob(i64 h, i64 w, double x, double y) {
    DotAnnotations ann;
    ann.height = h;
    ann.width = w;
    ann.points = {{x, y}};
    return render_density(ann, {1.0});
}

Outcome check_patch_loss_algebra() {
    bool pass = true;
    std::string why;

    // Window size 1 with unit weight degenerates to the mean L1 pixel loss.
    double worst_l1 = 0.0;
    for (int k = 0; k < 20; ++k) {
        Rng rng(3000 + static_cast<std::uint64_t>(k));
        const i64 h = rng.uniform_int(3, 9), w = rng.uniform_int(3, 9);
        std::vector<DensityMap> pred = {DensityMap(randn({h, w}, rng)),
                                        DensityMap(randn({h, w}, rng))};
        std::vector<DensityMap> gt = {DensityMap(randn({h, w}, rng)),
                                      DensityMap(randn({h, w}, rng))};
        double manual = 0.0;
        for (int i = 0; i < 2; ++i)
            for (i64 j = 0; j < pred[0].values.numel(); ++j)
                manual += std::abs(pred[static_cast<std::size_t>(i)].values[j] -
                                   gt[static_cast<std::size_t>(i)].values[j]);
        manual /= 2.0;
        const LossReport rep = prl(pred, gt, PrlConfig{1, {1.0}, 1.0});
        worst_l1 = std::max(worst_l1, std::abs(rep.total - manual));
    }
    if (worst_l1 >= 1e-12) {
        pass = false;
        why += fmt(" l1 identity off by %.2e;", worst_l1);
    }

    // Smoothing never grows the L1 norm of a difference map. The window-z
    // term of a prl evaluation against zero is ||G_z * d||_1 and the z = 1
    // term is ||d||_1 itself.
    int grew = 0;
    for (int k = 0; k < 100; ++k) {
        Rng rng(4000 + static_cast<std::uint64_t>(k));
        const i64 h = rng.uniform_int(4, 10), w = rng.uniform_int(4, 10);
        const DensityMap d(randn({h, w}, rng));
        const DensityMap zero(Tensor::zeros({h, w}));
        const LossReport rep = prl({d}, {zero}, PrlConfig{3, {1.0, 1.0, 1.0}, 1.0});
        const double base = rep.per_patch[0].value;
        for (int z = 1; z < 3; ++z)
            if (rep.per_patch[static_cast<std::size_t>(z)].value > base + 1e-12) ++grew;
    }
    if (grew != 0) {
        pass = false;
        why += fmt(" contraction violated %d times;", grew);
    }

    // One-pixel blob offset, values frozen by a pre-build convolution oracle.
    const DensityMap gt = unit_blob(12, 12, 6.0, 6.0);
    const DensityMap pr = unit_blob(12, 12, 7.0, 7.0);
    const LossReport rep = prl({pr}, {gt}, PrlConfig{3, {1.0, 1.0, 1.0}, 1.0});
    const double l1 = rep.per_patch[0].value;
    const double l2 = rep.per_patch[1].value;
    const double l3 = rep.per_patch[2].value;
    const double e1 = std::abs(l1 - 1.0035997641060728);
    const double e2 = std::abs(l2 - 0.83306703301379192);
    const double e3 = std::abs(l3 - 0.76008979763243156);
    if (e1 >= 1e-12 || e2 >= 1e-12 || e3 >= 1e-12 || !(l2 < l1) || !(l3 < l1)) {
        pass = false;
        why += fmt(" blob-shift values off by %.1e/%.1e/%.1e;", e1, e2, e3);
    }

    Outcome out;
    out.pass = pass;
    out.detail =
        pass ? fmt("l1 identity %.1e, 100 contraction maps, pinned blob-shift values match",
                   worst_l1)
             : why;
    return out;
}

// --- 6: attention gate bounds ------------------------------------------------

Outcome check_attention_bounds() {
    bool open_interval = true, halves = true, contracts = true;
    const int cases = 50;
    for (int k = 0; k < cases; ++k) {
        Rng rng(5000 + static_cast<std::uint64_t>(k));
        const i64 c = rng.uniform_int(1, 8);
        const i64 rho = std::vector<i64>{1, 2, 4, 16}[static_cast<std::size_t>(
            rng.uniform_int(0, 3))];
        const i64 d = rng.uniform_int(1, 3);
        const i64 h = rng.uniform_int(2, 4), w = rng.uniform_int(2, 4);
        const Tensor x = randn({c, d, h, w}, rng);
        const AttentionParams p = attention_init(c, rho, rng);

        const Tensor alpha = attention_gate(gap_temporal(x), p);
        for (i64 i = 0; i < alpha.numel(); ++i)
            open_interval = open_interval && alpha[i] > 0.0 && alpha[i] < 1.0;

        const i64 hid = attention_hidden(c, rho);
        AttentionParams zero{Tensor::zeros({hid, c}), Tensor::zeros({c, hid})};
        const Tensor y0 = attention_temporal_forward(x, zero, nullptr);
        for (i64 i = 0; i < x.numel(); ++i) halves = halves && y0[i] == 0.5 * x[i];

        const Tensor y = attention_temporal_forward(x, p, nullptr);
        const i64 per = x.numel() / c;
        for (i64 ch = 0; ch < c; ++ch) {
            double nx = 0.0, ny = 0.0;
            for (i64 i = 0; i < per; ++i) {
                nx += x[ch * per + i] * x[ch * per + i];
                ny += y[ch * per + i] * y[ch * per + i];
            }
            contracts = contracts && std::sqrt(ny) <= std::sqrt(nx);
        }
    }
    Outcome out;
    out.pass = open_interval && halves && contracts;
    out.detail = fmt("%d cases: alpha in (0,1) %s, zero gate halves input %s, "
                     "per-channel norm contraction %s",
                     cases, open_interval ? "yes" : "NO", halves ? "yes" : "NO",
                     contracts ? "yes" : "NO");
    return out;
}

// --- 7: training on synthetic clips reaches counting accuracy ---------------

Outcome check_convergence() {
    const auto t0 = std::chrono::steady_clock::now();
    const ClipDataset ds = gen_synthetic(SynthSpec{});  // 40 clips of 10 frames
    int ok = 0;
    std::string maes;
    for (std::uint64_t seed : {1ULL, 2ULL, 3ULL}) {
        ModelConfig cfg;  // tiny preset, T = 10
        cfg.seed = seed;
        TrainOptions opt;
        opt.epochs = 200;
        opt.loss = LossKind::prl;  // lambdas {1, 15, 3}, sigma 1
        const TrainResult res = train(ds, cfg, opt);
        if (!res.diverged && res.final_val_mae < 1.0) ++ok;
        maes += fmt(" %.3f%s", res.final_val_mae, res.diverged ? "(diverged)" : "");
    }
    const double secs = seconds_since(t0);
    Outcome out;
    out.pass = ok >= 2 && secs < 900.0;
    out.detail = fmt("held-out MAE per seed:%s, %d/3 under 1.0, %.0fs (budget 900s)",
                     maes.c_str(), ok, secs);
    return out;
}

// --- 8: patch loss trains with a flatter validation tail than pixel L2 ------

Outcome check_stability_ordering(const fs::path& dir) {
    ExperimentSpec spec;
    spec.has_synth = true;  // same 40-clip synthetic suite as the convergence run
    spec.config = ModelConfig{};
    spec.epochs = 200;
    spec.seeds = {1, 2, 3};
    spec.out_dir = (dir / "stability").string();
    const StabilityReport rep = run_stability_study(spec);
    Outcome out;
    out.pass = rep.prl_wins;
    out.detail = fmt("median tail variance over 3 paired seeds: patch loss %.3e vs pixel L2 "
                     "%.3e",
                     rep.median_tail_prl, rep.median_tail_l2);
    return out;
}

// --- 9: training is byte-for-byte deterministic ------------------------------

Outcome check_determinism(const fs::path& dir) {
    const ClipDataset ds = gen_synthetic(micro_synth());
    ModelConfig cfg = micro_config();
    cfg.seed = 5;
    std::string ckpt[2], log[2];
    for (int run = 0; run < 2; ++run) {
        TrainOptions opt;
        opt.epochs = 2;
        opt.log_path = (dir / fmt("det_run%d.csv", run)).string();
        opt.checkpoint_path = (dir / fmt("det_run%d.ckpt", run)).string();
        train(ds, cfg, opt);
        ckpt[run] = read_file(opt.checkpoint_path);
        log[run] = read_file(opt.log_path);
    }
    Outcome out;
    out.pass = ckpt[0] == ckpt[1] && log[0] == log[1] && !ckpt[0].empty();
    out.detail = fmt("checkpoints %s (%zu bytes), logs %s (%zu bytes)",
                     ckpt[0] == ckpt[1] ? "identical" : "DIFFER", ckpt[0].size(),
                     log[0] == log[1] ? "identical" : "DIFFER", log[0].size());
    return out;
}

// --- 10: learning rate halves every 30 epochs --------------------------------

Outcome check_lr_schedule() {
    const bool pass = lr_at(0, 1e-4) == 1e-4 && lr_at(30, 1e-4) == 5e-5 &&
                      lr_at(65, 1e-4) == 2.5e-5;
    Outcome out;
    out.pass = pass;
    out.detail = fmt("lr(0) %.6g, lr(30) %.6g, lr(65) %.6g", lr_at(0, 1e-4), lr_at(30, 1e-4),
                     lr_at(65, 1e-4));
    return out;
}

// --- 11: file formats round-trip and validate --------------------------------

Outcome check_formats(const fs::path& dir) {
    bool dmap_ok = true;
    {
        Rng rng(7000);
        Tensor raw = randn({7, 9}, rng);
        Tensor exact = raw;
        for (i64 i = 0; i < exact.numel(); ++i)
            exact[i] = static_cast<double>(static_cast<float>(exact[i]));
        const fs::path p = dir / "roundtrip.dmap";
        export_density(DensityMap(raw), p.string(), DensityFormat::dmap);
        const DensityMap back = import_density(p.string());
        for (i64 i = 0; i < exact.numel(); ++i)
            dmap_ok = dmap_ok && back.values[i] == exact[i];
    }

    bool ckpt_ok = true;
    {
        ModelConfig cfg = micro_config();
        cfg.seed = 11;
        const ModelParams params = init_params(cfg);
        const fs::path p = dir / "roundtrip.ckpt";
        save_checkpoint(p.string(), cfg, params);
        const Checkpoint back = load_checkpoint(p.string());
        ckpt_ok = back.config.to_json() == cfg.to_json();
        std::vector<Tensor> orig, loaded;
        visit_params(params, [&](const std::string&, const Tensor& t) { orig.push_back(t); });
        visit_params(back.params,
                     [&](const std::string&, const Tensor& t) { loaded.push_back(t); });
        ckpt_ok = ckpt_ok && orig.size() == loaded.size();
        for (std::size_t i = 0; ckpt_ok && i < orig.size(); ++i)
            for (i64 j = 0; j < orig[i].numel(); ++j)
                ckpt_ok = ckpt_ok &&
                          loaded[i][j] ==
                              static_cast<double>(static_cast<float>(orig[i][j]));
    }

    bool rejects = false;
    std::string msg;
    try {
        parse_annotations(R"({"size":[8,8],"frames":[
            {"id":0,"points":[[1.0,2.0]]},
            {"id":7,"points":[[3.0,3.0],[9.5,1.0]]}]})");
    } catch (const std::invalid_argument& e) {
        msg = e.what();
        rejects = msg.find("frame 7") != std::string::npos;
    }

    Outcome out;
    out.pass = dmap_ok && ckpt_ok && rejects;
    out.detail = fmt("density raster %s, checkpoint %s, out-of-bounds point rejected %s",
                     dmap_ok ? "lossless" : "LOSSY", ckpt_ok ? "lossless" : "LOSSY",
                     rejects ? ("naming its frame (\"" + msg + "\")").c_str() : "NO");
    return out;
}

// --- 12: static parameter accounting matches the hand audit ------------------

Outcome check_param_accounting(const fs::path& dir) {
    const ModelConfig full = ModelConfig::full_preset();
    const ParamReport rep = count_params(full);
    i64 layer_sum = 0;
    for (const LayerCount& l : rep.layers) layer_sum += l.count;
    // Hand audit: backbone 7,635,264; four blocks of 2,263,936; head 663,809.
    const bool totals = rep.total == 17354817 && rep.backbone_total == 7635264 &&
                        layer_sum == rep.total;
    const DecompReport dec = run_decomposition_report(full, (dir / "decomp").string());
    const bool delta_reported = dec.model_total == rep.total &&
                                fs::exists(dir / "decomp" / "decomposition_summary.txt");
    Outcome out;
    out.pass = totals && delta_reported;
    out.detail = fmt("total %lld (audited 17354817), backbone %lld, delta vs 18.14M reference "
                     "%+.0f (informational)",
                     static_cast<long long>(rep.total),
                     static_cast<long long>(rep.backbone_total), dec.delta_vs_reference);
    return out;
}

}  // namespace

int main(int argc, char** argv) {
    std::vector<int> only;
    for (int i = 1; i < argc; ++i) only.push_back(std::atoi(argv[i]));
    const auto wanted = [&only](int id) {
        return only.empty() || std::find(only.begin(), only.end(), id) != only.end();
    };

    const fs::path dir = fs::temp_directory_path() / "stdnet_acceptance";
    fs::remove_all(dir);
    fs::create_directories(dir);

    struct Criterion {
        int id;
        const char* name;
        std::function<Outcome()> run;
    };
    const std::vector<Criterion> criteria = {
        {1, "gradient correctness", check_gradients},
        {2, "rate-1 dilation identity", check_dilation_identity},
        {3, "factored kernel accounting", check_decomposition_arithmetic},
        {4, "density mass preservation", check_density_mass},
        {5, "patch loss algebra", check_patch_loss_algebra},
        {6, "attention gate bounds", check_attention_bounds},
        {7, "synthetic convergence", check_convergence},
        {8, "loss stability ordering", [&dir] { return check_stability_ordering(dir); }},
        {9, "training determinism", [&dir] { return check_determinism(dir); }},
        {10, "learning rate schedule", check_lr_schedule},
        {11, "file format round trips", [&dir] { return check_formats(dir); }},
        {12, "parameter accounting", [&dir] { return check_param_accounting(dir); }},
    };

    int failures = 0;
    for (const Criterion& c : criteria) {
        if (!wanted(c.id)) continue;
        Outcome out;
        try {
            out = c.run();
        } catch (const std::exception& e) {
            out.pass = false;
            out.detail = std::string("threw: ") + e.what();
        }
        std::printf("[%s] %02d %-28s %s\n", out.pass ? "PASS" : "FAIL", c.id, c.name,
                    out.detail.c_str());
        std::fflush(stdout);
        if (!out.pass) ++failures;
    }
    return failures;
}
