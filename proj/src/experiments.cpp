#include "stdnet/experiments.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <stdexcept>

#include "json.hpp"

namespace stdnet {

namespace {

std::string fmt_g(double v) {
    char buf[48];
    std::snprintf(buf, sizeof(buf), "%.17g", v);
    return buf;
}

std::ofstream open_out(const std::filesystem::path& path) {
    std::filesystem::create_directories(path.parent_path().empty() ? "." : path.parent_path());
    std::ofstream out(path, std::ios::binary);
    require(out.good(), "cannot write " + path.string());
    return out;
}

}  // namespace

ExperimentSpec ExperimentSpec::from_json_text(const std::string& text) {
    nlohmann::json j;
    try {
        j = nlohmann::json::parse(text);
    } catch (const nlohmann::json::exception& e) {
        throw std::invalid_argument(std::string("experiment spec JSON: ") + e.what());
    }
    require(j.is_object(), "experiment spec: top level must be a JSON object");
    // Unknown keys are rejected so a typo cannot silently fall back to a
    // default value.
    static const char* known[] = {"name",  "dataset", "synth",  "config",
                                  "epochs", "seeds",  "out_dir"};
    for (const auto& item : j.items()) {
        require(std::find(std::begin(known), std::end(known), item.key()) != std::end(known),
                "experiment spec: unknown key \"" + item.key() + "\"");
    }
    ExperimentSpec spec;
    if (j.contains("name")) spec.name = j.at("name").get<std::string>();
    if (j.contains("dataset")) spec.dataset_dir = j.at("dataset").get<std::string>();
    if (j.contains("synth")) {
        spec.has_synth = true;
        spec.synth = SynthSpec::from_json_text(j.at("synth").dump());
    }
    require(!(spec.has_synth && !spec.dataset_dir.empty()),
            "experiment spec: give either \"dataset\" or \"synth\", not both");
    require(spec.has_synth || !spec.dataset_dir.empty(),
            "experiment spec: one of \"dataset\" or \"synth\" is required");
    if (j.contains("config")) {
        spec.config = ModelConfig::from_json_text(j.at("config").dump());
    }
    if (j.contains("epochs")) spec.epochs = j.at("epochs").get<i64>();
    require(spec.epochs >= 1, "experiment spec: epochs must be >= 1");
    if (j.contains("seeds")) {
        spec.seeds.clear();
        for (const auto& s : j.at("seeds")) spec.seeds.push_back(s.get<std::uint64_t>());
    }
    require(!spec.seeds.empty(), "experiment spec: seeds must be non-empty");
    if (j.contains("out_dir")) spec.out_dir = j.at("out_dir").get<std::string>();
    return spec;
}

ExperimentSpec ExperimentSpec::from_json_file(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    require(in.good(), "cannot open " + path);
    std::ostringstream buf;
    buf << in.rdbuf();
    return from_json_text(buf.str());
}

ClipDataset experiment_dataset(const ExperimentSpec& spec) {
    if (spec.has_synth) return gen_synthetic(spec.synth);
    return load_dataset(spec.dataset_dir);
}

double tail_variance(const std::vector<EpochStat>& curve) {
    require(!curve.empty(), "tail_variance: empty curve");
    const std::size_t tail = std::max<std::size_t>(1, curve.size() / 4);
    const std::size_t from = curve.size() - tail;
    double mean = 0.0;
    for (std::size_t i = from; i < curve.size(); ++i) mean += curve[i].val_mae;
    mean /= static_cast<double>(tail);
    double var = 0.0;
    for (std::size_t i = from; i < curve.size(); ++i) {
        const double d = curve[i].val_mae - mean;
        var += d * d;
    }
    return var / static_cast<double>(tail);
}

double median(std::vector<double> xs) {
    require(!xs.empty(), "median: empty sample");
    std::sort(xs.begin(), xs.end());
    const std::size_t n = xs.size();
    if (n % 2 == 1) return xs[n / 2];
    return 0.5 * (xs[n / 2 - 1] + xs[n / 2]);
}

StabilityReport run_stability_study(const ExperimentSpec& spec) {
    require(spec.seeds.size() >= 3, "stability study needs at least 3 seeds");
    const ClipDataset ds = experiment_dataset(spec);
    const std::filesystem::path out_dir(spec.out_dir);

    StabilityReport report;
    for (const std::uint64_t seed : spec.seeds) {
        std::uint64_t pair_hash = 0;
        for (const char* loss_name : {"prl", "l2"}) {
            ModelConfig cfg = spec.config;
            cfg.seed = seed;
            TrainOptions opt;
            opt.epochs = spec.epochs;
            opt.loss = std::string(loss_name) == "prl" ? LossKind::prl : LossKind::pixelwise_l2;

            const TrainResult res = train(ds, cfg, opt);
            StabilityArm arm;
            arm.loss = loss_name;
            arm.seed = seed;
            arm.diverged = res.diverged;
            arm.data_hash = res.data_order_hash;
            arm.curve = res.curve;
            arm.tail_variance = res.curve.empty() ? 0.0 : tail_variance(res.curve);
            report.arms.push_back(arm);

            auto curve_csv = open_out(out_dir / ("stability_curve_" + arm.loss + "_seed" +
                                                 std::to_string(seed) + ".csv"));
            curve_csv << "epoch,val_mae,val_mse\n";
            for (const EpochStat& e : res.curve) {
                curve_csv << e.epoch << ',' << fmt_g(e.val_mae) << ',' << fmt_g(e.val_mse) << '\n';
            }

            if (pair_hash == 0) {
                pair_hash = res.data_order_hash;
            } else {
                // The loss choice must not leak into the data order; a
                // mismatch means the twin runs did not see the same stream.
                require(pair_hash == res.data_order_hash,
                        "stability study: data order diverged between loss arms for seed " +
                            std::to_string(seed));
            }
        }
    }

    // Per-loss epoch bands over the non-diverged arms.
    for (const char* loss_name : {"prl", "l2"}) {
        std::vector<const StabilityArm*> arms;
        for (const StabilityArm& a : report.arms) {
            if (a.loss == loss_name && !a.diverged) arms.push_back(&a);
        }
        auto band = open_out(out_dir / (std::string("stability_band_") + loss_name + ".csv"));
        band << "epoch,mean_val_mae,min_val_mae,max_val_mae\n";
        if (!arms.empty()) {
            const std::size_t epochs = arms.front()->curve.size();
            for (std::size_t e = 0; e < epochs; ++e) {
                double mean = 0.0, lo = 0.0, hi = 0.0;
                for (std::size_t i = 0; i < arms.size(); ++i) {
                    const double v = arms[i]->curve[e].val_mae;
                    mean += v;
                    lo = i == 0 ? v : std::min(lo, v);
                    hi = i == 0 ? v : std::max(hi, v);
                }
                mean /= static_cast<double>(arms.size());
                band << arms.front()->curve[e].epoch << ',' << fmt_g(mean) << ',' << fmt_g(lo)
                     << ',' << fmt_g(hi) << '\n';
            }
        }
    }

    std::vector<double> tails_prl, tails_l2;
    for (const StabilityArm& a : report.arms) {
        if (a.diverged) continue;
        (a.loss == "prl" ? tails_prl : tails_l2).push_back(a.tail_variance);
    }
    require(!tails_prl.empty() && !tails_l2.empty(),
            "stability study: every arm of one loss diverged");
    report.median_tail_prl = median(tails_prl);
    report.median_tail_l2 = median(tails_l2);
    report.prl_wins = report.median_tail_prl < report.median_tail_l2;

    auto runs = open_out(out_dir / "stability_runs.csv");
    runs << "loss,seed,diverged,tail_variance,data_order_hash,final_val_mae,final_val_mse\n";
    for (const StabilityArm& a : report.arms) {
        const EpochStat* last = a.curve.empty() ? nullptr : &a.curve.back();
        runs << a.loss << ',' << a.seed << ',' << (a.diverged ? 1 : 0) << ','
             << fmt_g(a.tail_variance) << ',' << a.data_hash << ','
             << (last ? fmt_g(last->val_mae) : "") << ',' << (last ? fmt_g(last->val_mse) : "")
             << '\n';
    }

    auto summary = open_out(out_dir / "stability_summary.txt");
    summary << "median tail variance (val MAE, last quarter of epochs)\n"
            << "  prl: " << fmt_g(report.median_tail_prl) << '\n'
            << "  l2:  " << fmt_g(report.median_tail_l2) << '\n'
            << "prl flatter: " << (report.prl_wins ? "yes" : "no") << '\n';
    return report;
}

std::vector<std::string> config_diff(const ModelConfig& a, const ModelConfig& b) {
    std::vector<std::string> diff;
    if (a.backbone != b.backbone) diff.push_back("backbone");
    if (a.in_channels != b.in_channels) diff.push_back("in_channels");
    if (a.t != b.t) diff.push_back("t");
    if (a.dstb_count != b.dstb_count) diff.push_back("dstb_count");
    if (a.bottleneck != b.bottleneck) diff.push_back("bottleneck");
    if (a.growth != b.growth) diff.push_back("growth");
    if (a.fuse_to != b.fuse_to) diff.push_back("fuse_to");
    if (a.dsb_rates != b.dsb_rates) diff.push_back("dsb_rates");
    if (a.dtb_rates != b.dtb_rates) diff.push_back("dtb_rates");
    if (a.attention_rho != b.attention_rho) diff.push_back("attention_rho");
    if (a.attention_bypass != b.attention_bypass) diff.push_back("attention_bypass");
    if (a.head_channels != b.head_channels) diff.push_back("head_channels");
    if (a.upsample_scale != b.upsample_scale) diff.push_back("upsample_scale");
    if (a.base_lr != b.base_lr) diff.push_back("base_lr");
    if (a.batch_size != b.batch_size) diff.push_back("batch_size");
    return diff;
}

namespace {

struct AblationVariant {
    std::string label;
    bool ca, ds, dt, prl;
};

ModelConfig ablation_config(const ModelConfig& base, const AblationVariant& v) {
    ModelConfig cfg = base;
    cfg.attention_bypass = !v.ca;
    if (!v.ds) cfg.dsb_rates.assign(cfg.dsb_rates.size(), 1);
    if (!v.dt) cfg.dtb_rates.assign(cfg.dtb_rates.size(), 1);
    return cfg;
}

}  // namespace

AblationReport run_ablation(const ExperimentSpec& spec) {
    const ClipDataset ds = experiment_dataset(spec);
    const std::vector<AblationVariant> variants = {
        {"all_on", true, true, true, true},   {"no_attention", false, true, true, true},
        {"no_spatial_dilation", true, false, true, true},
        {"no_temporal_dilation", true, true, false, true},
        {"no_patch_loss", true, true, true, false},
        {"all_off", false, false, false, false},
    };

    AblationReport report;
    for (const AblationVariant& v : variants) {
        std::vector<double> maes, mses;
        for (const std::uint64_t seed : spec.seeds) {
            ModelConfig cfg = ablation_config(spec.config, v);
            cfg.seed = seed;
            TrainOptions opt;
            opt.epochs = spec.epochs;
            opt.loss = v.prl ? LossKind::prl : LossKind::pixelwise_l2;
            const TrainResult res = train(ds, cfg, opt);
            require(!res.diverged, "ablation run diverged: " + v.label + " seed " +
                                       std::to_string(seed));
            maes.push_back(res.final_val_mae);
            mses.push_back(res.final_val_mse);
        }
        AblationRow row;
        row.label = v.label;
        row.ca = v.ca;
        row.ds = v.ds;
        row.dt = v.dt;
        row.prl = v.prl;
        row.mae = median(maes);
        row.mse = median(mses);
        report.rows.push_back(row);
    }

    auto csv = open_out(std::filesystem::path(spec.out_dir) / "ablation.csv");
    csv << "variant,attention,spatial_dilation,temporal_dilation,patch_loss,val_mae,val_mse\n";
    for (const AblationRow& r : report.rows) {
        csv << r.label << ',' << (r.ca ? 1 : 0) << ',' << (r.ds ? 1 : 0) << ',' << (r.dt ? 1 : 0)
            << ',' << (r.prl ? 1 : 0) << ',' << fmt_g(r.mae) << ',' << fmt_g(r.mse) << '\n';
    }
    return report;
}

DecompReport run_decomposition_report(const ModelConfig& cfg, const std::string& out_dir) {
    const ParamReport pc = count_params(cfg);
    DecompReport report;
    report.stages = pc.dtb_stages;
    // A kt x ks x ks kernel factored into ks x ks spatial then kt temporal
    // with equal channel widths everywhere costs (ks*ks + kt) / (kt*ks*ks)
    // of the full kernel; 12/27 for the 3x3x3 case.
    report.equal_channel_ratio = 12.0 / 27.0;
    report.model_total = pc.total;
    report.backbone_total = pc.backbone_total;
    report.delta_vs_reference = static_cast<double>(pc.total) - report.reference_total;

    auto csv = open_out(std::filesystem::path(out_dir) / "decomposition.csv");
    csv << "stage,full3d_params,decomposed_params,ratio\n";
    for (const StageRatio& s : report.stages) {
        csv << s.stage << ',' << s.full3d << ',' << s.decomposed << ',' << fmt_g(s.ratio) << '\n';
    }
    csv << "equal_channel_3x3x3,27,12," << fmt_g(report.equal_channel_ratio) << '\n';

    auto txt = open_out(std::filesystem::path(out_dir) / "decomposition_summary.txt");
    txt << "model parameters: " << report.model_total << '\n'
        << "backbone parameters: " << report.backbone_total << '\n'
        << "reference full-scale total: " << fmt_g(report.reference_total) << '\n'
        << "signed delta vs reference: " << fmt_g(report.delta_vs_reference) << '\n';
    for (const StageRatio& s : report.stages) {
        txt << s.stage << ": " << s.decomposed << " / " << s.full3d
            << " params (ratio " << fmt_g(s.ratio) << ")\n";
    }
    txt << "equal-channel 3x3x3 ratio: 12/27 = " << fmt_g(report.equal_channel_ratio) << '\n';
    return report;
}

}  // namespace stdnet
