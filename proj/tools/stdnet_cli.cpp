// Command-line front end: synthetic data generation, density-map rendering,
// training, evaluation, prediction, gradient checking, attention inspection,
// parameter accounting and the experiment drivers. Every failure prints a
// single "error: ..." line and exits nonzero.
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include "json.hpp"

#include "stdnet/data.hpp"
#include "stdnet/experiments.hpp"
#include "stdnet/gradcases.hpp"
#include "stdnet/model.hpp"

namespace {

using namespace stdnet;

ModelConfig config_from_flags(const std::string& config_path, const std::string& preset) {
    if (!config_path.empty()) return ModelConfig::from_json_file(config_path);
    if (preset == "full") return ModelConfig::full_preset();
    require(preset == "tiny", "unknown preset: " + preset);
    return ModelConfig::tiny_preset();
}

DensityFormat format_for(const std::string& path, const std::string& format_flag) {
    if (format_flag == "csv") return DensityFormat::csv;
    if (format_flag == "dmap") return DensityFormat::dmap;
    return path.size() >= 4 && path.substr(path.size() - 4) == ".csv" ? DensityFormat::csv
                                                                      : DensityFormat::dmap;
}

std::vector<double> clip_counts(const ClipDataset& ds, const ModelConfig& cfg,
                                const ModelParams& params, std::vector<double>* gt_counts) {
    std::vector<double> pred;
    for (const Clip& clip : ds.clips) {
        DensityMap dm = model_forward(clip.frames, cfg, params, nullptr);
        pred.push_back(dm.count());
        if (gt_counts) gt_counts->push_back(clip.gt.count());
    }
    return pred;
}

int cmd_gen_synth(const std::string& spec_path, std::uint64_t seed, bool seed_set,
                  const std::string& out_dir) {
    SynthSpec spec = spec_path.empty() ? SynthSpec{} : SynthSpec::from_json_file(spec_path);
    if (seed_set) spec.seed = seed;
    write_synthetic_dataset(spec, out_dir);
    const ClipDataset ds = load_dataset(out_dir);
    std::printf("wrote %zu sequences (%zu clips of %lld frames, %lldx%lld) to %s\n",
                static_cast<std::size_t>(spec.sequences), ds.clips.size(),
                static_cast<long long>(ds.t), static_cast<long long>(ds.height),
                static_cast<long long>(ds.width), out_dir.c_str());
    return 0;
}

int cmd_densitymap(const std::string& ann_path, const std::string& out_path,
                   const std::string& sigma_text, i64 frame_id, bool frame_set,
                   const std::string& format_flag) {
    const AnnotationFile ann = load_annotations(ann_path);
    const SigmaPolicy policy = SigmaPolicy::parse(sigma_text);
    const DotAnnotations* frame = nullptr;
    if (frame_set) {
        for (const DotAnnotations& f : ann.frames) {
            if (f.frame_id == frame_id) frame = &f;
        }
        require(frame != nullptr, "no frame with id " + std::to_string(frame_id));
    } else {
        require(ann.frames.size() == 1,
                "annotation file has " + std::to_string(ann.frames.size()) +
                    " frames; pick one with --frame");
        frame = &ann.frames.front();
    }
    const DensityMap dm = render_density(*frame, policy);
    export_density(dm, out_path, format_for(out_path, format_flag));
    std::printf("frame %lld: %zu points, density count %.6f -> %s\n",
                static_cast<long long>(frame->frame_id), frame->points.size(), dm.count(),
                out_path.c_str());
    return 0;
}

int cmd_train(const std::string& data_dir, const std::string& config_path,
              const std::string& preset, const std::string& loss_name, i64 epochs,
              std::uint64_t seed, bool seed_set, const std::string& log_path,
              const std::string& checkpoint_path) {
    const ClipDataset ds = load_dataset(data_dir);
    ModelConfig cfg = config_from_flags(config_path, preset);
    if (seed_set) cfg.seed = seed;
    TrainOptions opt;
    opt.epochs = epochs;
    opt.loss = loss_name == "l2" ? LossKind::pixelwise_l2 : LossKind::prl;
    opt.log_path = log_path;
    opt.checkpoint_path = checkpoint_path;
    const TrainResult res = train(ds, cfg, opt);
    std::printf("trained %lld steps over %lld epochs; val mae %.6f, val mse %.6f%s\n",
                static_cast<long long>(res.steps), static_cast<long long>(epochs),
                res.final_val_mae, res.final_val_mse, res.diverged ? " (diverged, aborted)" : "");
    return res.diverged ? 1 : 0;
}

int cmd_eval(const std::string& checkpoint_path, const std::string& data_dir) {
    const Checkpoint ckpt = load_checkpoint(checkpoint_path);
    const ClipDataset ds = load_dataset(data_dir);
    std::vector<double> gt;
    const std::vector<double> pred = clip_counts(ds, ckpt.config, ckpt.params, &gt);
    const CountMetrics m = mae_mse(pred, gt);
    std::printf("clips %zu, mae %.6f, mse %.6f\n", ds.clips.size(), m.mae, m.mse);
    return 0;
}

int cmd_predict(const std::string& checkpoint_path, const std::string& data_dir, i64 clip_idx,
                const std::string& out_path, const std::string& format_flag) {
    const Checkpoint ckpt = load_checkpoint(checkpoint_path);
    const ClipDataset ds = load_dataset(data_dir);
    require(clip_idx >= 0 && clip_idx < static_cast<i64>(ds.clips.size()),
            "clip index out of range (dataset has " + std::to_string(ds.clips.size()) +
                " clips)");
    const Clip& clip = ds.clips[static_cast<std::size_t>(clip_idx)];
    const DensityMap dm = model_forward(clip.frames, ckpt.config, ckpt.params, nullptr);
    if (!out_path.empty()) export_density(dm, out_path, format_for(out_path, format_flag));
    std::printf("clip %lld: predicted count %.6f, annotated count %.6f\n",
                static_cast<long long>(clip_idx), dm.count(), clip.gt.count());
    return 0;
}

int cmd_gradcheck(const std::vector<std::string>& ops, bool list_only) {
    if (list_only) {
        for (const GradCase& c : gradcheck_cases()) std::printf("%s\n", c.name.c_str());
        return 0;
    }
    std::vector<const GradCase*> selected;
    if (ops.empty()) {
        for (const GradCase& c : gradcheck_cases()) selected.push_back(&c);
    } else {
        for (const std::string& name : ops) {
            const GradCase* c = find_gradcheck_case(name);
            require(c != nullptr, "unknown gradcheck case: " + name);
            selected.push_back(c);
        }
    }
    bool all_pass = true;
    for (const GradCase* c : selected) {
        const GradCheckResult r = c->run();
        std::printf("%-24s max_rel_err %.3e  %s\n", c->name.c_str(), r.max_rel_err,
                    r.pass ? "ok" : "FAIL");
        if (!r.pass) {
            std::printf("  worst coord %lld: analytic %.9e vs numeric %.9e\n",
                        static_cast<long long>(r.worst_coord), r.analytic_at_worst,
                        r.numeric_at_worst);
        }
        all_pass = all_pass && r.pass;
    }
    return all_pass ? 0 : 1;
}

int cmd_attn_dump(const std::string& checkpoint_path, const std::string& data_dir, i64 clip_idx,
                  const std::string& out_path) {
    const Checkpoint ckpt = load_checkpoint(checkpoint_path);
    const ClipDataset ds = load_dataset(data_dir);
    require(clip_idx >= 0 && clip_idx < static_cast<i64>(ds.clips.size()),
            "clip index out of range (dataset has " + std::to_string(ds.clips.size()) +
                " clips)");
    ModelCache cache;
    model_forward(ds.clips[static_cast<std::size_t>(clip_idx)].frames, ckpt.config, ckpt.params,
                  &cache);
    const std::vector<AttentionDump> dumps = collect_attention(cache);
    nlohmann::json j;
    j["clip"] = clip_idx;
    j["blocks"] = nlohmann::json::array();
    for (const AttentionDump& d : dumps) {
        nlohmann::json block;
        block["id"] = d.block_id;
        std::vector<double> alpha(d.alpha.data(), d.alpha.data() + d.alpha.numel());
        block["alpha"] = alpha;
        j["blocks"].push_back(block);
    }
    const std::string text = j.dump(2) + "\n";
    if (out_path.empty()) {
        std::fputs(text.c_str(), stdout);
    } else {
        std::ofstream out(out_path, std::ios::binary);
        require(out.good(), "cannot write " + out_path);
        out << text;
        std::printf("wrote %zu attention vectors to %s\n", dumps.size(), out_path.c_str());
    }
    return 0;
}

int cmd_count_params(const std::string& config_path, const std::string& preset,
                     const std::string& out_path) {
    const ModelConfig cfg = config_from_flags(config_path, preset);
    const ParamReport report = count_params(cfg);
    for (const LayerCount& l : report.layers) {
        std::printf("%-28s %10lld\n", l.name.c_str(), static_cast<long long>(l.count));
    }
    std::printf("%-28s %10lld\n", "backbone subtotal", static_cast<long long>(report.backbone_total));
    std::printf("%-28s %10lld\n", "total", static_cast<long long>(report.total));
    for (const StageRatio& s : report.dtb_stages) {
        std::printf("%s: %lld factored vs %lld full (ratio %.4f)\n", s.stage.c_str(),
                    static_cast<long long>(s.decomposed), static_cast<long long>(s.full3d),
                    s.ratio);
    }
    if (!out_path.empty()) {
        std::ofstream out(out_path, std::ios::binary);
        require(out.good(), "cannot write " + out_path);
        out << "layer,params\n";
        for (const LayerCount& l : report.layers) out << l.name << ',' << l.count << '\n';
        out << "backbone_subtotal," << report.backbone_total << '\n';
        out << "total," << report.total << '\n';
    }
    return 0;
}

int cmd_study(const std::string& kind, const std::string& spec_path,
              const std::string& config_path, const std::string& preset,
              const std::string& out_dir) {
    if (kind == "decomp") {
        const ModelConfig cfg = config_from_flags(config_path, preset);
        const DecompReport rep = run_decomposition_report(cfg, out_dir);
        std::printf("model total %lld params, delta vs reference %.0f\n",
                    static_cast<long long>(rep.model_total), rep.delta_vs_reference);
        for (const StageRatio& s : rep.stages) {
            std::printf("%s: ratio %.4f\n", s.stage.c_str(), s.ratio);
        }
        return 0;
    }
    require(!spec_path.empty(), "study " + kind + " needs --spec");
    ExperimentSpec spec = ExperimentSpec::from_json_file(spec_path);
    if (!out_dir.empty()) spec.out_dir = out_dir;
    if (kind == "stability") {
        const StabilityReport rep = run_stability_study(spec);
        std::printf("median tail variance: prl %.6e vs l2 %.6e (%s)\n", rep.median_tail_prl,
                    rep.median_tail_l2, rep.prl_wins ? "prl flatter" : "l2 flatter");
        return 0;
    }
    if (kind == "ablation") {
        const AblationReport rep = run_ablation(spec);
        for (const AblationRow& r : rep.rows) {
            std::printf("%-22s mae %.4f  mse %.4f\n", r.label.c_str(), r.mae, r.mse);
        }
        return 0;
    }
    throw std::invalid_argument("unknown study kind: " + kind);
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"video crowd counting with dilated spatiotemporal dense blocks"};
    app.require_subcommand(1);

    // gen-synth
    std::string gs_spec, gs_out = "synth_data";
    std::uint64_t gs_seed = 0;
    auto* gen = app.add_subcommand("gen-synth", "generate a synthetic clip dataset");
    gen->add_option("--spec", gs_spec, "generator settings JSON");
    auto* gs_seed_opt = gen->add_option("--seed", gs_seed, "override the seed from the settings JSON");
    gen->add_option("--out", gs_out, "output directory")->required();

    // densitymap
    std::string dm_ann, dm_out, dm_sigma = "fixed:3", dm_format = "auto";
    i64 dm_frame = 0;
    auto* dmap = app.add_subcommand("densitymap", "render a ground-truth density map");
    dmap->add_option("--ann", dm_ann, "annotation JSON")->required();
    dmap->add_option("--out", dm_out, "output .dmap or .csv path")->required();
    dmap->add_option("--sigma", dm_sigma, "fixed:S or adaptive:BETA,K");
    auto* dm_frame_opt = dmap->add_option("--frame", dm_frame, "frame id to render");
    dmap->add_option("--format", dm_format, "dmap, csv or auto (by extension)");

    // train
    std::string tr_data, tr_config, tr_preset = "tiny", tr_loss = "prl", tr_log, tr_ckpt;
    i64 tr_epochs = 10;
    std::uint64_t tr_seed = 0;
    auto* trn = app.add_subcommand("train", "train a model on a clip dataset");
    trn->add_option("--data", tr_data, "dataset directory")->required();
    trn->add_option("--config", tr_config, "model config JSON");
    trn->add_option("--preset", tr_preset, "tiny or full (when no --config)");
    trn->add_option("--loss", tr_loss, "prl or l2")->check(CLI::IsMember({"prl", "l2"}));
    trn->add_option("--epochs", tr_epochs, "training epochs");
    auto* tr_seed_opt = trn->add_option("--seed", tr_seed, "override the config seed");
    trn->add_option("--log", tr_log, "CSV training log path");
    trn->add_option("--checkpoint", tr_ckpt, "checkpoint output path");

    // eval
    std::string ev_ckpt, ev_data;
    auto* ev = app.add_subcommand("eval", "count MAE/MSE of a checkpoint on a dataset");
    ev->add_option("--checkpoint", ev_ckpt, "checkpoint path")->required();
    ev->add_option("--data", ev_data, "dataset directory")->required();

    // predict
    std::string pr_ckpt, pr_data, pr_out, pr_format = "auto";
    i64 pr_clip = 0;
    auto* pr = app.add_subcommand("predict", "predict one clip's density map");
    pr->add_option("--checkpoint", pr_ckpt, "checkpoint path")->required();
    pr->add_option("--data", pr_data, "dataset directory")->required();
    pr->add_option("--clip", pr_clip, "clip index");
    pr->add_option("--out", pr_out, "density output path");
    pr->add_option("--format", pr_format, "dmap, csv or auto (by extension)");

    // gradcheck
    std::vector<std::string> gc_ops;
    bool gc_list = false;
    auto* gc = app.add_subcommand("gradcheck", "check analytic gradients by central differences");
    gc->add_option("--op", gc_ops, "case name (repeatable; default all)");
    gc->add_flag("--list", gc_list, "list case names");

    // attn-dump
    std::string ad_ckpt, ad_data, ad_out;
    i64 ad_clip = 0;
    auto* ad = app.add_subcommand("attn-dump", "dump per-block attention vectors for one clip");
    ad->add_option("--checkpoint", ad_ckpt, "checkpoint path")->required();
    ad->add_option("--data", ad_data, "dataset directory")->required();
    ad->add_option("--clip", ad_clip, "clip index");
    ad->add_option("--out", ad_out, "JSON output path (stdout when omitted)");

    // count-params
    std::string cp_config, cp_preset = "full", cp_out;
    auto* cp = app.add_subcommand("count-params", "static parameter accounting for a config");
    cp->add_option("--config", cp_config, "model config JSON");
    cp->add_option("--preset", cp_preset, "tiny or full (when no --config)");
    cp->add_option("--out", cp_out, "CSV output path");

    // study
    std::string st_kind, st_spec, st_config, st_preset = "tiny", st_out;
    auto* st = app.add_subcommand("study", "run an experiment driver");
    st->add_option("kind", st_kind, "stability, ablation or decomp")
        ->required()
        ->check(CLI::IsMember({"stability", "ablation", "decomp"}));
    st->add_option("--spec", st_spec, "experiment spec JSON (stability, ablation)");
    st->add_option("--config", st_config, "model config JSON (decomp)");
    st->add_option("--preset", st_preset, "tiny or full (decomp, when no --config)");
    st->add_option("--out", st_out, "output directory");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        if (e.get_exit_code() == 0) return app.exit(e);  // --help
        std::string msg = e.what();
        std::fprintf(stderr, "error: %s\n", msg.c_str());
        return 1;
    }

    try {
        if (gen->parsed())
            return cmd_gen_synth(gs_spec, gs_seed, gs_seed_opt->count() > 0, gs_out);
        if (dmap->parsed())
            return cmd_densitymap(dm_ann, dm_out, dm_sigma, dm_frame, dm_frame_opt->count() > 0,
                                  dm_format);
        if (trn->parsed())
            return cmd_train(tr_data, tr_config, tr_preset, tr_loss, tr_epochs, tr_seed,
                             tr_seed_opt->count() > 0, tr_log, tr_ckpt);
        if (ev->parsed()) return cmd_eval(ev_ckpt, ev_data);
        if (pr->parsed()) return cmd_predict(pr_ckpt, pr_data, pr_clip, pr_out, pr_format);
        if (gc->parsed()) return cmd_gradcheck(gc_ops, gc_list);
        if (ad->parsed()) return cmd_attn_dump(ad_ckpt, ad_data, ad_clip, ad_out);
        if (cp->parsed()) return cmd_count_params(cp_config, cp_preset, cp_out);
        if (st->parsed()) return cmd_study(st_kind, st_spec, st_config, st_preset, st_out);
    } catch (const std::exception& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return 1;
    }
    std::fprintf(stderr, "error: no subcommand\n");
    return 1;
}
