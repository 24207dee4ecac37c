// Experiment drivers: the loss-stability study (paired-seed twin training
// runs), the leave-one-out component ablation, and the parameter accounting
// report for the factored spatiotemporal convolutions. Each driver writes
// CSV artifacts into the ExperimentSpec output directory and returns its
// summary.
#pragma once

#include <string>
#include <vector>

#include "stdnet/data.hpp"
#include "stdnet/model.hpp"

namespace stdnet {

struct ExperimentSpec {
    std::string name = "experiment";
    std::string dataset_dir;  // exclusive with synth
    bool has_synth = false;
    SynthSpec synth;
    ModelConfig config;
    i64 epochs = 100;
    std::vector<std::uint64_t> seeds = {1, 2, 3};
    std::string out_dir = ".";

    static ExperimentSpec from_json_text(const std::string& text);
    static ExperimentSpec from_json_file(const std::string& path);
};

ClipDataset experiment_dataset(const ExperimentSpec& spec);

// Variance of the validation MAE over the last quarter of the epochs
// (population variance, at least one epoch).
double tail_variance(const std::vector<EpochStat>& curve);

double median(std::vector<double> xs);

struct StabilityArm {
    std::string loss;  // "prl" or "l2"
    std::uint64_t seed = 0;
    bool diverged = false;
    double tail_variance = 0.0;
    std::uint64_t data_hash = 0;
    std::vector<EpochStat> curve;
};

struct StabilityReport {
    std::vector<StabilityArm> arms;
    double median_tail_prl = 0.0;
    double median_tail_l2 = 0.0;
    bool prl_wins = false;  // median tail variance strictly smaller under prl
};

// Trains a PRL arm and a pixel-L2 arm per seed with identical model seeds.
// The data-order hash must agree between the two arms of a pair; diverged
// runs are flagged and excluded from the bands. Needs >= 3 seeds.
StabilityReport run_stability_study(const ExperimentSpec& spec);

struct AblationRow {
    std::string label;
    bool ca = true, ds = true, dt = true, prl = true;
    double mae = 0.0;  // median over seeds
    double mse = 0.0;
};

struct AblationReport {
    std::vector<AblationRow> rows;
};

// Leave-one-out over {channel attention, spatial dilations, temporal
// dilations, patch loss} plus the all-on and all-off rows.
AblationReport run_ablation(const ExperimentSpec& spec);

// Names of config fields that differ between two configs (seed excluded).
std::vector<std::string> config_diff(const ModelConfig& a, const ModelConfig& b);

struct DecompReport {
    std::vector<StageRatio> stages;
    double equal_channel_ratio = 0.0;  // 12/27 for 3x3x3 kernels
    i64 model_total = 0;
    i64 backbone_total = 0;
    double reference_total = 18.14e6;  // published full-scale figure, informational
    double delta_vs_reference = 0.0;
};

DecompReport run_decomposition_report(const ModelConfig& cfg, const std::string& out_dir);

}  // namespace stdnet
