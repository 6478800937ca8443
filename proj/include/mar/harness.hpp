#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <string>
#include <vector>

#include "mar/flops.hpp"
#include "mar/maskgen.hpp"
#include "mar/model.hpp"
#include "mar/patchio.hpp"

namespace mar::harness {

struct OptimConfig {
    double lr = 7e-4;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
    double weight_decay = 0.05;  // decoupled; applied to weight matrices only
    std::size_t warmup_steps = 100;
    double min_lr_ratio = 0.0;  // cosine floor as a fraction of lr
    double clip_norm = 1.0;     // global gradient norm clip; 0 disables
};

/// Linear warmup then cosine decay; `step` counts from 0.
double learning_rate(const OptimConfig& cfg, std::size_t step, std::size_t total_steps);

struct RunConfig {
    model::ModelConfig model;
    mask::MaskSpec train_mask;  // re-seeded per clip and step
    mask::MaskSpec eval_mask;
    double lambda = loss::kDefaultLambda;
    OptimConfig optim;
    std::size_t batch_size = 8;
    std::size_t steps = 2000;
    std::uint64_t seed = 0;
    std::size_t log_every = 50;
    std::size_t eval_every = 0;  // 0: evaluate only after the last step
    bool fit_pixel_stats = true;  // set model.pixel_mean/std from the training clips
    std::string data_dir;
    std::string out_dir;

    RunConfig();
    void validate() const;
};

std::string serialize(const RunConfig& cfg);
RunConfig parse_run_config(std::string_view text);

/// Hex FNV-1a of the serialized config (paths excluded).
std::string config_hash(const RunConfig& cfg);

/// Small model used for the learnability and ablation runs: 2x8x8 tubelets,
/// encoder 2 x 32, bridge 1 x 32, decoder 1 x 32.
model::ModelConfig tiny_model();
/// Desk-scale defaults: 2x4x4 tubelets, encoder 4 x 64, bridge 2 x 32,
/// decoder 2 x 32.
model::ModelConfig desk_model();

class AdamW {
public:
    AdamW(const OptimConfig& cfg, const model::ParamMap<float>& params);
    void step(model::ParamMap<float>& params, const model::ParamMap<float>& grads, double lr);
    std::size_t steps_taken() const { return t_; }

private:
    OptimConfig cfg_;
    model::ParamMap<float> m_;
    model::ParamMap<float> v_;
    std::size_t t_ = 0;
};

/// Scales all gradients so their joint L2 norm is at most `max_norm`.
/// Returns the norm before clipping.
double clip_gradients(model::ParamMap<float>& grads, double max_norm);

struct MetricsRow {
    std::size_t step = 0;
    std::string split;
    double loss = 0.0;
    double l_r = 0.0;
    double l_c = 0.0;
    double top1 = 0.0;
    double visible_tokens = 0.0;
    double seconds = 0.0;  // written to timing.csv, not metrics.csv
};

std::string metrics_header();
std::string format_metrics_row(const MetricsRow& row);

/// Mask used for clip `index` when the spec needs per-clip randomness.
mask::MaskSpec clip_mask(const mask::MaskSpec& base, std::uint64_t seed, std::initializer_list<std::uint64_t> path);

struct EvalResult {
    double top1 = 0.0;
    double l_c = 0.0;  // mean cross-entropy
    std::vector<double> per_class;
    std::vector<std::size_t> class_counts;
    std::size_t clips = 0;
};

/// Single-view top-1 through forward_inference. Random strategies get a
/// fixed per-clip seed derived from spec.seed.
EvalResult evaluate(const model::ParamMap<float>& params, const model::ModelConfig& cfg,
                    const std::vector<patch::VideoClip>& clips, const mask::MaskSpec& spec);

/// Mean reconstruction loss under `train_spec` with fixed per-clip masks.
double reconstruction_eval(const model::ParamMap<float>& params, const model::ModelConfig& cfg,
                           const std::vector<patch::VideoClip>& clips, const mask::MaskSpec& train_spec,
                           std::uint64_t seed);

/// Mean and population std over every pixel of every clip.
std::pair<double, double> pixel_stats(const std::vector<patch::VideoClip>& clips);

struct TrainResult {
    model::ModelConfig model;  // cfg.model with fitted pixel statistics
    model::ParamMap<float> params;
    std::vector<MetricsRow> rows;
    EvalResult final_eval;
    double final_val_l_r = 0.0;
    double seconds = 0.0;
};

using ProgressFn = std::function<void(const MetricsRow&)>;

/// In-memory training; deterministic given cfg.seed.
TrainResult train(const RunConfig& cfg, const std::vector<patch::VideoClip>& train_clips,
                  const std::vector<patch::VideoClip>& val_clips, const ProgressFn& progress = {});

/// Loads cfg.data_dir, trains, and writes config.txt (with the fitted model
/// config), metrics.csv, timing.csv and checkpoint.bin into cfg.out_dir.
TrainResult train_run(const RunConfig& cfg, const ProgressFn& progress = {});

struct LoadedRun {
    RunConfig cfg;
    model::ParamMap<float> params;
};

LoadedRun load_run(const std::filesystem::path& run_dir);

struct AblationGrid {
    RunConfig base;
    std::vector<mask::Strategy> strategies{mask::Strategy::CellRunning};
    std::vector<double> train_ratios{0.5};
    std::vector<double> eval_ratios;  // empty: evaluate at the training ratio
    std::vector<std::size_t> start_states{0};
    std::vector<double> lambdas{loss::kDefaultLambda};
    std::vector<model::ClassifierKind> classifiers{model::ClassifierKind::Bridge};
    std::vector<std::uint64_t> seeds{0};
    // false: every cell is evaluated with the repeated running inference mask
    // at each start state. true: non-running-cell strategies are evaluated
    // with their own (seeded) masks and a single row.
    bool eval_with_train_strategy = false;
};

struct AblationRow {
    std::string config_hash;
    mask::Strategy strategy = mask::Strategy::CellRunning;
    double train_ratio = 0.0;
    double eval_ratio = 0.0;
    std::size_t start_state = 0;
    double lambda = 0.0;
    model::ClassifierKind classifier = model::ClassifierKind::Bridge;
    std::uint64_t seed = 0;
    double top1 = 0.0;
    double final_l_r = 0.0;
    double final_l_c = 0.0;
    double gflops = 0.0;  // single-view inference cost at eval_ratio
    std::string status = "ok";
};

std::string ablation_header();
std::string format_ablation_row(const AblationRow& row);
std::vector<AblationRow> parse_ablation_csv(std::string_view text);

/// Trains every (strategy, train ratio, lambda, classifier, seed) cell once
/// and evaluates it at every eval ratio and start state. A failing cell is
/// reported in its rows' status and does not stop the grid. Rows are
/// appended to `csv_path` as they finish when it is non-empty.
std::vector<AblationRow> ablate(const AblationGrid& grid, const std::vector<patch::VideoClip>& train_clips,
                                const std::vector<patch::VideoClip>& val_clips,
                                const std::filesystem::path& csv_path = {},
                                const std::function<void(const std::string&)>& log = {});

struct GroupSummary {
    std::string key;
    std::size_t n = 0;
    double mean_top1 = 0.0;
    double std_top1 = 0.0;
    double mean_l_r = 0.0;
};

/// Mean and sample std of top1 over seeds, grouped by every other axis.
std::vector<GroupSummary> summarize(const std::vector<AblationRow>& rows);
std::string format_summary(const std::vector<GroupSummary>& groups);

/// PBM frames plus coverage.csv (window r*q for cell strategies, else 4).
std::vector<std::filesystem::path> report_masks(const mask::MaskSpec& spec, const mask::LatticeShape& shape,
                                                const std::filesystem::path& dir);

}  // namespace mar::harness
