// mar: command-line front end for data generation, training, evaluation,
// ablation grids, cost reports and mask dumps.
//
// Relative output paths are resolved against $MAR_OUTPUT_ROOT when it is set.

#include <CLI11.hpp>

#include <cstdlib>
#include <filesystem>
#include <iostream>
#include <sstream>

#include "mar/harness.hpp"
#include "mar/kv.hpp"
#include "mar/synthdata.hpp"

namespace fs = std::filesystem;
using namespace mar;

namespace {

fs::path output_path(const std::string& p) {
    fs::path path(p);
    if (path.is_relative()) {
        if (const char* root = std::getenv("MAR_OUTPUT_ROOT"); root && *root) return fs::path(root) / path;
    }
    return path;
}

std::vector<std::string> split_list(const std::string& s) {
    std::vector<std::string> out;
    std::stringstream ss(s);
    std::string item;
    while (std::getline(ss, item, ',')) {
        if (!item.empty()) out.push_back(item);
    }
    return out;
}

template <typename T, typename F>
std::vector<T> parse_list(const std::string& s, F f) {
    std::vector<T> out;
    for (const auto& item : split_list(s)) out.push_back(f(item));
    return out;
}

std::vector<double> doubles(const std::string& s) {
    return parse_list<double>(s, [](const std::string& x) { return std::stod(x); });
}

model::ClassifierKind classifier_kind(const std::string& s) {
    if (s == "bridge") return model::ClassifierKind::Bridge;
    if (s == "linear") return model::ClassifierKind::Linear;
    throw CLI::ValidationError("classifier", "expected bridge or linear, got " + s);
}

// Flags shared by train and ablate; unset flags keep the config value.
struct RunFlags {
    std::string config;
    std::string preset = "tiny";
    std::optional<std::size_t> steps, batch, warmup, log_every, eval_every;
    std::optional<double> lr, lambda, weight_decay, clip_norm, ratio, eval_ratio;
    std::optional<std::uint64_t> seed;
    std::optional<std::string> strategy, spatial, temporal, classifier;

    void add(CLI::App* app) {
        app->add_option("--config", config, "RunConfig key=value file");
        app->add_option("--model", preset, "model preset when no config is given")
            ->check(CLI::IsMember({"tiny", "desk"}));
        app->add_option("--steps", steps);
        app->add_option("--batch", batch);
        app->add_option("--lr", lr);
        app->add_option("--warmup", warmup);
        app->add_option("--weight-decay", weight_decay);
        app->add_option("--clip-norm", clip_norm);
        app->add_option("--lambda", lambda);
        app->add_option("--seed", seed);
        app->add_option("--strategy", strategy, "training mask strategy");
        app->add_option("--ratio", ratio, "training mask ratio");
        app->add_option("--spatial", spatial, "Repeated or Random");
        app->add_option("--temporal", temporal, "Fixed or Shuffled");
        app->add_option("--eval-ratio", eval_ratio, "inference mask ratio");
        app->add_option("--classifier", classifier, "bridge or linear");
        app->add_option("--log-every", log_every);
        app->add_option("--eval-every", eval_every);
    }

    harness::RunConfig resolve() const {
        harness::RunConfig c;
        if (!config.empty()) {
            c = harness::parse_run_config(read_text_file(config));
        } else if (preset == "desk") {
            c.model = harness::desk_model();
        }
        if (steps) c.steps = *steps;
        if (batch) c.batch_size = *batch;
        if (lr) c.optim.lr = *lr;
        if (warmup) c.optim.warmup_steps = *warmup;
        if (weight_decay) c.optim.weight_decay = *weight_decay;
        if (clip_norm) c.optim.clip_norm = *clip_norm;
        if (lambda) c.lambda = *lambda;
        if (seed) c.seed = *seed;
        if (strategy) c.train_mask.strategy = mask::parse_strategy(*strategy);
        if (ratio) c.train_mask.ratio = *ratio;
        if (spatial) c.train_mask.spatial_mode = mask::parse_spatial_mode(*spatial);
        if (temporal) c.train_mask.temporal_mode = mask::parse_temporal_mode(*temporal);
        if (eval_ratio) c.eval_mask.ratio = *eval_ratio;
        if (classifier) c.model.bridge.kind = classifier_kind(*classifier);
        if (log_every) c.log_every = *log_every;
        if (eval_every) c.eval_every = *eval_every;
        c.validate();
        return c;
    }
};

void print_row(const harness::MetricsRow& r) {
    std::cout << r.split << " step " << r.step << "  loss " << format_double(r.loss) << "  l_r "
              << format_double(r.l_r) << "  l_c " << format_double(r.l_c) << "  top1 " << format_double(r.top1)
              << "  " << format_double(r.seconds) << "s" << std::endl;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"masked running video transformer: data, training and analysis"};
    app.require_subcommand(1);

    // gen-data
    auto* gen = app.add_subcommand("gen-data", "write a synthetic moving-square dataset");
    std::string gen_out;
    std::size_t n_train = 512, n_val = 128;
    synth::MotionSpec motion;
    gen->add_option("--out", gen_out, "dataset directory")->required();
    gen->add_option("--train", n_train);
    gen->add_option("--val", n_val);
    gen->add_option("--classes", motion.classes);
    gen->add_option("--frames", motion.frames);
    gen->add_option("--height", motion.height);
    gen->add_option("--width", motion.width);
    gen->add_option("--object-size", motion.object_size);
    gen->add_option("--speed", motion.speed);
    gen->add_option("--noise", motion.noise);
    gen->add_option("--seed", motion.seed);

    // train
    auto* tr = app.add_subcommand("train", "train a model and write a run directory");
    RunFlags train_flags;
    std::string train_data, train_out;
    bool quiet = false;
    tr->add_option("--data", train_data, "dataset directory")->required();
    tr->add_option("--out", train_out, "run directory")->required();
    tr->add_flag("--quiet", quiet);
    train_flags.add(tr);

    // eval
    auto* ev = app.add_subcommand("eval", "evaluate a run directory");
    std::string eval_run, eval_data, eval_csv;
    std::optional<double> eval_ratio;
    std::optional<std::size_t> eval_start;
    std::optional<std::string> eval_strategy;
    std::uint64_t eval_seed = 0;
    ev->add_option("--run", eval_run, "run directory")->required();
    ev->add_option("--data", eval_data, "dataset directory (default: the run's)");
    ev->add_option("--ratio", eval_ratio);
    ev->add_option("--start", eval_start, "starting state, 0 = A");
    ev->add_option("--strategy", eval_strategy);
    ev->add_option("--seed", eval_seed, "mask seed for random strategies");
    ev->add_option("--csv", eval_csv, "write per-class accuracy here");

    // ablate
    auto* ab = app.add_subcommand("ablate", "train and evaluate a grid of runs");
    RunFlags ablate_flags;
    std::string ab_data, ab_out;
    std::string ab_strategies = "CellRunning", ab_train = "0.5", ab_eval, ab_starts = "0", ab_lambdas,
                ab_classifiers = "bridge", ab_seeds = "0,1,2";
    ab->add_option("--data", ab_data, "dataset directory")->required();
    ab->add_option("--out", ab_out, "grid CSV; a summary is written beside it")->required();
    ab->add_option("--strategies", ab_strategies, "comma list");
    ab->add_option("--train-ratios", ab_train, "comma list");
    ab->add_option("--eval-ratios", ab_eval, "comma list; default: the training ratio");
    ab->add_option("--starts", ab_starts, "comma list of starting states");
    ab->add_option("--lambdas", ab_lambdas, "comma list");
    ab->add_option("--classifiers", ab_classifiers, "comma list of bridge/linear");
    ab->add_option("--seeds", ab_seeds, "comma list");
    ablate_flags.add(ab);

    // flops
    auto* fl = app.add_subcommand("flops", "single-view inference cost table (CSV)");
    std::string fl_ratios = "0,0.25,0.5,0.75", fl_run, fl_out;
    std::size_t fl_t = 16, fl_h = 32, fl_w = 32;
    fl->add_option("--ratios", fl_ratios, "comma list");
    fl->add_option("--run", fl_run, "cost of a run's model instead of the ViT-B reference");
    fl->add_option("--frames", fl_t, "clip frames for --run");
    fl->add_option("--height", fl_h, "clip height for --run");
    fl->add_option("--width", fl_w, "clip width for --run");
    fl->add_option("--out", fl_out, "write the CSV here instead of stdout");

    // masks
    auto* mk = app.add_subcommand("masks", "dump mask frames as PBM plus coverage CSV");
    std::string mk_out, mk_strategy = "CellRunning", mk_spatial = "Repeated", mk_temporal = "Fixed";
    double mk_ratio = 0.5;
    std::size_t mk_t = 8, mk_h = 14, mk_w = 14, mk_r = 2, mk_q = 2;
    std::optional<std::size_t> mk_start;
    std::uint64_t mk_seed = 0;
    mk->add_option("--out", mk_out)->required();
    mk->add_option("--strategy", mk_strategy);
    mk->add_option("--ratio", mk_ratio);
    mk->add_option("--frames", mk_t);
    mk->add_option("--height", mk_h);
    mk->add_option("--width", mk_w);
    mk->add_option("--cell-r", mk_r);
    mk->add_option("--cell-q", mk_q);
    mk->add_option("--spatial", mk_spatial);
    mk->add_option("--temporal", mk_temporal);
    mk->add_option("--start", mk_start);
    mk->add_option("--seed", mk_seed);

    CLI11_PARSE(app, argc, argv);

    try {
        if (*gen) {
            motion.validate();
            const auto dir = output_path(gen_out);
            synth::generate_dataset(motion, n_train, n_val, dir);
            std::cout << "wrote " << n_train << " train / " << n_val << " val clips to " << dir.string() << "\n";
        } else if (*tr) {
            auto cfg = train_flags.resolve();
            cfg.data_dir = train_data;
            cfg.out_dir = output_path(train_out).string();
            std::cout << "run " << harness::config_hash(cfg) << " -> " << cfg.out_dir << std::endl;
            const auto res = harness::train_run(cfg, quiet ? harness::ProgressFn{} : print_row);
            std::cout << "final val top1 " << format_double(res.final_eval.top1) << "  l_c "
                      << format_double(res.final_eval.l_c) << "  l_r " << format_double(res.final_val_l_r) << "  ("
                      << format_double(res.seconds) << "s)\n";
        } else if (*ev) {
            const auto run = harness::load_run(eval_run);
            auto spec = run.cfg.eval_mask;
            if (eval_strategy) spec.strategy = mask::parse_strategy(*eval_strategy);
            if (eval_ratio) spec.ratio = *eval_ratio;
            if (eval_start) spec.start_state = *eval_start;
            if (spec.strategy != mask::Strategy::CellRunning) spec.start_state.reset();
            spec.seed = eval_seed;
            const auto clips = patch::load_split(eval_data.empty() ? run.cfg.data_dir : eval_data, "val");
            const auto res = harness::evaluate(run.params, run.cfg.model, clips, spec);
            std::cout << "top1 " << format_double(res.top1) << "  l_c " << format_double(res.l_c) << "  clips "
                      << res.clips << "  (single view, " << mask::to_string(spec.strategy) << " ratio "
                      << format_double(spec.ratio) << ")\n";
            std::string csv = "class,clips,top1\n";
            for (std::size_t k = 0; k < res.per_class.size(); ++k) {
                csv += std::to_string(k) + "," + std::to_string(res.class_counts[k]) + "," +
                       format_double(res.per_class[k]) + "\n";
            }
            if (eval_csv.empty()) {
                std::cout << csv;
            } else {
                write_text_file(output_path(eval_csv), csv);
            }
        } else if (*ab) {
            harness::AblationGrid grid;
            grid.base = ablate_flags.resolve();
            grid.base.data_dir = ab_data;
            grid.strategies = parse_list<mask::Strategy>(ab_strategies, [](const std::string& s) {
                return mask::parse_strategy(s);
            });
            grid.train_ratios = doubles(ab_train);
            grid.eval_ratios = doubles(ab_eval);
            grid.start_states = parse_list<std::size_t>(ab_starts, [](const std::string& s) { return std::stoul(s); });
            grid.lambdas = ab_lambdas.empty() ? std::vector<double>{grid.base.lambda} : doubles(ab_lambdas);
            grid.classifiers = parse_list<model::ClassifierKind>(ab_classifiers, classifier_kind);
            grid.seeds = parse_list<std::uint64_t>(ab_seeds, [](const std::string& s) { return std::stoull(s); });
            const auto train_clips = patch::load_split(ab_data, "train");
            const auto val_clips = patch::load_split(ab_data, "val");
            const auto csv = output_path(ab_out);
            const auto rows = harness::ablate(grid, train_clips, val_clips, csv,
                                              [](const std::string& line) { std::cout << line << std::endl; });
            auto summary_path = csv;
            summary_path.replace_extension(".summary.csv");
            const auto summary = harness::format_summary(harness::summarize(rows));
            write_text_file(summary_path, summary);
            std::cout << summary;
        } else if (*fl) {
            std::vector<flops::CostRow> rows;
            if (fl_run.empty()) {
                for (bool linear : {false, true}) {
                    const auto cfg = flops::vit_base_reference(linear);
                    for (double r : doubles(fl_ratios)) {
                        rows.push_back({linear ? "vit-b linear" : "vit-b bridge", r, flops::mar_cost(r, cfg)});
                    }
                }
            } else {
                const auto run = harness::load_run(fl_run);
                patch::VideoClip probe;
                probe.frames = fl_t;
                probe.height = fl_h;
                probe.width = fl_w;
                probe.channels = run.cfg.model.channels;
                const auto cfg = flops::cost_config(run.cfg.model, patch::lattice_for(probe, run.cfg.model.patch));
                for (double r : doubles(fl_ratios)) rows.push_back({"run", r, flops::mar_cost(r, cfg)});
            }
            const auto csv = flops::format_cost_csv(rows);
            if (fl_out.empty()) {
                std::cout << csv;
            } else {
                write_text_file(output_path(fl_out), csv);
            }
        } else if (*mk) {
            mask::MaskSpec spec;
            spec.strategy = mask::parse_strategy(mk_strategy);
            spec.ratio = mk_ratio;
            spec.cell = {mk_r, mk_q};
            spec.spatial_mode = mask::parse_spatial_mode(mk_spatial);
            spec.temporal_mode = mask::parse_temporal_mode(mk_temporal);
            spec.start_state = mk_start;
            spec.seed = mk_seed;
            const auto dir = output_path(mk_out);
            const auto paths = harness::report_masks(spec, {mk_t, mk_h, mk_w}, dir);
            std::cout << "wrote " << paths.size() << " files to " << dir.string() << "\n";
        }
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
    return 0;
}
