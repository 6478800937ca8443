#include "mar/harness.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <map>
#include <numbers>
#include <numeric>
#include <sstream>
#include <stdexcept>

#include "mar/checkpoint.hpp"
#include "mar/kv.hpp"
#include "mar/rng.hpp"

namespace mar::harness {
namespace {

constexpr std::uint64_t kMaskStream = 0x6d61736b;   // per-step training masks
constexpr std::uint64_t kOrderStream = 0x6f726472;  // epoch order
constexpr std::uint64_t kValStream = 0x76616c;      // validation reconstruction masks

std::string prefixed(const std::string& prefix, std::string_view kv_text) {
    std::string out;
    for (const auto& [k, v] : parse_kv(kv_text)) out += prefix + k + "=" + v + "\n";
    return out;
}

std::string extract(const KeyValues& kv, const std::string& prefix) {
    std::string out;
    for (const auto& [k, v] : kv) {
        if (k.rfind(prefix, 0) == 0) out += k.substr(prefix.size()) + "=" + v + "\n";
    }
    return out;
}

std::uint64_t fnv1a(std::string_view s) {
    std::uint64_t h = 0xcbf29ce484222325ull;
    for (unsigned char c : s) {
        h ^= c;
        h *= 0x100000001b3ull;
    }
    return h;
}

std::string classifier_name(model::ClassifierKind k) { return k == model::ClassifierKind::Bridge ? "bridge" : "linear"; }

model::ClassifierKind parse_classifier(const std::string& s) {
    if (s == "bridge") return model::ClassifierKind::Bridge;
    if (s == "linear") return model::ClassifierKind::Linear;
    throw std::invalid_argument("unknown classifier '" + s + "'");
}

bool is_weight(const std::string& name) { return name.size() > 7 && name.ends_with(".weight"); }

void require_clips(const std::vector<patch::VideoClip>& clips, const char* what) {
    if (clips.empty()) throw std::runtime_error(std::string("no ") + what + " clips");
}

}  // namespace

double learning_rate(const OptimConfig& cfg, std::size_t step, std::size_t total) {
    if (cfg.warmup_steps > 0 && step < cfg.warmup_steps) {
        return cfg.lr * static_cast<double>(step + 1) / static_cast<double>(cfg.warmup_steps);
    }
    const double floor = cfg.lr * cfg.min_lr_ratio;
    const std::size_t span = total > cfg.warmup_steps ? total - cfg.warmup_steps : 1;
    const double progress = std::min(1.0, static_cast<double>(step - cfg.warmup_steps) / static_cast<double>(span));
    return floor + (cfg.lr - floor) * 0.5 * (1.0 + std::cos(std::numbers::pi * progress));
}

RunConfig::RunConfig() : model(tiny_model()), eval_mask(mask::inference_spec(0.5)) {
    train_mask.strategy = mask::Strategy::CellRunning;
    train_mask.ratio = 0.5;
    train_mask.spatial_mode = mask::SpatialMode::Repeated;
    train_mask.temporal_mode = mask::TemporalMode::Shuffled;
}

void RunConfig::validate() const {
    model.validate();
    if (!(lambda >= 0.0)) throw std::invalid_argument("lambda must be >= 0");
    if (batch_size == 0) throw std::invalid_argument("batch_size must be positive");
    if (!(optim.lr > 0.0)) throw std::invalid_argument("learning rate must be positive");
    if (!(optim.beta1 >= 0.0 && optim.beta1 < 1.0 && optim.beta2 >= 0.0 && optim.beta2 < 1.0)) {
        throw std::invalid_argument("adam betas must be in [0, 1)");
    }
    if (!(optim.weight_decay >= 0.0)) throw std::invalid_argument("weight decay must be >= 0");
}

std::string serialize(const RunConfig& c) {
    std::string out = prefixed("model.", model::serialize(c.model));
    out += prefixed("train_mask.", mask::serialize(c.train_mask));
    out += prefixed("eval_mask.", mask::serialize(c.eval_mask));
    out += format_kv({
        {"lambda", format_double(c.lambda)},
        {"optim.lr", format_double(c.optim.lr)},
        {"optim.beta1", format_double(c.optim.beta1)},
        {"optim.beta2", format_double(c.optim.beta2)},
        {"optim.eps", format_double(c.optim.eps)},
        {"optim.weight_decay", format_double(c.optim.weight_decay)},
        {"optim.warmup_steps", std::to_string(c.optim.warmup_steps)},
        {"optim.min_lr_ratio", format_double(c.optim.min_lr_ratio)},
        {"optim.clip_norm", format_double(c.optim.clip_norm)},
        {"batch_size", std::to_string(c.batch_size)},
        {"steps", std::to_string(c.steps)},
        {"seed", std::to_string(c.seed)},
        {"log_every", std::to_string(c.log_every)},
        {"eval_every", std::to_string(c.eval_every)},
        {"fit_pixel_stats", c.fit_pixel_stats ? "1" : "0"},
        {"data_dir", c.data_dir},
        {"out_dir", c.out_dir},
    });
    return out;
}

RunConfig parse_run_config(std::string_view text) {
    const auto kv = parse_kv(text);
    RunConfig c;
    c.model = model::parse_model_config(extract(kv, "model."));
    c.train_mask = mask::parse_mask_spec(extract(kv, "train_mask."));
    c.eval_mask = mask::parse_mask_spec(extract(kv, "eval_mask."));
    c.lambda = kv_get(kv, "lambda", c.lambda);
    c.optim.lr = kv_get(kv, "optim.lr", c.optim.lr);
    c.optim.beta1 = kv_get(kv, "optim.beta1", c.optim.beta1);
    c.optim.beta2 = kv_get(kv, "optim.beta2", c.optim.beta2);
    c.optim.eps = kv_get(kv, "optim.eps", c.optim.eps);
    c.optim.weight_decay = kv_get(kv, "optim.weight_decay", c.optim.weight_decay);
    c.optim.warmup_steps = kv_get(kv, "optim.warmup_steps", c.optim.warmup_steps);
    c.optim.min_lr_ratio = kv_get(kv, "optim.min_lr_ratio", c.optim.min_lr_ratio);
    c.optim.clip_norm = kv_get(kv, "optim.clip_norm", c.optim.clip_norm);
    c.batch_size = kv_get(kv, "batch_size", c.batch_size);
    c.steps = kv_get(kv, "steps", c.steps);
    c.seed = kv_get_u64(kv, "seed", c.seed);
    c.log_every = kv_get(kv, "log_every", c.log_every);
    c.eval_every = kv_get(kv, "eval_every", c.eval_every);
    c.fit_pixel_stats = kv_get(kv, "fit_pixel_stats", std::size_t{1}) != 0;
    c.data_dir = kv_get(kv, "data_dir", c.data_dir);
    c.out_dir = kv_get(kv, "out_dir", c.out_dir);
    c.validate();
    return c;
}

std::string config_hash(const RunConfig& cfg) {
    RunConfig c = cfg;
    c.data_dir.clear();
    c.out_dir.clear();
    char buf[17];
    std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(fnv1a(serialize(c))));
    return buf;
}

model::ModelConfig tiny_model() {
    model::ModelConfig m;
    m.patch = {2, 8, 8};
    m.encoder = {2, 32, 4, 4};
    m.bridge = {model::ClassifierKind::Bridge, 1, 32, 4, 4, 8};
    m.decoder = {1, 32, 4, 4};
    return m;
}

model::ModelConfig desk_model() { return model::ModelConfig{}; }

AdamW::AdamW(const OptimConfig& cfg, const model::ParamMap<float>& params) : cfg_(cfg) {
    for (const auto& [name, t] : params) {
        m_.emplace(name, Tensor<float>(t.shape()));
        v_.emplace(name, Tensor<float>(t.shape()));
    }
}

void AdamW::step(model::ParamMap<float>& params, const model::ParamMap<float>& grads, double lr) {
    ++t_;
    const double bc1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(t_));
    const double bc2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(t_));
    for (auto& [name, p] : params) {
        const auto& g = grads.at(name);
        auto& m = m_.at(name);
        auto& v = v_.at(name);
        const double decay = is_weight(name) ? cfg_.weight_decay : 0.0;
        for (std::size_t i = 0; i < p.size(); ++i) {
            const double gi = g[i];
            const double mi = cfg_.beta1 * m[i] + (1.0 - cfg_.beta1) * gi;
            const double vi = cfg_.beta2 * v[i] + (1.0 - cfg_.beta2) * gi * gi;
            m[i] = static_cast<float>(mi);
            v[i] = static_cast<float>(vi);
            const double update = (mi / bc1) / (std::sqrt(vi / bc2) + cfg_.eps) + decay * p[i];
            p[i] = static_cast<float>(p[i] - lr * update);
        }
    }
}

double clip_gradients(model::ParamMap<float>& grads, double max_norm) {
    double sq = 0.0;
    for (const auto& [_, g] : grads)
        for (float v : g.data()) sq += static_cast<double>(v) * v;
    const double norm = std::sqrt(sq);
    if (max_norm > 0.0 && norm > max_norm) {
        const float s = static_cast<float>(max_norm / norm);
        for (auto& [_, g] : grads)
            for (auto& v : g.data()) v *= s;
    }
    return norm;
}

std::string metrics_header() { return "step,split,loss,l_r,l_c,top1,visible_tokens\n"; }

std::string format_metrics_row(const MetricsRow& r) {
    return std::to_string(r.step) + "," + r.split + "," + format_double(r.loss) + "," + format_double(r.l_r) + "," +
           format_double(r.l_c) + "," + format_double(r.top1) + "," + format_double(r.visible_tokens) + "\n";
}

mask::MaskSpec clip_mask(const mask::MaskSpec& base, std::uint64_t seed, std::initializer_list<std::uint64_t> path) {
    mask::MaskSpec spec = base;
    spec.seed = derive_seed(seed, path);
    return spec;
}

EvalResult evaluate(const model::ParamMap<float>& params, const model::ModelConfig& cfg,
                    const std::vector<patch::VideoClip>& clips, const mask::MaskSpec& spec) {
    require_clips(clips, "evaluation");
    EvalResult res;
    const std::size_t c = cfg.bridge.classes;
    res.per_class.assign(c, 0.0);
    res.class_counts.assign(c, 0);
    std::size_t hits = 0;
    double ce = 0.0;
    for (std::size_t i = 0; i < clips.size(); ++i) {
        const auto& clip = clips[i];
        const auto logits = model::forward_inference(params, cfg, clip, clip_mask(spec, spec.seed, {i}));
        const std::size_t pred = model::argmax(std::span<const float>(logits.data()));
        const bool hit = pred == clip.label;
        hits += hit;
        res.per_class.at(clip.label) += hit;
        ++res.class_counts[clip.label];
        double m = logits[0];
        for (float v : logits.data()) m = std::max(m, static_cast<double>(v));
        double z = 0.0;
        for (float v : logits.data()) z += std::exp(v - m);
        ce += std::log(z) - (logits[clip.label] - m);
    }
    for (std::size_t k = 0; k < c; ++k) {
        if (res.class_counts[k]) res.per_class[k] /= static_cast<double>(res.class_counts[k]);
    }
    res.clips = clips.size();
    res.top1 = static_cast<double>(hits) / static_cast<double>(clips.size());
    res.l_c = ce / static_cast<double>(clips.size());
    return res;
}

double reconstruction_eval(const model::ParamMap<float>& params, const model::ModelConfig& cfg,
                           const std::vector<patch::VideoClip>& clips, const mask::MaskSpec& train_spec,
                           std::uint64_t seed) {
    require_clips(clips, "evaluation");
    double total = 0.0;
    for (std::size_t i = 0; i < clips.size(); ++i) {
        Tape<float> tape(GradMode::Inference);
        const model::Bound<float> bound(tape, params);
        const auto out =
            model::forward_training(tape, bound, cfg, clips[i], clip_mask(train_spec, seed, {kValStream, i}), 1.0);
        total += out.report.reconstruction;
    }
    return total / static_cast<double>(clips.size());
}

std::pair<double, double> pixel_stats(const std::vector<patch::VideoClip>& clips) {
    double sum = 0.0, sq = 0.0;
    std::size_t n = 0;
    for (const auto& c : clips) {
        for (float v : c.pixels) {
            sum += v;
            sq += static_cast<double>(v) * v;
        }
        n += c.pixels.size();
    }
    if (n == 0) throw std::invalid_argument("pixel_stats: no pixels");
    const double mean = sum / static_cast<double>(n);
    const double var = std::max(0.0, sq / static_cast<double>(n) - mean * mean);
    return {mean, var > 0.0 ? std::sqrt(var) : 1.0};
}

TrainResult train(const RunConfig& cfg, const std::vector<patch::VideoClip>& train_clips,
                  const std::vector<patch::VideoClip>& val_clips, const ProgressFn& progress) {
    cfg.validate();
    require_clips(train_clips, "training");
    const auto start = std::chrono::steady_clock::now();
    auto elapsed = [&] { return std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count(); };

    TrainResult res;
    res.model = cfg.model;
    if (cfg.fit_pixel_stats) std::tie(res.model.pixel_mean, res.model.pixel_std) = pixel_stats(train_clips);
    const model::ModelConfig& mc = res.model;
    res.params = model::init_params<float>(mc, cfg.seed);
    AdamW opt(cfg.optim, res.params);
    const std::size_t n = train_clips.size();
    std::vector<std::size_t> order(n);
    std::size_t order_epoch = SIZE_MAX;

    MetricsRow acc;
    std::size_t acc_items = 0;
    auto emit = [&](MetricsRow row) {
        row.seconds = elapsed();
        res.rows.push_back(row);
        if (progress) progress(row);
    };
    auto validate_now = [&](std::size_t step) {
        if (val_clips.empty()) return;
        res.final_eval = evaluate(res.params, mc, val_clips, cfg.eval_mask);
        res.final_val_l_r = reconstruction_eval(res.params, mc, val_clips, cfg.train_mask, cfg.seed);
        MetricsRow row;
        row.step = step;
        row.split = "val";
        row.l_c = res.final_eval.l_c;
        row.l_r = res.final_val_l_r;
        row.loss = cfg.lambda * row.l_r + row.l_c;
        row.top1 = res.final_eval.top1;
        row.visible_tokens = static_cast<double>(
            mask::generate(cfg.eval_mask, patch::lattice_for(val_clips[0], mc.patch)).visible_indices().size());
        emit(row);
    };

    for (std::size_t step = 0; step < cfg.steps; ++step) {
        model::ParamMap<float> grads;
        for (const auto& [name, p] : res.params) grads.emplace(name, Tensor<float>(p.shape()));
        for (std::size_t i = 0; i < cfg.batch_size; ++i) {
            const std::size_t pos = step * cfg.batch_size + i;
            if (pos / n != order_epoch) {
                order_epoch = pos / n;
                std::iota(order.begin(), order.end(), std::size_t{0});
                auto rng = make_rng(cfg.seed, {kOrderStream, order_epoch});
                std::shuffle(order.begin(), order.end(), rng);
            }
            const auto& clip = train_clips[order[pos % n]];
            Tape<float> tape;
            const model::Bound<float> bound(tape, res.params);
            try {
                const auto out = model::forward_training(tape, bound, mc, clip,
                                                         clip_mask(cfg.train_mask, cfg.seed, {kMaskStream, step, i}),
                                                         cfg.lambda);
                tape.backward(out.loss);
                for (const auto& [name, g] : bound.gradients()) {
                    auto& dst = grads.at(name);
                    for (std::size_t j = 0; j < g.size(); ++j) dst[j] += g[j];
                }
                acc.loss += out.report.total;
                acc.l_r += out.report.reconstruction;
                acc.l_c += out.report.classification;
                acc.top1 += model::argmax(std::span<const float>(tape.value(out.logits).data())) == clip.label;
                acc.visible_tokens += static_cast<double>(out.visible_tokens);
                ++acc_items;
            } catch (const NonFiniteError& e) {
                throw std::runtime_error("training diverged at step " + std::to_string(step) + ": " + e.what());
            }
        }
        const float inv = 1.0f / static_cast<float>(cfg.batch_size);
        for (auto& [_, g] : grads)
            for (auto& v : g.data()) v *= inv;
        const double norm = clip_gradients(grads, cfg.optim.clip_norm);
        if (!std::isfinite(norm)) {
            throw std::runtime_error("training diverged at step " + std::to_string(step) + ": gradient norm not finite");
        }
        opt.step(res.params, grads, learning_rate(cfg.optim, step, cfg.steps));

        const std::size_t done = step + 1;
        if ((cfg.log_every && done % cfg.log_every == 0) || done == cfg.steps) {
            const double k = static_cast<double>(acc_items);
            MetricsRow row;
            row.step = done;
            row.split = "train";
            row.loss = acc.loss / k;
            row.l_r = acc.l_r / k;
            row.l_c = acc.l_c / k;
            row.top1 = acc.top1 / k;
            row.visible_tokens = acc.visible_tokens / k;
            emit(row);
            acc = MetricsRow{};
            acc_items = 0;
        }
        if (cfg.eval_every && done % cfg.eval_every == 0 && done != cfg.steps) validate_now(done);
    }
    validate_now(cfg.steps);
    res.seconds = elapsed();
    return res;
}

TrainResult train_run(const RunConfig& cfg, const ProgressFn& progress) {
    if (cfg.data_dir.empty()) throw std::invalid_argument("train_run: data_dir not set");
    if (cfg.out_dir.empty()) throw std::invalid_argument("train_run: out_dir not set");
    const auto train_clips = patch::load_split(cfg.data_dir, "train");
    const auto val_clips = patch::load_split(cfg.data_dir, "val");
    const std::filesystem::path out(cfg.out_dir);
    std::filesystem::create_directories(out);
    RunConfig resolved = cfg;
    if (cfg.fit_pixel_stats) std::tie(resolved.model.pixel_mean, resolved.model.pixel_std) = pixel_stats(train_clips);
    write_text_file(out / "config.txt", serialize(resolved));
    auto res = train(cfg, train_clips, val_clips, progress);
    std::string metrics = metrics_header();
    std::string timing = "step,split,seconds\n";
    for (const auto& r : res.rows) {
        metrics += format_metrics_row(r);
        timing += std::to_string(r.step) + "," + r.split + "," + format_double(r.seconds) + "\n";
    }
    write_text_file(out / "metrics.csv", metrics);
    write_text_file(out / "timing.csv", timing);
    save_checkpoint(out / "checkpoint.bin", model::to_checkpoint(res.params));
    return res;
}

LoadedRun load_run(const std::filesystem::path& run_dir) {
    LoadedRun run;
    run.cfg = parse_run_config(read_text_file(run_dir / "config.txt"));
    run.params = model::from_checkpoint(run.cfg.model, load_checkpoint(run_dir / "checkpoint.bin"));
    return run;
}

std::string ablation_header() {
    return "config_hash,strategy,train_ratio,eval_ratio,start_state,lambda,classifier,seed,top1,final_l_r,"
           "final_l_c,gflops,status\n";
}

std::string format_ablation_row(const AblationRow& r) {
    std::string status = r.status;
    std::replace(status.begin(), status.end(), ',', ';');
    std::replace(status.begin(), status.end(), '\n', ' ');
    return r.config_hash + "," + mask::to_string(r.strategy) + "," + format_double(r.train_ratio) + "," +
           format_double(r.eval_ratio) + "," + std::to_string(r.start_state) + "," + format_double(r.lambda) + "," +
           classifier_name(r.classifier) + "," + std::to_string(r.seed) + "," + format_double(r.top1) + "," +
           format_double(r.final_l_r) + "," + format_double(r.final_l_c) + "," + format_double(r.gflops) + "," +
           status + "\n";
}

std::vector<AblationRow> parse_ablation_csv(std::string_view text) {
    std::vector<AblationRow> rows;
    std::istringstream in{std::string(text)};
    std::string line;
    bool header = true;
    while (std::getline(in, line)) {
        if (header) {
            header = false;
            continue;
        }
        if (line.empty()) continue;
        std::vector<std::string> f;
        std::stringstream ls(line);
        std::string cell;
        while (std::getline(ls, cell, ',')) f.push_back(cell);
        if (f.size() != 13) throw std::invalid_argument("ablation csv: expected 13 fields in '" + line + "'");
        AblationRow r;
        r.config_hash = f[0];
        r.strategy = mask::parse_strategy(f[1]);
        r.train_ratio = std::stod(f[2]);
        r.eval_ratio = std::stod(f[3]);
        r.start_state = std::stoul(f[4]);
        r.lambda = std::stod(f[5]);
        r.classifier = parse_classifier(f[6]);
        r.seed = std::stoull(f[7]);
        r.top1 = std::stod(f[8]);
        r.final_l_r = std::stod(f[9]);
        r.final_l_c = std::stod(f[10]);
        r.gflops = std::stod(f[11]);
        r.status = f[12];
        rows.push_back(r);
    }
    return rows;
}

std::vector<AblationRow> ablate(const AblationGrid& grid, const std::vector<patch::VideoClip>& train_clips,
                                const std::vector<patch::VideoClip>& val_clips, const std::filesystem::path& csv_path,
                                const std::function<void(const std::string&)>& log) {
    require_clips(val_clips, "validation");
    std::vector<AblationRow> rows;
    if (!csv_path.empty()) {
        if (csv_path.has_parent_path()) std::filesystem::create_directories(csv_path.parent_path());
        write_text_file(csv_path, ablation_header());
    }
    const auto lattice = patch::lattice_for(val_clips[0], grid.base.model.patch);

    for (auto strategy : grid.strategies)
        for (double train_ratio : grid.train_ratios)
            for (double lambda : grid.lambdas)
                for (auto classifier : grid.classifiers)
                    for (auto seed : grid.seeds) {
                        RunConfig cfg = grid.base;
                        cfg.train_mask.strategy = strategy;
                        cfg.train_mask.ratio = train_ratio;
                        cfg.lambda = lambda;
                        cfg.model.bridge.kind = classifier;
                        cfg.seed = seed;
                        const auto eval_ratios =
                            grid.eval_ratios.empty() ? std::vector<double>{train_ratio} : grid.eval_ratios;
                        const bool cell_eval =
                            strategy == mask::Strategy::CellRunning || !grid.eval_with_train_strategy;
                        const auto starts = cell_eval ? grid.start_states : std::vector<std::size_t>{0};

                        AblationRow proto;
                        proto.config_hash = config_hash(cfg);
                        proto.strategy = strategy;
                        proto.train_ratio = train_ratio;
                        proto.lambda = lambda;
                        proto.classifier = classifier;
                        proto.seed = seed;
                        std::vector<AblationRow> cell_rows;
                        try {
                            if (log) log("train " + proto.config_hash + " " + mask::to_string(strategy) + " ratio=" +
                                         format_double(train_ratio) + " lambda=" + format_double(lambda) + " " +
                                         classifier_name(classifier) + " seed=" + std::to_string(seed));
                            RunConfig quiet = cfg;
                            quiet.eval_every = 0;
                            const auto trained = train(quiet, train_clips, {});
                            const double l_r =
                                reconstruction_eval(trained.params, trained.model, val_clips, cfg.train_mask, cfg.seed);
                            for (double eval_ratio : eval_ratios)
                                for (auto start : starts) {
                                    AblationRow row = proto;
                                    row.eval_ratio = eval_ratio;
                                    row.start_state = start;
                                    mask::MaskSpec spec;
                                    if (cell_eval) {
                                        spec = mask::inference_spec(eval_ratio, cfg.train_mask.cell, start);
                                    } else {
                                        spec = cfg.eval_mask;
                                        spec.strategy = strategy;
                                        spec.ratio = eval_ratio;
                                        spec.start_state.reset();
                                    }
                                    const auto ev = evaluate(trained.params, trained.model, val_clips, spec);
                                    row.top1 = ev.top1;
                                    row.final_l_c = ev.l_c;
                                    row.final_l_r = l_r;
                                    row.gflops = flops::mar_cost(eval_ratio, flops::cost_config(cfg.model, lattice))
                                                     .gflops();
                                    cell_rows.push_back(row);
                                }
                        } catch (const std::exception& e) {
                            cell_rows.clear();
                            AblationRow row = proto;
                            row.status = std::string("error: ") + e.what();
                            cell_rows.push_back(row);
                            if (log) log(row.status);
                        }
                        for (const auto& row : cell_rows) {
                            if (!csv_path.empty()) {
                                std::ofstream(csv_path, std::ios::app) << format_ablation_row(row);
                            }
                            rows.push_back(row);
                        }
                    }
    return rows;
}

std::vector<GroupSummary> summarize(const std::vector<AblationRow>& rows) {
    std::map<std::string, std::vector<const AblationRow*>> groups;
    std::vector<std::string> order;
    for (const auto& r : rows) {
        if (r.status != "ok") continue;
        const std::string key = mask::to_string(r.strategy) + " train=" + format_double(r.train_ratio) +
                                " eval=" + format_double(r.eval_ratio) + " start=" + std::to_string(r.start_state) +
                                " lambda=" + format_double(r.lambda) + " " + classifier_name(r.classifier);
        if (!groups.count(key)) order.push_back(key);
        groups[key].push_back(&r);
    }
    std::vector<GroupSummary> out;
    for (const auto& key : order) {
        const auto& g = groups[key];
        GroupSummary s;
        s.key = key;
        s.n = g.size();
        for (const auto* r : g) {
            s.mean_top1 += r->top1;
            s.mean_l_r += r->final_l_r;
        }
        s.mean_top1 /= static_cast<double>(s.n);
        s.mean_l_r /= static_cast<double>(s.n);
        if (s.n > 1) {
            double sq = 0.0;
            for (const auto* r : g) sq += (r->top1 - s.mean_top1) * (r->top1 - s.mean_top1);
            s.std_top1 = std::sqrt(sq / static_cast<double>(s.n - 1));
        }
        out.push_back(s);
    }
    return out;
}

std::string format_summary(const std::vector<GroupSummary>& groups) {
    std::string out = "group,n,mean_top1,std_top1,mean_l_r\n";
    for (const auto& g : groups) {
        out += g.key + "," + std::to_string(g.n) + "," + format_double(g.mean_top1) + "," +
               format_double(g.std_top1) + "," + format_double(g.mean_l_r) + "\n";
    }
    return out;
}

std::vector<std::filesystem::path> report_masks(const mask::MaskSpec& spec, const mask::LatticeShape& shape,
                                                const std::filesystem::path& dir) {
    const auto schedule = mask::generate(spec, shape);
    std::filesystem::create_directories(dir);
    auto paths = mask::dump_pbm(schedule, dir);
    const std::size_t window =
        spec.strategy == mask::Strategy::CellRunning ? spec.cell.states() : std::min<std::size_t>(4, shape.t);
    const auto cov = mask::coverage_stats(schedule, window);
    std::string csv = "h,w,window,min_visible,max_visible\n";
    for (std::size_t i = 0; i < shape.h; ++i)
        for (std::size_t j = 0; j < shape.w; ++j) {
            const std::size_t s = i * shape.w + j;
            csv += std::to_string(i) + "," + std::to_string(j) + "," + std::to_string(window) + "," +
                   std::to_string(cov.min_visible[s]) + "," + std::to_string(cov.max_visible[s]) + "\n";
        }
    write_text_file(dir / "coverage.csv", csv);
    std::string frames = "frame,masked,total\n";
    for (std::size_t t = 0; t < shape.t; ++t) {
        frames += std::to_string(t) + "," + std::to_string(schedule.frame_masked_count(t)) + "," +
                  std::to_string(shape.frame_sites()) + "\n";
    }
    write_text_file(dir / "frames.csv", frames);
    write_text_file(dir / "spec.txt", mask::serialize(spec));
    paths.push_back(dir / "coverage.csv");
    paths.push_back(dir / "frames.csv");
    return paths;
}

}  // namespace mar::harness
