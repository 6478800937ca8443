#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>
#include <random>

#include "mar/harness.hpp"
#include "mar/kv.hpp"
#include "mar/synthdata.hpp"

namespace mar::harness {
namespace {

namespace fs = std::filesystem;

fs::path scratch(const std::string& name) {
    auto dir = fs::temp_directory_path() / ("mar_harness_" + name);
    fs::remove_all(dir);
    fs::create_directories(dir);
    return dir;
}

synth::MotionSpec small_motion() {
    synth::MotionSpec m;
    m.frames = 8;
    m.height = 16;
    m.width = 16;
    m.object_size = 4;
    m.seed = 3;
    return m;
}

// 4x4x4 lattice on the small clips; cheap enough for many steps.
RunConfig small_run() {
    RunConfig c;
    c.model.patch = {2, 4, 4};
    c.model.encoder = {1, 16, 2, 2};
    c.model.bridge = {model::ClassifierKind::Bridge, 1, 16, 2, 2, 8};
    c.model.decoder = {1, 16, 2, 2};
    c.batch_size = 4;
    c.steps = 20;
    c.log_every = 5;
    c.optim.warmup_steps = 5;
    c.seed = 11;
    return c;
}

TEST(RunConfig, RoundTrip) {
    RunConfig c = small_run();
    c.lambda = 0.25;
    c.train_mask.ratio = 0.75;
    c.train_mask.start_state = 2;
    c.optim.lr = 3e-4;
    c.data_dir = "data";
    c.out_dir = "runs/x";
    const auto text = serialize(c);
    const auto back = parse_run_config(text);
    EXPECT_EQ(serialize(back), text);
    EXPECT_EQ(back.train_mask.ratio, 0.75);
    EXPECT_EQ(back.train_mask.start_state, std::optional<std::size_t>(2));
    EXPECT_EQ(back.model.encoder.width, 16u);
    EXPECT_EQ(back.optim.lr, 3e-4);
}

TEST(RunConfig, HashIgnoresPathsButNotHyperparameters) {
    RunConfig a = small_run();
    RunConfig b = a;
    b.out_dir = "elsewhere";
    EXPECT_EQ(config_hash(a), config_hash(b));
    b.lambda = 0.0;
    EXPECT_NE(config_hash(a), config_hash(b));
    EXPECT_EQ(config_hash(a).size(), 16u);
}

TEST(RunConfig, RejectsBadValues) {
    RunConfig c = small_run();
    c.lambda = -1;
    EXPECT_THROW(c.validate(), std::invalid_argument);
    c = small_run();
    c.batch_size = 0;
    EXPECT_THROW(c.validate(), std::invalid_argument);
    EXPECT_THROW(parse_run_config("optim.lr=abc\n"), std::invalid_argument);
}

TEST(Schedule, WarmupThenCosine) {
    OptimConfig o;
    o.lr = 1.0;
    o.warmup_steps = 10;
    o.min_lr_ratio = 0.1;
    EXPECT_DOUBLE_EQ(learning_rate(o, 0, 110), 0.1);
    EXPECT_DOUBLE_EQ(learning_rate(o, 9, 110), 1.0);
    EXPECT_DOUBLE_EQ(learning_rate(o, 10, 110), 1.0);
    EXPECT_NEAR(learning_rate(o, 60, 110), 0.55, 1e-12);
    EXPECT_NEAR(learning_rate(o, 110, 110), 0.1, 1e-12);
    for (std::size_t s = 10; s < 110; ++s) EXPECT_GE(learning_rate(o, s, 110), learning_rate(o, s + 1, 110));
}

TEST(AdamW, FirstStepMovesByLearningRate) {
    OptimConfig o;
    o.weight_decay = 0.0;
    model::ParamMap<float> p{{"a.bias", Tensor<float>({2}, {1.0f, -1.0f})}};
    model::ParamMap<float> g{{"a.bias", Tensor<float>({2}, {0.3f, -7.0f})}};
    AdamW opt(o, p);
    opt.step(p, g, 0.01);
    // bias-corrected m / sqrt(v) = sign(g) on the first step
    EXPECT_NEAR(p.at("a.bias")[0], 0.99f, 1e-6);
    EXPECT_NEAR(p.at("a.bias")[1], -0.99f, 1e-6);
    EXPECT_EQ(opt.steps_taken(), 1u);
}

TEST(AdamW, DecayAppliesToWeightsOnly) {
    OptimConfig o;
    o.weight_decay = 0.5;
    model::ParamMap<float> p{{"x.weight", Tensor<float>({1}, {2.0f})}, {"x.bias", Tensor<float>({1}, {2.0f})}};
    model::ParamMap<float> g{{"x.weight", Tensor<float>({1}, {0.0f})}, {"x.bias", Tensor<float>({1}, {0.0f})}};
    AdamW opt(o, p);
    opt.step(p, g, 0.1);
    EXPECT_NEAR(p.at("x.weight")[0], 2.0f - 0.1f * 0.5f * 2.0f, 1e-6);
    EXPECT_EQ(p.at("x.bias")[0], 2.0f);
}

TEST(ClipGradients, ScalesToMaxNorm) {
    model::ParamMap<float> g{{"a", Tensor<float>({2}, {3.0f, 0.0f})}, {"b", Tensor<float>({1}, {4.0f})}};
    EXPECT_DOUBLE_EQ(clip_gradients(g, 1.0), 5.0);
    EXPECT_NEAR(g.at("a")[0], 0.6f, 1e-7);
    EXPECT_NEAR(g.at("b")[0], 0.8f, 1e-7);
    EXPECT_NEAR(clip_gradients(g, 10.0), 1.0, 1e-6);
    EXPECT_NEAR(g.at("b")[0], 0.8f, 1e-7);
}

TEST(Metrics, RowFormat) {
    MetricsRow r{12, "train", 1.5, 0.25, 1.0, 0.5, 32.0, 9.0};
    EXPECT_EQ(metrics_header(), "step,split,loss,l_r,l_c,top1,visible_tokens\n");
    EXPECT_EQ(format_metrics_row(r), "12,train,1.5,0.25,1,0.5,32\n");
}

TEST(Train, LambdaZeroLossEqualsClassification) {
    const auto motion = small_motion();
    const auto clips = synth::make_split(motion, 16, synth::kTrainStream);
    RunConfig c = small_run();
    c.lambda = 0.0;
    c.log_every = 1;
    c.steps = 6;
    const auto res = train(c, clips, {});
    ASSERT_EQ(res.rows.size(), 6u);
    for (const auto& r : res.rows) {
        EXPECT_EQ(r.loss, r.l_c);
        EXPECT_GT(r.l_r, 0.0);  // still monitored
    }
}

TEST(Train, RowsAreWellFormed) {
    const auto motion = small_motion();
    const auto train_clips = synth::make_split(motion, 16, synth::kTrainStream);
    const auto val_clips = synth::make_split(motion, 8, synth::kValStream);
    RunConfig c = small_run();
    c.eval_every = 10;
    const auto res = train(c, train_clips, val_clips);
    std::size_t last_step = 0;
    std::size_t vals = 0;
    for (const auto& r : res.rows) {
        EXPECT_GE(r.step, last_step);
        last_step = r.step;
        EXPECT_GE(r.top1, 0.0);
        EXPECT_LE(r.top1, 1.0);
        EXPECT_NEAR(r.loss, c.lambda * r.l_r + r.l_c, 1e-6);
        EXPECT_EQ(r.visible_tokens, 32.0);
        vals += r.split == "val";
    }
    EXPECT_EQ(vals, 2u);
    EXPECT_EQ(res.rows.back().split, "val");
    EXPECT_EQ(res.rows.back().step, c.steps);
}

TEST(Train, SameSeedIdenticalMetricsFiles) {
    const auto dir = scratch("determinism");
    const auto motion = small_motion();
    synth::generate_dataset(motion, 16, 8, dir / "data");
    RunConfig c = small_run();
    c.data_dir = (dir / "data").string();
    c.out_dir = (dir / "a").string();
    train_run(c);
    c.out_dir = (dir / "b").string();
    train_run(c);
    EXPECT_EQ(read_text_file(dir / "a" / "metrics.csv"), read_text_file(dir / "b" / "metrics.csv"));
    EXPECT_EQ(read_text_file(dir / "a" / "checkpoint.bin"), read_text_file(dir / "b" / "checkpoint.bin"));

    c.seed = 12;
    c.out_dir = (dir / "c").string();
    train_run(c);
    EXPECT_NE(read_text_file(dir / "a" / "metrics.csv"), read_text_file(dir / "c" / "metrics.csv"));
}

TEST(Train, RunDirectoryReloads) {
    const auto dir = scratch("reload");
    synth::generate_dataset(small_motion(), 16, 8, dir / "data");
    RunConfig c = small_run();
    c.data_dir = (dir / "data").string();
    c.out_dir = (dir / "run").string();
    const auto res = train_run(c);
    const auto loaded = load_run(dir / "run");
    RunConfig expected = c;
    expected.model = res.model;
    EXPECT_EQ(serialize(loaded.cfg), serialize(expected));
    EXPECT_EQ(res.model.pixel_mean, pixel_stats(patch::load_split(c.data_dir, "train")).first);
    EXPECT_NE(res.model.pixel_std, 1.0);
    ASSERT_EQ(loaded.params.size(), res.params.size());
    for (const auto& [name, t] : res.params) EXPECT_EQ(loaded.params.at(name).data(), t.data()) << name;

    // evaluating with the run's own eval mask reproduces the final val row
    const auto val = patch::load_split(c.data_dir, "val");
    const auto ev = evaluate(loaded.params, loaded.cfg.model, val, loaded.cfg.eval_mask);
    EXPECT_EQ(ev.top1, res.rows.back().top1);
    EXPECT_EQ(ev.l_c, res.rows.back().l_c);
}

TEST(Train, MissingDatasetThrows) {
    RunConfig c = small_run();
    c.data_dir = "/nonexistent/mar_data";
    c.out_dir = (scratch("missing") / "run").string();
    EXPECT_ANY_THROW(train_run(c));
}

TEST(Train, DivergenceAbortsWithStep) {
    const auto clips = synth::make_split(small_motion(), 8, synth::kTrainStream);
    RunConfig c = small_run();
    c.optim.lr = 1e30;
    c.optim.warmup_steps = 0;
    c.optim.clip_norm = 0;
    c.steps = 50;
    try {
        train(c, clips, {});
        FAIL() << "expected divergence";
    } catch (const std::runtime_error& e) {
        EXPECT_NE(std::string(e.what()).find("diverged at step"), std::string::npos) << e.what();
    }
}

// Overfit sanity: the tiny model memorises 8 clips.
TEST(Train, TinyModelOverfitsOneBatch) {
    synth::MotionSpec motion;
    motion.seed = 5;
    const auto clips = synth::make_split(motion, 8, synth::kTrainStream);
    RunConfig c;
    c.model = tiny_model();
    c.batch_size = 8;
    c.steps = 500;
    c.log_every = 10;
    c.optim.warmup_steps = 20;
    c.optim.lr = 3e-3;
    c.optim.weight_decay = 0.0;
    c.seed = 1;
    std::size_t reached = 0;
    const auto res = train(c, clips, {}, [&](const MetricsRow& r) {
        if (!reached && r.l_c < 0.05) reached = r.step;
    });
    EXPECT_GT(reached, 0u) << "final train L_c " << res.rows.back().l_c;
    EXPECT_LE(reached, 500u);
}

TEST(Evaluate, RandomWeightsNearChance) {
    const auto motion = small_motion();
    const auto val = synth::make_split(motion, 256, synth::kValStream);
    RunConfig c = small_run();
    for (std::uint64_t s = 0; s < 4; ++s) {
        auto mc = c.model;
        std::tie(mc.pixel_mean, mc.pixel_std) = pixel_stats(val);
        const auto params = model::init_params<float>(mc, 100 + s);
        const auto ev = evaluate(params, mc, val, c.eval_mask);
        EXPECT_EQ(ev.clips, 256u);
        for (auto n : ev.class_counts) EXPECT_EQ(n, 32u);
        EXPECT_NEAR(ev.l_c, std::log(8.0), 0.2);
        // binomial(256, 1/8): sd ~0.021, 4 sd band
        EXPECT_NEAR(ev.top1, 0.125, 0.083);
    }
}

TEST(Evaluate, StartStatesChangeInferenceMask) {
    const auto motion = small_motion();
    const auto clip = synth::make_clip(motion, synth::kValStream, 0);
    const auto lattice = patch::lattice_for(clip, small_run().model.patch);
    EXPECT_NE(mask::generate(mask::inference_spec(0.5, {}, 0), lattice),
              mask::generate(mask::inference_spec(0.5, {}, 1), lattice));
}

TEST(PixelStats, MatchesDirectComputation) {
    patch::VideoClip a;
    a.frames = a.height = a.width = 1;
    a.pixels = {1.0f};
    patch::VideoClip b = a;
    b.pixels = {3.0f};
    const auto [mean, std] = pixel_stats({a, b, b});
    EXPECT_NEAR(mean, 7.0 / 3.0, 1e-15);
    EXPECT_NEAR(std, std::sqrt(8.0 / 9.0), 1e-15);
}

TEST(Ablate, CostColumnMatchesFlopsAndCsvRoundTrips) {
    const auto dir = scratch("ablate");
    const auto motion = small_motion();
    const auto train_clips = synth::make_split(motion, 16, synth::kTrainStream);
    const auto val_clips = synth::make_split(motion, 8, synth::kValStream);
    AblationGrid g;
    g.base = small_run();
    g.base.steps = 4;
    g.strategies = {mask::Strategy::CellRunning, mask::Strategy::RandomStandard};
    g.train_ratios = {0.5};
    g.eval_ratios = {0.25, 0.5};
    g.start_states = {0, 1, 2, 3};
    g.seeds = {0, 1};
    g.eval_with_train_strategy = true;
    const auto rows = ablate(g, train_clips, val_clips, dir / "grid.csv");
    // CellRunning: 2 eval ratios x 4 starts; RandomStandard: 2 eval ratios
    ASSERT_EQ(rows.size(), 2u * (8 + 2));
    const auto lattice = patch::lattice_for(val_clips[0], g.base.model.patch);
    for (const auto& r : rows) {
        EXPECT_EQ(r.status, "ok");
        EXPECT_DOUBLE_EQ(r.gflops, flops::mar_cost(r.eval_ratio, flops::cost_config(g.base.model, lattice)).gflops());
    }
    const auto parsed = parse_ablation_csv(read_text_file(dir / "grid.csv"));
    ASSERT_EQ(parsed.size(), rows.size());
    for (std::size_t i = 0; i < rows.size(); ++i) EXPECT_EQ(format_ablation_row(parsed[i]), format_ablation_row(rows[i]));

    const auto groups = summarize(rows);
    EXPECT_EQ(groups.size(), 10u);
    for (const auto& s : groups) EXPECT_EQ(s.n, 2u);
}

TEST(Ablate, DefaultEvaluatesEveryStrategyWithRunningMasks) {
    const auto motion = small_motion();
    const auto train_clips = synth::make_split(motion, 16, synth::kTrainStream);
    const auto val_clips = synth::make_split(motion, 8, synth::kValStream);
    AblationGrid g;
    g.base = small_run();
    g.base.steps = 2;
    g.strategies = {mask::Strategy::FrameStandard};
    g.start_states = {0, 2};
    const auto rows = ablate(g, train_clips, val_clips);
    ASSERT_EQ(rows.size(), 2u);
    EXPECT_EQ(rows[1].start_state, 2u);
    // same numbers as evaluating the trained weights by hand
    auto cfg = g.base;
    cfg.train_mask.strategy = mask::Strategy::FrameStandard;
    cfg.seed = 0;
    const auto trained = train(cfg, train_clips, {});
    const auto ev = evaluate(trained.params, trained.model, val_clips, mask::inference_spec(0.5, {}, 2));
    EXPECT_EQ(rows[1].top1, ev.top1);
    EXPECT_EQ(rows[1].final_l_c, ev.l_c);
}

TEST(Ablate, FailingCellDoesNotStopGrid) {
    const auto motion = small_motion();
    const auto train_clips = synth::make_split(motion, 16, synth::kTrainStream);
    const auto val_clips = synth::make_split(motion, 8, synth::kValStream);
    AblationGrid g;
    g.base = small_run();
    g.base.steps = 2;
    // 0.3 is not a whole number of masks per 2x2 cell
    g.train_ratios = {0.3, 0.5};
    const auto rows = ablate(g, train_clips, val_clips);
    ASSERT_EQ(rows.size(), 2u);
    EXPECT_NE(rows[0].status.find("error"), std::string::npos);
    EXPECT_EQ(rows[1].status, "ok");
}

TEST(ReportMasks, CellRunningHalfBlackPerFrame) {
    const auto dir = scratch("masks");
    const mask::LatticeShape shape{8, 14, 14};
    auto spec = mask::inference_spec(0.5);
    const auto paths = report_masks(spec, shape, dir);
    EXPECT_EQ(paths.size(), shape.t + 2);
    const auto sched = mask::generate(spec, shape);
    for (std::size_t t = 0; t < shape.t; ++t) {
        EXPECT_EQ(sched.frame_masked_count(t) * 2, shape.frame_sites());
        EXPECT_TRUE(fs::exists(paths[t]));
    }
    const auto coverage = read_text_file(dir / "coverage.csv");
    EXPECT_NE(coverage.find("0,0,4,2,2"), std::string::npos);
}

TEST(ReportMasks, RepeatedAndRandomSpatialDiffer) {
    const auto dir = scratch("masks_modes");
    const mask::LatticeShape shape{4, 8, 8};
    auto repeated = mask::inference_spec(0.5);
    auto random = repeated;
    random.spatial_mode = mask::SpatialMode::Random;
    random.start_state.reset();
    random.seed = 9;
    report_masks(repeated, shape, dir / "rep");
    report_masks(random, shape, dir / "rnd");
    EXPECT_NE(read_text_file(dir / "rep" / "frames.csv").size(), 0u);
    bool differ = false;
    for (std::size_t t = 0; t < shape.t; ++t) {
        const auto name = fs::path(mask::dump_pbm(mask::generate(repeated, shape), dir / "tmp")[t]).filename();
        differ |= read_text_file(dir / "rep" / name) != read_text_file(dir / "rnd" / name);
    }
    EXPECT_TRUE(differ);
}

}  // namespace
}  // namespace mar::harness
