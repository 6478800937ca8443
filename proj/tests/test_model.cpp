#include <gtest/gtest.h>

#include <cmath>
#include <random>

#include "gradcheck.hpp"
#include "mar/model.hpp"
#include "model_gradcheck.hpp"

using namespace mar;
using model::ModelConfig;

namespace {

ModelConfig small_config() {
    ModelConfig c;
    c.patch = {1, 2, 2};
    c.encoder = {2, 8, 2, 2};
    c.bridge = {model::ClassifierKind::Bridge, 1, 8, 2, 2, 3};
    c.decoder = {1, 8, 2, 2};
    c.init_std = 0.3;
    return c;
}

patch::VideoClip random_clip(std::uint64_t seed, std::size_t label = 1) {
    std::mt19937_64 rng(seed);
    std::uniform_real_distribution<float> dist(0.0f, 1.0f);
    patch::VideoClip clip{4, 8, 8, 1, label, std::vector<float>(256)};
    for (auto& v : clip.pixels) v = dist(rng);
    return clip;
}

// Perturbs gains and biases too so no parameter sits at a special value.
model::ParamMap<double> jittered_params(const ModelConfig& cfg, std::uint64_t seed) {
    auto params = model::init_params<double>(cfg, seed);
    std::mt19937_64 rng(seed + 1000);
    std::uniform_real_distribution<double> dist(-0.1, 0.1);
    for (auto& [name, t] : params)
        for (auto& v : t.data()) v += dist(rng);
    return params;
}

patch::TokenBatch random_tokens(Tape<double>& tape, std::size_t n, std::size_t d, std::uint64_t seed) {
    std::mt19937_64 rng(seed);
    patch::TokenBatch b;
    b.shape = {4, 4, 4};
    b.features = tape.leaf(mar::testing::random_tensor({n, d}, rng));
    for (std::size_t i = 0; i < n; ++i) b.lattice_index.push_back(i * 2);
    return b;
}

Tensor<double> permute_rows(const Tensor<double>& x, const std::vector<std::size_t>& perm) {
    Tensor<double> out(x.shape());
    for (std::size_t r = 0; r < perm.size(); ++r)
        for (std::size_t c = 0; c < x.cols(); ++c) out.at(r, c) = x.at(perm[r], c);
    return out;
}

}  // namespace

TEST(ModelConfig, SerializeRoundTrip) {
    auto c = small_config();
    c.bridge.kind = model::ClassifierKind::Linear;
    c.normalize_targets = false;
    c.layernorm_eps = 1e-6;
    const auto back = model::parse_model_config(model::serialize(c));
    EXPECT_EQ(model::serialize(back), model::serialize(c));
    EXPECT_EQ(back.bridge.kind, model::ClassifierKind::Linear);
    EXPECT_FALSE(back.normalize_targets);
}

TEST(ModelConfig, ValidationErrors) {
    auto c = small_config();
    c.encoder.heads = 3;
    EXPECT_THROW(c.validate(), std::invalid_argument);
    c = small_config();
    c.bridge.classes = 1;
    EXPECT_THROW(c.validate(), std::invalid_argument);
    EXPECT_THROW(model::parse_model_config("classifier=conv\n"), std::invalid_argument);
}

TEST(ModelParams, InitIsDeterministicAndWellFormed) {
    const auto c = small_config();
    const auto a = model::init_params<float>(c, 5);
    EXPECT_EQ(a, model::init_params<float>(c, 5));
    EXPECT_NE(a, model::init_params<float>(c, 6));
    model::check_params(c, a);
    for (const auto& [name, t] : a) {
        EXPECT_TRUE(t.all_finite()) << name;
        if (name.ends_with(".weight")) {
            for (float v : t.data()) EXPECT_LE(std::abs(v), 2.0 * c.init_std + 1e-6);
        }
        if (name.ends_with(".gain")) {
            for (float v : t.data()) EXPECT_EQ(v, 1.0f);
        }
    }
    EXPECT_EQ(a.at("decoder.mask_token").shape(), (Shape{1, 8}));
    EXPECT_EQ(a.at("bridge.head.weight").shape(), (Shape{8, 3}));
    EXPECT_EQ(a.at("embed.weight").shape(), (Shape{4, 8}));
}

TEST(ModelParams, LinearClassifierHasNoBridgeBlocks) {
    auto c = small_config();
    c.bridge.kind = model::ClassifierKind::Linear;
    const auto shapes = model::param_shapes(c);
    EXPECT_EQ(shapes.at("head.weight"), (Shape{8, 3}));
    for (const auto& [name, _] : shapes) EXPECT_FALSE(name.starts_with("bridge")) << name;
}

TEST(ModelParams, CheckpointRoundTripIsBitExact) {
    const auto c = small_config();
    const auto params = model::init_params<float>(c, 9);
    const auto back = model::from_checkpoint(c, decode_checkpoint(encode_checkpoint(model::to_checkpoint(params))));
    EXPECT_EQ(back, params);
    auto broken = params;
    broken.erase("embed.bias");
    EXPECT_THROW(model::from_checkpoint(c, broken), std::invalid_argument);
    auto other = small_config();
    other.encoder.width = 16;
    EXPECT_THROW(model::from_checkpoint(other, params), std::invalid_argument);
}

TEST(Encode, ZeroDepthIsIdentity) {
    auto c = small_config();
    c.encoder.depth = 0;
    Tape<double> tape;
    const model::Bound<double> b(tape, model::init_params<double>(c, 1));
    const auto tokens = random_tokens(tape, 10, 8, 2);
    const auto out = model::encode(tape, b, c, tokens);
    EXPECT_EQ(tape.value(out.features), tape.value(tokens.features));
    EXPECT_EQ(out.lattice_index, tokens.lattice_index);
}

TEST(Encode, RowCountAndWidthCheck) {
    const auto c = small_config();
    Tape<double> tape;
    const model::Bound<double> b(tape, model::init_params<double>(c, 1));
    for (std::size_t n : {1u, 5u, 17u}) {
        const auto out = model::encode(tape, b, c, random_tokens(tape, n, 8, n));
        EXPECT_EQ(tape.shape(out.features), (Shape{n, 8}));
    }
    EXPECT_THROW(model::encode(tape, b, c, random_tokens(tape, 4, 6, 0)), std::invalid_argument);
}

TEST(Encode, PermutationEquivariant) {
    const auto c = small_config();
    for (std::uint64_t seed = 0; seed < 5; ++seed) {
        Tape<double> tape;
        const model::Bound<double> b(tape, jittered_params(c, seed));
        const auto tokens = random_tokens(tape, 12, 8, seed);
        std::vector<std::size_t> perm(12);
        for (std::size_t i = 0; i < 12; ++i) perm[i] = i;
        std::shuffle(perm.begin(), perm.end(), std::mt19937_64(seed));
        patch::TokenBatch permuted = tokens;
        permuted.features = tape.leaf(permute_rows(tape.value(tokens.features), perm));
        const auto a = tape.value(model::encode(tape, b, c, tokens).features);
        const auto p = tape.value(model::encode(tape, b, c, permuted).features);
        for (std::size_t r = 0; r < 12; ++r)
            for (std::size_t k = 0; k < 8; ++k) EXPECT_NEAR(p.at(r, k), a.at(perm[r], k), 1e-12);
    }
}

TEST(Bridge, LogitsLengthAndOrderInvariance) {
    const auto c = small_config();
    for (std::uint64_t seed = 0; seed < 5; ++seed) {
        Tape<double> tape;
        const model::Bound<double> b(tape, jittered_params(c, seed));
        const auto tokens = random_tokens(tape, 9, 8, seed + 50);
        std::vector<std::size_t> perm{8, 3, 5, 0, 1, 7, 2, 6, 4};
        patch::TokenBatch permuted = tokens;
        permuted.features = tape.leaf(permute_rows(tape.value(tokens.features), perm));
        const auto a = tape.value(model::bridge_classify(tape, b, c, tokens));
        const auto p = tape.value(model::bridge_classify(tape, b, c, permuted));
        ASSERT_EQ(a.size(), 3u);
        for (std::size_t k = 0; k < 3; ++k) EXPECT_NEAR(a[k], p[k], 1e-12);
    }
}

TEST(Bridge, SingleTokenPoolingIsIdentity) {
    auto c = small_config();
    c.bridge.kind = model::ClassifierKind::Linear;
    const auto params = jittered_params(c, 3);
    Tape<double> tape;
    const model::Bound<double> b(tape, params);
    const auto token = random_tokens(tape, 1, 8, 4);
    const auto logits = tape.value(model::bridge_classify(tape, b, c, token));
    const auto& x = tape.value(token.features);
    const auto& w = params.at("head.weight");
    for (std::size_t k = 0; k < 3; ++k) {
        double ref = params.at("head.bias")[k];
        for (std::size_t i = 0; i < 8; ++i) ref += x[i] * w.at(i, k);
        EXPECT_NEAR(logits[k], ref, 1e-14);
    }
}

TEST(Forward, AttentionShapesAreJointAndDecoderSeesEverySite) {
    const auto c = small_config();
    const auto clip = random_clip(1);
    Tape<double> tape;
    const model::Bound<double> b(tape, model::init_params<double>(c, 1));
    model::AttentionTrace trace;
    const auto out = model::forward_training(tape, b, c, clip, mask::MaskSpec{}, 0.1, &trace);
    EXPECT_EQ(out.visible_tokens, 32u);
    ASSERT_EQ(trace.encoder.size(), 4u);  // depth 2 x 2 heads
    for (const auto& s : trace.encoder) EXPECT_EQ(s, (Shape{32, 32}));
    ASSERT_EQ(trace.bridge.size(), 2u);
    for (const auto& s : trace.bridge) EXPECT_EQ(s, (Shape{32, 32}));
    ASSERT_EQ(trace.decoder.size(), 2u);
    for (const auto& s : trace.decoder) EXPECT_EQ(s, (Shape{64, 64}));
}

TEST(Reconstruct, OutputRowsFollowMaskedSites) {
    const auto c = small_config();
    const auto clip = random_clip(2);
    for (double ratio : {0.0, 0.25, 0.5, 0.75}) {
        mask::MaskSpec spec;
        spec.ratio = ratio;
        const auto sched = mask::generate(spec, {4, 4, 4});
        Tape<double> tape;
        const model::Bound<double> b(tape, model::init_params<double>(c, 1));
        const auto tokens = patch::embed_visible(tape, patch::patchify<double>(clip, c.patch), sched,
                                                 b["embed.weight"], b["embed.bias"]);
        const auto enc = model::encode(tape, b, c, tokens);
        const Var y = model::reconstruct(tape, b, c, enc, sched);
        EXPECT_EQ(tape.shape(y), (Shape{sched.masked_count(), 4})) << ratio;
    }
}

TEST(Reconstruct, InconsistentScheduleThrows) {
    const auto c = small_config();
    const auto clip = random_clip(2);
    const auto sched = mask::generate(mask::MaskSpec{}, {4, 4, 4});
    mask::MaskSpec other;
    other.strategy = mask::Strategy::RandomStandard;
    const auto wrong = mask::generate(other, {4, 4, 4});
    Tape<double> tape;
    const model::Bound<double> b(tape, model::init_params<double>(c, 1));
    const auto tokens = patch::embed_visible(tape, patch::patchify<double>(clip, c.patch), sched, b["embed.weight"],
                                             b["embed.bias"]);
    EXPECT_THROW(model::reconstruct(tape, b, c, tokens, wrong), std::invalid_argument);
}

TEST(Reconstruct, ZeroDepthDecoderUsesOnlyMaskTokenAndPosition) {
    auto c = small_config();
    c.decoder.depth = 0;
    auto params = jittered_params(c, 4);
    auto& proj = params.at("decoder.proj.weight");
    std::fill(proj.data().begin(), proj.data().end(), 0.0);
    for (std::size_t i = 0; i < 8; ++i) proj.at(i, i) = 1.0;
    std::fill(params.at("decoder.proj.bias").data().begin(), params.at("decoder.proj.bias").data().end(), 0.0);

    const auto sched = mask::generate(mask::MaskSpec{}, {4, 4, 4});
    const auto masked = sched.masked_indices();
    const auto pe = patch::positional_encoding<double>({4, 4, 4}, 8, masked);
    const auto& tok = params.at("decoder.mask_token");
    const auto& gain = params.at("decoder.norm.gain");
    const auto& bias = params.at("decoder.norm.bias");
    const auto& hw = params.at("decoder.head.weight");
    const auto& hb = params.at("decoder.head.bias");

    auto predictions = [&](std::uint64_t seed) {
        Tape<double> tape;
        const model::Bound<double> b(tape, params);
        patch::TokenBatch enc;
        enc.shape = {4, 4, 4};
        enc.lattice_index = sched.visible_indices();
        std::mt19937_64 rng(seed);
        enc.features = tape.leaf(mar::testing::random_tensor({enc.lattice_index.size(), 8}, rng));
        return tape.value(model::reconstruct(tape, b, c, enc, sched));
    };
    const auto y = predictions(1);
    EXPECT_EQ(y, predictions(2));

    for (std::size_t r = 0; r < masked.size(); ++r) {
        double x[8], mean = 0, var = 0;
        for (std::size_t k = 0; k < 8; ++k) mean += (x[k] = tok[k] + pe.at(r, k));
        mean /= 8;
        for (double v : x) var += (v - mean) * (v - mean);
        const double rstd = 1.0 / std::sqrt(var / 8 + c.layernorm_eps);
        for (std::size_t j = 0; j < 4; ++j) {
            double ref = hb[j];
            for (std::size_t k = 0; k < 8; ++k) ref += ((x[k] - mean) * rstd * gain[k] + bias[k]) * hw.at(k, j);
            EXPECT_NEAR(y.at(r, j), ref, 1e-12);
        }
    }
}

TEST(Forward, LambdaZeroIsPureClassification) {
    const auto c = small_config();
    Tape<double> tape;
    const model::Bound<double> b(tape, jittered_params(c, 2));
    const auto out = model::forward_training(tape, b, c, random_clip(3), mask::MaskSpec{}, 0.0);
    EXPECT_EQ(out.report.total, out.report.classification);
    EXPECT_EQ(tape.value(out.loss)[0], out.report.classification);
    EXPECT_GT(out.report.reconstruction, 0.0);
    tape.backward(out.loss);
    for (const auto& [name, g] : b.gradients()) {
        if (!name.starts_with("decoder")) continue;
        for (double v : g.data()) EXPECT_EQ(v, 0.0) << name;
    }
}

TEST(Forward, NoMaskingMeansNoReconstructionTerm) {
    const auto c = small_config();
    mask::MaskSpec spec;
    spec.ratio = 0.0;
    Tape<double> tape;
    const model::Bound<double> b(tape, jittered_params(c, 2));
    const auto out = model::forward_training(tape, b, c, random_clip(3), spec, 0.1);
    EXPECT_EQ(out.report.reconstruction, 0.0);
    EXPECT_EQ(out.report.omega, 0u);
    EXPECT_EQ(out.report.total, out.report.classification);
    EXPECT_EQ(out.visible_tokens, 64u);
}

TEST(Forward, RejectsBadInputs) {
    const auto c = small_config();
    Tape<double> tape;
    const model::Bound<double> b(tape, model::init_params<double>(c, 2));
    EXPECT_THROW(model::forward_training(tape, b, c, random_clip(3, 7), mask::MaskSpec{}, 0.1), std::out_of_range);
    EXPECT_THROW(model::forward_training(tape, b, c, random_clip(3), mask::MaskSpec{}, -0.5), std::invalid_argument);
}

TEST(Inference, MatchesTrainingLogits) {
    const auto c = small_config();
    const auto params = jittered_params(c, 6);
    const auto clip = random_clip(8);
    for (std::size_t start = 0; start < 4; ++start) {
        const auto spec = mask::inference_spec(0.5, {}, start);
        Tape<double> tape;
        const model::Bound<double> b(tape, params);
        const auto out = model::forward_training(tape, b, c, clip, spec, 0.1);
        EXPECT_EQ(model::forward_inference(params, c, clip, spec), tape.value(out.logits));
    }
    mask::MaskSpec random_spatial = mask::inference_spec(0.5);
    random_spatial.spatial_mode = mask::SpatialMode::Random;
    EXPECT_THROW(model::forward_inference(params, c, clip, random_spatial), std::invalid_argument);
}

TEST(Forward, PixelStandardizationFeedsEmbeddingOnly) {
    auto raw = small_config();
    auto scaled = raw;
    scaled.pixel_mean = 0.25;
    scaled.pixel_std = 0.5;
    EXPECT_EQ(model::parse_model_config(model::serialize(scaled)).pixel_std, 0.5);
    const auto params = jittered_params(raw, 4);
    const auto clip = random_clip(5);
    auto pre = clip;
    for (auto& v : pre.pixels) v = (v - 0.25f) / 0.5f;
    const auto spec = mask::inference_spec(0.5);

    Tape<double> t1;
    const model::Bound<double> b1(t1, params);
    const auto a = model::forward_training(t1, b1, scaled, clip, spec, 0.1);
    Tape<double> t2;
    const model::Bound<double> b2(t2, params);
    const auto b = model::forward_training(t2, b2, raw, pre, spec, 0.1);
    const auto& la = t1.value(a.logits);
    const auto& lb = t2.value(b.logits);
    for (std::size_t i = 0; i < la.size(); ++i) EXPECT_NEAR(la[i], lb[i], 1e-6);
    // per-patch normalized targets are unchanged by an affine pixel map
    EXPECT_NEAR(a.report.reconstruction, b.report.reconstruction, 1e-5);

    scaled.pixel_std = 0.0;
    EXPECT_THROW(scaled.validate(), std::invalid_argument);
}

TEST(Inference, ArgmaxPicksFirstMaximum) {
    EXPECT_EQ(model::argmax(std::vector<float>{0.1f, 0.7f, 0.7f}), 1u);
    EXPECT_THROW(model::argmax(std::vector<double>{}), std::invalid_argument);
}

TEST(ModelGradient, SmallConfigMatchesCentralDifferences) {
    const auto c = small_config();
    for (auto strategy : {mask::Strategy::CellRunning, mask::Strategy::RandomStandard})
        for (double ratio : {0.0, 0.5, 0.75}) {
            mask::MaskSpec spec;
            spec.strategy = strategy;
            spec.ratio = ratio;
            spec.seed = 3;
            const auto res = mar::testing::model_grad_check(c, jittered_params(c, 11), random_clip(12), spec, 0.5);
            EXPECT_LT(res.max_rel_error, 1e-4) << mask::to_string(strategy) << " " << ratio << " " << res.worst;
        }
}
