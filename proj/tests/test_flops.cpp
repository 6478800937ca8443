#include <gtest/gtest.h>

#include <cmath>

#include "mar/flops.hpp"

using namespace mar;
using namespace mar::flops;

namespace {

double rel(double a, double b) { return std::abs(a - b) / std::abs(b); }

// Plain closed form, written out term by term.
double block_macs(double n, double d, double mlp) {
    const double qkvo = 4 * n * d * d;
    const double attn = 2 * n * n * d;
    const double ffn = 2 * mlp * n * d * d;
    return qkvo + attn + ffn;
}

}  // namespace

TEST(TransformerCost, PlugInArithmetic) {
    EXPECT_EQ(transformer_cost(1, 1, 1, 4), 14u);
    EXPECT_EQ(transformer_cost(3, 5, 2, 4), static_cast<Count>(2 * block_macs(3, 5, 4)));
    EXPECT_EQ(transformer_cost(0, 768, 12), 0u);
}

TEST(TransformerCost, VitBaseNearOneEightyG) {
    const double g = static_cast<double>(transformer_cost(1568, 768, 12, 4)) / 1e9;
    EXPECT_LT(rel(g, 180.0), 0.01) << g;
}

TEST(TransformerCost, AttentionTermIsQuadratic) {
    for (std::uint64_t n : {4u, 64u, 784u}) EXPECT_GT(transformer_cost(2 * n, 64, 2), 2 * transformer_cost(n, 64, 2));
}

TEST(MarCost, ReproducesRatioSweep) {
    const auto cfg = vit_base_reference();
    const double paper[] = {196.03, 138.04, 86.35, 40.95};
    const double ratios[] = {0.0, 0.25, 0.5, 0.75};
    int within2 = 0;
    for (int i = 0; i < 4; ++i) {
        const double g = mar_cost(ratios[i], cfg).gflops();
        EXPECT_LT(rel(g, paper[i]), 0.05) << ratios[i] << " -> " << g;
        within2 += rel(g, paper[i]) < 0.02;
    }
    EXPECT_GE(within2, 3);
}

TEST(MarCost, LinearClassifierAndBridgeDelta) {
    const double linear = mar_cost(0.5, vit_base_reference(true)).gflops();
    EXPECT_LT(rel(linear, 79.84), 0.02) << linear;
    const double delta = mar_cost(0.5, vit_base_reference()).gflops() - linear;
    EXPECT_GE(delta, 6.0);
    EXPECT_LE(delta, 7.0);
}

TEST(MarCost, HalfMaskSavesAboutHalf) {
    const auto cfg = vit_base_reference();
    const double ratio = mar_cost(0.5, cfg).gflops() / mar_cost(0.0, cfg).gflops();
    EXPECT_GE(ratio, 0.42);
    EXPECT_LE(ratio, 0.47);
}

TEST(MarCost, PartsSumAndMonotoneInRatio) {
    auto cfg = vit_base_reference();
    cfg.with_decoder = true;
    cfg.decoder = {4, 384, 4};
    Count prev = ~Count{0};
    for (double r = 0.0; r < 0.95; r += 0.05) {
        const auto rep = mar_cost(r, cfg);
        EXPECT_EQ(rep.total, rep.embed + rep.encoder + rep.classifier + rep.decoder);
        const auto inference = mar_cost(r, vit_base_reference());
        EXPECT_EQ(inference.decoder, 0u);
        EXPECT_LE(inference.total, prev);
        prev = inference.total;
    }
    EXPECT_EQ(mar_cost(0.5, vit_base_reference()).visible_tokens, 784u);
    EXPECT_THROW(mar_cost(1.0, cfg), std::invalid_argument);
}

TEST(MarCost, FromModelConfig) {
    model::ModelConfig m;
    const auto cfg = cost_config(m, {8, 8, 8});
    EXPECT_EQ(cfg.patch_dim, 32u);
    const auto rep = mar_cost(0.5, cfg);
    const double nv = 256, d = 64, db = 32;
    const double expect = nv * 32 * d + 4 * block_macs(nv, d, 4) + nv * d * db + 2 * block_macs(nv, db, 4) + db * 8;
    EXPECT_EQ(static_cast<double>(rep.total), expect);
}

TEST(CostCsv, HeaderAndRow) {
    const auto csv = format_cost_csv({{"x", 0.5, mar_cost(0.5, vit_base_reference())}});
    EXPECT_EQ(csv.substr(0, csv.find('\n')),
              "label,ratio,tokens,visible_tokens,embed,encoder,classifier,decoder,total,gflops");
    EXPECT_NE(csv.find("x,0.5,1568,784,"), std::string::npos);
}
