#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "mar/maskgen.hpp"
#include "mar/model.hpp"

namespace mar::flops {

// Costs are multiply-accumulate counts; one MAC is reported as one FLOP.
// Norms, softmax, biases and activations are not counted.
using Count = std::uint64_t;

/// depth * (4 N D^2 + 2 N^2 D + 2 mlp_ratio N D^2).
Count transformer_cost(std::uint64_t tokens, std::uint64_t width, std::uint64_t depth, std::uint64_t mlp_ratio = 4);

struct StackShape {
    std::size_t depth = 0;
    std::size_t width = 0;
    std::size_t mlp_ratio = 4;
};

struct CostConfig {
    mask::LatticeShape lattice;
    std::size_t patch_dim = 0;  // pixels per token, P
    StackShape encoder;
    bool linear_classifier = false;
    StackShape bridge;
    std::size_t classes = 0;
    bool with_decoder = false;  // training cost; inference never runs the decoder
    StackShape decoder;
};

struct CostReport {
    Count embed = 0;
    Count encoder = 0;
    Count classifier = 0;
    Count decoder = 0;
    Count total = 0;
    std::size_t tokens = 0;
    std::size_t visible_tokens = 0;

    double gflops() const { return static_cast<double>(total) / 1e9; }
};

/// N_v = round((1 - ratio) * sites). Embedding runs on visible tokens only.
CostReport mar_cost(double ratio, const CostConfig& cfg);

CostConfig cost_config(const model::ModelConfig& cfg, const mask::LatticeShape& lattice, bool with_decoder = false);

/// ViT-B encoder (768 wide, 12 deep) on 8x14x14 tokens of 2x16x16x3 pixels,
/// bridge 512 wide and 2 deep, 174 classes.
CostConfig vit_base_reference(bool linear_classifier = false);

struct CostRow {
    std::string label;
    double ratio = 0.0;
    CostReport report;
};

std::string format_cost_csv(const std::vector<CostRow>& rows);

}  // namespace mar::flops
