#include "mar/flops.hpp"

#include <cmath>
#include <stdexcept>

#include "mar/kv.hpp"

namespace mar::flops {

Count transformer_cost(std::uint64_t n, std::uint64_t d, std::uint64_t depth, std::uint64_t mlp_ratio) {
    return depth * (4 * n * d * d + 2 * n * n * d + 2 * mlp_ratio * n * d * d);
}

CostReport mar_cost(double ratio, const CostConfig& cfg) {
    if (!(ratio >= 0.0 && ratio < 1.0)) throw std::invalid_argument("mask ratio must be in [0, 1)");
    CostReport r;
    r.tokens = cfg.lattice.sites();
    r.visible_tokens = static_cast<std::size_t>(std::llround((1.0 - ratio) * static_cast<double>(r.tokens)));
    const Count nv = r.visible_tokens;
    const Count d = cfg.encoder.width;
    r.embed = nv * cfg.patch_dim * d;
    r.encoder = transformer_cost(nv, d, cfg.encoder.depth, cfg.encoder.mlp_ratio);
    if (cfg.linear_classifier) {
        r.classifier = d * cfg.classes;
    } else {
        const Count db = cfg.bridge.width;
        r.classifier = nv * d * db + transformer_cost(nv, db, cfg.bridge.depth, cfg.bridge.mlp_ratio) + db * cfg.classes;
    }
    if (cfg.with_decoder) {
        const Count dr = cfg.decoder.width;
        const Count masked = r.tokens - nv;
        r.decoder = nv * d * dr + transformer_cost(r.tokens, dr, cfg.decoder.depth, cfg.decoder.mlp_ratio) +
                    masked * dr * cfg.patch_dim;
    }
    r.total = r.embed + r.encoder + r.classifier + r.decoder;
    return r;
}

CostConfig cost_config(const model::ModelConfig& m, const mask::LatticeShape& lattice, bool with_decoder) {
    CostConfig c;
    c.lattice = lattice;
    c.patch_dim = m.pixels_per_patch();
    c.encoder = {m.encoder.depth, m.encoder.width, m.encoder.mlp_ratio};
    c.linear_classifier = m.bridge.kind == model::ClassifierKind::Linear;
    c.bridge = {m.bridge.depth, m.bridge.width, m.bridge.mlp_ratio};
    c.classes = m.bridge.classes;
    c.with_decoder = with_decoder;
    c.decoder = {m.decoder.depth, m.decoder.width, m.decoder.mlp_ratio};
    return c;
}

CostConfig vit_base_reference(bool linear_classifier) {
    CostConfig c;
    c.lattice = {8, 14, 14};
    c.patch_dim = 2 * 16 * 16 * 3;
    c.encoder = {12, 768, 4};
    c.linear_classifier = linear_classifier;
    c.bridge = {2, 512, 4};
    c.classes = 174;
    return c;
}

std::string format_cost_csv(const std::vector<CostRow>& rows) {
    std::string out = "label,ratio,tokens,visible_tokens,embed,encoder,classifier,decoder,total,gflops\n";
    for (const auto& row : rows) {
        const auto& r = row.report;
        out += row.label + "," + format_double(row.ratio) + "," + std::to_string(r.tokens) + "," +
               std::to_string(r.visible_tokens) + "," + std::to_string(r.embed) + "," + std::to_string(r.encoder) +
               "," + std::to_string(r.classifier) + "," + std::to_string(r.decoder) + "," + std::to_string(r.total) +
               "," + format_double(std::round(r.gflops() * 1e4) / 1e4) + "\n";
    }
    return out;
}

}  // namespace mar::flops
