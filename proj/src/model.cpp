#include "mar/model.hpp"

#include <algorithm>
#include <cmath>
#include <random>
#include <stdexcept>

#include "mar/kv.hpp"
#include "mar/ops.hpp"
#include "mar/rng.hpp"

namespace mar::model {
namespace {

struct StackSpec {
    std::string prefix;
    std::size_t depth;
    std::size_t width;
    std::size_t heads;
    std::size_t mlp_ratio;
};

StackSpec encoder_stack(const ModelConfig& c) {
    return {"encoder", c.encoder.depth, c.encoder.width, c.encoder.heads, c.encoder.mlp_ratio};
}
StackSpec bridge_stack(const ModelConfig& c) {
    return {"bridge", c.bridge.depth, c.bridge.width, c.bridge.heads, c.bridge.mlp_ratio};
}
StackSpec decoder_stack(const ModelConfig& c) {
    return {"decoder", c.decoder.depth, c.decoder.width, c.decoder.heads, c.decoder.mlp_ratio};
}

void add_linear(std::map<std::string, Shape>& out, const std::string& name, std::size_t in, std::size_t outd) {
    out[name + ".weight"] = {in, outd};
    out[name + ".bias"] = {outd};
}

void add_norm(std::map<std::string, Shape>& out, const std::string& name, std::size_t d) {
    out[name + ".gain"] = {d};
    out[name + ".bias"] = {d};
}

void add_stack(std::map<std::string, Shape>& out, const StackSpec& s) {
    for (std::size_t i = 0; i < s.depth; ++i) {
        const std::string b = s.prefix + "." + std::to_string(i);
        add_norm(out, b + ".norm1", s.width);
        for (const char* p : {".attn.q", ".attn.v", ".attn.out"}) add_linear(out, b + p, s.width, s.width);
        // A key bias shifts every score in a row equally, so softmax ignores it.
        out[b + ".attn.k.weight"] = {s.width, s.width};
        add_norm(out, b + ".norm2", s.width);
        add_linear(out, b + ".mlp.fc1", s.width, s.width * s.mlp_ratio);
        add_linear(out, b + ".mlp.fc2", s.width * s.mlp_ratio, s.width);
    }
}

bool ends_with(const std::string& s, std::string_view suffix) {
    return s.size() >= suffix.size() && s.compare(s.size() - suffix.size(), suffix.size(), suffix) == 0;
}

std::uint64_t fnv1a(std::string_view s) {
    std::uint64_t h = 0xcbf29ce484222325ull;
    for (unsigned char c : s) {
        h ^= c;
        h *= 0x100000001b3ull;
    }
    return h;
}

template <typename T>
Var linear(Tape<T>& tape, const Bound<T>& p, const std::string& name, Var x) {
    return ops::add_row(tape, ops::matmul(tape, x, p[name + ".weight"]), p[name + ".bias"]);
}

template <typename T>
Var norm(Tape<T>& tape, const Bound<T>& p, const ModelConfig& cfg, const std::string& name, Var x) {
    return ops::layernorm(tape, x, p[name + ".gain"], p[name + ".bias"], static_cast<T>(cfg.layernorm_eps));
}

template <typename T>
Var attention(Tape<T>& tape, const Bound<T>& p, const std::string& name, Var x, std::size_t heads,
              std::vector<Shape>* trace) {
    const Var q = linear(tape, p, name + ".q", x);
    const Var k = ops::matmul(tape, x, p[name + ".k.weight"]);
    const Var v = linear(tape, p, name + ".v", x);
    const std::size_t width = tape.shape(q).at(1);
    const std::size_t dh = width / heads;
    const T inv = static_cast<T>(1.0 / std::sqrt(static_cast<double>(dh)));
    std::vector<Var> outs;
    outs.reserve(heads);
    for (std::size_t h = 0; h < heads; ++h) {
        const Var qh = ops::slice_cols(tape, q, h * dh, dh);
        const Var kh = ops::slice_cols(tape, k, h * dh, dh);
        const Var vh = ops::slice_cols(tape, v, h * dh, dh);
        const Var scores = ops::scale(tape, ops::matmul(tape, qh, ops::transpose(tape, kh)), inv);
        if (trace) trace->push_back(tape.shape(scores));
        outs.push_back(ops::matmul(tape, ops::softmax_rows(tape, scores), vh));
    }
    const Var merged = heads == 1 ? outs[0] : ops::concat_cols<T>(tape, outs);
    return linear(tape, p, name + ".out", merged);
}

template <typename T>
Var run_stack(Tape<T>& tape, const Bound<T>& p, const ModelConfig& cfg, const StackSpec& s, Var x,
              std::vector<Shape>* trace) {
    for (std::size_t i = 0; i < s.depth; ++i) {
        const std::string b = s.prefix + "." + std::to_string(i);
        x = ops::add(tape, x, attention(tape, p, b + ".attn", norm(tape, p, cfg, b + ".norm1", x), s.heads, trace));
        Var hdn = linear(tape, p, b + ".mlp.fc1", norm(tape, p, cfg, b + ".norm2", x));
        hdn = linear(tape, p, b + ".mlp.fc2", ops::gelu(tape, hdn));
        x = ops::add(tape, x, hdn);
    }
    return x;
}

void check_stack(const StackSpec& s) {
    if (s.width == 0 || s.heads == 0 || s.mlp_ratio == 0) {
        throw std::invalid_argument(s.prefix + ": width, heads and mlp_ratio must be positive");
    }
    if (s.width % s.heads != 0) {
        throw std::invalid_argument(s.prefix + ": width " + std::to_string(s.width) + " not divisible by " +
                                    std::to_string(s.heads) + " heads");
    }
}

}  // namespace

void ModelConfig::validate() const {
    if (patch.t == 0 || patch.h == 0 || patch.w == 0) throw std::invalid_argument("patch extents must be positive");
    if (channels == 0) throw std::invalid_argument("channels must be positive");
    check_stack(encoder_stack(*this));
    if (bridge.kind == ClassifierKind::Bridge) check_stack(bridge_stack(*this));
    check_stack(decoder_stack(*this));
    if (bridge.classes < 2) throw std::invalid_argument("need at least two classes");
    if (!(init_std > 0.0)) throw std::invalid_argument("init_std must be positive");
    if (!(layernorm_eps > 0.0)) throw std::invalid_argument("layernorm_eps must be positive");
    if (!std::isfinite(pixel_mean)) throw std::invalid_argument("pixel_mean must be finite");
    if (!(pixel_std > 0.0) || !std::isfinite(pixel_std)) throw std::invalid_argument("pixel_std must be positive");
}

std::string serialize(const ModelConfig& c) {
    auto n = [](std::size_t v) { return std::to_string(v); };
    return format_kv({
        {"patch.t", n(c.patch.t)},
        {"patch.h", n(c.patch.h)},
        {"patch.w", n(c.patch.w)},
        {"channels", n(c.channels)},
        {"encoder.depth", n(c.encoder.depth)},
        {"encoder.width", n(c.encoder.width)},
        {"encoder.heads", n(c.encoder.heads)},
        {"encoder.mlp_ratio", n(c.encoder.mlp_ratio)},
        {"classifier", c.bridge.kind == ClassifierKind::Bridge ? "bridge" : "linear"},
        {"bridge.depth", n(c.bridge.depth)},
        {"bridge.width", n(c.bridge.width)},
        {"bridge.heads", n(c.bridge.heads)},
        {"bridge.mlp_ratio", n(c.bridge.mlp_ratio)},
        {"classes", n(c.bridge.classes)},
        {"decoder.depth", n(c.decoder.depth)},
        {"decoder.width", n(c.decoder.width)},
        {"decoder.heads", n(c.decoder.heads)},
        {"decoder.mlp_ratio", n(c.decoder.mlp_ratio)},
        {"normalize_targets", c.normalize_targets ? "1" : "0"},
        {"init_std", format_double(c.init_std)},
        {"layernorm_eps", format_double(c.layernorm_eps)},
        {"pixel_mean", format_double(c.pixel_mean)},
        {"pixel_std", format_double(c.pixel_std)},
    });
}

ModelConfig parse_model_config(std::string_view text) {
    const KeyValues kv = parse_kv(text);
    ModelConfig c;
    c.patch.t = kv_get(kv, "patch.t", c.patch.t);
    c.patch.h = kv_get(kv, "patch.h", c.patch.h);
    c.patch.w = kv_get(kv, "patch.w", c.patch.w);
    c.channels = kv_get(kv, "channels", c.channels);
    c.encoder.depth = kv_get(kv, "encoder.depth", c.encoder.depth);
    c.encoder.width = kv_get(kv, "encoder.width", c.encoder.width);
    c.encoder.heads = kv_get(kv, "encoder.heads", c.encoder.heads);
    c.encoder.mlp_ratio = kv_get(kv, "encoder.mlp_ratio", c.encoder.mlp_ratio);
    const std::string kind = kv_get(kv, "classifier", std::string("bridge"));
    if (kind == "bridge") {
        c.bridge.kind = ClassifierKind::Bridge;
    } else if (kind == "linear") {
        c.bridge.kind = ClassifierKind::Linear;
    } else {
        throw std::invalid_argument("classifier: expected bridge or linear, got '" + kind + "'");
    }
    c.bridge.depth = kv_get(kv, "bridge.depth", c.bridge.depth);
    c.bridge.width = kv_get(kv, "bridge.width", c.bridge.width);
    c.bridge.heads = kv_get(kv, "bridge.heads", c.bridge.heads);
    c.bridge.mlp_ratio = kv_get(kv, "bridge.mlp_ratio", c.bridge.mlp_ratio);
    c.bridge.classes = kv_get(kv, "classes", c.bridge.classes);
    c.decoder.depth = kv_get(kv, "decoder.depth", c.decoder.depth);
    c.decoder.width = kv_get(kv, "decoder.width", c.decoder.width);
    c.decoder.heads = kv_get(kv, "decoder.heads", c.decoder.heads);
    c.decoder.mlp_ratio = kv_get(kv, "decoder.mlp_ratio", c.decoder.mlp_ratio);
    c.normalize_targets = kv_get(kv, "normalize_targets", std::size_t{1}) != 0;
    c.init_std = kv_get(kv, "init_std", c.init_std);
    c.layernorm_eps = kv_get(kv, "layernorm_eps", c.layernorm_eps);
    c.pixel_mean = kv_get(kv, "pixel_mean", c.pixel_mean);
    c.pixel_std = kv_get(kv, "pixel_std", c.pixel_std);
    c.validate();
    return c;
}

std::map<std::string, Shape> param_shapes(const ModelConfig& cfg) {
    cfg.validate();
    std::map<std::string, Shape> out;
    const std::size_t d = cfg.encoder.width;
    add_linear(out, "embed", cfg.pixels_per_patch(), d);
    add_stack(out, encoder_stack(cfg));
    if (cfg.bridge.kind == ClassifierKind::Bridge) {
        add_linear(out, "bridge.proj", d, cfg.bridge.width);
        add_stack(out, bridge_stack(cfg));
        add_norm(out, "bridge.norm", cfg.bridge.width);
        add_linear(out, "bridge.head", cfg.bridge.width, cfg.bridge.classes);
    } else {
        add_linear(out, "head", d, cfg.bridge.classes);
    }
    const std::size_t dr = cfg.decoder.width;
    add_linear(out, "decoder.proj", d, dr);
    out["decoder.mask_token"] = {1, dr};
    add_stack(out, decoder_stack(cfg));
    add_norm(out, "decoder.norm", dr);
    add_linear(out, "decoder.head", dr, cfg.pixels_per_patch());
    return out;
}

template <typename T>
ParamMap<T> init_params(const ModelConfig& cfg, std::uint64_t seed) {
    ParamMap<T> params;
    for (const auto& [name, shape] : param_shapes(cfg)) {
        Tensor<T> t(shape);
        if (ends_with(name, ".gain")) {
            std::fill(t.data().begin(), t.data().end(), T{1});
        } else if (ends_with(name, ".weight") || ends_with(name, "mask_token")) {
            auto rng = make_rng(seed, {fnv1a(name)});
            std::normal_distribution<double> normal(0.0, cfg.init_std);
            for (auto& v : t.data()) {
                double x = normal(rng);
                while (std::abs(x) > 2.0 * cfg.init_std) x = normal(rng);
                v = static_cast<T>(x);
            }
        }
        params.emplace(name, std::move(t));
    }
    return params;
}

template <typename T>
void check_params(const ModelConfig& cfg, const ParamMap<T>& params) {
    const auto shapes = param_shapes(cfg);
    for (const auto& [name, shape] : shapes) {
        const auto it = params.find(name);
        if (it == params.end()) throw std::invalid_argument("missing parameter '" + name + "'");
        if (it->second.shape() != shape) {
            throw std::invalid_argument("parameter '" + name + "' has shape " + shape_str(it->second.shape()) +
                                        ", expected " + shape_str(shape));
        }
    }
    for (const auto& [name, _] : params) {
        if (!shapes.count(name)) throw std::invalid_argument("unexpected parameter '" + name + "'");
    }
}

TensorMap to_checkpoint(const ParamMap<float>& params) { return params; }

ParamMap<float> from_checkpoint(const ModelConfig& cfg, const TensorMap& tensors) {
    check_params(cfg, tensors);
    return tensors;
}

template <typename T>
Bound<T>::Bound(Tape<T>& tape, const ParamMap<T>& params) : tape_(&tape) {
    for (const auto& [name, value] : params) vars_.emplace(name, tape.leaf(value));
}

template <typename T>
Var Bound<T>::operator[](const std::string& name) const {
    const auto it = vars_.find(name);
    if (it == vars_.end()) throw std::out_of_range("no parameter named '" + name + "'");
    return it->second;
}

template <typename T>
ParamMap<T> Bound<T>::gradients() const {
    ParamMap<T> out;
    for (const auto& [name, v] : vars_) out.emplace(name, tape_->grad(v));
    return out;
}

template <typename T>
patch::TokenBatch encode(Tape<T>& tape, const Bound<T>& params, const ModelConfig& cfg, const patch::TokenBatch& tokens,
                         AttentionTrace* trace) {
    const Shape& s = tape.shape(tokens.features);
    if (s.size() != 2 || s[1] != cfg.encoder.width) {
        throw std::invalid_argument("encode: token width " + shape_str(s) + " does not match encoder width " +
                                    std::to_string(cfg.encoder.width));
    }
    patch::TokenBatch out = tokens;
    out.features = run_stack(tape, params, cfg, encoder_stack(cfg), tokens.features, trace ? &trace->encoder : nullptr);
    return out;
}

template <typename T>
Var bridge_classify(Tape<T>& tape, const Bound<T>& params, const ModelConfig& cfg, const patch::TokenBatch& encoded,
                    AttentionTrace* trace) {
    if (tape.shape(encoded.features).at(0) == 0) throw std::invalid_argument("bridge_classify: no visible tokens");
    if (cfg.bridge.kind == ClassifierKind::Linear) {
        return linear(tape, params, "head", ops::mean_rows(tape, encoded.features));
    }
    Var x = linear(tape, params, "bridge.proj", encoded.features);
    x = run_stack(tape, params, cfg, bridge_stack(cfg), x, trace ? &trace->bridge : nullptr);
    x = norm(tape, params, cfg, "bridge.norm", x);
    return linear(tape, params, "bridge.head", ops::mean_rows(tape, x));
}

template <typename T>
Var reconstruct(Tape<T>& tape, const Bound<T>& params, const ModelConfig& cfg, const patch::TokenBatch& encoded,
                const mask::MaskSchedule& schedule, AttentionTrace* trace) {
    if (!(schedule.shape() == encoded.shape) || schedule.visible_indices() != encoded.lattice_index) {
        throw std::invalid_argument("reconstruct: mask schedule does not match the encoded tokens");
    }
    const std::vector<std::size_t> masked = schedule.masked_indices();
    const std::size_t sites = schedule.shape().sites();
    const std::size_t dr = cfg.decoder.width;

    // Visible rows first, then one mask token per masked site; `order` puts
    // every row back at its lattice position.
    std::vector<Var> parts;
    if (!encoded.lattice_index.empty()) parts.push_back(linear(tape, params, "decoder.proj", encoded.features));
    if (!masked.empty()) {
        const std::vector<std::size_t> zeros(masked.size(), 0);
        parts.push_back(ops::gather_rows(tape, params["decoder.mask_token"], zeros));
    }
    std::vector<std::size_t> order(sites);
    for (std::size_t i = 0; i < encoded.lattice_index.size(); ++i) order[encoded.lattice_index[i]] = i;
    for (std::size_t i = 0; i < masked.size(); ++i) order[masked[i]] = encoded.lattice_index.size() + i;
    Var x = parts.size() == 1 ? parts[0] : ops::concat_rows<T>(tape, parts);
    x = ops::gather_rows(tape, x, order);

    std::vector<std::size_t> all(sites);
    for (std::size_t i = 0; i < sites; ++i) all[i] = i;
    x = ops::add(tape, x, tape.constant(patch::positional_encoding<T>(schedule.shape(), dr, all)));
    x = run_stack(tape, params, cfg, decoder_stack(cfg), x, trace ? &trace->decoder : nullptr);
    x = norm(tape, params, cfg, "decoder.norm", x);
    return linear(tape, params, "decoder.head", ops::gather_rows(tape, x, masked));
}

template <typename T>
static Tensor<T> standardize(const Tensor<T>& patches, const ModelConfig& cfg) {
    if (cfg.pixel_mean == 0.0 && cfg.pixel_std == 1.0) return patches;
    Tensor<T> out = patches;
    const T mean = static_cast<T>(cfg.pixel_mean);
    const T inv = static_cast<T>(1.0 / cfg.pixel_std);
    for (auto& v : out.data()) v = (v - mean) * inv;
    return out;
}

template <typename T>
TrainingOutput<T> forward_training(Tape<T>& tape, const Bound<T>& params, const ModelConfig& cfg,
                                   const patch::VideoClip& clip, const mask::MaskSpec& spec, double lambda,
                                   AttentionTrace* trace) {
    if (clip.channels != cfg.channels) throw std::invalid_argument("clip channel count does not match the model");
    if (clip.label >= cfg.bridge.classes) throw std::out_of_range("clip label outside the class range");
    const mask::LatticeShape lattice = patch::lattice_for(clip, cfg.patch);
    TrainingOutput<T> out;
    out.schedule = mask::generate(spec, lattice);
    const Tensor<T> patches = patch::patchify<T>(clip, cfg.patch);
    const patch::TokenBatch tokens = patch::embed_visible(tape, standardize(patches, cfg), out.schedule,
                                                          params["embed.weight"], params["embed.bias"]);
    out.visible_tokens = tokens.lattice_index.size();
    const patch::TokenBatch encoded = encode(tape, params, cfg, tokens, trace);
    out.logits = bridge_classify(tape, params, cfg, encoded, trace);
    const Var l_c = loss::classification_loss(tape, out.logits, clip.label);

    const patch::PatchTarget<T> target = patch::build_targets(patches, out.schedule, cfg.normalize_targets);
    Var l_r;
    if (target.lattice_index.empty()) {
        l_r = tape.constant(Tensor<T>::scalar(T{0}));
    } else {
        l_r = loss::reconstruction_loss(tape, reconstruct(tape, params, cfg, encoded, out.schedule, trace), target);
    }
    auto combined = loss::combine(tape, l_r, l_c, lambda, target.pixel_count());
    out.loss = combined.total;
    out.report = combined.report;
    return out;
}

template <typename T>
Tensor<T> forward_inference(const ParamMap<T>& params, const ModelConfig& cfg, const patch::VideoClip& clip,
                            const mask::MaskSpec& spec) {
    if (spec.strategy == mask::Strategy::CellRunning &&
        (spec.spatial_mode != mask::SpatialMode::Repeated || spec.temporal_mode != mask::TemporalMode::Fixed)) {
        throw std::invalid_argument("inference masks must use repeated spatial and fixed temporal modes");
    }
    if (clip.channels != cfg.channels) throw std::invalid_argument("clip channel count does not match the model");
    Tape<T> tape(GradMode::Inference);
    const Bound<T> bound(tape, params);
    const mask::MaskSchedule schedule = mask::generate(spec, patch::lattice_for(clip, cfg.patch));
    const Tensor<T> patches = patch::patchify<T>(clip, cfg.patch);
    const patch::TokenBatch tokens =
        patch::embed_visible(tape, standardize(patches, cfg), schedule, bound["embed.weight"], bound["embed.bias"]);
    const Var logits = bridge_classify(tape, bound, cfg, encode(tape, bound, cfg, tokens));
    return tape.value(logits);
}

template <typename S>
static std::size_t argmax_impl(std::span<const S> v) {
    if (v.empty()) throw std::invalid_argument("argmax of an empty vector");
    return static_cast<std::size_t>(std::max_element(v.begin(), v.end()) - v.begin());
}

std::size_t argmax(std::span<const float> logits) { return argmax_impl(logits); }
std::size_t argmax(std::span<const double> logits) { return argmax_impl(logits); }

#define MAR_INSTANTIATE_MODEL(T)                                                                                      \
    template ParamMap<T> init_params<T>(const ModelConfig&, std::uint64_t);                                           \
    template void check_params<T>(const ModelConfig&, const ParamMap<T>&);                                            \
    template class Bound<T>;                                                                                          \
    template patch::TokenBatch encode<T>(Tape<T>&, const Bound<T>&, const ModelConfig&, const patch::TokenBatch&,     \
                                         AttentionTrace*);                                                            \
    template Var bridge_classify<T>(Tape<T>&, const Bound<T>&, const ModelConfig&, const patch::TokenBatch&,          \
                                    AttentionTrace*);                                                                 \
    template Var reconstruct<T>(Tape<T>&, const Bound<T>&, const ModelConfig&, const patch::TokenBatch&,              \
                                const mask::MaskSchedule&, AttentionTrace*);                                          \
    template TrainingOutput<T> forward_training<T>(Tape<T>&, const Bound<T>&, const ModelConfig&,                     \
                                                   const patch::VideoClip&, const mask::MaskSpec&, double,            \
                                                   AttentionTrace*);                                                  \
    template Tensor<T> forward_inference<T>(const ParamMap<T>&, const ModelConfig&, const patch::VideoClip&,          \
                                            const mask::MaskSpec&);

MAR_INSTANTIATE_MODEL(float)
MAR_INSTANTIATE_MODEL(double)

#undef MAR_INSTANTIATE_MODEL

}  // namespace mar::model
