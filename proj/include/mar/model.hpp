#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "mar/checkpoint.hpp"
#include "mar/loss.hpp"
#include "mar/maskgen.hpp"
#include "mar/patchio.hpp"
#include "mar/tape.hpp"

namespace mar::model {

struct EncoderConfig {
    std::size_t depth = 4;
    std::size_t width = 64;
    std::size_t heads = 4;
    std::size_t mlp_ratio = 4;
};

enum class ClassifierKind { Bridge, Linear };

/// Bridge: project D -> width, `depth` transformer blocks, norm, mean-pool,
/// linear head to `classes`. Linear: mean-pool the encoder output, then a
/// linear head.
struct BridgeConfig {
    ClassifierKind kind = ClassifierKind::Bridge;
    std::size_t depth = 2;
    std::size_t width = 32;
    std::size_t heads = 4;
    std::size_t mlp_ratio = 4;
    std::size_t classes = 8;
};

struct DecoderConfig {
    std::size_t depth = 2;
    std::size_t width = 32;
    std::size_t heads = 4;
    std::size_t mlp_ratio = 4;
};

struct ModelConfig {
    patch::PatchSize patch;
    std::size_t channels = 1;
    EncoderConfig encoder;
    BridgeConfig bridge;
    DecoderConfig decoder;
    bool normalize_targets = true;
    double init_std = 0.02;
    double layernorm_eps = 1e-5;
    // Pixels are standardized as (x - pixel_mean) / pixel_std before the
    // patch embedding. Reconstruction targets use the raw pixels.
    double pixel_mean = 0.0;
    double pixel_std = 1.0;

    std::size_t pixels_per_patch() const { return patch::patch_dim(patch, channels); }
    void validate() const;
};

std::string serialize(const ModelConfig& cfg);
ModelConfig parse_model_config(std::string_view text);

template <typename T>
using ParamMap = std::map<std::string, Tensor<T>>;

/// Name -> shape of every learnable array for `cfg`.
std::map<std::string, Shape> param_shapes(const ModelConfig& cfg);

/// Truncated-normal weights (at +-2 std), zero biases, unit layer-norm gains.
/// The mask token is small noise around zero.
template <typename T>
ParamMap<T> init_params(const ModelConfig& cfg, std::uint64_t seed);

/// Throws unless `params` has exactly the names and shapes `cfg` expects.
template <typename T>
void check_params(const ModelConfig& cfg, const ParamMap<T>& params);

TensorMap to_checkpoint(const ParamMap<float>& params);
ParamMap<float> from_checkpoint(const ModelConfig& cfg, const TensorMap& tensors);

/// Parameters registered as leaves on one tape.
template <typename T>
class Bound {
public:
    Bound(Tape<T>& tape, const ParamMap<T>& params);
    Var operator[](const std::string& name) const;
    bool contains(const std::string& name) const { return vars_.count(name) != 0; }
    /// d(root)/d(param) for every parameter after tape.backward(root).
    ParamMap<T> gradients() const;

private:
    Tape<T>* tape_;
    std::map<std::string, Var> vars_;
};

/// Attention-matrix shapes observed per head, for structural checks.
struct AttentionTrace {
    std::vector<Shape> encoder;
    std::vector<Shape> bridge;
    std::vector<Shape> decoder;
};

template <typename T>
patch::TokenBatch encode(Tape<T>& tape, const Bound<T>& params, const ModelConfig& cfg, const patch::TokenBatch& tokens,
                         AttentionTrace* trace = nullptr);

/// Logits [C] from the encoded visible tokens only: no positional encodings
/// and no mask tokens.
template <typename T>
Var bridge_classify(Tape<T>& tape, const Bound<T>& params, const ModelConfig& cfg, const patch::TokenBatch& encoded,
                    AttentionTrace* trace = nullptr);

/// Predicted pixels [masked sites x P], rows in masked_indices() order.
template <typename T>
Var reconstruct(Tape<T>& tape, const Bound<T>& params, const ModelConfig& cfg, const patch::TokenBatch& encoded,
                const mask::MaskSchedule& schedule, AttentionTrace* trace = nullptr);

template <typename T>
struct TrainingOutput {
    Var loss;
    Var logits;
    loss::LossReport report;
    std::size_t visible_tokens = 0;
    mask::MaskSchedule schedule{mask::LatticeShape{}};
};

/// Mask -> tokens -> encoder -> {bridge, decoder} -> lambda * L_r + L_c.
template <typename T>
TrainingOutput<T> forward_training(Tape<T>& tape, const Bound<T>& params, const ModelConfig& cfg,
                                   const patch::VideoClip& clip, const mask::MaskSpec& spec, double lambda,
                                   AttentionTrace* trace = nullptr);

/// Classification path only, on an inference tape (no gradients recorded).
template <typename T>
Tensor<T> forward_inference(const ParamMap<T>& params, const ModelConfig& cfg, const patch::VideoClip& clip,
                            const mask::MaskSpec& spec);

std::size_t argmax(std::span<const float> logits);
std::size_t argmax(std::span<const double> logits);

}  // namespace mar::model
