#pragma once

#include <cstddef>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "mar/maskgen.hpp"
#include "mar/tape.hpp"

namespace mar::patch {

/// Tubelet extents in frames x pixels x pixels.
struct PatchSize {
    std::size_t t = 2;
    std::size_t h = 4;
    std::size_t w = 4;
};

/// Pixels laid out [T][H][W][C], values in [0, 1].
struct VideoClip {
    std::size_t frames = 0;
    std::size_t height = 0;
    std::size_t width = 0;
    std::size_t channels = 1;
    std::size_t label = 0;
    std::vector<float> pixels;

    float& at(std::size_t t, std::size_t y, std::size_t x, std::size_t c = 0) {
        return pixels[((t * height + y) * width + x) * channels + c];
    }
    float at(std::size_t t, std::size_t y, std::size_t x, std::size_t c = 0) const {
        return pixels[((t * height + y) * width + x) * channels + c];
    }
    friend bool operator==(const VideoClip&, const VideoClip&) = default;
};

/// Throws std::invalid_argument unless the clip divides evenly into tubelets.
mask::LatticeShape lattice_for(const VideoClip& clip, const PatchSize& patch);
std::size_t patch_dim(const PatchSize& patch, std::size_t channels);

/// One row per lattice site in scan order; a row is the tubelet flattened as
/// [pt][ph][pw][c].
template <typename T>
Tensor<T> patchify(const VideoClip& clip, const PatchSize& patch);

template <typename T>
VideoClip unpatchify(const Tensor<T>& patches, const mask::LatticeShape& lattice, const PatchSize& patch,
                     std::size_t channels, std::size_t label = 0);

/// Fixed sinusoidal encoding: separate sin/cos bands for the t, h and w
/// coordinates, concatenated to `dim` columns. One row per requested site.
template <typename T>
Tensor<T> positional_encoding(const mask::LatticeShape& lattice, std::size_t dim, std::span<const std::size_t> sites);

/// Rows on a tape plus the lattice site each row came from.
struct TokenBatch {
    Var features;
    std::vector<std::size_t> lattice_index;
    mask::LatticeShape shape;
};

/// Gathers the visible rows of `patches`, embeds them with weight[P x D] and
/// bias[D], then adds positional encodings for those sites only.
template <typename T>
TokenBatch embed_visible(Tape<T>& tape, const Tensor<T>& patches, const mask::MaskSchedule& schedule, Var weight,
                         Var bias);

inline constexpr double kTargetEps = 1e-6;

template <typename T>
struct PatchTarget {
    Tensor<T> values;                       // [masked sites x P]
    std::vector<T> mean;                    // per masked site
    std::vector<T> stdev;                   // per masked site
    std::vector<std::size_t> lattice_index;  // masked sites in scan order
    bool normalized = false;

    std::size_t pixel_count() const { return values.size(); }
};

/// Reconstruction targets at the masked sites; with `normalize`, each patch is
/// shifted to zero mean and divided by (std + eps).
template <typename T>
PatchTarget<T> build_targets(const Tensor<T>& patches, const mask::MaskSchedule& schedule, bool normalize);

/// Raw pixels back from a (possibly normalised) target.
template <typename T>
Tensor<T> denormalize(const PatchTarget<T>& target);

// Clip file: five little-endian int32 (T, H, W, C_in, label) followed by
// T*H*W*C_in little-endian float32 pixels.
std::string encode_clip(const VideoClip& clip);
VideoClip decode_clip(std::string_view bytes);
void write_clip(const std::filesystem::path& path, const VideoClip& clip);
VideoClip read_clip(const std::filesystem::path& path);

struct ManifestEntry {
    std::string path;  // relative to the manifest's directory
    std::size_t label = 0;
    std::string split;
    friend bool operator==(const ManifestEntry&, const ManifestEntry&) = default;
};

inline constexpr const char* kManifestName = "manifest.csv";

/// One line per clip: "path,label,split".
std::string format_manifest(const std::vector<ManifestEntry>& entries);
std::vector<ManifestEntry> parse_manifest(std::string_view text);

/// Clips of one split in manifest order.
std::vector<VideoClip> load_split(const std::filesystem::path& dataset_dir, const std::string& split);

}  // namespace mar::patch
