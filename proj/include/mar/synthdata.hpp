#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "mar/patchio.hpp"

namespace mar::synth {

/// A bright square moving in one of `classes` evenly spaced directions over a
/// static textured background. Label k moves at angle 2*pi*k/classes (x right,
/// y down). Start positions are drawn so the square stays inside the frame
/// without bouncing when the path fits; otherwise it reflects off the edges.
struct MotionSpec {
    std::size_t classes = 8;
    std::size_t frames = 16;
    std::size_t height = 32;
    std::size_t width = 32;
    std::size_t channels = 1;
    double object_size = 6.0;
    double speed = 1.0;       // pixels per frame
    double brightness = 1.0;  // object intensity
    double background = 0.3;  // mean background intensity
    double texture = 0.25;    // static background texture amplitude
    double noise = 0.02;      // per-frame i.i.d. noise amplitude
    std::uint64_t seed = 0;

    void validate() const;
};

std::string serialize(const MotionSpec& spec);
MotionSpec parse_motion_spec(std::string_view text);

/// Unit displacement per frame for a label.
std::pair<double, double> direction(std::size_t label, std::size_t classes);

/// Reflects a coordinate into [0, limit].
double reflect(double p, double limit);

/// One clip; deterministic in (spec, stream, index).
patch::VideoClip make_clip(const MotionSpec& spec, std::uint64_t stream, std::size_t index);

/// n clips with labels i mod classes. Throws if n < classes.
std::vector<patch::VideoClip> make_split(const MotionSpec& spec, std::size_t n, std::uint64_t split_seed);

inline constexpr std::uint64_t kTrainStream = 1;
inline constexpr std::uint64_t kValStream = 2;

/// Writes train/val clips plus manifest.csv and spec.txt into `dir`.
/// Train and val draw from disjoint seed streams.
void generate_dataset(const MotionSpec& spec, std::size_t n_train, std::size_t n_val, const std::filesystem::path& dir);

/// Reference classifier: per-clip motion feature from frame differences,
/// nearest class centroid.
class CentroidOracle {
public:
    static std::pair<double, double> feature(const patch::VideoClip& clip);
    void fit(const std::vector<patch::VideoClip>& clips, std::size_t classes);
    std::size_t predict(const patch::VideoClip& clip) const;
    double accuracy(const std::vector<patch::VideoClip>& clips) const;

private:
    std::vector<std::pair<double, double>> centroids_;
};

/// Same clip with its frames permuted.
patch::VideoClip shuffle_frames(const patch::VideoClip& clip, std::uint64_t seed);

}  // namespace mar::synth
