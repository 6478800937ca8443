#include "mar/synthdata.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <random>
#include <stdexcept>

#include "mar/kv.hpp"
#include "mar/rng.hpp"

namespace mar::synth {
namespace {

double coverage(double lo, double hi, double p, double size) {
    return std::max(0.0, std::min(hi, p + size) - std::max(lo, p));
}

// Start interval that keeps the whole path inside [0, limit].
std::pair<double, double> start_range(double step, std::size_t frames, double limit) {
    const double travel = step * static_cast<double>(frames - 1);
    const double lo = std::max(0.0, -travel);
    const double hi = limit - std::max(0.0, travel);
    if (hi < lo) return {0.0, limit};
    return {lo, hi};
}

}  // namespace

void MotionSpec::validate() const {
    if (classes < 2) throw std::invalid_argument("motion spec: need at least two classes");
    if (frames < 2 || height == 0 || width == 0 || channels == 0) {
        throw std::invalid_argument("motion spec: clip dimensions too small");
    }
    if (!(object_size > 0.0) || object_size > static_cast<double>(std::min(height, width))) {
        throw std::invalid_argument("motion spec: object does not fit in the frame");
    }
    if (!(speed >= 0.0) || !(texture >= 0.0) || !(noise >= 0.0)) {
        throw std::invalid_argument("motion spec: speed, texture and noise must be non-negative");
    }
}

std::string serialize(const MotionSpec& s) {
    return format_kv({
        {"classes", std::to_string(s.classes)},
        {"frames", std::to_string(s.frames)},
        {"height", std::to_string(s.height)},
        {"width", std::to_string(s.width)},
        {"channels", std::to_string(s.channels)},
        {"object_size", format_double(s.object_size)},
        {"speed", format_double(s.speed)},
        {"brightness", format_double(s.brightness)},
        {"background", format_double(s.background)},
        {"texture", format_double(s.texture)},
        {"noise", format_double(s.noise)},
        {"seed", std::to_string(s.seed)},
    });
}

MotionSpec parse_motion_spec(std::string_view text) {
    const auto kv = parse_kv(text);
    MotionSpec s;
    s.classes = kv_get(kv, "classes", s.classes);
    s.frames = kv_get(kv, "frames", s.frames);
    s.height = kv_get(kv, "height", s.height);
    s.width = kv_get(kv, "width", s.width);
    s.channels = kv_get(kv, "channels", s.channels);
    s.object_size = kv_get(kv, "object_size", s.object_size);
    s.speed = kv_get(kv, "speed", s.speed);
    s.brightness = kv_get(kv, "brightness", s.brightness);
    s.background = kv_get(kv, "background", s.background);
    s.texture = kv_get(kv, "texture", s.texture);
    s.noise = kv_get(kv, "noise", s.noise);
    s.seed = kv_get_u64(kv, "seed", s.seed);
    s.validate();
    return s;
}

std::pair<double, double> direction(std::size_t label, std::size_t classes) {
    const double a = 2.0 * std::numbers::pi * static_cast<double>(label) / static_cast<double>(classes);
    double dx = std::cos(a), dy = std::sin(a);
    if (std::abs(dx) < 1e-12) dx = 0.0;
    if (std::abs(dy) < 1e-12) dy = 0.0;
    return {dx, dy};
}

double reflect(double p, double limit) {
    if (limit <= 0.0) return 0.0;
    const double period = 2.0 * limit;
    double m = std::fmod(p, period);
    if (m < 0) m += period;
    return m > limit ? period - m : m;
}

patch::VideoClip make_clip(const MotionSpec& spec, std::uint64_t stream, std::size_t index) {
    spec.validate();
    auto rng = make_rng(spec.seed, {stream, index});
    std::uniform_real_distribution<double> unit(0.0, 1.0);

    patch::VideoClip clip;
    clip.frames = spec.frames;
    clip.height = spec.height;
    clip.width = spec.width;
    clip.channels = spec.channels;
    clip.label = index % spec.classes;
    clip.pixels.resize(spec.frames * spec.height * spec.width * spec.channels);

    const auto [ux, uy] = direction(clip.label, spec.classes);
    const double vx = ux * spec.speed, vy = uy * spec.speed;
    const double lim_x = static_cast<double>(spec.width) - spec.object_size;
    const double lim_y = static_cast<double>(spec.height) - spec.object_size;
    const auto [x_lo, x_hi] = start_range(vx, spec.frames, lim_x);
    const auto [y_lo, y_hi] = start_range(vy, spec.frames, lim_y);
    const double x0 = x_lo + unit(rng) * (x_hi - x_lo);
    const double y0 = y_lo + unit(rng) * (y_hi - y_lo);

    std::vector<double> texture(spec.height * spec.width * spec.channels);
    for (auto& v : texture) v = spec.background + spec.texture * (unit(rng) - 0.5);

    for (std::size_t t = 0; t < spec.frames; ++t) {
        const double px = reflect(x0 + vx * static_cast<double>(t), lim_x);
        const double py = reflect(y0 + vy * static_cast<double>(t), lim_y);
        for (std::size_t y = 0; y < spec.height; ++y) {
            const double cy = coverage(static_cast<double>(y), static_cast<double>(y + 1), py, spec.object_size);
            for (std::size_t x = 0; x < spec.width; ++x) {
                const double cov =
                    cy * coverage(static_cast<double>(x), static_cast<double>(x + 1), px, spec.object_size);
                for (std::size_t c = 0; c < spec.channels; ++c) {
                    const double bg = texture[(y * spec.width + x) * spec.channels + c];
                    double v = bg * (1.0 - cov) + spec.brightness * cov;
                    if (spec.noise > 0.0) v += spec.noise * (2.0 * unit(rng) - 1.0);
                    clip.at(t, y, x, c) = static_cast<float>(std::clamp(v, 0.0, 1.0));
                }
            }
        }
    }
    return clip;
}

std::vector<patch::VideoClip> make_split(const MotionSpec& spec, std::size_t n, std::uint64_t split_seed) {
    if (n < spec.classes) throw std::invalid_argument("make_split: fewer clips than classes");
    std::vector<patch::VideoClip> clips;
    clips.reserve(n);
    for (std::size_t i = 0; i < n; ++i) clips.push_back(make_clip(spec, split_seed, i));
    return clips;
}

void generate_dataset(const MotionSpec& spec, std::size_t n_train, std::size_t n_val,
                      const std::filesystem::path& dir) {
    std::filesystem::create_directories(dir);
    std::vector<patch::ManifestEntry> entries;
    auto emit = [&](const std::string& split, std::uint64_t stream, std::size_t n) {
        const auto clips = make_split(spec, n, stream);
        for (std::size_t i = 0; i < clips.size(); ++i) {
            char name[64];
            std::snprintf(name, sizeof name, "%s_%05zu.clip", split.c_str(), i);
            patch::write_clip(dir / name, clips[i]);
            entries.push_back({name, clips[i].label, split});
        }
    };
    emit("train", kTrainStream, n_train);
    emit("val", kValStream, n_val);
    write_text_file(dir / patch::kManifestName, patch::format_manifest(entries));
    write_text_file(dir / "spec.txt", serialize(spec));
}

// First moments of consecutive frame differences, summed over time: for a
// rigid object on a static background this is mass * displacement.
std::pair<double, double> CentroidOracle::feature(const patch::VideoClip& clip) {
    double fx = 0, fy = 0, mass = 0;
    for (std::size_t t = 0; t + 1 < clip.frames; ++t)
        for (std::size_t y = 0; y < clip.height; ++y)
            for (std::size_t x = 0; x < clip.width; ++x)
                for (std::size_t c = 0; c < clip.channels; ++c) {
                    const double d = static_cast<double>(clip.at(t + 1, y, x, c)) - clip.at(t, y, x, c);
                    fx += d * static_cast<double>(x);
                    fy += d * static_cast<double>(y);
                    mass += std::abs(d);
                }
    if (mass <= 0.0) return {0.0, 0.0};
    return {fx / mass, fy / mass};
}

void CentroidOracle::fit(const std::vector<patch::VideoClip>& clips, std::size_t classes) {
    centroids_.assign(classes, {0.0, 0.0});
    std::vector<std::size_t> counts(classes, 0);
    for (const auto& clip : clips) {
        if (clip.label >= classes) throw std::out_of_range("oracle: label outside class range");
        const auto [fx, fy] = feature(clip);
        centroids_[clip.label].first += fx;
        centroids_[clip.label].second += fy;
        ++counts[clip.label];
    }
    for (std::size_t k = 0; k < classes; ++k) {
        if (counts[k] == 0) throw std::invalid_argument("oracle: class with no training clips");
        centroids_[k].first /= static_cast<double>(counts[k]);
        centroids_[k].second /= static_cast<double>(counts[k]);
    }
}

std::size_t CentroidOracle::predict(const patch::VideoClip& clip) const {
    const auto [fx, fy] = feature(clip);
    std::size_t best = 0;
    double best_d = INFINITY;
    for (std::size_t k = 0; k < centroids_.size(); ++k) {
        const double dx = fx - centroids_[k].first, dy = fy - centroids_[k].second;
        const double d = dx * dx + dy * dy;
        if (d < best_d) {
            best_d = d;
            best = k;
        }
    }
    return best;
}

double CentroidOracle::accuracy(const std::vector<patch::VideoClip>& clips) const {
    if (clips.empty()) return 0.0;
    std::size_t hit = 0;
    for (const auto& clip : clips) hit += predict(clip) == clip.label;
    return static_cast<double>(hit) / static_cast<double>(clips.size());
}

patch::VideoClip shuffle_frames(const patch::VideoClip& clip, std::uint64_t seed) {
    std::vector<std::size_t> order(clip.frames);
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
    auto rng = make_rng(seed, {clip.frames});
    std::shuffle(order.begin(), order.end(), rng);
    patch::VideoClip out = clip;
    const std::size_t frame = clip.height * clip.width * clip.channels;
    for (std::size_t t = 0; t < clip.frames; ++t) {
        std::copy_n(clip.pixels.begin() + static_cast<std::ptrdiff_t>(order[t] * frame), frame,
                    out.pixels.begin() + static_cast<std::ptrdiff_t>(t * frame));
    }
    return out;
}

}  // namespace mar::synth
