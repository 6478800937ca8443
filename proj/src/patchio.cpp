#include "mar/patchio.hpp"

#include <bit>
#include <cmath>
#include <cstdint>
#include <sstream>
#include <stdexcept>

#include "mar/kv.hpp"
#include "mar/ops.hpp"

namespace mar::patch {
namespace {

void put_u32(std::string& out, std::uint32_t v) {
    for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xffu));
}

std::uint32_t get_u32(std::string_view s, std::size_t pos) {
    std::uint32_t v = 0;
    for (int i = 3; i >= 0; --i) v = (v << 8) | static_cast<unsigned char>(s[pos + static_cast<std::size_t>(i)]);
    return v;
}

// Offset of pixel (dt, dy, dx, c) of tubelet `site` in the clip's pixel array.
struct TubeletIndexer {
    const mask::LatticeShape& lattice;
    const PatchSize& patch;
    std::size_t height, width, channels;

    std::size_t operator()(std::size_t site, std::size_t k) const {
        const std::size_t c = k % channels;
        const std::size_t dx = (k / channels) % patch.w;
        const std::size_t dy = (k / channels / patch.w) % patch.h;
        const std::size_t dt = k / channels / patch.w / patch.h;
        const std::size_t lw = site % lattice.w;
        const std::size_t lh = (site / lattice.w) % lattice.h;
        const std::size_t lt = site / lattice.w / lattice.h;
        const std::size_t t = lt * patch.t + dt, y = lh * patch.h + dy, x = lw * patch.w + dx;
        return ((t * height + y) * width + x) * channels + c;
    }
};

void add_band(std::span<double> out, double position, std::size_t band) {
    for (std::size_t i = 0; i < band; ++i) {
        const double freq = std::pow(10000.0, -2.0 * static_cast<double>(i / 2) / static_cast<double>(band));
        out[i] = i % 2 == 0 ? std::sin(position * freq) : std::cos(position * freq);
    }
}

}  // namespace

mask::LatticeShape lattice_for(const VideoClip& clip, const PatchSize& patch) {
    if (patch.t == 0 || patch.h == 0 || patch.w == 0) throw std::invalid_argument("patch extents must be >= 1");
    if (clip.frames % patch.t || clip.height % patch.h || clip.width % patch.w) {
        throw std::invalid_argument("clip " + std::to_string(clip.frames) + "x" + std::to_string(clip.height) + "x" +
                                    std::to_string(clip.width) + " is not divisible into " + std::to_string(patch.t) +
                                    "x" + std::to_string(patch.h) + "x" + std::to_string(patch.w) + " tubelets");
    }
    mask::LatticeShape shape{clip.frames / patch.t, clip.height / patch.h, clip.width / patch.w};
    shape.validate();
    return shape;
}

std::size_t patch_dim(const PatchSize& patch, std::size_t channels) { return patch.t * patch.h * patch.w * channels; }

template <typename T>
Tensor<T> patchify(const VideoClip& clip, const PatchSize& patch) {
    const auto lattice = lattice_for(clip, patch);
    if (clip.pixels.size() != clip.frames * clip.height * clip.width * clip.channels) {
        throw std::invalid_argument("clip pixel count does not match its extents");
    }
    const std::size_t p = patch_dim(patch, clip.channels);
    Tensor<T> out({lattice.sites(), p});
    const TubeletIndexer idx{lattice, patch, clip.height, clip.width, clip.channels};
    for (std::size_t site = 0; site < lattice.sites(); ++site) {
        for (std::size_t k = 0; k < p; ++k) out[site * p + k] = static_cast<T>(clip.pixels[idx(site, k)]);
    }
    return out;
}

template <typename T>
VideoClip unpatchify(const Tensor<T>& patches, const mask::LatticeShape& lattice, const PatchSize& patch,
                     std::size_t channels, std::size_t label) {
    const std::size_t p = patch_dim(patch, channels);
    if (patches.shape() != Shape{lattice.sites(), p}) {
        throw std::invalid_argument("unpatchify: expected " + shape_str({lattice.sites(), p}) + ", got " +
                                    shape_str(patches.shape()));
    }
    VideoClip clip;
    clip.frames = lattice.t * patch.t;
    clip.height = lattice.h * patch.h;
    clip.width = lattice.w * patch.w;
    clip.channels = channels;
    clip.label = label;
    clip.pixels.resize(clip.frames * clip.height * clip.width * channels);
    const TubeletIndexer idx{lattice, patch, clip.height, clip.width, channels};
    for (std::size_t site = 0; site < lattice.sites(); ++site) {
        for (std::size_t k = 0; k < p; ++k) clip.pixels[idx(site, k)] = static_cast<float>(patches[site * p + k]);
    }
    return clip;
}

template <typename T>
Tensor<T> positional_encoding(const mask::LatticeShape& lattice, std::size_t dim, std::span<const std::size_t> sites) {
    const std::size_t spatial_band = 2 * (dim / 6);
    const std::size_t temporal_band = dim - 2 * spatial_band;
    Tensor<T> out({sites.size(), dim});
    std::vector<double> row(dim);
    for (std::size_t r = 0; r < sites.size(); ++r) {
        const std::size_t site = sites[r];
        if (site >= lattice.sites()) throw std::out_of_range("positional_encoding: site outside lattice");
        const double w = static_cast<double>(site % lattice.w);
        const double h = static_cast<double>((site / lattice.w) % lattice.h);
        const double t = static_cast<double>(site / lattice.w / lattice.h);
        std::span<double> dst(row);
        add_band(dst.subspan(0, temporal_band), t, temporal_band);
        add_band(dst.subspan(temporal_band, spatial_band), h, spatial_band);
        add_band(dst.subspan(temporal_band + spatial_band, spatial_band), w, spatial_band);
        for (std::size_t c = 0; c < dim; ++c) out[r * dim + c] = static_cast<T>(row[c]);
    }
    return out;
}

template <typename T>
TokenBatch embed_visible(Tape<T>& tape, const Tensor<T>& patches, const mask::MaskSchedule& schedule, Var weight,
                         Var bias) {
    if (patches.rank() != 2 || patches.rows() != schedule.shape().sites()) {
        throw std::invalid_argument("embed_visible: " + std::to_string(patches.rows()) + " patch rows for a " +
                                    std::to_string(schedule.shape().sites()) + "-site schedule");
    }
    TokenBatch batch;
    batch.shape = schedule.shape();
    batch.lattice_index = schedule.visible_indices();
    const std::size_t p = patches.cols();
    Tensor<T> visible({batch.lattice_index.size(), p});
    for (std::size_t r = 0; r < batch.lattice_index.size(); ++r) {
        const auto src = patches.row(batch.lattice_index[r]);
        std::copy(src.begin(), src.end(), visible.row(r).begin());
    }
    const std::size_t dim = tape.shape(weight).at(1);
    Var x = ops::matmul(tape, tape.constant(std::move(visible)), weight);
    x = ops::add_row(tape, x, bias);
    x = ops::add(tape, x, tape.constant(positional_encoding<T>(batch.shape, dim, batch.lattice_index)));
    batch.features = x;
    return batch;
}

template <typename T>
PatchTarget<T> build_targets(const Tensor<T>& patches, const mask::MaskSchedule& schedule, bool normalize) {
    if (patches.rank() != 2 || patches.rows() != schedule.shape().sites()) {
        throw std::invalid_argument("build_targets: patch rows do not match the schedule");
    }
    PatchTarget<T> target;
    target.normalized = normalize;
    target.lattice_index = schedule.masked_indices();
    const std::size_t p = patches.cols();
    const std::size_t n = target.lattice_index.size();
    target.values = Tensor<T>({n, p});
    target.mean.assign(n, T{0});
    target.stdev.assign(n, T{1});
    for (std::size_t r = 0; r < n; ++r) {
        const auto src = patches.row(target.lattice_index[r]);
        auto dst = target.values.row(r);
        if (!normalize) {
            std::copy(src.begin(), src.end(), dst.begin());
            continue;
        }
        double mean = 0;
        for (T v : src) mean += static_cast<double>(v);
        mean /= static_cast<double>(p);
        double var = 0;
        for (T v : src) var += (static_cast<double>(v) - mean) * (static_cast<double>(v) - mean);
        const double sd = std::sqrt(var / static_cast<double>(p));
        target.mean[r] = static_cast<T>(mean);
        target.stdev[r] = static_cast<T>(sd);
        const double denom = sd + kTargetEps;
        for (std::size_t k = 0; k < p; ++k) dst[k] = static_cast<T>((static_cast<double>(src[k]) - mean) / denom);
    }
    return target;
}

template <typename T>
Tensor<T> denormalize(const PatchTarget<T>& target) {
    Tensor<T> out = target.values;
    if (!target.normalized) return out;
    for (std::size_t r = 0; r < out.rows(); ++r) {
        const double denom = static_cast<double>(target.stdev[r]) + kTargetEps;
        for (auto& v : out.row(r)) v = static_cast<T>(static_cast<double>(v) * denom + target.mean[r]);
    }
    return out;
}

std::string encode_clip(const VideoClip& clip) {
    if (clip.pixels.size() != clip.frames * clip.height * clip.width * clip.channels) {
        throw std::invalid_argument("encode_clip: pixel count does not match extents");
    }
    std::string out;
    out.reserve(20 + 4 * clip.pixels.size());
    for (auto v : {clip.frames, clip.height, clip.width, clip.channels, clip.label}) {
        put_u32(out, static_cast<std::uint32_t>(v));
    }
    for (float f : clip.pixels) put_u32(out, std::bit_cast<std::uint32_t>(f));
    return out;
}

VideoClip decode_clip(std::string_view bytes) {
    if (bytes.size() < 20) throw std::runtime_error("clip file: truncated header");
    VideoClip clip;
    clip.frames = get_u32(bytes, 0);
    clip.height = get_u32(bytes, 4);
    clip.width = get_u32(bytes, 8);
    clip.channels = get_u32(bytes, 12);
    clip.label = get_u32(bytes, 16);
    const std::size_t n = clip.frames * clip.height * clip.width * clip.channels;
    if (bytes.size() != 20 + 4 * n) throw std::runtime_error("clip file: payload does not match header");
    clip.pixels.resize(n);
    for (std::size_t i = 0; i < n; ++i) clip.pixels[i] = std::bit_cast<float>(get_u32(bytes, 20 + 4 * i));
    return clip;
}

void write_clip(const std::filesystem::path& path, const VideoClip& clip) { write_text_file(path, encode_clip(clip)); }

VideoClip read_clip(const std::filesystem::path& path) { return decode_clip(read_text_file(path)); }

std::string format_manifest(const std::vector<ManifestEntry>& entries) {
    std::string out;
    for (const auto& e : entries) out += e.path + "," + std::to_string(e.label) + "," + e.split + "\n";
    return out;
}

std::vector<ManifestEntry> parse_manifest(std::string_view text) {
    std::vector<ManifestEntry> out;
    std::istringstream in{std::string(text)};
    std::string line;
    std::size_t line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (line.empty()) continue;
        const auto a = line.find(',');
        const auto b = a == std::string::npos ? a : line.find(',', a + 1);
        if (b == std::string::npos) {
            throw std::invalid_argument("manifest line " + std::to_string(line_no) + ": expected path,label,split");
        }
        ManifestEntry e;
        e.path = line.substr(0, a);
        e.label = std::stoul(line.substr(a + 1, b - a - 1));
        e.split = line.substr(b + 1);
        out.push_back(std::move(e));
    }
    return out;
}

std::vector<VideoClip> load_split(const std::filesystem::path& dataset_dir, const std::string& split) {
    const auto manifest = dataset_dir / kManifestName;
    if (!std::filesystem::exists(manifest)) throw std::runtime_error("dataset missing: no " + manifest.string());
    std::vector<VideoClip> clips;
    for (const auto& e : parse_manifest(read_text_file(manifest))) {
        if (e.split != split) continue;
        auto clip = read_clip(dataset_dir / e.path);
        if (clip.label != e.label) throw std::runtime_error("label mismatch between manifest and " + e.path);
        clips.push_back(std::move(clip));
    }
    return clips;
}

#define MAR_INSTANTIATE_PATCHIO(T)                                                                             \
    template Tensor<T> patchify<T>(const VideoClip&, const PatchSize&);                                        \
    template VideoClip unpatchify<T>(const Tensor<T>&, const mask::LatticeShape&, const PatchSize&, std::size_t, \
                                     std::size_t);                                                             \
    template Tensor<T> positional_encoding<T>(const mask::LatticeShape&, std::size_t, std::span<const std::size_t>); \
    template TokenBatch embed_visible<T>(Tape<T>&, const Tensor<T>&, const mask::MaskSchedule&, Var, Var);     \
    template PatchTarget<T> build_targets<T>(const Tensor<T>&, const mask::MaskSchedule&, bool);              \
    template Tensor<T> denormalize<T>(const PatchTarget<T>&);

MAR_INSTANTIATE_PATCHIO(float)
MAR_INSTANTIATE_PATCHIO(double)

#undef MAR_INSTANTIATE_PATCHIO

}  // namespace mar::patch
