#include "mar/maskgen.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <fstream>
#include <numeric>
#include <random>
#include <sstream>
#include <stdexcept>

#include "mar/kv.hpp"
#include "mar/rng.hpp"

namespace mar::mask {
namespace {

constexpr std::array kStrategyNames = {
    std::pair{Strategy::CellRunning, "CellRunning"},     std::pair{Strategy::UniformRunning, "UniformRunning"},
    std::pair{Strategy::RandomStandard, "RandomStandard"}, std::pair{Strategy::RandomRunning, "RandomRunning"},
    std::pair{Strategy::BlockStandard, "BlockStandard"},   std::pair{Strategy::BlockRunning, "BlockRunning"},
    std::pair{Strategy::TubeStandard, "TubeStandard"},     std::pair{Strategy::FrameStandard, "FrameStandard"},
};

std::size_t rounded(double x) { return static_cast<std::size_t>(std::llround(x)); }

void validate_ratio(double ratio) {
    if (!(ratio >= 0.0 && ratio < 1.0)) {
        throw std::invalid_argument("mask ratio must lie in [0, 1), got " + format_double(ratio));
    }
}

std::size_t uniform_below(std::mt19937_64& rng, std::size_t n) {
    return std::uniform_int_distribution<std::size_t>(0, n - 1)(rng);
}

std::vector<std::size_t> random_subset(std::mt19937_64& rng, std::size_t n, std::size_t count) {
    std::vector<std::size_t> idx(n);
    std::iota(idx.begin(), idx.end(), 0);
    std::shuffle(idx.begin(), idx.end(), rng);
    idx.resize(count);
    std::sort(idx.begin(), idx.end());
    return idx;
}

// Per-frame state index shared by all cells: t mod n (Fixed) or a fresh
// permutation of 0..n-1 for every period of n frames (Shuffled).
std::vector<std::size_t> frame_state_offsets(std::size_t frames, std::size_t n, TemporalMode mode,
                                             std::mt19937_64& rng) {
    std::vector<std::size_t> out(frames);
    std::vector<std::size_t> perm(n);
    for (std::size_t t = 0; t < frames; ++t) {
        if (mode == TemporalMode::Fixed) {
            out[t] = t % n;
            continue;
        }
        if (t % n == 0) {
            std::iota(perm.begin(), perm.end(), 0);
            std::shuffle(perm.begin(), perm.end(), rng);
        }
        out[t] = perm[t % n];
    }
    return out;
}

// Tiles each frame with r x q cells. A cell in state o masks scan positions
// (p + o) mod (r*q) for every p in `pattern`.
void fill_cells(MaskSchedule& s, std::size_t r, std::size_t q, const std::vector<std::size_t>& pattern,
                const std::vector<std::size_t>& cell_starts, const std::vector<std::size_t>& frame_offsets) {
    const auto& shape = s.shape();
    const std::size_t n = r * q;
    const std::size_t cells_w = shape.w / q;
    for (std::size_t t = 0; t < shape.t; ++t) {
        auto frame = s.frame(t);
        for (std::size_t ci = 0; ci < shape.h / r; ++ci) {
            for (std::size_t cj = 0; cj < cells_w; ++cj) {
                const std::size_t offset = (cell_starts[ci * cells_w + cj] + frame_offsets[t]) % n;
                for (std::size_t p : pattern) {
                    const std::size_t pos = (p + offset) % n;
                    frame[(ci * r + pos / q) * shape.w + cj * q + pos % q] = 1;
                }
            }
        }
    }
}

void replicate_first_frame(MaskSchedule& s) {
    const auto first = s.frame(0);
    for (std::size_t t = 1; t < s.shape().t; ++t) std::copy(first.begin(), first.end(), s.frame(t).begin());
}

void run_from_first_frame(MaskSchedule& s) {
    for (std::size_t t = 1; t < s.shape().t; ++t) {
        const auto next = global_running_shift(s.frame(t - 1));
        std::copy(next.begin(), next.end(), s.frame(t).begin());
    }
}

void place_block(MaskSchedule& s, double ratio, std::mt19937_64& rng) {
    const auto& shape = s.shape();
    const auto [rows, cols] = block_geometry(rounded(ratio * static_cast<double>(shape.frame_sites())), shape.h,
                                             shape.w);
    const std::size_t top = uniform_below(rng, shape.h - rows + 1);
    const std::size_t left = uniform_below(rng, shape.w - cols + 1);
    auto frame = s.frame(0);
    for (std::size_t i = 0; i < rows; ++i) {
        for (std::size_t j = 0; j < cols; ++j) frame[(top + i) * shape.w + left + j] = 1;
    }
}

void place_random_frame(MaskSchedule& s, double ratio, std::mt19937_64& rng) {
    const std::size_t n = s.shape().frame_sites();
    auto frame = s.frame(0);
    for (std::size_t site : random_subset(rng, n, rounded(ratio * static_cast<double>(n)))) frame[site] = 1;
}

std::size_t pick_start(const MaskSpec& spec, std::size_t n, std::mt19937_64& rng) {
    if (spec.start_state) {
        if (*spec.start_state >= n) {
            throw std::invalid_argument("start_state " + std::to_string(*spec.start_state) + " outside " +
                                        std::to_string(n) + " cell states");
        }
        return *spec.start_state;
    }
    return uniform_below(rng, n);
}

void generate_cell_running(MaskSchedule& s, const MaskSpec& spec, std::mt19937_64& rng) {
    const auto& shape = s.shape();
    const auto& cell = spec.cell;
    if (cell.r == 0 || cell.q == 0 || shape.h % cell.r != 0 || shape.w % cell.q != 0) {
        throw std::invalid_argument("cell " + std::to_string(cell.r) + "x" + std::to_string(cell.q) +
                                    " does not tile a " + std::to_string(shape.h) + "x" + std::to_string(shape.w) +
                                    " frame");
    }
    if (cell.states() < 2) throw std::invalid_argument("running cell needs at least two positions");
    const std::size_t k = masks_per_cell(spec.ratio, cell);
    const std::size_t n = cell.states();
    const std::size_t cell_count = (shape.h / cell.r) * (shape.w / cell.q);

    std::vector<std::size_t> starts(cell_count);
    if (spec.spatial_mode == SpatialMode::Repeated) {
        std::fill(starts.begin(), starts.end(), pick_start(spec, n, rng));
    } else {
        if (spec.start_state) throw std::invalid_argument("start_state requires the Repeated spatial mode");
        for (auto& st : starts) st = uniform_below(rng, n);
    }
    std::vector<std::size_t> pattern(k);
    std::iota(pattern.begin(), pattern.end(), 0);
    fill_cells(s, cell.r, cell.q, pattern, starts, frame_state_offsets(shape.t, n, spec.temporal_mode, rng));
}

void generate_uniform_running(MaskSchedule& s, const MaskSpec& spec, std::mt19937_64& rng) {
    const auto& shape = s.shape();
    const std::size_t n = shape.frame_sites();
    const std::size_t k = rounded(spec.ratio * static_cast<double>(n));
    if (k == 0) return;
    // Evenly interleaved masks across the whole frame, treated as one cell.
    std::vector<std::size_t> pattern(k);
    for (std::size_t j = 0; j < k; ++j) pattern[j] = j * n / k;
    const std::vector<std::size_t> starts{pick_start(spec, n, rng)};
    fill_cells(s, shape.h, shape.w, pattern, starts, frame_state_offsets(shape.t, n, spec.temporal_mode, rng));
}

}  // namespace

void LatticeShape::validate() const {
    if (t == 0 || h == 0 || w == 0) throw std::invalid_argument("lattice extents must be >= 1");
}

MaskSpec inference_spec(double ratio, CellConfig cell, std::size_t start_state) {
    MaskSpec spec;
    spec.strategy = Strategy::CellRunning;
    spec.ratio = ratio;
    spec.cell = cell;
    spec.spatial_mode = SpatialMode::Repeated;
    spec.temporal_mode = TemporalMode::Fixed;
    spec.start_state = start_state;
    return spec;
}

MaskSchedule::MaskSchedule(LatticeShape shape) : shape_(shape) {
    shape_.validate();
    masked_.assign(shape_.sites(), 0);
}

bool MaskSchedule::masked(std::size_t t, std::size_t h, std::size_t w) const {
    return masked_[(t * shape_.h + h) * shape_.w + w] != 0;
}

std::span<const std::uint8_t> MaskSchedule::frame(std::size_t t) const {
    return std::span<const std::uint8_t>(masked_).subspan(t * shape_.frame_sites(), shape_.frame_sites());
}

std::span<std::uint8_t> MaskSchedule::frame(std::size_t t) {
    return std::span<std::uint8_t>(masked_).subspan(t * shape_.frame_sites(), shape_.frame_sites());
}

std::size_t MaskSchedule::masked_count() const {
    return static_cast<std::size_t>(std::count(masked_.begin(), masked_.end(), 1));
}

std::size_t MaskSchedule::frame_masked_count(std::size_t t) const {
    const auto f = frame(t);
    return static_cast<std::size_t>(std::count(f.begin(), f.end(), 1));
}

std::vector<std::size_t> MaskSchedule::visible_indices() const {
    std::vector<std::size_t> out;
    out.reserve(masked_.size());
    for (std::size_t i = 0; i < masked_.size(); ++i) {
        if (!masked_[i]) out.push_back(i);
    }
    return out;
}

std::vector<std::size_t> MaskSchedule::masked_indices() const {
    std::vector<std::size_t> out;
    for (std::size_t i = 0; i < masked_.size(); ++i) {
        if (masked_[i]) out.push_back(i);
    }
    return out;
}

std::size_t masks_per_cell(double ratio, const CellConfig& cell) {
    validate_ratio(ratio);
    const double exact = ratio * static_cast<double>(cell.states());
    const std::size_t k = rounded(exact);
    if (std::abs(exact - static_cast<double>(k)) > 1e-9 || k == 0) {
        throw std::invalid_argument("ratio " + format_double(ratio) + " does not give a whole number of masks in a " +
                                    std::to_string(cell.r) + "x" + std::to_string(cell.q) + " cell");
    }
    return k;
}

CellState advance_state(CellState state, const CellConfig& cell) {
    return CellState{(state.offset + 1) % cell.states()};
}

std::vector<std::size_t> cell_masked_positions(CellState state, const CellConfig& cell, std::size_t k) {
    std::vector<std::size_t> out(k);
    for (std::size_t j = 0; j < k; ++j) out[j] = (state.offset + j) % cell.states();
    return out;
}

std::vector<std::uint8_t> global_running_shift(std::span<const std::uint8_t> frame) {
    const std::size_t n = frame.size();
    std::vector<std::uint8_t> out(n);
    for (std::size_t p = 0; p < n; ++p) out[(p + 1) % n] = frame[p];
    return out;
}

std::pair<std::size_t, std::size_t> block_geometry(std::size_t area, std::size_t h, std::size_t w) {
    std::optional<std::pair<std::size_t, std::size_t>> best;
    for (std::size_t rows = 1; rows <= h; ++rows) {
        if (area % rows != 0) continue;
        const std::size_t cols = area / rows;
        if (cols > w) continue;
        const auto gap = [](auto rc) { return rc.first > rc.second ? rc.first - rc.second : rc.second - rc.first; };
        if (!best || gap(std::pair{rows, cols}) < gap(*best)) best = std::pair{rows, cols};
    }
    if (!best || area == 0) {
        throw std::invalid_argument("no rectangle of area " + std::to_string(area) + " fits in " + std::to_string(h) +
                                    "x" + std::to_string(w));
    }
    return *best;
}

MaskSchedule generate(const MaskSpec& spec, const LatticeShape& shape) {
    validate_ratio(spec.ratio);
    MaskSchedule s(shape);
    if (spec.ratio == 0.0) return s;

    auto rng = make_rng(spec.seed, {static_cast<std::uint64_t>(spec.strategy)});
    switch (spec.strategy) {
        case Strategy::CellRunning: generate_cell_running(s, spec, rng); break;
        case Strategy::UniformRunning: generate_uniform_running(s, spec, rng); break;
        case Strategy::RandomStandard:
            for (std::size_t site : random_subset(rng, shape.sites(), rounded(spec.ratio * double(shape.sites())))) {
                s.set_masked(site, true);
            }
            break;
        case Strategy::RandomRunning:
            place_random_frame(s, spec.ratio, rng);
            run_from_first_frame(s);
            break;
        case Strategy::BlockStandard:
            place_block(s, spec.ratio, rng);
            replicate_first_frame(s);
            break;
        case Strategy::BlockRunning:
            place_block(s, spec.ratio, rng);
            run_from_first_frame(s);
            break;
        case Strategy::TubeStandard:
            place_random_frame(s, spec.ratio, rng);
            replicate_first_frame(s);
            break;
        case Strategy::FrameStandard:
            for (std::size_t t : random_subset(rng, shape.t, rounded(spec.ratio * double(shape.t)))) {
                auto f = s.frame(t);
                std::fill(f.begin(), f.end(), 1);
            }
            break;
    }
    return s;
}

CoverageStats coverage_stats(const MaskSchedule& schedule, std::size_t window) {
    const auto& shape = schedule.shape();
    if (window == 0 || window > shape.t) {
        throw std::invalid_argument("coverage window must be in [1, " + std::to_string(shape.t) + "]");
    }
    const std::size_t n = shape.frame_sites();
    CoverageStats stats{window, std::vector<std::size_t>(n, window), std::vector<std::size_t>(n, 0)};
    for (std::size_t site = 0; site < n; ++site) {
        for (std::size_t start = 0; start + window <= shape.t; ++start) {
            std::size_t visible = 0;
            for (std::size_t t = start; t < start + window; ++t) visible += schedule.frame(t)[site] ? 0 : 1;
            stats.min_visible[site] = std::min(stats.min_visible[site], visible);
            stats.max_visible[site] = std::max(stats.max_visible[site], visible);
        }
    }
    return stats;
}

std::string to_string(Strategy s) {
    for (auto [v, name] : kStrategyNames) {
        if (v == s) return name;
    }
    throw std::invalid_argument("unknown strategy");
}

std::string to_string(SpatialMode m) { return m == SpatialMode::Repeated ? "Repeated" : "Random"; }
std::string to_string(TemporalMode m) { return m == TemporalMode::Fixed ? "Fixed" : "Shuffled"; }

Strategy parse_strategy(std::string_view s) {
    for (auto [v, name] : kStrategyNames) {
        if (s == name) return v;
    }
    throw std::invalid_argument("unknown mask strategy: " + std::string(s));
}

SpatialMode parse_spatial_mode(std::string_view s) {
    if (s == "Repeated") return SpatialMode::Repeated;
    if (s == "Random") return SpatialMode::Random;
    throw std::invalid_argument("unknown spatial mode: " + std::string(s));
}

TemporalMode parse_temporal_mode(std::string_view s) {
    if (s == "Fixed") return TemporalMode::Fixed;
    if (s == "Shuffled") return TemporalMode::Shuffled;
    throw std::invalid_argument("unknown temporal mode: " + std::string(s));
}

bool is_running(Strategy s) {
    return s == Strategy::CellRunning || s == Strategy::UniformRunning || s == Strategy::RandomRunning ||
           s == Strategy::BlockRunning;
}

std::string serialize(const MaskSpec& spec) {
    std::vector<std::pair<std::string, std::string>> kv = {
        {"strategy", to_string(spec.strategy)},
        {"ratio", format_double(spec.ratio)},
        {"r", std::to_string(spec.cell.r)},
        {"q", std::to_string(spec.cell.q)},
        {"spatial_mode", to_string(spec.spatial_mode)},
        {"temporal_mode", to_string(spec.temporal_mode)},
        {"seed", std::to_string(spec.seed)},
    };
    if (spec.start_state) kv.emplace_back("start_state", std::to_string(*spec.start_state));
    return format_kv(kv);
}

MaskSpec parse_mask_spec(std::string_view text) {
    const auto kv = parse_kv(text);
    MaskSpec spec;
    spec.strategy = parse_strategy(kv_get(kv, "strategy", to_string(spec.strategy)));
    spec.ratio = kv_get(kv, "ratio", spec.ratio);
    spec.cell.r = kv_get(kv, "r", spec.cell.r);
    spec.cell.q = kv_get(kv, "q", spec.cell.q);
    spec.spatial_mode = parse_spatial_mode(kv_get(kv, "spatial_mode", to_string(spec.spatial_mode)));
    spec.temporal_mode = parse_temporal_mode(kv_get(kv, "temporal_mode", to_string(spec.temporal_mode)));
    spec.seed = kv_get_u64(kv, "seed", spec.seed);
    if (kv.count("start_state")) spec.start_state = kv_get(kv, "start_state", std::size_t{0});
    validate_ratio(spec.ratio);
    return spec;
}

std::string frame_to_pbm(const MaskSchedule& schedule, std::size_t t) {
    const auto& shape = schedule.shape();
    std::ostringstream os;
    os << "P1\n# frame " << t << "\n" << shape.w << ' ' << shape.h << '\n';
    const auto f = schedule.frame(t);
    for (std::size_t i = 0; i < shape.h; ++i) {
        for (std::size_t j = 0; j < shape.w; ++j) os << (j ? " " : "") << (f[i * shape.w + j] ? '1' : '0');
        os << '\n';
    }
    return os.str();
}

std::vector<std::filesystem::path> dump_pbm(const MaskSchedule& schedule, const std::filesystem::path& dir) {
    std::filesystem::create_directories(dir);
    std::vector<std::filesystem::path> paths;
    for (std::size_t t = 0; t < schedule.shape().t; ++t) {
        char name[32];
        std::snprintf(name, sizeof(name), "frame_%03zu.pbm", t);
        paths.push_back(dir / name);
        write_text_file(paths.back(), frame_to_pbm(schedule, t));
    }
    return paths;
}

}  // namespace mar::mask
