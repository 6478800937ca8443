#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace mar::mask {

/// Token lattice t x h x w (temporal x spatial). Sites are numbered in
/// lattice-scan order: (ti * h + hi) * w + wi.
struct LatticeShape {
    std::size_t t = 1;
    std::size_t h = 1;
    std::size_t w = 1;

    std::size_t frame_sites() const { return h * w; }
    std::size_t sites() const { return t * h * w; }
    void validate() const;
    friend bool operator==(const LatticeShape&, const LatticeShape&) = default;
};

enum class Strategy {
    CellRunning,
    UniformRunning,
    RandomStandard,
    RandomRunning,
    BlockStandard,
    BlockRunning,
    TubeStandard,
    FrameStandard,
};

// How cells pick their starting state: one shared random start, or one each.
enum class SpatialMode { Repeated, Random };
// Fixed: states advance in order. Shuffled: each period of r*q frames visits
// the states in a fresh random order (same order for every cell).
enum class TemporalMode { Fixed, Shuffled };

struct CellConfig {
    std::size_t r = 2;
    std::size_t q = 2;
    std::size_t states() const { return r * q; }
};

/// Circular position of the mask run inside a cell's row-major scan.
struct CellState {
    std::size_t offset = 0;
    friend bool operator==(CellState, CellState) = default;
};

struct MaskSpec {
    Strategy strategy = Strategy::CellRunning;
    double ratio = 0.5;
    CellConfig cell;
    SpatialMode spatial_mode = SpatialMode::Repeated;
    TemporalMode temporal_mode = TemporalMode::Fixed;
    std::uint64_t seed = 0;
    // Pins the shared starting state (A = 0, B = 1, ...) for Repeated cell
    // strategies instead of drawing it from the seed. Used at inference.
    std::optional<std::size_t> start_state;
};

/// Inference default: Repeated + Fixed cell running masking starting at state A.
MaskSpec inference_spec(double ratio, CellConfig cell = {}, std::size_t start_state = 0);

class MaskSchedule {
public:
    explicit MaskSchedule(LatticeShape shape);

    const LatticeShape& shape() const { return shape_; }
    bool masked(std::size_t site) const { return masked_[site] != 0; }
    bool masked(std::size_t t, std::size_t h, std::size_t w) const;
    void set_masked(std::size_t site, bool value) { masked_[site] = value ? 1 : 0; }

    std::span<const std::uint8_t> frame(std::size_t t) const;
    std::span<std::uint8_t> frame(std::size_t t);

    std::size_t masked_count() const;
    std::size_t frame_masked_count(std::size_t t) const;

    /// Unmasked sites in lattice-scan order.
    std::vector<std::size_t> visible_indices() const;
    std::vector<std::size_t> masked_indices() const;

    friend bool operator==(const MaskSchedule&, const MaskSchedule&) = default;

private:
    LatticeShape shape_;
    std::vector<std::uint8_t> masked_;
};

/// Number of masked positions per cell, k = ratio * r * q. Throws unless k is a
/// positive integer below r * q.
std::size_t masks_per_cell(double ratio, const CellConfig& cell);

CellState advance_state(CellState state, const CellConfig& cell);

/// Scan positions masked in a cell at `state`: the k positions starting at
/// state.offset, wrapping around.
std::vector<std::size_t> cell_masked_positions(CellState state, const CellConfig& cell, std::size_t k);

/// The running transform used outside cells: circular shift of the flattened
/// frame by one position.
std::vector<std::uint8_t> global_running_shift(std::span<const std::uint8_t> frame);

/// Rectangle (rows, cols) with rows * cols == area that fits in h x w and is
/// as square as possible. Throws if none exists.
std::pair<std::size_t, std::size_t> block_geometry(std::size_t area, std::size_t h, std::size_t w);

MaskSchedule generate(const MaskSpec& spec, const LatticeShape& shape);

struct CoverageStats {
    std::size_t window = 0;
    // Per spatial site (h * w entries): min / max count of visible frames over
    // all windows of `window` consecutive frames.
    std::vector<std::size_t> min_visible;
    std::vector<std::size_t> max_visible;
};

CoverageStats coverage_stats(const MaskSchedule& schedule, std::size_t window);

std::string to_string(Strategy s);
std::string to_string(SpatialMode m);
std::string to_string(TemporalMode m);
Strategy parse_strategy(std::string_view s);
SpatialMode parse_spatial_mode(std::string_view s);
TemporalMode parse_temporal_mode(std::string_view s);
bool is_running(Strategy s);

std::string serialize(const MaskSpec& spec);
MaskSpec parse_mask_spec(std::string_view text);

/// Plain PBM (P1) bitmap of one frame; 1 = masked (black).
std::string frame_to_pbm(const MaskSchedule& schedule, std::size_t t);
/// Writes frame_000.pbm ... into `dir`; returns the written paths.
std::vector<std::filesystem::path> dump_pbm(const MaskSchedule& schedule, const std::filesystem::path& dir);

}  // namespace mar::mask
