#pragma once

#include <filesystem>
#include <map>
#include <string>
#include <string_view>

#include "mar/tensor.hpp"

namespace mar {

using TensorMap = std::map<std::string, Tensor<float>>;

// Layout: "MARKIT1", then one record per tensor until end of input:
//   u64 name length, name bytes, u64 rank, rank x u64 extents, f32 data.
// All integers and floats are little-endian.
inline constexpr std::string_view kCheckpointMagic = "MARKIT1";

std::string encode_checkpoint(const TensorMap& tensors);
TensorMap decode_checkpoint(std::string_view bytes);

void save_checkpoint(const std::filesystem::path& path, const TensorMap& tensors);
TensorMap load_checkpoint(const std::filesystem::path& path);

}  // namespace mar
