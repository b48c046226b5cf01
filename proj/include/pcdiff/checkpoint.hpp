#pragma once

#include <map>
#include <string>

#include "pcdiff/tensor.hpp"

namespace pcd::ad {

/// Checkpoint container: named tensors in file order.
using TensorMap = std::map<std::string, Tensor>;

/// Binary checkpoint format, little-endian throughout:
///   magic "PCDK" | version u32 | tensor count u64 |
///   per tensor: name length u32 | name bytes | rank u32 | extents u64[rank] |
///   payload f64[numel]
inline constexpr std::uint32_t kCheckpointVersion = 1;

void save_checkpoint(const std::string& path, const TensorMap& tensors);
TensorMap load_checkpoint(const std::string& path);

}  // namespace pcd::ad
