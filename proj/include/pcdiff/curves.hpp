#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <vector>

#include "pcdiff/geometry.hpp"

namespace pcd::curves {

/// Integer cell coordinate on a 2^b per-axis grid.
using Cell = std::array<std::uint32_t, 3>;

/// Supported serialization curves. The *_trans variants apply the cyclic
/// axis rotation (x,y,z) -> (z,x,y) before the base curve.
enum class CurveKind { z, z_trans, hilbert, hilbert_trans };

std::string curve_kind_name(CurveKind kind);
CurveKind parse_curve_kind(const std::string& name);

inline constexpr std::size_t kMaxBits = 21;  // 3*21 = 63 key bits

/// Morton code: bits of x,y,z interleaved with x in the lowest position of
/// each triple.
std::uint64_t z_encode(const Cell& cell, std::size_t bits);
Cell z_decode(std::uint64_t code, std::size_t bits);

/// 3-D Hilbert index via the iterated Gray-code transpose construction;
/// consecutive codes decode to axis-adjacent cells.
std::uint64_t hilbert_encode(const Cell& cell, std::size_t bits);
Cell hilbert_decode(std::uint64_t code, std::size_t bits);

/// Cyclic axis rotation (x,y,z) -> (z,x,y).
Cell transpose_variant(const Cell& cell);

/// Curve key for a cell under the given kind.
std::uint64_t curve_encode(const Cell& cell, CurveKind kind, std::size_t bits);

struct SerializationOrder {
    CurveKind kind = CurveKind::z;
    std::vector<std::uint64_t> codes;        // per input point
    std::vector<std::size_t> permutation;    // sorted by (code, index)
};

/// Quantizes normalized coordinates to the 2^b grid (floor, clamped at the
/// top), encodes them, and stable-sorts indices by code.
SerializationOrder serialize_points(const std::vector<geom::Vec3>& coords, CurveKind kind,
                                    std::size_t bits);

/// Inverse permutation: out[perm[i]] = i.
std::vector<std::size_t> invert_permutation(const std::vector<std::size_t>& perm);

}  // namespace pcd::curves
