#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "pcdiff/geometry.hpp"
#include "pcdiff/rng.hpp"

namespace pcd::io {

/// Plain-text XYZ: one "x y z" or "x y z score" row per point, constant
/// column count per file. A 4-column file lands the score in a one-column
/// feature channel. Writing emits 12 significant digits so a round-trip
/// preserves at least 9.
geom::PointCloud read_xyz(const std::string& path);
void write_xyz(const geom::PointCloud& pc, const std::string& path);

/// Binary little-endian PLY export (vertex-only), optional alternative to
/// the text format.
void write_ply(const geom::PointCloud& pc, const std::string& path);

/// Flat key-value run configuration. The key set is closed: unknown keys are
/// rejected, absent keys keep the full-scale defaults.
struct RunConfig {
    std::string shape = "sphere";
    std::size_t n = 2048;
    std::size_t m = 256;
    std::size_t d = 512;
    std::size_t depth = 8;
    std::string curve1 = "z";
    std::string curve2 = "z-trans";
    std::size_t k = 32;
    double zeta = 0.875;
    std::size_t tau = 50;
    std::size_t t = 1000;
    std::size_t l = 16;
    std::size_t batch = 32;
    double lr = 2e-4;
    std::size_t epochs = 10000;
    std::uint64_t seed = 0;
};

RunConfig parse_run_config(const std::string& text);
RunConfig load_run_config(const std::string& path);
std::string serialize_run_config(const RunConfig& config);

enum class ShapeKind { sphere, cube_edges, torus, two_planes };

ShapeKind parse_shape_kind(const std::string& name);
std::string shape_kind_name(ShapeKind kind);

/// Deterministic synthetic clouds, normalized to the unit cube with exactly
/// `n` points each; per-cloud parameter jitter provides diversity.
std::vector<geom::PointCloud> synth_dataset(ShapeKind kind, std::size_t count, std::size_t n,
                                            std::uint64_t seed);

}  // namespace pcd::io
