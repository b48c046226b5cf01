#pragma once

#include <array>
#include <cstddef>
#include <optional>
#include <vector>

namespace pcd::geom {

struct Vec3 {
    double x = 0.0, y = 0.0, z = 0.0;

    double& operator[](std::size_t i) { return i == 0 ? x : (i == 1 ? y : z); }
    double operator[](std::size_t i) const { return i == 0 ? x : (i == 1 ? y : z); }
};

inline double squared_distance(const Vec3& a, const Vec3& b) {
    const double dx = a.x - b.x, dy = a.y - b.y, dz = a.z - b.z;
    return dx * dx + dy * dy + dz * dz;
}

/// Ordered list of 3-D points, optionally with per-point feature rows.
/// `normalized` flags that every coordinate lies in the unit cube, which the
/// voxel operations require.
struct PointCloud {
    std::vector<Vec3> coords;
    std::vector<std::vector<double>> features;  // empty or coords.size() rows
    bool normalized = false;

    std::size_t size() const { return coords.size(); }
    bool has_features() const { return !features.empty(); }

    void validate() const;
};

/// Per-point voxel cell assignment at resolution L; cell ids are flat
/// z-major indices (z*L*L + y*L + x). A coordinate of exactly 1.0 clamps
/// into the last cell.
std::vector<std::size_t> voxel_cells(const std::vector<Vec3>& coords, std::size_t resolution);

/// Regular L*L*L grid of D-dimensional cell values. A cell holds the mean
/// feature of its member points (zero when empty); counts partition N.
struct VoxelGrid {
    std::size_t resolution = 0;
    std::size_t channels = 0;
    std::vector<double> values;       // resolution^3 x channels, cell-major
    std::vector<std::size_t> counts;  // resolution^3

    std::size_t cell_count() const { return resolution * resolution * resolution; }
    const double* cell(std::size_t flat_index) const { return values.data() + flat_index * channels; }
};

VoxelGrid voxelize(const PointCloud& pc, std::size_t resolution);

/// The 8 corner cells and trilinear weights for a query point under the
/// cell-center convention (cell i has its center at (i+0.5)/L); boundary
/// queries clamp to the edge cells.
struct TrilinearTable {
    std::size_t K = 8;
    std::vector<std::size_t> indices;  // M*8 flat cell ids
    std::vector<double> weights;       // M*8, rows sum to 1
};

TrilinearTable trilinear_table(const std::vector<Vec3>& queries, std::size_t resolution);

/// Trilinear blend of grid values at each query point.
std::vector<std::vector<double>> trilinear_query(const VoxelGrid& grid,
                                                 const std::vector<Vec3>& queries);

/// Greedy max-min farthest point sampling; deterministic, ties broken by
/// lowest index.
std::vector<std::size_t> farthest_point_sampling(const PointCloud& pc, std::size_t count,
                                                 std::size_t seed_index = 0);

/// FPS continuation: greedily picks `count` points from `candidates`, where
/// the min-distance field is initialized against `chosen` points.
std::vector<std::size_t> farthest_point_extend(const std::vector<Vec3>& coords,
                                               const std::vector<std::size_t>& candidates,
                                               const std::vector<std::size_t>& chosen,
                                               std::size_t count);

/// Per-point k nearest neighbors by Euclidean distance, self excluded,
/// each row sorted by (distance, index).
std::vector<std::vector<std::size_t>> knn(const PointCloud& pc, std::size_t k);

/// knn with the sorted squared distances kept alongside the indices.
struct KnnResult {
    std::vector<std::vector<std::size_t>> indices;
    std::vector<std::vector<double>> sq_distances;
};
KnnResult knn_with_distances(const PointCloud& pc, std::size_t k);

}  // namespace pcd::geom
