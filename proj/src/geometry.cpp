#include "pcdiff/geometry.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <stdexcept>
#include <string>

namespace pcd::geom {

void PointCloud::validate() const {
    if (coords.empty()) throw std::invalid_argument("PointCloud: must contain at least one point");
    for (const Vec3& c : coords) {
        if (!std::isfinite(c.x) || !std::isfinite(c.y) || !std::isfinite(c.z)) {
            throw std::invalid_argument("PointCloud: non-finite coordinate");
        }
    }
    if (normalized) {
        for (const Vec3& c : coords) {
            for (std::size_t a = 0; a < 3; ++a) {
                if (c[a] < 0.0 || c[a] > 1.0) {
                    throw std::invalid_argument("PointCloud: flagged normalized but coordinate " +
                                                std::to_string(c[a]) + " is outside [0,1]");
                }
            }
        }
    }
    if (!features.empty() && features.size() != coords.size()) {
        throw std::invalid_argument("PointCloud: feature row count != point count");
    }
}

std::vector<std::size_t> voxel_cells(const std::vector<Vec3>& coords, std::size_t resolution) {
    if (resolution == 0) throw std::invalid_argument("voxel_cells: resolution must be positive");
    const double r = static_cast<double>(resolution);
    std::vector<std::size_t> cells(coords.size());
    for (std::size_t i = 0; i < coords.size(); ++i) {
        std::size_t idx[3];
        for (std::size_t a = 0; a < 3; ++a) {
            auto q = static_cast<long long>(std::floor(coords[i][a] * r));
            if (q < 0) q = 0;
            if (q >= static_cast<long long>(resolution)) q = static_cast<long long>(resolution) - 1;
            idx[a] = static_cast<std::size_t>(q);
        }
        cells[i] = (idx[2] * resolution + idx[1]) * resolution + idx[0];
    }
    return cells;
}

VoxelGrid voxelize(const PointCloud& pc, std::size_t resolution) {
    pc.validate();
    if (!pc.normalized) throw std::invalid_argument("voxelize: point cloud must be normalized");
    if (!pc.has_features()) throw std::invalid_argument("voxelize: point cloud has no features");
    const std::size_t D = pc.features.front().size();
    for (const auto& f : pc.features) {
        if (f.size() != D) throw std::invalid_argument("voxelize: ragged feature rows");
    }
    VoxelGrid grid;
    grid.resolution = resolution;
    grid.channels = D;
    grid.values.assign(grid.cell_count() * D, 0.0);
    grid.counts.assign(grid.cell_count(), 0);
    const auto cells = voxel_cells(pc.coords, resolution);
    for (std::size_t i = 0; i < pc.size(); ++i) {
        double* cell = grid.values.data() + cells[i] * D;
        for (std::size_t j = 0; j < D; ++j) cell[j] += pc.features[i][j];
        ++grid.counts[cells[i]];
    }
    for (std::size_t c = 0; c < grid.cell_count(); ++c) {
        if (grid.counts[c] > 0) {
            const double inv = 1.0 / static_cast<double>(grid.counts[c]);
            double* cell = grid.values.data() + c * D;
            for (std::size_t j = 0; j < D; ++j) cell[j] *= inv;
        }
    }
    return grid;
}

TrilinearTable trilinear_table(const std::vector<Vec3>& queries, std::size_t resolution) {
    if (resolution == 0) throw std::invalid_argument("trilinear_table: resolution must be positive");
    const auto L = static_cast<long long>(resolution);
    TrilinearTable table;
    table.indices.resize(queries.size() * 8);
    table.weights.resize(queries.size() * 8);
    for (std::size_t m = 0; m < queries.size(); ++m) {
        long long lo[3];
        long long hi[3];
        double frac[3];
        for (std::size_t a = 0; a < 3; ++a) {
            const double q = queries[m][a];
            if (q < 0.0 || q > 1.0) {
                throw std::out_of_range("trilinear_query: query " + std::to_string(m) +
                                        " coordinate " + std::to_string(q) + " outside [0,1]");
            }
            const double g = q * static_cast<double>(resolution) - 0.5;
            double base = std::floor(g);
            frac[a] = g - base;
            long long b = static_cast<long long>(base);
            lo[a] = std::clamp(b, 0LL, L - 1);
            hi[a] = std::clamp(b + 1, 0LL, L - 1);
        }
        for (std::size_t corner = 0; corner < 8; ++corner) {
            const bool cx = corner & 1, cy = corner & 2, cz = corner & 4;
            const long long ix = cx ? hi[0] : lo[0];
            const long long iy = cy ? hi[1] : lo[1];
            const long long iz = cz ? hi[2] : lo[2];
            double w = (cx ? frac[0] : 1.0 - frac[0]) * (cy ? frac[1] : 1.0 - frac[1]) *
                       (cz ? frac[2] : 1.0 - frac[2]);
            table.indices[m * 8 + corner] =
                static_cast<std::size_t>((iz * L + iy) * L + ix);
            table.weights[m * 8 + corner] = w;
        }
    }
    return table;
}

std::vector<std::vector<double>> trilinear_query(const VoxelGrid& grid,
                                                 const std::vector<Vec3>& queries) {
    const TrilinearTable table = trilinear_table(queries, grid.resolution);
    std::vector<std::vector<double>> out(queries.size(), std::vector<double>(grid.channels, 0.0));
    for (std::size_t m = 0; m < queries.size(); ++m) {
        for (std::size_t k = 0; k < 8; ++k) {
            const double w = table.weights[m * 8 + k];
            const double* cell = grid.cell(table.indices[m * 8 + k]);
            for (std::size_t j = 0; j < grid.channels; ++j) out[m][j] += w * cell[j];
        }
    }
    return out;
}

namespace {

std::size_t argmax_distance(const std::vector<double>& dist,
                            const std::vector<std::size_t>& candidates) {
    std::size_t best = candidates.front();
    double best_d = -1.0;
    for (std::size_t i : candidates) {
        if (dist[i] > best_d) {
            best_d = dist[i];
            best = i;
        }
    }
    return best;
}

}  // namespace

std::vector<std::size_t> farthest_point_sampling(const PointCloud& pc, std::size_t count,
                                                 std::size_t seed_index) {
    const std::size_t n = pc.size();
    if (count > n) {
        throw std::invalid_argument("farthest_point_sampling: requested " + std::to_string(count) +
                                    " of " + std::to_string(n) + " points");
    }
    if (count == 0) return {};
    if (seed_index >= n) throw std::out_of_range("farthest_point_sampling: seed index out of range");
    std::vector<std::size_t> selected;
    selected.reserve(count);
    selected.push_back(seed_index);
    std::vector<char> taken(n, 0);
    taken[seed_index] = 1;
    std::vector<double> dist(n);
    for (std::size_t i = 0; i < n; ++i) dist[i] = squared_distance(pc.coords[i], pc.coords[seed_index]);
    while (selected.size() < count) {
        // Ties resolve to the lowest index because > is strict.
        std::size_t best = n;
        double best_d = -1.0;
        for (std::size_t i = 0; i < n; ++i) {
            if (!taken[i] && dist[i] > best_d) {
                best_d = dist[i];
                best = i;
            }
        }
        selected.push_back(best);
        taken[best] = 1;
        for (std::size_t i = 0; i < n; ++i) {
            dist[i] = std::min(dist[i], squared_distance(pc.coords[i], pc.coords[best]));
        }
    }
    return selected;
}

std::vector<std::size_t> farthest_point_extend(const std::vector<Vec3>& coords,
                                               const std::vector<std::size_t>& candidates,
                                               const std::vector<std::size_t>& chosen,
                                               std::size_t count) {
    if (count > candidates.size()) {
        throw std::invalid_argument("farthest_point_extend: requested " + std::to_string(count) +
                                    " of " + std::to_string(candidates.size()) + " candidates");
    }
    if (count == 0) return {};
    std::vector<double> dist(coords.size(), std::numeric_limits<double>::infinity());
    for (std::size_t c : chosen) {
        for (std::size_t i : candidates) {
            dist[i] = std::min(dist[i], squared_distance(coords[i], coords[c]));
        }
    }
    std::vector<std::size_t> remaining = candidates;
    std::vector<std::size_t> selected;
    selected.reserve(count);
    while (selected.size() < count) {
        const std::size_t best = argmax_distance(dist, remaining);
        selected.push_back(best);
        remaining.erase(std::find(remaining.begin(), remaining.end(), best));
        if (remaining.empty()) break;
        for (std::size_t i : remaining) {
            dist[i] = std::min(dist[i], squared_distance(coords[i], coords[best]));
        }
    }
    return selected;
}

KnnResult knn_with_distances(const PointCloud& pc, std::size_t k) {
    const std::size_t n = pc.size();
    if (k < 1 || k >= n) {
        throw std::invalid_argument("knn: k must satisfy 1 <= k <= N-1, got k=" + std::to_string(k) +
                                    " with N=" + std::to_string(n));
    }
    KnnResult result;
    result.indices.assign(n, {});
    result.sq_distances.assign(n, {});
    std::vector<std::pair<double, std::size_t>> order(n - 1);
    for (std::size_t i = 0; i < n; ++i) {
        std::size_t w = 0;
        for (std::size_t j = 0; j < n; ++j) {
            if (j == i) continue;
            order[w++] = {squared_distance(pc.coords[i], pc.coords[j]), j};
        }
        std::partial_sort(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(k), order.end());
        result.indices[i].resize(k);
        result.sq_distances[i].resize(k);
        for (std::size_t t = 0; t < k; ++t) {
            result.sq_distances[i][t] = order[t].first;
            result.indices[i][t] = order[t].second;
        }
    }
    return result;
}

std::vector<std::vector<std::size_t>> knn(const PointCloud& pc, std::size_t k) {
    return knn_with_distances(pc, k).indices;
}

}  // namespace pcd::geom
