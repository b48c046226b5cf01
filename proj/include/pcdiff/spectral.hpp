#pragma once

#include <cstddef>
#include <vector>

#include "pcdiff/geometry.hpp"

namespace pcd::spectral {

/// k-NN graph over a point cloud: a 0/1 neighborhood and a row-stochastic
/// Gaussian-weighted adjacency over the same edge set. Stored sparsely
/// (k entries per row); dense exports exist for oracle tests.
struct SpatialGraph {
    std::size_t n = 0;
    std::size_t k = 0;
    double bandwidth = 0.0;
    std::vector<std::vector<std::size_t>> neighbors;  // k per row, no self-loops
    std::vector<std::vector<double>> weights;         // rows sum to 1

    std::vector<std::vector<double>> dense_unweighted() const;
    std::vector<std::vector<double>> dense_weighted() const;

    /// Builds a graph from explicit neighbor lists and raw non-negative edge
    /// weights; rows are normalized to sum 1.
    static SpatialGraph from_raw_weights(std::vector<std::vector<std::size_t>> neighbors,
                                         const std::vector<std::vector<double>>& raw_weights);
};

/// Mean k-NN distance of the cloud; the default Gaussian bandwidth.
double default_bandwidth(const geom::PointCloud& pc, std::size_t k);

/// k-NN graph with edge weights exp(-|xi-xj|^2 / bandwidth^2), rows
/// normalized to sum 1. bandwidth <= 0 selects the default (mean k-NN
/// distance).
SpatialGraph build_graph(const geom::PointCloud& pc, std::size_t k, double bandwidth = 0.0);

/// Applies I - A_w row-wise: out_i = signal_i - sum_j w_ij * signal_j.
/// `signal` is n rows by d columns, row-major.
std::vector<double> high_pass_filter(const SpatialGraph& graph, const std::vector<double>& signal,
                                     std::size_t d);

/// Per-point l2 norms of the filtered coordinates plus the descending order
/// (score ties broken by index).
struct FrequencyScore {
    std::vector<double> scores;
    std::vector<std::size_t> order;  // permutation, scores[order] non-increasing
};

FrequencyScore frequency_order(const geom::PointCloud& pc, const SpatialGraph& graph);

/// Timestep-dependent subsampling: for t <= tau, round-half-down(zeta*M)
/// top-frequency points plus an FPS continuation over the complement
/// (seeded from the top-scoring selected point); for t > tau, plain FPS.
/// The graph is only consulted on the t <= tau branch and may be empty
/// otherwise.
std::vector<std::size_t> time_variant_sample(const geom::PointCloud& pc, std::size_t M,
                                             std::size_t t, std::size_t tau, double zeta,
                                             const SpatialGraph& graph,
                                             std::size_t fps_seed = 0);

/// Number of high-pass points the mixed branch selects: round(zeta*M) with
/// exact halves resolved downward.
std::size_t high_pass_count(double zeta, std::size_t M);

}  // namespace pcd::spectral
