#include "pcdiff/spectral.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <stdexcept>

namespace pcd::spectral {

std::vector<std::vector<double>> SpatialGraph::dense_unweighted() const {
    std::vector<std::vector<double>> a(n, std::vector<double>(n, 0.0));
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j : neighbors[i]) a[i][j] = 1.0;
    return a;
}

std::vector<std::vector<double>> SpatialGraph::dense_weighted() const {
    std::vector<std::vector<double>> a(n, std::vector<double>(n, 0.0));
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t t = 0; t < neighbors[i].size(); ++t) a[i][neighbors[i][t]] = weights[i][t];
    return a;
}

SpatialGraph SpatialGraph::from_raw_weights(std::vector<std::vector<std::size_t>> neighbors,
                                            const std::vector<std::vector<double>>& raw_weights) {
    SpatialGraph g;
    g.n = neighbors.size();
    g.k = g.n ? neighbors.front().size() : 0;
    g.neighbors = std::move(neighbors);
    g.weights.resize(g.n);
    for (std::size_t i = 0; i < g.n; ++i) {
        if (raw_weights[i].size() != g.neighbors[i].size()) {
            throw std::invalid_argument("SpatialGraph: weight row length mismatch");
        }
        double total = 0.0;
        for (double w : raw_weights[i]) {
            if (w < 0.0) throw std::invalid_argument("SpatialGraph: negative edge weight");
            total += w;
        }
        if (total <= 0.0) throw std::invalid_argument("SpatialGraph: zero weight row");
        g.weights[i].resize(raw_weights[i].size());
        for (std::size_t t = 0; t < raw_weights[i].size(); ++t) g.weights[i][t] = raw_weights[i][t] / total;
    }
    return g;
}

double default_bandwidth(const geom::PointCloud& pc, std::size_t k) {
    const auto res = geom::knn_with_distances(pc, k);
    double sum = 0.0;
    std::size_t count = 0;
    for (const auto& row : res.sq_distances) {
        for (double d2 : row) {
            sum += std::sqrt(d2);
            ++count;
        }
    }
    const double mean = sum / static_cast<double>(count);
    return mean > 0.0 ? mean : 1.0;  // identical-point clouds fall back to 1
}

SpatialGraph build_graph(const geom::PointCloud& pc, std::size_t k, double bandwidth) {
    if (bandwidth <= 0.0) bandwidth = default_bandwidth(pc, k);
    const auto res = geom::knn_with_distances(pc, k);
    SpatialGraph g;
    g.n = pc.size();
    g.k = k;
    g.bandwidth = bandwidth;
    g.neighbors = res.indices;
    g.weights.resize(g.n);
    const double inv_bw2 = 1.0 / (bandwidth * bandwidth);
    for (std::size_t i = 0; i < g.n; ++i) {
        double total = 0.0;
        g.weights[i].resize(k);
        for (std::size_t t = 0; t < k; ++t) {
            const double w = std::exp(-res.sq_distances[i][t] * inv_bw2);
            g.weights[i][t] = w;
            total += w;
        }
        for (std::size_t t = 0; t < k; ++t) g.weights[i][t] /= total;
    }
    return g;
}

std::vector<double> high_pass_filter(const SpatialGraph& graph, const std::vector<double>& signal,
                                     std::size_t d) {
    if (signal.size() != graph.n * d) {
        throw std::invalid_argument("high_pass_filter: signal has " +
                                    std::to_string(signal.size() / std::max<std::size_t>(d, 1)) +
                                    " rows, graph has " + std::to_string(graph.n));
    }
    std::vector<double> out(signal.size());
    for (std::size_t i = 0; i < graph.n; ++i) {
        for (std::size_t c = 0; c < d; ++c) out[i * d + c] = signal[i * d + c];
        for (std::size_t t = 0; t < graph.neighbors[i].size(); ++t) {
            const std::size_t j = graph.neighbors[i][t];
            const double w = graph.weights[i][t];
            for (std::size_t c = 0; c < d; ++c) out[i * d + c] -= w * signal[j * d + c];
        }
    }
    return out;
}

FrequencyScore frequency_order(const geom::PointCloud& pc, const SpatialGraph& graph) {
    if (graph.n != pc.size()) {
        throw std::invalid_argument("frequency_order: graph size does not match point cloud");
    }
    std::vector<double> signal(pc.size() * 3);
    for (std::size_t i = 0; i < pc.size(); ++i) {
        signal[i * 3 + 0] = pc.coords[i].x;
        signal[i * 3 + 1] = pc.coords[i].y;
        signal[i * 3 + 2] = pc.coords[i].z;
    }
    const auto filtered = high_pass_filter(graph, signal, 3);
    FrequencyScore fs;
    fs.scores.resize(pc.size());
    for (std::size_t i = 0; i < pc.size(); ++i) {
        fs.scores[i] = std::sqrt(filtered[i * 3] * filtered[i * 3] +
                                 filtered[i * 3 + 1] * filtered[i * 3 + 1] +
                                 filtered[i * 3 + 2] * filtered[i * 3 + 2]);
    }
    fs.order.resize(pc.size());
    std::iota(fs.order.begin(), fs.order.end(), 0);
    std::stable_sort(fs.order.begin(), fs.order.end(), [&](std::size_t a, std::size_t b) {
        if (fs.scores[a] != fs.scores[b]) return fs.scores[a] > fs.scores[b];
        return a < b;
    });
    return fs;
}

std::size_t high_pass_count(double zeta, std::size_t M) {
    if (zeta < 0.0 || zeta > 1.0) throw std::invalid_argument("high_pass_count: zeta outside [0,1]");
    const double x = zeta * static_cast<double>(M);
    const double rounded = std::ceil(x - 0.5);  // round half down
    return static_cast<std::size_t>(std::max(0.0, rounded));
}

std::vector<std::size_t> time_variant_sample(const geom::PointCloud& pc, std::size_t M,
                                             std::size_t t, std::size_t tau, double zeta,
                                             const SpatialGraph& graph, std::size_t fps_seed) {
    const std::size_t n = pc.size();
    if (M > n) {
        throw std::invalid_argument("time_variant_sample: M=" + std::to_string(M) + " exceeds N=" +
                                    std::to_string(n));
    }
    const std::size_t kf = high_pass_count(zeta, M);
    if (t > tau || kf == 0) {
        return geom::farthest_point_sampling(pc, M, fps_seed);
    }
    const FrequencyScore fs = frequency_order(pc, graph);
    std::vector<std::size_t> selected(fs.order.begin(),
                                      fs.order.begin() + static_cast<std::ptrdiff_t>(std::min(kf, M)));
    if (selected.size() >= M) {
        selected.resize(M);
        return selected;
    }
    std::vector<char> taken(n, 0);
    for (std::size_t i : selected) taken[i] = 1;
    std::vector<std::size_t> complement;
    complement.reserve(n - selected.size());
    for (std::size_t i = 0; i < n; ++i) {
        if (!taken[i]) complement.push_back(i);
    }
    // FPS continuation seeded from the highest-scoring selected point.
    const std::vector<std::size_t> seed = {selected.front()};
    const auto extra = geom::farthest_point_extend(pc.coords, complement, seed, M - selected.size());
    selected.insert(selected.end(), extra.begin(), extra.end());
    return selected;
}

}  // namespace pcd::spectral
