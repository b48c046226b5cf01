#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <set>

#include "pcdiff/rng.hpp"
#include "pcdiff/spectral.hpp"
#include "support/oracles.hpp"

using namespace pcd;
using namespace pcd::spectral;

namespace {

geom::PointCloud random_cloud(std::size_t n, Rng& rng) {
    geom::PointCloud pc;
    pc.coords.resize(n);
    for (auto& c : pc.coords) c = {rng.uniform(), rng.uniform(), rng.uniform()};
    return pc;
}

/// Random graph with SYMMETRIC raw weights (mutual-kNN mask + Gaussian
/// weights), so the eigendecomposition oracle can use the similarity to a
/// symmetric matrix. The row-normalized adjacency itself stays asymmetric.
SpatialGraph random_symmetric_graph(std::size_t n, std::size_t k, Rng& rng,
                                    oracle::Matrix* raw_out) {
    const geom::PointCloud pc = random_cloud(n, rng);
    const auto res = geom::knn_with_distances(pc, k);
    oracle::Matrix raw(n, std::vector<double>(n, 0.0));
    const double bw = default_bandwidth(pc, k);
    for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t t = 0; t < k; ++t) {
            const std::size_t j = res.indices[i][t];
            const double w = std::exp(-res.sq_distances[i][t] / (bw * bw));
            raw[i][j] = w;
            raw[j][i] = w;  // symmetrize the mask and the weight
        }
    }
    std::vector<std::vector<std::size_t>> neighbors(n);
    std::vector<std::vector<double>> weights(n);
    for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t j = 0; j < n; ++j) {
            if (raw[i][j] > 0.0) {
                neighbors[i].push_back(j);
                weights[i].push_back(raw[i][j]);
            }
        }
    }
    if (raw_out) *raw_out = raw;
    return SpatialGraph::from_raw_weights(std::move(neighbors), weights);
}

}  // namespace

TEST_CASE("build_graph: two mutual neighbors, equidistant triangle, duplicates") {
    geom::PointCloud two;
    two.coords = {{0, 0, 0}, {1, 0, 0}};
    SpatialGraph g = build_graph(two, 1);
    const auto w = g.dense_weighted();
    CHECK(w[0][1] == 1.0);
    CHECK(w[1][0] == 1.0);
    CHECK(w[0][0] == 0.0);

    // equilateral triangle, k=2: every off-diagonal weight 0.5
    geom::PointCloud tri;
    tri.coords = {{0, 0, 0}, {1, 0, 0}, {0.5, std::sqrt(3.0) / 2.0, 0}};
    SpatialGraph g3 = build_graph(tri, 2);
    const auto w3 = g3.dense_weighted();
    for (std::size_t i = 0; i < 3; ++i) {
        for (std::size_t j = 0; j < 3; ++j) {
            if (i == j) {
                CHECK(w3[i][j] == 0.0);
            } else {
                CHECK(w3[i][j] == doctest::Approx(0.5).epsilon(1e-12));
            }
        }
    }

    // duplicate points: distance 0 becomes weight 1 pre-normalization
    geom::PointCloud dup;
    dup.coords = {{0.3, 0.3, 0.3}, {0.3, 0.3, 0.3}, {0.9, 0.9, 0.9}};
    SpatialGraph gd = build_graph(dup, 1, 0.5);
    const auto wd = gd.dense_weighted();
    CHECK(wd[0][1] == 1.0);
    CHECK(wd[1][0] == 1.0);

    // structural invariants: k ones per unweighted row, zero diagonal,
    // weighted rows sum to 1
    Rng rng(5);
    geom::PointCloud pc = random_cloud(24, rng);
    SpatialGraph gr = build_graph(pc, 4);
    const auto au = gr.dense_unweighted();
    const auto aw = gr.dense_weighted();
    for (std::size_t i = 0; i < 24; ++i) {
        CHECK(au[i][i] == 0.0);
        double ones = 0.0, total = 0.0;
        for (std::size_t j = 0; j < 24; ++j) {
            ones += au[i][j];
            total += aw[i][j];
            CHECK(aw[i][j] >= 0.0);
        }
        CHECK(ones == 4.0);
        CHECK(total == doctest::Approx(1.0).epsilon(1e-12));
    }
}

TEST_CASE("high_pass_filter: constant annihilation and hand line example") {
    Rng rng(15);
    geom::PointCloud pc = random_cloud(30, rng);
    SpatialGraph g = build_graph(pc, 6);
    std::vector<double> constant(30 * 2, 3.7);
    const auto out = high_pass_filter(g, constant, 2);
    for (double v : out) CHECK(std::abs(v) < 1e-12);

    // 3 points on a line at x = 0,1,2 with k=2: the middle point's filtered
    // x-coordinate is 1 - (0.5*0 + 0.5*2) = 0.
    geom::PointCloud line;
    line.coords = {{0, 0, 0}, {1, 0, 0}, {2, 0, 0}};
    SpatialGraph gl = build_graph(line, 2, 1.0);
    std::vector<double> xs = {0.0, 1.0, 2.0};
    const auto fl = high_pass_filter(gl, xs, 1);
    CHECK(fl[1] == doctest::Approx(0.0).epsilon(1e-12));
}

TEST_CASE("high_pass_filter equals dense eigendecomposition oracle") {
    Rng rng(31);
    for (int trial = 0; trial < 5; ++trial) {
        oracle::Matrix raw;
        SpatialGraph g = random_symmetric_graph(16, 3, rng, &raw);
        std::vector<double> signal(16 * 2);
        for (double& v : signal) v = rng.uniform(-1.0, 1.0);
        const auto mine = high_pass_filter(g, signal, 2);
        const auto ref = oracle::high_pass_via_eig(raw, signal, 2);
        for (std::size_t i = 0; i < mine.size(); ++i) {
            CHECK(std::abs(mine[i] - ref[i]) < 1e-8);
        }
    }
}

TEST_CASE("eigenvector frequency response: filter scales by (1 - lambda)") {
    Rng rng(37);
    oracle::Matrix raw;
    SpatialGraph g = random_symmetric_graph(12, 3, rng, &raw);
    const auto eig = oracle::row_normalized_eig(raw);
    for (std::size_t j = 0; j < 12; ++j) {
        std::vector<double> v(12);
        for (std::size_t i = 0; i < 12; ++i) v[i] = eig.eigenvectors[i][j];
        const auto filtered = high_pass_filter(g, v, 1);
        for (std::size_t i = 0; i < 12; ++i) {
            CHECK(std::abs(filtered[i] - (1.0 - eig.eigenvalues[j]) * v[i]) < 1e-8);
        }
    }
}

TEST_CASE("frequency_order: degenerate cloud, corners beat interior, oracle sort") {
    // all points identical: zero scores, identity order
    geom::PointCloud same;
    same.coords.assign(6, {0.25, 0.5, 0.75});
    SpatialGraph gs = build_graph(same, 2);
    const auto fs = frequency_order(same, gs);
    for (double s : fs.scores) CHECK(s == 0.0);
    for (std::size_t i = 0; i < 6; ++i) CHECK(fs.order[i] == i);

    // cube corners + face-center interior points: corners score higher
    geom::PointCloud cube;
    for (double x : {0.0, 1.0})
        for (double y : {0.0, 1.0})
            for (double z : {0.0, 1.0}) cube.coords.push_back({x, y, z});
    cube.coords.push_back({0.5, 0.5, 0.0});
    cube.coords.push_back({0.5, 0.5, 1.0});
    cube.coords.push_back({0.5, 0.0, 0.5});
    cube.coords.push_back({0.5, 1.0, 0.5});
    SpatialGraph gc = build_graph(cube, 4);
    const auto fc = frequency_order(cube, gc);
    double min_corner = 1e300, max_interior = 0.0;
    for (std::size_t i = 0; i < 8; ++i) min_corner = std::min(min_corner, fc.scores[i]);
    for (std::size_t i = 8; i < 12; ++i) max_interior = std::max(max_interior, fc.scores[i]);
    CHECK(min_corner > max_interior);

    // top-M equals an exhaustive sort of brute-force filter responses
    Rng rng(53);
    geom::PointCloud pc = random_cloud(40, rng);
    SpatialGraph g = build_graph(pc, 5);
    const auto f = frequency_order(pc, g);
    const auto dense = g.dense_weighted();
    std::vector<std::pair<double, std::size_t>> brute(40);
    for (std::size_t i = 0; i < 40; ++i) {
        double acc[3] = {pc.coords[i].x, pc.coords[i].y, pc.coords[i].z};
        for (std::size_t j = 0; j < 40; ++j) {
            acc[0] -= dense[i][j] * pc.coords[j].x;
            acc[1] -= dense[i][j] * pc.coords[j].y;
            acc[2] -= dense[i][j] * pc.coords[j].z;
        }
        brute[i] = {-std::sqrt(acc[0] * acc[0] + acc[1] * acc[1] + acc[2] * acc[2]), i};
    }
    std::stable_sort(brute.begin(), brute.end());
    for (std::size_t m = 0; m < 10; ++m) CHECK(f.order[m] == brute[m].second);
}

TEST_CASE("frequency_order is invariant to rigid translation") {
    Rng rng(59);
    geom::PointCloud pc = random_cloud(25, rng);
    SpatialGraph g = build_graph(pc, 4);
    const auto base = frequency_order(pc, g);

    geom::PointCloud moved = pc;
    for (auto& c : moved.coords) {
        c.x += 11.0;
        c.y -= 3.5;
        c.z += 0.25;
    }
    SpatialGraph gm = build_graph(moved, 4);
    const auto shifted = frequency_order(moved, gm);
    for (std::size_t i = 0; i < 25; ++i) {
        CHECK(std::abs(base.scores[i] - shifted.scores[i]) < 1e-9);
    }
    CHECK(base.order == shifted.order);
}

TEST_CASE("time_variant_sample: branch semantics and uniqueness") {
    Rng rng(61);
    geom::PointCloud pc = random_cloud(300, rng);
    SpatialGraph g = build_graph(pc, 8);

    // zeta = 0 degenerates to plain FPS for any t
    const auto fps = geom::farthest_point_sampling(pc, 32, 0);
    CHECK(time_variant_sample(pc, 32, 0, 50, 0.0, g) == fps);
    CHECK(time_variant_sample(pc, 32, 999, 50, 0.0, g) == fps);

    // reference split: M=256, zeta=0.875 -> 224 frequency + 32 FPS
    CHECK(high_pass_count(0.875, 256) == 224);
    const auto mixed = time_variant_sample(pc, 256, 10, 50, 0.875, g);
    CHECK(mixed.size() == 256);
    const auto fs = frequency_order(pc, g);
    for (std::size_t m = 0; m < 224; ++m) CHECK(mixed[m] == fs.order[m]);

    // tau boundary at tau=50: t=49 and t=50 mix, t=51 is pure FPS
    const auto at_49 = time_variant_sample(pc, 64, 49, 50, 0.875, g);
    const auto at_50 = time_variant_sample(pc, 64, 50, 50, 0.875, g);
    const auto at_51 = time_variant_sample(pc, 64, 51, 50, 0.875, g);
    CHECK(at_49 == at_50);
    CHECK(at_51 == geom::farthest_point_sampling(pc, 64, 0));
    CHECK(at_49 != at_51);

    // uniqueness and exact M across a parameter sweep
    for (const double zeta : {0.0, 0.25, 0.5, 0.875, 1.0}) {
        for (const std::size_t t : {std::size_t{0}, std::size_t{5}, std::size_t{80}}) {
            const auto idx = time_variant_sample(pc, 100, t, 5, zeta, g);
            CHECK(idx.size() == 100);
            std::set<std::size_t> unique(idx.begin(), idx.end());
            CHECK(unique.size() == 100);
        }
    }

    CHECK_THROWS(time_variant_sample(pc, 301, 0, 50, 0.5, g));

    // round-half-down tie rule
    CHECK(high_pass_count(0.5, 63) == 31);   // 31.5 rounds down
    CHECK(high_pass_count(0.25, 2) == 0);    // 0.5 rounds down
    CHECK(high_pass_count(1.0, 64) == 64);
    CHECK(high_pass_count(0.0, 64) == 0);
}
