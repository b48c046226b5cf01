#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <fstream>

#include "pcdiff/io.hpp"
#include "pcdiff/rng.hpp"

using namespace pcd;
using namespace pcd::io;

namespace {

std::filesystem::path temp_dir() {
    const auto dir = std::filesystem::temp_directory_path() / "pcdiff_io_test";
    std::filesystem::create_directories(dir);
    return dir;
}

}  // namespace

TEST_CASE("xyz round-trip, score column, malformed input") {
    const auto dir = temp_dir();
    Rng rng(401);
    geom::PointCloud pc;
    for (int i = 0; i < 40; ++i) {
        pc.coords.push_back({rng.uniform(), rng.uniform(), rng.uniform()});
    }
    const std::string p3 = (dir / "plain.xyz").string();
    write_xyz(pc, p3);
    const geom::PointCloud back = read_xyz(p3);
    REQUIRE(back.size() == pc.size());
    for (std::size_t i = 0; i < pc.size(); ++i) {
        for (std::size_t a = 0; a < 3; ++a) {
            CHECK(std::abs(back.coords[i][a] - pc.coords[i][a]) < 1e-9);
        }
    }
    CHECK(!back.has_features());

    // 4-column file populates the score channel
    pc.features.assign(pc.size(), {0.0});
    for (std::size_t i = 0; i < pc.size(); ++i) pc.features[i][0] = rng.uniform(-5.0, 5.0);
    const std::string p4 = (dir / "scored.xyz").string();
    write_xyz(pc, p4);
    const geom::PointCloud scored = read_xyz(p4);
    REQUIRE(scored.has_features());
    for (std::size_t i = 0; i < pc.size(); ++i) {
        CHECK(std::abs(scored.features[i][0] - pc.features[i][0]) < 1e-9);
    }

    // empty file is an error, not an empty cloud
    const std::string empty = (dir / "empty.xyz").string();
    std::ofstream(empty).close();
    CHECK_THROWS_WITH_AS(read_xyz(empty), doctest::Contains("no points"), std::runtime_error);

    // malformed rows name the line
    const std::string bad = (dir / "bad.xyz").string();
    {
        std::ofstream out(bad);
        out << "0 0 0\n0 banana 0\n";
    }
    CHECK_THROWS_WITH_AS(read_xyz(bad), doctest::Contains(":2"), std::runtime_error);

    const std::string ragged = (dir / "ragged.xyz").string();
    {
        std::ofstream out(ragged);
        out << "0 0 0\n1 1 1 0.5\n";
    }
    CHECK_THROWS_WITH_AS(read_xyz(ragged), doctest::Contains("inconsistent"), std::runtime_error);

    write_ply(pc, (dir / "cloud.ply").string());
    CHECK(std::filesystem::file_size(dir / "cloud.ply") > pc.size() * 24);
}

TEST_CASE("run config: full-scale defaults, unknown keys, idempotent round-trip") {
    const RunConfig defaults = parse_run_config("");
    CHECK(defaults.k == 32);
    CHECK(defaults.zeta == 0.875);
    CHECK(defaults.tau == 50);
    CHECK(defaults.t == 1000);
    CHECK(defaults.depth == 8);
    CHECK(defaults.d == 512);
    CHECK(defaults.m == 256);
    CHECK(defaults.n == 2048);
    CHECK(defaults.batch == 32);
    CHECK(defaults.lr == 2e-4);

    const RunConfig parsed = parse_run_config("n = 256\nzeta = 0.5\n# comment\nshape = torus\n");
    CHECK(parsed.n == 256);
    CHECK(parsed.zeta == 0.5);
    CHECK(parsed.shape == "torus");
    CHECK(parsed.k == 32);  // untouched default

    CHECK_THROWS_WITH_AS(parse_run_config("banana = 7\n"), doctest::Contains("unknown key"),
                         std::runtime_error);
    CHECK_THROWS_WITH_AS(parse_run_config("n 256\n"), doctest::Contains("key = value"),
                         std::runtime_error);

    const std::string text = serialize_run_config(parsed);
    const RunConfig again = parse_run_config(text);
    CHECK(serialize_run_config(again) == text);
}

TEST_CASE("synthetic datasets: determinism, normalization, construction checks") {
    const auto a = synth_dataset(ShapeKind::sphere, 4, 128, 7);
    const auto b = synth_dataset(ShapeKind::sphere, 4, 128, 7);
    REQUIRE(a.size() == 4);
    for (std::size_t c = 0; c < 4; ++c) {
        REQUIRE(a[c].size() == 128);
        for (std::size_t i = 0; i < 128; ++i) {
            CHECK(a[c].coords[i].x == b[c].coords[i].x);
            CHECK(a[c].coords[i].y == b[c].coords[i].y);
            CHECK(a[c].coords[i].z == b[c].coords[i].z);
        }
    }
    const auto other_seed = synth_dataset(ShapeKind::sphere, 1, 128, 8);
    CHECK(other_seed[0].coords[0].x != a[0].coords[0].x);

    // sphere points sit on the per-cloud radius
    for (const auto& cloud : a) {
        double r0 = -1.0;
        for (const auto& p : cloud.coords) {
            const double r = std::sqrt((p.x - 0.5) * (p.x - 0.5) + (p.y - 0.5) * (p.y - 0.5) +
                                       (p.z - 0.5) * (p.z - 0.5));
            if (r0 < 0.0) r0 = r;
            CHECK(std::abs(r - r0) < 1e-6);
        }
    }

    // every shape kind stays inside the unit cube with exactly n points
    for (const ShapeKind kind :
         {ShapeKind::sphere, ShapeKind::cube_edges, ShapeKind::torus, ShapeKind::two_planes}) {
        const auto set = synth_dataset(kind, 2, 96, 11);
        for (const auto& cloud : set) {
            CHECK(cloud.size() == 96);
            CHECK(cloud.normalized);
            cloud.validate();
        }
    }

    // cube_edges: at least 60% of points within 0.05 of an edge
    const auto cubes = synth_dataset(ShapeKind::cube_edges, 3, 256, 13);
    for (const auto& cloud : cubes) {
        // recover the cube bounds from the cloud extent
        geom::Vec3 lo = cloud.coords.front(), hi = cloud.coords.front();
        for (const auto& p : cloud.coords) {
            for (std::size_t ax = 0; ax < 3; ++ax) {
                lo[ax] = std::min(lo[ax], p[ax]);
                hi[ax] = std::max(hi[ax], p[ax]);
            }
        }
        std::size_t near_edge = 0;
        for (const auto& p : cloud.coords) {
            // nearest edge pins the two axes with the smallest face distances
            double d[3];
            for (std::size_t ax = 0; ax < 3; ++ax) {
                d[ax] = std::min(std::abs(p[ax] - lo[ax]), std::abs(p[ax] - hi[ax]));
            }
            std::sort(d, d + 3);
            const double edge_dist = std::sqrt(d[0] * d[0] + d[1] * d[1]);
            if (edge_dist <= 0.05) ++near_edge;
        }
        CHECK(near_edge >= cloud.size() * 60 / 100);
    }

    CHECK_THROWS(synth_dataset(ShapeKind::sphere, 0, 10, 1));
    CHECK_THROWS(parse_shape_kind("pyramid"));
    CHECK(parse_shape_kind(shape_kind_name(ShapeKind::torus)) == ShapeKind::torus);
}
