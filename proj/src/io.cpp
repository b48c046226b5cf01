#include "pcdiff/io.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <sstream>
#include <stdexcept>

namespace pcd::io {

geom::PointCloud read_xyz(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("read_xyz: cannot open '" + path + "'");
    geom::PointCloud pc;
    std::string line;
    std::size_t line_no = 0;
    int columns = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (line.find_first_not_of(" \t\r\n") == std::string::npos) continue;
        std::istringstream row(line);
        double v[4];
        int got = 0;
        while (got < 4 && (row >> v[got])) ++got;
        std::string trailing;
        if (row >> trailing) {
            throw std::runtime_error("read_xyz: " + path + ":" + std::to_string(line_no) +
                                     ": too many columns");
        }
        if (got < 3) {
            throw std::runtime_error("read_xyz: " + path + ":" + std::to_string(line_no) +
                                     ": expected 3 or 4 decimal columns");
        }
        for (int i = 0; i < got; ++i) {
            if (!std::isfinite(v[i])) {
                throw std::runtime_error("read_xyz: " + path + ":" + std::to_string(line_no) +
                                         ": non-finite value");
            }
        }
        if (columns == 0) columns = got;
        if (got != columns) {
            throw std::runtime_error("read_xyz: " + path + ":" + std::to_string(line_no) +
                                     ": inconsistent column count");
        }
        pc.coords.push_back({v[0], v[1], v[2]});
        if (columns == 4) pc.features.push_back({v[3]});
    }
    if (pc.coords.empty()) throw std::runtime_error("read_xyz: '" + path + "' contains no points");
    return pc;
}

void write_xyz(const geom::PointCloud& pc, const std::string& path) {
    std::ofstream out(path);
    if (!out) throw std::runtime_error("write_xyz: cannot open '" + path + "' for writing");
    const bool with_score = pc.has_features() && pc.features.front().size() == 1;
    char buf[160];
    for (std::size_t i = 0; i < pc.size(); ++i) {
        const auto& c = pc.coords[i];
        if (with_score) {
            std::snprintf(buf, sizeof(buf), "%.12g %.12g %.12g %.12g\n", c.x, c.y, c.z,
                          pc.features[i][0]);
        } else {
            std::snprintf(buf, sizeof(buf), "%.12g %.12g %.12g\n", c.x, c.y, c.z);
        }
        out << buf;
    }
    if (!out) throw std::runtime_error("write_xyz: write failed for '" + path + "'");
}

void write_ply(const geom::PointCloud& pc, const std::string& path) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw std::runtime_error("write_ply: cannot open '" + path + "' for writing");
    out << "ply\nformat binary_little_endian 1.0\n";
    out << "element vertex " << pc.size() << "\n";
    out << "property double x\nproperty double y\nproperty double z\nend_header\n";
    for (const auto& c : pc.coords) {
        for (double v : {c.x, c.y, c.z}) {
            std::uint64_t bits;
            static_assert(sizeof(bits) == sizeof(v));
            std::memcpy(&bits, &v, sizeof(v));
            unsigned char le[8];
            for (int b = 0; b < 8; ++b) le[b] = static_cast<unsigned char>(bits >> (8 * b));
            out.write(reinterpret_cast<const char*>(le), 8);
        }
    }
    if (!out) throw std::runtime_error("write_ply: write failed for '" + path + "'");
}

namespace {

[[noreturn]] void bad_value(const std::string& key, const std::string& value) {
    throw std::runtime_error("config: invalid value '" + value + "' for key '" + key + "'");
}

std::size_t parse_size(const std::string& key, const std::string& value) {
    try {
        const long long v = std::stoll(value);
        if (v < 0) bad_value(key, value);
        return static_cast<std::size_t>(v);
    } catch (const std::logic_error&) {
        bad_value(key, value);
    }
}

double parse_double(const std::string& key, const std::string& value) {
    try {
        return std::stod(value);
    } catch (const std::logic_error&) {
        bad_value(key, value);
    }
}

std::string trim(const std::string& s) {
    const auto a = s.find_first_not_of(" \t\r\n");
    if (a == std::string::npos) return "";
    const auto b = s.find_last_not_of(" \t\r\n");
    return s.substr(a, b - a + 1);
}

}  // namespace

RunConfig parse_run_config(const std::string& text) {
    RunConfig c;
    std::istringstream in(text);
    std::string line;
    std::size_t line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        const auto hash = line.find('#');
        if (hash != std::string::npos) line = line.substr(0, hash);
        line = trim(line);
        if (line.empty()) continue;
        const auto eq = line.find('=');
        if (eq == std::string::npos) {
            throw std::runtime_error("config line " + std::to_string(line_no) +
                                     ": expected 'key = value'");
        }
        const std::string key = trim(line.substr(0, eq));
        const std::string value = trim(line.substr(eq + 1));
        if (key == "shape") c.shape = value;
        else if (key == "n") c.n = parse_size(key, value);
        else if (key == "m") c.m = parse_size(key, value);
        else if (key == "d") c.d = parse_size(key, value);
        else if (key == "depth") c.depth = parse_size(key, value);
        else if (key == "curve1") c.curve1 = value;
        else if (key == "curve2") c.curve2 = value;
        else if (key == "k") c.k = parse_size(key, value);
        else if (key == "zeta") c.zeta = parse_double(key, value);
        else if (key == "tau") c.tau = parse_size(key, value);
        else if (key == "t") c.t = parse_size(key, value);
        else if (key == "l") c.l = parse_size(key, value);
        else if (key == "batch") c.batch = parse_size(key, value);
        else if (key == "lr") c.lr = parse_double(key, value);
        else if (key == "epochs") c.epochs = parse_size(key, value);
        else if (key == "seed") c.seed = parse_size(key, value);
        else throw std::runtime_error("config line " + std::to_string(line_no) + ": unknown key '" + key + "'");
    }
    return c;
}

RunConfig load_run_config(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("config: cannot open '" + path + "'");
    std::ostringstream buf;
    buf << in.rdbuf();
    return parse_run_config(buf.str());
}

std::string serialize_run_config(const RunConfig& c) {
    std::ostringstream os;
    os.precision(17);
    os << "shape = " << c.shape << "\n";
    os << "n = " << c.n << "\n";
    os << "m = " << c.m << "\n";
    os << "d = " << c.d << "\n";
    os << "depth = " << c.depth << "\n";
    os << "curve1 = " << c.curve1 << "\n";
    os << "curve2 = " << c.curve2 << "\n";
    os << "k = " << c.k << "\n";
    os << "zeta = " << c.zeta << "\n";
    os << "tau = " << c.tau << "\n";
    os << "t = " << c.t << "\n";
    os << "l = " << c.l << "\n";
    os << "batch = " << c.batch << "\n";
    os << "lr = " << c.lr << "\n";
    os << "epochs = " << c.epochs << "\n";
    os << "seed = " << c.seed << "\n";
    return os.str();
}

ShapeKind parse_shape_kind(const std::string& name) {
    if (name == "sphere") return ShapeKind::sphere;
    if (name == "cube_edges") return ShapeKind::cube_edges;
    if (name == "torus") return ShapeKind::torus;
    if (name == "two_planes") return ShapeKind::two_planes;
    throw std::invalid_argument("unknown shape '" + name +
                                "' (expected sphere, cube_edges, torus, two_planes)");
}

std::string shape_kind_name(ShapeKind kind) {
    switch (kind) {
        case ShapeKind::sphere: return "sphere";
        case ShapeKind::cube_edges: return "cube_edges";
        case ShapeKind::torus: return "torus";
        case ShapeKind::two_planes: return "two_planes";
    }
    return "?";
}

namespace {

geom::Vec3 unit_direction(Rng& rng) {
    // normalized gaussian triple
    while (true) {
        const geom::Vec3 v{rng.normal(), rng.normal(), rng.normal()};
        const double len = std::sqrt(v.x * v.x + v.y * v.y + v.z * v.z);
        if (len > 1e-9) return {v.x / len, v.y / len, v.z / len};
    }
}

double clamp01(double v) { return std::clamp(v, 0.0, 1.0); }

geom::PointCloud synth_one(ShapeKind kind, std::size_t n, Rng& rng) {
    geom::PointCloud pc;
    pc.coords.reserve(n);
    switch (kind) {
        case ShapeKind::sphere: {
            const double radius = 0.32 * (1.0 + 0.15 * rng.uniform(-1.0, 1.0));
            for (std::size_t i = 0; i < n; ++i) {
                const geom::Vec3 d = unit_direction(rng);
                pc.coords.push_back({0.5 + radius * d.x, 0.5 + radius * d.y, 0.5 + radius * d.z});
            }
            break;
        }
        case ShapeKind::cube_edges: {
            const double half = 0.30 * (1.0 + 0.12 * rng.uniform(-1.0, 1.0));
            const double lo = 0.5 - half, hi = 0.5 + half;
            // the 12 edges as (corner, axis) pairs
            struct Edge {
                geom::Vec3 base;
                std::size_t axis;
            };
            std::vector<Edge> edges;
            for (std::size_t axis = 0; axis < 3; ++axis) {
                for (int b0 : {0, 1}) {
                    for (int b1 : {0, 1}) {
                        geom::Vec3 base{lo, lo, lo};
                        std::size_t other = 0;
                        for (std::size_t a = 0; a < 3; ++a) {
                            if (a == axis) continue;
                            base[a] = (other++ == 0 ? b0 : b1) ? hi : lo;
                        }
                        edges.push_back({base, axis});
                    }
                }
            }
            // 70% on-edge with small jitter, 30% filler inside the cube
            for (std::size_t i = 0; i < n; ++i) {
                if (rng.uniform() < 0.7) {
                    const Edge& e = edges[rng.below(edges.size())];
                    geom::Vec3 p = e.base;
                    p[e.axis] = lo + (hi - lo) * rng.uniform();
                    p.x = clamp01(p.x + 0.01 * rng.normal());
                    p.y = clamp01(p.y + 0.01 * rng.normal());
                    p.z = clamp01(p.z + 0.01 * rng.normal());
                    pc.coords.push_back(p);
                } else {
                    pc.coords.push_back({lo + (hi - lo) * rng.uniform(),
                                         lo + (hi - lo) * rng.uniform(),
                                         lo + (hi - lo) * rng.uniform()});
                }
            }
            break;
        }
        case ShapeKind::torus: {
            const double major = 0.30 * (1.0 + 0.1 * rng.uniform(-1.0, 1.0));
            const double minor = 0.08 * (1.0 + 0.3 * rng.uniform(-1.0, 1.0));
            for (std::size_t i = 0; i < n; ++i) {
                const double u = rng.uniform(0.0, 6.283185307179586);
                const double v = rng.uniform(0.0, 6.283185307179586);
                const double ring = major + minor * std::cos(v);
                pc.coords.push_back({0.5 + ring * std::cos(u), 0.5 + ring * std::sin(u),
                                     0.5 + minor * std::sin(v)});
            }
            break;
        }
        case ShapeKind::two_planes: {
            const double gap = 0.25 * (1.0 + 0.2 * rng.uniform(-1.0, 1.0));
            for (std::size_t i = 0; i < n; ++i) {
                const double z = 0.5 + (i % 2 == 0 ? gap : -gap) / 2.0 + 0.005 * rng.normal();
                pc.coords.push_back({rng.uniform(0.2, 0.8), rng.uniform(0.2, 0.8), clamp01(z)});
            }
            break;
        }
    }
    pc.normalized = true;
    return pc;
}

}  // namespace

std::vector<geom::PointCloud> synth_dataset(ShapeKind kind, std::size_t count, std::size_t n,
                                            std::uint64_t seed) {
    if (count < 1) throw std::invalid_argument("synth_dataset: count must be >= 1");
    if (n < 1) throw std::invalid_argument("synth_dataset: n must be >= 1");
    Rng rng(seed);
    std::vector<geom::PointCloud> out;
    out.reserve(count);
    for (std::size_t i = 0; i < count; ++i) out.push_back(synth_one(kind, n, rng));
    return out;
}

}  // namespace pcd::io
