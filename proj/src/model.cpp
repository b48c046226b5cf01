#include "pcdiff/model.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <sstream>
#include <stdexcept>
#include <tuple>

#include "pcdiff/ops.hpp"
#include "pcdiff/spectral.hpp"

namespace pcd::model {

using ad::Tensor;

void ModelConfig::validate() const {
    if (n_points < 2) throw std::invalid_argument("config: n must be >= 2");
    if (latent_points == 0 || latent_points > n_points) {
        throw std::invalid_argument("config: need 1 <= m <= n");
    }
    if (latent_dim == 0 || latent_dim % 2 != 0) throw std::invalid_argument("config: d must be even");
    if (depth < 1) throw std::invalid_argument("config: depth must be >= 1");
    if (voxel_res < 1) throw std::invalid_argument("config: l must be >= 1");
    if (zeta < 0.0 || zeta > 1.0) throw std::invalid_argument("config: zeta must be in [0,1]");
    if (knn_k < 1 || knn_k >= n_points) throw std::invalid_argument("config: need 1 <= k <= n-1");
    if (timesteps < 1) throw std::invalid_argument("config: t must be >= 1");
    if (temb_dim < 2 || temb_dim % 2 != 0) throw std::invalid_argument("config: temb_dim must be even");
    if (enc_hidden == 0 || dec_hidden == 0) throw std::invalid_argument("config: hidden widths must be positive");
    if (gn_groups == 0 || enc_hidden % gn_groups != 0 || dec_hidden % gn_groups != 0) {
        throw std::invalid_argument("config: gn_groups must divide both hidden widths");
    }
    if (nstate == 0 || expand == 0 || conv1d_width == 0 || dt_rank == 0) {
        throw std::invalid_argument("config: ssm knobs must be positive");
    }
    if (curve_bits < 1 || curve_bits > curves::kMaxBits) {
        throw std::invalid_argument("config: curve_bits outside [1,21]");
    }
}

std::string ModelConfig::to_text() const {
    std::ostringstream os;
    os.precision(17);
    os << "n = " << n_points << "\n";
    os << "m = " << latent_points << "\n";
    os << "d = " << latent_dim << "\n";
    os << "depth = " << depth << "\n";
    os << "curve1 = " << curves::curve_kind_name(curve1) << "\n";
    os << "curve2 = " << curves::curve_kind_name(curve2) << "\n";
    os << "l = " << voxel_res << "\n";
    os << "tau = " << tau << "\n";
    os << "zeta = " << zeta << "\n";
    os << "k = " << knn_k << "\n";
    os << "t = " << timesteps << "\n";
    os << "temb_dim = " << temb_dim << "\n";
    os << "enc_hidden = " << enc_hidden << "\n";
    os << "dec_hidden = " << dec_hidden << "\n";
    os << "gn_groups = " << gn_groups << "\n";
    os << "nstate = " << nstate << "\n";
    os << "expand = " << expand << "\n";
    os << "conv1d_width = " << conv1d_width << "\n";
    os << "dt_rank = " << dt_rank << "\n";
    os << "curve_bits = " << curve_bits << "\n";
    return os.str();
}

ModelConfig ModelConfig::from_text(const std::string& text) {
    ModelConfig c;
    std::istringstream in(text);
    std::string line;
    std::size_t line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        const auto hash = line.find('#');
        if (hash != std::string::npos) line = line.substr(0, hash);
        const auto first = line.find_first_not_of(" \t\r\n");
        if (first == std::string::npos) continue;
        const auto eq = line.find('=');
        if (eq == std::string::npos) {
            throw std::runtime_error("model config line " + std::to_string(line_no) +
                                     ": expected 'key = value'");
        }
        auto trim = [](std::string s) {
            const auto a = s.find_first_not_of(" \t\r\n");
            const auto b = s.find_last_not_of(" \t\r\n");
            return a == std::string::npos ? std::string() : s.substr(a, b - a + 1);
        };
        const std::string key = trim(line.substr(0, eq));
        const std::string value = trim(line.substr(eq + 1));
        const auto as_size = [&](std::size_t& out) { out = static_cast<std::size_t>(std::stoull(value)); };
        if (key == "n") as_size(c.n_points);
        else if (key == "m") as_size(c.latent_points);
        else if (key == "d") as_size(c.latent_dim);
        else if (key == "depth") as_size(c.depth);
        else if (key == "curve1") c.curve1 = curves::parse_curve_kind(value);
        else if (key == "curve2") c.curve2 = curves::parse_curve_kind(value);
        else if (key == "l") as_size(c.voxel_res);
        else if (key == "tau") as_size(c.tau);
        else if (key == "zeta") c.zeta = std::stod(value);
        else if (key == "k") as_size(c.knn_k);
        else if (key == "t") as_size(c.timesteps);
        else if (key == "temb_dim") as_size(c.temb_dim);
        else if (key == "enc_hidden") as_size(c.enc_hidden);
        else if (key == "dec_hidden") as_size(c.dec_hidden);
        else if (key == "gn_groups") as_size(c.gn_groups);
        else if (key == "nstate") as_size(c.nstate);
        else if (key == "expand") as_size(c.expand);
        else if (key == "conv1d_width") as_size(c.conv1d_width);
        else if (key == "dt_rank") as_size(c.dt_rank);
        else if (key == "curve_bits") as_size(c.curve_bits);
        else throw std::runtime_error("model config line " + std::to_string(line_no) + ": unknown key '" + key + "'");
    }
    c.validate();
    return c;
}

ModelWeights init_weights(const ModelConfig& config, std::uint64_t seed) {
    config.validate();
    Rng rng(seed);
    const std::size_t D = config.latent_dim, H = config.enc_hidden, Hd = config.dec_hidden,
                      Td = config.temb_dim;
    const std::size_t C0 = 3 + Td;
    const auto fan = [](std::size_t f) { return 1.0 / std::sqrt(static_cast<double>(f)); };

    ModelWeights w;
    w.config = config;
    w.enc_conv1_w = Tensor::randn({H, C0, 3, 3, 3}, rng, fan(C0 * 27));
    w.enc_conv1_b = Tensor::zeros({H});
    w.enc_gn1_gain = Tensor::full({H}, 1.0);
    w.enc_gn1_bias = Tensor::zeros({H});
    w.enc_conv2_w = Tensor::randn({H, H, 3, 3, 3}, rng, fan(H * 27));
    w.enc_conv2_b = Tensor::zeros({H});
    w.enc_gn2_gain = Tensor::full({H}, 1.0);
    w.enc_gn2_bias = Tensor::zeros({H});
    w.enc_conv3_w = Tensor::randn({D, H, 1, 1, 1}, rng, fan(H));
    w.enc_conv3_b = Tensor::zeros({D});
    w.enc_pos_w = Tensor::randn({3, D}, rng, fan(3));
    w.enc_pos_b = Tensor::zeros({D});
    w.enc_temb_w = Tensor::randn({Td, D}, rng, fan(Td));
    w.enc_temb_b = Tensor::zeros({D});

    ssm::MambaDims dims;
    dims.model = D;
    dims.inner = config.inner_dim();
    dims.state = config.nstate;
    dims.conv_width = config.conv1d_width;
    dims.temb = Td;
    dims.dt_rank = config.dt_rank;
    for (std::size_t l = 0; l < config.depth; ++l) w.stream1.push_back(ssm::init_mamba_block(dims, rng));
    for (std::size_t l = 0; l < config.depth; ++l) w.stream2.push_back(ssm::init_mamba_block(dims, rng));

    w.fuse_gamma1 = Tensor::full({D}, 1.0);
    w.fuse_delta1 = Tensor::zeros({D});
    w.fuse_gamma2 = Tensor::full({D}, 1.0);
    w.fuse_delta2 = Tensor::zeros({D});
    w.fuse_w = Tensor::randn({2 * D, D}, rng, fan(2 * D));
    w.fuse_b = Tensor::zeros({D});

    w.dec_conv1_w = Tensor::randn({Hd, D, 1, 1, 1}, rng, fan(D));
    w.dec_conv1_b = Tensor::zeros({Hd});
    w.dec_gn1_gain = Tensor::full({Hd}, 1.0);
    w.dec_gn1_bias = Tensor::zeros({Hd});
    w.dec_conv2_w = Tensor::randn({Hd, Hd, 3, 3, 3}, rng, fan(Hd * 27));
    w.dec_conv2_b = Tensor::zeros({Hd});
    w.dec_gn2_gain = Tensor::full({Hd}, 1.0);
    w.dec_gn2_bias = Tensor::zeros({Hd});
    w.dec_conv3_w = Tensor::randn({D, Hd, 1, 1, 1}, rng, fan(Hd));
    w.dec_conv3_b = Tensor::zeros({D});
    w.dec_pos_w = Tensor::randn({3, D}, rng, fan(3));
    w.dec_pos_b = Tensor::zeros({D});
    w.dec_temb_w = Tensor::randn({Td, D}, rng, fan(Td));
    w.dec_temb_b = Tensor::zeros({D});
    w.head1_w = Tensor::randn({D, D / 2}, rng, fan(D));
    w.head1_b = Tensor::zeros({D / 2});
    w.head2_w = Tensor::randn({D / 2, 3}, rng, 0.02);
    w.head2_b = Tensor::zeros({3});
    w.skip_w = Tensor({3, 3}, {1, 0, 0, 0, 1, 0, 0, 0, 1});
    w.skip_gate_w = Tensor::zeros({Td, 1});  // gate opens only once trained
    w.skip_gate_b = Tensor::zeros({1});
    return w;
}

ad::ParamRefs ModelWeights::named_params() {
    ad::ParamRefs refs;
    refs.emplace_back("enc.conv1.w", &enc_conv1_w);
    refs.emplace_back("enc.conv1.b", &enc_conv1_b);
    refs.emplace_back("enc.gn1.gain", &enc_gn1_gain);
    refs.emplace_back("enc.gn1.bias", &enc_gn1_bias);
    refs.emplace_back("enc.conv2.w", &enc_conv2_w);
    refs.emplace_back("enc.conv2.b", &enc_conv2_b);
    refs.emplace_back("enc.gn2.gain", &enc_gn2_gain);
    refs.emplace_back("enc.gn2.bias", &enc_gn2_bias);
    refs.emplace_back("enc.conv3.w", &enc_conv3_w);
    refs.emplace_back("enc.conv3.b", &enc_conv3_b);
    refs.emplace_back("enc.pos.w", &enc_pos_w);
    refs.emplace_back("enc.pos.b", &enc_pos_b);
    refs.emplace_back("enc.temb.w", &enc_temb_w);
    refs.emplace_back("enc.temb.b", &enc_temb_b);
    for (std::size_t l = 0; l < stream1.size(); ++l) {
        ssm::collect_params(stream1[l], "s1.b" + std::to_string(l), refs);
    }
    for (std::size_t l = 0; l < stream2.size(); ++l) {
        ssm::collect_params(stream2[l], "s2.b" + std::to_string(l), refs);
    }
    refs.emplace_back("fuse.gamma1", &fuse_gamma1);
    refs.emplace_back("fuse.delta1", &fuse_delta1);
    refs.emplace_back("fuse.gamma2", &fuse_gamma2);
    refs.emplace_back("fuse.delta2", &fuse_delta2);
    refs.emplace_back("fuse.proj.w", &fuse_w);
    refs.emplace_back("fuse.proj.b", &fuse_b);
    refs.emplace_back("dec.conv1.w", &dec_conv1_w);
    refs.emplace_back("dec.conv1.b", &dec_conv1_b);
    refs.emplace_back("dec.gn1.gain", &dec_gn1_gain);
    refs.emplace_back("dec.gn1.bias", &dec_gn1_bias);
    refs.emplace_back("dec.conv2.w", &dec_conv2_w);
    refs.emplace_back("dec.conv2.b", &dec_conv2_b);
    refs.emplace_back("dec.gn2.gain", &dec_gn2_gain);
    refs.emplace_back("dec.gn2.bias", &dec_gn2_bias);
    refs.emplace_back("dec.conv3.w", &dec_conv3_w);
    refs.emplace_back("dec.conv3.b", &dec_conv3_b);
    refs.emplace_back("dec.pos.w", &dec_pos_w);
    refs.emplace_back("dec.pos.b", &dec_pos_b);
    refs.emplace_back("dec.temb.w", &dec_temb_w);
    refs.emplace_back("dec.temb.b", &dec_temb_b);
    refs.emplace_back("head.l1.w", &head1_w);
    refs.emplace_back("head.l1.b", &head1_b);
    refs.emplace_back("head.l2.w", &head2_w);
    refs.emplace_back("head.l2.b", &head2_b);
    refs.emplace_back("head.skip.w", &skip_w);
    refs.emplace_back("head.skip.gate.w", &skip_gate_w);
    refs.emplace_back("head.skip.gate.b", &skip_gate_b);
    return refs;
}

ad::TensorMap ModelWeights::tensor_map() {
    ad::TensorMap map;
    for (auto& [name, slot] : named_params()) map.emplace(name, *slot);
    return map;
}

void ModelWeights::load_tensor_map(const ad::TensorMap& map) {
    for (auto& [name, slot] : named_params()) {
        const auto it = map.find(name);
        if (it == map.end()) throw std::runtime_error("checkpoint: missing tensor '" + name + "'");
        if (it->second.shape() != slot->shape()) {
            throw std::runtime_error("checkpoint: tensor '" + name + "' has shape " +
                                     ad::shape_str(it->second.shape()) + ", expected " +
                                     ad::shape_str(slot->shape()));
        }
        *slot = it->second;
    }
}

std::vector<double> sinusoidal_embedding(std::size_t t, std::size_t dim) {
    if (dim < 2 || dim % 2 != 0) throw std::invalid_argument("sinusoidal_embedding: dim must be even");
    const std::size_t half = dim / 2;
    std::vector<double> emb(dim);
    for (std::size_t i = 0; i < half; ++i) {
        const double denom = half > 1 ? static_cast<double>(half - 1) : 1.0;
        const double freq = std::exp(-std::log(10000.0) * static_cast<double>(i) / denom);
        emb[2 * i] = std::sin(static_cast<double>(t) * freq);
        emb[2 * i + 1] = std::cos(static_cast<double>(t) * freq);
    }
    return emb;
}

geom::Vec3 TimestepFrame::to_unit(const geom::Vec3& p) const {
    geom::Vec3 out;
    for (std::size_t a = 0; a < 3; ++a) out[a] = std::clamp((p[a] - lo) / extent, 0.0, 1.0);
    return out;
}

TimestepFrame timestep_frame(std::size_t t, std::size_t total_steps) {
    const diffusion::NoiseSchedule sched = diffusion::default_schedule(total_steps);
    const double abar = t == 0 ? 1.0 : sched.alpha_bar[std::min(t, total_steps)];
    const double reach = 3.2 * std::sqrt(1.0 - abar);
    TimestepFrame frame;
    frame.lo = -reach;
    frame.extent = std::sqrt(abar) + 2.0 * reach;
    return frame;
}

std::vector<geom::Vec3> frame_to_unit(const std::vector<geom::Vec3>& pts,
                                      const TimestepFrame& frame) {
    std::vector<geom::Vec3> out(pts.size());
    for (std::size_t i = 0; i < pts.size(); ++i) out[i] = frame.to_unit(pts[i]);
    return out;
}

std::vector<geom::Vec3> normalize_to_unit(const std::vector<geom::Vec3>& pts) {
    if (pts.empty()) throw std::invalid_argument("normalize_to_unit: empty cloud");
    geom::Vec3 lo = pts.front(), hi = pts.front();
    for (const auto& p : pts) {
        for (std::size_t a = 0; a < 3; ++a) {
            lo[a] = std::min(lo[a], p[a]);
            hi[a] = std::max(hi[a], p[a]);
        }
    }
    std::vector<geom::Vec3> out(pts.size());
    for (std::size_t a = 0; a < 3; ++a) {
        const double extent = hi[a] - lo[a];
        if (extent <= 0.0) {
            for (auto& p : out) p[a] = 0.5;
        } else {
            const double inv = 1.0 / extent;
            for (std::size_t i = 0; i < pts.size(); ++i) out[i][a] = (pts[i][a] - lo[a]) * inv;
        }
    }
    // clamp away rounding spill at the boundaries
    for (auto& p : out) {
        for (std::size_t a = 0; a < 3; ++a) p[a] = std::clamp(p[a], 0.0, 1.0);
    }
    return out;
}

namespace {

Tensor coords_tensor(const std::vector<geom::Vec3>& pts) {
    std::vector<double> v(pts.size() * 3);
    for (std::size_t i = 0; i < pts.size(); ++i) {
        v[i * 3 + 0] = pts[i].x;
        v[i * 3 + 1] = pts[i].y;
        v[i * 3 + 2] = pts[i].z;
    }
    return Tensor({pts.size(), 3}, std::move(v));
}

/// [cells, C] row-per-cell view of a conv volume [C, L, L, L].
Tensor volume_to_rows(const Tensor& volume) {
    const std::size_t C = volume.shape()[0];
    const std::size_t cells = volume.size() / C;
    return ad::transpose2d(ad::reshape(volume, {C, cells}));
}

Tensor rows_to_volume(const Tensor& rows, std::size_t resolution) {
    const std::size_t C = rows.shape()[1];
    return ad::reshape(ad::transpose2d(rows), {C, resolution, resolution, resolution});
}

/// Trilinear query of a conv volume as a differentiable blend.
Tensor query_volume(const Tensor& volume, const std::vector<geom::Vec3>& queries,
                    std::size_t resolution) {
    const auto table = geom::trilinear_table(queries, resolution);
    return ad::blend_rows(volume_to_rows(volume), table.indices, table.weights, 8);
}

Tensor temb_rowvec(const std::vector<double>& temb, const Tensor& w, const Tensor& b) {
    Tensor row({1, temb.size()}, temb);
    return ad::reshape(ad::linear(row, w, b), {w.shape()[1]});
}

}  // namespace

EncodeResult tf_encode(const diffusion::Cloud& x_t, std::size_t t, ModelWeights& weights) {
    const ModelConfig& cfg = weights.config;
    const std::size_t N = x_t.size();
    if (N < 2) throw std::invalid_argument("tf_encode: need at least two points");
    const std::size_t L = cfg.voxel_res;

    EncodeResult result;
    result.normalized = frame_to_unit(x_t, timestep_frame(t, cfg.timesteps));
    const std::vector<double> temb = sinusoidal_embedding(t, cfg.temb_dim);

    // voxelize coordinates with the timestep embedding broadcast per point
    const std::size_t C0 = 3 + cfg.temb_dim;
    std::vector<double> feat(N * C0);
    for (std::size_t i = 0; i < N; ++i) {
        feat[i * C0 + 0] = result.normalized[i].x;
        feat[i * C0 + 1] = result.normalized[i].y;
        feat[i * C0 + 2] = result.normalized[i].z;
        std::copy(temb.begin(), temb.end(), feat.begin() + static_cast<std::ptrdiff_t>(i * C0 + 3));
    }
    const auto cells = geom::voxel_cells(result.normalized, L);
    Tensor v0 = ad::scatter_mean_rows(Tensor({N, C0}, std::move(feat)), cells, L * L * L);
    Tensor volume = rows_to_volume(v0, L);

    // conv stack with Swish and GroupNorm
    Tensor h1 = ad::silu(ad::group_norm(
        ad::conv3d(volume, weights.enc_conv1_w, weights.enc_conv1_b, 1, 1), cfg.gn_groups,
        weights.enc_gn1_gain, weights.enc_gn1_bias));
    Tensor h2 = ad::silu(ad::group_norm(
        ad::conv3d(h1, weights.enc_conv2_w, weights.enc_conv2_b, 1, 1), cfg.gn_groups,
        weights.enc_gn2_gain, weights.enc_gn2_bias));
    Tensor latent_volume = ad::conv3d(h2, weights.enc_conv3_w, weights.enc_conv3_b, 1, 0);

    // time-variant frequency sampling; the graph is only needed for t <= tau.
    // The FPS seed is the lexicographically smallest point so the selection
    // does not depend on input order.
    geom::PointCloud pc;
    pc.coords = result.normalized;
    pc.normalized = true;
    std::size_t seed = 0;
    for (std::size_t i = 1; i < N; ++i) {
        const geom::Vec3 &a = pc.coords[i], &b = pc.coords[seed];
        if (std::tie(a.x, a.y, a.z) < std::tie(b.x, b.y, b.z)) seed = i;
    }
    const std::size_t kf = spectral::high_pass_count(cfg.zeta, cfg.latent_points);
    if (t <= cfg.tau && kf > 0) {
        const spectral::SpatialGraph graph = spectral::build_graph(pc, cfg.knn_k);
        result.indices =
            spectral::time_variant_sample(pc, cfg.latent_points, t, cfg.tau, cfg.zeta, graph, seed);
    } else {
        result.indices = geom::farthest_point_sampling(pc, cfg.latent_points, seed);
    }

    result.latent.coords.reserve(cfg.latent_points);
    for (std::size_t i : result.indices) result.latent.coords.push_back(result.normalized[i]);

    Tensor queried = query_volume(latent_volume, result.latent.coords, L);
    Tensor pos = ad::linear(coords_tensor(result.latent.coords), weights.enc_pos_w, weights.enc_pos_b);
    Tensor trow = temb_rowvec(temb, weights.enc_temb_w, weights.enc_temb_b);
    result.latent.features = ad::add_rowvec(ad::add(queried, pos), trow);
    return result;
}

ad::Tensor dual_stream(const LatentCloud& latent, std::size_t t, ModelWeights& weights) {
    const ModelConfig& cfg = weights.config;
    if (cfg.curve1 == cfg.curve2) {
        static bool warned = false;
        if (!warned) {
            std::fprintf(stderr, "warning: both streams use curve '%s'\n",
                         curves::curve_kind_name(cfg.curve1).c_str());
            warned = true;
        }
    }
    const std::vector<double> temb = sinusoidal_embedding(t, cfg.temb_dim);
    Tensor temb_t({cfg.temb_dim}, temb);

    const auto run_stream = [&](curves::CurveKind kind, std::vector<ssm::MambaBlockWeights>& blocks) {
        const auto order = curves::serialize_points(latent.coords, kind, cfg.curve_bits);
        Tensor serialized = ad::gather_rows(latent.features, order.permutation);
        Tensor processed = ssm::mamba_stack(serialized, blocks, &temb_t);
        return ad::gather_rows(processed, curves::invert_permutation(order.permutation));
    };
    Tensor s1 = run_stream(cfg.curve1, weights.stream1);
    Tensor s2 = run_stream(cfg.curve2, weights.stream2);
    Tensor y1 = ad::add_rowvec(ad::mul_rowvec(s1, weights.fuse_gamma1), weights.fuse_delta1);
    Tensor y2 = ad::add_rowvec(ad::mul_rowvec(s2, weights.fuse_gamma2), weights.fuse_delta2);
    return ad::linear(ad::concat_cols(y1, y2), weights.fuse_w, weights.fuse_b);
}

ad::Tensor decode(const ad::Tensor& fused, const std::vector<geom::Vec3>& latent_coords,
                  const std::vector<geom::Vec3>& x_normalized, const std::vector<geom::Vec3>& x_raw,
                  std::size_t t, ModelWeights& weights) {
    const ModelConfig& cfg = weights.config;
    if (fused.shape()[0] != latent_coords.size()) {
        throw std::invalid_argument("decode: fused rows do not match latent coordinates");
    }
    const std::size_t L = cfg.voxel_res;
    const auto cells = geom::voxel_cells(latent_coords, L);
    Tensor volume = rows_to_volume(ad::scatter_mean_rows(fused, cells, L * L * L), L);
    Tensor h1 = ad::silu(ad::group_norm(
        ad::conv3d(volume, weights.dec_conv1_w, weights.dec_conv1_b, 1, 0), cfg.gn_groups,
        weights.dec_gn1_gain, weights.dec_gn1_bias));
    Tensor h2 = ad::silu(ad::group_norm(
        ad::conv3d(h1, weights.dec_conv2_w, weights.dec_conv2_b, 1, 1), cfg.gn_groups,
        weights.dec_gn2_gain, weights.dec_gn2_bias));
    Tensor out_volume = ad::conv3d(h2, weights.dec_conv3_w, weights.dec_conv3_b, 1, 0);

    Tensor queried = query_volume(out_volume, x_normalized, L);
    Tensor pos = ad::linear(coords_tensor(x_normalized), weights.dec_pos_w, weights.dec_pos_b);
    const std::vector<double> temb = sinusoidal_embedding(t, cfg.temb_dim);
    Tensor trow = temb_rowvec(temb, weights.dec_temb_w, weights.dec_temb_b);
    Tensor h = ad::add_rowvec(ad::add(queried, pos), trow);
    Tensor hidden = ad::silu(ad::linear(h, weights.head1_w, weights.head1_b));
    Tensor out = ad::linear(hidden, weights.head2_w, weights.head2_b);

    // gated linear skip on the raw coordinates
    Tensor gate = ad::reshape(
        ad::linear(Tensor({1, cfg.temb_dim}, temb), weights.skip_gate_w, weights.skip_gate_b), {1});
    Tensor skip = ad::mul_bscalar(ad::matmul(coords_tensor(x_raw), weights.skip_w), gate);
    return ad::add(out, skip);
}

ad::Tensor eps_theta(const diffusion::Cloud& x_t, std::size_t t, ModelWeights& weights) {
    if (x_t.size() != weights.config.n_points) {
        throw std::invalid_argument("eps_theta: cloud has " + std::to_string(x_t.size()) +
                                    " points, config expects " +
                                    std::to_string(weights.config.n_points));
    }
    EncodeResult enc = tf_encode(x_t, t, weights);
    Tensor fused = dual_stream(enc.latent, t, weights);
    return decode(fused, enc.latent.coords, enc.normalized, x_t, t, weights);
}

void PointDiffusionModel::save(const std::string& checkpoint_path) const {
    ModelWeights& w = const_cast<ModelWeights&>(weights_);
    ad::save_checkpoint(checkpoint_path, w.tensor_map());
    std::ofstream cfg(checkpoint_path + ".cfg");
    if (!cfg) throw std::runtime_error("save: cannot write '" + checkpoint_path + ".cfg'");
    cfg << weights_.config.to_text();
}

PointDiffusionModel PointDiffusionModel::load(const std::string& checkpoint_path) {
    std::ifstream cfg_in(checkpoint_path + ".cfg");
    if (!cfg_in) {
        throw std::runtime_error("load: missing config sidecar '" + checkpoint_path + ".cfg'");
    }
    std::ostringstream buf;
    buf << cfg_in.rdbuf();
    const ModelConfig config = ModelConfig::from_text(buf.str());
    ModelWeights weights = init_weights(config, 0);
    weights.load_tensor_map(ad::load_checkpoint(checkpoint_path));
    return PointDiffusionModel(std::move(weights));
}

}  // namespace pcd::model
