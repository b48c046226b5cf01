#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "pcdiff/checkpoint.hpp"
#include "pcdiff/curves.hpp"
#include "pcdiff/diffusion.hpp"
#include "pcdiff/geometry.hpp"
#include "pcdiff/optim.hpp"
#include "pcdiff/rng.hpp"
#include "pcdiff/ssm.hpp"
#include "pcdiff/tensor.hpp"

namespace pcd::model {

struct ModelConfig {
    // core dimensions
    std::size_t n_points = 2048;      // N
    std::size_t latent_points = 256;  // M
    std::size_t latent_dim = 512;     // D
    std::size_t depth = 8;            // blocks per stream
    curves::CurveKind curve1 = curves::CurveKind::z;
    curves::CurveKind curve2 = curves::CurveKind::z_trans;
    std::size_t voxel_res = 16;       // L
    std::size_t tau = 50;
    double zeta = 0.875;
    std::size_t knn_k = 32;
    std::size_t timesteps = 1000;     // T

    // architecture knobs
    std::size_t temb_dim = 64;
    std::size_t enc_hidden = 32;
    std::size_t dec_hidden = 32;
    std::size_t gn_groups = 8;
    std::size_t nstate = 16;
    std::size_t expand = 2;
    std::size_t conv1d_width = 4;
    std::size_t dt_rank = 8;
    std::size_t curve_bits = 6;

    std::size_t inner_dim() const { return expand * latent_dim; }
    void validate() const;

    /// Full key-value text form, persisted alongside checkpoints.
    std::string to_text() const;
    static ModelConfig from_text(const std::string& text);
};

struct ModelWeights {
    ModelConfig config;
    // encoder: voxel feature extraction
    ad::Tensor enc_conv1_w, enc_conv1_b, enc_gn1_gain, enc_gn1_bias;
    ad::Tensor enc_conv2_w, enc_conv2_b, enc_gn2_gain, enc_gn2_bias;
    ad::Tensor enc_conv3_w, enc_conv3_b;
    ad::Tensor enc_pos_w, enc_pos_b;    // learned positional map 3 -> D
    ad::Tensor enc_temb_w, enc_temb_b;  // timestep injection temb -> D
    // dual serialized streams
    std::vector<ssm::MambaBlockWeights> stream1, stream2;
    // affine fusion
    ad::Tensor fuse_gamma1, fuse_delta1, fuse_gamma2, fuse_delta2;  // [D]
    ad::Tensor fuse_w, fuse_b;                                      // 2D -> D
    // decoder: latent volume back to per-point noise
    ad::Tensor dec_conv1_w, dec_conv1_b, dec_gn1_gain, dec_gn1_bias;
    ad::Tensor dec_conv2_w, dec_conv2_b, dec_gn2_gain, dec_gn2_bias;
    ad::Tensor dec_conv3_w, dec_conv3_b;
    ad::Tensor dec_pos_w, dec_pos_b;
    ad::Tensor dec_temb_w, dec_temb_b;
    ad::Tensor head1_w, head1_b;  // D -> D/2
    ad::Tensor head2_w, head2_b;  // D/2 -> 3
    // timestep-gated linear skip on raw coordinates: the a_t * x_t component
    // of the noise target stays representable at any cloud scale
    ad::Tensor skip_w;            // 3 -> 3
    ad::Tensor skip_gate_w, skip_gate_b;  // temb -> 1

    ad::ParamRefs named_params();
    ad::TensorMap tensor_map();
    void load_tensor_map(const ad::TensorMap& map);
};

ModelWeights init_weights(const ModelConfig& config, std::uint64_t seed);

/// Subsampled latent cloud: M feature rows plus their retained coordinates
/// (in the normalized frame).
struct LatentCloud {
    ad::Tensor features;             // [M, D]
    std::vector<geom::Vec3> coords;  // [M], normalized
};

/// Sinusoidal timestep embedding of the given width.
std::vector<double> sinusoidal_embedding(std::size_t t, std::size_t dim);

/// Per-cloud bounding-box map into the unit cube (degenerate extents guard
/// to a constant 0.5). Utility for external clouds; the denoiser itself uses
/// the per-timestep frame below.
std::vector<geom::Vec3> normalize_to_unit(const std::vector<geom::Vec3>& pts);

/// The fixed per-timestep frame the denoiser works in. Clean data sits in
/// [0,1]^3 and the corrupted marginal spans roughly
/// [-3.2 sqrt(1-abar_t), sqrt(abar_t) + 3.2 sqrt(1-abar_t)] per axis, so the
/// frame maps that span onto the unit cube and clamps stragglers. Keeping
/// the frame a function of (t, T) alone preserves absolute scale information
/// across training and the reverse loop - a per-cloud bounding box does not,
/// and lets scale drift feed back into sampling divergence.
struct TimestepFrame {
    double lo = 0.0;
    double extent = 1.0;

    geom::Vec3 to_unit(const geom::Vec3& p) const;
};
TimestepFrame timestep_frame(std::size_t t, std::size_t total_steps);

std::vector<geom::Vec3> frame_to_unit(const std::vector<geom::Vec3>& pts,
                                      const TimestepFrame& frame);

struct EncodeResult {
    LatentCloud latent;
    std::vector<geom::Vec3> normalized;  // all N coords in [0,1]^3
    std::vector<std::size_t> indices;    // the M selected point indices
};

/// TF-Encoder: voxelize coordinates + timestep features, run the 3-D conv
/// stack, pick latent points with the time-variant sampler and query the
/// latent volume trilinearly (plus positional and timestep terms).
EncodeResult tf_encode(const diffusion::Cloud& x_t, std::size_t t, ModelWeights& weights);

/// Dual serialized Mamba streams with per-stream affine fusion, returned in
/// the latent cloud's input order.
ad::Tensor dual_stream(const LatentCloud& latent, std::size_t t, ModelWeights& weights);

/// Decoder: voxelize the fused latent at the latent coordinates, run the
/// shape-preserving conv stack, query at all N points and map to noise.
/// `x_raw` feeds the gated linear skip (pass the frame coords to disable the
/// raw-scale term, e.g. in isolation tests).
ad::Tensor decode(const ad::Tensor& fused, const std::vector<geom::Vec3>& latent_coords,
                  const std::vector<geom::Vec3>& x_normalized, const std::vector<geom::Vec3>& x_raw,
                  std::size_t t, ModelWeights& weights);

/// The full denoiser eps_theta(x_t, t) -> [N, 3].
ad::Tensor eps_theta(const diffusion::Cloud& x_t, std::size_t t, ModelWeights& weights);

/// TrainableDenoiser wrapper around the weight bundle.
class PointDiffusionModel final : public diffusion::TrainableDenoiser {
  public:
    PointDiffusionModel(const ModelConfig& config, std::uint64_t init_seed)
        : weights_(init_weights(config, init_seed)) {}
    explicit PointDiffusionModel(ModelWeights weights) : weights_(std::move(weights)) {}

    ad::Tensor predict(const diffusion::Cloud& x_t, std::size_t t) override {
        return eps_theta(x_t, t, weights_);
    }
    ad::ParamRefs params() override { return weights_.named_params(); }

    ModelWeights& weights() { return weights_; }
    const ModelConfig& config() const { return weights_.config; }

    void save(const std::string& checkpoint_path) const;
    static PointDiffusionModel load(const std::string& checkpoint_path);

  private:
    ModelWeights weights_;
};

}  // namespace pcd::model
