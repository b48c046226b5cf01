#pragma once

#include <cstddef>
#include <span>
#include <string>
#include <vector>

#include "pcdiff/ops.hpp"
#include "pcdiff/optim.hpp"
#include "pcdiff/rng.hpp"
#include "pcdiff/tensor.hpp"

namespace pcd::ssm {

/// Zero-order-hold discretization of a diagonal continuous pair (a, B) at
/// timescale delta, elementwise:
///   a_bar = exp(delta*a),  b_bar = ((exp(delta*a) - 1) / a) * B
/// with the series limit b_bar = delta*B at |a| < 1e-8.
struct ZohResult {
    std::vector<double> a_bar;
    std::vector<double> b_bar;
};
ZohResult zoh_discretize(std::span<const double> a, std::span<const double> delta,
                         std::span<const double> b);

/// Scalar convenience for the same rule.
void zoh_discretize_scalar(double a, double delta, double b, double& a_bar, double& b_bar);

/// The scan recurrence as one differentiable op (gradients by BPTT):
///   h_t = exp(delta_t A) h_{t-1} + zoh(B_t) x_t,   y_t = C_t . h_t
/// Shapes: u,delta [E,L]; A [E,N]; B,C [N,L] -> y [E,L]. h(-1) = 0.
ad::Tensor ssm_recurrence(const ad::Tensor& u, const ad::Tensor& delta, const ad::Tensor& A,
                          const ad::Tensor& B, const ad::Tensor& C);

/// Selective parameters and state matrix for one scan direction. B, C and
/// delta are derived per position from the scan input.
struct ScanWeights {
    ad::Tensor A;        // [E, N], strictly negative at init
    ad::Tensor wB;       // [E, N]
    ad::Tensor wC;       // [E, N]
    ad::Tensor wdt_in;   // [E, R] low-rank delta projection
    ad::Tensor wdt_out;  // [R, E]
    ad::Tensor dt_bias;  // [E]
};

enum class ScanDirection { forward, backward };

/// Selective scan over x [E, L]. The backward direction runs the forward
/// recurrence over the reversed sequence and re-reverses the output.
ad::Tensor selective_scan(const ad::Tensor& x, const ScanWeights& weights, ScanDirection dir);

struct MambaDims {
    std::size_t model = 64;       // D
    std::size_t inner = 128;      // E = expand * D
    std::size_t state = 16;       // N
    std::size_t conv_width = 4;   // W
    std::size_t temb = 0;         // timestep embedding width (0 = none)
    std::size_t dt_rank = 8;      // R
};

/// One bidirectional block: LN -> gate branch (SiLU(Linear)) and scan branch
/// (Linear -> causal Conv1D -> SiLU -> forward/backward selective scans,
/// summed) -> gated product -> out-projection -> residual. The two
/// directions share the input projection but keep separate conv kernels and
/// scan parameters; the backward branch flips the sequence before its conv.
struct MambaBlockWeights {
    MambaDims dims;
    ad::Tensor ln_gain, ln_bias;  // [D]
    ad::Tensor in_w, in_b;        // [D,E], [E]
    ad::Tensor gate_w, gate_b;    // [D,E], [E]
    ad::Tensor temb_w;            // [temb,E] when dims.temb > 0
    ad::Tensor conv_fwd;          // [E,W]
    ad::Tensor conv_bwd;          // [E,W]
    ScanWeights scan_fwd;
    ScanWeights scan_bwd;
    ad::Tensor out_w, out_b;      // [E,D], [D]
};

MambaBlockWeights init_mamba_block(const MambaDims& dims, Rng& rng);

/// Registers every tensor of the block under `prefix` for the optimizer and
/// checkpointing.
void collect_params(MambaBlockWeights& block, const std::string& prefix, ad::ParamRefs& out);

/// Z [M, D] -> [M, D]; `temb` is an optional [temb] embedding injected into
/// both branch projections.
ad::Tensor mamba_block(const ad::Tensor& z, const MambaBlockWeights& weights,
                       const ad::Tensor* temb = nullptr);

/// Sequential composition of blocks (the sequence is serialized once, before
/// the first block).
ad::Tensor mamba_stack(const ad::Tensor& z0, const std::vector<MambaBlockWeights>& blocks,
                       const ad::Tensor* temb = nullptr);

}  // namespace pcd::ssm
