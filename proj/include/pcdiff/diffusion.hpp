#pragma once

#include <cstdint>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "pcdiff/geometry.hpp"
#include "pcdiff/optim.hpp"
#include "pcdiff/tensor.hpp"

namespace pcd::diffusion {

using Cloud = std::vector<geom::Vec3>;

/// Per-timestep schedule, 1-indexed: index 0 is the ᾱ = 1 sentinel.
struct NoiseSchedule {
    std::size_t steps = 0;           // T
    std::vector<double> beta;        // [T+1]
    std::vector<double> alpha;       // 1 - beta
    std::vector<double> alpha_bar;   // running product, alpha_bar[0] = 1
    std::vector<double> sigma2;      // posterior variances (= beta)
};

/// Linear beta ramp. Defaults are the T=1000 convention; shorter runs want a
/// proportionally larger ramp so the terminal marginal stays near-Gaussian.
NoiseSchedule make_schedule(std::size_t steps, double beta_start = 1e-4, double beta_end = 0.02);

/// Default ramp rescaled so sum(beta) is invariant to T (terminal alpha_bar
/// around 4e-5 for any step count).
NoiseSchedule make_schedule_scaled(std::size_t steps);

/// The schedule every component assumes for a given step count: the plain
/// default ramp at T = 1000, the rescaled ramp otherwise.
NoiseSchedule default_schedule(std::size_t steps);

/// Closed-form forward corruption: x_t = sqrt(abar_t) x0 + sqrt(1-abar_t) eps0.
Cloud q_sample(const Cloud& x0, std::size_t t, const Cloud& eps0, const NoiseSchedule& schedule);

struct TrainSample {
    Cloud x0;
    std::size_t t = 1;
    Cloud eps0;
};

/// Anything that predicts the noise component of a corrupted cloud. The
/// returned tensor is [N,3]; it participates in differentiation whenever the
/// implementation's weights are watched on a tape.
class Denoiser {
  public:
    virtual ~Denoiser() = default;
    virtual ad::Tensor predict(const Cloud& x_t, std::size_t t) = 0;
};

/// A denoiser whose parameters can be trained.
class TrainableDenoiser : public Denoiser {
  public:
    virtual ad::ParamRefs params() = 0;
};

/// Mean squared error between predicted and injected noise, averaged over
/// batch, points and axes (w(t) = 1).
double ddpm_loss(Denoiser& model, std::span<const TrainSample> batch,
                 const NoiseSchedule& schedule);

/// One reverse step: mu = (x_t - beta_t/sqrt(1-abar_t) * eps_hat)/sqrt(alpha_t),
/// then mu + sigma_t * noise. No noise is added at t = 1; noise may be null
/// in that case.
Cloud p_sample_step(const Cloud& x_t, std::size_t t, const Cloud& eps_hat,
                    const NoiseSchedule& schedule, const Cloud* noise);

/// Full reverse loop from a provided x_T; `noise_at(t)` supplies the sigma
/// draw used at step t (never called for t = 1).
Cloud sample_from(Denoiser& model, Cloud x_T, const NoiseSchedule& schedule,
                  const std::function<Cloud(std::size_t)>& noise_at);

/// Reverse loop from x_T ~ N(0, I); deterministic given the seed.
Cloud sample(Denoiser& model, std::size_t n_points, const NoiseSchedule& schedule,
             std::uint64_t seed);

struct TrainOptions {
    std::size_t epochs = 10000;
    std::size_t batch = 32;
    double lr = 2e-4;
    double lr_decay = 0.98;          // multiplicative decay applied to lr
    std::size_t lr_decay_every = 100;  // in epochs; 0 disables
    double weight_decay = 0.0;
    std::uint64_t seed = 0;
    std::size_t checkpoint_every = 0;  // in epochs; 0 disables
    std::string checkpoint_path;       // base path for periodic checkpoints
    bool verbose = false;
};

struct TrainResult {
    std::vector<double> epoch_loss;
};

class TrainingError : public std::runtime_error {
  public:
    using std::runtime_error::runtime_error;
};

/// Tracks epoch losses and reports sustained divergence (loss above 10x the
/// first epoch for three consecutive epochs).
class DivergenceMonitor {
  public:
    /// Returns true when training must abort.
    bool record(double epoch_loss);
    std::string report() const;

  private:
    double initial_ = 0.0;
    bool has_initial_ = false;
    std::size_t consecutive_ = 0;
    std::size_t epochs_seen_ = 0;
};

/// Adam training over the DDPM objective with uniformly drawn timesteps.
/// Loss-curve CSV writing and checkpoint cadence live in the CLI; this
/// returns the curve.
TrainResult train(TrainableDenoiser& model, const std::vector<Cloud>& dataset,
                  const NoiseSchedule& schedule, const TrainOptions& options);

}  // namespace pcd::diffusion
