#pragma once

#include <cstddef>
#include <map>
#include <string>
#include <utility>
#include <vector>

#include "pcdiff/tensor.hpp"

namespace pcd::ad {

/// Named slots into a model's weight members. The optimizer and checkpoint
/// code address parameters through this view; updating a slot rebinds the
/// member to a fresh tensor (tensor values themselves stay immutable).
using ParamRefs = std::vector<std::pair<std::string, Tensor*>>;

/// Gradients keyed by parameter name.
using GradMap = std::map<std::string, std::vector<double>>;

struct AdamConfig {
    double lr = 2e-4;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
    double weight_decay = 0.0;
};

/// Adam with bias correction and decoupled weight decay. Moments are keyed
/// by parameter name and allocated on first use, always shaped like their
/// parameter.
class AdamState {
  public:
    explicit AdamState(AdamConfig config = {}) : config_(config) {}

    AdamConfig& config() { return config_; }
    const AdamConfig& config() const { return config_; }
    std::size_t step() const { return step_; }

    const std::vector<double>& first_moment(const std::string& name) const { return m_.at(name); }
    const std::vector<double>& second_moment(const std::string& name) const { return v_.at(name); }

    /// One update over all parameters. Throws if a gradient is missing,
    /// misshapen, or non-finite (the message names the parameter).
    void step(ParamRefs& params, const GradMap& grads);

  private:
    AdamConfig config_;
    std::size_t step_ = 0;
    std::map<std::string, std::vector<double>> m_;
    std::map<std::string, std::vector<double>> v_;
};

inline void adam_step(ParamRefs& params, const GradMap& grads, AdamState& state) {
    state.step(params, grads);
}

}  // namespace pcd::ad
