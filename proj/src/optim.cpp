#include "pcdiff/optim.hpp"

#include <cmath>
#include <stdexcept>

namespace pcd::ad {

void AdamState::step(ParamRefs& params, const GradMap& grads) {
    ++step_;
    const double bc1 = 1.0 - std::pow(config_.beta1, static_cast<double>(step_));
    const double bc2 = 1.0 - std::pow(config_.beta2, static_cast<double>(step_));
    for (auto& [name, slot] : params) {
        const auto it = grads.find(name);
        if (it == grads.end()) {
            throw std::runtime_error("adam: missing gradient for parameter '" + name + "'");
        }
        const std::vector<double>& g = it->second;
        const Tensor& p = *slot;
        if (g.size() != p.size()) {
            throw std::runtime_error("adam: gradient size mismatch for parameter '" + name + "'");
        }
        for (const double gv : g) {
            if (!std::isfinite(gv)) {
                throw std::runtime_error("adam: non-finite gradient for parameter '" + name + "'");
            }
        }
        auto& m = m_[name];
        auto& v = v_[name];
        if (m.empty()) m.assign(p.size(), 0.0);
        if (v.empty()) v.assign(p.size(), 0.0);
        std::vector<double> next(p.size());
        const double* pv = p.raw();
        for (std::size_t i = 0; i < p.size(); ++i) {
            m[i] = config_.beta1 * m[i] + (1.0 - config_.beta1) * g[i];
            v[i] = config_.beta2 * v[i] + (1.0 - config_.beta2) * g[i] * g[i];
            const double mhat = m[i] / bc1;
            const double vhat = v[i] / bc2;
            double x = pv[i];
            if (config_.weight_decay != 0.0) x -= config_.lr * config_.weight_decay * x;
            next[i] = x - config_.lr * mhat / (std::sqrt(vhat) + config_.eps);
        }
        *slot = Tensor(p.shape(), std::move(next));
    }
}

}  // namespace pcd::ad
