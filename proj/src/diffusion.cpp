#include "pcdiff/diffusion.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <numeric>
#include <sstream>
#include <stdexcept>

#include "pcdiff/checkpoint.hpp"
#include "pcdiff/ops.hpp"
#include "pcdiff/rng.hpp"

namespace pcd::diffusion {

NoiseSchedule make_schedule(std::size_t steps, double beta_start, double beta_end) {
    if (steps < 1) throw std::invalid_argument("make_schedule: need at least one step");
    if (!(beta_start > 0.0) || !(beta_end < 1.0) || beta_start > beta_end) {
        throw std::invalid_argument("make_schedule: need 0 < beta_start <= beta_end < 1");
    }
    NoiseSchedule s;
    s.steps = steps;
    s.beta.assign(steps + 1, 0.0);
    s.alpha.assign(steps + 1, 1.0);
    s.alpha_bar.assign(steps + 1, 1.0);
    s.sigma2.assign(steps + 1, 0.0);
    for (std::size_t t = 1; t <= steps; ++t) {
        const double frac = steps == 1 ? 0.0 : static_cast<double>(t - 1) / static_cast<double>(steps - 1);
        s.beta[t] = beta_start + (beta_end - beta_start) * frac;
        s.alpha[t] = 1.0 - s.beta[t];
        s.alpha_bar[t] = s.alpha_bar[t - 1] * s.alpha[t];
        s.sigma2[t] = s.beta[t];
    }
    return s;
}

NoiseSchedule make_schedule_scaled(std::size_t steps) {
    // sum(beta) ~ 6 keeps the terminal alpha_bar near 2e-3 while holding the
    // per-step amplification 1/sqrt(alpha_t) down, which short chains need:
    // denoiser error compounds through every reverse step.
    const double factor = 600.0 / static_cast<double>(steps);
    return make_schedule(steps, std::min(1e-4 * factor, 0.5), std::min(0.02 * factor, 0.999));
}

NoiseSchedule default_schedule(std::size_t steps) {
    return steps == 1000 ? make_schedule(steps) : make_schedule_scaled(steps);
}

Cloud q_sample(const Cloud& x0, std::size_t t, const Cloud& eps0, const NoiseSchedule& schedule) {
    if (t < 1 || t > schedule.steps) {
        throw std::out_of_range("q_sample: t=" + std::to_string(t) + " outside [1," +
                                std::to_string(schedule.steps) + "]");
    }
    if (x0.size() != eps0.size()) throw std::invalid_argument("q_sample: x0/eps0 size mismatch");
    const double a = std::sqrt(schedule.alpha_bar[t]);
    const double b = std::sqrt(1.0 - schedule.alpha_bar[t]);
    Cloud out(x0.size());
    for (std::size_t i = 0; i < x0.size(); ++i) {
        out[i] = {a * x0[i].x + b * eps0[i].x, a * x0[i].y + b * eps0[i].y,
                  a * x0[i].z + b * eps0[i].z};
    }
    return out;
}

namespace {

ad::Tensor cloud_tensor(const Cloud& c) {
    std::vector<double> v(c.size() * 3);
    for (std::size_t i = 0; i < c.size(); ++i) {
        v[i * 3 + 0] = c[i].x;
        v[i * 3 + 1] = c[i].y;
        v[i * 3 + 2] = c[i].z;
    }
    return ad::Tensor({c.size(), 3}, std::move(v));
}

Cloud gaussian_cloud(std::size_t n, Rng& rng) {
    Cloud c(n);
    for (auto& p : c) p = {rng.normal(), rng.normal(), rng.normal()};
    return c;
}

}  // namespace

double ddpm_loss(Denoiser& model, std::span<const TrainSample> batch,
                 const NoiseSchedule& schedule) {
    if (batch.empty()) throw std::invalid_argument("ddpm_loss: empty batch");
    double total = 0.0;
    for (std::size_t i = 0; i < batch.size(); ++i) {
        const TrainSample& s = batch[i];
        double value = 0.0;
        try {
            const Cloud x_t = q_sample(s.x0, s.t, s.eps0, schedule);
            ad::Tensor eps_hat = model.predict(x_t, s.t);
            ad::Tensor diff = ad::sub(eps_hat, cloud_tensor(s.eps0));
            value = ad::mean(ad::mul(diff, diff)).value();
        } catch (const std::exception& e) {
            throw TrainingError("ddpm_loss: sample " + std::to_string(i) + " (t=" +
                                std::to_string(s.t) + ") failed: " + e.what());
        }
        if (!std::isfinite(value)) {
            throw TrainingError("ddpm_loss: non-finite loss at sample " + std::to_string(i));
        }
        total += value;
    }
    return total / static_cast<double>(batch.size());
}

Cloud p_sample_step(const Cloud& x_t, std::size_t t, const Cloud& eps_hat,
                    const NoiseSchedule& schedule, const Cloud* noise) {
    if (t < 1 || t > schedule.steps) {
        throw std::out_of_range("p_sample_step: t=" + std::to_string(t) + " outside [1," +
                                std::to_string(schedule.steps) + "]");
    }
    if (x_t.size() != eps_hat.size()) {
        throw std::invalid_argument("p_sample_step: x_t/eps_hat size mismatch");
    }
    const double inv_sqrt_alpha = 1.0 / std::sqrt(schedule.alpha[t]);
    const double coef = schedule.beta[t] / std::sqrt(1.0 - schedule.alpha_bar[t]);
    const double sigma = t == 1 ? 0.0 : std::sqrt(schedule.sigma2[t]);
    if (sigma > 0.0 && (!noise || noise->size() != x_t.size())) {
        throw std::invalid_argument("p_sample_step: missing noise draw for t > 1");
    }
    Cloud out(x_t.size());
    for (std::size_t i = 0; i < x_t.size(); ++i) {
        for (std::size_t a = 0; a < 3; ++a) {
            double v = inv_sqrt_alpha * (x_t[i][a] - coef * eps_hat[i][a]);
            if (sigma > 0.0) v += sigma * (*noise)[i][a];
            out[i][a] = v;
        }
    }
    return out;
}

namespace {

Cloud tensor_cloud(const ad::Tensor& t) {
    Cloud c(t.shape()[0]);
    for (std::size_t i = 0; i < c.size(); ++i) {
        c[i] = {t.flat(i * 3), t.flat(i * 3 + 1), t.flat(i * 3 + 2)};
    }
    return c;
}

}  // namespace

Cloud sample_from(Denoiser& model, Cloud x_T, const NoiseSchedule& schedule,
                  const std::function<Cloud(std::size_t)>& noise_at) {
    Cloud x = std::move(x_T);
    for (std::size_t t = schedule.steps; t >= 1; --t) {
        const ad::Tensor eps_hat = model.predict(x, t);
        if (t > 1) {
            const Cloud noise = noise_at(t);
            x = p_sample_step(x, t, tensor_cloud(eps_hat), schedule, &noise);
        } else {
            x = p_sample_step(x, t, tensor_cloud(eps_hat), schedule, nullptr);
        }
    }
    return x;
}

Cloud sample(Denoiser& model, std::size_t n_points, const NoiseSchedule& schedule,
             std::uint64_t seed) {
    Rng rng(seed);
    Cloud x_T = gaussian_cloud(n_points, rng);
    return sample_from(model, std::move(x_T), schedule,
                       [&rng, n_points](std::size_t) { return gaussian_cloud(n_points, rng); });
}

bool DivergenceMonitor::record(double epoch_loss) {
    ++epochs_seen_;
    if (!has_initial_) {
        initial_ = epoch_loss;
        has_initial_ = true;
        return false;
    }
    if (!std::isfinite(epoch_loss) || epoch_loss > 10.0 * initial_) {
        ++consecutive_;
    } else {
        consecutive_ = 0;
    }
    return consecutive_ >= 3;
}

std::string DivergenceMonitor::report() const {
    std::ostringstream os;
    os << "training diverged: loss exceeded 10x the first epoch (" << initial_ << ") for "
       << consecutive_ << " consecutive epochs (epoch " << epochs_seen_ << ")";
    return os.str();
}

TrainResult train(TrainableDenoiser& model, const std::vector<Cloud>& dataset,
                  const NoiseSchedule& schedule, const TrainOptions& options) {
    if (dataset.empty()) throw std::invalid_argument("train: empty dataset");
    if (options.batch < 1) throw std::invalid_argument("train: batch must be >= 1");
    ad::ParamRefs params = model.params();
    ad::AdamConfig adam_cfg;
    adam_cfg.lr = options.lr;
    adam_cfg.weight_decay = options.weight_decay;
    ad::AdamState adam(adam_cfg);

    Rng rng(options.seed);
    ad::Tape tape;
    DivergenceMonitor monitor;
    TrainResult result;
    std::vector<std::size_t> order(dataset.size());
    std::iota(order.begin(), order.end(), 0);

    for (std::size_t epoch = 0; epoch < options.epochs; ++epoch) {
        // seeded shuffle
        for (std::size_t i = order.size(); i > 1; --i) {
            std::swap(order[i - 1], order[rng.below(i)]);
        }
        double epoch_total = 0.0;
        std::size_t epoch_count = 0;
        for (std::size_t start = 0; start < order.size(); start += options.batch) {
            const std::size_t end = std::min(order.size(), start + options.batch);
            ad::GradMap grads;
            for (const auto& [name, slot] : params) grads[name].assign(slot->size(), 0.0);
            const double inv_batch = 1.0 / static_cast<double>(end - start);
            for (std::size_t b = start; b < end; ++b) {
                const Cloud& x0 = dataset[order[b]];
                const std::size_t t = 1 + rng.below(schedule.steps);
                const Cloud eps0 = gaussian_cloud(x0.size(), rng);
                tape.reset();
                for (auto& [name, slot] : params) tape.watch(*slot);
                const Cloud x_t = q_sample(x0, t, eps0, schedule);
                ad::Tensor eps_hat = model.predict(x_t, t);
                ad::Tensor diff = ad::sub(eps_hat, cloud_tensor(eps0));
                ad::Tensor loss = ad::mean(ad::mul(diff, diff));
                tape.backward(loss);
                for (auto& [name, slot] : params) {
                    const ad::Tensor g = tape.grad(*slot);
                    auto& acc = grads[name];
                    for (std::size_t i = 0; i < g.size(); ++i) acc[i] += g.flat(i) * inv_batch;
                }
                epoch_total += loss.value();
                ++epoch_count;
            }
            adam.step(params, grads);
        }
        tape.reset();
        const double epoch_loss = epoch_total / static_cast<double>(epoch_count);
        result.epoch_loss.push_back(epoch_loss);
        if (options.verbose) {
            std::printf("epoch %zu/%zu  loss %.6f\n", epoch + 1, options.epochs, epoch_loss);
            std::fflush(stdout);
        }
        if (monitor.record(epoch_loss)) throw TrainingError(monitor.report());
        if (options.lr_decay_every > 0 && (epoch + 1) % options.lr_decay_every == 0) {
            adam.config().lr *= options.lr_decay;
        }
        if (options.checkpoint_every > 0 && !options.checkpoint_path.empty() &&
            (epoch + 1) % options.checkpoint_every == 0) {
            ad::TensorMap map;
            for (auto& [name, slot] : params) map.emplace(name, *slot);
            ad::save_checkpoint(options.checkpoint_path, map);
        }
    }
    return result;
}

}  // namespace pcd::diffusion
