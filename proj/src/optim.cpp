// SPDX-License-Identifier: Apache-2.0
#include "layerparti/optim.hpp"

#include <cmath>

#include "layerparti/errors.hpp"

namespace layerparti {

void LrSchedule::validate() const {
    if (!(peak_lr > 0.0)) throw ConfigError("peak_lr must be positive");
    if (!(warmup_frac > 0.0 && warmup_frac < 1.0)) throw ConfigError("lr warm-up fraction must lie in (0, 1)");
    if (total_iterations == 0) throw ConfigError("total_iterations must be positive");
}

double lr_at(const LrSchedule& s, double t) {
    const double total = static_cast<double>(s.total_iterations);
    const double peak_t = s.warmup_frac * total;
    if (t < 0.0 || t > total) throw UsageError("learning-rate schedule queried outside [0, T]");
    if (t < peak_t) return s.peak_lr * t / peak_t;
    return s.peak_lr * (total - t) / (total - peak_t);
}

float clip_global_norm(ParameterStore& params, float max_norm) {
    double sq = 0.0;
    for (auto& e : params.entries()) {
        if (!e.tensor.requires_grad() || !e.tensor.has_grad()) continue;
        for (float g : e.tensor.grad()) sq += static_cast<double>(g) * g;
    }
    const double norm = std::sqrt(sq);
    if (!(norm > static_cast<double>(max_norm))) return 1.0f;
    const auto factor = static_cast<float>(static_cast<double>(max_norm) / norm);
    for (auto& e : params.entries()) {
        if (!e.tensor.requires_grad() || !e.tensor.has_grad()) continue;
        for (float& g : e.tensor.grad()) g *= factor;
    }
    return factor;
}

void Adam::step(ParameterStore& params, float lr) {
    for (auto& e : params.entries()) {
        Tensor& p = e.tensor;
        if (!p.requires_grad() || !p.has_grad()) continue;
        AdamSlot& slot = slots_[e.name];
        if (slot.m.empty()) {
            slot.m.assign(p.numel(), 0.0f);
            slot.v.assign(p.numel(), 0.0f);
        }
        ++slot.steps;
        const auto bc1 = static_cast<float>(1.0 - std::pow(static_cast<double>(beta1), static_cast<double>(slot.steps)));
        const auto bc2 = static_cast<float>(1.0 - std::pow(static_cast<double>(beta2), static_cast<double>(slot.steps)));
        auto w = p.data();
        auto g = p.grad();
        for (std::size_t i = 0; i < w.size(); ++i) {
            slot.m[i] = beta1 * slot.m[i] + (1.0f - beta1) * g[i];
            slot.v[i] = beta2 * slot.v[i] + (1.0f - beta2) * g[i] * g[i];
            const float m_hat = slot.m[i] / bc1;
            const float v_hat = slot.v[i] / bc2;
            w[i] -= lr * m_hat / (std::sqrt(v_hat) + eps);
        }
    }
    ++steps_;
}

void Adam::restore(std::uint64_t steps, std::map<std::string, AdamSlot> slots) {
    steps_ = steps;
    slots_ = std::move(slots);
}

GradientAccumulator::GradientAccumulator(std::size_t accumulation_steps) : steps_(accumulation_steps) {
    if (accumulation_steps == 0) throw ConfigError("accumulation_steps must be at least 1");
}

bool GradientAccumulator::accumulate_and_maybe_step(ParameterStore& params, Adam& adam, float lr, float max_grad_norm) {
    if (++pending_ < steps_) return false;
    clip_global_norm(params, max_grad_norm);
    adam.step(params, lr);
    params.zero_grad();
    pending_ = 0;
    return true;
}

}  // namespace layerparti
