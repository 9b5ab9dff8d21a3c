// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstddef>
#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "layerparti/model.hpp"

namespace layerparti {

/// Triangular learning rate: linear rise to peak_lr, then linear decay to 0 at total_iterations.
struct LrSchedule {
    double peak_lr = 1e-3;
    double warmup_frac = 0.1;
    std::size_t total_iterations = 1;

    void validate() const;
};

/// Valid for 0 <= t <= total_iterations.
double lr_at(const LrSchedule& schedule, double t);

/// Scales every trainable gradient by max_norm / g when the global L2 norm g
/// exceeds max_norm. Returns the factor applied (1 when unchanged).
float clip_global_norm(ParameterStore& params, float max_norm);

struct AdamSlot {
    std::vector<float> m;
    std::vector<float> v;
    std::uint64_t steps = 0;
};

/// Adam with bias correction. Moments are kept per parameter name and each
/// parameter counts its own steps, so a group that leaves F starts with a
/// fresh bias correction.
class Adam {
  public:
    float beta1 = 0.9f;
    float beta2 = 0.999f;
    float eps = 1e-8f;

    /// Updates every parameter that requires grad and holds a gradient;
    /// frozen parameters are not visited.
    void step(ParameterStore& params, float lr);

    std::uint64_t steps() const noexcept { return steps_; }
    const std::map<std::string, AdamSlot>& slots() const noexcept { return slots_; }

    void restore(std::uint64_t steps, std::map<std::string, AdamSlot> slots);

  private:
    std::uint64_t steps_ = 0;
    std::map<std::string, AdamSlot> slots_;
};

/// Sums gradients over micro-batches; the caller scales each micro-batch loss
/// by 1 / accumulation_steps before backward().
class GradientAccumulator {
  public:
    explicit GradientAccumulator(std::size_t accumulation_steps = 1);

    std::size_t accumulation_steps() const noexcept { return steps_; }
    std::size_t pending() const noexcept { return pending_; }

    /// Registers one micro-batch. On every accumulation_steps-th call clips the
    /// summed gradient, applies Adam at `lr`, zeroes gradients and returns true.
    bool accumulate_and_maybe_step(ParameterStore& params, Adam& adam, float lr, float max_grad_norm);

  private:
    std::size_t steps_;
    std::size_t pending_ = 0;
};

}  // namespace layerparti
