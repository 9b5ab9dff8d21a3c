// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstddef>
#include <cstdint>
#include <optional>
#include <span>
#include <string_view>
#include <vector>

#include "layerparti/model.hpp"
#include "layerparti/tensor.hpp"

LAYERPARTI_BEGIN_NAMESPACE

enum class SslMode { none, pi, te };

SslMode parse_ssl_mode(std::string_view text);
std::string_view to_string(SslMode mode);

/// Gaussian ramp-up to w_max, plateau, then Gaussian ramp-down.
struct ConsistencySchedule {
    double w_max = 10.0;
    double warmup_frac = 0.25;
    double rampdown_frac = 0.15;
    double rampup_coeff = 5.0;
    double rampdown_coeff = 12.5;
    std::size_t total_iterations = 1;

    void validate() const;
    double rampup_end() const { return warmup_frac * static_cast<double>(total_iterations); }
    double rampdown_start() const { return (1.0 - rampdown_frac) * static_cast<double>(total_iterations); }
};

/// w(t) for 0 <= t < total_iterations; UsageError otherwise.
double consistency_weight(const ConsistencySchedule& schedule, std::size_t t);

/// Per-example exponential moving average of predictions, with the
/// zero-initialization bias divided out when read.
class TemporalEnsemble {
  public:
    TemporalEnsemble() = default;
    TemporalEnsemble(std::size_t n_examples, std::size_t n_classes, Real alpha);

    std::size_t size() const noexcept { return counts_.size(); }
    std::size_t classes() const noexcept { return classes_; }
    Real alpha() const noexcept { return alpha_; }

    /// Z_i / (1 - alpha^T_i), or nothing while T_i == 0.
    std::optional<std::vector<Real>> target(std::size_t i) const;

    /// T_i += 1, then Z_i = alpha Z_i + (1 - alpha) z.
    void update(std::size_t i, std::span<const Real> z);

    std::span<const Real> accumulators() const noexcept { return z_; }
    std::span<const std::uint32_t> counts() const noexcept { return counts_; }

    /// Rebuilds a state from serialized buffers.
    static TemporalEnsemble restore(std::size_t n_classes, Real alpha, std::vector<Real> z,
                                    std::vector<std::uint32_t> counts);

  private:
    void check_index(std::size_t i) const;

    std::size_t classes_ = 0;
    Real alpha_ = 0.6f;
    std::vector<Real> z_;
    std::vector<std::uint32_t> counts_;
};

/// Student and teacher predictions from two independent stochastic passes.
struct PiOutputs {
    Tensor logits;   // student, on the tape
    Tensor probs;    // softmax(logits), on the tape
    Tensor teacher;  // detached softmax of the second pass
};

PiOutputs pi_targets(const ParameterStore& params, const TokenBatch& batch, int split, Rng& rng);

struct LossParts {
    Tensor total;
    Real ce = 0.0f;
    Real consistency = 0.0f;
    std::size_t n_labeled = 0;
    std::size_t n_consistency = 0;
};

/// L = CE over rows with labels[r] >= 0 + w * MSE(softmax(logits), teacher)
/// over rows with consistency_rows[r] set. Empty slices contribute 0. The
/// teacher is read as a constant.
LossParts combined_loss(const Tensor& logits, std::span<const std::int32_t> labels, const Tensor& teacher,
                        std::span<const std::uint8_t> consistency_rows, double w);

LAYERPARTI_END_NAMESPACE
