// SPDX-License-Identifier: Apache-2.0
#include "layerparti/ssl.hpp"

#include <cmath>
#include <string>

#include "layerparti/errors.hpp"
#include "layerparti/ops.hpp"

LAYERPARTI_BEGIN_NAMESPACE

SslMode parse_ssl_mode(std::string_view text) {
    if (text == "none") return SslMode::none;
    if (text == "pi") return SslMode::pi;
    if (text == "te") return SslMode::te;
    throw ConfigError("unknown ssl mode '" + std::string(text) + "' (expected none, pi or te)");
}

std::string_view to_string(SslMode mode) {
    switch (mode) {
        case SslMode::none:
            return "none";
        case SslMode::pi:
            return "pi";
        case SslMode::te:
            return "te";
    }
    return "none";
}

void ConsistencySchedule::validate() const {
    if (!(w_max >= 0.0)) throw ConfigError("w_max must be nonnegative");
    if (warmup_frac < 0.0 || rampdown_frac < 0.0 || warmup_frac + rampdown_frac >= 1.0) {
        throw ConfigError("consistency warm-up and ramp-down fractions must be nonnegative and sum below 1");
    }
    if (total_iterations == 0) throw ConfigError("total_iterations must be positive");
}

double consistency_weight(const ConsistencySchedule& s, std::size_t t) {
    if (t >= s.total_iterations) {
        throw UsageError("iteration " + std::to_string(t) + " outside schedule of " + std::to_string(s.total_iterations));
    }
    const double tt = static_cast<double>(t);
    const double t_up = s.rampup_end();
    const double t_down = s.rampdown_start();
    if (tt < t_up) {
        const double x = 1.0 - tt / t_up;
        return s.w_max * std::exp(-s.rampup_coeff * x * x);
    }
    if (tt >= t_down) {
        const double x = (tt - t_down) / (static_cast<double>(s.total_iterations) - t_down);
        return s.w_max * std::exp(-s.rampdown_coeff * x * x);
    }
    return s.w_max;
}

TemporalEnsemble::TemporalEnsemble(std::size_t n_examples, std::size_t n_classes, Real alpha)
    : classes_(n_classes), alpha_(alpha), z_(n_examples * n_classes, 0.0f), counts_(n_examples, 0) {
    if (!(alpha > 0.0f && alpha < 1.0f)) throw ConfigError("ensemble decay alpha must lie in (0, 1)");
    if (n_classes == 0) throw ConfigError("ensemble needs at least one class");
}

TemporalEnsemble TemporalEnsemble::restore(std::size_t n_classes, Real alpha, std::vector<Real> z,
                                           std::vector<std::uint32_t> counts) {
    TemporalEnsemble te(counts.size(), n_classes, alpha);
    if (z.size() != counts.size() * n_classes) throw DataError("ensemble state buffers disagree in size");
    te.z_ = std::move(z);
    te.counts_ = std::move(counts);
    return te;
}

void TemporalEnsemble::check_index(std::size_t i) const {
    if (i >= counts_.size()) {
        throw UsageError("example index " + std::to_string(i) + " outside ensemble of " + std::to_string(counts_.size()));
    }
}

std::optional<std::vector<Real>> TemporalEnsemble::target(std::size_t i) const {
    check_index(i);
    if (counts_[i] == 0) return std::nullopt;
    const auto correction = static_cast<Real>(1.0 - std::pow(static_cast<double>(alpha_), counts_[i]));
    std::vector<Real> out(classes_);
    for (std::size_t c = 0; c < classes_; ++c) out[c] = z_[i * classes_ + c] / correction;
    return out;
}

void TemporalEnsemble::update(std::size_t i, std::span<const Real> z) {
    check_index(i);
    if (z.size() != classes_) {
        throw DimensionError("ensemble update with " + std::to_string(z.size()) + " classes, expected " +
                             std::to_string(classes_));
    }
    ++counts_[i];
    for (std::size_t c = 0; c < classes_; ++c) {
        Real& acc = z_[i * classes_ + c];
        acc = alpha_ * acc + (1.0f - alpha_) * z[c];
    }
}

PiOutputs pi_targets(const ParameterStore& params, const TokenBatch& batch, int split, Rng& rng) {
    PiOutputs out;
    out.logits = forward_head(params, forward_features(params, batch, split, rng, true), split, rng, true);
    out.probs = ops::softmax(out.logits);
    NoGradGuard no_grad;
    Tensor second = forward_head(params, forward_features(params, batch, split, rng, true), split, rng, true);
    out.teacher = ops::softmax(second).detach();
    return out;
}

LossParts combined_loss(const Tensor& logits, std::span<const std::int32_t> labels, const Tensor& teacher,
                        std::span<const std::uint8_t> consistency_rows, double w) {
    const std::size_t b = logits.dim(0);
    if (labels.size() != b || consistency_rows.size() != b) {
        throw DimensionError("combined_loss: per-row inputs do not match batch of " + std::to_string(b));
    }
    LossParts parts;
    std::vector<std::int32_t> labeled_rows, labeled_targets, consist_rows;
    for (std::size_t r = 0; r < b; ++r) {
        if (labels[r] >= 0) {
            labeled_rows.push_back(static_cast<std::int32_t>(r));
            labeled_targets.push_back(labels[r]);
        }
        if (consistency_rows[r]) consist_rows.push_back(static_cast<std::int32_t>(r));
    }
    parts.n_labeled = labeled_rows.size();
    parts.n_consistency = consist_rows.size();

    Tensor total;
    if (!labeled_rows.empty()) {
        Tensor ce = ops::cross_entropy(ops::gather_rows(logits, labeled_rows), labeled_targets);
        parts.ce = ce.item();
        total = ce;
    }
    if (!consist_rows.empty()) {
        if (!teacher.defined() || teacher.shape() != logits.shape()) {
            throw DimensionError("combined_loss: teacher must match logits " + shape_to_string(logits.shape()));
        }
        Tensor student = ops::gather_rows(ops::softmax(logits), consist_rows);
        Tensor target = ops::gather_rows(teacher.detach(), consist_rows);
        Tensor consist = ops::mse(student, target);
        parts.consistency = consist.item();
        Tensor weighted = ops::scale(consist, static_cast<Real>(w));
        total = total.defined() ? ops::add(total, weighted) : weighted;
    }
    parts.total = total.defined() ? total : Tensor::scalar(0.0f);
    return parts;
}

LAYERPARTI_END_NAMESPACE
