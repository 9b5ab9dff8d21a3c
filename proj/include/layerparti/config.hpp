// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <string_view>

#include <nlohmann/json.hpp>

#include "layerparti/data.hpp"
#include "layerparti/model.hpp"
#include "layerparti/optim.hpp"
#include "layerparti/ssl.hpp"

namespace layerparti {

/// Every hyperparameter of a training run. Fields left unset take their
/// ssl-mode dependent default in resolved().
struct RunConfig {
    ModelConfig model{};
    SslMode ssl = SslMode::none;
    int split_level = 1;  // F = groups 0..split_level: embeddings + first encoder layer

    std::optional<std::size_t> epochs;              // 3 supervised, 8 with ssl
    std::size_t batch_size = 16;
    std::optional<double> labeled_frac;             // 1 supervised, 0.25 with ssl
    std::optional<std::size_t> accumulation_steps;  // 1 supervised, 4 with ssl
    float clip = 0.4f;

    double w_max = 10.0;
    double w_warmup_frac = 0.25;
    double w_rampdown_frac = 0.15;
    double w_rampup_coeff = 5.0;
    double w_rampdown_coeff = 12.5;
    bool consistency_on_labeled = false;

    double lr_warmup_frac = 0.1;
    double peak_lr = 1e-3;

    float alpha = 0.6f;
    std::optional<float> dropout_f;  // 0.5 pi, 0.3 te, 0.1 supervised
    float dropout_u = 0.1f;
    double unfreeze_threshold = 0.8;

    std::uint64_t seed = 0;

    std::size_t synthetic_vocab_size = 100;
    std::size_t synthetic_seq_len = 16;

    /// Assigns one field from its textual key; ConfigError on unknown keys or bad values.
    void set(std::string_view key, std::string_view value);

    /// Copy with mode-dependent defaults filled in, validated.
    RunConfig resolved() const;
    void validate() const;

    /// Sorted `key = value` lines of the resolved config; the resume check hashes this.
    std::string canonical() const;
    std::uint64_t hash() const;
    nlohmann::ordered_json to_json() const;

    ConsistencySchedule consistency_schedule(std::size_t total_iterations) const;
    LrSchedule lr_schedule(std::size_t total_iterations) const;
};

/// Parses a flat UTF-8 `key = value` file ('#' starts a comment) into `config`.
void apply_config_file(RunConfig& config, const std::filesystem::path& path);

}  // namespace layerparti
