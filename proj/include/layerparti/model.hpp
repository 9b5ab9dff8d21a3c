// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "layerparti/rng.hpp"
#include "layerparti/tensor.hpp"

LAYERPARTI_BEGIN_NAMESPACE

inline constexpr std::int32_t kPadId = 0;
inline constexpr std::int32_t kClsId = 1;
inline constexpr std::int32_t kUnkId = 2;

struct ModelConfig {
    std::size_t n_layers = 2;
    std::size_t d_model = 300;
    std::size_t d_ff = 512;
    std::size_t n_heads = 5;
    std::size_t vocab_size = 1000;
    std::size_t max_len = 256;
    std::size_t n_classes = 2;
    Real dropout_f = 0.1f;  // inside the frozen prefix F
    Real dropout_u = 0.1f;  // inside the trainable suffix U

    /// Throws ConfigError on an inconsistent configuration.
    void validate() const;

    /// Group 0 is the embeddings, 1..n_layers the encoder layers, n_layers + 1 the head.
    int head_group() const { return static_cast<int>(n_layers) + 1; }
    int group_count() const { return static_cast<int>(n_layers) + 2; }

    bool operator==(const ModelConfig&) const = default;
};

struct ParameterEntry {
    std::string name;
    int group = 0;
    Tensor tensor;
};

/// Named, layer-grouped model parameters in a fixed registration order.
class ParameterStore {
  public:
    ParameterStore() = default;
    explicit ParameterStore(ModelConfig config) : config_(config) {}

    const ModelConfig& config() const noexcept { return config_; }

    /// Groups must be registered in nondecreasing order; names are unique.
    void add(std::string name, int group, Tensor tensor);

    const Tensor& at(std::string_view name) const;
    Tensor& at(std::string_view name);
    bool contains(std::string_view name) const;

    std::span<const ParameterEntry> entries() const noexcept { return entries_; }
    std::span<ParameterEntry> entries() noexcept { return entries_; }
    std::size_t size() const noexcept { return entries_.size(); }

    /// Total number of scalar parameters.
    std::size_t parameter_count() const;

    void set_group_trainable(int group, bool trainable);
    void zero_grad();

    /// Deep copy; the clone shares no storage with this store.
    ParameterStore clone() const;

  private:
    ModelConfig config_{};
    std::vector<ParameterEntry> entries_;
    std::unordered_map<std::string, std::size_t> index_;
};

/// Padded token ids [batch x length], row-major, with [CLS] in column 0.
struct TokenBatch {
    std::vector<std::int32_t> token_ids;
    std::vector<std::uint8_t> mask;  // 1 = real token
    std::size_t batch = 0;
    std::size_t length = 0;

    /// Throws InputError if a row violates the batch contract for `config`.
    void validate(const ModelConfig& config) const;
};

/// Pads `rows` (each starting with [CLS]) to the longest row.
TokenBatch make_token_batch(std::span<const std::vector<std::int32_t>> rows);

/// Output of the lower groups 0..group, plus what the upper groups still need.
struct Features {
    Tensor hidden;  // [b, L, d_model]
    int group = 0;
    std::vector<std::uint8_t> mask;
};

ParameterStore init_model(const ModelConfig& config, Rng& rng);

/// F(x): embeddings and encoder layers 1..through_group, dropout at dropout_f.
Features forward_features(const ParameterStore& params, const TokenBatch& batch, int through_group, Rng& rng,
                          bool training);

/// U(F(x)): encoder layers from_group+1..n_layers at dropout_u, then the linear
/// head on the [CLS] state. Returns logits [b, n_classes].
Tensor forward_head(const ParameterStore& params, const Features& features, int from_group, Rng& rng, bool training);

/// Monolithic forward pass; `split` only selects which dropout rate each group uses.
Tensor forward(const ParameterStore& params, const TokenBatch& batch, int split, Rng& rng, bool training);

LAYERPARTI_END_NAMESPACE
