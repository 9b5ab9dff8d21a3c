// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstddef>
#include <cstdint>
#include <optional>
#include <span>
#include <vector>

#include "layerparti/model.hpp"

LAYERPARTI_BEGIN_NAMESPACE

/// Which layer groups form the frozen prefix F. The rest of the model is U.
struct PartitionState {
    int split_level = 1;
    std::vector<int> frozen_groups;  // always {0, ..., j}
    double unfreeze_threshold = 0.8;
    std::size_t max_iterations = 1;

    /// First iteration index at which unfreezing may happen: ceil(threshold * max_iterations).
    std::size_t unfreeze_start() const;
    bool is_frozen(int group) const;
};

/// Freezes groups 0..split_level and makes every other group trainable.
PartitionState make_partition(ParameterStore& params, int split_level, std::size_t max_iterations,
                              double unfreeze_threshold = 0.8);

/// Re-applies trainability flags from a restored state.
void apply_partition(ParameterStore& params, const PartitionState& state);

/// Once t reaches unfreeze_start(), moves the highest frozen group into U and
/// returns its index. At most one group per call.
std::optional<int> step_unfreeze(PartitionState& state, ParameterStore& params, std::size_t t);

/// FNV-1a over the names and raw bytes of every tensor in `groups`, in store order.
std::uint64_t parameter_digest(const ParameterStore& params, std::span<const int> groups);

std::uint64_t frozen_parameter_digest(const ParameterStore& params, const PartitionState& state);

LAYERPARTI_END_NAMESPACE
