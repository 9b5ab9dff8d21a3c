// SPDX-License-Identifier: Apache-2.0
#include "layerparti/partition.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <type_traits>

#include "layerparti/errors.hpp"

LAYERPARTI_BEGIN_NAMESPACE

std::size_t PartitionState::unfreeze_start() const {
    const double x = unfreeze_threshold * static_cast<double>(max_iterations);
    // Absorb representation error so that e.g. 0.8 * 1000 gives exactly 800.
    return static_cast<std::size_t>(std::ceil(x - 1e-9 * std::max(1.0, x)));
}

bool PartitionState::is_frozen(int group) const {
    return std::find(frozen_groups.begin(), frozen_groups.end(), group) != frozen_groups.end();
}

PartitionState make_partition(ParameterStore& params, int split_level, std::size_t max_iterations,
                              double unfreeze_threshold) {
    const auto& c = params.config();
    if (split_level < 0 || split_level > static_cast<int>(c.n_layers)) {
        throw UsageError("split level " + std::to_string(split_level) + " outside [0, " + std::to_string(c.n_layers) +
                         "]");
    }
    if (max_iterations == 0) throw ConfigError("max_iterations must be positive");
    if (!(unfreeze_threshold > 0.0 && unfreeze_threshold <= 1.0)) {
        throw ConfigError("unfreeze_threshold must lie in (0, 1]");
    }
    PartitionState state;
    state.split_level = split_level;
    state.unfreeze_threshold = unfreeze_threshold;
    state.max_iterations = max_iterations;
    for (int g = 0; g <= split_level; ++g) state.frozen_groups.push_back(g);
    apply_partition(params, state);
    return state;
}

void apply_partition(ParameterStore& params, const PartitionState& state) {
    for (int g = 0; g < params.config().group_count(); ++g) params.set_group_trainable(g, !state.is_frozen(g));
}

std::optional<int> step_unfreeze(PartitionState& state, ParameterStore& params, std::size_t t) {
    if (state.frozen_groups.empty() || t < state.unfreeze_start()) return std::nullopt;
    const int top = state.frozen_groups.back();
    state.frozen_groups.pop_back();
    params.set_group_trainable(top, true);
    return top;
}

std::uint64_t parameter_digest(const ParameterStore& params, std::span<const int> groups) {
    std::uint64_t h = 0xcbf29ce484222325ULL;
    auto mix = [&h](std::uint8_t byte) {
        h ^= byte;
        h *= 0x100000001b3ULL;
    };
    for (const auto& e : params.entries()) {
        if (std::find(groups.begin(), groups.end(), e.group) == groups.end()) continue;
        for (char ch : e.name) mix(static_cast<std::uint8_t>(ch));
        for (Real v : e.tensor.data()) {
            using Bits = std::conditional_t<sizeof(Real) == 8, std::uint64_t, std::uint32_t>;
            const auto bits = std::bit_cast<Bits>(v);
            for (std::size_t s = 0; s < 8 * sizeof(Bits); s += 8) mix(static_cast<std::uint8_t>(bits >> s));
        }
    }
    return h;
}

std::uint64_t frozen_parameter_digest(const ParameterStore& params, const PartitionState& state) {
    return parameter_digest(params, state.frozen_groups);
}

LAYERPARTI_END_NAMESPACE
