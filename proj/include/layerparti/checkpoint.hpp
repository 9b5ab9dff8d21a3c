// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <filesystem>
#include <optional>

#include <nlohmann/json.hpp>

#include "layerparti/data.hpp"
#include "layerparti/model.hpp"
#include "layerparti/optim.hpp"
#include "layerparti/partition.hpp"
#include "layerparti/ssl.hpp"

namespace layerparti {

/// Layout: "LPT1", u64 little-endian header length, UTF-8 JSON header, then
/// little-endian buffers. Parameters come first, in store order, followed by
/// the extra buffers listed under "buffers" (optimizer moments, ensemble state).
struct Checkpoint {
    ParameterStore params;
    Vocab vocab;
    PartitionState partition;
    Adam adam;
    std::optional<TemporalEnsemble> ensemble;
    nlohmann::ordered_json meta = nlohmann::ordered_json::object();
};

void save_checkpoint(const std::filesystem::path& path, const Checkpoint& checkpoint);
Checkpoint load_checkpoint(const std::filesystem::path& path);

}  // namespace layerparti
