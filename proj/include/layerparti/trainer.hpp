// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstddef>
#include <filesystem>
#include <iosfwd>
#include <optional>
#include <vector>

#include "layerparti/config.hpp"
#include "layerparti/data.hpp"
#include "layerparti/model.hpp"
#include "layerparti/partition.hpp"

namespace layerparti {

/// One row per optimizer step.
struct MetricsRow {
    std::size_t iteration = 0;
    std::size_t epoch = 0;
    double lr = 0.0;
    double w = 0.0;
    float loss_ce = 0.0f;
    float loss_consist = 0.0f;
    float loss_total = 0.0f;
    std::size_t frozen_groups = 0;
    double wall_ms = 0.0;
};

/// Header plus the deterministic columns; wall-clock time goes to a separate
/// timing file so that metrics of identical runs are byte-identical.
void write_metrics_header(std::ostream& out);
void write_metrics_row(std::ostream& out, const MetricsRow& row);

struct EvalReport {
    std::size_t total = 0;
    std::size_t correct = 0;
    double accuracy = 0.0;
    std::vector<double> precision;
    std::vector<double> recall;
    std::vector<double> f1;
    double macro_f1 = 0.0;
    std::vector<std::vector<std::size_t>> confusion;  // [true][predicted]

    nlohmann::ordered_json to_json() const;
};

EvalReport report_from_predictions(std::span<const std::int32_t> predicted, std::span<const std::int32_t> truth,
                                   std::size_t n_classes);

/// Argmax of eval-mode logits for every example, in dataset order.
std::vector<std::int32_t> predict(const ParameterStore& params, const Dataset& data, std::size_t batch_size = 64);

/// Accuracy, per-class precision/recall/F1 and confusion matrix over labeled examples.
EvalReport evaluate(const ParameterStore& params, const Dataset& test, std::size_t batch_size = 64);

/// Optimizer steps per epoch: ceil(labeled examples / labeled examples per optimizer step).
std::size_t iterations_per_epoch(const RunConfig& resolved, std::size_t n_labeled, std::size_t labeled_per_batch);

struct TrainOptions {
    std::filesystem::path out_dir;  // empty: keep everything in memory
    std::optional<std::filesystem::path> resume;
    bool verbose = false;
};

struct TrainResult {
    ParameterStore params;
    PartitionState partition;
    Vocab vocab;
    std::vector<MetricsRow> metrics;
    std::size_t max_iterations = 0;
};

/// The layer-partitioned semi-supervised training loop. Writes metrics.csv,
/// timing.csv, run_manifest.json, one checkpoint per epoch and final.lpt
/// into out_dir when it is set.
TrainResult train(const RunConfig& config, const Dataset& data, const TrainOptions& options = {});

/// Rows "t lr w" for t in [0, total_iterations).
void export_schedules(const RunConfig& config, std::size_t total_iterations, std::ostream& out);

}  // namespace layerparti
