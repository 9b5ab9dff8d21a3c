// SPDX-License-Identifier: Apache-2.0
#include "layerparti/trainer.hpp"

#include <algorithm>
#include <chrono>
#include <cstdio>
#include <fstream>
#include <iostream>
#include <sstream>

#include "layerparti/checkpoint.hpp"
#include "layerparti/errors.hpp"
#include "layerparti/ops.hpp"

namespace layerparti {

namespace {

std::string fmt(double v) {
    char buf[40];
    std::snprintf(buf, sizeof buf, "%.9g", v);
    return buf;
}

nlohmann::ordered_json sampler_to_json(const BatchSampler::State& s) {
    return {{"rng_seed", s.rng.seed()},        {"rng_counter", s.rng.counter()},
            {"labeled_order", s.labeled_order}, {"labeled_pos", s.labeled_pos},
            {"unlabeled_order", s.unlabeled_order}, {"unlabeled_pos", s.unlabeled_pos},
            {"epoch", s.epoch}};
}

BatchSampler::State sampler_from_json(const nlohmann::ordered_json& j) {
    BatchSampler::State s;
    s.rng = Rng(j.at("rng_seed").get<std::uint64_t>(), j.at("rng_counter").get<std::uint64_t>());
    s.labeled_order = j.at("labeled_order").get<std::vector<std::size_t>>();
    s.labeled_pos = j.at("labeled_pos");
    s.unlabeled_order = j.at("unlabeled_order").get<std::vector<std::size_t>>();
    s.unlabeled_pos = j.at("unlabeled_pos");
    s.epoch = j.at("epoch");
    return s;
}

/// Keeps the header and the rows of iterations before `keep_below`.
void truncate_csv(const std::filesystem::path& path, std::size_t keep_below) {
    std::ifstream in(path, std::ios::binary);
    if (!in) return;
    std::string line, kept;
    bool header = true;
    while (std::getline(in, line)) {
        if (header || std::stoull(line.substr(0, line.find(','))) < keep_below) kept += line + "\n";
        header = false;
    }
    in.close();
    std::ofstream(path, std::ios::binary | std::ios::trunc) << kept;
}

struct MicroResult {
    float ce = 0.0f;
    float consist = 0.0f;
    float total = 0.0f;
    std::size_t epoch = 0;
};

}  // namespace

void write_metrics_header(std::ostream& out) {
    out << "iteration,epoch,lr,w,loss_ce,loss_consist,loss_total,frozen_groups\n";
}

void write_metrics_row(std::ostream& out, const MetricsRow& r) {
    out << r.iteration << ',' << r.epoch << ',' << fmt(r.lr) << ',' << fmt(r.w) << ',' << fmt(r.loss_ce) << ','
        << fmt(r.loss_consist) << ',' << fmt(r.loss_total) << ',' << r.frozen_groups << '\n';
}

nlohmann::ordered_json EvalReport::to_json() const {
    return {{"total", total},   {"correct", correct}, {"accuracy", accuracy}, {"precision", precision},
            {"recall", recall}, {"f1", f1},           {"macro_f1", macro_f1}, {"confusion", confusion}};
}

EvalReport report_from_predictions(std::span<const std::int32_t> predicted, std::span<const std::int32_t> truth,
                                   std::size_t n_classes) {
    if (predicted.size() != truth.size()) throw DimensionError("prediction and label counts differ");
    EvalReport r;
    r.total = truth.size();
    r.confusion.assign(n_classes, std::vector<std::size_t>(n_classes, 0));
    for (std::size_t i = 0; i < truth.size(); ++i) {
        const auto y = static_cast<std::size_t>(truth[i]), p = static_cast<std::size_t>(predicted[i]);
        if (y >= n_classes || p >= n_classes) throw InputError("class index outside [0, n_classes)");
        ++r.confusion[y][p];
        if (y == p) ++r.correct;
    }
    r.accuracy = r.total ? static_cast<double>(r.correct) / static_cast<double>(r.total) : 0.0;
    for (std::size_t c = 0; c < n_classes; ++c) {
        std::size_t tp = r.confusion[c][c], predicted_c = 0, actual_c = 0;
        for (std::size_t o = 0; o < n_classes; ++o) {
            predicted_c += r.confusion[o][c];
            actual_c += r.confusion[c][o];
        }
        if (predicted_c == 0 && actual_c == 0) {
            // class absent from both sides: vacuously perfect
            r.precision.push_back(1.0);
            r.recall.push_back(1.0);
            r.f1.push_back(1.0);
            continue;
        }
        const double p = predicted_c ? static_cast<double>(tp) / static_cast<double>(predicted_c) : 0.0;
        const double rec = actual_c ? static_cast<double>(tp) / static_cast<double>(actual_c) : 0.0;
        r.precision.push_back(p);
        r.recall.push_back(rec);
        r.f1.push_back(p + rec > 0.0 ? 2.0 * p * rec / (p + rec) : 0.0);
    }
    double sum = 0.0;
    for (double f : r.f1) sum += f;
    r.macro_f1 = n_classes ? sum / static_cast<double>(n_classes) : 0.0;
    return r;
}

std::vector<std::int32_t> predict(const ParameterStore& params, const Dataset& data, std::size_t batch_size) {
    NoGradGuard no_grad;
    Rng unused(0);
    const auto& c = params.config();
    std::vector<std::int32_t> out;
    out.reserve(data.size());
    for (std::size_t start = 0; start < data.size(); start += batch_size) {
        const std::size_t end = std::min(data.size(), start + batch_size);
        std::vector<std::vector<std::int32_t>> rows;
        for (std::size_t i = start; i < end; ++i) {
            auto row = data.examples[i].tokens;
            if (row.size() > c.max_len) row.resize(c.max_len);
            rows.push_back(std::move(row));
        }
        const Tensor logits = forward(params, make_token_batch(rows), 0, unused, false);
        const std::size_t k = logits.dim(1);
        for (std::size_t r = 0; r < rows.size(); ++r) {
            const auto row = logits.data().subspan(r * k, k);
            out.push_back(static_cast<std::int32_t>(std::max_element(row.begin(), row.end()) - row.begin()));
        }
    }
    return out;
}

EvalReport evaluate(const ParameterStore& params, const Dataset& test, std::size_t batch_size) {
    Dataset labeled{{}, test.vocab, test.n_classes};
    std::vector<std::int32_t> truth;
    for (const auto& ex : test.examples) {
        if (!ex.label) continue;
        labeled.examples.push_back(ex);
        truth.push_back(*ex.label);
    }
    if (labeled.examples.empty()) throw DataError("evaluation data has no labeled example");
    const auto predicted = predict(params, labeled, batch_size);
    return report_from_predictions(predicted, truth, params.config().n_classes);
}

std::size_t iterations_per_epoch(const RunConfig& cfg, std::size_t n_labeled, std::size_t labeled_per_batch) {
    const std::size_t per_step = labeled_per_batch * cfg.accumulation_steps.value();
    return (n_labeled + per_step - 1) / per_step;
}

TrainResult train(const RunConfig& config, const Dataset& data, const TrainOptions& options) {
    const RunConfig cfg = config.resolved();
    ModelConfig mc = cfg.model;
    mc.vocab_size = data.vocab.size();
    mc.n_classes = std::max<std::size_t>(2, data.n_classes);
    mc.validate();
    for (const auto& ex : data.examples) {
        if (ex.tokens.size() > mc.max_len) throw DataError("example longer than max_len; tokenize with the same max_len");
    }

    Rng master(cfg.seed);
    Rng init_rng = master.fork();
    Rng sampler_rng = master.fork();
    Rng dropout_rng = master.fork();

    TrainResult result;
    result.vocab = data.vocab;
    result.params = init_model(mc, init_rng);
    BatchSampler sampler(data, cfg.batch_size, *cfg.labeled_frac, sampler_rng);
    const std::size_t per_epoch = iterations_per_epoch(cfg, data.labeled_count(), sampler.labeled_per_batch());
    const std::size_t max_it = *cfg.epochs * per_epoch;
    result.max_iterations = max_it;
    result.partition = make_partition(result.params, cfg.split_level, max_it, cfg.unfreeze_threshold);

    Adam adam;
    GradientAccumulator accumulator(*cfg.accumulation_steps);
    std::optional<TemporalEnsemble> ensemble;
    if (cfg.ssl == SslMode::te) ensemble.emplace(data.size(), mc.n_classes, cfg.alpha);
    const ConsistencySchedule w_schedule = cfg.consistency_schedule(max_it);
    const LrSchedule lr_schedule = cfg.lr_schedule(max_it);

    std::size_t start = 0;
    if (options.resume) {
        Checkpoint ck = load_checkpoint(*options.resume);
        const auto stored = ck.meta.value("config_hash", std::uint64_t{0});
        if (stored != cfg.hash()) {
            throw ConfigError("refusing to resume from " + options.resume->string() +
                              ": it was written with a different configuration (hash " + std::to_string(stored) +
                              ", current " + std::to_string(cfg.hash()) + ")");
        }
        if (!(ck.vocab == data.vocab) || !(ck.params.config() == mc)) {
            throw ConfigError("refusing to resume from " + options.resume->string() + ": data or model shape differs");
        }
        result.params = std::move(ck.params);
        result.partition = ck.partition;
        adam = std::move(ck.adam);
        ensemble = std::move(ck.ensemble);
        sampler.restore(sampler_from_json(ck.meta.at("sampler")));
        dropout_rng = Rng(ck.meta.at("dropout_rng_seed").get<std::uint64_t>(),
                          ck.meta.at("dropout_rng_counter").get<std::uint64_t>());
        start = ck.meta.at("iteration");
    }

    ParameterStore& params = result.params;
    PartitionState& partition = result.partition;
    const int split = cfg.split_level;
    const std::size_t accum = *cfg.accumulation_steps;
    const std::size_t k = mc.n_classes;

    std::ofstream metrics_out, timing_out;
    if (!options.out_dir.empty()) {
        std::filesystem::create_directories(options.out_dir);
        const auto metrics_path = options.out_dir / "metrics.csv";
        const auto timing_path = options.out_dir / "timing.csv";
        if (start > 0 && std::filesystem::exists(metrics_path)) {
            truncate_csv(metrics_path, start);
            truncate_csv(timing_path, start);
            metrics_out.open(metrics_path, std::ios::binary | std::ios::app);
            timing_out.open(timing_path, std::ios::binary | std::ios::app);
        } else {
            metrics_out.open(metrics_path, std::ios::binary | std::ios::trunc);
            timing_out.open(timing_path, std::ios::binary | std::ios::trunc);
            write_metrics_header(metrics_out);
            timing_out << "iteration,wall_ms\n";
        }
        nlohmann::ordered_json manifest = {
            {"config", cfg.to_json()},
            {"config_hash", cfg.hash()},
            {"seed", cfg.seed},
            {"model", {{"vocab_size", mc.vocab_size}, {"n_classes", mc.n_classes}, {"parameters", params.parameter_count()}}},
            {"data", {{"examples", data.size()}, {"labeled", data.labeled_count()}}},
            {"iterations_per_epoch", per_epoch},
            {"max_iterations", max_it},
            {"unfreeze_start", partition.unfreeze_start()},
        };
        std::ofstream(options.out_dir / "run_manifest.json", std::ios::binary) << manifest.dump(2) << '\n';
    }

    auto save = [&](const std::filesystem::path& path, std::size_t next_iteration) {
        Checkpoint ck;
        ck.params = params.clone();
        ck.vocab = data.vocab;
        ck.partition = partition;
        ck.adam = adam;
        ck.ensemble = ensemble;
        ck.meta = {{"config_hash", cfg.hash()},
                   {"config", cfg.to_json()},
                   {"iteration", next_iteration},
                   {"epoch", next_iteration / per_epoch},
                   {"sampler", sampler_to_json(sampler.state())},
                   {"dropout_rng_seed", dropout_rng.seed()},
                   {"dropout_rng_counter", dropout_rng.counter()}};
        save_checkpoint(path, ck);
    };

    auto micro_step = [&](double w) {
        const Batch batch = sampler.next();
        const std::size_t b = batch.size();
        Tensor logits, teacher;
        std::vector<std::uint8_t> consist_rows(b, 0);
        auto wants_consistency = [&](std::size_t r) { return batch.labels[r] < 0 || cfg.consistency_on_labeled; };

        switch (cfg.ssl) {
            case SslMode::none:
                logits = forward_head(params, forward_features(params, batch.tokens, split, dropout_rng, true), split,
                                      dropout_rng, true);
                break;
            case SslMode::pi: {
                PiOutputs pi = pi_targets(params, batch.tokens, split, dropout_rng);
                logits = pi.logits;
                teacher = pi.teacher;
                for (std::size_t r = 0; r < b; ++r) consist_rows[r] = wants_consistency(r);
                break;
            }
            case SslMode::te: {
                logits = forward_head(params, forward_features(params, batch.tokens, split, dropout_rng, true), split,
                                      dropout_rng, true);
                std::vector<float> targets(b * k, 0.0f);
                for (std::size_t r = 0; r < b; ++r) {
                    if (!wants_consistency(r)) continue;
                    if (auto t = ensemble->target(batch.indices[r])) {
                        std::copy(t->begin(), t->end(), targets.begin() + static_cast<std::ptrdiff_t>(r * k));
                        consist_rows[r] = 1;
                    }
                }
                Tensor probs;
                {
                    NoGradGuard no_grad;
                    probs = ops::softmax(logits);
                }
                for (std::size_t r = 0; r < b; ++r) ensemble->update(batch.indices[r], probs.data().subspan(r * k, k));
                teacher = Tensor::from({b, k}, std::move(targets));
                break;
            }
        }

        LossParts parts = combined_loss(logits, batch.labels, teacher, consist_rows, w);
        Tensor scaled = ops::scale(parts.total, 1.0f / static_cast<float>(accum));
        if (scaled.requires_grad()) {
            backward(scaled);
        } else {
            Tape::active().clear();
        }
        return MicroResult{parts.ce, parts.consistency, parts.total.item(), batch.epoch};
    };

    const auto t0 = std::chrono::steady_clock::now();
    for (std::size_t t = start; t < max_it; ++t) {
        const double lr = lr_at(lr_schedule, static_cast<double>(t));
        const double w = cfg.ssl == SslMode::none ? 0.0 : consistency_weight(w_schedule, t);
        MetricsRow row;
        row.iteration = t;
        row.epoch = t / per_epoch;
        row.lr = lr;
        row.w = w;
        bool stepped = false;
        for (std::size_t m = 0; m < accum; ++m) {
            const MicroResult mr = micro_step(w);
            row.loss_ce += mr.ce / static_cast<float>(accum);
            row.loss_consist += mr.consist / static_cast<float>(accum);
            row.loss_total += mr.total / static_cast<float>(accum);
            stepped = accumulator.accumulate_and_maybe_step(params, adam, static_cast<float>(lr), cfg.clip);
        }
        if (!stepped) throw InvariantError("optimizer did not step at the end of an accumulation cycle");
        step_unfreeze(partition, params, t);
        row.frozen_groups = partition.frozen_groups.size();
        row.wall_ms = std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - t0).count();
        result.metrics.push_back(row);

        if (metrics_out.is_open()) {
            write_metrics_row(metrics_out, row);
            timing_out << row.iteration << ',' << fmt(row.wall_ms) << '\n';
            if ((t + 1) % per_epoch == 0) {
                metrics_out.flush();
                timing_out.flush();
                save(options.out_dir / ("checkpoint_epoch" + std::to_string((t + 1) / per_epoch) + ".lpt"), t + 1);
            }
        }
        if (options.verbose && (t + 1) % per_epoch == 0) {
            std::cerr << "epoch " << (t + 1) / per_epoch << "/" << *cfg.epochs << "  iteration " << t + 1 << "/"
                      << max_it << "  loss " << row.loss_total << "  ce " << row.loss_ce << "  consist "
                      << row.loss_consist << "  frozen " << row.frozen_groups << '\n';
        }
    }
    if (metrics_out.is_open()) save(options.out_dir / "final.lpt", max_it);
    return result;
}

void export_schedules(const RunConfig& config, std::size_t total_iterations, std::ostream& out) {
    const RunConfig cfg = config.resolved();
    const ConsistencySchedule ws = cfg.consistency_schedule(total_iterations);
    const LrSchedule ls = cfg.lr_schedule(total_iterations);
    out << "t lr w\n";
    for (std::size_t t = 0; t < total_iterations; ++t) {
        out << t << ' ' << fmt(lr_at(ls, static_cast<double>(t))) << ' ' << fmt(consistency_weight(ws, t)) << '\n';
    }
}

}  // namespace layerparti
