// SPDX-License-Identifier: Apache-2.0
//
// Command-line front end: train, eval, export-schedules, gen-data.
// Exit codes: 0 success, 1 usage/config error, 2 data error, 3 internal error.

#include <CLI11.hpp>

#include <cstdio>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include "layerparti/checkpoint.hpp"
#include "layerparti/config.hpp"
#include "layerparti/data.hpp"
#include "layerparti/errors.hpp"
#include "layerparti/trainer.hpp"

namespace lp = layerparti;

namespace {

struct CommonFlags {
    std::string config_path;
    std::string ssl;
    std::optional<std::uint64_t> seed;
    std::vector<std::string> overrides;
};

void add_common(CLI::App* cmd, CommonFlags& f) {
    cmd->add_option("--config", f.config_path, "Flat key = value config file");
    cmd->add_option("--ssl", f.ssl, "Consistency mode")->check(CLI::IsMember({"none", "pi", "te"}));
    cmd->add_option("--seed", f.seed, "Random seed");
    cmd->add_option("--set", f.overrides, "Config override key=value (repeatable)");
}

lp::RunConfig build_config(const CommonFlags& f) {
    lp::RunConfig cfg;
    if (!f.config_path.empty()) lp::apply_config_file(cfg, f.config_path);
    for (const auto& kv : f.overrides) {
        const auto eq = kv.find('=');
        if (eq == std::string::npos) throw lp::ConfigError("--set expects key=value, got '" + kv + "'");
        cfg.set(kv.substr(0, eq), kv.substr(eq + 1));
    }
    if (!f.ssl.empty()) cfg.ssl = lp::parse_ssl_mode(f.ssl);
    if (f.seed) cfg.seed = *f.seed;
    return cfg;
}

lp::SyntheticSpec parse_synthetic(const std::string& text, const lp::RunConfig& cfg) {
    std::vector<std::size_t> parts;
    std::size_t start = 0;
    while (start <= text.size()) {
        const auto comma = text.find(',', start);
        const std::string item = text.substr(start, comma == std::string::npos ? std::string::npos : comma - start);
        try {
            std::size_t used = 0;
            parts.push_back(std::stoull(item, &used));
            if (used != item.size()) throw std::invalid_argument(item);
        } catch (const std::exception&) {
            throw lp::ConfigError("--synthetic expects n_labeled,n_unlabeled,n_test, got '" + text + "'");
        }
        if (comma == std::string::npos) break;
        start = comma + 1;
    }
    if (parts.size() != 3) throw lp::ConfigError("--synthetic expects n_labeled,n_unlabeled,n_test, got '" + text + "'");
    lp::SyntheticSpec spec;
    spec.n_labeled = parts[0];
    spec.n_unlabeled = parts[1];
    spec.n_test = parts[2];
    spec.vocab_size = cfg.synthetic_vocab_size;
    spec.seq_len = cfg.synthetic_seq_len;
    return spec;
}

lp::Rng data_rng(std::uint64_t seed) { return lp::Rng(seed ^ 0xda7a5eedULL); }

void print_report(const lp::EvalReport& r) {
    std::printf("accuracy %.4f (%zu/%zu)  macro-F1 %.4f\n", r.accuracy, r.correct, r.total, r.macro_f1);
    for (std::size_t c = 0; c < r.f1.size(); ++c) {
        std::printf("  class %zu: precision %.4f recall %.4f F1 %.4f  confusion", c, r.precision[c], r.recall[c], r.f1[c]);
        for (auto n : r.confusion[c]) std::printf(" %zu", n);
        std::printf("\n");
    }
}

void write_json(const std::filesystem::path& path, const nlohmann::ordered_json& j) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw lp::DataError("cannot write " + path.string());
    out << j.dump(2) << '\n';
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Layer-partitioned semi-supervised text classification"};
    app.require_subcommand(1);

    CommonFlags train_flags, export_flags, gen_flags;
    std::string labeled_path, unlabeled_path, test_path, out_dir, synthetic, resume_path;
    bool quiet = false;
    auto* train_cmd = app.add_subcommand("train", "Run the training loop");
    add_common(train_cmd, train_flags);
    train_cmd->add_option("--labeled", labeled_path, "TSV of training examples (label<TAB>text, '-' = unlabeled)");
    train_cmd->add_option("--unlabeled", unlabeled_path, "TSV of extra unlabeled examples");
    train_cmd->add_option("--test", test_path, "TSV evaluated after training");
    train_cmd->add_option("--synthetic", synthetic, "Generate n_labeled,n_unlabeled,n_test synthetic examples");
    train_cmd->add_option("--resume", resume_path, "Checkpoint to resume from");
    train_cmd->add_option("--out", out_dir, "Output directory")->required();
    train_cmd->add_flag("--quiet", quiet, "No per-epoch progress");

    std::string checkpoint_path, eval_test, eval_out;
    auto* eval_cmd = app.add_subcommand("eval", "Evaluate a checkpoint");
    eval_cmd->add_option("checkpoint", checkpoint_path, "Checkpoint file")->required();
    eval_cmd->add_option("--test", eval_test, "TSV of labeled test examples")->required();
    eval_cmd->add_option("--out", eval_out, "Write the report as JSON");

    std::size_t export_iterations = 1000;
    std::string export_out;
    auto* export_cmd = app.add_subcommand("export-schedules", "Print t, lr(t), w(t)");
    add_common(export_cmd, export_flags);
    export_cmd->add_option("--iterations", export_iterations, "Number of optimizer steps")->check(CLI::PositiveNumber);
    export_cmd->add_option("--out", export_out, "Output file (default stdout)");

    std::string gen_synthetic, gen_out;
    auto* gen_cmd = app.add_subcommand("gen-data", "Write a synthetic dataset as TSV files");
    add_common(gen_cmd, gen_flags);
    gen_cmd->add_option("--synthetic", gen_synthetic, "n_labeled,n_unlabeled,n_test")->required();
    gen_cmd->add_option("--out", gen_out, "Output directory")->required();

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        return app.exit(e) == 0 ? 0 : 1;
    }

    try {
        if (*train_cmd) {
            const lp::RunConfig cfg = build_config(train_flags).resolved();
            const std::filesystem::path out(out_dir);
            lp::Dataset train_data;
            std::optional<lp::Dataset> test_data;
            if (!synthetic.empty()) {
                if (!labeled_path.empty() || !unlabeled_path.empty()) {
                    throw lp::ConfigError("--synthetic cannot be combined with --labeled/--unlabeled");
                }
                lp::Rng rng = data_rng(cfg.seed);
                lp::SyntheticData data = lp::generate_synthetic(parse_synthetic(synthetic, cfg), rng);
                lp::write_synthetic(data, cfg.seed, out / "data");
                train_data = std::move(data.train);
                if (!data.test.examples.empty()) test_data = std::move(data.test);
            } else {
                if (labeled_path.empty()) throw lp::ConfigError("train needs --labeled PATH or --synthetic");
                auto records = lp::read_tsv(labeled_path);
                if (!unlabeled_path.empty()) {
                    for (auto& r : lp::read_tsv(unlabeled_path)) {
                        r.label.reset();
                        records.push_back(std::move(r));
                    }
                }
                train_data = lp::build_dataset(records, nullptr, cfg.model.max_len);
            }
            if (!test_path.empty()) test_data = lp::load_tsv(test_path, &train_data.vocab, cfg.model.max_len);

            lp::TrainOptions options;
            options.out_dir = out;
            options.verbose = !quiet;
            if (!resume_path.empty()) options.resume = resume_path;
            const lp::TrainResult result = lp::train(cfg, train_data, options);
            std::printf("trained %zu optimizer steps; checkpoint %s\n", result.max_iterations,
                        (out / "final.lpt").string().c_str());
            if (test_data) {
                const lp::EvalReport report = lp::evaluate(result.params, *test_data);
                print_report(report);
                write_json(out / "eval.json", report.to_json());
            }
        } else if (*eval_cmd) {
            const lp::Checkpoint ck = lp::load_checkpoint(checkpoint_path);
            const auto& mc = ck.params.config();
            if (ck.vocab.size() != mc.vocab_size) {
                throw lp::DataError("vocabulary mismatch: checkpoint stores " + std::to_string(ck.vocab.size()) +
                                    " tokens but the model embeds " + std::to_string(mc.vocab_size));
            }
            const lp::Dataset test = lp::load_tsv(eval_test, &ck.vocab, mc.max_len);
            bool any_known = false;
            for (const auto& ex : test.examples) {
                for (std::size_t j = 1; j < ex.tokens.size() && !any_known; ++j) any_known = ex.tokens[j] != lp::kUnkId;
            }
            if (!any_known) {
                throw lp::DataError("vocabulary mismatch: no token of " + eval_test + " is known to the checkpoint");
            }
            const lp::EvalReport report = lp::evaluate(ck.params, test);
            print_report(report);
            if (!eval_out.empty()) write_json(eval_out, report.to_json());
        } else if (*export_cmd) {
            const lp::RunConfig cfg = build_config(export_flags);
            if (export_out.empty()) {
                lp::export_schedules(cfg, export_iterations, std::cout);
            } else {
                std::ofstream out(export_out, std::ios::binary);
                if (!out) throw lp::DataError("cannot write " + export_out);
                lp::export_schedules(cfg, export_iterations, out);
            }
        } else if (*gen_cmd) {
            const lp::RunConfig cfg = build_config(gen_flags);
            lp::Rng rng = data_rng(cfg.seed);
            const lp::SyntheticData data = lp::generate_synthetic(parse_synthetic(gen_synthetic, cfg), rng);
            lp::write_synthetic(data, cfg.seed, gen_out);
            std::printf("wrote %zu training and %zu test examples to %s\n", data.train.size(), data.test.size(),
                        gen_out.c_str());
        }
    } catch (const lp::ConfigError& e) {
        std::fprintf(stderr, "config error: %s\n", e.what());
        return 1;
    } catch (const lp::UsageError& e) {
        std::fprintf(stderr, "usage error: %s\n", e.what());
        return 1;
    } catch (const lp::DataError& e) {
        std::fprintf(stderr, "data error: %s\n", e.what());
        return 2;
    } catch (const lp::InputError& e) {
        std::fprintf(stderr, "data error: %s\n", e.what());
        return 2;
    } catch (const std::exception& e) {
        std::fprintf(stderr, "internal error: %s\n", e.what());
        return 3;
    }
    return 0;
}
