// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "layerparti/model.hpp"
#include "layerparti/rng.hpp"

namespace layerparti {

/// Token <-> id map. Ids 0, 1, 2 are [PAD], [CLS], [UNK].
class Vocab {
  public:
    Vocab();

    /// Words ordered by descending frequency, ties broken lexicographically.
    /// max_size bounds the total size including reserved ids (0 = unbounded).
    static Vocab build(std::span<const std::vector<std::string>> documents, std::size_t max_size = 0);
    /// `tokens` lists every token in id order, reserved ones included.
    static Vocab from_tokens(std::vector<std::string> tokens);

    std::int32_t id(std::string_view token) const;
    const std::string& token(std::int32_t id) const;
    std::size_t size() const noexcept { return tokens_.size(); }
    const std::vector<std::string>& tokens() const noexcept { return tokens_; }

    bool operator==(const Vocab& other) const { return tokens_ == other.tokens_; }

  private:
    void push(std::string token);

    std::vector<std::string> tokens_;
    std::unordered_map<std::string, std::int32_t> ids_;
};

/// Lowercased words; runs of letters/digits form a word and every other
/// non-space character is a word of its own.
std::vector<std::string> split_words(std::string_view text);

/// [CLS] followed by the word ids, truncated to max_len entries in total.
std::vector<std::int32_t> tokenize(std::string_view text, const Vocab& vocab, std::size_t max_len = 256);

struct Example {
    std::size_t index = 0;  // keys the temporal-ensemble state
    std::vector<std::int32_t> tokens;
    std::optional<std::int32_t> label;
    std::optional<std::int32_t> hidden_label;  // diagnostics only, never read by training
};

struct Dataset {
    std::vector<Example> examples;
    Vocab vocab;
    std::size_t n_classes = 2;

    std::size_t size() const noexcept { return examples.size(); }
    std::size_t labeled_count() const;
};

struct TextRecord {
    std::optional<std::int32_t> label;
    std::string text;
};

/// `label<TAB>text` per line; label "-" marks an unlabeled line.
std::vector<TextRecord> read_tsv(const std::filesystem::path& path);
void write_tsv(const std::filesystem::path& path, const Dataset& dataset);

/// Example i is record i. Builds a vocabulary when none is given.
Dataset build_dataset(std::span<const TextRecord> records, const Vocab* vocab, std::size_t max_len = 256);
Dataset load_tsv(const std::filesystem::path& path, const Vocab* vocab = nullptr, std::size_t max_len = 256);

struct Batch {
    TokenBatch tokens;
    std::vector<std::int32_t> labels;  // -1 when absent
    std::vector<std::size_t> indices;
    std::size_t epoch = 0;

    std::size_t size() const noexcept { return indices.size(); }
    std::size_t labeled_count() const;
};

/// Mixed labeled/unlabeled batches. Each pool is drawn without replacement
/// and reshuffled when exhausted; epochs are counted on the labeled pool.
class BatchSampler {
  public:
    struct State {
        Rng rng;
        std::vector<std::size_t> labeled_order;
        std::size_t labeled_pos = 0;
        std::vector<std::size_t> unlabeled_order;
        std::size_t unlabeled_pos = 0;
        std::size_t epoch = 0;
    };

    BatchSampler(const Dataset& dataset, std::size_t batch_size, double labeled_frac, Rng rng);

    Batch next();

    std::size_t labeled_per_batch() const noexcept { return n_labeled_; }
    std::size_t unlabeled_per_batch() const noexcept { return n_unlabeled_; }

    const State& state() const noexcept { return state_; }
    void restore(State state);

  private:
    const Dataset* dataset_;
    std::vector<std::size_t> labeled_pool_;
    std::vector<std::size_t> unlabeled_pool_;
    std::size_t n_labeled_ = 0;
    std::size_t n_unlabeled_ = 0;
    State state_;
};

struct SyntheticSpec {
    std::size_t n_labeled = 40;
    std::size_t n_unlabeled = 2000;
    std::size_t n_test = 1000;
    std::size_t vocab_size = 100;  // word tokens, excluding reserved ids
    std::size_t seq_len = 16;      // including [CLS]
};

struct SyntheticData {
    Dataset train;  // labeled examples first, then unlabeled
    Dataset test;
    SyntheticSpec spec;
    std::vector<std::int32_t> positive_lexicon;
    std::vector<std::int32_t> negative_lexicon;
};

/// Binary task: class 1 iff a sequence holds more positive-lexicon tokens than
/// negative-lexicon tokens.
SyntheticData generate_synthetic(const SyntheticSpec& spec, Rng& rng);

std::int32_t synthetic_rule(std::span<const std::int32_t> tokens, std::span<const std::int32_t> positive,
                            std::span<const std::int32_t> negative);

/// Writes train_labeled.tsv, train_unlabeled.tsv, test.tsv and synthetic_manifest.json.
void write_synthetic(const SyntheticData& data, std::uint64_t seed, const std::filesystem::path& dir);

}  // namespace layerparti
