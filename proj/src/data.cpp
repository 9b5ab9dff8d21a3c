// SPDX-License-Identifier: Apache-2.0
#include "layerparti/data.hpp"

#include <algorithm>
#include <cctype>
#include <charconv>
#include <cmath>
#include <fstream>
#include <map>

#include <nlohmann/json.hpp>

#include "layerparti/errors.hpp"

namespace layerparti {

Vocab::Vocab() {
    push("[PAD]");
    push("[CLS]");
    push("[UNK]");
}

void Vocab::push(std::string token) {
    const auto id = static_cast<std::int32_t>(tokens_.size());
    if (!ids_.emplace(token, id).second) throw DataError("duplicate vocabulary token '" + token + "'");
    tokens_.push_back(std::move(token));
}

Vocab Vocab::build(std::span<const std::vector<std::string>> documents, std::size_t max_size) {
    std::map<std::string, std::size_t> freq;
    for (const auto& doc : documents) {
        for (const auto& w : doc) ++freq[w];
    }
    std::vector<std::pair<std::string, std::size_t>> ranked(freq.begin(), freq.end());
    std::stable_sort(ranked.begin(), ranked.end(), [](const auto& a, const auto& b) { return a.second > b.second; });
    Vocab v;
    for (auto& [word, count] : ranked) {
        if (max_size && v.size() >= max_size) break;
        if (v.ids_.contains(word)) continue;
        v.push(word);
    }
    return v;
}

Vocab Vocab::from_tokens(std::vector<std::string> tokens) {
    Vocab v;
    if (tokens.size() < v.size() || !std::equal(v.tokens_.begin(), v.tokens_.end(), tokens.begin())) {
        throw DataError("vocabulary does not start with the reserved tokens");
    }
    for (std::size_t i = v.size(); i < tokens.size(); ++i) v.push(std::move(tokens[i]));
    return v;
}

std::int32_t Vocab::id(std::string_view token) const {
    auto it = ids_.find(std::string(token));
    return it == ids_.end() ? kUnkId : it->second;
}

const std::string& Vocab::token(std::int32_t id) const {
    if (id < 0 || static_cast<std::size_t>(id) >= tokens_.size()) throw UsageError("token id out of range");
    return tokens_[static_cast<std::size_t>(id)];
}

std::vector<std::string> split_words(std::string_view text) {
    std::vector<std::string> words;
    std::string current;
    auto flush = [&] {
        if (!current.empty()) words.push_back(std::move(current));
        current.clear();
    };
    for (char ch : text) {
        const auto u = static_cast<unsigned char>(ch);
        if (u >= 0x80 || std::isalnum(u)) {
            current.push_back(static_cast<char>(u < 0x80 ? std::tolower(u) : u));
        } else if (std::isspace(u)) {
            flush();
        } else {
            flush();
            words.emplace_back(1, ch);
        }
    }
    flush();
    return words;
}

std::vector<std::int32_t> tokenize(std::string_view text, const Vocab& vocab, std::size_t max_len) {
    if (max_len == 0) throw UsageError("tokenize: max_len must be at least 1");
    std::vector<std::int32_t> ids{kClsId};
    for (const auto& w : split_words(text)) {
        if (ids.size() >= max_len) break;
        ids.push_back(vocab.id(w));
    }
    return ids;
}

std::size_t Dataset::labeled_count() const {
    return static_cast<std::size_t>(
        std::count_if(examples.begin(), examples.end(), [](const Example& e) { return e.label.has_value(); }));
}

std::vector<TextRecord> read_tsv(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw DataError("cannot open " + path.string());
    std::vector<TextRecord> records;
    std::string line;
    std::size_t line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (!line.empty() && line.back() == '\r') line.pop_back();
        const auto tab = line.find('\t');
        if (tab == std::string::npos) throw ParseError(path.string() + ": expected label<TAB>text", line_no);
        const std::string_view label(line.data(), tab);
        TextRecord rec;
        rec.text = line.substr(tab + 1);
        if (label != "-") {
            std::int32_t value = -1;
            const auto [ptr, ec] = std::from_chars(label.data(), label.data() + label.size(), value);
            if (ec != std::errc{} || ptr != label.data() + label.size() || value < 0) {
                throw ParseError(path.string() + ": label '" + std::string(label) + "' is neither a class index nor '-'",
                                 line_no);
            }
            rec.label = value;
        }
        records.push_back(std::move(rec));
    }
    return records;
}

void write_tsv(const std::filesystem::path& path, const Dataset& dataset) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw DataError("cannot write " + path.string());
    for (const auto& ex : dataset.examples) {
        out << (ex.label ? std::to_string(*ex.label) : std::string("-")) << '\t';
        for (std::size_t j = 1; j < ex.tokens.size(); ++j) {
            if (j > 1) out << ' ';
            out << dataset.vocab.token(ex.tokens[j]);
        }
        out << '\n';
    }
}

Dataset build_dataset(std::span<const TextRecord> records, const Vocab* vocab, std::size_t max_len) {
    Dataset ds;
    if (vocab) {
        ds.vocab = *vocab;
    } else {
        std::vector<std::vector<std::string>> docs;
        docs.reserve(records.size());
        for (const auto& r : records) docs.push_back(split_words(r.text));
        ds.vocab = Vocab::build(docs);
    }
    std::int32_t max_label = 1;
    ds.examples.reserve(records.size());
    for (std::size_t i = 0; i < records.size(); ++i) {
        Example ex;
        ex.index = i;
        ex.tokens = tokenize(records[i].text, ds.vocab, max_len);
        ex.label = records[i].label;
        ex.hidden_label = records[i].label;
        if (ex.label) max_label = std::max(max_label, *ex.label);
        ds.examples.push_back(std::move(ex));
    }
    ds.n_classes = static_cast<std::size_t>(max_label) + 1;
    return ds;
}

Dataset load_tsv(const std::filesystem::path& path, const Vocab* vocab, std::size_t max_len) {
    const auto records = read_tsv(path);
    return build_dataset(records, vocab, max_len);
}

std::size_t Batch::labeled_count() const {
    return static_cast<std::size_t>(std::count_if(labels.begin(), labels.end(), [](std::int32_t y) { return y >= 0; }));
}

BatchSampler::BatchSampler(const Dataset& dataset, std::size_t batch_size, double labeled_frac, Rng rng)
    : dataset_(&dataset) {
    if (batch_size == 0) throw ConfigError("batch_size must be positive");
    if (!(labeled_frac > 0.0 && labeled_frac <= 1.0)) throw ConfigError("labeled_frac must lie in (0, 1]");
    for (const auto& ex : dataset.examples) (ex.label ? labeled_pool_ : unlabeled_pool_).push_back(ex.index);
    if (labeled_pool_.empty()) throw ConfigError("training data contains no labeled example");
    n_labeled_ = std::max<std::size_t>(1, static_cast<std::size_t>(std::lround(labeled_frac * static_cast<double>(batch_size))));
    n_labeled_ = std::min(n_labeled_, batch_size);
    n_unlabeled_ = unlabeled_pool_.empty() ? 0 : batch_size - n_labeled_;

    state_.rng = rng;
    state_.labeled_order = labeled_pool_;
    state_.rng.shuffle(state_.labeled_order);
    state_.unlabeled_order = unlabeled_pool_;
    state_.rng.shuffle(state_.unlabeled_order);
}

Batch BatchSampler::next() {
    auto& s = state_;
    if (s.labeled_pos == s.labeled_order.size()) {
        s.labeled_order = labeled_pool_;
        s.rng.shuffle(s.labeled_order);
        s.labeled_pos = 0;
        ++s.epoch;
    }
    Batch batch;
    batch.epoch = s.epoch;
    const std::size_t take = std::min(n_labeled_, s.labeled_order.size() - s.labeled_pos);
    for (std::size_t i = 0; i < take; ++i) batch.indices.push_back(s.labeled_order[s.labeled_pos++]);
    for (std::size_t i = 0; i < n_unlabeled_; ++i) {
        if (s.unlabeled_pos == s.unlabeled_order.size()) {
            s.unlabeled_order = unlabeled_pool_;
            s.rng.shuffle(s.unlabeled_order);
            s.unlabeled_pos = 0;
        }
        batch.indices.push_back(s.unlabeled_order[s.unlabeled_pos++]);
    }
    std::vector<std::vector<std::int32_t>> rows;
    rows.reserve(batch.indices.size());
    for (auto idx : batch.indices) {
        const Example& ex = dataset_->examples[idx];
        rows.push_back(ex.tokens);
        batch.labels.push_back(ex.label.value_or(-1));
    }
    batch.tokens = make_token_batch(rows);
    return batch;
}

void BatchSampler::restore(State state) {
    if (state.labeled_order.size() != labeled_pool_.size() || state.unlabeled_order.size() != unlabeled_pool_.size()) {
        throw DataError("sampler state does not match the dataset");
    }
    state_ = std::move(state);
}

std::int32_t synthetic_rule(std::span<const std::int32_t> tokens, std::span<const std::int32_t> positive,
                            std::span<const std::int32_t> negative) {
    int balance = 0;
    for (auto t : tokens) {
        if (std::find(positive.begin(), positive.end(), t) != positive.end()) ++balance;
        if (std::find(negative.begin(), negative.end(), t) != negative.end()) --balance;
    }
    return balance > 0 ? 1 : 0;
}

namespace {

constexpr std::size_t kLexiconSize = 5;

std::vector<Example> synthetic_split(std::size_t n, std::size_t first_index, const SyntheticSpec& spec,
                                     const SyntheticData& d, Rng& rng) {
    std::vector<std::int32_t> labels(n);
    for (std::size_t i = 0; i < n; ++i) labels[i] = static_cast<std::int32_t>(i % 2);
    rng.shuffle(labels);

    const auto first_distractor = static_cast<std::int32_t>(kUnkId + 1 + 2 * kLexiconSize);
    const auto n_distractors = static_cast<std::size_t>(static_cast<std::int32_t>(spec.vocab_size + kUnkId + 1) - first_distractor);
    const std::size_t max_words = spec.seq_len - 1;
    const std::size_t min_words = std::min<std::size_t>(4, max_words);

    std::vector<Example> out;
    out.reserve(n);
    for (std::size_t i = 0; i < n; ++i) {
        const std::size_t n_words = min_words + static_cast<std::size_t>(rng.below(max_words - min_words + 1));
        const std::size_t n_lex = 1 + static_cast<std::size_t>(rng.below(std::min<std::size_t>(5, n_words)));
        // majority side holds more than half of the lexicon tokens
        const std::size_t n_major = n_lex / 2 + 1 + static_cast<std::size_t>(rng.below(n_lex - n_lex / 2));
        const auto& major = labels[i] == 1 ? d.positive_lexicon : d.negative_lexicon;
        const auto& minor = labels[i] == 1 ? d.negative_lexicon : d.positive_lexicon;

        std::vector<std::int32_t> words;
        for (std::size_t j = 0; j < n_major; ++j) words.push_back(major[rng.below(kLexiconSize)]);
        for (std::size_t j = n_major; j < n_lex; ++j) words.push_back(minor[rng.below(kLexiconSize)]);
        while (words.size() < n_words) {
            words.push_back(first_distractor + static_cast<std::int32_t>(rng.below(n_distractors)));
        }
        rng.shuffle(words);

        Example ex;
        ex.index = first_index + i;
        ex.tokens.push_back(kClsId);
        ex.tokens.insert(ex.tokens.end(), words.begin(), words.end());
        ex.label = labels[i];
        ex.hidden_label = labels[i];
        out.push_back(std::move(ex));
    }
    return out;
}

}  // namespace

SyntheticData generate_synthetic(const SyntheticSpec& spec, Rng& rng) {
    if (spec.vocab_size <= 2 * kLexiconSize) throw ConfigError("synthetic vocab_size must exceed 10");
    if (spec.seq_len < 2) throw ConfigError("synthetic seq_len must leave room for at least one word");
    if (spec.n_labeled == 0) throw ConfigError("synthetic data needs at least one labeled example");

    SyntheticData d;
    d.spec = spec;
    std::vector<std::string> tokens = Vocab().tokens();
    for (std::size_t w = 0; w < spec.vocab_size; ++w) tokens.push_back("w" + std::to_string(w));
    const Vocab vocab = Vocab::from_tokens(std::move(tokens));
    for (std::size_t j = 0; j < kLexiconSize; ++j) {
        d.positive_lexicon.push_back(static_cast<std::int32_t>(kUnkId + 1 + j));
        d.negative_lexicon.push_back(static_cast<std::int32_t>(kUnkId + 1 + kLexiconSize + j));
    }

    d.train.vocab = vocab;
    d.train.examples = synthetic_split(spec.n_labeled, 0, spec, d, rng);
    auto unlabeled = synthetic_split(spec.n_unlabeled, spec.n_labeled, spec, d, rng);
    for (auto& ex : unlabeled) {
        ex.label.reset();
        d.train.examples.push_back(std::move(ex));
    }
    d.test.vocab = vocab;
    d.test.examples = synthetic_split(spec.n_test, 0, spec, d, rng);
    return d;
}

void write_synthetic(const SyntheticData& data, std::uint64_t seed, const std::filesystem::path& dir) {
    std::filesystem::create_directories(dir);
    Dataset labeled{{}, data.train.vocab, 2}, unlabeled{{}, data.train.vocab, 2};
    for (const auto& ex : data.train.examples) (ex.label ? labeled : unlabeled).examples.push_back(ex);
    write_tsv(dir / "train_labeled.tsv", labeled);
    write_tsv(dir / "train_unlabeled.tsv", unlabeled);
    write_tsv(dir / "test.tsv", data.test);

    nlohmann::ordered_json manifest = {
        {"generator", "lexicon-majority"},
        {"seed", seed},
        {"n_labeled", data.spec.n_labeled},
        {"n_unlabeled", data.spec.n_unlabeled},
        {"n_test", data.spec.n_test},
        {"vocab_size", data.spec.vocab_size},
        {"seq_len", data.spec.seq_len},
        {"positive_lexicon", data.positive_lexicon},
        {"negative_lexicon", data.negative_lexicon},
    };
    std::ofstream out(dir / "synthetic_manifest.json", std::ios::binary);
    out << manifest.dump(2) << '\n';
}

}  // namespace layerparti
