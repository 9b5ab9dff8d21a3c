// SPDX-License-Identifier: Apache-2.0
#include "layerparti/config.hpp"

#include <charconv>
#include <cstdio>
#include <fstream>
#include <functional>
#include <map>

#include "layerparti/errors.hpp"

namespace layerparti {

namespace {

std::string trim(std::string_view s) {
    const auto b = s.find_first_not_of(" \t\r");
    if (b == std::string_view::npos) return {};
    const auto e = s.find_last_not_of(" \t\r");
    return std::string(s.substr(b, e - b + 1));
}

template <typename T>
T parse_number(std::string_view key, std::string_view text) {
    T value{};
    const std::string s = trim(text);
    if constexpr (std::is_floating_point_v<T>) {
        // from_chars for floating point is incomplete in older libstdc++
        char* end = nullptr;
        const double v = std::strtod(s.c_str(), &end);
        if (s.empty() || end != s.c_str() + s.size()) throw ConfigError("invalid number for " + std::string(key) + ": '" + s + "'");
        value = static_cast<T>(v);
    } else {
        const auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), value);
        if (s.empty() || ec != std::errc{} || ptr != s.data() + s.size()) {
            throw ConfigError("invalid integer for " + std::string(key) + ": '" + s + "'");
        }
    }
    return value;
}

bool parse_bool(std::string_view key, std::string_view text) {
    const std::string s = trim(text);
    if (s == "true" || s == "1") return true;
    if (s == "false" || s == "0") return false;
    throw ConfigError("invalid boolean for " + std::string(key) + ": '" + s + "'");
}

// Shortest text that parses back to the same value, so 0.3f prints as 0.3.
template <typename T>
std::string fmt_real(T v) {
    char buf[64];
    const auto res = std::to_chars(buf, buf + sizeof buf, v);
    return std::string(buf, res.ptr);
}

}  // namespace

void RunConfig::set(std::string_view key, std::string_view value) {
    using Setter = std::function<void(RunConfig&, std::string_view)>;
    static const std::map<std::string, Setter, std::less<>> setters = {
        {"n_layers", [](RunConfig& c, auto v) { c.model.n_layers = parse_number<std::size_t>("n_layers", v); }},
        {"d_model", [](RunConfig& c, auto v) { c.model.d_model = parse_number<std::size_t>("d_model", v); }},
        {"d_ff", [](RunConfig& c, auto v) { c.model.d_ff = parse_number<std::size_t>("d_ff", v); }},
        {"n_heads", [](RunConfig& c, auto v) { c.model.n_heads = parse_number<std::size_t>("n_heads", v); }},
        {"max_len", [](RunConfig& c, auto v) { c.model.max_len = parse_number<std::size_t>("max_len", v); }},
        {"ssl", [](RunConfig& c, auto v) { c.ssl = parse_ssl_mode(trim(v)); }},
        {"split_level", [](RunConfig& c, auto v) { c.split_level = parse_number<int>("split_level", v); }},
        {"epochs", [](RunConfig& c, auto v) { c.epochs = parse_number<std::size_t>("epochs", v); }},
        {"batch_size", [](RunConfig& c, auto v) { c.batch_size = parse_number<std::size_t>("batch_size", v); }},
        {"labeled_frac", [](RunConfig& c, auto v) { c.labeled_frac = parse_number<double>("labeled_frac", v); }},
        {"accumulation_steps",
         [](RunConfig& c, auto v) { c.accumulation_steps = parse_number<std::size_t>("accumulation_steps", v); }},
        {"clip", [](RunConfig& c, auto v) { c.clip = parse_number<float>("clip", v); }},
        {"w_max", [](RunConfig& c, auto v) { c.w_max = parse_number<double>("w_max", v); }},
        {"w_warmup_frac", [](RunConfig& c, auto v) { c.w_warmup_frac = parse_number<double>("w_warmup_frac", v); }},
        {"w_rampdown_frac", [](RunConfig& c, auto v) { c.w_rampdown_frac = parse_number<double>("w_rampdown_frac", v); }},
        {"w_rampup_coeff", [](RunConfig& c, auto v) { c.w_rampup_coeff = parse_number<double>("w_rampup_coeff", v); }},
        {"w_rampdown_coeff",
         [](RunConfig& c, auto v) { c.w_rampdown_coeff = parse_number<double>("w_rampdown_coeff", v); }},
        {"consistency_on_labeled",
         [](RunConfig& c, auto v) { c.consistency_on_labeled = parse_bool("consistency_on_labeled", v); }},
        {"lr_warmup_frac", [](RunConfig& c, auto v) { c.lr_warmup_frac = parse_number<double>("lr_warmup_frac", v); }},
        {"peak_lr", [](RunConfig& c, auto v) { c.peak_lr = parse_number<double>("peak_lr", v); }},
        {"alpha", [](RunConfig& c, auto v) { c.alpha = parse_number<float>("alpha", v); }},
        {"dropout_f", [](RunConfig& c, auto v) { c.dropout_f = parse_number<float>("dropout_f", v); }},
        {"dropout_u", [](RunConfig& c, auto v) { c.dropout_u = parse_number<float>("dropout_u", v); }},
        {"unfreeze_threshold",
         [](RunConfig& c, auto v) { c.unfreeze_threshold = parse_number<double>("unfreeze_threshold", v); }},
        {"seed", [](RunConfig& c, auto v) { c.seed = parse_number<std::uint64_t>("seed", v); }},
        {"synthetic_vocab_size",
         [](RunConfig& c, auto v) { c.synthetic_vocab_size = parse_number<std::size_t>("synthetic_vocab_size", v); }},
        {"synthetic_seq_len",
         [](RunConfig& c, auto v) { c.synthetic_seq_len = parse_number<std::size_t>("synthetic_seq_len", v); }},
    };
    const std::string k = trim(key);
    auto it = setters.find(k);
    if (it == setters.end()) throw ConfigError("unknown config key '" + k + "'");
    it->second(*this, value);
}

RunConfig RunConfig::resolved() const {
    RunConfig c = *this;
    const bool semi = ssl != SslMode::none;
    if (!c.epochs) c.epochs = semi ? 8 : 3;
    if (!c.labeled_frac) c.labeled_frac = semi ? 0.25 : 1.0;
    if (!c.accumulation_steps) c.accumulation_steps = semi ? 4 : 1;
    if (!c.dropout_f) c.dropout_f = ssl == SslMode::pi ? 0.5f : ssl == SslMode::te ? 0.3f : 0.1f;
    c.model.dropout_f = *c.dropout_f;
    c.model.dropout_u = c.dropout_u;
    c.validate();
    return c;
}

void RunConfig::validate() const {
    auto frac = [](const char* name, double v, bool allow_one) {
        if (!(v > 0.0 && (allow_one ? v <= 1.0 : v < 1.0))) {
            throw ConfigError(std::string(name) + " must lie in (0, 1" + (allow_one ? "]" : ")"));
        }
    };
    if (epochs && *epochs == 0) throw ConfigError("epochs must be positive");
    if (batch_size == 0) throw ConfigError("batch_size must be positive");
    if (labeled_frac) frac("labeled_frac", *labeled_frac, true);
    if (accumulation_steps && *accumulation_steps == 0) throw ConfigError("accumulation_steps must be positive");
    if (!(clip > 0.0f)) throw ConfigError("clip must be positive");
    if (!(w_max >= 0.0)) throw ConfigError("w_max must be nonnegative");
    frac("w_warmup_frac", w_warmup_frac, false);
    frac("w_rampdown_frac", w_rampdown_frac, false);
    if (w_warmup_frac + w_rampdown_frac >= 1.0) throw ConfigError("w_warmup_frac + w_rampdown_frac must be below 1");
    frac("lr_warmup_frac", lr_warmup_frac, false);
    if (!(peak_lr > 0.0)) throw ConfigError("peak_lr must be positive");
    frac("alpha", alpha, false);
    frac("unfreeze_threshold", unfreeze_threshold, true);
    if (dropout_f && !(*dropout_f >= 0.0f && *dropout_f < 1.0f)) throw ConfigError("dropout_f must lie in [0, 1)");
    if (!(dropout_u >= 0.0f && dropout_u < 1.0f)) throw ConfigError("dropout_u must lie in [0, 1)");
    if (split_level < 0 || split_level > static_cast<int>(model.n_layers)) {
        throw ConfigError("split_level must lie in [0, n_layers]");
    }
}

std::string RunConfig::canonical() const {
    const RunConfig c = resolved();
    std::map<std::string, std::string> kv = {
        {"n_layers", std::to_string(c.model.n_layers)},
        {"d_model", std::to_string(c.model.d_model)},
        {"d_ff", std::to_string(c.model.d_ff)},
        {"n_heads", std::to_string(c.model.n_heads)},
        {"max_len", std::to_string(c.model.max_len)},
        {"ssl", std::string(to_string(c.ssl))},
        {"split_level", std::to_string(c.split_level)},
        {"epochs", std::to_string(*c.epochs)},
        {"batch_size", std::to_string(c.batch_size)},
        {"labeled_frac", fmt_real(*c.labeled_frac)},
        {"accumulation_steps", std::to_string(*c.accumulation_steps)},
        {"clip", fmt_real(c.clip)},
        {"w_max", fmt_real(c.w_max)},
        {"w_warmup_frac", fmt_real(c.w_warmup_frac)},
        {"w_rampdown_frac", fmt_real(c.w_rampdown_frac)},
        {"w_rampup_coeff", fmt_real(c.w_rampup_coeff)},
        {"w_rampdown_coeff", fmt_real(c.w_rampdown_coeff)},
        {"consistency_on_labeled", c.consistency_on_labeled ? "true" : "false"},
        {"lr_warmup_frac", fmt_real(c.lr_warmup_frac)},
        {"peak_lr", fmt_real(c.peak_lr)},
        {"alpha", fmt_real(c.alpha)},
        {"dropout_f", fmt_real(*c.dropout_f)},
        {"dropout_u", fmt_real(c.dropout_u)},
        {"unfreeze_threshold", fmt_real(c.unfreeze_threshold)},
        {"seed", std::to_string(c.seed)},
        {"synthetic_vocab_size", std::to_string(c.synthetic_vocab_size)},
        {"synthetic_seq_len", std::to_string(c.synthetic_seq_len)},
    };
    std::string out;
    for (const auto& [k, v] : kv) out += k + " = " + v + "\n";
    return out;
}

std::uint64_t RunConfig::hash() const {
    std::uint64_t h = 0xcbf29ce484222325ULL;
    for (char ch : canonical()) {
        h ^= static_cast<std::uint8_t>(ch);
        h *= 0x100000001b3ULL;
    }
    return h;
}

nlohmann::ordered_json RunConfig::to_json() const {
    nlohmann::ordered_json j;
    const std::string text = canonical();
    std::size_t start = 0;
    while (start < text.size()) {
        const auto end = text.find('\n', start);
        const std::string line = text.substr(start, end - start);
        const auto eq = line.find(" = ");
        j[line.substr(0, eq)] = line.substr(eq + 3);
        start = end + 1;
    }
    return j;
}

ConsistencySchedule RunConfig::consistency_schedule(std::size_t total_iterations) const {
    ConsistencySchedule s;
    s.w_max = w_max;
    s.warmup_frac = w_warmup_frac;
    s.rampdown_frac = w_rampdown_frac;
    s.rampup_coeff = w_rampup_coeff;
    s.rampdown_coeff = w_rampdown_coeff;
    s.total_iterations = total_iterations;
    s.validate();
    return s;
}

LrSchedule RunConfig::lr_schedule(std::size_t total_iterations) const {
    LrSchedule s{peak_lr, lr_warmup_frac, total_iterations};
    s.validate();
    return s;
}

void apply_config_file(RunConfig& config, const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw ConfigError("cannot open config file " + path.string());
    std::string line;
    std::size_t line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (const auto hash = line.find('#'); hash != std::string::npos) line.resize(hash);
        if (trim(line).empty()) continue;
        const auto eq = line.find('=');
        if (eq == std::string::npos) {
            throw ConfigError(path.string() + ":" + std::to_string(line_no) + ": expected key = value");
        }
        config.set(line.substr(0, eq), line.substr(eq + 1));
    }
}

}  // namespace layerparti
