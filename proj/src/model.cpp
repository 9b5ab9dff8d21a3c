// SPDX-License-Identifier: Apache-2.0
#include "layerparti/model.hpp"

#include <cmath>

#include "layerparti/errors.hpp"
#include "layerparti/ops.hpp"

LAYERPARTI_BEGIN_NAMESPACE

void ModelConfig::validate() const {
    auto fail = [](const std::string& msg) { throw ConfigError("model config: " + msg); };
    if (n_layers == 0) fail("n_layers must be positive");
    if (d_model == 0 || d_ff == 0) fail("widths must be positive");
    if (n_heads == 0 || d_model % n_heads != 0) {
        fail("n_heads (" + std::to_string(n_heads) + ") must divide d_model (" + std::to_string(d_model) + ")");
    }
    if (vocab_size <= static_cast<std::size_t>(kUnkId)) fail("vocab_size must exceed the reserved ids");
    if (max_len == 0) fail("max_len must be at least 1");
    if (n_classes < 2) fail("n_classes must be at least 2");
    for (Real rate : {dropout_f, dropout_u}) {
        if (!(rate >= 0.0f && rate < 1.0f)) fail("dropout rates must lie in [0, 1)");
    }
}

void ParameterStore::add(std::string name, int group, Tensor tensor) {
    if (index_.contains(name)) throw InvariantError("duplicate parameter name " + name);
    if (group < 0 || (!entries_.empty() && group < entries_.back().group)) {
        throw InvariantError("parameter groups must be registered in order: " + name);
    }
    index_.emplace(name, entries_.size());
    entries_.push_back(ParameterEntry{std::move(name), group, std::move(tensor)});
}

const Tensor& ParameterStore::at(std::string_view name) const {
    auto it = index_.find(std::string(name));
    if (it == index_.end()) throw UsageError("unknown parameter " + std::string(name));
    return entries_[it->second].tensor;
}

Tensor& ParameterStore::at(std::string_view name) {
    return const_cast<Tensor&>(static_cast<const ParameterStore&>(*this).at(name));
}

bool ParameterStore::contains(std::string_view name) const { return index_.contains(std::string(name)); }

std::size_t ParameterStore::parameter_count() const {
    std::size_t n = 0;
    for (const auto& e : entries_) n += e.tensor.numel();
    return n;
}

void ParameterStore::set_group_trainable(int group, bool trainable) {
    for (auto& e : entries_) {
        if (e.group == group) e.tensor.set_requires_grad(trainable);
    }
}

void ParameterStore::zero_grad() {
    for (auto& e : entries_) e.tensor.zero_grad();
}

ParameterStore ParameterStore::clone() const {
    ParameterStore out(config_);
    for (const auto& e : entries_) out.add(e.name, e.group, e.tensor.clone());
    return out;
}

void TokenBatch::validate(const ModelConfig& config) const {
    if (batch == 0 || length == 0) throw InputError("token batch is empty");
    if (token_ids.size() != batch * length || mask.size() != batch * length) {
        throw InputError("token batch buffers do not match [" + std::to_string(batch) + "x" + std::to_string(length) + "]");
    }
    if (length > config.max_len) {
        throw InputError("sequence length " + std::to_string(length) + " exceeds max_len " +
                         std::to_string(config.max_len));
    }
    for (std::size_t r = 0; r < batch; ++r) {
        if (token_ids[r * length] != kClsId || !mask[r * length]) throw InputError("row " + std::to_string(r) + " does not start with [CLS]");
    }
    for (auto id : token_ids) {
        if (id < 0 || static_cast<std::size_t>(id) >= config.vocab_size) {
            throw InputError("token id " + std::to_string(id) + " outside vocabulary of " + std::to_string(config.vocab_size));
        }
    }
}

TokenBatch make_token_batch(std::span<const std::vector<std::int32_t>> rows) {
    TokenBatch tb;
    tb.batch = rows.size();
    for (const auto& r : rows) tb.length = std::max(tb.length, r.size());
    tb.token_ids.assign(tb.batch * tb.length, kPadId);
    tb.mask.assign(tb.batch * tb.length, 0);
    for (std::size_t i = 0; i < rows.size(); ++i) {
        for (std::size_t j = 0; j < rows[i].size(); ++j) {
            tb.token_ids[i * tb.length + j] = rows[i][j];
            tb.mask[i * tb.length + j] = 1;
        }
    }
    return tb;
}

namespace {

std::string layer_prefix(int g) { return "layer" + std::to_string(g) + "."; }

Tensor normal_tensor(Shape shape, Real stddev, Rng& rng) {
    std::vector<Real> v(shape_numel(shape));
    for (auto& x : v) x = stddev * rng.normal();
    return Tensor::from(std::move(shape), std::move(v), true);
}

Tensor xavier_tensor(std::size_t fan_in, std::size_t fan_out, Rng& rng) {
    const Real bound = std::sqrt(6.0f / static_cast<Real>(fan_in + fan_out));
    std::vector<Real> v(fan_in * fan_out);
    for (auto& x : v) x = rng.uniform(-bound, bound);
    return Tensor::from({fan_in, fan_out}, std::move(v), true);
}

Real dropout_rate(const ModelConfig& c, int group, int split) { return group <= split ? c.dropout_f : c.dropout_u; }

Tensor embed(const ParameterStore& p, const TokenBatch& batch, Real rate, Rng& rng, bool training) {
    const auto& c = p.config();
    batch.validate(c);
    std::vector<std::int32_t> positions(batch.batch * batch.length);
    for (std::size_t i = 0; i < positions.size(); ++i) positions[i] = static_cast<std::int32_t>(i % batch.length);
    Tensor x = ops::add(ops::gather_rows(p.at("embed.token"), batch.token_ids),
                        ops::gather_rows(p.at("embed.position"), positions));
    x = ops::reshape(x, {batch.batch, batch.length, c.d_model});
    return ops::dropout(x, rate, rng, training);
}

Tensor linear(const Tensor& x, const Tensor& w, const Tensor& b) { return ops::add_bias(ops::matmul(x, w), b); }

Tensor encoder_layer(const ParameterStore& p, int g, const Tensor& x, std::span<const std::uint8_t> mask, Real rate,
                     Rng& rng, bool training) {
    const std::string pre = layer_prefix(g);
    auto P = [&](const char* n) -> const Tensor& { return p.at(pre + n); };

    Tensor h = ops::layer_norm(x, P("ln1.gamma"), P("ln1.beta"));
    Tensor q = linear(h, P("attn.wq"), P("attn.bq"));
    Tensor k = ops::matmul(h, P("attn.wk"));  // a key bias only shifts every score of a query equally
    Tensor v = linear(h, P("attn.wv"), P("attn.bv"));
    Tensor a = ops::attention(q, k, v, mask, p.config().n_heads);
    Tensor o = ops::dropout(linear(a, P("attn.wo"), P("attn.bo")), rate, rng, training);
    Tensor r = ops::add(x, o);

    Tensor h2 = ops::layer_norm(r, P("ln2.gamma"), P("ln2.beta"));
    Tensor f = linear(ops::gelu(linear(h2, P("ffn.w1"), P("ffn.b1"))), P("ffn.w2"), P("ffn.b2"));
    return ops::add(r, ops::dropout(f, rate, rng, training));
}

Tensor classify(const ParameterStore& p, const Tensor& x, Rng& rng, bool training) {
    const std::size_t b = x.dim(0), L = x.dim(1);
    std::vector<std::int32_t> cls_rows(b);
    for (std::size_t i = 0; i < b; ++i) cls_rows[i] = static_cast<std::int32_t>(i * L);
    Tensor cls = ops::layer_norm(ops::gather_rows(x, cls_rows), p.at("head.ln.gamma"), p.at("head.ln.beta"));
    cls = ops::dropout(cls, p.config().dropout_u, rng, training);
    return linear(cls, p.at("head.proj.weight"), p.at("head.proj.bias"));
}

void check_split(const ModelConfig& c, int l) {
    if (l < 0 || l > static_cast<int>(c.n_layers)) {
        throw UsageError("split level " + std::to_string(l) + " outside [0, " + std::to_string(c.n_layers) + "]");
    }
}

}  // namespace

ParameterStore init_model(const ModelConfig& config, Rng& rng) {
    config.validate();
    const auto d = config.d_model, ff = config.d_ff;
    ParameterStore p(config);
    p.add("embed.token", 0, normal_tensor({config.vocab_size, d}, 0.02f, rng));
    p.add("embed.position", 0, normal_tensor({config.max_len, d}, 0.02f, rng));
    for (int g = 1; g <= static_cast<int>(config.n_layers); ++g) {
        const std::string pre = layer_prefix(g);
        p.add(pre + "ln1.gamma", g, Tensor::full({d}, 1.0f, true));
        p.add(pre + "ln1.beta", g, Tensor::zeros({d}, true));
        p.add(pre + "attn.wq", g, xavier_tensor(d, d, rng));
        p.add(pre + "attn.bq", g, Tensor::zeros({d}, true));
        p.add(pre + "attn.wk", g, xavier_tensor(d, d, rng));
        p.add(pre + "attn.wv", g, xavier_tensor(d, d, rng));
        p.add(pre + "attn.bv", g, Tensor::zeros({d}, true));
        p.add(pre + "attn.wo", g, xavier_tensor(d, d, rng));
        p.add(pre + "attn.bo", g, Tensor::zeros({d}, true));
        p.add(pre + "ln2.gamma", g, Tensor::full({d}, 1.0f, true));
        p.add(pre + "ln2.beta", g, Tensor::zeros({d}, true));
        p.add(pre + "ffn.w1", g, xavier_tensor(d, ff, rng));
        p.add(pre + "ffn.b1", g, Tensor::zeros({ff}, true));
        p.add(pre + "ffn.w2", g, xavier_tensor(ff, d, rng));
        p.add(pre + "ffn.b2", g, Tensor::zeros({d}, true));
    }
    const int head = config.head_group();
    p.add("head.ln.gamma", head, Tensor::full({d}, 1.0f, true));
    p.add("head.ln.beta", head, Tensor::zeros({d}, true));
    p.add("head.proj.weight", head, xavier_tensor(d, config.n_classes, rng));
    p.add("head.proj.bias", head, Tensor::zeros({config.n_classes}, true));
    return p;
}

Features forward_features(const ParameterStore& params, const TokenBatch& batch, int through_group, Rng& rng,
                          bool training) {
    const auto& c = params.config();
    check_split(c, through_group);
    Tensor x = embed(params, batch, c.dropout_f, rng, training);
    for (int g = 1; g <= through_group; ++g) x = encoder_layer(params, g, x, batch.mask, c.dropout_f, rng, training);
    return Features{std::move(x), through_group, batch.mask};
}

Tensor forward_head(const ParameterStore& params, const Features& features, int from_group, Rng& rng, bool training) {
    const auto& c = params.config();
    check_split(c, from_group);
    if (features.group != from_group) {
        throw UsageError("forward_head from group " + std::to_string(from_group) + " given features through group " +
                         std::to_string(features.group));
    }
    Tensor x = features.hidden;
    for (int g = from_group + 1; g <= static_cast<int>(c.n_layers); ++g) {
        x = encoder_layer(params, g, x, features.mask, c.dropout_u, rng, training);
    }
    return classify(params, x, rng, training);
}

Tensor forward(const ParameterStore& params, const TokenBatch& batch, int split, Rng& rng, bool training) {
    const auto& c = params.config();
    check_split(c, split);
    Tensor x = embed(params, batch, dropout_rate(c, 0, split), rng, training);
    for (int g = 1; g <= static_cast<int>(c.n_layers); ++g) {
        x = encoder_layer(params, g, x, batch.mask, dropout_rate(c, g, split), rng, training);
    }
    return classify(params, x, rng, training);
}

LAYERPARTI_END_NAMESPACE
