// SPDX-License-Identifier: Apache-2.0
#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <set>

#include "layerparti/errors.hpp"
#include "layerparti/model.hpp"
#include "layerparti/ops.hpp"

using namespace layerparti;

namespace {

ModelConfig small_config() {
    ModelConfig c;
    c.n_layers = 2;
    c.d_model = 16;
    c.d_ff = 32;
    c.n_heads = 4;
    c.vocab_size = 30;
    c.max_len = 12;
    c.n_classes = 3;
    return c;
}

TokenBatch sample_batch() {
    const std::vector<std::vector<std::int32_t>> rows = {{1, 5, 9, 3}, {1, 7}, {1, 11, 12, 13, 14, 29}};
    return make_token_batch(rows);
}

double max_abs_diff(const Tensor& a, const Tensor& b) {
    double m = 0;
    for (std::size_t i = 0; i < a.numel(); ++i) m = std::max(m, std::abs(double(a.data()[i]) - b.data()[i]));
    return m;
}

}  // namespace

TEST_CASE("the desk model has groups 0..3 and the closed-form parameter count") {
    ModelConfig c;  // 2 layers, 300 wide, 512 feed-forward, 5 heads
    c.vocab_size = 1000;
    c.max_len = 16;
    c.n_classes = 2;
    Rng rng(1);
    auto p = init_model(c, rng);

    std::set<int> groups;
    for (const auto& e : p.entries()) groups.insert(e.group);
    CHECK(groups == std::set<int>{0, 1, 2, 3});

    const std::size_t d = 300, ff = 512, V = 1000, L = 16, k = 2;
    const std::size_t embeddings = V * d + L * d;
    const std::size_t attention = 4 * d * d + 3 * d;  // q, v and output biases; keys carry none
    const std::size_t ffn = d * ff + ff + ff * d + d;
    const std::size_t norms = 2 * 2 * d;
    const std::size_t head = 2 * d + d * k + k;
    CHECK(p.parameter_count() == embeddings + 2 * (attention + ffn + norms) + head);
}

TEST_CASE("initialization") {
    Rng a(9), b(9);
    auto p = init_model(small_config(), a), q = init_model(small_config(), b);
    REQUIRE(p.size() == q.size());
    for (std::size_t i = 0; i < p.size(); ++i) {
        CHECK(p.entries()[i].name == q.entries()[i].name);
        CHECK(std::equal(p.entries()[i].tensor.data().begin(), p.entries()[i].tensor.data().end(),
                         q.entries()[i].tensor.data().begin()));
    }
    for (Real v : p.at("layer1.ln1.gamma").data()) CHECK(v == 1.0f);
    for (Real v : p.at("layer2.ffn.b1").data()) CHECK(v == 0.0f);
    for (Real v : p.at("head.proj.bias").data()) CHECK(v == 0.0f);

    auto bad = small_config();
    bad.n_heads = 5;
    CHECK_THROWS_AS(init_model(bad, a), ConfigError);
}

TEST_CASE("store bookkeeping") {
    Rng rng(2);
    auto p = init_model(small_config(), rng);
    CHECK_THROWS_AS(p.add("head.ln.gamma", 3, Tensor::zeros({1})), InvariantError);
    CHECK_THROWS_AS(p.add("late", 0, Tensor::zeros({1})), InvariantError);
    CHECK_THROWS_AS(p.at("nope"), UsageError);
    auto c = p.clone();
    c.at("head.proj.bias").data()[0] = 5;
    CHECK(p.at("head.proj.bias").data()[0] == 0.0f);
}

TEST_CASE("batch contract") {
    auto cfg = small_config();
    auto tb = sample_batch();
    CHECK(tb.length == 6);
    CHECK_NOTHROW(tb.validate(cfg));

    auto no_cls = tb;
    no_cls.token_ids[0] = 5;
    CHECK_THROWS_AS(no_cls.validate(cfg), InputError);
    auto oov = tb;
    oov.token_ids[1] = 30;
    CHECK_THROWS_AS(oov.validate(cfg), InputError);
    cfg.max_len = 5;
    CHECK_THROWS_AS(tb.validate(cfg), InputError);
}

TEST_CASE("features and head") {
    auto cfg = small_config();
    cfg.dropout_f = 0.5f;
    Rng init(3);
    auto p = init_model(cfg, init);
    auto tb = sample_batch();

    SUBCASE("eval mode is deterministic") {
        Rng r1(1), r2(2);
        CHECK(max_abs_diff(forward_features(p, tb, 1, r1, false).hidden, forward_features(p, tb, 1, r2, false).hidden) ==
              0.0);
    }
    SUBCASE("training passes through F differ") {
        Rng rng(1);
        auto a = forward_features(p, tb, 1, rng, true).hidden;
        auto b = forward_features(p, tb, 1, rng, true).hidden;
        CHECK(max_abs_diff(a, b) > 0.0);
    }
    SUBCASE("dropout in U alone makes repeated head calls differ") {
        Rng rng(1);
        auto f = forward_features(p, tb, 1, rng, false);
        CHECK(max_abs_diff(forward_head(p, f, 1, rng, true), forward_head(p, f, 1, rng, true)) > 0.0);
    }
    SUBCASE("l = 0 is the embedding sum") {
        Rng rng(1);
        auto h = forward_features(p, tb, 0, rng, false).hidden;
        const std::size_t d = cfg.d_model;
        for (std::size_t r = 0; r < tb.batch; ++r) {
            for (std::size_t j = 0; j < tb.length; ++j) {
                const auto tok = static_cast<std::size_t>(tb.token_ids[r * tb.length + j]);
                for (std::size_t c = 0; c < d; ++c) {
                    const Real want = p.at("embed.token").data()[tok * d + c] + p.at("embed.position").data()[j * d + c];
                    CHECK(h.data()[(r * tb.length + j) * d + c] == want);
                }
            }
        }
    }
    SUBCASE("shape and usage errors") {
        Rng rng(1);
        const std::vector<std::vector<std::int32_t>> one = {{1, 4, 4}};
        auto f = forward_features(p, make_token_batch(one), 2, rng, false);
        CHECK(forward_head(p, f, 2, rng, false).shape() == Shape{1, 3});
        CHECK_THROWS_AS(forward_head(p, f, 1, rng, false), UsageError);
        CHECK_THROWS_AS(forward_features(p, tb, 3, rng, false), UsageError);
        CHECK_THROWS_AS(forward_features(p, tb, -1, rng, false), UsageError);
    }
}

TEST_CASE("U after F equals the monolithic forward in eval mode") {
    Rng init(4);
    auto p = init_model(small_config(), init);
    auto tb = sample_batch();
    Rng rng(0);
    auto whole = forward(p, tb, 1, rng, false);
    for (int l : {0, 1, 2}) {
        auto composed = forward_head(p, forward_features(p, tb, l, rng, false), l, rng, false);
        CHECK(max_abs_diff(composed, whole) <= 1e-6);
    }
}

TEST_CASE("padding never reaches the [CLS] logits") {
    Rng init(5);
    auto p = init_model(small_config(), init);
    Rng rng(0);
    const std::vector<std::vector<std::int32_t>> short_rows = {{1, 5, 9}};
    const std::vector<std::vector<std::int32_t>> long_rows = {{1, 5, 9}, {1, 2, 3, 4, 5, 6, 7, 8}};
    auto alone = forward(p, make_token_batch(short_rows), 1, rng, false);
    auto padded_tb = make_token_batch(long_rows);
    auto padded = forward(p, padded_tb, 1, rng, false);
    for (std::size_t c = 0; c < 3; ++c) CHECK(std::abs(alone.data()[c] - padded.data()[c]) <= 1e-6);

    // Arbitrary ids in masked positions, in any order, change nothing either.
    auto scrambled = padded_tb;
    const std::int32_t junk[] = {17, 3, 29, 8, 11};
    for (std::size_t j = 3; j < 8; ++j) scrambled.token_ids[j] = junk[j - 3];
    auto again = forward(p, scrambled, 1, rng, false);
    for (std::size_t i = 0; i < again.numel(); ++i) CHECK(std::abs(again.data()[i] - padded.data()[i]) <= 1e-6);
}
