// SPDX-License-Identifier: Apache-2.0
#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <numeric>

#include "layerparti/errors.hpp"
#include "layerparti/ops.hpp"
#include "layerparti/ssl.hpp"

using namespace layerparti;

TEST_CASE("ssl mode names") {
    CHECK(parse_ssl_mode("te") == SslMode::te);
    CHECK(parse_ssl_mode("pi") == SslMode::pi);
    CHECK(parse_ssl_mode("none") == SslMode::none);
    CHECK_THROWS_AS(parse_ssl_mode("mt"), ConfigError);
    CHECK(to_string(SslMode::pi) == "pi");
}

TEST_CASE("consistency weight values") {
    ConsistencySchedule s;
    s.total_iterations = 1000;
    CHECK(consistency_weight(s, 0) == doctest::Approx(10.0 * std::exp(-5.0)).epsilon(1e-12));
    CHECK(consistency_weight(s, 0) == doctest::Approx(0.06738).epsilon(1e-4));
    CHECK(consistency_weight(s, 250) == 10.0);
    CHECK(consistency_weight(s, 500) == 10.0);
    CHECK(consistency_weight(s, 850) == 10.0);
    CHECK(consistency_weight(s, 999) == doctest::Approx(10.0 * std::exp(-12.5 * std::pow(149.0 / 150.0, 2))));
    CHECK_THROWS_AS(consistency_weight(s, 1000), UsageError);

    s.total_iterations = 1000000;
    CHECK(consistency_weight(s, 999999) == doctest::Approx(3.7e-5).epsilon(0.02));
}

TEST_CASE("consistency weight shape") {
    for (std::size_t T : {7u, 40u, 333u, 1000u}) {
        ConsistencySchedule s;
        s.total_iterations = T;
        double prev = 0.0;
        for (std::size_t t = 0; t < T; ++t) {
            const double w = consistency_weight(s, t);
            CHECK(w >= 0.0);
            CHECK(w <= 10.0);
            if (static_cast<double>(t) <= s.rampup_end()) CHECK(w >= prev);
            if (static_cast<double>(t) >= s.rampup_end() && static_cast<double>(t) < s.rampdown_start()) CHECK(w == 10.0);
            if (static_cast<double>(t) > s.rampdown_start()) CHECK(w <= prev);
            prev = w;
        }
    }
}

TEST_CASE("temporal ensemble") {
    TemporalEnsemble te(3, 2, 0.6f);
    CHECK_FALSE(te.target(0).has_value());

    const Real z1[] = {0.8f, 0.2f}, z2[] = {0.6f, 0.4f};
    te.update(0, z1);
    auto t1 = *te.target(0);
    CHECK(t1[0] == doctest::Approx(0.8));
    CHECK(t1[1] == doctest::Approx(0.2));
    te.update(0, z2);
    // weights (1 - a) a / (1 - a^2) = 0.375 and (1 - a) / (1 - a^2) = 0.625
    auto t2 = *te.target(0);
    CHECK(t2[0] == doctest::Approx(0.675).epsilon(1e-6));
    CHECK(t2[1] == doctest::Approx(0.325).epsilon(1e-6));
    CHECK(te.counts()[0] == 2);
    CHECK(te.counts()[1] == 0);

    TemporalEnsemble fresh(1, 2, 0.6f);
    const Real onehot[] = {1, 0};
    fresh.update(0, onehot);
    CHECK(fresh.accumulators()[0] == doctest::Approx(0.4));
    CHECK(fresh.accumulators()[1] == 0.0f);

    CHECK_THROWS_AS(te.target(3), UsageError);
    CHECK_THROWS_AS(TemporalEnsemble(3, 2, 1.0f), ConfigError);
    CHECK_THROWS_AS(TemporalEnsemble(3, 2, 0.0f), ConfigError);
}

TEST_CASE("temporal ensemble state is per-example") {
    Rng rng(12);
    std::vector<std::vector<std::vector<Real>>> seqs(4);
    for (auto& s : seqs) {
        s.resize(1 + rng.below(5));
        for (auto& z : s) z = {rng.uniform(), rng.uniform(), rng.uniform()};
    }
    TemporalEnsemble a(4, 3, 0.9f), b(4, 3, 0.9f);
    for (std::size_t i = 0; i < 4; ++i)
        for (auto& z : seqs[i]) a.update(i, z);
    // interleaved, examples in reverse order
    for (std::size_t step = 0; step < 5; ++step)
        for (std::size_t i = 4; i-- > 0;)
            if (step < seqs[i].size()) b.update(i, seqs[i][step]);
    CHECK(std::equal(a.accumulators().begin(), a.accumulators().end(), b.accumulators().begin()));
    CHECK(std::equal(a.counts().begin(), a.counts().end(), b.counts().begin()));
}

TEST_CASE("combined loss") {
    auto logits = Tensor::from({3, 2}, {2, -1, 0.5f, 0.5f, -1, 3}, true);
    auto teacher = Tensor::from({3, 2}, {0.9f, 0.1f, 0.3f, 0.7f, 0.5f, 0.5f});
    const std::int32_t labels[] = {0, -1, -1};
    const std::uint8_t rows[] = {0, 1, 1};

    const double ce = -std::log(std::exp(2.0) / (std::exp(2.0) + std::exp(-1.0)));
    auto p = ops::softmax(logits.detach());
    double mse = 0;
    for (int i = 2; i < 6; ++i) mse += std::pow(p.data()[i] - teacher.data()[i], 2);
    mse /= 4;

    SUBCASE("parts") {
        auto parts = combined_loss(logits, labels, teacher, rows, 2.5);
        CHECK(parts.n_labeled == 1);
        CHECK(parts.n_consistency == 2);
        CHECK(parts.ce == doctest::Approx(ce).epsilon(1e-6));
        CHECK(parts.consistency == doctest::Approx(mse).epsilon(1e-5));
        CHECK(parts.total.item() == doctest::Approx(ce + 2.5 * mse).epsilon(1e-6));
        Tape::active().clear();
    }
    SUBCASE("w = 0 gives the cross entropy exactly") {
        auto parts = combined_loss(logits, labels, teacher, rows, 0.0);
        CHECK(parts.total.item() == parts.ce);
        Tape::active().clear();
    }
    SUBCASE("linear in w") {
        const double l1 = combined_loss(logits, labels, teacher, rows, 1.0).total.item();
        const double l3 = combined_loss(logits, labels, teacher, rows, 3.0).total.item();
        const double l5 = combined_loss(logits, labels, teacher, rows, 5.0).total.item();
        CHECK(l5 - l3 == doctest::Approx(l3 - l1).epsilon(1e-5));
        Tape::active().clear();
    }
    SUBCASE("empty slices") {
        const std::int32_t all_labeled[] = {0, 1, 1};
        const std::uint8_t none[] = {0, 0, 0};
        auto sup = combined_loss(logits, all_labeled, teacher, none, 7.0);
        CHECK(sup.total.item() == sup.ce);
        CHECK(sup.n_consistency == 0);

        const std::int32_t unlabeled[] = {-1, -1, -1};
        const std::uint8_t every[] = {1, 1, 1};
        auto unsup = combined_loss(logits, unlabeled, teacher, every, 7.0);
        CHECK(unsup.ce == 0.0f);
        CHECK(unsup.total.item() == doctest::Approx(7.0 * unsup.consistency));
        Tape::active().clear();
    }
    SUBCASE("no gradient reaches the teacher") {
        auto t = teacher.clone();
        t.set_requires_grad(true);
        auto parts = combined_loss(logits, labels, t, rows, 3.0);
        for (const auto& e : Tape::active().entries())
            for (const auto& in : e.grad_inputs) CHECK(in.id() != t.id());
        backward(parts.total);
        CHECK(logits.has_grad());
        CHECK_FALSE(t.has_grad());
    }
}

TEST_CASE("pi-model passes") {
    ModelConfig c;
    c.n_layers = 2;
    c.d_model = 8;
    c.d_ff = 16;
    c.n_heads = 2;
    c.vocab_size = 12;
    c.max_len = 8;
    Rng init(1);
    auto params = init_model(c, init);
    const std::vector<std::vector<std::int32_t>> rows = {{1, 3, 4, 5}, {1, 6, 7}};
    const auto batch = make_token_batch(rows);

    SUBCASE("no dropout: student equals teacher and consistency vanishes") {
        params = init_model([&] {
            auto d = c;
            d.dropout_f = d.dropout_u = 0;
            return d;
        }(), init);
        Rng rng(2);
        auto out = pi_targets(params, batch, 1, rng);
        CHECK(std::equal(out.probs.data().begin(), out.probs.data().end(), out.teacher.data().begin()));
        const std::uint8_t all[] = {1, 1};
        const std::int32_t none[] = {-1, -1};
        CHECK(combined_loss(out.logits, none, out.teacher, all, 10.0).consistency == 0.0f);
        Tape::active().clear();
    }
    SUBCASE("dropout 0.5 in F separates the passes") {
        params = init_model([&] {
            auto d = c;
            d.dropout_f = 0.5f;
            return d;
        }(), init);
        Rng rng(2);
        auto out = pi_targets(params, batch, 1, rng);
        CHECK_FALSE(std::equal(out.probs.data().begin(), out.probs.data().end(), out.teacher.data().begin()));
        CHECK_FALSE(out.teacher.requires_grad());
        CHECK(out.probs.requires_grad());
        for (std::size_t r = 0; r < 2; ++r) {
            CHECK(out.teacher.data()[2 * r] + out.teacher.data()[2 * r + 1] == doctest::Approx(1.0).epsilon(1e-6));
            CHECK(out.probs.data()[2 * r] + out.probs.data()[2 * r + 1] == doctest::Approx(1.0).epsilon(1e-6));
        }
        Tape::active().clear();
    }
}
