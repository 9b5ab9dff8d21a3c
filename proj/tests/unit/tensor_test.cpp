// SPDX-License-Identifier: Apache-2.0
#include <doctest.h>

#include <cmath>
#include <limits>
#include <numeric>

#include "layerparti/errors.hpp"
#include "layerparti/ops.hpp"
#include "layerparti/tensor.hpp"

using namespace layerparti;

namespace {

std::vector<Real> values(const Tensor& t) { return {t.data().begin(), t.data().end()}; }

}  // namespace

TEST_CASE("tensor construction and shape checks") {
    auto t = Tensor::zeros({2, 3});
    CHECK(t.numel() == 6);
    CHECK(t.dim(-1) == 3);
    CHECK_FALSE(t.requires_grad());
    CHECK_THROWS_AS(Tensor::from({2, 2}, {1, 2, 3}), DimensionError);
    CHECK(Tensor::scalar(4.0f).item() == 4.0f);
    CHECK_THROWS_AS(t.item(), UsageError);
}

TEST_CASE("copies alias; clone and detach do not") {
    auto a = Tensor::from({2}, {1, 2});
    Tensor alias = a;
    auto copy = a.clone();
    alias.data()[0] = 9;
    CHECK(a.data()[0] == 9);
    CHECK(copy.data()[0] == 1);
    CHECK(a.detach().id() != a.id());
}

TEST_CASE("matmul") {
    auto a = Tensor::from({2, 2}, {1, 2, 3, 4});
    SUBCASE("identity") {
        auto eye = Tensor::from({2, 2}, {1, 0, 0, 1});
        CHECK(values(ops::matmul(a, eye)) == values(a));
    }
    SUBCASE("hand-computed product") {
        auto ones = Tensor::from({2, 1}, {1, 1});
        auto c = ops::matmul(a, ones);
        CHECK(c.shape() == Shape{2, 1});
        CHECK(values(c) == std::vector<Real>{3, 7});
    }
    SUBCASE("mismatch names both shapes") {
        auto bad = Tensor::zeros({3, 1});
        try {
            ops::matmul(a, bad);
            FAIL("no throw");
        } catch (const DimensionError& e) {
            const std::string msg = e.what();
            CHECK(msg.find("[2x2]") != std::string::npos);
            CHECK(msg.find("[3x1]") != std::string::npos);
        }
    }
}

TEST_CASE("softmax") {
    CHECK(values(ops::softmax(Tensor::from({2}, {0, 0}))) == std::vector<Real>{0.5f, 0.5f});
    for (float c : {-3.0f, 0.0f, 17.5f}) {
        for (Real p : values(ops::softmax(Tensor::from({3}, {c, c, c})))) CHECK(p == doctest::Approx(1.0 / 3.0).epsilon(1e-6));
    }
    auto big = values(ops::softmax(Tensor::from({2}, {1000, 0})));
    CHECK(std::isfinite(big[0]));
    CHECK(big[0] == doctest::Approx(1.0));
    CHECK(big[1] == doctest::Approx(0.0));

    SUBCASE("rows sum to one") {
        Rng rng(3);
        std::vector<Real> v(50);
        for (auto& x : v) x = 4 * rng.normal();
        auto p = values(ops::softmax(Tensor::from({10, 5}, v)));
        for (int r = 0; r < 10; ++r) {
            CHECK(std::accumulate(p.begin() + r * 5, p.begin() + r * 5 + 5, 0.0) == doctest::Approx(1.0).epsilon(1e-6));
        }
    }
    SUBCASE("shift invariance") {
        // Dyadic inputs and shifts: x + c and the max-subtraction are exact,
        // so the outputs agree bit for bit.
        auto base = ops::softmax(Tensor::from({4}, {0.25f, -1.5f, 2.0f, 0.75f}));
        for (float c : {-64.0f, -0.5f, 3.0f, 1024.0f}) {
            auto shifted = ops::softmax(Tensor::from({4}, {0.25f + c, -1.5f + c, 2.0f + c, 0.75f + c}));
            CHECK(values(shifted) == values(base));
        }
        // Arbitrary inputs: x + c rounds, so agreement is to rounding only.
        Rng rng(8);
        for (int trial = 0; trial < 20; ++trial) {
            std::vector<Real> x(6), y(6);
            const Real c = rng.uniform(-50, 50);
            for (int i = 0; i < 6; ++i) {
                x[i] = rng.uniform(-3, 3);
                y[i] = x[i] + c;
            }
            auto p = values(ops::softmax(Tensor::from({6}, x))), q = values(ops::softmax(Tensor::from({6}, y)));
            for (int i = 0; i < 6; ++i) CHECK(std::abs(p[i] - q[i]) < 1e-5);
        }
    }
}

TEST_CASE("cross entropy") {
    const std::int32_t two[] = {1, 0};
    CHECK(ops::cross_entropy(Tensor::full({2, 2}, 0.3f), two).item() == doctest::Approx(0.693147).epsilon(1e-6));
    const std::int32_t six[] = {5};
    CHECK(ops::cross_entropy(Tensor::full({1, 6}, -2.0f), six).item() == doctest::Approx(1.791759).epsilon(1e-6));
    const std::int32_t bad[] = {2};
    CHECK_THROWS_AS(ops::cross_entropy(Tensor::zeros({1, 2}), bad), InputError);
    const std::int32_t big[] = {0};
    CHECK(std::isfinite(ops::cross_entropy(Tensor::from({1, 2}, {0, 1000}), big).item()));
}

TEST_CASE("mse") {
    auto a = Tensor::from({1, 2}, {1, 0});
    CHECK(ops::mse(a, a.clone()).item() == 0.0f);
    CHECK(ops::mse(a, Tensor::from({1, 2}, {0, 1})).item() == 1.0f);
    CHECK_THROWS_AS(ops::mse(a, Tensor::zeros({2, 1})), DimensionError);

    SUBCASE("teacher is gradient-opaque") {
        auto student = Tensor::from({1, 2}, {0.2f, 0.8f}, true);
        auto teacher = Tensor::from({1, 2}, {0.5f, 0.5f}, true);
        auto loss = ops::mse(student, teacher);
        const auto& entry = Tape::active().entries().back();
        CHECK(entry.op == "mse");
        REQUIRE(entry.grad_inputs.size() == 1);
        CHECK(entry.grad_inputs[0].id() == student.id());
        backward(loss);
        CHECK(student.has_grad());
        CHECK_FALSE(teacher.has_grad());
    }
}

TEST_CASE("dropout") {
    Rng rng(1);
    auto x = Tensor::full({100000}, 1.0f);
    CHECK(ops::dropout(x, 0.0f, rng, true).id() == x.id());
    CHECK(ops::dropout(x, 0.7f, rng, false).id() == x.id());
    CHECK_THROWS_AS(ops::dropout(x, 1.0f, rng, true), ConfigError);
    CHECK_THROWS_AS(ops::dropout(x, -0.1f, rng, true), ConfigError);

    auto y = values(ops::dropout(x, 0.5f, rng, true));
    const double mean = std::accumulate(y.begin(), y.end(), 0.0) / static_cast<double>(y.size());
    CHECK(mean >= 0.98);
    CHECK(mean <= 1.02);
    for (Real v : y) CHECK((v == 0.0f || v == 2.0f));

    Rng r1(42), r2(42);
    CHECK(values(ops::dropout(x, 0.3f, r1, true)) == values(ops::dropout(x, 0.3f, r2, true)));
}

TEST_CASE("layer norm") {
    auto gamma = Tensor::full({2}, 1.0f), beta = Tensor::zeros({2});
    for (Real v : values(ops::layer_norm(Tensor::full({1, 2}, 3.5f), gamma, beta))) CHECK(v == 0.0f);
    auto y = values(ops::layer_norm(Tensor::from({1, 2}, {-1, 1}), gamma, beta, 1e-12f));
    CHECK(y[0] == doctest::Approx(-1.0).epsilon(1e-6));
    CHECK(y[1] == doctest::Approx(1.0).epsilon(1e-6));
}

TEST_CASE("backward") {
    SUBCASE("sum gives ones") {
        auto x = Tensor::from({3}, {0.5f, -2, 7}, true);
        backward(ops::sum(x));
        CHECK(values(Tensor::from({3}, {x.grad().begin(), x.grad().end()})) == std::vector<Real>{1, 1, 1});
    }
    SUBCASE("two paths accumulate") {
        // f = sum(x * x + 3x): df/dx = 2x + 3
        auto x = Tensor::from({2}, {1.5f, -4}, true);
        backward(ops::sum(ops::add(ops::mul(x, x), ops::scale(x, 3))));
        CHECK(x.grad()[0] == doctest::Approx(6.0));
        CHECK(x.grad()[1] == doctest::Approx(-5.0));
    }
    SUBCASE("gradients accumulate across backward calls until zeroed") {
        auto x = Tensor::from({1}, {2}, true);
        backward(ops::sum(ops::scale(x, 2)));
        backward(ops::sum(ops::scale(x, 2)));
        CHECK(x.grad()[0] == 4.0f);
        x.zero_grad();
        CHECK(x.grad()[0] == 0.0f);
    }
    SUBCASE("frozen tensors get no buffer") {
        auto w = Tensor::from({2}, {1, 2}, true);
        auto frozen = Tensor::from({2}, {3, 4}, false);
        backward(ops::sum(ops::mul(w, frozen)));
        CHECK(w.has_grad());
        CHECK_FALSE(frozen.has_grad());
    }
    SUBCASE("non-scalar loss is a usage error") {
        auto x = Tensor::from({2}, {1, 2}, true);
        CHECK_THROWS_AS(backward(ops::scale(x, 2)), UsageError);
        Tape::active().clear();
    }
    SUBCASE("tape is replayed and cleared") {
        auto x = Tensor::from({2}, {1, 2}, true);
        auto loss = ops::sum(ops::gelu(x));
        CHECK(Tape::active().size() == 2);
        CHECK(Tape::active().entries()[0].op == "gelu");
        backward(loss);
        CHECK(Tape::active().empty());
    }
    SUBCASE("no recording under NoGradGuard") {
        auto x = Tensor::from({2}, {1, 2}, true);
        {
            NoGradGuard guard;
            auto y = ops::gelu(x);
            CHECK_FALSE(y.requires_grad());
        }
        CHECK(Tape::active().empty());
        CHECK(grad_enabled());
    }
}

TEST_CASE("gather_rows and attention masking") {
    auto x = Tensor::from({3, 2}, {1, 2, 3, 4, 5, 6});
    const std::int32_t idx[] = {2, 0};
    CHECK(values(ops::gather_rows(x, idx)) == std::vector<Real>{5, 6, 1, 2});
    const std::int32_t bad[] = {3};
    CHECK_THROWS_AS(ops::gather_rows(x, bad), InputError);

    // One sequence of three positions, last one masked: its key gets zero weight.
    Rng rng(4);
    std::vector<Real> qv(12), kv(12), vv(12);
    for (auto* v : {&qv, &kv, &vv})
        for (auto& e : *v) e = rng.normal();
    const std::uint8_t mask[] = {1, 1, 0};
    std::vector<Real> probs;
    ops::attention(Tensor::from({1, 3, 4}, qv), Tensor::from({1, 3, 4}, kv), Tensor::from({1, 3, 4}, vv), mask, 2,
                   &probs);
    REQUIRE(probs.size() == 2 * 3 * 3);
    for (std::size_t row = 0; row < 6; ++row) {
        CHECK(probs[row * 3 + 2] == 0.0f);
        CHECK(probs[row * 3] + probs[row * 3 + 1] == doctest::Approx(1.0));
    }
}
