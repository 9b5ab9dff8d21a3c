// SPDX-License-Identifier: Apache-2.0
#include <doctest.h>

#include <filesystem>
#include <fstream>
#include <sstream>

#include "layerparti/checkpoint.hpp"
#include "layerparti/errors.hpp"
#include "layerparti/trainer.hpp"

using namespace layerparti;
namespace fs = std::filesystem;

namespace {

fs::path scratch(const std::string& name) {
    auto dir = fs::temp_directory_path() / "layerparti_trainer_test" / name;
    fs::remove_all(dir);
    return dir;
}

std::string slurp(const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    std::stringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

SyntheticData small_data(std::uint64_t seed = 1) {
    SyntheticSpec spec;
    spec.n_labeled = 16;
    spec.n_unlabeled = 48;
    spec.n_test = 64;
    Rng rng(seed);
    return generate_synthetic(spec, rng);
}

RunConfig small_run(SslMode mode) {
    RunConfig c;
    c.ssl = mode;
    c.model.d_model = 16;
    c.model.d_ff = 32;
    c.model.n_heads = 2;
    c.model.max_len = 16;
    c.set("epochs", "10");  // one optimizer step per epoch here
    c.seed = 7;
    return c;
}

bool same_row(const MetricsRow& a, const MetricsRow& b) {
    return a.iteration == b.iteration && a.epoch == b.epoch && a.lr == b.lr && a.w == b.w && a.loss_ce == b.loss_ce &&
           a.loss_consist == b.loss_consist && a.loss_total == b.loss_total && a.frozen_groups == b.frozen_groups;
}

}  // namespace

TEST_CASE("evaluation report") {
    SUBCASE("majority-class predictor on a balanced set") {
        const std::vector<std::int32_t> truth = {0, 1, 0, 1, 0, 1};
        const std::vector<std::int32_t> pred(6, 1);
        auto r = report_from_predictions(pred, truth, 2);
        CHECK(r.accuracy == 0.5);
        CHECK(r.recall[1] == 1.0);
        CHECK(r.precision[1] == 0.5);
        CHECK(r.f1[0] == 0.0);
        for (std::size_t c = 0; c < 2; ++c) {
            std::size_t row = 0;
            for (auto n : r.confusion[c]) row += n;
            CHECK(row == 3);
        }
    }
    SUBCASE("perfect predictions") {
        const std::vector<std::int32_t> truth = {0, 2, 1, 2, 1};
        auto r = report_from_predictions(truth, truth, 3);
        for (double f : r.f1) CHECK(f == 1.0);
        CHECK(r.macro_f1 == 1.0);
        CHECK(r.to_json().at("accuracy") == 1.0);
    }
}

TEST_CASE("iterations per epoch") {
    RunConfig c;
    c.ssl = SslMode::te;
    const auto r = c.resolved();
    CHECK(iterations_per_epoch(r, 40, 4) == 3);   // 16 labeled per optimizer step
    CHECK(iterations_per_epoch(r, 48, 4) == 3);
    CHECK(iterations_per_epoch(r, 49, 4) == 4);
}

TEST_CASE("training runs are reproducible and write their artifacts") {
    const auto data = small_data();
    const auto a = scratch("det_a"), b = scratch("det_b");
    const auto ra = train(small_run(SslMode::te), data.train, {a});
    train(small_run(SslMode::te), data.train, {b});
    CHECK(slurp(a / "metrics.csv") == slurp(b / "metrics.csv"));
    CHECK(fs::exists(a / "timing.csv"));
    CHECK(fs::exists(a / "run_manifest.json"));
    CHECK(fs::exists(a / "final.lpt"));
    for (int e = 1; e <= 10; ++e) CHECK(fs::exists(a / ("checkpoint_epoch" + std::to_string(e) + ".lpt")));

    SUBCASE("metrics columns") {
        CHECK(ra.metrics.size() == ra.max_iterations);
        std::size_t prev_frozen = 99;
        const ConsistencySchedule ws = small_run(SslMode::te).resolved().consistency_schedule(ra.max_iterations);
        for (const auto& row : ra.metrics) {
            CHECK(row.frozen_groups <= prev_frozen);
            prev_frozen = row.frozen_groups;
            const double t = static_cast<double>(row.iteration);
            if (t >= ws.rampup_end() && t <= ws.rampdown_start()) CHECK(row.w == 10.0);
            else CHECK(row.w < 10.0);
        }
        CHECK(ra.metrics.back().frozen_groups == 0);
        const auto header = slurp(a / "metrics.csv").substr(0, slurp(a / "metrics.csv").find('\n'));
        CHECK(header == "iteration,epoch,lr,w,loss_ce,loss_consist,loss_total,frozen_groups");
    }
    SUBCASE("checkpoint evaluates like the in-memory model") {
        const auto ck = load_checkpoint(a / "final.lpt");
        CHECK(evaluate(ck.params, data.test).accuracy == evaluate(ra.params, data.test).accuracy);
        CHECK(predict(ck.params, data.test) == predict(ra.params, data.test));
    }
}

TEST_CASE("hidden labels of unlabeled examples never reach the loss") {
    const auto data = small_data();
    auto corrupted = data.train;
    for (auto& ex : corrupted.examples)
        if (!ex.label) ex.hidden_label = 1 - *ex.hidden_label;
    for (auto mode : {SslMode::pi, SslMode::te}) {
        const auto clean = train(small_run(mode), data.train);
        const auto dirty = train(small_run(mode), corrupted);
        REQUIRE(clean.metrics.size() == dirty.metrics.size());
        for (std::size_t i = 0; i < clean.metrics.size(); ++i) CHECK(same_row(clean.metrics[i], dirty.metrics[i]));
    }
}

TEST_CASE("resume continues the same trajectory") {
    const auto data = small_data();
    const auto full_dir = scratch("resume_full"), resumed_dir = scratch("resume_part");
    const auto full = train(small_run(SslMode::te), data.train, {full_dir});
    TrainOptions opts{resumed_dir, full_dir / "checkpoint_epoch2.lpt"};
    const auto resumed = train(small_run(SslMode::te), data.train, opts);
    const std::size_t start = full.max_iterations - resumed.metrics.size();
    CHECK(start == 2);
    for (std::size_t i = 0; i < resumed.metrics.size(); ++i) CHECK(same_row(resumed.metrics[i], full.metrics[start + i]));
    CHECK(slurp(full_dir / "final.lpt") == slurp(resumed_dir / "final.lpt"));

    auto other = small_run(SslMode::te);
    other.set("peak_lr", "0.01");
    CHECK_THROWS_AS(train(other, data.train, opts), ConfigError);
}

TEST_CASE("supervised mode on labeled-only data") {
    auto data = small_data();
    Dataset labeled{{}, data.train.vocab, 2};
    for (const auto& ex : data.train.examples)
        if (ex.label) labeled.examples.push_back(ex);
    const auto r = train(small_run(SslMode::none), labeled);
    for (const auto& row : r.metrics) {
        CHECK(row.w == 0.0);
        CHECK(row.loss_consist == 0.0f);
    }
    // Fine-tunes U first, then unfreezes like the semi-supervised modes.
    CHECK(r.metrics.front().frozen_groups == 2);
    CHECK(r.partition.frozen_groups.empty());
}

TEST_CASE("schedule export") {
    RunConfig c;
    c.ssl = SslMode::te;
    std::stringstream out;
    export_schedules(c, 2000, out);
    std::string line;
    std::getline(out, line);
    CHECK(line == "t lr w");
    double t, lr, w, prev_w = -1, w_max = 0;
    double max_delta = 0;
    std::size_t rows = 0;
    while (out >> t >> lr >> w) {
        if (rows == 0) CHECK(lr == 0.0);
        if (prev_w >= 0) max_delta = std::max(max_delta, std::abs(w - prev_w));
        w_max = std::max(w_max, w);
        prev_w = w;
        ++rows;
    }
    CHECK(rows == 2000);
    CHECK(w_max == 10.0);
    CHECK(lr < 1e-5);  // last row, one step before the end of the triangle
    // Steepest slope is the ramp-down's, 250 * 0.2 * exp(-0.5) ~ 30.33 per unit
    // of normalized time over 0.15 T steps: 0.101 per step here.
    CHECK(max_delta <= 0.02 * 10.0);
    CHECK(max_delta == doctest::Approx(30.33 / (0.15 * 2000)).epsilon(0.01));
}
