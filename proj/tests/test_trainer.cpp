#include <algorithm>
#include <numeric>

#include "c3/trainer.hpp"
#include "doctest.h"

using namespace c3;

namespace {

struct Fixture {
    HoldoutSplit split;
    MlpSpec spec;
};

Fixture drift(std::size_t k, std::uint64_t seed, double delta = 0.75, std::size_t n_total = 1200) {
    ShiftRecipe r;
    r.batches = k;
    r.delta = delta;
    const auto syn = synth_shift(r, n_total / k, seed);
    return {holdout_split(syn.dataset, syn.plan, 0.2, seed + 1), MlpSpec::tabular(r.dim, 2)};
}

TrainConfig quick(std::size_t epochs = 3) {
    TrainConfig cfg;
    cfg.epochs = epochs;
    cfg.optimizer.learning_rate = 0.05;
    cfg.minibatch_size = 16;
    cfg.seed = 4;
    return cfg;
}

bool same_records(const RunTrace& a, const RunTrace& b) {
    if (a.records.size() != b.records.size()) return false;
    for (std::size_t i = 0; i < a.records.size(); ++i) {
        if (a.records[i].validation_accuracy != b.records[i].validation_accuracy) return false;
        if (a.records[i].mean_loss != b.records[i].mean_loss) return false;
        if (a.records[i].kl_diagnostics != b.records[i].kl_diagnostics) return false;
    }
    return a.accuracy_history == b.accuracy_history;
}

}  // namespace

TEST_CASE("lambda = 0 C3 and cv_sequential follow the same trajectory bit for bit") {
    for (std::size_t k : {2u, 5u}) {
        const auto f = drift(k, 10 + k);
        auto cfg = quick();
        cfg.penalty.lambda = 0.0;
        const auto c3run = shift_correction(f.split.train, f.split.validation, f.split.plan, f.spec, cfg);
        cfg.baseline = BaselineMode::cv_sequential;
        const auto cv = cv_baseline(f.split.train, f.split.validation, f.split.plan, f.spec, cfg);
        CHECK(c3run.trajectory_digest == cv.trajectory_digest);
        CHECK(c3run.final_theta == cv.final_theta);
        CHECK(same_records(c3run, cv));
    }
}

TEST_CASE("cv_sequential ignores the configured lambda") {
    const auto f = drift(3, 1);
    auto cfg = quick();
    cfg.baseline = BaselineMode::cv_sequential;
    cfg.penalty.lambda = 0.5;
    const auto a = cv_baseline(f.split.train, f.split.validation, f.split.plan, f.spec, cfg);
    cfg.penalty.lambda = 0.0;
    const auto b = cv_baseline(f.split.train, f.split.validation, f.split.plan, f.spec, cfg);
    CHECK(a.trajectory_digest == b.trajectory_digest);
    CHECK(a.lambda == 0.0);
    CHECK(a.final_penalty.empty());
}

TEST_CASE("a positive lambda changes the trajectory and accumulates Fisher state") {
    const auto f = drift(3, 2);
    auto cfg = quick();
    const auto with = shift_correction(f.split.train, f.split.validation, f.split.plan, f.spec, cfg);
    cfg.penalty.lambda = 0.0;
    const auto without = shift_correction(f.split.train, f.split.validation, f.split.plan, f.spec, cfg);
    CHECK(with.trajectory_digest != without.trajectory_digest);
    CHECK(with.final_penalty.batches_consumed == 9);  // 3 batches x 3 epochs
    CHECK(with.final_penalty.accumulated->anchor == with.final_theta);
}

TEST_CASE("identical inputs give identical traces") {
    const auto f = drift(4, 3);
    const auto cfg = quick();
    const auto a = shift_correction(f.split.train, f.split.validation, f.split.plan, f.spec, cfg);
    const auto b = shift_correction(f.split.train, f.split.validation, f.split.plan, f.spec, cfg);
    CHECK(a.trajectory_digest == b.trajectory_digest);
    CHECK(to_json(a).dump() == to_json(b).dump());
    auto other = cfg;
    other.seed = 5;
    CHECK(shift_correction(f.split.train, f.split.validation, f.split.plan, f.spec, other).trajectory_digest !=
          a.trajectory_digest);
}

TEST_CASE("K = 1 with lambda = 0 is plain single-dataset training") {
    const auto f = drift(1, 6);
    auto cfg = quick();
    cfg.penalty.lambda = 0.0;
    const auto a = shift_correction(f.split.train, f.split.validation, f.split.plan, f.spec, cfg);
    cfg.penalty.lambda = 0.1;
    const auto b = shift_correction(f.split.train, f.split.validation, f.split.plan, f.spec, cfg);
    // With one batch the penalty first applies in epoch 2, anchored at the epoch-1 result.
    CHECK(a.records.size() == 1);
    CHECK(a.accuracy_history.size() == 3);
    CHECK(a.accuracy_history[0] == b.accuracy_history[0]);
}

TEST_CASE("Fisher absorbed from a batch never reaches earlier batches") {
    const auto f = drift(4, 7);
    auto cfg = quick(1);
    cfg.keep_checkpoints = true;
    const auto full = shift_correction(f.split.train, f.split.validation, f.split.plan, f.spec, cfg);
    for (std::size_t keep = 1; keep < 4; ++keep) {
        FragmentationPlan prefix = f.split.plan;
        prefix.batches.resize(keep);
        const auto cut = prefix.batches.back().end;
        prefix.order.resize(cut);
        std::vector<std::size_t> rows(prefix.order.begin(), prefix.order.end());
        const Dataset sub = f.split.train.subset(rows);
        std::iota(prefix.order.begin(), prefix.order.end(), std::size_t{0});
        const auto part = shift_correction(sub, f.split.validation, prefix, f.spec, cfg);
        for (std::size_t i = 0; i < keep; ++i) {
            CAPTURE(i);
            CHECK(part.checkpoints[i] == full.checkpoints[i]);
            CHECK(part.accuracy_history[i] == full.accuracy_history[i]);
        }
    }
}

TEST_CASE("KL diagnostics look only at earlier batches unless asked otherwise") {
    const auto f = drift(4, 8, 1.0, 2000);
    auto cfg = quick(1);
    const auto causal = shift_correction(f.split.train, f.split.validation, f.split.plan, f.spec, cfg);
    for (std::size_t i = 0; i < 4; ++i) {
        const auto& d = causal.records[i].kl_diagnostics;
        CHECK(d.size() == i);
        for (const auto& [j, kl] : d) {
            CHECK(j < i);
            CHECK(kl >= 0.0);
        }
    }
    CHECK(causal.records[3].kl_diagnostics[0].second > causal.records[3].kl_diagnostics[2].second);
    cfg.kl_direction = KlDirection::forward;
    const auto fwd = shift_correction(f.split.train, f.split.validation, f.split.plan, f.spec, cfg);
    CHECK(fwd.records[0].kl_diagnostics.size() == 3);
    CHECK(fwd.records[3].kl_diagnostics.empty());
    CHECK(fwd.trajectory_digest == causal.trajectory_digest);
}

TEST_CASE("pairwise KL matrix has a zero diagonal") {
    const auto f = drift(3, 9);
    const auto kl = pairwise_kl(f.split.train, f.split.plan);
    for (std::size_t i = 0; i < 3; ++i) CHECK(std::abs(kl[i][i]) < 1e-9);
}

TEST_CASE("cv_independent restarts from the seeded initialization on every batch") {
    // Identical batches: every batch sees the same data, so the accuracies agree.
    ShiftRecipe r;
    r.batches = 1;
    const auto one = synth_shift(r, 400, 3);
    const auto split = holdout_split(one.dataset, one.plan, 0.25, 4);
    FragmentationPlan repeated;
    for (std::size_t b = 0; b < 3; ++b) {
        repeated.batches.push_back({b * split.train.size(), (b + 1) * split.train.size()});
        for (std::size_t i = 0; i < split.train.size(); ++i) repeated.order.push_back(i);
    }
    auto cfg = quick(3);
    cfg.baseline = BaselineMode::cv_independent;
    Tensor2D x(3 * split.train.size(), split.train.dim());
    std::vector<std::size_t> y;
    for (std::size_t b = 0; b < 3; ++b) {
        for (std::size_t i = 0; i < split.train.size(); ++i) {
            std::copy_n(split.train.features.row(i).begin(), split.train.dim(),
                        x.row(b * split.train.size() + i).begin());
            y.push_back(split.train.labels[i]);
        }
    }
    std::iota(repeated.order.begin(), repeated.order.end(), std::size_t{0});
    auto tripled = Dataset::make(std::move(x), y, 2, "tripled");
    tripled.ids.clear();
    for (std::size_t b = 0; b < 3; ++b) tripled.ids.insert(tripled.ids.end(), split.train.ids.begin(), split.train.ids.end());
    const auto spec = MlpSpec::tabular(r.dim, 2);
    const auto trace = cv_baseline(tripled, split.validation, repeated, spec, cfg);
    REQUIRE(trace.records.size() == 3);
    for (const auto& rec : trace.records) {
        CHECK(rec.validation_accuracy == doctest::Approx(trace.records[0].validation_accuracy).epsilon(0.05));
    }
    CHECK(trace.accuracy_history.size() == 3);
}

TEST_CASE("validation rows that leak into training are rejected") {
    const auto f = drift(2, 11);
    const auto cfg = quick(1);
    CHECK_THROWS_AS((void)shift_correction(f.split.train, f.split.train, f.split.plan, f.spec, cfg),
                    std::invalid_argument);
}

TEST_CASE("evaluate: zero parameters predict class 0") {
    std::vector<std::size_t> y = {0, 1, 0, 1, 1, 0, 0, 1};
    const auto d = Dataset::make(Tensor2D(8, 2, 1.0), y, 2, "balanced");
    const auto spec = MlpSpec::tabular(2, 2);
    CHECK(evaluate(spec, zero_parameters(spec), d) == 0.5);
}

TEST_CASE("a separable problem is learned almost perfectly") {
    ShiftRecipe r;
    r.batches = 1;
    r.class_separation = 8.0;
    const auto syn = synth_shift(r, 600, 1);
    const auto split = holdout_split(syn.dataset, syn.plan, 0.2, 2);
    auto cfg = quick(10);
    const auto t = shift_correction(split.train, split.validation, split.plan, MlpSpec::tabular(r.dim, 2), cfg);
    CHECK(t.records.back().validation_accuracy > 0.98);
    CHECK(evaluate(MlpSpec::tabular(r.dim, 2), t.final_theta, split.train) >= t.records.back().validation_accuracy - 0.02);
}

TEST_CASE("batches_outer order and per-epoch reset are honoured") {
    const auto f = drift(3, 12);
    auto cfg = quick(2);
    cfg.loop_order = LoopOrder::batches_outer;
    const auto t = shift_correction(f.split.train, f.split.validation, f.split.plan, f.spec, cfg);
    CHECK(t.records.size() == 3);
    CHECK(t.accuracy_history.size() == 3);
    CHECK(t.final_penalty.batches_consumed == 3);
    cfg.loop_order = LoopOrder::epochs_outer;
    cfg.reset_penalty_each_epoch = true;
    const auto r = shift_correction(f.split.train, f.split.validation, f.split.plan, f.spec, cfg);
    CHECK(r.final_penalty.batches_consumed == 3);
}

TEST_CASE("run trace JSON round trip") {
    const auto f = drift(2, 13);
    const auto t = shift_correction(f.split.train, f.split.validation, f.split.plan, f.spec, quick(1));
    const auto j = to_json(t);
    CHECK(j.at("kind") == "c3.run_trace");
    const auto back = run_trace_from_json(j);
    CHECK(back.final_theta == t.final_theta);
    CHECK(back.trajectory_digest == t.trajectory_digest);
    CHECK(to_json(back).dump() == j.dump());
    CHECK(mlp_spec_from_json(to_json(f.spec)) == f.spec);
    CHECK(baseline_from_string(to_string(BaselineMode::cv_independent)) == BaselineMode::cv_independent);
    CHECK_THROWS_AS((void)baseline_from_string("dro"), std::invalid_argument);
}
