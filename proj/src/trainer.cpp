#include "c3/trainer.hpp"

#include <algorithm>
#include <cstdio>
#include <cstring>
#include <numeric>
#include <random>
#include <unordered_set>

#include "c3/rng.hpp"

namespace c3 {

void TrainConfig::validate() const {
    if (epochs == 0) throw std::invalid_argument("train: epochs must be >= 1");
    if (minibatch_size == 0) throw std::invalid_argument("train: minibatch_size must be >= 1");
    optimizer.validate();
    penalty.validate();
}

double RunTrace::mean_accuracy() const {
    if (records.empty()) return 0.0;
    double total = 0.0;
    for (const auto& r : records) total += r.validation_accuracy;
    return total / static_cast<double>(records.size());
}

namespace {

enum SeedTag : std::uint64_t { kInitTag = 1, kShuffleTag = 2 };

struct Batch {
    Tensor2D x;
    std::vector<std::size_t> y;
};

class Digest {
public:
    void absorb(std::span<const double> values) noexcept {
        for (double v : values) {
            unsigned char bytes[sizeof(double)];
            std::memcpy(bytes, &v, sizeof v);
            for (unsigned char b : bytes) {
                hash_ ^= b;
                hash_ *= 0x100000001B3ULL;
            }
        }
    }
    [[nodiscard]] std::uint64_t value() const noexcept { return hash_; }

private:
    std::uint64_t hash_ = 0xCBF29CE484222325ULL;
};

void check_inputs(const Dataset& train, const Dataset& validation, const FragmentationPlan& plan,
                  const MlpSpec& spec, const TrainConfig& cfg) {
    cfg.validate();
    spec.validate();
    train.validate();
    validation.validate();
    plan.validate(train.size());
    if (plan.batch_count() == 0) throw std::invalid_argument("train: plan has no batches");
    if (train.dim() != spec.input_dim || validation.dim() != spec.input_dim) {
        throw DimensionError("train: feature dimension does not match MlpSpec.input_dim");
    }
    if (train.class_count > spec.output_classes || validation.class_count > spec.output_classes) {
        throw DimensionError("train: dataset has more classes than MlpSpec.output_classes");
    }
    const std::unordered_set<std::size_t> train_ids(train.ids.begin(), train.ids.end());
    for (auto id : validation.ids) {
        if (train_ids.contains(id)) {
            throw std::invalid_argument("train: validation sample " + std::to_string(id) + " also in training data");
        }
    }
}

std::vector<Batch> materialize(const Dataset& train, const FragmentationPlan& plan) {
    std::vector<Batch> out;
    for (std::size_t b = 0; b < plan.batch_count(); ++b) {
        const auto idx = plan.indices(b);
        if (idx.empty()) throw std::invalid_argument("train: empty batch " + std::to_string(b));
        Batch batch{train.features.gather_rows(idx), {}};
        for (auto i : idx) batch.y.push_back(train.labels[i]);
        out.push_back(std::move(batch));
    }
    return out;
}

std::vector<std::vector<std::pair<std::size_t, double>>> kl_diagnostics(const Dataset& train,
                                                                        const FragmentationPlan& plan,
                                                                        KlDirection direction) {
    const std::size_t k = plan.batch_count();
    std::vector<std::vector<std::pair<std::size_t, double>>> out(k);
    if (k < 2) return out;
    for (std::size_t b = 0; b < k; ++b) {
        if (plan.batches[b].size() < 2) return out;  // moments undefined; no diagnostics
    }
    const auto kl = pairwise_kl(train, plan);
    for (std::size_t i = 0; i < k; ++i) {
        if (direction == KlDirection::causal) {
            for (std::size_t j = 0; j < i; ++j) out[i].emplace_back(j, kl[i][j]);
        } else {
            for (std::size_t j = i + 1; j < k; ++j) out[i].emplace_back(j, kl[i][j]);
        }
    }
    return out;
}

/// One pass over `batch` in seeded minibatch order; returns the sample-weighted mean loss.
double train_one_pass(const MlpSpec& spec, ParameterVector& theta, OptimizerState& opt, const Batch& batch,
                      const PenaltyState& penalty, const PenaltyConfig& pcfg, std::size_t minibatch,
                      std::uint64_t shuffle_seed, Digest& digest) {
    const std::size_t n = batch.y.size();
    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::mt19937_64 gen(shuffle_seed);
    std::shuffle(order.begin(), order.end(), gen);

    double loss_sum = 0.0;
    std::vector<std::size_t> labels;
    for (std::size_t begin = 0; begin < n; begin += minibatch) {
        const std::size_t end = std::min(n, begin + minibatch);
        const std::span<const std::size_t> rows(order.data() + begin, end - begin);
        const Tensor2D x = batch.x.gather_rows(rows);
        labels.clear();
        for (auto r : rows) labels.push_back(batch.y[r]);
        const auto lg = penalized_loss_and_grad(spec, theta, BatchView{x, labels}, penalty, pcfg);
        optimizer_step(opt, theta.values, lg.gradient.values);
        digest.absorb(theta.values);
        loss_sum += lg.loss * static_cast<double>(rows.size());
    }
    return loss_sum / static_cast<double>(n);
}

RunTrace sequential_run(const Dataset& train, const Dataset& validation, const FragmentationPlan& plan,
                        const MlpSpec& spec, const TrainConfig& cfg, bool absorb) {
    const auto batches = materialize(train, plan);
    const auto diagnostics = kl_diagnostics(train, plan, cfg.kl_direction);

    RunTrace trace;
    trace.baseline = cfg.baseline;
    trace.seed = cfg.seed;
    trace.epochs = cfg.epochs;
    PenaltyConfig pcfg = cfg.penalty;
    if (!absorb) pcfg.lambda = 0.0;
    trace.lambda = pcfg.lambda;

    ParameterVector theta = init_parameters(spec, derive_seed(cfg.seed, {kInitTag}));
    OptimizerState opt(cfg.optimizer, theta.size());
    PenaltyState penalty;
    Digest digest;

    const auto finish_batch = [&](std::size_t i, double loss, bool record) {
        // Fisher of batch i is folded in only after batch i is finished, so it
        // can only affect batches that come later in the causal order.
        if (absorb) {
            const auto fisher = empirical_fisher_diagonal(spec, theta, batches[i].x, batches[i].y);
            penalty = absorb_batch(penalty, fisher, theta, pcfg);
        }
        const double acc = evaluate(spec, theta, validation);
        trace.accuracy_history.push_back(acc);
        if (cfg.keep_checkpoints) trace.checkpoints.push_back(theta);
        if (record) trace.records.push_back(BatchRecord{i, acc, loss, diagnostics[i]});
    };
    const auto pass = [&](std::size_t epoch, std::size_t i) {
        return train_one_pass(spec, theta, opt, batches[i], penalty, pcfg, cfg.minibatch_size,
                              derive_seed(cfg.seed, {kShuffleTag, epoch, i}), digest);
    };

    if (cfg.loop_order == LoopOrder::epochs_outer) {
        for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
            if (cfg.reset_penalty_each_epoch) penalty = PenaltyState{};
            for (std::size_t i = 0; i < batches.size(); ++i) {
                const double loss = pass(epoch, i);
                finish_batch(i, loss, epoch + 1 == cfg.epochs);
            }
        }
    } else {
        for (std::size_t i = 0; i < batches.size(); ++i) {
            double loss = 0.0;
            for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) loss = pass(epoch, i);
            finish_batch(i, loss, true);
        }
    }
    trace.final_theta = std::move(theta);
    trace.final_penalty = std::move(penalty);
    trace.trajectory_digest = digest.value();
    return trace;
}

RunTrace independent_run(const Dataset& train, const Dataset& validation, const FragmentationPlan& plan,
                         const MlpSpec& spec, const TrainConfig& cfg) {
    const auto batches = materialize(train, plan);
    const auto diagnostics = kl_diagnostics(train, plan, cfg.kl_direction);

    RunTrace trace;
    trace.baseline = BaselineMode::cv_independent;
    trace.seed = cfg.seed;
    trace.epochs = cfg.epochs;
    PenaltyConfig pcfg = cfg.penalty;
    pcfg.lambda = 0.0;
    const PenaltyState none;
    Digest digest;
    ParameterVector theta;
    for (std::size_t i = 0; i < batches.size(); ++i) {
        theta = init_parameters(spec, derive_seed(cfg.seed, {kInitTag}));
        OptimizerState opt(cfg.optimizer, theta.size());
        double loss = 0.0;
        for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
            loss = train_one_pass(spec, theta, opt, batches[i], none, pcfg, cfg.minibatch_size,
                                  derive_seed(cfg.seed, {kShuffleTag, epoch, i}), digest);
        }
        const double acc = evaluate(spec, theta, validation);
        trace.accuracy_history.push_back(acc);
        if (cfg.keep_checkpoints) trace.checkpoints.push_back(theta);
        trace.records.push_back(BatchRecord{i, acc, loss, diagnostics[i]});
    }
    trace.final_theta = std::move(theta);
    trace.trajectory_digest = digest.value();
    return trace;
}

}  // namespace

RunTrace shift_correction(const Dataset& train, const Dataset& validation, const FragmentationPlan& plan,
                          const MlpSpec& spec, const TrainConfig& cfg) {
    check_inputs(train, validation, plan, spec, cfg);
    TrainConfig c = cfg;
    c.baseline = BaselineMode::c3;
    return sequential_run(train, validation, plan, spec, c, true);
}

RunTrace cv_baseline(const Dataset& train, const Dataset& validation, const FragmentationPlan& plan,
                     const MlpSpec& spec, const TrainConfig& cfg) {
    check_inputs(train, validation, plan, spec, cfg);
    if (cfg.baseline == BaselineMode::cv_independent) return independent_run(train, validation, plan, spec, cfg);
    TrainConfig c = cfg;
    c.baseline = BaselineMode::cv_sequential;
    return sequential_run(train, validation, plan, spec, c, false);
}

RunTrace run_training(const Dataset& train, const Dataset& validation, const FragmentationPlan& plan,
                      const MlpSpec& spec, const TrainConfig& cfg) {
    return cfg.baseline == BaselineMode::c3 ? shift_correction(train, validation, plan, spec, cfg)
                                            : cv_baseline(train, validation, plan, spec, cfg);
}

double evaluate(const MlpSpec& spec, const ParameterVector& theta, const Dataset& dataset) {
    if (dataset.size() == 0) throw std::invalid_argument("evaluate: empty dataset");
    const auto pred = predict(spec, theta, dataset.features);
    std::size_t correct = 0;
    for (std::size_t r = 0; r < pred.size(); ++r) correct += pred[r] == dataset.labels[r] ? 1 : 0;
    return static_cast<double>(correct) / static_cast<double>(pred.size());
}

std::vector<std::vector<double>> pairwise_kl(const Dataset& dataset, const FragmentationPlan& plan) {
    const std::size_t k = plan.batch_count();
    std::vector<GaussianMoments> m;
    for (std::size_t b = 0; b < k; ++b) m.push_back(batch_moments(dataset, plan, b));
    std::vector<std::vector<double>> out(k, std::vector<double>(k, 0.0));
    for (std::size_t i = 0; i < k; ++i) {
        for (std::size_t j = 0; j < k; ++j) {
            if (i != j) out[i][j] = gaussian_kl(m[i], m[j]);
        }
    }
    return out;
}

std::string to_string(BaselineMode m) {
    switch (m) {
        case BaselineMode::c3: return "c3";
        case BaselineMode::cv_sequential: return "cv_sequential";
        case BaselineMode::cv_independent: return "cv_independent";
    }
    return "?";
}

BaselineMode baseline_from_string(const std::string& s) {
    if (s == "c3") return BaselineMode::c3;
    if (s == "cv_sequential") return BaselineMode::cv_sequential;
    if (s == "cv_independent") return BaselineMode::cv_independent;
    throw std::invalid_argument("unknown baseline '" + s + "'");
}

nlohmann::json to_json(const MlpSpec& spec) {
    nlohmann::json hidden = nlohmann::json::array();
    for (const auto& h : spec.hidden) {
        hidden.push_back({{"width", h.width}, {"activation", h.activation == Activation::relu ? "relu" : "identity"}});
    }
    return {{"input_dim", spec.input_dim},
            {"hidden", hidden},
            {"output_classes", spec.output_classes},
            {"use_bias", spec.use_bias}};
}

MlpSpec mlp_spec_from_json(const nlohmann::json& j) {
    MlpSpec spec;
    spec.input_dim = j.at("input_dim").get<std::size_t>();
    spec.output_classes = j.at("output_classes").get<std::size_t>();
    spec.use_bias = j.value("use_bias", true);
    for (const auto& h : j.at("hidden")) {
        const auto act = h.value("activation", std::string("relu"));
        if (act != "relu" && act != "identity") throw std::invalid_argument("unknown activation '" + act + "'");
        spec.hidden.push_back({h.at("width").get<std::size_t>(),
                               act == "relu" ? Activation::relu : Activation::identity});
    }
    spec.validate();
    return spec;
}

nlohmann::json to_json(const TrainConfig& cfg) {
    return {{"epochs", cfg.epochs},
            {"minibatch_size", cfg.minibatch_size},
            {"optimizer",
             {{"kind", cfg.optimizer.kind == OptimizerKind::adam ? "adam" : "sgd"},
              {"learning_rate", cfg.optimizer.learning_rate},
              {"beta1", cfg.optimizer.beta1},
              {"beta2", cfg.optimizer.beta2},
              {"epsilon", cfg.optimizer.epsilon}}},
            {"penalty",
             {{"lambda", cfg.penalty.lambda},
              {"mode", cfg.penalty.mode == PenaltyMode::quadratic ? "quadratic" : "trace"},
              {"accumulation", cfg.penalty.accumulation == Accumulation::sum ? "sum" : "mean"},
              {"gradient_scale", cfg.penalty.gradient_scale}}},
            {"seed", cfg.seed},
            {"baseline", to_string(cfg.baseline)},
            {"reset_penalty_each_epoch", cfg.reset_penalty_each_epoch},
            {"loop_order", cfg.loop_order == LoopOrder::epochs_outer ? "epochs_outer" : "batches_outer"},
            {"kl_direction", cfg.kl_direction == KlDirection::causal ? "causal" : "forward"}};
}

namespace {

std::string hex64(std::uint64_t v) {
    char buf[24];
    std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(v));
    return buf;
}

}  // namespace

nlohmann::json to_json(const RunTrace& trace) {
    nlohmann::json records = nlohmann::json::array();
    for (const auto& r : trace.records) {
        nlohmann::json kl = nlohmann::json::array();
        for (const auto& [j, v] : r.kl_diagnostics) kl.push_back({{"batch", j}, {"kl", v}});
        records.push_back({{"batch", r.batch_index},
                           {"validation_accuracy", r.validation_accuracy},
                           {"mean_loss", r.mean_loss},
                           {"kl_diagnostics", kl}});
    }
    return {{"kind", "c3.run_trace"},
            {"schema_version", kRunTraceSchemaVersion},
            {"baseline", to_string(trace.baseline)},
            {"lambda", trace.lambda},
            {"seed", trace.seed},
            {"epochs", trace.epochs},
            {"mean_accuracy", trace.mean_accuracy()},
            {"records", records},
            {"accuracy_history", trace.accuracy_history},
            {"trajectory_digest", hex64(trace.trajectory_digest)},
            {"final_theta", to_json(trace.final_theta)},
            {"penalty_state", to_json(trace.final_penalty)}};
}

RunTrace run_trace_from_json(const nlohmann::json& j) {
    if (j.value("kind", "") != "c3.run_trace") throw std::invalid_argument("run trace: wrong kind");
    if (j.at("schema_version").get<int>() != kRunTraceSchemaVersion) {
        throw std::invalid_argument("run trace: unsupported schema_version");
    }
    RunTrace t;
    t.baseline = baseline_from_string(j.at("baseline").get<std::string>());
    t.lambda = j.at("lambda").get<double>();
    t.seed = j.at("seed").get<std::uint64_t>();
    t.epochs = j.at("epochs").get<std::size_t>();
    for (const auto& r : j.at("records")) {
        BatchRecord rec{r.at("batch").get<std::size_t>(), r.at("validation_accuracy").get<double>(),
                        r.at("mean_loss").get<double>(), {}};
        for (const auto& kl : r.at("kl_diagnostics")) {
            rec.kl_diagnostics.emplace_back(kl.at("batch").get<std::size_t>(), kl.at("kl").get<double>());
        }
        t.records.push_back(std::move(rec));
    }
    t.accuracy_history = j.at("accuracy_history").get<std::vector<double>>();
    t.trajectory_digest = std::stoull(j.at("trajectory_digest").get<std::string>(), nullptr, 16);
    t.final_theta = parameter_vector_from_json(j.at("final_theta"));
    t.final_penalty = penalty_state_from_json(j.at("penalty_state"));
    return t;
}

}  // namespace c3
