#pragma once

#include <cstddef>
#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "c3/data.hpp"
#include "c3/mlp.hpp"
#include "c3/optimizer.hpp"
#include "c3/penalty.hpp"
#include "json.hpp"

namespace c3 {

enum class BaselineMode {
    c3,              ///< Fisher penalty carried across batches
    cv_sequential,   ///< same loop, lambda forced to 0
    cv_independent,  ///< fresh model per batch
};

enum class LoopOrder {
    epochs_outer,   ///< for epoch: for batch (every epoch revisits all batches)
    batches_outer,  ///< for batch: for epoch (each batch trained to completion, then absorbed)
};

enum class KlDirection {
    causal,   ///< batch i against earlier batches j < i
    forward,  ///< batch i against later batches j > i (offline analysis only)
};

struct TrainConfig {
    std::size_t epochs = 10;
    std::size_t minibatch_size = 32;
    OptimizerConfig optimizer;
    PenaltyConfig penalty;
    std::uint64_t seed = 0;
    BaselineMode baseline = BaselineMode::c3;
    /// Drop the accumulated Fisher state at the start of every epoch.
    bool reset_penalty_each_epoch = false;
    LoopOrder loop_order = LoopOrder::epochs_outer;
    KlDirection kl_direction = KlDirection::causal;
    /// Keep a copy of theta after every batch of every epoch.
    bool keep_checkpoints = false;

    void validate() const;
};

struct BatchRecord {
    std::size_t batch_index = 0;
    double validation_accuracy = 0.0;
    double mean_loss = 0.0;
    /// (other batch index, KL(D_i || D_j)) per the configured direction.
    std::vector<std::pair<std::size_t, double>> kl_diagnostics;
};

struct RunTrace {
    BaselineMode baseline = BaselineMode::c3;
    double lambda = 0.0;
    std::uint64_t seed = 0;
    std::size_t epochs = 0;
    /// One record per batch, from the final epoch.
    std::vector<BatchRecord> records;
    /// Validation accuracy after every batch of every epoch, epoch-major.
    std::vector<double> accuracy_history;
    ParameterVector final_theta;
    PenaltyState final_penalty;
    /// FNV-1a over the bytes of theta after every optimizer step.
    std::uint64_t trajectory_digest = 0;
    std::vector<ParameterVector> checkpoints;

    [[nodiscard]] double mean_accuracy() const;
};

/// Sequential consumption of the plan's batches in causal order, absorbing
/// each batch's empirical Fisher into the penalty for all later batches.
[[nodiscard]] RunTrace shift_correction(const Dataset& train, const Dataset& validation,
                                        const FragmentationPlan& plan, const MlpSpec& spec,
                                        const TrainConfig& cfg);

/// cv_sequential: shift_correction with lambda forced to 0.
/// cv_independent: a freshly seeded model trained for cfg.epochs on each batch.
[[nodiscard]] RunTrace cv_baseline(const Dataset& train, const Dataset& validation, const FragmentationPlan& plan,
                                   const MlpSpec& spec, const TrainConfig& cfg);

/// Dispatches on cfg.baseline.
[[nodiscard]] RunTrace run_training(const Dataset& train, const Dataset& validation, const FragmentationPlan& plan,
                                    const MlpSpec& spec, const TrainConfig& cfg);

/// Fraction of argmax-correct predictions; ties go to the lowest class.
[[nodiscard]] double evaluate(const MlpSpec& spec, const ParameterVector& theta, const Dataset& dataset);

/// KL(D_i || D_j) between per-feature moment fits of every batch pair.
[[nodiscard]] std::vector<std::vector<double>> pairwise_kl(const Dataset& dataset, const FragmentationPlan& plan);

[[nodiscard]] std::string to_string(BaselineMode m);
[[nodiscard]] BaselineMode baseline_from_string(const std::string& s);

inline constexpr int kRunTraceSchemaVersion = 1;

[[nodiscard]] nlohmann::json to_json(const MlpSpec& spec);
[[nodiscard]] MlpSpec mlp_spec_from_json(const nlohmann::json& j);
[[nodiscard]] nlohmann::json to_json(const TrainConfig& cfg);
[[nodiscard]] nlohmann::json to_json(const RunTrace& trace);
[[nodiscard]] RunTrace run_trace_from_json(const nlohmann::json& j);

}  // namespace c3
