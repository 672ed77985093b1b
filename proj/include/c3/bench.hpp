#pragma once

// Experiment harness: batchwise and foldwise protocols, repetition averaging,
// lambda sweeps and the report data model.

#include <cstddef>
#include <cstdint>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "c3/data.hpp"
#include "c3/trainer.hpp"
#include "json.hpp"

namespace c3 {

enum class ProtocolMode { batchwise, foldwise };

/// Per-batch share of the training data and the resulting batch count.
struct SplitCell {
    double fraction = 0.5;
    std::size_t batches = 2;
};

/// (5%, 20), (10%, 10), (15%, 6), (20%, 5), (25%, 4), (50%, 2).
[[nodiscard]] std::vector<SplitCell> standard_split_grid();

inline const std::vector<double> kDefaultLambdaGrid = {0.01, 0.04, 0.07, 0.1};

struct ProtocolSpec {
    ProtocolMode mode = ProtocolMode::batchwise;
    std::vector<SplitCell> cells = {{0.5, 2}};
    std::size_t folds = 5;
    std::size_t repetitions = 5;
    std::uint64_t base_seed = 0;
    double validation_fraction = 0.2;
    /// Shuffle before splitting; unset means off for synthetic recipes and on for datasets.
    std::optional<bool> shuffle;
    /// Scale the penalty gradient by 1/(1 + lambda).
    bool recalibrate_loss = false;
    bool include_independent = true;
    /// Train C3 and CV on the whole training portion as one batch (the CV / C3 columns).
    bool include_full_dataset = true;
    /// External reference accuracy in percent; enables delta2.
    std::optional<double> reference_accuracy;
    /// Per-cell budget on summed run time; 0 disables. Remaining repetitions are skipped.
    double cell_time_limit_seconds = 0.0;
    /// Worker threads for independent runs; 0 uses the OpenMP default.
    int jobs = 0;

    void validate() const;
};

/// Either a fixed dataset or a synthetic recipe regenerated per run. For a
/// recipe, n_per_batch * batches is the total sample count and the batch count
/// is set by each grid cell.
struct DataSource {
    std::optional<Dataset> dataset;
    std::optional<ShiftRecipe> recipe;

    static DataSource from_dataset(Dataset d) { return {std::move(d), std::nullopt}; }
    static DataSource from_recipe(ShiftRecipe r) { return {std::nullopt, r}; }
    [[nodiscard]] std::string describe() const;
};

/// Per-batch validation accuracies (percent) of one repetition (and rotation).
struct RunResult {
    std::size_t repetition = 0;
    std::size_t rotation = 0;
    std::uint64_t seed = 0;
    std::vector<double> c3;
    std::vector<double> cv;
    std::vector<double> cv_independent;
    std::optional<double> full_c3;
    std::optional<double> full_cv;
};

struct ReportRow {
    std::string label;
    std::size_t batches = 0;
    double fraction = 0.0;
    double lambda = 0.0;
    bool skipped = false;

    std::vector<RunResult> runs;

    // Derived columns, all recomputable from `runs` (see summarize_row).
    std::vector<double> c3_batches;
    std::vector<double> cv_batches;
    std::vector<double> cv_independent_batches;
    double mu1 = 0.0, sigma1_sq = 0.0;  // CV batchwise
    double mu2 = 0.0, sigma2_sq = 0.0;  // C3 batchwise
    std::optional<double> full_cv, full_c3;
    std::optional<double> reference;
    std::optional<double> delta1;  // full C3 - full CV
    std::optional<double> delta2;  // full C3 - reference
    double delta3 = 0.0;           // mu2 - mu1
    std::vector<double> delta3_per_repetition;
};

inline constexpr int kReportSchemaVersion = 1;

struct ExperimentReport {
    int schema_version = kReportSchemaVersion;
    std::string protocol = "batchwise";
    std::vector<ReportRow> rows;
    std::uint64_t base_seed = 0;
    std::size_t repetitions = 0;
    std::string config_hash;
    nlohmann::json config;
    std::optional<double> wall_time_seconds;
    /// (lambda, mean C3 accuracy) for sweeps.
    std::vector<std::pair<double, double>> sweep_series;
};

[[nodiscard]] double mean_of(const std::vector<double>& v);
/// Population variance (divide by the count).
[[nodiscard]] double population_variance(const std::vector<double>& v);

/// Fills every derived column of `row` from `row.runs`.
void summarize_row(ReportRow& row);

/// Runs C3, CV-sequential and (optionally) CV-independent for every cell and
/// repetition with seeds derived from (base_seed, cell, repetition).
[[nodiscard]] ExperimentReport run_protocol(const DataSource& source, const ProtocolSpec& protocol,
                                            const TrainConfig& train, const MlpSpec& spec);

/// One report row per (lambda, cell); series holds the mean mu2 per lambda.
[[nodiscard]] ExperimentReport lambda_sweep(const DataSource& source, const std::vector<double>& values,
                                            const ProtocolSpec& protocol, const TrainConfig& train,
                                            const MlpSpec& spec);

/// Problems found when recomputing the derived columns from the raw runs.
[[nodiscard]] std::vector<std::string> verify_report(const ExperimentReport& report, double tolerance = 1e-9);

/// One foldwise rotation: the held-out fold validates, the remaining folds in
/// order form the causal batch sequence (plan indexes into `train`).
struct FoldRotation {
    std::size_t held_out = 0;
    std::vector<std::size_t> validation;
    std::vector<std::size_t> train;
    FragmentationPlan plan;
};

[[nodiscard]] std::vector<FoldRotation> fold_rotations(std::size_t n, std::size_t k, std::uint64_t seed,
                                                       bool shuffle);

enum class ReportFormat { json, csv, markdown };

[[nodiscard]] std::string emit_report(const ExperimentReport& report, ReportFormat format);
[[nodiscard]] nlohmann::json to_json(const ExperimentReport& report);
[[nodiscard]] ExperimentReport report_from_json(const nlohmann::json& j);

/// "↑ 2.5", "↓ 0.1" or "0" at one decimal.
[[nodiscard]] std::string format_delta(double delta);

/// Two-column CSV (lambda, accuracy).
[[nodiscard]] std::string emit_sweep_series(const ExperimentReport& report);

}  // namespace c3
