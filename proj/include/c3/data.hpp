#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "c3/information.hpp"
#include "c3/tensor.hpp"
#include "json.hpp"

namespace c3 {

enum class DataErrorKind {
    io,
    no_data_rows,
    ragged_row,
    non_numeric_feature,
    missing_label_column,
    unsupported_magic,
    truncated_payload,
    count_mismatch,
    invalid_argument,
};

class DataError : public std::runtime_error {
public:
    DataError(DataErrorKind kind, const std::string& message) : std::runtime_error(message), kind_(kind) {}
    [[nodiscard]] DataErrorKind kind() const noexcept { return kind_; }

private:
    DataErrorKind kind_;
};

struct Dataset {
    Tensor2D features;
    std::vector<std::size_t> labels;
    std::size_t class_count = 0;
    std::string provenance;
    /// Source row id of every sample; used to prove train/validation disjointness.
    std::vector<std::size_t> ids;

    static Dataset make(Tensor2D features, std::vector<std::size_t> labels, std::size_t class_count,
                        std::string provenance);

    [[nodiscard]] std::size_t size() const noexcept { return labels.size(); }
    [[nodiscard]] std::size_t dim() const noexcept { return features.cols(); }
    void validate() const;
    [[nodiscard]] Dataset subset(std::span<const std::size_t> rows) const;
};

struct IndexRange {
    std::size_t begin = 0;
    std::size_t end = 0;
    [[nodiscard]] std::size_t size() const noexcept { return end - begin; }
    friend bool operator==(const IndexRange&, const IndexRange&) = default;
};

/// Ordered partition of a dataset into K causal batches: batch i holds rows
/// order[batches[i].begin .. batches[i].end).
struct FragmentationPlan {
    std::vector<std::size_t> order;
    std::vector<IndexRange> batches;

    [[nodiscard]] std::size_t batch_count() const noexcept { return batches.size(); }
    [[nodiscard]] std::span<const std::size_t> indices(std::size_t batch) const;
    [[nodiscard]] std::vector<std::size_t> sizes() const;
    void validate(std::size_t n) const;
    friend bool operator==(const FragmentationPlan&, const FragmentationPlan&) = default;
};

/// Near-equal contiguous batches, remainder to the earliest ones, after an
/// optional seeded shuffle.
[[nodiscard]] FragmentationPlan fragment(std::size_t n, std::size_t k, std::uint64_t seed, bool shuffle);
[[nodiscard]] FragmentationPlan fragment(const Dataset& dataset, std::size_t k, std::uint64_t seed, bool shuffle);

enum class ShiftKind { mean_drift, feature_permutation, gaussian_corruption };

/// Gaussian-mixture generator with a per-batch covariate shift. Class c has
/// mean separation * (c - (C-1)/2) on feature 0 and zero elsewhere, unit
/// variance. Batch b (0-based) then gets
///   mean_drift:          +b * delta on every feature,
///   feature_permutation: a seeded permutation of the features (batch 0 keeps identity),
///   gaussian_corruption: additive N(0, (b * sigma_ramp)^2) noise.
struct ShiftRecipe {
    ShiftKind kind = ShiftKind::mean_drift;
    std::size_t batches = 2;
    std::size_t dim = 10;
    std::size_t classes = 2;
    double delta = 0.5;
    double sigma_ramp = 0.5;
    double class_separation = 2.0;
    std::size_t n_per_batch = 1000;
    bool identity_permutation = false;

    void validate() const;
};

[[nodiscard]] nlohmann::json to_json(const ShiftRecipe& recipe);
[[nodiscard]] ShiftRecipe shift_recipe_from_json(const nlohmann::json& j);

struct SyntheticData {
    Dataset dataset;
    FragmentationPlan plan;
};

[[nodiscard]] SyntheticData synth_shift(const ShiftRecipe& recipe, std::size_t n_per_batch, std::uint64_t seed);
[[nodiscard]] SyntheticData synth_shift(const ShiftRecipe& recipe, std::uint64_t seed);

struct HoldoutSplit {
    Dataset train;
    FragmentationPlan plan;
    Dataset validation;
};

/// Carves round(fraction * |batch|) seeded samples out of every batch into the
/// validation set; the rest keeps its causal order and batch boundaries.
[[nodiscard]] HoldoutSplit holdout_split(const Dataset& dataset, const FragmentationPlan& plan, double fraction,
                                         std::uint64_t seed);

/// Seeded holdout over the whole dataset, then `fragment` of the remainder.
[[nodiscard]] HoldoutSplit holdout_then_fragment(const Dataset& dataset, double fraction, std::size_t k,
                                                 std::uint64_t seed, bool shuffle);

/// Per-feature sample mean and unbiased variance of one batch, variance
/// floored at kVarianceFloor.
[[nodiscard]] GaussianMoments batch_moments(const Dataset& dataset, const FragmentationPlan& plan,
                                            std::size_t batch_index);
[[nodiscard]] GaussianMoments moments(const Tensor2D& x);

inline constexpr double kVarianceFloor = 1e-9;

/// `label_column` is an integer index (negative counts from the end) or, with
/// a header, a column name. Non-negative integer labels are used as class
/// indices directly; any other label text is mapped to classes in order of
/// first appearance.
[[nodiscard]] Dataset load_csv(const std::filesystem::path& path, const std::string& label_column = "-1",
                               bool has_header = false);

/// Header f0..f{d-1},label; 17 significant digits.
void write_csv(const Dataset& dataset, const std::filesystem::path& path);

/// Big-endian IDX pair (images magic 0x00000803, labels 0x00000801); pixels / 255.
[[nodiscard]] Dataset load_idx(const std::filesystem::path& images, const std::filesystem::path& labels);
[[nodiscard]] Dataset parse_idx(std::span<const std::uint8_t> images, std::span<const std::uint8_t> labels);

}  // namespace c3
