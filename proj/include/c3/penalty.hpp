#pragma once

#include <cstddef>
#include <optional>
#include <span>

#include "c3/information.hpp"
#include "c3/mlp.hpp"
#include "json.hpp"

namespace c3 {

enum class PenaltyMode {
    quadratic,  ///< (lambda/2) sum_i F_i (theta_i - anchor_i)^2
    trace,      ///< lambda * sum_i F_i of the live batch at the current theta (experimental)
};

enum class Accumulation { sum, mean };

struct PenaltyConfig {
    double lambda = 0.1;
    PenaltyMode mode = PenaltyMode::quadratic;
    Accumulation accumulation = Accumulation::sum;
    /// Multiplies the penalty gradient only (loss-recalibration runs use 1/(1+lambda)).
    double gradient_scale = 1.0;

    void validate() const;
};

/// Fisher summary of every batch consumed so far. An empty state contributes
/// no penalty.
struct PenaltyState {
    std::optional<FisherEstimate> accumulated;
    std::size_t batches_consumed = 0;

    [[nodiscard]] bool empty() const noexcept { return batches_consumed == 0 || !accumulated; }
};

/// Folds `fisher` into the state and moves the anchor to `theta_post`.
[[nodiscard]] PenaltyState absorb_batch(const PenaltyState& state, const FisherEstimate& fisher,
                                        const ParameterVector& theta_post, const PenaltyConfig& cfg);

/// Live batch the trace penalty is evaluated on.
struct BatchView {
    const Tensor2D& x;
    std::span<const std::size_t> labels;
};

[[nodiscard]] double quadratic_penalty(const PenaltyState& state, const ParameterVector& theta, double lambda);

/// lambda * F_acc,i * (theta_i - anchor_i), scaled by `scale`.
[[nodiscard]] ParameterVector quadratic_penalty_gradient(const PenaltyState& state, const ParameterVector& theta,
                                                         double lambda, double scale = 1.0);

[[nodiscard]] double trace_penalty(const MlpSpec& spec, const ParameterVector& theta, const BatchView& batch,
                                   double lambda);

/// Quadratic mode only; trace mode needs the live batch and throws here.
[[nodiscard]] double penalty_value(const PenaltyState& state, const ParameterVector& theta,
                                   const PenaltyConfig& cfg);
[[nodiscard]] double penalty_value(const PenaltyState& state, const ParameterVector& theta,
                                   const PenaltyConfig& cfg, const MlpSpec& spec, const BatchView& batch);

/// Cross-entropy plus penalty, and the gradient of both. With lambda = 0 or an
/// empty state the result is exactly the plain cross-entropy path.
[[nodiscard]] LossAndGradient penalized_loss_and_grad(const MlpSpec& spec, const ParameterVector& theta,
                                                      const BatchView& batch, const PenaltyState& state,
                                                      const PenaltyConfig& cfg);

inline constexpr int kPenaltySnapshotVersion = 1;

[[nodiscard]] nlohmann::json to_json(const ParameterVector& p);
[[nodiscard]] ParameterVector parameter_vector_from_json(const nlohmann::json& j);
[[nodiscard]] nlohmann::json to_json(const PenaltyState& state);
[[nodiscard]] PenaltyState penalty_state_from_json(const nlohmann::json& j);

}  // namespace c3
