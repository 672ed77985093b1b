#pragma once

#include <cstdint>
#include <span>
#include <vector>

namespace c3 {

enum class OptimizerKind { sgd, adam };

struct OptimizerConfig {
    OptimizerKind kind = OptimizerKind::adam;
    double learning_rate = 1e-3;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double epsilon = 1e-8;

    void validate() const;
};

struct OptimizerState {
    OptimizerConfig config;
    std::vector<double> m;
    std::vector<double> v;
    std::uint64_t step_count = 0;

    OptimizerState() = default;
    OptimizerState(OptimizerConfig cfg, std::size_t parameter_count);
};

/// Applies one update to `theta` in place and advances `state`.
/// sgd: theta -= lr * g. adam: bias-corrected first/second moment update.
void optimizer_step(OptimizerState& state, std::span<double> theta, std::span<const double> gradient);

}  // namespace c3
