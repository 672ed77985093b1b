#include "c3/optimizer.hpp"

#include <cmath>
#include <stdexcept>

#include "c3/tensor.hpp"

namespace c3 {

void OptimizerConfig::validate() const {
    if (!(learning_rate > 0.0) || !std::isfinite(learning_rate)) {
        throw std::invalid_argument("optimizer: learning_rate must be > 0");
    }
    if (kind == OptimizerKind::adam) {
        if (!(beta1 >= 0.0 && beta1 < 1.0) || !(beta2 >= 0.0 && beta2 < 1.0)) {
            throw std::invalid_argument("optimizer: betas must lie in [0, 1)");
        }
        if (!(epsilon > 0.0)) throw std::invalid_argument("optimizer: epsilon must be > 0");
    }
}

OptimizerState::OptimizerState(OptimizerConfig cfg, std::size_t parameter_count)
    : config(cfg), m(parameter_count, 0.0), v(parameter_count, 0.0) {
    config.validate();
}

void optimizer_step(OptimizerState& state, std::span<double> theta, std::span<const double> gradient) {
    if (theta.size() != gradient.size()) throw DimensionError("optimizer_step: gradient length mismatch");
    require_finite(gradient, "optimizer_step gradient");
    const auto& cfg = state.config;
    ++state.step_count;
    if (cfg.kind == OptimizerKind::sgd) {
        for (std::size_t k = 0; k < theta.size(); ++k) theta[k] -= cfg.learning_rate * gradient[k];
        return;
    }
    if (state.m.size() != theta.size() || state.v.size() != theta.size()) {
        throw DimensionError("optimizer_step: moment length mismatch");
    }
    const double t = static_cast<double>(state.step_count);
    const double c1 = 1.0 - std::pow(cfg.beta1, t);
    const double c2 = 1.0 - std::pow(cfg.beta2, t);
    for (std::size_t k = 0; k < theta.size(); ++k) {
        const double g = gradient[k];
        state.m[k] = cfg.beta1 * state.m[k] + (1.0 - cfg.beta1) * g;
        state.v[k] = cfg.beta2 * state.v[k] + (1.0 - cfg.beta2) * g * g;
        const double mhat = state.m[k] / c1;
        const double vhat = state.v[k] / c2;
        theta[k] -= cfg.learning_rate * mhat / (std::sqrt(vhat) + cfg.epsilon);
    }
}

}  // namespace c3
