#include "c3/penalty.hpp"

#include <cmath>
#include <stdexcept>

namespace c3 {

void PenaltyConfig::validate() const {
    if (!(lambda >= 0.0) || !std::isfinite(lambda)) throw std::invalid_argument("penalty: lambda must be finite and >= 0");
    if (!(gradient_scale >= 0.0) || !std::isfinite(gradient_scale)) {
        throw std::invalid_argument("penalty: gradient_scale must be finite and >= 0");
    }
}

PenaltyState absorb_batch(const PenaltyState& state, const FisherEstimate& fisher, const ParameterVector& theta_post,
                          const PenaltyConfig& cfg) {
    fisher.validate();
    if (!fisher.diagonal.same_layout(theta_post)) throw DimensionError("absorb_batch: anchor layout mismatch");
    PenaltyState next;
    next.batches_consumed = state.batches_consumed + 1;
    if (state.empty()) {
        next.accumulated = FisherEstimate{fisher.diagonal, theta_post, fisher.sample_count};
        return next;
    }
    const FisherEstimate& acc = *state.accumulated;
    if (!acc.diagonal.same_layout(fisher.diagonal)) throw DimensionError("absorb_batch: Fisher layout mismatch");
    FisherEstimate merged{acc.diagonal, theta_post, acc.sample_count + fisher.sample_count};
    auto& out = merged.diagonal.values;
    const auto& add = fisher.diagonal.values;
    if (cfg.accumulation == Accumulation::sum) {
        for (std::size_t k = 0; k < out.size(); ++k) out[k] += add[k];
    } else {
        const double b = static_cast<double>(state.batches_consumed);
        for (std::size_t k = 0; k < out.size(); ++k) out[k] = (out[k] * b + add[k]) / (b + 1.0);
    }
    next.accumulated = std::move(merged);
    return next;
}

namespace {

void check_layout(const PenaltyState& state, const ParameterVector& theta) {
    if (!state.accumulated->diagonal.same_layout(theta)) throw DimensionError("penalty: layout mismatch");
}

}  // namespace

double quadratic_penalty(const PenaltyState& state, const ParameterVector& theta, double lambda) {
    if (state.empty() || lambda == 0.0) return 0.0;
    check_layout(state, theta);
    const auto& f = state.accumulated->diagonal.values;
    const auto& anchor = state.accumulated->anchor.values;
    double total = 0.0;
    for (std::size_t k = 0; k < f.size(); ++k) {
        const double d = theta.values[k] - anchor[k];
        total += f[k] * d * d;
    }
    return 0.5 * lambda * total;
}

ParameterVector quadratic_penalty_gradient(const PenaltyState& state, const ParameterVector& theta, double lambda,
                                           double scale) {
    ParameterVector g(theta.layout);
    if (state.empty() || lambda == 0.0) return g;
    check_layout(state, theta);
    const auto& f = state.accumulated->diagonal.values;
    const auto& anchor = state.accumulated->anchor.values;
    for (std::size_t k = 0; k < f.size(); ++k) g.values[k] = scale * lambda * f[k] * (theta.values[k] - anchor[k]);
    return g;
}

double trace_penalty(const MlpSpec& spec, const ParameterVector& theta, const BatchView& batch, double lambda) {
    if (lambda == 0.0) return 0.0;
    const auto f = mean_squared_sample_gradients(spec, theta, batch.x, batch.labels);
    double total = 0.0;
    for (double v : f.values) total += v;
    return lambda * total;
}

double penalty_value(const PenaltyState& state, const ParameterVector& theta, const PenaltyConfig& cfg) {
    if (cfg.mode == PenaltyMode::trace && !state.empty() && cfg.lambda != 0.0) {
        throw std::invalid_argument("penalty_value: trace mode needs the live batch");
    }
    return quadratic_penalty(state, theta, cfg.lambda);
}

double penalty_value(const PenaltyState& state, const ParameterVector& theta, const PenaltyConfig& cfg,
                     const MlpSpec& spec, const BatchView& batch) {
    if (state.empty() || cfg.lambda == 0.0) return 0.0;
    if (cfg.mode == PenaltyMode::quadratic) return quadratic_penalty(state, theta, cfg.lambda);
    check_layout(state, theta);
    return trace_penalty(spec, theta, batch, cfg.lambda);
}

LossAndGradient penalized_loss_and_grad(const MlpSpec& spec, const ParameterVector& theta, const BatchView& batch,
                                        const PenaltyState& state, const PenaltyConfig& cfg) {
    auto result = loss_and_gradient(spec, theta, batch.x, batch.labels);
    if (state.empty() || cfg.lambda == 0.0) return result;
    check_layout(state, theta);

    if (cfg.mode == PenaltyMode::quadratic) {
        result.loss += quadratic_penalty(state, theta, cfg.lambda);
        const auto pg = quadratic_penalty_gradient(state, theta, cfg.lambda, cfg.gradient_scale);
        for (std::size_t k = 0; k < pg.size(); ++k) result.gradient.values[k] += pg.values[k];
        return result;
    }

    // Trace mode: the live-batch Fisher has no cheap analytic gradient here, so
    // central differences are used. Cost is 2 * |theta| Fisher evaluations.
    constexpr double kStep = 1e-5;
    result.loss += trace_penalty(spec, theta, batch, cfg.lambda);
    ParameterVector probe = theta;
    for (std::size_t k = 0; k < theta.size(); ++k) {
        probe.values[k] = theta.values[k] + kStep;
        const double up = trace_penalty(spec, probe, batch, cfg.lambda);
        probe.values[k] = theta.values[k] - kStep;
        const double down = trace_penalty(spec, probe, batch, cfg.lambda);
        probe.values[k] = theta.values[k];
        result.gradient.values[k] += cfg.gradient_scale * (up - down) / (2.0 * kStep);
    }
    require_finite(result.gradient.values, "trace penalty gradient");
    return result;
}

nlohmann::json to_json(const ParameterVector& p) {
    nlohmann::json layout = nlohmann::json::array();
    for (const auto& s : p.layout) {
        layout.push_back({{"layer", s.layer}, {"bias", s.is_bias}, {"rows", s.rows}, {"cols", s.cols},
                          {"offset", s.offset}});
    }
    return {{"layout", layout}, {"values", p.values}};
}

ParameterVector parameter_vector_from_json(const nlohmann::json& j) {
    Layout layout;
    for (const auto& s : j.at("layout")) {
        layout.push_back(Slice{s.at("layer").get<std::size_t>(), s.at("bias").get<bool>(),
                               s.at("rows").get<std::size_t>(), s.at("cols").get<std::size_t>(),
                               s.at("offset").get<std::size_t>()});
    }
    return ParameterVector(std::move(layout), j.at("values").get<std::vector<double>>());
}

nlohmann::json to_json(const PenaltyState& state) {
    nlohmann::json j = {{"kind", "c3.penalty_state"},
                        {"version", kPenaltySnapshotVersion},
                        {"batches_consumed", state.batches_consumed}};
    if (state.accumulated) {
        j["fisher"] = {{"diagonal", to_json(state.accumulated->diagonal)},
                       {"anchor", to_json(state.accumulated->anchor)},
                       {"sample_count", state.accumulated->sample_count}};
    } else {
        j["fisher"] = nullptr;
    }
    return j;
}

PenaltyState penalty_state_from_json(const nlohmann::json& j) {
    if (j.value("kind", "") != "c3.penalty_state") throw std::invalid_argument("penalty snapshot: wrong kind");
    const int version = j.at("version").get<int>();
    if (version != kPenaltySnapshotVersion) {
        throw std::invalid_argument("penalty snapshot: unsupported version " + std::to_string(version));
    }
    PenaltyState state;
    state.batches_consumed = j.at("batches_consumed").get<std::size_t>();
    if (!j.at("fisher").is_null()) {
        const auto& f = j.at("fisher");
        FisherEstimate est{parameter_vector_from_json(f.at("diagonal")), parameter_vector_from_json(f.at("anchor")),
                           f.at("sample_count").get<std::size_t>()};
        est.validate();
        state.accumulated = std::move(est);
    }
    return state;
}

}  // namespace c3
