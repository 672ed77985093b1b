#include <cmath>

#include "c3/penalty.hpp"
#include "doctest.h"
#include "test_util.hpp"

using namespace c3;
using c3::testing::fd_gradient;
using c3::testing::max_relative_error;

namespace {

MlpSpec scalar_spec() {
    MlpSpec s;
    s.input_dim = 1;
    s.output_classes = 2;
    s.use_bias = false;
    return s;  // two weights
}

FisherEstimate fisher_of(const MlpSpec& spec, std::vector<double> diag, std::vector<double> anchor) {
    const auto layout = make_layout(spec);
    return {ParameterVector(layout, std::move(diag)), ParameterVector(layout, std::move(anchor)), 10};
}

PenaltyState absorbed(const MlpSpec& spec, std::vector<double> diag, std::vector<double> anchor,
                      const PenaltyConfig& cfg = {}) {
    const auto f = fisher_of(spec, diag, anchor);
    return absorb_batch({}, f, f.anchor, cfg);
}

}  // namespace

TEST_CASE("first absorption copies the Fisher and anchors at theta_post") {
    const auto spec = scalar_spec();
    const auto f = fisher_of(spec, {2.0, 3.0}, {0.0, 0.0});
    const ParameterVector post(make_layout(spec), {0.5, -0.5});
    const auto s = absorb_batch({}, f, post, {});
    CHECK(s.batches_consumed == 1);
    CHECK(s.accumulated->diagonal.values == std::vector<double>{2.0, 3.0});
    CHECK(s.accumulated->anchor == post);
}

TEST_CASE("sum accumulation adds, mean accumulation averages") {
    const auto spec = scalar_spec();
    const auto f1 = fisher_of(spec, {2.0, 1.0}, {0, 0});
    const auto f2 = fisher_of(spec, {4.0, 5.0}, {0, 0});
    const ParameterVector p1(make_layout(spec), {1, 1}), p2(make_layout(spec), {2, 2});

    PenaltyConfig sum;
    auto s = absorb_batch(absorb_batch({}, f1, p1, sum), f2, p2, sum);
    CHECK(s.accumulated->diagonal.values == std::vector<double>{6.0, 6.0});
    CHECK(s.accumulated->anchor == p2);
    CHECK(s.batches_consumed == 2);

    PenaltyConfig mean;
    mean.accumulation = Accumulation::mean;
    s = absorb_batch(absorb_batch({}, f1, p1, mean), f2, p2, mean);
    CHECK(s.accumulated->diagonal.values == std::vector<double>{3.0, 3.0});
}

TEST_CASE("absorb_batch rejects mismatched layouts") {
    const auto spec = scalar_spec();
    const auto s = absorbed(spec, {1.0, 1.0}, {0, 0});
    const auto other = MlpSpec::tabular(2, 2);
    const auto f = FisherEstimate{zero_parameters(other), zero_parameters(other), 1};
    CHECK_THROWS_AS((void)absorb_batch(s, f, f.anchor, {}), DimensionError);
}

TEST_CASE("quadratic penalty hand value and edge cases") {
    const auto spec = MlpSpec{1, {}, 2, false};
    const auto s = absorbed(spec, {2.0, 0.0}, {0.0, 0.0});
    const ParameterVector theta(make_layout(spec), {0.5, 7.0});
    PenaltyConfig cfg;
    cfg.lambda = 0.1;
    CHECK(penalty_value(s, theta, cfg) == doctest::Approx(0.025).epsilon(1e-15));
    CHECK(penalty_value(s, s.accumulated->anchor, cfg) == 0.0);
    cfg.lambda = 0.0;
    CHECK(penalty_value(s, theta, cfg) == 0.0);
    cfg.lambda = 0.1;
    CHECK(penalty_value(PenaltyState{}, theta, cfg) == 0.0);
    cfg.mode = PenaltyMode::trace;
    CHECK_THROWS((void)penalty_value(s, theta, cfg));
}

TEST_CASE("penalty is linear and increasing in lambda, and the anchor is its unique minimizer") {
    const auto spec = scalar_spec();
    const auto s = absorbed(spec, {1.5, 0.5}, {0.2, -0.1});
    const ParameterVector theta(make_layout(spec), {1.0, 1.0});
    double prev = -1.0;
    for (double lambda : {0.01, 0.04, 0.07, 0.1}) {
        const double v = quadratic_penalty(s, theta, lambda);
        CHECK(v > prev);
        CHECK(v == doctest::Approx(lambda * quadratic_penalty(s, theta, 1.0)));
        prev = v;
    }
    ParameterVector probe = s.accumulated->anchor;
    for (double dx : {-1e-3, 1e-3}) {
        probe.values[0] = s.accumulated->anchor.values[0] + dx;
        CHECK(quadratic_penalty(s, probe, 1.0) > 0.0);
    }
}

TEST_CASE("lambda = 0 returns the cross-entropy result bit for bit") {
    const auto spec = MlpSpec::tabular(3, 2);
    const auto theta = init_parameters(spec, 1);
    const auto x = c3::testing::random_matrix(16, 3, 2);
    const auto y = c3::testing::random_labels(16, 2, 3);
    const auto fisher = empirical_fisher_diagonal(spec, init_parameters(spec, 9), x, y);
    const auto state = absorb_batch({}, fisher, fisher.anchor, {});
    PenaltyConfig cfg;
    cfg.lambda = 0.0;
    const auto base = loss_and_gradient(spec, theta, x, y);
    const auto pen = penalized_loss_and_grad(spec, theta, {x, y}, state, cfg);
    CHECK(pen.loss == base.loss);
    CHECK(pen.gradient == base.gradient);

    cfg.lambda = 0.1;
    const auto at_anchor = penalized_loss_and_grad(spec, fisher.anchor, {x, y}, state, cfg);
    const auto plain = loss_and_gradient(spec, fisher.anchor, x, y);
    CHECK(at_anchor.gradient == plain.gradient);
}

TEST_CASE("quadratic penalty gradient matches finite differences") {
    for (std::uint64_t seed = 0; seed < 20; ++seed) {
        const auto spec = MlpSpec::tabular(2 + seed % 4, 2 + seed % 3);
        const auto x = c3::testing::random_matrix(12, spec.input_dim, seed);
        const auto y = c3::testing::random_labels(12, spec.output_classes, seed + 1);
        const auto fisher = empirical_fisher_diagonal(spec, init_parameters(spec, seed + 2), x, y);
        const auto state = absorb_batch({}, fisher, fisher.anchor, {});
        const auto theta = init_parameters(spec, seed + 3);
        PenaltyConfig cfg;
        const auto analytic = quadratic_penalty_gradient(state, theta, cfg.lambda);
        const auto numeric =
            fd_gradient([&](const ParameterVector& p) { return penalty_value(state, p, cfg); }, theta, 1e-3);
        CHECK(max_relative_error(analytic.values, numeric, 1e-12) < 1e-6);
    }
}

TEST_CASE("gradient_scale multiplies only the penalty gradient") {
    const auto spec = scalar_spec();
    const auto s = absorbed(spec, {1.0, 2.0}, {0.0, 0.0});
    const ParameterVector theta(make_layout(spec), {1.0, 1.0});
    const auto g1 = quadratic_penalty_gradient(s, theta, 0.1, 1.0);
    const auto g2 = quadratic_penalty_gradient(s, theta, 0.1, 0.5);
    CHECK(g1.values == std::vector<double>{0.1, 0.2});
    CHECK(g2.values[1] == doctest::Approx(0.1));
}

TEST_CASE("trace mode is nonnegative and its gradient tracks finite differences") {
    const auto spec = MlpSpec::tabular(2, 2);
    const auto x = c3::testing::random_matrix(20, 2, 5);
    const auto y = c3::testing::random_labels(20, 2, 6);
    const auto theta = init_parameters(spec, 7);
    const auto fisher = empirical_fisher_diagonal(spec, theta, x, y);
    const auto state = absorb_batch({}, fisher, fisher.anchor, {});
    PenaltyConfig cfg;
    cfg.mode = PenaltyMode::trace;
    CHECK(trace_penalty(spec, theta, {x, y}, cfg.lambda) >= 0.0);
    CHECK(penalty_value(state, theta, cfg, spec, {x, y}) == doctest::Approx(trace_penalty(spec, theta, {x, y}, 0.1)));
    const auto total = penalized_loss_and_grad(spec, theta, {x, y}, state, cfg);
    const auto numeric = fd_gradient(
        [&](const ParameterVector& p) {
            return cross_entropy_loss(forward(spec, p, x), y).loss + trace_penalty(spec, p, {x, y}, 0.1);
        },
        theta, 1e-5);
    CHECK(max_relative_error(total.gradient.values, numeric, 1e-6) < 1e-3);
}

TEST_CASE("penalty state JSON round trip") {
    const auto spec = MlpSpec::tabular(2, 3);
    const auto x = c3::testing::random_matrix(8, 2, 1);
    const auto y = c3::testing::random_labels(8, 3, 2);
    const auto fisher = empirical_fisher_diagonal(spec, init_parameters(spec, 3), x, y);
    const auto state = absorb_batch({}, fisher, fisher.anchor, {});
    const auto j = to_json(state);
    const auto back = penalty_state_from_json(j);
    CHECK(back.batches_consumed == 1);
    CHECK(back.accumulated->diagonal == state.accumulated->diagonal);
    CHECK(back.accumulated->anchor == state.accumulated->anchor);
    CHECK(to_json(back).dump() == j.dump());
    CHECK(penalty_state_from_json(to_json(PenaltyState{})).empty());
}
