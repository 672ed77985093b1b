#pragma once

// Information-theoretic quantities: Gaussian KL in closed form and by
// quadrature, Fisher information (analytic, empirical, finite-difference
// Hessian), Cramer-Rao bound checks and the second-order KL expansion.

#include <cstddef>
#include <cstdint>
#include <functional>
#include <random>
#include <span>
#include <variant>
#include <vector>

#include "c3/mlp.hpp"

namespace c3 {

/// Per-dimension Gaussian (mean, variance) pairs; variances strictly positive.
struct GaussianMoments {
    std::vector<double> mean;
    std::vector<double> variance;

    static GaussianMoments scalar(double mean, double variance) { return {{mean}, {variance}}; }
    [[nodiscard]] std::size_t dim() const noexcept { return mean.size(); }
    void validate() const;
};

/// KL(P || Q) summed over independent dimensions.
[[nodiscard]] double gaussian_kl(const GaussianMoments& p, const GaussianMoments& q);
[[nodiscard]] double gaussian_kl(double mean_p, double var_p, double mean_q, double var_q);

using Density = std::function<double(double)>;

struct QuadratureOptions {
    std::size_t initial_intervals = 2048;
    std::size_t max_intervals = 1u << 22;
    double tolerance = 1e-10;
};

/// Composite Simpson estimate of the integral of p log(p/q) over [lo, hi],
/// doubling the mesh until successive estimates agree within `tolerance`.
/// Throws std::runtime_error if that never happens.
[[nodiscard]] double kl_quadrature(const Density& p, const Density& q, double lo, double hi,
                                   const QuadratureOptions& options = {});

/// Same integral from log densities, for tails where the densities underflow.
[[nodiscard]] double kl_quadrature_log(const Density& log_p, const Density& log_q, double lo, double hi,
                                       const QuadratureOptions& options = {});

/// Quadrature KL between two scalar Gaussians over mean_p +/- 12 sd_p.
[[nodiscard]] double gaussian_kl_quadrature(double mean_p, double var_p, double mean_q, double var_q);

/// sum_k p_k log(p_k / q_k) for discrete distributions.
[[nodiscard]] double kl_discrete(std::span<const double> p, std::span<const double> q);
[[nodiscard]] double bernoulli_kl(double p, double q);

/// Toy one-parameter families. The parameter is p for Bernoulli and the mean
/// for GaussianMean (the variance is known).
struct Bernoulli {
    double p = 0.5;
};
struct GaussianMean {
    double variance = 1.0;
    double mean = 0.0;
};
using Family = std::variant<Bernoulli, GaussianMean>;

void validate(const Family& family);
[[nodiscard]] double true_parameter(const Family& family);
[[nodiscard]] double analytic_fisher(const Family& family);
[[nodiscard]] double log_likelihood(const Family& family, double parameter, double x);
[[nodiscard]] double score(const Family& family, double parameter, double x);
[[nodiscard]] double draw(const Family& family, std::mt19937_64& gen);
[[nodiscard]] std::vector<double> draw_samples(const Family& family, std::size_t n, std::uint64_t seed);

/// Mean squared score over `samples`, evaluated at `parameter`.
[[nodiscard]] double empirical_fisher(const Family& family, std::span<const double> samples, double parameter);

/// -d^2/dtheta^2 of the mean log-likelihood of `samples` by central differences.
[[nodiscard]] double negative_hessian_fd(const Family& family, std::span<const double> samples, double parameter,
                                         double step = 1e-4);

/// -d^2 f / dtheta_i^2 for every coordinate, by central second differences.
[[nodiscard]] std::vector<double> negative_hessian_diagonal_fd(
    const std::function<double(std::span<const double>)>& f, std::span<const double> theta, double step = 1e-4);

/// Diagonal of the Fisher information of p(y | x; theta) around `anchor`.
struct FisherEstimate {
    ParameterVector diagonal;
    ParameterVector anchor;
    std::size_t sample_count = 0;

    void validate() const;
};

/// Score-variance form: diagonal_i = mean_s (d log p(y_s | x_s) / d theta_i)^2,
/// using the observed labels.
[[nodiscard]] FisherEstimate empirical_fisher_diagonal(const MlpSpec& spec, const ParameterVector& theta,
                                                       const Tensor2D& x, std::span<const std::size_t> labels);

/// Negative Hessian diagonal of the mean log-likelihood of an MLP batch.
[[nodiscard]] std::vector<double> hessian_diagonal_fd_oracle(const MlpSpec& spec, const ParameterVector& theta,
                                                             const Tensor2D& x,
                                                             std::span<const std::size_t> labels,
                                                             double step = 1e-4);

struct CrlbCheck {
    double estimator_mean = 0.0;
    double estimator_variance = 0.0;
    double fisher_info = 0.0;
    std::size_t sample_count = 0;
    std::size_t replications = 0;
    double bound = 0.0;
    double tolerance = 0.0;
    bool satisfied = false;

    /// (variance - bound) / bound.
    [[nodiscard]] double relative_gap() const noexcept { return (estimator_variance - bound) / bound; }
};

/// Simulates `replications` datasets of size n, applies the unbiased estimator
/// (sample mean or sample proportion) and compares its variance with 1/(n I).
/// Replication r draws from its own stream, so the result is independent of
/// the thread count.
[[nodiscard]] CrlbCheck crlb_verify(const Family& family, std::size_t n, std::size_t replications,
                                    std::uint64_t seed, double tolerance = 0.05);

/// (theta_hat - theta)^2 I / 2.
[[nodiscard]] double kl_second_order(double theta_hat, double theta, double fisher);

}  // namespace c3
