#include "c3/information.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <stdexcept>
#include <string>

#include "c3/rng.hpp"

namespace c3 {

void GaussianMoments::validate() const {
    if (mean.size() != variance.size()) throw DimensionError("GaussianMoments: mean/variance length mismatch");
    for (double v : variance) {
        if (!(v > 0.0) || !std::isfinite(v)) throw std::domain_error("GaussianMoments: variance must be > 0");
    }
    require_finite(mean, "GaussianMoments mean");
}

double gaussian_kl(double mean_p, double var_p, double mean_q, double var_q) {
    if (!(var_p > 0.0) || !(var_q > 0.0)) throw std::domain_error("gaussian_kl: variance must be > 0");
    const double d = mean_p - mean_q;
    return 0.5 * (std::log(var_q / var_p) + (var_p + d * d) / var_q - 1.0);
}

double gaussian_kl(const GaussianMoments& p, const GaussianMoments& q) {
    p.validate();
    q.validate();
    if (p.dim() != q.dim()) throw DimensionError("gaussian_kl: dimension mismatch");
    double total = 0.0;
    for (std::size_t k = 0; k < p.dim(); ++k) {
        total += gaussian_kl(p.mean[k], p.variance[k], q.mean[k], q.variance[k]);
    }
    return total;
}

namespace {

double simpson(const std::function<double(double)>& f, double lo, double hi, std::size_t intervals) {
    const double h = (hi - lo) / static_cast<double>(intervals);
    double odd = 0.0, even = 0.0;
    for (std::size_t k = 1; k < intervals; ++k) {
        const double v = f(lo + h * static_cast<double>(k));
        (k % 2 ? odd : even) += v;
    }
    return h / 3.0 * (f(lo) + f(hi) + 4.0 * odd + 2.0 * even);
}

double integrate_to_tolerance(const std::function<double(double)>& f, double lo, double hi,
                              const QuadratureOptions& options) {
    if (!(hi > lo)) throw std::invalid_argument("kl_quadrature: empty support");
    std::size_t n = options.initial_intervals + options.initial_intervals % 2;
    double prev = simpson(f, lo, hi, n);
    while (n < options.max_intervals) {
        n *= 2;
        const double next = simpson(f, lo, hi, n);
        if (std::abs(next - prev) <= options.tolerance) return next;
        prev = next;
    }
    throw std::runtime_error("kl_quadrature: integral did not converge");
}

}  // namespace

double kl_quadrature(const Density& p, const Density& q, double lo, double hi, const QuadratureOptions& options) {
    const auto integrand = [&](double x) {
        const double px = p(x);
        if (px == 0.0) return 0.0;
        const double qx = q(x);
        if (!(px > 0.0) || !(qx > 0.0)) {
            throw std::domain_error("kl_quadrature: densities must be positive on the support");
        }
        return px * std::log(px / qx);
    };
    return integrate_to_tolerance(integrand, lo, hi, options);
}

double kl_quadrature_log(const Density& log_p, const Density& log_q, double lo, double hi,
                         const QuadratureOptions& options) {
    const auto integrand = [&](double x) {
        const double lp = log_p(x);
        const double px = std::exp(lp);
        if (px == 0.0) return 0.0;
        return px * (lp - log_q(x));
    };
    return integrate_to_tolerance(integrand, lo, hi, options);
}

double gaussian_kl_quadrature(double mean_p, double var_p, double mean_q, double var_q) {
    if (!(var_p > 0.0) || !(var_q > 0.0)) throw std::domain_error("gaussian_kl_quadrature: variance must be > 0");
    const double half_width = 12.0 * std::sqrt(var_p);
    // Log densities keep the integrand finite where q underflows in p's tails.
    const auto log_normal = [](double x, double mean, double var) {
        const double d = x - mean;
        return -0.5 * d * d / var - 0.5 * std::log(2.0 * std::numbers::pi * var);
    };
    return kl_quadrature_log([&](double x) { return log_normal(x, mean_p, var_p); },
                             [&](double x) { return log_normal(x, mean_q, var_q); }, mean_p - half_width,
                             mean_p + half_width);
}

double kl_discrete(std::span<const double> p, std::span<const double> q) {
    if (p.size() != q.size()) throw DimensionError("kl_discrete: size mismatch");
    double total = 0.0;
    for (std::size_t k = 0; k < p.size(); ++k) {
        if (p[k] < 0.0 || q[k] < 0.0) throw std::domain_error("kl_discrete: negative probability");
        if (p[k] == 0.0) continue;
        if (q[k] == 0.0) throw std::domain_error("kl_discrete: q has zero mass where p does not");
        total += p[k] * std::log(p[k] / q[k]);
    }
    return total;
}

double bernoulli_kl(double p, double q) {
    const double pp[2] = {p, 1.0 - p};
    const double qq[2] = {q, 1.0 - q};
    return kl_discrete(pp, qq);
}

void validate(const Family& family) {
    std::visit(
        [](const auto& f) {
            using T = std::decay_t<decltype(f)>;
            if constexpr (std::is_same_v<T, Bernoulli>) {
                if (!(f.p > 0.0 && f.p < 1.0)) throw std::domain_error("bernoulli: p must lie in (0, 1)");
            } else {
                if (!(f.variance > 0.0) || !std::isfinite(f.variance)) {
                    throw std::domain_error("gaussian_mean: variance must be > 0");
                }
            }
        },
        family);
}

double true_parameter(const Family& family) {
    if (const auto* b = std::get_if<Bernoulli>(&family)) return b->p;
    return std::get<GaussianMean>(family).mean;
}

double analytic_fisher(const Family& family) {
    validate(family);
    if (const auto* b = std::get_if<Bernoulli>(&family)) return 1.0 / (b->p * (1.0 - b->p));
    return 1.0 / std::get<GaussianMean>(family).variance;
}

double log_likelihood(const Family& family, double parameter, double x) {
    if (std::holds_alternative<Bernoulli>(family)) {
        return x * std::log(parameter) + (1.0 - x) * std::log(1.0 - parameter);
    }
    const double var = std::get<GaussianMean>(family).variance;
    const double d = x - parameter;
    return -0.5 * d * d / var - 0.5 * std::log(2.0 * std::numbers::pi * var);
}

double score(const Family& family, double parameter, double x) {
    if (std::holds_alternative<Bernoulli>(family)) return x / parameter - (1.0 - x) / (1.0 - parameter);
    return (x - parameter) / std::get<GaussianMean>(family).variance;
}

double draw(const Family& family, std::mt19937_64& gen) {
    if (const auto* b = std::get_if<Bernoulli>(&family)) {
        return std::bernoulli_distribution(b->p)(gen) ? 1.0 : 0.0;
    }
    const auto& g = std::get<GaussianMean>(family);
    return std::normal_distribution<double>(g.mean, std::sqrt(g.variance))(gen);
}

std::vector<double> draw_samples(const Family& family, std::size_t n, std::uint64_t seed) {
    validate(family);
    std::mt19937_64 gen(seed);
    std::vector<double> out(n);
    for (double& v : out) v = draw(family, gen);
    return out;
}

double empirical_fisher(const Family& family, std::span<const double> samples, double parameter) {
    if (samples.empty()) throw std::invalid_argument("empirical_fisher: empty sample");
    double total = 0.0;
    for (double x : samples) {
        const double s = score(family, parameter, x);
        total += s * s;
    }
    return total / static_cast<double>(samples.size());
}

double negative_hessian_fd(const Family& family, std::span<const double> samples, double parameter, double step) {
    if (samples.empty()) throw std::invalid_argument("negative_hessian_fd: empty sample");
    const auto mean_ll = [&](std::span<const double> th) {
        double total = 0.0;
        for (double x : samples) total += log_likelihood(family, th[0], x);
        return total / static_cast<double>(samples.size());
    };
    const double theta[1] = {parameter};
    return negative_hessian_diagonal_fd(mean_ll, theta, step).front();
}

std::vector<double> negative_hessian_diagonal_fd(const std::function<double(std::span<const double>)>& f,
                                                 std::span<const double> theta, double step) {
    std::vector<double> work(theta.begin(), theta.end());
    const double f0 = f(work);
    std::vector<double> out(theta.size());
    for (std::size_t i = 0; i < theta.size(); ++i) {
        work[i] = theta[i] + step;
        const double fp = f(work);
        work[i] = theta[i] - step;
        const double fm = f(work);
        work[i] = theta[i];
        out[i] = -(fp - 2.0 * f0 + fm) / (step * step);
        if (!std::isfinite(out[i])) throw NumericError("hessian diagonal: non-finite result");
    }
    return out;
}

void FisherEstimate::validate() const {
    if (!diagonal.same_layout(anchor)) throw DimensionError("FisherEstimate: diagonal/anchor layout mismatch");
    for (double v : diagonal.values) {
        if (!(v >= 0.0) || !std::isfinite(v)) throw std::domain_error("FisherEstimate: diagonal must be >= 0");
    }
}

FisherEstimate empirical_fisher_diagonal(const MlpSpec& spec, const ParameterVector& theta, const Tensor2D& x,
                                         std::span<const std::size_t> labels) {
    if (x.rows() == 0) throw std::invalid_argument("empirical_fisher_diagonal: empty batch");
    FisherEstimate est{mean_squared_sample_gradients(spec, theta, x, labels), theta, x.rows()};
    return est;
}

std::vector<double> hessian_diagonal_fd_oracle(const MlpSpec& spec, const ParameterVector& theta,
                                               const Tensor2D& x, std::span<const std::size_t> labels,
                                               double step) {
    if (x.rows() == 0) throw std::invalid_argument("hessian_diagonal_fd_oracle: empty batch");
    ParameterVector probe = theta;
    const auto mean_ll = [&](std::span<const double> v) {
        std::copy(v.begin(), v.end(), probe.values.begin());
        return -cross_entropy_loss(forward(spec, probe, x), labels).loss;
    };
    return negative_hessian_diagonal_fd(mean_ll, theta.values, step);
}

CrlbCheck crlb_verify(const Family& family, std::size_t n, std::size_t replications, std::uint64_t seed,
                      double tolerance) {
    validate(family);
    if (n == 0) throw std::invalid_argument("crlb_verify: n must be >= 1");
    if (replications < 1000) throw std::invalid_argument("crlb_verify: replications must be >= 1000");
    if (!(tolerance >= 0.0 && tolerance < 1.0)) throw std::invalid_argument("crlb_verify: tolerance in [0, 1)");

    std::vector<double> estimates(replications);
#pragma omp parallel for schedule(static)
    for (long long r = 0; r < static_cast<long long>(replications); ++r) {
        std::mt19937_64 gen(mix64(seed + static_cast<std::uint64_t>(r)));
        double sum = 0.0;
        for (std::size_t k = 0; k < n; ++k) sum += draw(family, gen);
        estimates[static_cast<std::size_t>(r)] = sum / static_cast<double>(n);
    }

    double mean = 0.0;
    for (double e : estimates) mean += e;
    mean /= static_cast<double>(replications);
    double ss = 0.0;
    for (double e : estimates) ss += (e - mean) * (e - mean);

    CrlbCheck check;
    check.estimator_mean = mean;
    check.estimator_variance = ss / static_cast<double>(replications - 1);
    check.fisher_info = analytic_fisher(family);
    check.sample_count = n;
    check.replications = replications;
    check.bound = 1.0 / (static_cast<double>(n) * check.fisher_info);
    check.tolerance = tolerance;
    check.satisfied = check.estimator_variance >= check.bound * (1.0 - tolerance);
    return check;
}

double kl_second_order(double theta_hat, double theta, double fisher) {
    if (!(fisher >= 0.0)) throw std::domain_error("kl_second_order: fisher must be >= 0");
    const double d = theta_hat - theta;
    return 0.5 * d * d * fisher;
}

}  // namespace c3
