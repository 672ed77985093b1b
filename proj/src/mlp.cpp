#include "c3/mlp.hpp"

#include <algorithm>
#include <cmath>
#include <random>
#include <string>

#include "c3/kernels.hpp"

namespace c3 {

void MlpSpec::validate() const {
    if (input_dim == 0) throw std::invalid_argument("MlpSpec: input_dim must be >= 1");
    if (output_classes < 2) throw std::invalid_argument("MlpSpec: output_classes must be >= 2");
    for (const auto& h : hidden) {
        if (h.width == 0) throw std::invalid_argument("MlpSpec: hidden width must be >= 1");
    }
}

std::size_t MlpSpec::fan_in(std::size_t layer) const {
    return layer == 0 ? input_dim : hidden.at(layer - 1).width;
}

std::size_t MlpSpec::fan_out(std::size_t layer) const {
    return layer == hidden.size() ? output_classes : hidden.at(layer).width;
}

Activation MlpSpec::activation(std::size_t layer) const {
    return layer == hidden.size() ? Activation::identity : hidden.at(layer).activation;
}

MlpSpec MlpSpec::tabular(std::size_t input_dim, std::size_t classes) {
    return MlpSpec{input_dim, {HiddenLayer{4, Activation::relu}}, classes, true};
}

Layout make_layout(const MlpSpec& spec) {
    spec.validate();
    Layout layout;
    std::size_t offset = 0;
    for (std::size_t l = 0; l < spec.layer_count(); ++l) {
        const std::size_t out = spec.fan_out(l), in = spec.fan_in(l);
        layout.push_back(Slice{l, false, out, in, offset});
        offset += out * in;
        if (spec.use_bias) {
            layout.push_back(Slice{l, true, out, 1, offset});
            offset += out;
        }
    }
    return layout;
}

std::size_t layout_size(const Layout& layout) noexcept {
    std::size_t n = 0;
    for (const auto& s : layout) n += s.size();
    return n;
}

ParameterVector::ParameterVector(Layout l) : values(layout_size(l), 0.0), layout(std::move(l)) {}

ParameterVector::ParameterVector(Layout l, std::vector<double> v) : values(std::move(v)), layout(std::move(l)) {
    if (values.size() != layout_size(layout)) {
        throw DimensionError("ParameterVector: " + std::to_string(values.size()) +
                             " values for a layout of " + std::to_string(layout_size(layout)));
    }
}

std::span<const double> ParameterVector::slice(std::size_t index) const {
    const auto& s = layout.at(index);
    return {values.data() + s.offset, s.size()};
}

std::span<double> ParameterVector::slice(std::size_t index) {
    const auto& s = layout.at(index);
    return {values.data() + s.offset, s.size()};
}

std::size_t ParameterVector::find(std::size_t layer, bool bias) const noexcept {
    for (std::size_t k = 0; k < layout.size(); ++k) {
        if (layout[k].layer == layer && layout[k].is_bias == bias) return k;
    }
    return npos;
}

ParameterVector zero_parameters(const MlpSpec& spec) { return ParameterVector(make_layout(spec)); }

ParameterVector init_parameters(const MlpSpec& spec, std::uint64_t seed) {
    ParameterVector theta = zero_parameters(spec);
    std::mt19937_64 gen(seed);
    for (std::size_t k = 0; k < theta.layout.size(); ++k) {
        const Slice& s = theta.layout[k];
        if (s.is_bias) continue;
        const double limit = std::sqrt(6.0 / static_cast<double>(s.rows + s.cols));
        std::uniform_real_distribution<double> dist(-limit, limit);
        for (double& w : theta.slice(k)) w = dist(gen);
    }
    return theta;
}

namespace {

using kernels::ConstMatrixRef;
using kernels::MatrixRef;

ConstMatrixRef cref(const Tensor2D& t) { return {t.values(), t.rows(), t.cols()}; }
MatrixRef mref(Tensor2D& t) { return {t.values(), t.rows(), t.cols()}; }

void check_theta(const MlpSpec& spec, const ParameterVector& theta) {
    if (theta.layout != make_layout(spec)) throw DimensionError("parameter layout does not match MlpSpec");
}

void check_labels(std::span<const std::size_t> labels, std::size_t rows, std::size_t classes) {
    if (labels.size() != rows) {
        throw DimensionError("labels: " + std::to_string(labels.size()) + " labels for " +
                             std::to_string(rows) + " rows");
    }
    for (auto y : labels) {
        if (y >= classes) {
            throw std::out_of_range("label " + std::to_string(y) + " out of range [0, " +
                                    std::to_string(classes) + ")");
        }
    }
}

/// Pre-activations z[l] and activations a[l] (a[0] is the input).
struct ForwardCache {
    std::vector<Tensor2D> z;
    std::vector<Tensor2D> a;
};

ForwardCache forward_cached(const MlpSpec& spec, const ParameterVector& theta, const Tensor2D& x) {
    check_theta(spec, theta);
    if (x.cols() != spec.input_dim) {
        throw DimensionError("forward: input has " + std::to_string(x.cols()) + " columns, expected " +
                             std::to_string(spec.input_dim));
    }
    ForwardCache cache;
    cache.a.push_back(x);
    for (std::size_t l = 0; l < spec.layer_count(); ++l) {
        const std::size_t wi = theta.find(l, false);
        const Slice& ws = theta.layout[wi];
        std::span<const double> bias;
        if (spec.use_bias) bias = theta.slice(theta.find(l, true));
        Tensor2D z(x.rows(), ws.rows);
        kernels::affine_forward(cref(cache.a.back()), {theta.slice(wi), ws.rows, ws.cols}, bias, mref(z));
        if (!z.all_finite()) throw NumericError("forward: non-finite intermediate at layer " + std::to_string(l));
        Tensor2D act = z;
        if (spec.activation(l) == Activation::relu) {
            for (double& v : act.values()) v = v > 0.0 ? v : 0.0;
        }
        cache.z.push_back(std::move(z));
        cache.a.push_back(std::move(act));
    }
    return cache;
}

/// Softmax probabilities and mean cross-entropy of `logits`.
LossResult softmax_ce(const Tensor2D& logits, std::span<const std::size_t> labels) {
    Tensor2D prob(logits.rows(), logits.cols());
    double total = 0.0;
    for (std::size_t r = 0; r < logits.rows(); ++r) {
        auto row = logits.row(r);
        const double m = *std::max_element(row.begin(), row.end());
        double sum = 0.0;
        for (std::size_t c = 0; c < row.size(); ++c) {
            const double e = std::exp(row[c] - m);
            prob(r, c) = e;
            sum += e;
        }
        for (std::size_t c = 0; c < row.size(); ++c) prob(r, c) /= sum;
        if (!labels.empty()) total += -(row[labels[r]] - m - std::log(sum));
    }
    const double loss = logits.rows() ? total / static_cast<double>(logits.rows()) : 0.0;
    return {loss, std::move(prob)};
}

/// Backpropagates output deltas `dz` (rows = samples) and calls
/// `emit(layer, dz_layer, a_prev)` for each layer from the top.
template <typename Emit>
void backprop(const MlpSpec& spec, const ParameterVector& theta, const ForwardCache& cache, Tensor2D dz,
              Emit&& emit) {
    for (std::size_t l = spec.layer_count(); l-- > 0;) {
        emit(l, dz, cache.a[l]);
        if (l == 0) break;
        const std::size_t wi = theta.find(l, false);
        const Slice& ws = theta.layout[wi];
        Tensor2D da(dz.rows(), ws.cols);
        kernels::input_grad(cref(dz), {theta.slice(wi), ws.rows, ws.cols}, mref(da));
        if (spec.activation(l - 1) == Activation::relu) {
            const auto zprev = cache.z[l - 1].values();
            auto dv = da.values();
            for (std::size_t k = 0; k < dv.size(); ++k) {
                if (!(zprev[k] > 0.0)) dv[k] = 0.0;
            }
        }
        dz = std::move(da);
    }
}

}  // namespace

Tensor2D forward(const MlpSpec& spec, const ParameterVector& theta, const Tensor2D& x) {
    auto cache = forward_cached(spec, theta, x);
    return std::move(cache.a.back());
}

Tensor2D softmax(const Tensor2D& logits) { return softmax_ce(logits, {}).prob; }

LossResult cross_entropy_loss(const Tensor2D& logits, std::span<const std::size_t> labels) {
    check_labels(labels, logits.rows(), logits.cols());
    if (logits.rows() == 0) throw DimensionError("cross_entropy_loss: empty batch");
    return softmax_ce(logits, labels);
}

LossAndGradient loss_and_gradient(const MlpSpec& spec, const ParameterVector& theta, const Tensor2D& x,
                                  std::span<const std::size_t> labels) {
    check_labels(labels, x.rows(), spec.output_classes);
    if (x.rows() == 0) throw DimensionError("loss_and_gradient: empty batch");
    const auto cache = forward_cached(spec, theta, x);
    auto [loss, prob] = softmax_ce(cache.a.back(), labels);

    const double inv_n = 1.0 / static_cast<double>(x.rows());
    Tensor2D dz = std::move(prob);
    for (std::size_t r = 0; r < dz.rows(); ++r) {
        dz(r, labels[r]) -= 1.0;
        for (double& v : dz.row(r)) v *= inv_n;
    }

    ParameterVector grad(theta.layout);
    backprop(spec, theta, cache, std::move(dz), [&](std::size_t l, const Tensor2D& d, const Tensor2D& a) {
        const std::size_t wi = grad.find(l, false);
        const Slice& ws = grad.layout[wi];
        kernels::weight_grad(cref(d), cref(a), {grad.slice(wi), ws.rows, ws.cols});
        if (spec.use_bias) kernels::column_sums(cref(d), grad.slice(grad.find(l, true)));
    });
    require_finite(grad.values, "backward");
    return {loss, std::move(grad)};
}

ParameterVector backward(const MlpSpec& spec, const ParameterVector& theta, const Tensor2D& x,
                         std::span<const std::size_t> labels) {
    return loss_and_gradient(spec, theta, x, labels).gradient;
}

ParameterVector mean_squared_sample_gradients(const MlpSpec& spec, const ParameterVector& theta,
                                              const Tensor2D& x, std::span<const std::size_t> labels) {
    check_labels(labels, x.rows(), spec.output_classes);
    if (x.rows() == 0) throw DimensionError("mean_squared_sample_gradients: empty batch");
    constexpr std::size_t kChunk = 512;

    ParameterVector total(theta.layout);
    ParameterVector part(theta.layout);
    std::vector<std::size_t> idx;
    for (std::size_t begin = 0; begin < x.rows(); begin += kChunk) {
        const std::size_t end = std::min(x.rows(), begin + kChunk);
        idx.resize(end - begin);
        for (std::size_t k = 0; k < idx.size(); ++k) idx[k] = begin + k;
        const Tensor2D xc = x.gather_rows(idx);
        const auto cache = forward_cached(spec, theta, xc);
        Tensor2D dz = softmax_ce(cache.a.back(), {}).prob;
        for (std::size_t r = 0; r < dz.rows(); ++r) dz(r, labels[begin + r]) -= 1.0;

        // Row s of dz is the per-sample output delta, so the per-sample gradient
        // of W is outer(dz_s, a_s); its square summed over s is (dz^2)^T (a^2).
        backprop(spec, theta, cache, std::move(dz), [&](std::size_t l, const Tensor2D& d, const Tensor2D& a) {
            Tensor2D d2(d.rows(), d.cols()), a2(a.rows(), a.cols());
            kernels::square(d.values(), d2.values());
            kernels::square(a.values(), a2.values());
            const std::size_t wi = part.find(l, false);
            const Slice& ws = part.layout[wi];
            kernels::weight_grad(cref(d2), cref(a2), {part.slice(wi), ws.rows, ws.cols});
            if (spec.use_bias) kernels::column_sums(cref(d2), part.slice(part.find(l, true)));
        });
        for (std::size_t k = 0; k < total.size(); ++k) total.values[k] += part.values[k];
    }
    const double inv_n = 1.0 / static_cast<double>(x.rows());
    for (double& v : total.values) v *= inv_n;
    require_finite(total.values, "mean_squared_sample_gradients");
    return total;
}

std::vector<std::size_t> predict(const MlpSpec& spec, const ParameterVector& theta, const Tensor2D& x) {
    const Tensor2D logits = forward(spec, theta, x);
    std::vector<std::size_t> out(logits.rows());
    for (std::size_t r = 0; r < logits.rows(); ++r) {
        auto row = logits.row(r);
        out[r] = static_cast<std::size_t>(std::max_element(row.begin(), row.end()) - row.begin());
    }
    return out;
}

}  // namespace c3
