#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <vector>

#include "c3/tensor.hpp"

namespace c3 {

enum class Activation { relu, identity };

struct HiddenLayer {
    std::size_t width = 1;
    Activation activation = Activation::relu;
    friend bool operator==(const HiddenLayer&, const HiddenLayer&) = default;
};

/// Fully connected classifier: hidden layers then a linear output layer whose
/// logits feed a softmax cross-entropy.
struct MlpSpec {
    std::size_t input_dim = 1;
    std::vector<HiddenLayer> hidden;
    std::size_t output_classes = 2;
    bool use_bias = true;

    void validate() const;
    [[nodiscard]] std::size_t layer_count() const noexcept { return hidden.size() + 1; }
    [[nodiscard]] std::size_t fan_in(std::size_t layer) const;
    [[nodiscard]] std::size_t fan_out(std::size_t layer) const;
    [[nodiscard]] Activation activation(std::size_t layer) const;

    /// One hidden layer of 4 relu units.
    static MlpSpec tabular(std::size_t input_dim, std::size_t classes);

    friend bool operator==(const MlpSpec&, const MlpSpec&) = default;
};

/// One contiguous block of the flat parameter vector.
struct Slice {
    std::size_t layer = 0;
    bool is_bias = false;
    std::size_t rows = 0;  // output width
    std::size_t cols = 0;  // input width (1 for biases)
    std::size_t offset = 0;

    [[nodiscard]] std::size_t size() const noexcept { return rows * cols; }
    friend bool operator==(const Slice&, const Slice&) = default;
};

using Layout = std::vector<Slice>;

/// Per layer: weights (out x in, row-major) followed by the bias when enabled.
[[nodiscard]] Layout make_layout(const MlpSpec& spec);
[[nodiscard]] std::size_t layout_size(const Layout& layout) noexcept;

struct ParameterVector {
    std::vector<double> values;
    Layout layout;

    ParameterVector() = default;
    explicit ParameterVector(Layout l);
    ParameterVector(Layout l, std::vector<double> v);

    [[nodiscard]] std::size_t size() const noexcept { return values.size(); }
    [[nodiscard]] bool same_layout(const ParameterVector& other) const noexcept { return layout == other.layout; }
    [[nodiscard]] std::span<const double> slice(std::size_t index) const;
    [[nodiscard]] std::span<double> slice(std::size_t index);
    /// Index into `layout` of the weight (or bias) block of `layer`, or npos.
    [[nodiscard]] std::size_t find(std::size_t layer, bool bias) const noexcept;

    static constexpr std::size_t npos = static_cast<std::size_t>(-1);

    friend bool operator==(const ParameterVector&, const ParameterVector&) = default;
};

[[nodiscard]] ParameterVector zero_parameters(const MlpSpec& spec);

/// Glorot-uniform weights from a seeded generator, zero biases.
[[nodiscard]] ParameterVector init_parameters(const MlpSpec& spec, std::uint64_t seed);

[[nodiscard]] Tensor2D forward(const MlpSpec& spec, const ParameterVector& theta, const Tensor2D& x);

[[nodiscard]] Tensor2D softmax(const Tensor2D& logits);

struct LossResult {
    double loss = 0.0;
    Tensor2D prob;
};

/// Mean over rows of -log softmax(logits)[label].
[[nodiscard]] LossResult cross_entropy_loss(const Tensor2D& logits, std::span<const std::size_t> labels);

struct LossAndGradient {
    double loss = 0.0;
    ParameterVector gradient;
};

[[nodiscard]] LossAndGradient loss_and_gradient(const MlpSpec& spec, const ParameterVector& theta,
                                                const Tensor2D& x, std::span<const std::size_t> labels);

/// Gradient of the mean cross-entropy.
[[nodiscard]] ParameterVector backward(const MlpSpec& spec, const ParameterVector& theta, const Tensor2D& x,
                                       std::span<const std::size_t> labels);

/// Mean over samples of the squared per-sample gradient of log p(label | x).
/// Samples are processed in fixed-size chunks and reduced in chunk order, so the
/// result does not depend on the thread count.
[[nodiscard]] ParameterVector mean_squared_sample_gradients(const MlpSpec& spec, const ParameterVector& theta,
                                                            const Tensor2D& x,
                                                            std::span<const std::size_t> labels);

/// argmax per row; ties go to the lowest class index.
[[nodiscard]] std::vector<std::size_t> predict(const MlpSpec& spec, const ParameterVector& theta,
                                               const Tensor2D& x);

}  // namespace c3
