#include "c3/tensor.hpp"

#include <algorithm>
#include <cmath>

namespace c3 {

Tensor2D::Tensor2D(std::size_t rows, std::size_t cols, double fill)
    : rows_(rows), cols_(cols), data_(rows * cols, fill) {}

Tensor2D::Tensor2D(std::size_t rows, std::size_t cols, std::vector<double> data)
    : rows_(rows), cols_(cols), data_(std::move(data)) {
    if (data_.size() != rows_ * cols_) {
        throw DimensionError("Tensor2D: data length " + std::to_string(data_.size()) + " != " +
                             std::to_string(rows_) + "x" + std::to_string(cols_));
    }
}

bool Tensor2D::all_finite() const noexcept {
    return std::all_of(data_.begin(), data_.end(), [](double v) { return std::isfinite(v); });
}

Tensor2D Tensor2D::gather_rows(std::span<const std::size_t> indices) const {
    Tensor2D out(indices.size(), cols_);
    for (std::size_t r = 0; r < indices.size(); ++r) {
        if (indices[r] >= rows_) {
            throw DimensionError("gather_rows: index " + std::to_string(indices[r]) + " out of range");
        }
        std::copy_n(data_.begin() + static_cast<std::ptrdiff_t>(indices[r] * cols_), cols_,
                    out.data_.begin() + static_cast<std::ptrdiff_t>(r * cols_));
    }
    return out;
}

void require_finite(std::span<const double> values, const std::string& what) {
    for (double v : values) {
        if (!std::isfinite(v)) throw NumericError(what + ": non-finite value");
    }
}

}  // namespace c3
