#include "c3/kernels.hpp"

namespace c3::kernels::serial {

void affine_forward(ConstMatrixRef x, ConstMatrixRef w, std::span<const double> bias, MatrixRef out) {
    const std::size_t n = x.rows, in = x.cols, od = w.rows;
    for (std::size_t s = 0; s < n; ++s) {
        const double* xs = x.data.data() + s * in;
        for (std::size_t o = 0; o < od; ++o) {
            const double* wo = w.data.data() + o * in;
            double acc = 0.0;
            for (std::size_t i = 0; i < in; ++i) acc += xs[i] * wo[i];
            out.data[s * od + o] = bias.empty() ? acc : acc + bias[o];
        }
    }
}

void weight_grad(ConstMatrixRef dz, ConstMatrixRef a, MatrixRef dw) {
    const std::size_t n = dz.rows, od = dz.cols, in = a.cols;
    // Row-wise accumulation keeps the per-element order s = 0..n-1 with contiguous access.
    for (std::size_t o = 0; o < od; ++o) {
        double* row = dw.data.data() + o * in;
        for (std::size_t i = 0; i < in; ++i) row[i] = 0.0;
        for (std::size_t s = 0; s < n; ++s) {
            const double z = dz.data[s * od + o];
            const double* as = a.data.data() + s * in;
            for (std::size_t i = 0; i < in; ++i) row[i] += z * as[i];
        }
    }
}

void input_grad(ConstMatrixRef dz, ConstMatrixRef w, MatrixRef dx) {
    const std::size_t n = dz.rows, od = dz.cols, in = w.cols;
    for (std::size_t s = 0; s < n; ++s) {
        for (std::size_t i = 0; i < in; ++i) {
            double acc = 0.0;
            for (std::size_t o = 0; o < od; ++o) acc += dz.data[s * od + o] * w.data[o * in + i];
            dx.data[s * in + i] = acc;
        }
    }
}

void column_sums(ConstMatrixRef m, std::span<double> out) {
    for (std::size_t c = 0; c < m.cols; ++c) {
        double acc = 0.0;
        for (std::size_t s = 0; s < m.rows; ++s) acc += m.data[s * m.cols + c];
        out[c] = acc;
    }
}

void square(std::span<const double> in, std::span<double> out) {
    for (std::size_t k = 0; k < in.size(); ++k) out[k] = in[k] * in[k];
}

}  // namespace c3::kernels::serial
