#include "c3/kernels.hpp"

#ifdef C3_HAVE_OPENMP
#include <omp.h>
#endif

namespace c3::kernels {

int max_threads() noexcept {
#ifdef C3_HAVE_OPENMP
    return omp_get_max_threads();
#else
    return 1;
#endif
}

namespace parallel {

namespace {
using idx = long long;  // OpenMP loop counter
}

void affine_forward(ConstMatrixRef x, ConstMatrixRef w, std::span<const double> bias, MatrixRef out) {
    const std::size_t n = x.rows, in = x.cols, od = w.rows;
    const double* xd = x.data.data();
    const double* wd = w.data.data();
    double* od_ = out.data.data();
    const bool has_bias = !bias.empty();
    const double* bd = bias.data();
#pragma omp parallel for schedule(static) if (n * in * od >= kMinParallelWork)
    for (idx s = 0; s < static_cast<idx>(n); ++s) {
        const double* xs = xd + s * in;
        for (std::size_t o = 0; o < od; ++o) {
            const double* wo = wd + o * in;
            double acc = 0.0;
            for (std::size_t i = 0; i < in; ++i) acc += xs[i] * wo[i];
            od_[s * od + o] = has_bias ? acc + bd[o] : acc;
        }
    }
}

void weight_grad(ConstMatrixRef dz, ConstMatrixRef a, MatrixRef dw) {
    const std::size_t n = dz.rows, od = dz.cols, in = a.cols;
    const double* zd = dz.data.data();
    const double* ad = a.data.data();
    double* wd = dw.data.data();
#pragma omp parallel for schedule(static) if (n * in * od >= kMinParallelWork)
    for (idx o = 0; o < static_cast<idx>(od); ++o) {
        double* row = wd + o * in;
        for (std::size_t i = 0; i < in; ++i) row[i] = 0.0;
        for (std::size_t s = 0; s < n; ++s) {
            const double z = zd[s * od + o];
            const double* as = ad + s * in;
            for (std::size_t i = 0; i < in; ++i) row[i] += z * as[i];
        }
    }
}

void input_grad(ConstMatrixRef dz, ConstMatrixRef w, MatrixRef dx) {
    const std::size_t n = dz.rows, od = dz.cols, in = w.cols;
    const double* zd = dz.data.data();
    const double* wd = w.data.data();
    double* xd = dx.data.data();
#pragma omp parallel for schedule(static) if (n * in * od >= kMinParallelWork)
    for (idx s = 0; s < static_cast<idx>(n); ++s) {
        for (std::size_t i = 0; i < in; ++i) {
            double acc = 0.0;
            for (std::size_t o = 0; o < od; ++o) acc += zd[s * od + o] * wd[o * in + i];
            xd[s * in + i] = acc;
        }
    }
}

void column_sums(ConstMatrixRef m, std::span<double> out) {
    const double* md = m.data.data();
    const std::size_t rows = m.rows, cols = m.cols;
#pragma omp parallel for schedule(static) if (rows * cols >= kMinParallelWork)
    for (idx c = 0; c < static_cast<idx>(cols); ++c) {
        double acc = 0.0;
        for (std::size_t s = 0; s < rows; ++s) acc += md[s * cols + c];
        out[c] = acc;
    }
}

void square(std::span<const double> in, std::span<double> out) {
    const std::size_t n = in.size();
#pragma omp parallel for schedule(static) if (n >= kMinParallelWork)
    for (idx k = 0; k < static_cast<idx>(n); ++k) out[k] = in[k] * in[k];
}

}  // namespace parallel
}  // namespace c3::kernels
