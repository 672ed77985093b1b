#pragma once

// Dense kernels behind the MLP forward/backward passes and the Fisher
// accumulation. `serial` is the reference; `parallel` is the OpenMP build of
// the same loops. Every output element is produced by one thread with the
// same summation order, so both variants are bitwise identical.

#include <cstddef>
#include <span>

namespace c3::kernels {

struct ConstMatrixRef {
    std::span<const double> data;
    std::size_t rows = 0;
    std::size_t cols = 0;
};

struct MatrixRef {
    std::span<double> data;
    std::size_t rows = 0;
    std::size_t cols = 0;
};

#define C3_KERNEL_DECLS                                                                      \
    /* out(s,o) = sum_i x(s,i) * w(o,i) + bias(o); bias may be empty */                      \
    void affine_forward(ConstMatrixRef x, ConstMatrixRef w, std::span<const double> bias,    \
                        MatrixRef out);                                                      \
    /* dw(o,i) = sum_s dz(s,o) * a(s,i) */                                                   \
    void weight_grad(ConstMatrixRef dz, ConstMatrixRef a, MatrixRef dw);                     \
    /* dx(s,i) = sum_o dz(s,o) * w(o,i) */                                                   \
    void input_grad(ConstMatrixRef dz, ConstMatrixRef w, MatrixRef dx);                      \
    /* out(c) = sum_s m(s,c) */                                                              \
    void column_sums(ConstMatrixRef m, std::span<double> out);                               \
    /* out(k) = in(k)^2 */                                                                   \
    void square(std::span<const double> in, std::span<double> out);

namespace serial {
C3_KERNEL_DECLS
}

namespace parallel {
C3_KERNEL_DECLS
/// Work (multiply-adds) below which a parallel region is not opened.
inline constexpr std::size_t kMinParallelWork = 1u << 15;
}

#undef C3_KERNEL_DECLS

/// Threads usable by the parallel variants (1 without OpenMP).
int max_threads() noexcept;

// Library-internal dispatch; always the parallel build (it degrades to serial
// loops when compiled without OpenMP).
using parallel::affine_forward;
using parallel::column_sums;
using parallel::input_grad;
using parallel::square;
using parallel::weight_grad;

}  // namespace c3::kernels
