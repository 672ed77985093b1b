#include <limits>
#include <random>
#include <vector>

#include "c3/kernels.hpp"
#include "c3/tensor.hpp"
#include "doctest.h"

#ifdef C3_HAVE_OPENMP
#include <omp.h>
#endif

using namespace c3;
using namespace c3::kernels;

namespace {

std::vector<double> random_values(std::size_t n, std::uint64_t seed) {
    std::mt19937_64 gen(seed);
    std::normal_distribution<double> dist;
    std::vector<double> v(n);
    for (auto& x : v) x = dist(gen);
    return v;
}

struct Shape {
    std::size_t n, in, out;
};

// Small shapes stay serial; the large ones cross kMinParallelWork.
const Shape kShapes[] = {{1, 1, 1}, {3, 5, 2}, {17, 9, 4}, {512, 64, 32}, {1000, 784, 10}};

}  // namespace

TEST_CASE("affine_forward matches a hand-computed product") {
    const std::vector<double> x = {1, 2, 3, 4};           // 2 x 2
    const std::vector<double> w = {1, 0, -1, 1, 2, 0.5};  // 3 x 2
    const std::vector<double> b = {0.5, 0, -1};
    std::vector<double> out(6);
    serial::affine_forward({x, 2, 2}, {w, 3, 2}, b, {out, 2, 3});
    CHECK(out == std::vector<double>{1.5, 1, 2, 3.5, 1, 7});
    std::vector<double> nobias(6);
    serial::affine_forward({x, 2, 2}, {w, 3, 2}, {}, {nobias, 2, 3});
    CHECK(nobias == std::vector<double>{1, 1, 3, 3, 1, 8});
}

TEST_CASE("weight_grad, input_grad and column_sums on a 2x2 example") {
    const std::vector<double> dz = {1, 2, 3, 4};
    const std::vector<double> a = {5, 6, 7, 8};
    std::vector<double> dw(4), dx(4), cs(2), sq(4);
    serial::weight_grad({dz, 2, 2}, {a, 2, 2}, {dw, 2, 2});
    CHECK(dw == std::vector<double>{26, 30, 38, 44});
    serial::input_grad({dz, 2, 2}, {a, 2, 2}, {dx, 2, 2});
    CHECK(dx == std::vector<double>{19, 22, 43, 50});
    serial::column_sums({dz, 2, 2}, cs);
    CHECK(cs == std::vector<double>{4, 6});
    serial::square(dz, sq);
    CHECK(sq == std::vector<double>{1, 4, 9, 16});
}

TEST_CASE("parallel kernels are bitwise identical to the serial reference") {
#ifdef C3_HAVE_OPENMP
    const int saved = omp_get_max_threads();
    omp_set_num_threads(4);
#endif
    std::uint64_t seed = 1;
    for (const auto& s : kShapes) {
        CAPTURE(s.n);
        CAPTURE(s.in);
        const auto x = random_values(s.n * s.in, seed++);
        const auto w = random_values(s.out * s.in, seed++);
        const auto b = random_values(s.out, seed++);
        const auto dz = random_values(s.n * s.out, seed++);

        std::vector<double> o1(s.n * s.out), o2(s.n * s.out);
        serial::affine_forward({x, s.n, s.in}, {w, s.out, s.in}, b, {o1, s.n, s.out});
        parallel::affine_forward({x, s.n, s.in}, {w, s.out, s.in}, b, {o2, s.n, s.out});
        CHECK(o1 == o2);

        std::vector<double> g1(s.out * s.in), g2(s.out * s.in);
        serial::weight_grad({dz, s.n, s.out}, {x, s.n, s.in}, {g1, s.out, s.in});
        parallel::weight_grad({dz, s.n, s.out}, {x, s.n, s.in}, {g2, s.out, s.in});
        CHECK(g1 == g2);

        std::vector<double> d1(s.n * s.in), d2(s.n * s.in);
        serial::input_grad({dz, s.n, s.out}, {w, s.out, s.in}, {d1, s.n, s.in});
        parallel::input_grad({dz, s.n, s.out}, {w, s.out, s.in}, {d2, s.n, s.in});
        CHECK(d1 == d2);

        std::vector<double> c1(s.in), c2(s.in);
        serial::column_sums({x, s.n, s.in}, c1);
        parallel::column_sums({x, s.n, s.in}, c2);
        CHECK(c1 == c2);

        std::vector<double> q1(x.size()), q2(x.size());
        serial::square(x, q1);
        parallel::square(x, q2);
        CHECK(q1 == q2);
    }
#ifdef C3_HAVE_OPENMP
    omp_set_num_threads(saved);
#endif
}

TEST_CASE("max_threads is positive") { CHECK(max_threads() >= 1); }

TEST_CASE("Tensor2D construction, access and gather") {
    Tensor2D t(2, 3, {1, 2, 3, 4, 5, 6});
    CHECK(t.rows() == 2);
    CHECK(t(1, 2) == 6);
    CHECK(t.row(1)[0] == 4);
    const std::vector<std::size_t> idx = {1, 1, 0};
    const auto g = t.gather_rows(idx);
    CHECK(g.rows() == 3);
    CHECK(g(0, 0) == 4);
    CHECK(g(2, 2) == 3);
    CHECK_THROWS_AS(Tensor2D(2, 2, std::vector<double>{1, 2, 3}), DimensionError);
    const std::vector<std::size_t> bad = {2};
    CHECK_THROWS_AS((void)t.gather_rows(bad), DimensionError);
}

TEST_CASE("non-finite values are reported") {
    Tensor2D t(1, 2, {1.0, std::numeric_limits<double>::quiet_NaN()});
    CHECK_FALSE(t.all_finite());
    CHECK_THROWS_AS(require_finite(t.values(), "t"), NumericError);
    const std::vector<double> ok = {0.0, -1.0};
    CHECK_NOTHROW(require_finite(ok, "ok"));
}
