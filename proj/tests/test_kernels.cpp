#include <omp.h>

#include <random>
#include <vector>

#include "doctest.h"
#include "multipod/kernels.hpp"
#include "oracles.hpp"

using namespace multipod::kernels;

namespace {

template <typename T>
std::vector<T> random_t(std::size_t n, std::mt19937_64& rng) {
  std::uniform_real_distribution<double> d(-1.0, 1.0);
  std::vector<T> v(n);
  for (auto& x : v) x = static_cast<T>(d(rng));
  return v;
}

// Normwise: max |a - b| / max |a|. Elementwise relative error is not
// meaningful for sums with cancellation.
template <typename T>
double normwise(const std::vector<T>& a, const std::vector<T>& b) {
  double diff = 0.0, scale = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    diff = std::max(diff, std::abs(double(a[i]) - double(b[i])));
    scale = std::max(scale, std::abs(double(a[i])));
  }
  return diff / std::max(scale, 1e-30);
}

ConvGeometry random_geometry(std::mt19937_64& rng) {
  auto pick = [&](std::size_t lo, std::size_t hi) {
    return std::uniform_int_distribution<std::size_t>(lo, hi)(rng);
  };
  ConvGeometry g;
  g.batch = pick(1, 3);
  g.channels = pick(1, 5);
  g.filters = pick(1, 7);
  g.kernel_h = pick(1, 3);
  g.kernel_w = pick(1, 3);
  g.padding = pick(0, 2);
  g.stride = pick(1, 3);
  g.height = pick(g.kernel_h, 11);
  g.width = pick(g.kernel_w, 11);
  return g;
}

}  // namespace

TEST_CASE_TEMPLATE("parallel gemm matches serial gemm for every transpose", T, float, double) {
  std::mt19937_64 rng(3);
  const double tol = sizeof(T) == 8 ? 1e-12 : 1e-5;
  for (int trial = 0; trial < 40; ++trial) {
    const std::size_t m = 1 + rng() % 70, n = 1 + rng() % 300, k = 1 + rng() % 300;
    for (int ta = 0; ta < 2; ++ta)
      for (int tb = 0; tb < 2; ++tb) {
        auto a = random_t<T>(m * k, rng), b = random_t<T>(k * n, rng);
        auto c0 = random_t<T>(m * n, rng);
        auto c1 = c0;
        const T beta = trial % 2 ? T(1) : T(0);
        GemmArgs<T> args;
        args.trans_a = ta;
        args.trans_b = tb;
        args.m = m;
        args.n = n;
        args.k = k;
        args.a = a.data();
        args.lda = ta ? m : k;
        args.b = b.data();
        args.ldb = tb ? k : n;
        args.beta = beta;
        args.c = c0.data();
        args.ldc = n;
        serial::gemm(args);
        args.c = c1.data();
        parallel::gemm(args);
        CHECK(normwise(c0, c1) < tol);
      }
  }
}

TEST_CASE("serial conv kernels agree with the nested-loop oracle") {
  std::mt19937_64 rng(5);
  for (int trial = 0; trial < 30; ++trial) {
    const ConvGeometry g = random_geometry(rng);
    auto x = oracle::random_vector(g.input_size(), rng);
    auto w = oracle::random_vector(g.weight_size(), rng);
    std::vector<double> y(g.output_size());
    serial::conv2d_forward<double>(g, x, w, y);
    auto ref = oracle::conv2d(x, w, int(g.batch), int(g.channels), int(g.height), int(g.width),
                              int(g.filters), int(g.kernel_h), int(g.kernel_w), int(g.stride),
                              int(g.padding));
    CHECK(oracle::max_rel_err(y, ref) < 1e-12);
  }
}

TEST_CASE("parallel conv kernels match serial kernels") {
  std::mt19937_64 rng(7);
  for (int trial = 0; trial < 40; ++trial) {
    const ConvGeometry g = random_geometry(rng);
    auto x = oracle::random_vector(g.input_size(), rng);
    auto w = oracle::random_vector(g.weight_size(), rng);
    auto dy = oracle::random_vector(g.output_size(), rng);

    std::vector<double> y0(g.output_size()), y1(g.output_size(), 123.0);
    serial::conv2d_forward<double>(g, x, w, y0);
    parallel::conv2d_forward<double>(g, x, w, y1);
    CHECK(oracle::max_rel_err(y0, y1) < 1e-12);

    // Backward kernels accumulate: start from the same non-zero buffer.
    auto dx0 = oracle::random_vector(g.input_size(), rng);
    auto dx1 = dx0;
    serial::conv2d_backward_input<double>(g, w, dy, dx0);
    parallel::conv2d_backward_input<double>(g, w, dy, dx1);
    CHECK(oracle::max_rel_err(dx0, dx1) < 1e-12);

    auto dw0 = oracle::random_vector(g.weight_size(), rng);
    auto dw1 = dw0;
    serial::conv2d_backward_weight<double>(g, x, dy, dw0);
    parallel::conv2d_backward_weight<double>(g, x, dy, dw1);
    CHECK(oracle::max_rel_err(dw0, dw1) < 1e-12);
  }
}

TEST_CASE("conv backward kernels are adjoint to forward") {
  // <conv(x, w), dy> == <x, dX(dy)> == <w, dW(dy)>
  std::mt19937_64 rng(11);
  for (int trial = 0; trial < 20; ++trial) {
    const ConvGeometry g = random_geometry(rng);
    auto x = oracle::random_vector(g.input_size(), rng);
    auto w = oracle::random_vector(g.weight_size(), rng);
    auto dy = oracle::random_vector(g.output_size(), rng);
    std::vector<double> y(g.output_size()), dx(g.input_size(), 0.0), dw(g.weight_size(), 0.0);
    parallel::conv2d_forward<double>(g, x, w, y);
    parallel::conv2d_backward_input<double>(g, w, dy, dx);
    parallel::conv2d_backward_weight<double>(g, x, dy, dw);
    double lhs = 0, rx = 0, rw = 0;
    for (std::size_t i = 0; i < y.size(); ++i) lhs += y[i] * dy[i];
    for (std::size_t i = 0; i < x.size(); ++i) rx += x[i] * dx[i];
    for (std::size_t i = 0; i < w.size(); ++i) rw += w[i] * dw[i];
    CHECK(oracle::rel_err(lhs, rx) < 1e-12);
    CHECK(oracle::rel_err(lhs, rw) < 1e-12);
  }
}

TEST_CASE("col2im is the adjoint of im2col") {
  std::mt19937_64 rng(13);
  for (int trial = 0; trial < 20; ++trial) {
    const ConvGeometry g = random_geometry(rng);
    const std::size_t rows = g.channels * g.kernel_h * g.kernel_w;
    const std::size_t cols = g.batch * g.out_h() * g.out_w();
    auto x = oracle::random_vector(g.input_size(), rng);
    auto c = oracle::random_vector(rows * cols, rng);
    std::vector<double> col(rows * cols), back(g.input_size(), 0.0);
    parallel::im2col<double>(g, x, col);
    parallel::col2im<double>(g, c, back);
    double lhs = 0, rhs = 0;
    for (std::size_t i = 0; i < col.size(); ++i) lhs += col[i] * c[i];
    for (std::size_t i = 0; i < x.size(); ++i) rhs += x[i] * back[i];
    CHECK(oracle::rel_err(lhs, rhs) < 1e-12);
  }
}

TEST_CASE("parallel results do not depend on the thread count") {
  std::mt19937_64 rng(17);
  ConvGeometry g{4, 16, 16, 16, 32, 3, 3, 1, 1};
  auto x = random_t<float>(g.input_size(), rng);
  auto w = random_t<float>(g.weight_size(), rng);
  auto dy = random_t<float>(g.output_size(), rng);
  auto run = [&](int threads) {
    omp_set_num_threads(threads);
    std::vector<float> y(g.output_size()), dx(g.input_size(), 0.f), dw(g.weight_size(), 0.f);
    parallel::conv2d_forward<float>(g, x, w, y);
    parallel::conv2d_backward_input<float>(g, w, dy, dx);
    parallel::conv2d_backward_weight<float>(g, x, dy, dw);
    y.insert(y.end(), dx.begin(), dx.end());
    y.insert(y.end(), dw.begin(), dw.end());
    return y;
  };
  const int saved = omp_get_max_threads();
  const auto one = run(1);
  const auto four = run(4);
  const auto three = run(3);
  omp_set_num_threads(saved);
  CHECK(one == four);
  CHECK(one == three);
}
