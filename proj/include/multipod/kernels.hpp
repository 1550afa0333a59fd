#pragma once

// Dense compute kernels behind the tensor ops.
//
// Two implementations of every kernel are kept side by side:
//   kernels::serial   - direct loops, straightforward to audit; used as the
//                       reference in tests and as the baseline in bench/.
//   kernels::parallel - im2col + cache-blocked GEMM, OpenMP over tiles.
//
// Both accumulate every output element over its reduction index in the same
// fixed order regardless of thread count, so parallel results do not depend
// on scheduling.

#include <cstddef>
#include <span>

namespace multipod::kernels {

struct ConvGeometry {
  std::size_t batch = 1;
  std::size_t channels = 1;
  std::size_t height = 1;
  std::size_t width = 1;
  std::size_t filters = 1;
  std::size_t kernel_h = 1;
  std::size_t kernel_w = 1;
  std::size_t stride = 1;
  std::size_t padding = 0;

  std::size_t out_h() const { return (height + 2 * padding - kernel_h) / stride + 1; }
  std::size_t out_w() const { return (width + 2 * padding - kernel_w) / stride + 1; }
  std::size_t input_size() const { return batch * channels * height * width; }
  std::size_t weight_size() const { return filters * channels * kernel_h * kernel_w; }
  std::size_t output_size() const { return batch * filters * out_h() * out_w(); }
};

/// Row-major C = op(A) * op(B) + beta * C with op(A) M x K and op(B) K x N.
/// With beta == 0 the prior contents of C are ignored (may be garbage).
template <typename T>
struct GemmArgs {
  bool trans_a = false;
  bool trans_b = false;
  std::size_t m = 0, n = 0, k = 0;
  const T* a = nullptr;
  std::size_t lda = 0;
  const T* b = nullptr;
  std::size_t ldb = 0;
  T beta = T(0);
  T* c = nullptr;
  std::size_t ldc = 0;
};

namespace serial {

template <typename T>
void gemm(const GemmArgs<T>& args);

/// y = conv(x, w); overwrites y.
template <typename T>
void conv2d_forward(const ConvGeometry& g, std::span<const T> x, std::span<const T> w,
                    std::span<T> y);

/// dx += d(conv)/dx applied to dy.
template <typename T>
void conv2d_backward_input(const ConvGeometry& g, std::span<const T> w, std::span<const T> dy,
                           std::span<T> dx);

/// dw += d(conv)/dw applied to dy.
template <typename T>
void conv2d_backward_weight(const ConvGeometry& g, std::span<const T> x, std::span<const T> dy,
                            std::span<T> dw);

}  // namespace serial

namespace parallel {

template <typename T>
void gemm(const GemmArgs<T>& args);

template <typename T>
void conv2d_forward(const ConvGeometry& g, std::span<const T> x, std::span<const T> w,
                    std::span<T> y);

template <typename T>
void conv2d_backward_input(const ConvGeometry& g, std::span<const T> w, std::span<const T> dy,
                           std::span<T> dx);

template <typename T>
void conv2d_backward_weight(const ConvGeometry& g, std::span<const T> x, std::span<const T> dy,
                            std::span<T> dw);

/// Lowers x into a (C*kh*kw) x (B*OH*OW) matrix; column b*OH*OW + p holds
/// the receptive field of output pixel p of image b.
template <typename T>
void im2col(const ConvGeometry& g, std::span<const T> x, std::span<T> col);

/// Adjoint of im2col: scatters (accumulates) columns back into dx.
template <typename T>
void col2im(const ConvGeometry& g, std::span<const T> col, std::span<T> dx);

}  // namespace parallel

/// Number of OpenMP threads the parallel kernels will use (1 without OpenMP).
int thread_count();

}  // namespace multipod::kernels
