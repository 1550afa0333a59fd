#include "multipod/kernels.hpp"

namespace multipod::kernels::serial {

template <typename T>
void gemm(const GemmArgs<T>& g) {
  for (std::size_t i = 0; i < g.m; ++i) {
    for (std::size_t j = 0; j < g.n; ++j) {
      T acc = T(0);
      for (std::size_t p = 0; p < g.k; ++p) {
        T a = g.trans_a ? g.a[p * g.lda + i] : g.a[i * g.lda + p];
        T b = g.trans_b ? g.b[j * g.ldb + p] : g.b[p * g.ldb + j];
        acc += a * b;
      }
      T& c = g.c[i * g.ldc + j];
      c = (g.beta == T(0)) ? acc : g.beta * c + acc;
    }
  }
}

template <typename T>
void conv2d_forward(const ConvGeometry& g, std::span<const T> x, std::span<const T> w,
                    std::span<T> y) {
  const std::size_t oh = g.out_h(), ow = g.out_w();
  for (std::size_t b = 0; b < g.batch; ++b)
    for (std::size_t f = 0; f < g.filters; ++f)
      for (std::size_t oy = 0; oy < oh; ++oy)
        for (std::size_t ox = 0; ox < ow; ++ox) {
          T acc = T(0);
          for (std::size_t c = 0; c < g.channels; ++c)
            for (std::size_t ky = 0; ky < g.kernel_h; ++ky)
              for (std::size_t kx = 0; kx < g.kernel_w; ++kx) {
                auto iy = static_cast<long>(oy * g.stride + ky) - static_cast<long>(g.padding);
                auto ix = static_cast<long>(ox * g.stride + kx) - static_cast<long>(g.padding);
                if (iy < 0 || ix < 0 || iy >= static_cast<long>(g.height) ||
                    ix >= static_cast<long>(g.width))
                  continue;
                acc += x[((b * g.channels + c) * g.height + iy) * g.width + ix] *
                       w[((f * g.channels + c) * g.kernel_h + ky) * g.kernel_w + kx];
              }
          y[((b * g.filters + f) * oh + oy) * ow + ox] = acc;
        }
}

template <typename T>
void conv2d_backward_input(const ConvGeometry& g, std::span<const T> w, std::span<const T> dy,
                           std::span<T> dx) {
  const std::size_t oh = g.out_h(), ow = g.out_w();
  for (std::size_t b = 0; b < g.batch; ++b)
    for (std::size_t f = 0; f < g.filters; ++f)
      for (std::size_t oy = 0; oy < oh; ++oy)
        for (std::size_t ox = 0; ox < ow; ++ox) {
          const T d = dy[((b * g.filters + f) * oh + oy) * ow + ox];
          for (std::size_t c = 0; c < g.channels; ++c)
            for (std::size_t ky = 0; ky < g.kernel_h; ++ky)
              for (std::size_t kx = 0; kx < g.kernel_w; ++kx) {
                auto iy = static_cast<long>(oy * g.stride + ky) - static_cast<long>(g.padding);
                auto ix = static_cast<long>(ox * g.stride + kx) - static_cast<long>(g.padding);
                if (iy < 0 || ix < 0 || iy >= static_cast<long>(g.height) ||
                    ix >= static_cast<long>(g.width))
                  continue;
                dx[((b * g.channels + c) * g.height + iy) * g.width + ix] +=
                    d * w[((f * g.channels + c) * g.kernel_h + ky) * g.kernel_w + kx];
              }
        }
}

template <typename T>
void conv2d_backward_weight(const ConvGeometry& g, std::span<const T> x, std::span<const T> dy,
                            std::span<T> dw) {
  const std::size_t oh = g.out_h(), ow = g.out_w();
  for (std::size_t f = 0; f < g.filters; ++f)
    for (std::size_t c = 0; c < g.channels; ++c)
      for (std::size_t ky = 0; ky < g.kernel_h; ++ky)
        for (std::size_t kx = 0; kx < g.kernel_w; ++kx) {
          T acc = T(0);
          for (std::size_t b = 0; b < g.batch; ++b)
            for (std::size_t oy = 0; oy < oh; ++oy)
              for (std::size_t ox = 0; ox < ow; ++ox) {
                auto iy = static_cast<long>(oy * g.stride + ky) - static_cast<long>(g.padding);
                auto ix = static_cast<long>(ox * g.stride + kx) - static_cast<long>(g.padding);
                if (iy < 0 || ix < 0 || iy >= static_cast<long>(g.height) ||
                    ix >= static_cast<long>(g.width))
                  continue;
                acc += dy[((b * g.filters + f) * oh + oy) * ow + ox] *
                       x[((b * g.channels + c) * g.height + iy) * g.width + ix];
              }
          dw[((f * g.channels + c) * g.kernel_h + ky) * g.kernel_w + kx] += acc;
        }
}

#define MULTIPOD_INSTANTIATE(T)                                                              \
  template void gemm<T>(const GemmArgs<T>&);                                                 \
  template void conv2d_forward<T>(const ConvGeometry&, std::span<const T>, std::span<const T>, \
                                  std::span<T>);                                             \
  template void conv2d_backward_input<T>(const ConvGeometry&, std::span<const T>,            \
                                         std::span<const T>, std::span<T>);                  \
  template void conv2d_backward_weight<T>(const ConvGeometry&, std::span<const T>,           \
                                          std::span<const T>, std::span<T>);

MULTIPOD_INSTANTIATE(float)
MULTIPOD_INSTANTIATE(double)
#undef MULTIPOD_INSTANTIATE

}  // namespace multipod::kernels::serial
