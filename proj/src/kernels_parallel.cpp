#include <algorithm>
#include <vector>

#include "multipod/kernels.hpp"

#ifdef _OPENMP
#include <omp.h>
#endif

namespace multipod::kernels {

int thread_count() {
#ifdef _OPENMP
  return omp_get_max_threads();
#else
  return 1;
#endif
}

namespace parallel {
namespace {

// Register tile: MR rows x NR columns, NR spans two 512-bit vectors.
template <typename T>
struct Blocking {
  static constexpr std::size_t mr = 6;
  static constexpr std::size_t nr = 128 / sizeof(T);
  static constexpr std::size_t kc = 256;
  static constexpr std::size_t mc = 16 * mr;
  static constexpr std::size_t nc = 4 * nr;
};

template <typename T>
inline T load_a(const GemmArgs<T>& g, std::size_t i, std::size_t p) {
  return g.trans_a ? g.a[p * g.lda + i] : g.a[i * g.lda + p];
}

template <typename T>
inline T load_b(const GemmArgs<T>& g, std::size_t p, std::size_t j) {
  return g.trans_b ? g.b[j * g.ldb + p] : g.b[p * g.ldb + j];
}

// Packs rows [i0, i0+mc) x depth [p0, p0+kc) into MR-row panels, zero-filled.
template <typename T>
void pack_a(const GemmArgs<T>& g, std::size_t i0, std::size_t mc, std::size_t p0, std::size_t kc,
            T* out) {
  constexpr std::size_t MR = Blocking<T>::mr;
  for (std::size_t ip = 0; ip < mc; ip += MR) {
    for (std::size_t p = 0; p < kc; ++p) {
      for (std::size_t i = 0; i < MR; ++i) {
        *out++ = (ip + i < mc) ? load_a(g, i0 + ip + i, p0 + p) : T(0);
      }
    }
  }
}

template <typename T>
void pack_b(const GemmArgs<T>& g, std::size_t p0, std::size_t kc, std::size_t j0, std::size_t nc,
            T* out) {
  constexpr std::size_t NR = Blocking<T>::nr;
  for (std::size_t jp = 0; jp < nc; jp += NR) {
    const std::size_t w = std::min(NR, nc - jp);
    for (std::size_t p = 0; p < kc; ++p) {
      if (!g.trans_b && w == NR) {
        std::copy_n(g.b + (p0 + p) * g.ldb + j0 + jp, NR, out);
        out += NR;
        continue;
      }
      for (std::size_t j = 0; j < NR; ++j) {
        *out++ = (j < w) ? load_b(g, p0 + p, j0 + jp + j) : T(0);
      }
    }
  }
}

template <typename T>
void micro_kernel(std::size_t kc, const T* __restrict ap, const T* __restrict bp, T* c,
                  std::size_t ldc, std::size_t rows, std::size_t cols, bool first, T beta) {
  constexpr std::size_t MR = Blocking<T>::mr;
  constexpr std::size_t NR = Blocking<T>::nr;
  T acc[MR][NR] = {};
  for (std::size_t p = 0; p < kc; ++p) {
    const T* b = bp + p * NR;
    const T* a = ap + p * MR;
#pragma GCC unroll 6
    for (std::size_t i = 0; i < MR; ++i) {
      const T ai = a[i];
#pragma omp simd
      for (std::size_t j = 0; j < NR; ++j) acc[i][j] += ai * b[j];
    }
  }
  for (std::size_t i = 0; i < rows; ++i) {
    T* row = c + i * ldc;
    if (first) {
      if (beta == T(0)) {
        for (std::size_t j = 0; j < cols; ++j) row[j] = acc[i][j];
      } else {
        for (std::size_t j = 0; j < cols; ++j) row[j] = beta * row[j] + acc[i][j];
      }
    } else {
      for (std::size_t j = 0; j < cols; ++j) row[j] += acc[i][j];
    }
  }
}

}  // namespace

template <typename T>
void gemm(const GemmArgs<T>& g) {
  using B = Blocking<T>;
  if (g.m == 0 || g.n == 0) return;
  if (g.k == 0) {
    for (std::size_t i = 0; i < g.m; ++i)
      for (std::size_t j = 0; j < g.n; ++j) {
        T& c = g.c[i * g.ldc + j];
        c = (g.beta == T(0)) ? T(0) : g.beta * c;
      }
    return;
  }

  const std::size_t row_tiles = (g.m + B::mc - 1) / B::mc;
  const std::size_t col_tiles = (g.n + B::nc - 1) / B::nc;
  const auto tiles = static_cast<long>(row_tiles * col_tiles);

  // Each (row tile, col tile) of C is owned by one thread that walks the
  // full K range in order.
#pragma omp parallel
  {
    std::vector<T> apack(B::mc * B::kc);
    std::vector<T> bpack(B::nc * B::kc);
#pragma omp for schedule(static)
    for (long t = 0; t < tiles; ++t) {
      const std::size_t i0 = (static_cast<std::size_t>(t) / col_tiles) * B::mc;
      const std::size_t j0 = (static_cast<std::size_t>(t) % col_tiles) * B::nc;
      const std::size_t mc = std::min(B::mc, g.m - i0);
      const std::size_t nc = std::min(B::nc, g.n - j0);
      for (std::size_t p0 = 0; p0 < g.k; p0 += B::kc) {
        const std::size_t kc = std::min(B::kc, g.k - p0);
        pack_a(g, i0, mc, p0, kc, apack.data());
        pack_b(g, p0, kc, j0, nc, bpack.data());
        for (std::size_t jp = 0; jp < nc; jp += B::nr) {
          for (std::size_t ip = 0; ip < mc; ip += B::mr) {
            micro_kernel<T>(kc, apack.data() + ip * kc, bpack.data() + jp * kc,
                            g.c + (i0 + ip) * g.ldc + j0 + jp, g.ldc,
                            std::min(B::mr, mc - ip), std::min(B::nr, nc - jp), p0 == 0,
                            g.beta);
          }
        }
      }
    }
  }
}

template <typename T>
void im2col(const ConvGeometry& g, std::span<const T> x, std::span<T> col) {
  const std::size_t oh = g.out_h(), ow = g.out_w(), plane = oh * ow;
  const std::size_t ncols = g.batch * plane;
  const auto rows = static_cast<long>(g.channels * g.kernel_h * g.kernel_w);
  const long pad = static_cast<long>(g.padding);
#pragma omp parallel for schedule(static)
  for (long r = 0; r < rows; ++r) {
    const std::size_t kx = static_cast<std::size_t>(r) % g.kernel_w;
    const std::size_t ky = (static_cast<std::size_t>(r) / g.kernel_w) % g.kernel_h;
    const std::size_t c = static_cast<std::size_t>(r) / (g.kernel_w * g.kernel_h);
    T* out = col.data() + static_cast<std::size_t>(r) * ncols;
    for (std::size_t b = 0; b < g.batch; ++b) {
      const T* src = x.data() + (b * g.channels + c) * g.height * g.width;
      for (std::size_t oy = 0; oy < oh; ++oy) {
        const long iy = static_cast<long>(oy * g.stride + ky) - pad;
        T* dst = out + b * plane + oy * ow;
        if (iy < 0 || iy >= static_cast<long>(g.height)) {
          std::fill_n(dst, ow, T(0));
          continue;
        }
        const T* srow = src + static_cast<std::size_t>(iy) * g.width;
        for (std::size_t ox = 0; ox < ow; ++ox) {
          const long ix = static_cast<long>(ox * g.stride + kx) - pad;
          dst[ox] = (ix < 0 || ix >= static_cast<long>(g.width)) ? T(0)
                                                                 : srow[static_cast<std::size_t>(ix)];
        }
      }
    }
  }
}

template <typename T>
void col2im(const ConvGeometry& g, std::span<const T> col, std::span<T> dx) {
  const std::size_t oh = g.out_h(), ow = g.out_w(), plane = oh * ow;
  const std::size_t ncols = g.batch * plane;
  const long pad = static_cast<long>(g.padding);
  // Parallel over (image, channel) planes of dx: each plane is written by one
  // thread, which visits its kernel offsets in a fixed order.
  const auto planes = static_cast<long>(g.batch * g.channels);
#pragma omp parallel for schedule(static)
  for (long bc = 0; bc < planes; ++bc) {
    const std::size_t b = static_cast<std::size_t>(bc) / g.channels;
    const std::size_t c = static_cast<std::size_t>(bc) % g.channels;
    T* dst = dx.data() + static_cast<std::size_t>(bc) * g.height * g.width;
    for (std::size_t ky = 0; ky < g.kernel_h; ++ky) {
      for (std::size_t kx = 0; kx < g.kernel_w; ++kx) {
        const std::size_t r = (c * g.kernel_h + ky) * g.kernel_w + kx;
        const T* src = col.data() + r * ncols + b * plane;
        for (std::size_t oy = 0; oy < oh; ++oy) {
          const long iy = static_cast<long>(oy * g.stride + ky) - pad;
          if (iy < 0 || iy >= static_cast<long>(g.height)) continue;
          T* drow = dst + static_cast<std::size_t>(iy) * g.width;
          for (std::size_t ox = 0; ox < ow; ++ox) {
            const long ix = static_cast<long>(ox * g.stride + kx) - pad;
            if (ix < 0 || ix >= static_cast<long>(g.width)) continue;
            drow[static_cast<std::size_t>(ix)] += src[oy * ow + ox];
          }
        }
      }
    }
  }
}

namespace {

// Reorders B x F x P (image-major) into F x (B*P) and back.
template <typename T>
void to_filter_major(const ConvGeometry& g, std::span<const T> src, std::span<T> dst) {
  const std::size_t plane = g.out_h() * g.out_w();
  const auto rows = static_cast<long>(g.filters);
#pragma omp parallel for schedule(static)
  for (long f = 0; f < rows; ++f)
    for (std::size_t b = 0; b < g.batch; ++b)
      std::copy_n(src.data() + (b * g.filters + static_cast<std::size_t>(f)) * plane, plane,
                  dst.data() + static_cast<std::size_t>(f) * g.batch * plane + b * plane);
}

template <typename T>
void to_image_major(const ConvGeometry& g, std::span<const T> src, std::span<T> dst) {
  const std::size_t plane = g.out_h() * g.out_w();
  const auto rows = static_cast<long>(g.filters);
#pragma omp parallel for schedule(static)
  for (long f = 0; f < rows; ++f)
    for (std::size_t b = 0; b < g.batch; ++b)
      std::copy_n(src.data() + static_cast<std::size_t>(f) * g.batch * plane + b * plane, plane,
                  dst.data() + (b * g.filters + static_cast<std::size_t>(f)) * plane);
}

}  // namespace

template <typename T>
void conv2d_forward(const ConvGeometry& g, std::span<const T> x, std::span<const T> w,
                    std::span<T> y) {
  const std::size_t ck = g.channels * g.kernel_h * g.kernel_w;
  const std::size_t plane = g.out_h() * g.out_w();
  const std::size_t ncols = g.batch * plane;
  std::vector<T> col(ck * ncols);
  im2col<T>(g, x, col);
  std::vector<T> yt(g.filters * ncols);
  gemm<T>({.m = g.filters, .n = ncols, .k = ck, .a = w.data(), .lda = ck, .b = col.data(),
           .ldb = ncols, .beta = T(0), .c = yt.data(), .ldc = ncols});
  to_image_major<T>(g, yt, y);
}

template <typename T>
void conv2d_backward_input(const ConvGeometry& g, std::span<const T> w, std::span<const T> dy,
                           std::span<T> dx) {
  const std::size_t ck = g.channels * g.kernel_h * g.kernel_w;
  const std::size_t plane = g.out_h() * g.out_w();
  const std::size_t ncols = g.batch * plane;
  std::vector<T> dyt(g.filters * ncols);
  to_filter_major<T>(g, dy, dyt);
  std::vector<T> dcol(ck * ncols);
  gemm<T>({.trans_a = true, .m = ck, .n = ncols, .k = g.filters, .a = w.data(), .lda = ck,
           .b = dyt.data(), .ldb = ncols, .beta = T(0), .c = dcol.data(), .ldc = ncols});
  col2im<T>(g, dcol, dx);
}

template <typename T>
void conv2d_backward_weight(const ConvGeometry& g, std::span<const T> x, std::span<const T> dy,
                            std::span<T> dw) {
  const std::size_t ck = g.channels * g.kernel_h * g.kernel_w;
  const std::size_t plane = g.out_h() * g.out_w();
  const std::size_t ncols = g.batch * plane;
  std::vector<T> col(ck * ncols);
  im2col<T>(g, x, col);
  std::vector<T> dyt(g.filters * ncols);
  to_filter_major<T>(g, dy, dyt);
  gemm<T>({.trans_b = true, .m = g.filters, .n = ck, .k = ncols, .a = dyt.data(), .lda = ncols,
           .b = col.data(), .ldb = ncols, .beta = T(1), .c = dw.data(), .ldc = ck});
}

#define MULTIPOD_INSTANTIATE(T)                                                              \
  template void gemm<T>(const GemmArgs<T>&);                                                 \
  template void im2col<T>(const ConvGeometry&, std::span<const T>, std::span<T>);           \
  template void col2im<T>(const ConvGeometry&, std::span<const T>, std::span<T>);           \
  template void conv2d_forward<T>(const ConvGeometry&, std::span<const T>, std::span<const T>, \
                                  std::span<T>);                                             \
  template void conv2d_backward_input<T>(const ConvGeometry&, std::span<const T>,            \
                                         std::span<const T>, std::span<T>);                  \
  template void conv2d_backward_weight<T>(const ConvGeometry&, std::span<const T>,           \
                                          std::span<const T>, std::span<T>);

MULTIPOD_INSTANTIATE(float)
MULTIPOD_INSTANTIATE(double)
#undef MULTIPOD_INSTANTIATE

}  // namespace parallel
}  // namespace multipod::kernels
