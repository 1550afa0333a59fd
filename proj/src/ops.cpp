#include "multipod/ops.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <string>

#include "multipod/errors.hpp"
#include "multipod/kernels.hpp"

namespace multipod {

CombineMode parse_combine_mode(std::string_view text) {
  if (text == "sum") return CombineMode::Sum;
  if (text == "product") return CombineMode::Product;
  throw ArgumentError("unknown combine mode '" + std::string(text) + "' (expected sum|product)");
}

std::string_view to_string(CombineMode mode) {
  switch (mode) {
    case CombineMode::Sum: return "sum";
    case CombineMode::Product: return "product";
  }
  throw ArgumentError("unknown combine mode");
}

namespace {

template <typename T>
void require_rank(const Tensor<T>& t, std::size_t rank, const char* what) {
  if (t.rank() != rank) {
    throw ShapeError(std::string(what) + ": expected rank " + std::to_string(rank) + ", got " +
                     shape_string(t.shape()));
  }
}

template <typename T>
bool wants_grad(const GraphNode<T>& self, std::size_t i) {
  return self.inputs[i]->requires_grad;
}

}  // namespace

template <typename T>
Tensor<T> conv2d(const Tensor<T>& input, const Tensor<T>& weight, int stride, int padding) {
  if (stride < 1) throw ArgumentError("conv2d: stride must be >= 1, got " + std::to_string(stride));
  if (padding < 0) throw ArgumentError("conv2d: padding must be >= 0");
  require_rank(input, 4, "conv2d input");
  require_rank(weight, 4, "conv2d weight");
  const auto& xs = input.shape();
  const auto& ws = weight.shape();
  if (xs[1] != ws[1]) {
    throw ShapeError("conv2d: input channels " + std::to_string(xs[1]) +
                     " do not match weight channels " + std::to_string(ws[1]));
  }
  kernels::ConvGeometry g{.batch = xs[0], .channels = xs[1], .height = xs[2], .width = xs[3],
                          .filters = ws[0], .kernel_h = ws[2], .kernel_w = ws[3],
                          .stride = static_cast<std::size_t>(stride),
                          .padding = static_cast<std::size_t>(padding)};
  if (g.kernel_h > g.height + 2 * g.padding || g.kernel_w > g.width + 2 * g.padding) {
    throw ShapeError("conv2d: kernel " + shape_string(ws) + " larger than padded input " +
                     shape_string(xs));
  }
  std::vector<T> out(g.output_size());
  kernels::parallel::conv2d_forward<T>(g, input.data(), weight.data(), out);
  return Tensor<T>::from_op(
      OpKind::Conv2d, {g.batch, g.filters, g.out_h(), g.out_w()}, std::move(out), {input, weight},
      [g](GraphNode<T>& self) {
        auto& x = *self.inputs[0];
        auto& w = *self.inputs[1];
        if (x.requires_grad)
          kernels::parallel::conv2d_backward_input<T>(g, w.value, self.grad, grad_buffer(x));
        if (w.requires_grad)
          kernels::parallel::conv2d_backward_weight<T>(g, x.value, self.grad, grad_buffer(w));
      });
}

template <typename T>
Tensor<T> batch_norm2d(const Tensor<T>& input, const Tensor<T>& gamma, const Tensor<T>& beta,
                       BatchNormStats<T>& stats, bool training, T momentum, T eps) {
  if (!(eps > T(0))) throw ArgumentError("batch_norm2d: eps must be > 0");
  require_rank(input, 4, "batch_norm2d input");
  const auto& s = input.shape();
  const std::size_t batch = s[0], channels = s[1], plane = s[2] * s[3];
  const std::size_t count = batch * plane;
  if (gamma.numel() != channels || beta.numel() != channels) {
    throw ShapeError("batch_norm2d: gamma/beta length must equal channel count " +
                     std::to_string(channels));
  }
  if (training && count < 2) {
    throw ArgumentError("batch_norm2d: training mode needs B*H*W >= 2, got " +
                        std::to_string(count));
  }
  if (!training) {
    if (!stats.is_initialized()) {
      throw StateError("batch_norm2d: eval mode with uninitialized running statistics");
    }
  }
  if (stats.is_initialized() &&
      (stats.running_mean.size() != channels || stats.running_var.size() != channels)) {
    throw ShapeError("batch_norm2d: running statistics length mismatch");
  }

  const auto x = input.data();
  const auto gm = gamma.data();
  const auto bt = beta.data();
  std::vector<T> out(x.size());
  std::vector<T> xhat(x.size());
  std::vector<T> inv_std(channels);

  const auto nch = static_cast<long>(channels);
#pragma omp parallel for schedule(static)
  for (long cl = 0; cl < nch; ++cl) {
    const auto c = static_cast<std::size_t>(cl);
    T mean, var;
    if (training) {
      T acc = T(0);
      for (std::size_t b = 0; b < batch; ++b) {
        const T* p = x.data() + (b * channels + c) * plane;
        for (std::size_t i = 0; i < plane; ++i) acc += p[i];
      }
      mean = acc / static_cast<T>(count);
      T sq = T(0);
      for (std::size_t b = 0; b < batch; ++b) {
        const T* p = x.data() + (b * channels + c) * plane;
        for (std::size_t i = 0; i < plane; ++i) {
          const T d = p[i] - mean;
          sq += d * d;
        }
      }
      var = sq / static_cast<T>(count);
      if (stats.is_initialized()) {
        const T unbiased = sq / static_cast<T>(count - 1);
        stats.running_mean[c] = (T(1) - momentum) * stats.running_mean[c] + momentum * mean;
        stats.running_var[c] = (T(1) - momentum) * stats.running_var[c] + momentum * unbiased;
      }
    } else {
      mean = stats.running_mean[c];
      var = stats.running_var[c];
    }
    const T is = T(1) / std::sqrt(var + eps);
    inv_std[c] = is;
    for (std::size_t b = 0; b < batch; ++b) {
      const std::size_t off = (b * channels + c) * plane;
      for (std::size_t i = 0; i < plane; ++i) {
        const T h = (x[off + i] - mean) * is;
        xhat[off + i] = h;
        out[off + i] = gm[c] * h + bt[c];
      }
    }
  }

  return Tensor<T>::from_op(
      OpKind::BatchNorm2d, s, std::move(out), {input, gamma, beta},
      [xhat = std::move(xhat), inv_std = std::move(inv_std), batch, channels, plane, count,
       training](GraphNode<T>& self) {
        const auto& dy = self.grad;
        const auto& gm = self.inputs[1]->value;
        const bool want_x = self.inputs[0]->requires_grad;
        const bool want_g = self.inputs[1]->requires_grad;
        const bool want_b = self.inputs[2]->requires_grad;
        std::span<T> dx = want_x ? grad_buffer(*self.inputs[0]) : std::span<T>{};
        std::span<T> dg = want_g ? grad_buffer(*self.inputs[1]) : std::span<T>{};
        std::span<T> db = want_b ? grad_buffer(*self.inputs[2]) : std::span<T>{};
        const auto nch = static_cast<long>(channels);
#pragma omp parallel for schedule(static)
        for (long cl = 0; cl < nch; ++cl) {
          const auto c = static_cast<std::size_t>(cl);
          T sum_dy = T(0), sum_dy_xhat = T(0);
          for (std::size_t b = 0; b < batch; ++b) {
            const std::size_t off = (b * channels + c) * plane;
            for (std::size_t i = 0; i < plane; ++i) {
              sum_dy += dy[off + i];
              sum_dy_xhat += dy[off + i] * xhat[off + i];
            }
          }
          if (want_g) dg[c] += sum_dy_xhat;
          if (want_b) db[c] += sum_dy;
          if (!want_x) continue;
          const T scale = gm[c] * inv_std[c];
          const T n = static_cast<T>(count);
          for (std::size_t b = 0; b < batch; ++b) {
            const std::size_t off = (b * channels + c) * plane;
            for (std::size_t i = 0; i < plane; ++i) {
              if (training) {
                dx[off + i] +=
                    scale * (dy[off + i] - sum_dy / n - xhat[off + i] * sum_dy_xhat / n);
              } else {
                dx[off + i] += scale * dy[off + i];
              }
            }
          }
        }
      });
}

template <typename T>
Tensor<T> relu(const Tensor<T>& x) {
  const auto v = x.data();
  std::vector<T> out(v.size());
  for (std::size_t i = 0; i < v.size(); ++i) out[i] = v[i] > T(0) ? v[i] : T(0);
  return Tensor<T>::from_op(OpKind::Relu, x.shape(), std::move(out), {x},
                            [](GraphNode<T>& self) {
                              auto& in = *self.inputs[0];
                              auto dx = grad_buffer(in);
                              for (std::size_t i = 0; i < dx.size(); ++i)
                                if (in.value[i] > T(0)) dx[i] += self.grad[i];
                            });
}

template <typename T>
Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b) {
  if (a.shape() != b.shape()) {
    throw ShapeError("add: shape mismatch " + shape_string(a.shape()) + " vs " +
                     shape_string(b.shape()));
  }
  const auto av = a.data();
  const auto bv = b.data();
  std::vector<T> out(av.size());
  for (std::size_t i = 0; i < av.size(); ++i) out[i] = av[i] + bv[i];
  return Tensor<T>::from_op(OpKind::Add, a.shape(), std::move(out), {a, b},
                            [](GraphNode<T>& self) {
                              for (std::size_t k = 0; k < 2; ++k) {
                                if (!wants_grad(self, k)) continue;
                                auto d = grad_buffer(*self.inputs[k]);
                                for (std::size_t i = 0; i < d.size(); ++i) d[i] += self.grad[i];
                              }
                            });
}

template <typename T>
Tensor<T> mul(const Tensor<T>& a, const Tensor<T>& b) {
  if (a.shape() != b.shape()) {
    throw ShapeError("mul: shape mismatch " + shape_string(a.shape()) + " vs " +
                     shape_string(b.shape()));
  }
  const auto av = a.data();
  const auto bv = b.data();
  std::vector<T> out(av.size());
  for (std::size_t i = 0; i < av.size(); ++i) out[i] = av[i] * bv[i];
  return Tensor<T>::from_op(OpKind::Mul, a.shape(), std::move(out), {a, b},
                            [](GraphNode<T>& self) {
                              for (std::size_t k = 0; k < 2; ++k) {
                                if (!wants_grad(self, k)) continue;
                                const auto& other = self.inputs[1 - k]->value;
                                auto d = grad_buffer(*self.inputs[k]);
                                for (std::size_t i = 0; i < d.size(); ++i)
                                  d[i] += self.grad[i] * other[i];
                              }
                            });
}

template <typename T>
Tensor<T> linear(const Tensor<T>& x, const Tensor<T>& weight, const Tensor<T>& bias) {
  require_rank(x, 2, "linear input");
  require_rank(weight, 2, "linear weight");
  const std::size_t batch = x.dim(0), in = x.dim(1), out_f = weight.dim(0);
  if (weight.dim(1) != in) {
    throw ShapeError("linear: input features " + std::to_string(in) + " vs weight " +
                     shape_string(weight.shape()));
  }
  const bool has_bias = bias.defined();
  if (has_bias && bias.numel() != out_f) throw ShapeError("linear: bias length mismatch");

  std::vector<T> out(batch * out_f);
  if (has_bias) {
    for (std::size_t b = 0; b < batch; ++b)
      std::copy(bias.data().begin(), bias.data().end(), out.begin() + b * out_f);
  }
  kernels::parallel::gemm<T>({.trans_b = true, .m = batch, .n = out_f, .k = in,
                              .a = x.data().data(), .lda = in, .b = weight.data().data(),
                              .ldb = in, .beta = has_bias ? T(1) : T(0), .c = out.data(),
                              .ldc = out_f});
  std::vector<Tensor<T>> inputs{x, weight};
  if (has_bias) inputs.push_back(bias);
  return Tensor<T>::from_op(
      OpKind::Linear, {batch, out_f}, std::move(out), std::move(inputs),
      [batch, in, out_f, has_bias](GraphNode<T>& self) {
        const T* dy = self.grad.data();
        auto& xn = *self.inputs[0];
        auto& wn = *self.inputs[1];
        if (xn.requires_grad) {
          kernels::parallel::gemm<T>({.m = batch, .n = in, .k = out_f, .a = dy, .lda = out_f,
                                      .b = wn.value.data(), .ldb = in, .beta = T(1),
                                      .c = grad_buffer(xn).data(), .ldc = in});
        }
        if (wn.requires_grad) {
          kernels::parallel::gemm<T>({.trans_a = true, .m = out_f, .n = in, .k = batch, .a = dy,
                                      .lda = out_f, .b = xn.value.data(), .ldb = in,
                                      .beta = T(1), .c = grad_buffer(wn).data(), .ldc = in});
        }
        if (has_bias && self.inputs[2]->requires_grad) {
          auto db = grad_buffer(*self.inputs[2]);
          for (std::size_t b = 0; b < batch; ++b)
            for (std::size_t j = 0; j < out_f; ++j) db[j] += dy[b * out_f + j];
        }
      });
}

template <typename T>
Tensor<T> concat_linear(std::span<const Tensor<T>> parts, const Tensor<T>& weight,
                        const Tensor<T>& bias) {
  if (parts.empty()) throw ArgumentError("concat_linear: no parts");
  require_rank(weight, 2, "concat_linear weight");
  const std::size_t batch = parts[0].dim(0), out_f = weight.dim(0), k = parts.size();
  std::vector<std::size_t> offset(k + 1, 0);
  for (std::size_t i = 0; i < k; ++i) {
    require_rank(parts[i], 2, "concat_linear part");
    if (parts[i].dim(0) != batch) throw ShapeError("concat_linear: parts differ in batch size");
    offset[i + 1] = offset[i] + parts[i].dim(1);
  }
  const std::size_t in = offset[k];
  if (weight.dim(1) != in) {
    throw ShapeError("concat_linear: total width " + std::to_string(in) + " vs weight " +
                     shape_string(weight.shape()));
  }
  const bool has_bias = bias.defined();
  if (has_bias && bias.numel() != out_f) throw ShapeError("concat_linear: bias length mismatch");

  const std::size_t cells = batch * out_f;
  std::vector<T> partial(k * cells);
  for (std::size_t i = 0; i < k; ++i) {
    const std::size_t w = offset[i + 1] - offset[i];
    kernels::parallel::gemm<T>({.trans_b = true, .m = batch, .n = out_f, .k = w,
                                .a = parts[i].data().data(), .lda = w,
                                .b = weight.data().data() + offset[i], .ldb = in, .beta = T(0),
                                .c = partial.data() + i * cells, .ldc = out_f});
  }
  std::vector<T> out(cells);
  std::vector<T> terms(k);
  for (std::size_t c = 0; c < cells; ++c) {
    for (std::size_t i = 0; i < k; ++i) terms[i] = partial[i * cells + c];
    std::sort(terms.begin(), terms.end());
    T acc = terms[0];
    for (std::size_t i = 1; i < k; ++i) acc += terms[i];
    out[c] = has_bias ? acc + bias.data()[c % out_f] : acc;
  }

  std::vector<Tensor<T>> inputs(parts.begin(), parts.end());
  inputs.push_back(weight);
  if (has_bias) inputs.push_back(bias);
  return Tensor<T>::from_op(
      OpKind::ConcatLinear, {batch, out_f}, std::move(out), std::move(inputs),
      [batch, in, out_f, k, offset, has_bias](GraphNode<T>& self) {
        const T* dy = self.grad.data();
        auto& wn = *self.inputs[k];
        for (std::size_t i = 0; i < k; ++i) {
          auto& xn = *self.inputs[i];
          const std::size_t w = offset[i + 1] - offset[i];
          if (xn.requires_grad) {
            kernels::parallel::gemm<T>({.m = batch, .n = w, .k = out_f, .a = dy, .lda = out_f,
                                        .b = wn.value.data() + offset[i], .ldb = in,
                                        .beta = T(1), .c = grad_buffer(xn).data(), .ldc = w});
          }
          if (wn.requires_grad) {
            kernels::parallel::gemm<T>({.trans_a = true, .m = out_f, .n = w, .k = batch,
                                        .a = dy, .lda = out_f, .b = xn.value.data(), .ldb = w,
                                        .beta = T(1), .c = grad_buffer(wn).data() + offset[i],
                                        .ldc = in});
          }
        }
        if (has_bias && self.inputs[k + 1]->requires_grad) {
          auto db = grad_buffer(*self.inputs[k + 1]);
          for (std::size_t b = 0; b < batch; ++b)
            for (std::size_t j = 0; j < out_f; ++j) db[j] += dy[b * out_f + j];
        }
      });
}

template <typename T>
Tensor<T> global_avg_pool(const Tensor<T>& x) {
  require_rank(x, 4, "global_avg_pool input");
  const std::size_t rows = x.dim(0) * x.dim(1), plane = x.dim(2) * x.dim(3);
  const auto v = x.data();
  std::vector<T> out(rows);
  for (std::size_t r = 0; r < rows; ++r) {
    T acc = T(0);
    for (std::size_t i = 0; i < plane; ++i) acc += v[r * plane + i];
    out[r] = acc / static_cast<T>(plane);
  }
  return Tensor<T>::from_op(OpKind::GlobalAvgPool, {x.dim(0), x.dim(1)}, std::move(out), {x},
                            [rows, plane](GraphNode<T>& self) {
                              auto dx = grad_buffer(*self.inputs[0]);
                              const T inv = T(1) / static_cast<T>(plane);
                              for (std::size_t r = 0; r < rows; ++r) {
                                const T g = self.grad[r] * inv;
                                for (std::size_t i = 0; i < plane; ++i) dx[r * plane + i] += g;
                              }
                            });
}

template <typename T>
Tensor<T> concat(std::span<const Tensor<T>> parts) {
  if (parts.empty()) throw ArgumentError("concat: no inputs");
  const std::size_t batch = parts[0].dim(0);
  std::vector<std::size_t> widths;
  std::size_t total = 0;
  for (const auto& p : parts) {
    require_rank(p, 2, "concat input");
    if (p.dim(0) != batch) {
      throw ShapeError("concat: batch extent mismatch " + shape_string(p.shape()));
    }
    widths.push_back(p.dim(1));
    total += p.dim(1);
  }
  std::vector<T> out(batch * total);
  std::size_t col = 0;
  for (std::size_t k = 0; k < parts.size(); ++k) {
    const auto v = parts[k].data();
    for (std::size_t b = 0; b < batch; ++b)
      std::copy_n(v.data() + b * widths[k], widths[k], out.data() + b * total + col);
    col += widths[k];
  }
  return Tensor<T>::from_op(OpKind::Concat, {batch, total}, std::move(out),
                            std::vector<Tensor<T>>(parts.begin(), parts.end()),
                            [widths, batch, total](GraphNode<T>& self) {
                              std::size_t col = 0;
                              for (std::size_t k = 0; k < widths.size(); ++k) {
                                if (wants_grad(self, k)) {
                                  auto d = grad_buffer(*self.inputs[k]);
                                  for (std::size_t b = 0; b < batch; ++b)
                                    for (std::size_t j = 0; j < widths[k]; ++j)
                                      d[b * widths[k] + j] += self.grad[b * total + col + j];
                                }
                                col += widths[k];
                              }
                            });
}

template <typename T>
Tensor<T> slice(const Tensor<T>& x, std::size_t begin, std::size_t end) {
  require_rank(x, 2, "slice input");
  const std::size_t batch = x.dim(0), width = x.dim(1);
  if (begin >= end || end > width) {
    throw ArgumentError("slice: invalid column range [" + std::to_string(begin) + ", " +
                        std::to_string(end) + ") for width " + std::to_string(width));
  }
  const std::size_t w = end - begin;
  const auto v = x.data();
  std::vector<T> out(batch * w);
  for (std::size_t b = 0; b < batch; ++b)
    std::copy_n(v.data() + b * width + begin, w, out.data() + b * w);
  return Tensor<T>::from_op(OpKind::Slice, {batch, w}, std::move(out), {x},
                            [batch, width, begin, w](GraphNode<T>& self) {
                              auto d = grad_buffer(*self.inputs[0]);
                              for (std::size_t b = 0; b < batch; ++b)
                                for (std::size_t j = 0; j < w; ++j)
                                  d[b * width + begin + j] += self.grad[b * w + j];
                            });
}

template <typename T>
Tensor<T> elementwise_scale_combine(std::span<const Tensor<T>> features,
                                    std::span<const Tensor<T>> scales, CombineMode mode) {
  if (mode != CombineMode::Sum && mode != CombineMode::Product) {
    throw ArgumentError("elementwise_scale_combine: unknown combine mode");
  }
  if (features.empty()) throw ArgumentError("elementwise_scale_combine: no pod features");
  if (features.size() != scales.size()) {
    throw ArgumentError("elementwise_scale_combine: " + std::to_string(features.size()) +
                        " features but " + std::to_string(scales.size()) + " scale vectors");
  }
  const std::size_t k = features.size();
  require_rank(features[0], 2, "elementwise_scale_combine feature");
  const std::size_t batch = features[0].dim(0), len = features[0].dim(1);
  for (std::size_t i = 0; i < k; ++i) {
    if (features[i].shape() != features[0].shape()) {
      throw ShapeError("elementwise_scale_combine: pod feature " + std::to_string(i) +
                       " has shape " + shape_string(features[i].shape()) + ", expected " +
                       shape_string(features[0].shape()));
    }
    if (scales[i].numel() != len) {
      throw ShapeError("elementwise_scale_combine: scale " + std::to_string(i) +
                       " has length " + std::to_string(scales[i].numel()) + ", expected " +
                       std::to_string(len));
    }
  }

  const std::size_t n = batch * len;
  std::vector<T> out(n, mode == CombineMode::Sum ? T(0) : T(1));
  for (std::size_t i = 0; i < k; ++i) {
    const auto f = features[i].data();
    const auto s = scales[i].data();
    for (std::size_t e = 0; e < n; ++e) {
      const T term = s[e % len] * f[e];
      out[e] = (mode == CombineMode::Sum) ? out[e] + term : out[e] * term;
    }
  }

  std::vector<Tensor<T>> inputs(features.begin(), features.end());
  inputs.insert(inputs.end(), scales.begin(), scales.end());
  return Tensor<T>::from_op(
      OpKind::ScaleCombine, {batch, len}, std::move(out), std::move(inputs),
      [k, n, len, mode](GraphNode<T>& self) {
        // d out / d term_i: 1 for sum; product of the other terms for
        // product (prefix/suffix products, no division).
        std::vector<T> others(k * n, T(1));
        if (mode == CombineMode::Product) {
          for (std::size_t e = 0; e < n; ++e) {
            T prefix = T(1);
            for (std::size_t i = 0; i < k; ++i) {
              others[i * n + e] = prefix;
              prefix *= self.inputs[k + i]->value[e % len] * self.inputs[i]->value[e];
            }
            T suffix = T(1);
            for (std::size_t i = k; i-- > 0;) {
              others[i * n + e] *= suffix;
              suffix *= self.inputs[k + i]->value[e % len] * self.inputs[i]->value[e];
            }
          }
        }
        for (std::size_t i = 0; i < k; ++i) {
          const auto& f = self.inputs[i]->value;
          const auto& s = self.inputs[k + i]->value;
          const bool want_f = self.inputs[i]->requires_grad;
          const bool want_s = self.inputs[k + i]->requires_grad;
          std::span<T> df = want_f ? grad_buffer(*self.inputs[i]) : std::span<T>{};
          std::span<T> ds = want_s ? grad_buffer(*self.inputs[k + i]) : std::span<T>{};
          for (std::size_t e = 0; e < n; ++e) {
            const T g = self.grad[e] * others[i * n + e];
            if (want_f) df[e] += g * s[e % len];
            if (want_s) ds[e % len] += g * f[e];
          }
        }
      });
}

template <typename T>
Tensor<T> pad2d(const Tensor<T>& x, int padding) {
  if (padding < 0) throw ArgumentError("pad2d: padding must be >= 0");
  require_rank(x, 4, "pad2d input");
  const std::size_t p = static_cast<std::size_t>(padding);
  const std::size_t planes = x.dim(0) * x.dim(1), h = x.dim(2), w = x.dim(3);
  const std::size_t ph = h + 2 * p, pw = w + 2 * p;
  const auto v = x.data();
  std::vector<T> out(planes * ph * pw, T(0));
  for (std::size_t q = 0; q < planes; ++q)
    for (std::size_t y = 0; y < h; ++y)
      std::copy_n(v.data() + (q * h + y) * w, w, out.data() + (q * ph + y + p) * pw + p);
  return Tensor<T>::from_op(OpKind::Pad2d, {x.dim(0), x.dim(1), ph, pw}, std::move(out), {x},
                            [planes, h, w, ph, pw, p](GraphNode<T>& self) {
                              auto d = grad_buffer(*self.inputs[0]);
                              for (std::size_t q = 0; q < planes; ++q)
                                for (std::size_t y = 0; y < h; ++y)
                                  for (std::size_t xx = 0; xx < w; ++xx)
                                    d[(q * h + y) * w + xx] +=
                                        self.grad[(q * ph + y + p) * pw + p + xx];
                            });
}

template <typename T>
Tensor<T> max_pool2d(const Tensor<T>& x, int kernel, int stride, int padding) {
  if (kernel < 1 || stride < 1 || padding < 0 || padding * 2 > kernel) {
    throw ArgumentError("max_pool2d: invalid kernel/stride/padding");
  }
  require_rank(x, 4, "max_pool2d input");
  const std::size_t planes = x.dim(0) * x.dim(1);
  const long h = static_cast<long>(x.dim(2)), w = static_cast<long>(x.dim(3));
  const long k = kernel, st = stride, pad = padding;
  if (h + 2 * pad < k || w + 2 * pad < k) throw ShapeError("max_pool2d: kernel larger than input");
  const long oh = (h + 2 * pad - k) / st + 1, ow = (w + 2 * pad - k) / st + 1;
  const auto v = x.data();
  std::vector<T> out(planes * static_cast<std::size_t>(oh * ow));
  std::vector<std::size_t> argmax(out.size());
  for (std::size_t q = 0; q < planes; ++q)
    for (long oy = 0; oy < oh; ++oy)
      for (long ox = 0; ox < ow; ++ox) {
        T best = -std::numeric_limits<T>::infinity();
        std::size_t where = 0;
        for (long ky = 0; ky < k; ++ky)
          for (long kx = 0; kx < k; ++kx) {
            const long iy = oy * st + ky - pad, ix = ox * st + kx - pad;
            if (iy < 0 || ix < 0 || iy >= h || ix >= w) continue;
            const std::size_t idx = q * static_cast<std::size_t>(h * w) +
                                    static_cast<std::size_t>(iy * w + ix);
            if (v[idx] > best) {
              best = v[idx];
              where = idx;
            }
          }
        const std::size_t o = q * static_cast<std::size_t>(oh * ow) +
                              static_cast<std::size_t>(oy * ow + ox);
        out[o] = best;
        argmax[o] = where;
      }
  return Tensor<T>::from_op(
      OpKind::MaxPool2d,
      {x.dim(0), x.dim(1), static_cast<std::size_t>(oh), static_cast<std::size_t>(ow)},
      std::move(out), {x}, [argmax = std::move(argmax)](GraphNode<T>& self) {
        auto d = grad_buffer(*self.inputs[0]);
        for (std::size_t o = 0; o < argmax.size(); ++o) d[argmax[o]] += self.grad[o];
      });
}

template <typename T>
Tensor<T> sum(const Tensor<T>& x) {
  T acc = T(0);
  for (T v : x.data()) acc += v;
  return Tensor<T>::from_op(OpKind::Sum, {1}, {acc}, {x}, [](GraphNode<T>& self) {
    auto d = grad_buffer(*self.inputs[0]);
    for (auto& v : d) v += self.grad[0];
  });
}

template <typename T>
std::vector<T> softmax_rows(std::span<const T> logits, std::size_t rows, std::size_t cols) {
  std::vector<T> out(rows * cols);
  for (std::size_t r = 0; r < rows; ++r) {
    const T* z = logits.data() + r * cols;
    const T mx = *std::max_element(z, z + cols);
    T total = T(0);
    for (std::size_t j = 0; j < cols; ++j) {
      out[r * cols + j] = std::exp(z[j] - mx);
      total += out[r * cols + j];
    }
    for (std::size_t j = 0; j < cols; ++j) out[r * cols + j] /= total;
  }
  return out;
}

template <typename T>
Tensor<T> softmax_cross_entropy(const Tensor<T>& logits, std::span<const int> labels) {
  require_rank(logits, 2, "softmax_cross_entropy logits");
  const std::size_t batch = logits.dim(0), classes = logits.dim(1);
  if (labels.size() != batch) {
    throw ShapeError("softmax_cross_entropy: " + std::to_string(labels.size()) +
                     " labels for batch of " + std::to_string(batch));
  }
  for (std::size_t b = 0; b < batch; ++b) {
    if (labels[b] < 0 || static_cast<std::size_t>(labels[b]) >= classes) {
      throw ArgumentError("softmax_cross_entropy: label " + std::to_string(labels[b]) +
                          " at index " + std::to_string(b) + " outside [0, " +
                          std::to_string(classes) + ")");
    }
  }
  const auto z = logits.data();
  T loss = T(0);
  for (std::size_t b = 0; b < batch; ++b) {
    const T* row = z.data() + b * classes;
    const T mx = *std::max_element(row, row + classes);
    T total = T(0);
    for (std::size_t j = 0; j < classes; ++j) total += std::exp(row[j] - mx);
    loss += (mx + std::log(total)) - row[labels[b]];
  }
  loss /= static_cast<T>(batch);
  auto probs = softmax_rows<T>(z, batch, classes);
  std::vector<int> saved(labels.begin(), labels.end());
  return Tensor<T>::from_op(
      OpKind::CrossEntropy, {1}, {loss}, {logits},
      [probs = std::move(probs), saved = std::move(saved), batch, classes](GraphNode<T>& self) {
        auto d = grad_buffer(*self.inputs[0]);
        const T scale = self.grad[0] / static_cast<T>(batch);
        for (std::size_t b = 0; b < batch; ++b)
          for (std::size_t j = 0; j < classes; ++j) {
            const T onehot = (static_cast<int>(j) == saved[b]) ? T(1) : T(0);
            d[b * classes + j] += scale * (probs[b * classes + j] - onehot);
          }
      });
}

#define MULTIPOD_INSTANTIATE(T)                                                                \
  template Tensor<T> conv2d(const Tensor<T>&, const Tensor<T>&, int, int);                     \
  template Tensor<T> batch_norm2d(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&,       \
                                  BatchNormStats<T>&, bool, T, T);                             \
  template Tensor<T> relu(const Tensor<T>&);                                                   \
  template Tensor<T> add(const Tensor<T>&, const Tensor<T>&);                                  \
  template Tensor<T> mul(const Tensor<T>&, const Tensor<T>&);                                  \
  template Tensor<T> linear(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&);             \
  template Tensor<T> concat_linear(std::span<const Tensor<T>>, const Tensor<T>&,                \
                                   const Tensor<T>&);                                          \
  template Tensor<T> global_avg_pool(const Tensor<T>&);                                        \
  template Tensor<T> concat(std::span<const Tensor<T>>);                                       \
  template Tensor<T> slice(const Tensor<T>&, std::size_t, std::size_t);                        \
  template Tensor<T> elementwise_scale_combine(std::span<const Tensor<T>>,                     \
                                               std::span<const Tensor<T>>, CombineMode);       \
  template Tensor<T> pad2d(const Tensor<T>&, int);                                             \
  template Tensor<T> max_pool2d(const Tensor<T>&, int, int, int);                             \
  template Tensor<T> sum(const Tensor<T>&);                                                    \
  template Tensor<T> softmax_cross_entropy(const Tensor<T>&, std::span<const int>);            \
  template std::vector<T> softmax_rows(std::span<const T>, std::size_t, std::size_t);

MULTIPOD_INSTANTIATE(float)
MULTIPOD_INSTANTIATE(double)
#undef MULTIPOD_INSTANTIATE

}  // namespace multipod
