#pragma once

#include <cstddef>
#include <span>
#include <string_view>
#include <vector>

#include "multipod/tensor.hpp"

namespace multipod {

enum class CombineMode { Sum, Product };

CombineMode parse_combine_mode(std::string_view text);
std::string_view to_string(CombineMode mode);

/// Cross-correlation without bias. input B x C x H x W, weight F x C x kH x kW.
template <typename T>
Tensor<T> conv2d(const Tensor<T>& input, const Tensor<T>& weight, int stride, int padding);

/// Running statistics owned by a batch-norm layer. Empty vectors mean the
/// statistics were never initialized.
template <typename T>
struct BatchNormStats {
  std::vector<T> running_mean;
  std::vector<T> running_var;

  static BatchNormStats initialized(std::size_t channels) {
    return {std::vector<T>(channels, T(0)), std::vector<T>(channels, T(1))};
  }
  bool is_initialized() const { return !running_mean.empty() && !running_var.empty(); }
};

inline constexpr double kBatchNormEps = 1e-5;
inline constexpr double kBatchNormMomentum = 0.1;

/// Per-channel batch normalization. In training mode the batch statistics
/// (biased variance) normalize the input and the running statistics are
/// blended in as running = (1 - momentum) * running + momentum * batch, with
/// the unbiased batch variance. Eval mode normalizes with the running stats.
template <typename T>
Tensor<T> batch_norm2d(const Tensor<T>& input, const Tensor<T>& gamma, const Tensor<T>& beta,
                       BatchNormStats<T>& stats, bool training,
                       T momentum = T(kBatchNormMomentum), T eps = T(kBatchNormEps));

template <typename T>
Tensor<T> relu(const Tensor<T>& x);

template <typename T>
Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b);

template <typename T>
Tensor<T> mul(const Tensor<T>& a, const Tensor<T>& b);

/// x (B x in) * weight^T (out x in) + bias (out). bias may be undefined.
template <typename T>
Tensor<T> linear(const Tensor<T>& x, const Tensor<T>& weight, const Tensor<T>& bias);

/// B x C x H x W -> B x C.
template <typename T>
Tensor<T> global_avg_pool(const Tensor<T>& x);

/// Concatenates 2-D tensors along the feature axis (axis 1).
template <typename T>
Tensor<T> concat(std::span<const Tensor<T>> parts);

/// linear(concat(parts), weight, bias) with weight P x (sum of part widths).
/// Each part's partial product is computed separately and the k partials of
/// an output element are added in ascending order of value, so permuting the
/// parts together with their weight column blocks is bit-exact.
template <typename T>
Tensor<T> concat_linear(std::span<const Tensor<T>> parts, const Tensor<T>& weight,
                        const Tensor<T>& bias);

/// Columns [begin, end) of a 2-D tensor.
template <typename T>
Tensor<T> slice(const Tensor<T>& x, std::size_t begin, std::size_t end);

/// Combines k pod features (each B x L) after multiplying feature i by its own
/// length-L scale vector: sum or product over pods of scale_i * feature_i.
template <typename T>
Tensor<T> elementwise_scale_combine(std::span<const Tensor<T>> features,
                                    std::span<const Tensor<T>> scales, CombineMode mode);

/// Zero-pads the two spatial axes of a B x C x H x W tensor.
template <typename T>
Tensor<T> pad2d(const Tensor<T>& x, int padding);

/// Max pooling over kernel x kernel windows; padded cells never win.
template <typename T>
Tensor<T> max_pool2d(const Tensor<T>& x, int kernel, int stride, int padding);

/// Sum of all elements, shape [1].
template <typename T>
Tensor<T> sum(const Tensor<T>& x);

/// Batch-mean of -log softmax(logits)[label], computed through log-sum-exp.
template <typename T>
Tensor<T> softmax_cross_entropy(const Tensor<T>& logits, std::span<const int> labels);

/// Row-wise softmax of a B x P array (no graph).
template <typename T>
std::vector<T> softmax_rows(std::span<const T> logits, std::size_t rows, std::size_t cols);

}  // namespace multipod
