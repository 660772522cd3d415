#pragma once

// Differentiable tensor primitives. Every op is a pure function of its inputs;
// when a Tape is active and some input requires gradients, the op records its
// backward closure on that tape. Every op rejects non-finite results with
// NumericError.

#include <cstddef>
#include <span>
#include <vector>

#include "lit/tensor.hpp"

namespace lit {

enum class Mode { kTrain, kEval };

inline constexpr double kLayerNormEps = 1e-5;
inline constexpr double kBatchNormEps = 1e-5;
inline constexpr double kBatchNormMomentum = 0.1;

// Running statistics of a batch-norm layer. Running variance tracks the
// unbiased batch variance; normalization in train mode uses the biased one.
template <typename T>
struct BatchNormState {
  Tensor<T> running_mean;
  Tensor<T> running_var;
  bool initialized = false;
  T momentum = T(kBatchNormMomentum);
  T eps = T(kBatchNormEps);

  BatchNormState() = default;
  explicit BatchNormState(std::size_t channels)
      : running_mean(Shape{channels}, T(0)), running_var(Shape{channels}, T(1)) {}

  // Mark (mean 0, var 1) as valid statistics so eval mode works before training.
  void seed_identity() {
    for (auto& v : running_mean.mutable_data()) v = T(0);
    for (auto& v : running_var.mutable_data()) v = T(1);
    initialized = true;
  }
};

// Structural ops
template <typename T>
Tensor<T> reshape(const Tensor<T>& x, Shape shape);
template <typename T>
Tensor<T> permute(const Tensor<T>& x, const std::vector<std::size_t>& perm);
// Drops `axis`, keeping slice `index`.
template <typename T>
Tensor<T> select(const Tensor<T>& x, std::size_t axis, std::size_t index);
// out.flat[i] = table.flat[index[i]]; gradients scatter-add into the table.
template <typename T>
Tensor<T> gather(const Tensor<T>& table, std::vector<std::size_t> index, Shape shape);

// Elementwise
// b must have a's shape or a trailing suffix of it (repeated over the leading axes).
template <typename T>
Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b);
template <typename T>
Tensor<T> mul(const Tensor<T>& a, const Tensor<T>& b);
template <typename T>
Tensor<T> scale(const Tensor<T>& x, T factor);
template <typename T>
Tensor<T> gelu(const Tensor<T>& x);

// Reductions
template <typename T>
Tensor<T> sum(const Tensor<T>& x);
template <typename T>
Tensor<T> mean_axis(const Tensor<T>& x, std::size_t axis);

// Linear algebra
template <typename T>
Tensor<T> matmul(const Tensor<T>& a, const Tensor<T>& b);
// a: B×m×k; b: B×k×n, or B×n×k when trans_b.
template <typename T>
Tensor<T> bmm(const Tensor<T>& a, const Tensor<T>& b, bool trans_b = false);
// x: ...×in, weight: in×out, bias: out (may be undefined).
template <typename T>
Tensor<T> linear(const Tensor<T>& x, const Tensor<T>& weight, const Tensor<T>& bias);

// Normalization
template <typename T>
Tensor<T> softmax(const Tensor<T>& x, std::size_t axis);
// Normalizes over the last axis.
template <typename T>
Tensor<T> layer_norm(const Tensor<T>& x, const Tensor<T>& gamma, const Tensor<T>& beta,
                     T eps = T(kLayerNormEps));
// Channel statistics over every axis but the last. Train mode updates `state`.
template <typename T>
Tensor<T> batch_norm(const Tensor<T>& x, const Tensor<T>& gamma, const Tensor<T>& beta,
                     BatchNormState<T>& state, Mode mode);

// Spatial (NHWC)
// x: N×H×W×Cin, weight: K×K×Cin×Cout, bias: Cout (may be undefined). Zero padding.
template <typename T>
Tensor<T> conv2d(const Tensor<T>& x, const Tensor<T>& weight, const Tensor<T>& bias, std::size_t stride,
                 std::size_t pad);
// x: H×W×C, loc: (y, x) → C values. Out-of-grid neighbours contribute zero.
template <typename T>
Tensor<T> bilinear_sample(const Tensor<T>& x, const Tensor<T>& loc);
// Deformable convolution. offsets: N×H'×W'×2·K·K holding (dy, dx) per tap,
// taps ordered row-major over the K×K window.
template <typename T>
Tensor<T> deform_conv2d(const Tensor<T>& x, const Tensor<T>& offsets, const Tensor<T>& weight,
                        const Tensor<T>& bias, std::size_t stride, std::size_t pad);

// Mean negative log-likelihood of `labels` under softmax(logits); logits N×K.
template <typename T>
Tensor<T> cross_entropy(const Tensor<T>& logits, std::span<const int> labels);

}  // namespace lit
