#pragma once

// Shared test helpers: random tensors, finite-difference gradient checks and
// straightforward loop implementations used as oracles.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <vector>

#include "lit/ops.hpp"
#include "lit/random.hpp"

namespace lit::testing {

inline Tensor<double> rand_tensor(Shape shape, std::uint64_t seed, double lo = -1.0, double hi = 1.0) {
  Rng rng(seed);
  return uniform<double>(std::move(shape), rng, lo, hi);
}

inline double max_abs_diff(std::span<const double> a, std::span<const double> b) {
  double worst = 0;
  for (std::size_t i = 0; i < a.size(); ++i) worst = std::max(worst, std::abs(a[i] - b[i]));
  return worst;
}

inline double max_abs_diff(const Tensor<double>& a, const std::vector<double>& b) {
  return max_abs_diff(a.data(), std::span<const double>(b));
}

struct GradCheck {
  std::vector<double> rel_error;  // per input tensor
  std::vector<double> analytic_norm, numeric_norm;
  double worst = 0;
};

// Compares reverse-mode gradients of sum(f(inputs) ⊙ R), R fixed random,
// against central differences with step h. Relative error per tensor is
// ‖analytic − numeric‖ / max(‖analytic‖, ‖numeric‖).
using TensorFn = std::function<Tensor<double>(const std::vector<Tensor<double>>&)>;

inline GradCheck gradcheck(const TensorFn& f, std::vector<Tensor<double>> inputs, std::uint64_t seed = 99,
                           double h = 1e-5) {
  const Shape out_shape = f(inputs).shape();
  const auto proj = rand_tensor(out_shape, seed);
  auto objective = [&]() {
    const auto out = f(inputs);
    double s = 0;
    for (std::size_t i = 0; i < out.numel(); ++i) s += out.data()[i] * proj.data()[i];
    return s;
  };

  for (auto& t : inputs) {
    t.set_requires_grad(true);
    t.zero_grad();
  }
  {
    Tape<double> tape;
    auto loss = sum(mul(f(inputs), proj));
    tape.backward(loss);
  }
  std::vector<std::vector<double>> analytic;
  for (auto& t : inputs) {
    analytic.emplace_back(t.numel(), 0.0);
    if (t.has_grad()) std::copy(t.grad().begin(), t.grad().end(), analytic.back().begin());
    t.zero_grad();
  }

  GradCheck result;
  for (std::size_t i = 0; i < inputs.size(); ++i) {
    auto values = inputs[i].mutable_data();
    double diff2 = 0, a2 = 0, n2 = 0;
    for (std::size_t j = 0; j < values.size(); ++j) {
      const double keep = values[j];
      values[j] = keep + h;
      const double up = objective();
      values[j] = keep - h;
      const double down = objective();
      values[j] = keep;
      const double numeric = (up - down) / (2 * h);
      diff2 += (analytic[i][j] - numeric) * (analytic[i][j] - numeric);
      a2 += analytic[i][j] * analytic[i][j];
      n2 += numeric * numeric;
    }
    const double scale = std::sqrt(std::max(a2, n2));
    const double rel = scale < 1e-12 ? std::sqrt(diff2) : std::sqrt(diff2) / scale;
    result.rel_error.push_back(rel);
    result.analytic_norm.push_back(std::sqrt(a2));
    result.numeric_norm.push_back(std::sqrt(n2));
    result.worst = std::max(result.worst, rel);
  }
  return result;
}

// ------------------------------------------------------------------ oracles

// Direct NHWC convolution with zero padding.
inline std::vector<double> conv2d_direct(const Tensor<double>& x, const Tensor<double>& w, const double* bias,
                                         std::size_t stride, std::size_t pad) {
  const std::size_t n = x.dim(0), h = x.dim(1), wd = x.dim(2), c = x.dim(3);
  const std::size_t k = w.dim(0), co = w.dim(3);
  const std::size_t oh = (h + 2 * pad - k) / stride + 1, ow = (wd + 2 * pad - k) / stride + 1;
  std::vector<double> out(n * oh * ow * co, 0.0);
  for (std::size_t b = 0; b < n; ++b)
    for (std::size_t oy = 0; oy < oh; ++oy)
      for (std::size_t ox = 0; ox < ow; ++ox)
        for (std::size_t o = 0; o < co; ++o) {
          double acc = bias ? bias[o] : 0.0;
          for (std::size_t ky = 0; ky < k; ++ky)
            for (std::size_t kx = 0; kx < k; ++kx) {
              const long iy = static_cast<long>(oy * stride + ky) - static_cast<long>(pad);
              const long ix = static_cast<long>(ox * stride + kx) - static_cast<long>(pad);
              if (iy < 0 || ix < 0 || iy >= static_cast<long>(h) || ix >= static_cast<long>(wd)) continue;
              for (std::size_t ci = 0; ci < c; ++ci) {
                acc += x.data()[((b * h + iy) * wd + ix) * c + ci] * w.data()[((ky * k + kx) * c + ci) * co + o];
              }
            }
          out[((b * oh + oy) * ow + ox) * co + o] = acc;
        }
  return out;
}

// Bilinear value at real (qy, qx) written as Σ_q max(0, 1−|qy−i|)·max(0, 1−|qx−j|)·x[i, j]
// over every grid point; no floor() bookkeeping.
inline double bilinear_kernel_sum(const double* img, std::size_t h, std::size_t w, std::size_t channels,
                                  std::size_t c, double qy, double qx) {
  double v = 0;
  for (std::size_t i = 0; i < h; ++i) {
    const double gy = std::max(0.0, 1.0 - std::abs(qy - static_cast<double>(i)));
    if (gy == 0) continue;
    for (std::size_t j = 0; j < w; ++j) {
      const double gx = std::max(0.0, 1.0 - std::abs(qx - static_cast<double>(j)));
      if (gx != 0) v += gy * gx * img[(i * w + j) * channels + c];
    }
  }
  return v;
}

// DC(X)_p = Σ_k X(p + g(k) + Δg(k)) W_g(k), taps k = ky·K + kx, p the
// top-left of the stride-s window (minus padding).
inline std::vector<double> deform_conv_literal(const Tensor<double>& x, const Tensor<double>& offsets,
                                               const Tensor<double>& w, const double* bias, std::size_t stride,
                                               std::size_t pad) {
  const std::size_t n = x.dim(0), h = x.dim(1), wd = x.dim(2), c = x.dim(3);
  const std::size_t k = w.dim(0), co = w.dim(3);
  const std::size_t oh = offsets.dim(1), ow = offsets.dim(2);
  std::vector<double> out(n * oh * ow * co, 0.0);
  for (std::size_t b = 0; b < n; ++b) {
    const double* img = x.data().data() + b * h * wd * c;
    for (std::size_t oy = 0; oy < oh; ++oy)
      for (std::size_t ox = 0; ox < ow; ++ox) {
        const double* off = offsets.data().data() + ((b * oh + oy) * ow + ox) * 2 * k * k;
        for (std::size_t o = 0; o < co; ++o) {
          double acc = bias ? bias[o] : 0.0;
          for (std::size_t tap = 0; tap < k * k; ++tap) {
            const double py = static_cast<double>(oy * stride) - static_cast<double>(pad) +
                              static_cast<double>(tap / k) + off[2 * tap];
            const double px = static_cast<double>(ox * stride) - static_cast<double>(pad) +
                              static_cast<double>(tap % k) + off[2 * tap + 1];
            for (std::size_t ci = 0; ci < c; ++ci) {
              acc += bilinear_kernel_sum(img, h, wd, c, ci, py, px) * w.data()[(tap * c + ci) * co + o];
            }
          }
          out[((b * oh + oy) * ow + ox) * co + o] = acc;
        }
      }
  }
  return out;
}

}  // namespace lit::testing
