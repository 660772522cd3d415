#include "lit/ops.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <string>

#include "lit/kernels.hpp"

namespace lit {

namespace {

template <typename T>
using ImplPtr = std::shared_ptr<TensorImpl<T>>;

template <typename T>
void check_finite(const std::vector<T>& values, const char* op) {
  for (const T v : values) {
    if (!std::isfinite(v)) throw NumericError(std::string(op) + ": non-finite value produced");
  }
}

template <typename T>
Tensor<T> make_result(Shape shape, std::vector<T> values, const char* op) {
  check_finite(values, op);
  return Tensor<T>(std::move(shape), std::move(values));
}

// Active tape if any input needs gradients, otherwise nullptr.
template <typename T>
Tape<T>* recording(std::initializer_list<const Tensor<T>*> inputs) {
  auto* tape = Tape<T>::active();
  if (tape == nullptr) return nullptr;
  for (const auto* t : inputs) {
    if (t != nullptr && t->defined() && t->requires_grad()) return tape;
  }
  return nullptr;
}

template <typename T, typename Fn>
void attach(Tape<T>* tape, Tensor<T>& out, Fn&& fn) {
  out.impl().requires_grad = true;
  out.impl().tape_id = tape->id();
  tape->record(std::forward<Fn>(fn));
}

template <typename T>
bool wants_grad(const ImplPtr<T>& p) {
  return p && p->requires_grad;
}

// Splits a shape around `axis` into (outer, length, inner) extents.
struct AxisSplit {
  std::size_t outer = 1, len = 1, inner = 1;
};

AxisSplit split_axis(const Shape& s, std::size_t axis) {
  AxisSplit r;
  for (std::size_t i = 0; i < s.size(); ++i) {
    if (i < axis) r.outer *= s[i];
    else if (i == axis) r.len = s[i];
    else r.inner *= s[i];
  }
  return r;
}

void require_axis(const Shape& s, std::size_t axis, const char* op) {
  if (axis >= s.size()) {
    throw DimensionError(std::string(op) + ": axis " + std::to_string(axis) + " invalid for " + shape_str(s));
  }
}

Shape drop_axis(const Shape& s, std::size_t axis) {
  Shape out;
  for (std::size_t i = 0; i < s.size(); ++i) {
    if (i != axis) out.push_back(s[i]);
  }
  if (out.empty()) out.push_back(1);
  return out;
}

}  // namespace

// ---------------------------------------------------------------- structural

template <typename T>
Tensor<T> reshape(const Tensor<T>& x, Shape shape) {
  if (shape_numel(shape) != x.numel()) {
    throw DimensionError("reshape " + shape_str(x.shape()) + " -> " + shape_str(shape));
  }
  Tensor<T> out(std::move(shape), std::vector<T>(x.data().begin(), x.data().end()));
  if (auto* tape = recording({&x})) {
    attach(tape, out, [xi = x.handle(), oi = out.handle()] {
      if (oi->grad.empty() || !xi->requires_grad) return;
      auto& gx = xi->ensure_grad();
      for (std::size_t i = 0; i < gx.size(); ++i) gx[i] += oi->grad[i];
    });
  }
  return out;
}

template <typename T>
Tensor<T> permute(const Tensor<T>& x, const std::vector<std::size_t>& perm) {
  const Shape& in = x.shape();
  const std::size_t r = in.size();
  if (perm.size() != r) throw DimensionError("permute: rank mismatch for " + shape_str(in));
  std::vector<bool> seen(r, false);
  for (auto p : perm) {
    if (p >= r || seen[p]) throw DimensionError("permute: invalid permutation for " + shape_str(in));
    seen[p] = true;
  }
  std::vector<std::size_t> in_stride(r, 1);
  for (std::size_t i = r; i-- > 1;) in_stride[i - 1] = in_stride[i] * in[i];
  Shape out_shape(r);
  std::vector<std::size_t> src_stride(r);
  for (std::size_t i = 0; i < r; ++i) {
    out_shape[i] = in[perm[i]];
    src_stride[i] = in_stride[perm[i]];
  }
  // Flat source index for every destination element.
  std::vector<std::size_t> map(x.numel());
  std::vector<std::size_t> idx(r, 0);
  for (std::size_t flat = 0; flat < map.size(); ++flat) {
    std::size_t src = 0;
    for (std::size_t i = 0; i < r; ++i) src += idx[i] * src_stride[i];
    map[flat] = src;
    for (std::size_t i = r; i-- > 0;) {
      if (++idx[i] < out_shape[i]) break;
      idx[i] = 0;
    }
  }
  std::vector<T> values(map.size());
  for (std::size_t i = 0; i < map.size(); ++i) values[i] = x.data()[map[i]];
  Tensor<T> out(std::move(out_shape), std::move(values));
  if (auto* tape = recording({&x})) {
    attach(tape, out, [xi = x.handle(), oi = out.handle(), map = std::move(map)] {
      if (oi->grad.empty() || !xi->requires_grad) return;
      auto& gx = xi->ensure_grad();
      for (std::size_t i = 0; i < map.size(); ++i) gx[map[i]] += oi->grad[i];
    });
  }
  return out;
}

template <typename T>
Tensor<T> select(const Tensor<T>& x, std::size_t axis, std::size_t index) {
  require_axis(x.shape(), axis, "select");
  const auto s = split_axis(x.shape(), axis);
  if (index >= s.len) throw DimensionError("select: index out of range for " + shape_str(x.shape()));
  std::vector<T> values(s.outer * s.inner);
  for (std::size_t o = 0; o < s.outer; ++o) {
    for (std::size_t i = 0; i < s.inner; ++i) values[o * s.inner + i] = x.data()[(o * s.len + index) * s.inner + i];
  }
  Tensor<T> out(drop_axis(x.shape(), axis), std::move(values));
  if (auto* tape = recording({&x})) {
    attach(tape, out, [xi = x.handle(), oi = out.handle(), s, index] {
      if (oi->grad.empty() || !xi->requires_grad) return;
      auto& gx = xi->ensure_grad();
      for (std::size_t o = 0; o < s.outer; ++o) {
        for (std::size_t i = 0; i < s.inner; ++i) gx[(o * s.len + index) * s.inner + i] += oi->grad[o * s.inner + i];
      }
    });
  }
  return out;
}

template <typename T>
Tensor<T> gather(const Tensor<T>& table, std::vector<std::size_t> index, Shape shape) {
  if (shape_numel(shape) != index.size()) throw DimensionError("gather: index count does not match " + shape_str(shape));
  std::vector<T> values(index.size());
  for (std::size_t i = 0; i < index.size(); ++i) {
    if (index[i] >= table.numel()) throw DimensionError("gather: index out of range");
    values[i] = table.data()[index[i]];
  }
  Tensor<T> out(std::move(shape), std::move(values));
  if (auto* tape = recording({&table})) {
    attach(tape, out, [ti = table.handle(), oi = out.handle(), index = std::move(index)] {
      if (oi->grad.empty() || !ti->requires_grad) return;
      auto& gt = ti->ensure_grad();
      for (std::size_t i = 0; i < index.size(); ++i) gt[index[i]] += oi->grad[i];
    });
  }
  return out;
}

// --------------------------------------------------------------- elementwise

template <typename T>
Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b) {
  const Shape& sa = a.shape();
  const Shape& sb = b.shape();
  const bool suffix = sb.size() <= sa.size() && std::equal(sb.begin(), sb.end(), sa.end() - sb.size());
  if (!suffix) throw DimensionError("add: cannot broadcast " + shape_str(sb) + " onto " + shape_str(sa));
  const std::size_t inner = b.numel();
  const std::size_t outer = a.numel() / inner;
  std::vector<T> values(a.numel());
  for (std::size_t o = 0; o < outer; ++o) {
    for (std::size_t i = 0; i < inner; ++i) values[o * inner + i] = a.data()[o * inner + i] + b.data()[i];
  }
  auto out = make_result(sa, std::move(values), "add");
  if (auto* tape = recording({&a, &b})) {
    attach(tape, out, [ai = a.handle(), bi = b.handle(), oi = out.handle(), outer, inner] {
      if (oi->grad.empty()) return;
      if (ai->requires_grad) {
        auto& ga = ai->ensure_grad();
        for (std::size_t i = 0; i < ga.size(); ++i) ga[i] += oi->grad[i];
      }
      if (bi->requires_grad) {
        auto& gb = bi->ensure_grad();
        for (std::size_t o = 0; o < outer; ++o) {
          for (std::size_t i = 0; i < inner; ++i) gb[i] += oi->grad[o * inner + i];
        }
      }
    });
  }
  return out;
}

template <typename T>
Tensor<T> mul(const Tensor<T>& a, const Tensor<T>& b) {
  if (a.shape() != b.shape()) throw DimensionError("mul: " + shape_str(a.shape()) + " vs " + shape_str(b.shape()));
  std::vector<T> values(a.numel());
  for (std::size_t i = 0; i < values.size(); ++i) values[i] = a.data()[i] * b.data()[i];
  auto out = make_result(a.shape(), std::move(values), "mul");
  if (auto* tape = recording({&a, &b})) {
    attach(tape, out, [ai = a.handle(), bi = b.handle(), oi = out.handle()] {
      if (oi->grad.empty()) return;
      const auto& g = oi->grad;
      if (ai->requires_grad) {
        auto& ga = ai->ensure_grad();
        for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * bi->data[i];
      }
      if (bi->requires_grad) {
        auto& gb = bi->ensure_grad();
        for (std::size_t i = 0; i < g.size(); ++i) gb[i] += g[i] * ai->data[i];
      }
    });
  }
  return out;
}

template <typename T>
Tensor<T> scale(const Tensor<T>& x, T factor) {
  std::vector<T> values(x.numel());
  for (std::size_t i = 0; i < values.size(); ++i) values[i] = x.data()[i] * factor;
  auto out = make_result(x.shape(), std::move(values), "scale");
  if (auto* tape = recording({&x})) {
    attach(tape, out, [xi = x.handle(), oi = out.handle(), factor] {
      if (oi->grad.empty() || !xi->requires_grad) return;
      auto& gx = xi->ensure_grad();
      for (std::size_t i = 0; i < gx.size(); ++i) gx[i] += oi->grad[i] * factor;
    });
  }
  return out;
}

template <typename T>
Tensor<T> gelu(const Tensor<T>& x) {
  const T inv_sqrt2 = T(1) / std::sqrt(T(2));
  std::vector<T> values(x.numel());
  for (std::size_t i = 0; i < values.size(); ++i) {
    const T v = x.data()[i];
    values[i] = T(0.5) * v * (T(1) + std::erf(v * inv_sqrt2));
  }
  auto out = make_result(x.shape(), std::move(values), "gelu");
  if (auto* tape = recording({&x})) {
    attach(tape, out, [xi = x.handle(), oi = out.handle(), inv_sqrt2] {
      if (oi->grad.empty() || !xi->requires_grad) return;
      const T inv_sqrt_2pi = T(1) / std::sqrt(T(2) * std::numbers::pi_v<T>);
      auto& gx = xi->ensure_grad();
      for (std::size_t i = 0; i < gx.size(); ++i) {
        const T v = xi->data[i];
        const T cdf = T(0.5) * (T(1) + std::erf(v * inv_sqrt2));
        const T pdf = inv_sqrt_2pi * std::exp(T(-0.5) * v * v);
        gx[i] += oi->grad[i] * (cdf + v * pdf);
      }
    });
  }
  return out;
}

// ---------------------------------------------------------------- reductions

template <typename T>
Tensor<T> sum(const Tensor<T>& x) {
  T total = 0;
  for (const T v : x.data()) total += v;
  auto out = make_result(Shape{1}, std::vector<T>{total}, "sum");
  if (auto* tape = recording({&x})) {
    attach(tape, out, [xi = x.handle(), oi = out.handle()] {
      if (oi->grad.empty() || !xi->requires_grad) return;
      auto& gx = xi->ensure_grad();
      for (auto& g : gx) g += oi->grad[0];
    });
  }
  return out;
}

template <typename T>
Tensor<T> mean_axis(const Tensor<T>& x, std::size_t axis) {
  require_axis(x.shape(), axis, "mean_axis");
  const auto s = split_axis(x.shape(), axis);
  std::vector<T> values(s.outer * s.inner, T(0));
  for (std::size_t o = 0; o < s.outer; ++o) {
    for (std::size_t l = 0; l < s.len; ++l) {
      for (std::size_t i = 0; i < s.inner; ++i) values[o * s.inner + i] += x.data()[(o * s.len + l) * s.inner + i];
    }
  }
  for (auto& v : values) v /= static_cast<T>(s.len);
  auto out = make_result(drop_axis(x.shape(), axis), std::move(values), "mean_axis");
  if (auto* tape = recording({&x})) {
    attach(tape, out, [xi = x.handle(), oi = out.handle(), s] {
      if (oi->grad.empty() || !xi->requires_grad) return;
      auto& gx = xi->ensure_grad();
      const T inv = T(1) / static_cast<T>(s.len);
      for (std::size_t o = 0; o < s.outer; ++o) {
        for (std::size_t l = 0; l < s.len; ++l) {
          for (std::size_t i = 0; i < s.inner; ++i) gx[(o * s.len + l) * s.inner + i] += oi->grad[o * s.inner + i] * inv;
        }
      }
    });
  }
  return out;
}

// ------------------------------------------------------------ linear algebra

template <typename T>
Tensor<T> matmul(const Tensor<T>& a, const Tensor<T>& b) {
  if (a.rank() != 2 || b.rank() != 2 || a.dim(1) != b.dim(0)) {
    throw DimensionError("matmul: " + shape_str(a.shape()) + " x " + shape_str(b.shape()));
  }
  const std::size_t m = a.dim(0), k = a.dim(1), n = b.dim(1);
  std::vector<T> values(m * n);
  kernels::gemm<T>(false, false, m, n, k, a.data(), b.data(), values, false);
  auto out = make_result(Shape{m, n}, std::move(values), "matmul");
  if (auto* tape = recording({&a, &b})) {
    attach(tape, out, [ai = a.handle(), bi = b.handle(), oi = out.handle(), m, k, n] {
      if (oi->grad.empty()) return;
      if (ai->requires_grad) kernels::gemm<T>(false, true, m, k, n, oi->grad, bi->data, ai->ensure_grad(), true);
      if (bi->requires_grad) kernels::gemm<T>(true, false, k, n, m, ai->data, oi->grad, bi->ensure_grad(), true);
    });
  }
  return out;
}

template <typename T>
Tensor<T> bmm(const Tensor<T>& a, const Tensor<T>& b, bool trans_b) {
  if (a.rank() != 3 || b.rank() != 3 || a.dim(0) != b.dim(0) || a.dim(2) != (trans_b ? b.dim(2) : b.dim(1))) {
    throw DimensionError("bmm: " + shape_str(a.shape()) + " x " + shape_str(b.shape()) + (trans_b ? "^T" : ""));
  }
  const std::size_t batch = a.dim(0), m = a.dim(1), k = a.dim(2);
  const std::size_t n = trans_b ? b.dim(1) : b.dim(2);
  std::vector<T> values(batch * m * n);
  for (std::size_t i = 0; i < batch; ++i) {
    kernels::gemm<T>(false, trans_b, m, n, k, a.data().subspan(i * m * k, m * k), b.data().subspan(i * k * n, k * n),
                     std::span<T>(values).subspan(i * m * n, m * n), false);
  }
  auto out = make_result(Shape{batch, m, n}, std::move(values), "bmm");
  if (auto* tape = recording({&a, &b})) {
    attach(tape, out, [ai = a.handle(), bi = b.handle(), oi = out.handle(), batch, m, k, n, trans_b] {
      if (oi->grad.empty()) return;
      const std::span<const T> g = oi->grad;
      for (std::size_t i = 0; i < batch; ++i) {
        const auto gi = g.subspan(i * m * n, m * n);
        const std::span<const T> av(ai->data.data() + i * m * k, m * k);
        const std::span<const T> bv(bi->data.data() + i * k * n, k * n);
        if (ai->requires_grad) {
          // dA = G · op(B)^T
          std::span<T> ga(ai->ensure_grad().data() + i * m * k, m * k);
          kernels::gemm<T>(false, !trans_b, m, k, n, gi, bv, ga, true);
        }
        if (bi->requires_grad) {
          std::span<T> gb(bi->ensure_grad().data() + i * k * n, k * n);
          if (trans_b) {
            kernels::gemm<T>(true, false, n, k, m, gi, av, gb, true);  // dB (n×k) = G^T · A
          } else {
            kernels::gemm<T>(true, false, k, n, m, av, gi, gb, true);  // dB (k×n) = A^T · G
          }
        }
      }
    });
  }
  return out;
}

template <typename T>
Tensor<T> linear(const Tensor<T>& x, const Tensor<T>& weight, const Tensor<T>& bias) {
  if (weight.rank() != 2 || x.shape().back() != weight.dim(0)) {
    throw DimensionError("linear: input " + shape_str(x.shape()) + " vs weight " + shape_str(weight.shape()));
  }
  const std::size_t in = weight.dim(0), outc = weight.dim(1);
  if (bias.defined() && (bias.rank() != 1 || bias.dim(0) != outc)) {
    throw DimensionError("linear: bias " + shape_str(bias.shape()) + " for " + std::to_string(outc) + " outputs");
  }
  const std::size_t rows = x.numel() / in;
  std::vector<T> values(rows * outc);
  kernels::gemm<T>(false, false, rows, outc, in, x.data(), weight.data(), values, false);
  if (bias.defined()) {
    for (std::size_t r = 0; r < rows; ++r) {
      for (std::size_t j = 0; j < outc; ++j) values[r * outc + j] += bias.data()[j];
    }
  }
  Shape shape = x.shape();
  shape.back() = outc;
  auto out = make_result(std::move(shape), std::move(values), "linear");
  if (auto* tape = recording({&x, &weight, &bias})) {
    attach(tape, out, [xi = x.handle(), wi = weight.handle(), bi = bias.handle(), oi = out.handle(), rows, in, outc] {
      if (oi->grad.empty()) return;
      if (xi->requires_grad) kernels::gemm<T>(false, true, rows, in, outc, oi->grad, wi->data, xi->ensure_grad(), true);
      if (wi->requires_grad) kernels::gemm<T>(true, false, in, outc, rows, xi->data, oi->grad, wi->ensure_grad(), true);
      if (wants_grad(bi)) {
        auto& gb = bi->ensure_grad();
        for (std::size_t r = 0; r < rows; ++r) {
          for (std::size_t j = 0; j < outc; ++j) gb[j] += oi->grad[r * outc + j];
        }
      }
    });
  }
  return out;
}

// ------------------------------------------------------------- normalization

template <typename T>
Tensor<T> softmax(const Tensor<T>& x, std::size_t axis) {
  require_axis(x.shape(), axis, "softmax");
  for (const T v : x.data()) {
    if (!std::isfinite(v)) throw NumericError("softmax: non-finite input");
  }
  const auto s = split_axis(x.shape(), axis);
  std::vector<T> values(x.numel());
  for (std::size_t o = 0; o < s.outer; ++o) {
    for (std::size_t i = 0; i < s.inner; ++i) {
      const std::size_t base = o * s.len * s.inner + i;
      T mx = x.data()[base];
      for (std::size_t l = 1; l < s.len; ++l) mx = std::max(mx, x.data()[base + l * s.inner]);
      T denom = 0;
      for (std::size_t l = 0; l < s.len; ++l) {
        const T e = std::exp(x.data()[base + l * s.inner] - mx);
        values[base + l * s.inner] = e;
        denom += e;
      }
      for (std::size_t l = 0; l < s.len; ++l) values[base + l * s.inner] /= denom;
    }
  }
  auto out = make_result(x.shape(), std::move(values), "softmax");
  if (auto* tape = recording({&x})) {
    attach(tape, out, [xi = x.handle(), oi = out.handle(), s] {
      if (oi->grad.empty() || !xi->requires_grad) return;
      auto& gx = xi->ensure_grad();
      const auto& y = oi->data;
      const auto& g = oi->grad;
      for (std::size_t o = 0; o < s.outer; ++o) {
        for (std::size_t i = 0; i < s.inner; ++i) {
          const std::size_t base = o * s.len * s.inner + i;
          T dot = 0;
          for (std::size_t l = 0; l < s.len; ++l) dot += g[base + l * s.inner] * y[base + l * s.inner];
          for (std::size_t l = 0; l < s.len; ++l) {
            const std::size_t j = base + l * s.inner;
            gx[j] += y[j] * (g[j] - dot);
          }
        }
      }
    });
  }
  return out;
}

template <typename T>
Tensor<T> layer_norm(const Tensor<T>& x, const Tensor<T>& gamma, const Tensor<T>& beta, T eps) {
  const std::size_t c = x.shape().back();
  if (gamma.numel() != c || beta.numel() != c) {
    throw DimensionError("layer_norm: affine params must have " + std::to_string(c) + " entries");
  }
  const std::size_t rows = x.numel() / c;
  std::vector<T> xhat(x.numel());
  std::vector<T> rstd(rows);
  std::vector<T> values(x.numel());
  for (std::size_t r = 0; r < rows; ++r) {
    const T* row = x.data().data() + r * c;
    T mean = 0;
    for (std::size_t j = 0; j < c; ++j) mean += row[j];
    mean /= static_cast<T>(c);
    T var = 0;
    for (std::size_t j = 0; j < c; ++j) var += (row[j] - mean) * (row[j] - mean);
    var /= static_cast<T>(c);
    rstd[r] = T(1) / std::sqrt(var + eps);
    for (std::size_t j = 0; j < c; ++j) {
      xhat[r * c + j] = (row[j] - mean) * rstd[r];
      values[r * c + j] = xhat[r * c + j] * gamma.data()[j] + beta.data()[j];
    }
  }
  auto out = make_result(x.shape(), std::move(values), "layer_norm");
  if (auto* tape = recording({&x, &gamma, &beta})) {
    attach(tape, out,
           [xi = x.handle(), gi = gamma.handle(), bi = beta.handle(), oi = out.handle(), xhat = std::move(xhat),
            rstd = std::move(rstd), rows, c] {
             if (oi->grad.empty()) return;
             const auto& g = oi->grad;
             if (gi->requires_grad || bi->requires_grad) {
               auto& gg = gi->ensure_grad();
               auto& gb = bi->ensure_grad();
               for (std::size_t r = 0; r < rows; ++r) {
                 for (std::size_t j = 0; j < c; ++j) {
                   gg[j] += g[r * c + j] * xhat[r * c + j];
                   gb[j] += g[r * c + j];
                 }
               }
             }
             if (!xi->requires_grad) return;
             auto& gx = xi->ensure_grad();
             for (std::size_t r = 0; r < rows; ++r) {
               T mean_g = 0, mean_gx = 0;
               for (std::size_t j = 0; j < c; ++j) {
                 const T gh = g[r * c + j] * gi->data[j];
                 mean_g += gh;
                 mean_gx += gh * xhat[r * c + j];
               }
               mean_g /= static_cast<T>(c);
               mean_gx /= static_cast<T>(c);
               for (std::size_t j = 0; j < c; ++j) {
                 const T gh = g[r * c + j] * gi->data[j];
                 gx[r * c + j] += rstd[r] * (gh - mean_g - xhat[r * c + j] * mean_gx);
               }
             }
           });
  }
  return out;
}

template <typename T>
Tensor<T> batch_norm(const Tensor<T>& x, const Tensor<T>& gamma, const Tensor<T>& beta, BatchNormState<T>& state,
                     Mode mode) {
  const std::size_t c = x.shape().back();
  if (gamma.numel() != c || beta.numel() != c || state.running_mean.numel() != c) {
    throw DimensionError("batch_norm: parameters must have " + std::to_string(c) + " channels");
  }
  const std::size_t rows = x.numel() / c;
  std::vector<T> mean(c, T(0)), var(c, T(0));
  if (mode == Mode::kTrain) {
    if (rows < 2) throw NumericError("batch_norm: train mode needs more than one value per channel");
    for (std::size_t r = 0; r < rows; ++r) {
      for (std::size_t j = 0; j < c; ++j) mean[j] += x.data()[r * c + j];
    }
    for (auto& m : mean) m /= static_cast<T>(rows);
    for (std::size_t r = 0; r < rows; ++r) {
      for (std::size_t j = 0; j < c; ++j) {
        const T d = x.data()[r * c + j] - mean[j];
        var[j] += d * d;
      }
    }
    for (auto& v : var) v /= static_cast<T>(rows);
    auto rm = state.running_mean.mutable_data();
    auto rv = state.running_var.mutable_data();
    if (!state.initialized) {
      std::fill(rm.begin(), rm.end(), T(0));
      std::fill(rv.begin(), rv.end(), T(1));
      state.initialized = true;
    }
    const T unbias = static_cast<T>(rows) / static_cast<T>(rows - 1);
    for (std::size_t j = 0; j < c; ++j) {
      rm[j] = (T(1) - state.momentum) * rm[j] + state.momentum * mean[j];
      rv[j] = (T(1) - state.momentum) * rv[j] + state.momentum * var[j] * unbias;
    }
  } else {
    if (!state.initialized) throw StateError("batch_norm: eval mode before running statistics exist");
    std::copy(state.running_mean.data().begin(), state.running_mean.data().end(), mean.begin());
    std::copy(state.running_var.data().begin(), state.running_var.data().end(), var.begin());
  }
  std::vector<T> rstd(c);
  for (std::size_t j = 0; j < c; ++j) rstd[j] = T(1) / std::sqrt(var[j] + state.eps);
  std::vector<T> xhat(x.numel());
  std::vector<T> values(x.numel());
  for (std::size_t r = 0; r < rows; ++r) {
    for (std::size_t j = 0; j < c; ++j) {
      const std::size_t i = r * c + j;
      xhat[i] = (x.data()[i] - mean[j]) * rstd[j];
      values[i] = xhat[i] * gamma.data()[j] + beta.data()[j];
    }
  }
  auto out = make_result(x.shape(), std::move(values), "batch_norm");
  if (auto* tape = recording({&x, &gamma, &beta})) {
    attach(tape, out,
           [xi = x.handle(), gi = gamma.handle(), bi = beta.handle(), oi = out.handle(), xhat = std::move(xhat),
            rstd = std::move(rstd), rows, c, train = mode == Mode::kTrain] {
             if (oi->grad.empty()) return;
             const auto& g = oi->grad;
             if (gi->requires_grad || bi->requires_grad) {
               auto& gg = gi->ensure_grad();
               auto& gb = bi->ensure_grad();
               for (std::size_t r = 0; r < rows; ++r) {
                 for (std::size_t j = 0; j < c; ++j) {
                   gg[j] += g[r * c + j] * xhat[r * c + j];
                   gb[j] += g[r * c + j];
                 }
               }
             }
             if (!xi->requires_grad) return;
             auto& gx = xi->ensure_grad();
             if (!train) {
               for (std::size_t r = 0; r < rows; ++r) {
                 for (std::size_t j = 0; j < c; ++j) gx[r * c + j] += g[r * c + j] * gi->data[j] * rstd[j];
               }
               return;
             }
             std::vector<T> mean_g(c, T(0)), mean_gx(c, T(0));
             for (std::size_t r = 0; r < rows; ++r) {
               for (std::size_t j = 0; j < c; ++j) {
                 mean_g[j] += g[r * c + j];
                 mean_gx[j] += g[r * c + j] * xhat[r * c + j];
               }
             }
             for (std::size_t j = 0; j < c; ++j) {
               mean_g[j] /= static_cast<T>(rows);
               mean_gx[j] /= static_cast<T>(rows);
             }
             for (std::size_t r = 0; r < rows; ++r) {
               for (std::size_t j = 0; j < c; ++j) {
                 const std::size_t i = r * c + j;
                 gx[i] += gi->data[j] * rstd[j] * (g[i] - mean_g[j] - xhat[i] * mean_gx[j]);
               }
             }
           });
  }
  return out;
}

// ------------------------------------------------------------------- spatial

namespace {

template <typename T>
kernels::ConvGeometry conv_geometry(const Tensor<T>& x, const Tensor<T>& weight, const Tensor<T>& bias,
                                    std::size_t stride, std::size_t pad, const char* op) {
  if (x.rank() != 4) throw DimensionError(std::string(op) + ": input must be NxHxWxC, got " + shape_str(x.shape()));
  if (weight.rank() != 4 || weight.dim(0) != weight.dim(1) || weight.dim(2) != x.dim(3)) {
    throw DimensionError(std::string(op) + ": weight " + shape_str(weight.shape()) + " incompatible with input " +
                         shape_str(x.shape()));
  }
  if (bias.defined() && (bias.rank() != 1 || bias.dim(0) != weight.dim(3))) {
    throw DimensionError(std::string(op) + ": bias " + shape_str(bias.shape()));
  }
  return kernels::ConvGeometry::make(x.dim(0), x.dim(1), x.dim(2), x.dim(3), weight.dim(0), stride, pad);
}

// out = cols · W + bias, shared by conv2d and deform_conv2d.
template <typename T>
std::vector<T> project_columns(const kernels::ConvGeometry& g, const std::vector<T>& cols, const Tensor<T>& weight,
                               const Tensor<T>& bias) {
  const std::size_t cout = weight.dim(3);
  std::vector<T> values(g.rows() * cout);
  kernels::gemm<T>(false, false, g.rows(), cout, g.cols(), cols, weight.data(), values, false);
  if (bias.defined()) {
    for (std::size_t r = 0; r < g.rows(); ++r) {
      for (std::size_t j = 0; j < cout; ++j) values[r * cout + j] += bias.data()[j];
    }
  }
  return values;
}

// Backward through out = cols · W + bias; returns d cols when requested.
template <typename T>
std::vector<T> project_columns_backward(const kernels::ConvGeometry& g, const std::vector<T>& cols,
                                        const std::vector<T>& gout, TensorImpl<T>& w, TensorImpl<T>* b,
                                        bool need_gcols) {
  const std::size_t cout = w.shape[3];
  if (w.requires_grad) kernels::gemm<T>(true, false, g.cols(), cout, g.rows(), cols, gout, w.ensure_grad(), true);
  if (b != nullptr && b->requires_grad) {
    auto& gb = b->ensure_grad();
    for (std::size_t r = 0; r < g.rows(); ++r) {
      for (std::size_t j = 0; j < cout; ++j) gb[j] += gout[r * cout + j];
    }
  }
  std::vector<T> gcols;
  if (need_gcols) {
    gcols.resize(g.rows() * g.cols());
    kernels::gemm<T>(false, true, g.rows(), g.cols(), cout, gout, w.data, gcols, false);
  }
  return gcols;
}

}  // namespace

template <typename T>
Tensor<T> conv2d(const Tensor<T>& x, const Tensor<T>& weight, const Tensor<T>& bias, std::size_t stride,
                 std::size_t pad) {
  const auto g = conv_geometry(x, weight, bias, stride, pad, "conv2d");
  std::vector<T> cols(g.rows() * g.cols());
  kernels::im2col<T>(g, x.data(), cols);
  auto out = make_result(Shape{g.batch, g.out_h, g.out_w, weight.dim(3)}, project_columns(g, cols, weight, bias),
                         "conv2d");
  if (auto* tape = recording({&x, &weight, &bias})) {
    attach(tape, out,
           [xi = x.handle(), wi = weight.handle(), bi = bias.handle(), oi = out.handle(), g, cols = std::move(cols)] {
             if (oi->grad.empty()) return;
             auto gcols = project_columns_backward(g, cols, oi->grad, *wi, bi.get(), xi->requires_grad);
             if (xi->requires_grad) kernels::col2im<T>(g, gcols, xi->ensure_grad());
           });
  }
  return out;
}

template <typename T>
Tensor<T> bilinear_sample(const Tensor<T>& x, const Tensor<T>& loc) {
  if (x.rank() != 3) throw DimensionError("bilinear_sample: input must be HxWxC, got " + shape_str(x.shape()));
  if (loc.numel() != 2) throw DimensionError("bilinear_sample: location must hold (y, x)");
  const T y = loc.data()[0], xx = loc.data()[1];
  if (!std::isfinite(y) || !std::isfinite(xx)) throw NumericError("bilinear_sample: non-finite location");
  const std::size_t h = x.dim(0), w = x.dim(1), c = x.dim(2);
  const auto p = kernels::BilinearPoint<T>::at(y, xx, h, w);
  std::vector<T> values(c);
  p.gather(x.data().data(), c, values.data());
  auto out = make_result(Shape{c}, std::move(values), "bilinear_sample");
  if (auto* tape = recording({&x, &loc})) {
    attach(tape, out, [xi = x.handle(), li = loc.handle(), oi = out.handle(), p, c] {
      if (oi->grad.empty()) return;
      if (xi->requires_grad) p.scatter(xi->ensure_grad().data(), c, oi->grad.data());
      if (li->requires_grad) {
        T gy, gx;
        p.location_grad(xi->data.data(), c, oi->grad.data(), gy, gx);
        auto& gl = li->ensure_grad();
        gl[0] += gy;
        gl[1] += gx;
      }
    });
  }
  return out;
}

template <typename T>
Tensor<T> deform_conv2d(const Tensor<T>& x, const Tensor<T>& offsets, const Tensor<T>& weight, const Tensor<T>& bias,
                        std::size_t stride, std::size_t pad) {
  const auto g = conv_geometry(x, weight, bias, stride, pad, "deform_conv2d");
  const Shape expect{g.batch, g.out_h, g.out_w, 2 * g.taps()};
  if (offsets.shape() != expect) {
    throw DimensionError("deform_conv2d: offsets " + shape_str(offsets.shape()) + ", expected " + shape_str(expect));
  }
  for (const T v : offsets.data()) {
    if (!std::isfinite(v)) throw NumericError("deform_conv2d: non-finite offset");
  }
  std::vector<T> cols(g.rows() * g.cols());
  kernels::deform_im2col<T>(g, x.data(), offsets.data(), cols);
  auto out = make_result(Shape{g.batch, g.out_h, g.out_w, weight.dim(3)}, project_columns(g, cols, weight, bias),
                         "deform_conv2d");
  if (auto* tape = recording({&x, &offsets, &weight, &bias})) {
    attach(tape, out,
           [xi = x.handle(), fi = offsets.handle(), wi = weight.handle(), bi = bias.handle(), oi = out.handle(), g,
            cols = std::move(cols)] {
             if (oi->grad.empty()) return;
             const bool need = xi->requires_grad || fi->requires_grad;
             auto gcols = project_columns_backward(g, cols, oi->grad, *wi, bi.get(), need);
             if (!need) return;
             std::span<T> gx, goff;
             if (xi->requires_grad) gx = xi->ensure_grad();
             if (fi->requires_grad) goff = fi->ensure_grad();
             kernels::deform_col2im<T>(g, xi->data, fi->data, gcols, gx, goff);
           });
  }
  return out;
}

// -------------------------------------------------------------------- losses

template <typename T>
Tensor<T> cross_entropy(const Tensor<T>& logits, std::span<const int> labels) {
  if (logits.rank() != 2 || logits.dim(0) != labels.size()) {
    throw DimensionError("cross_entropy: logits " + shape_str(logits.shape()) + " for " +
                         std::to_string(labels.size()) + " labels");
  }
  const std::size_t n = logits.dim(0), k = logits.dim(1);
  std::vector<T> probs(n * k);
  T loss = 0;
  for (std::size_t i = 0; i < n; ++i) {
    if (labels[i] < 0 || static_cast<std::size_t>(labels[i]) >= k) {
      throw ValidationError("cross_entropy: label " + std::to_string(labels[i]) + " out of range");
    }
    const T* row = logits.data().data() + i * k;
    const T mx = *std::max_element(row, row + k);
    T denom = 0;
    for (std::size_t j = 0; j < k; ++j) {
      probs[i * k + j] = std::exp(row[j] - mx);
      denom += probs[i * k + j];
    }
    for (std::size_t j = 0; j < k; ++j) probs[i * k + j] /= denom;
    loss += mx + std::log(denom) - row[labels[i]];
  }
  loss /= static_cast<T>(n);
  auto out = make_result(Shape{1}, std::vector<T>{loss}, "cross_entropy");
  if (auto* tape = recording({&logits})) {
    std::vector<int> lab(labels.begin(), labels.end());
    attach(tape, out, [li = logits.handle(), oi = out.handle(), probs = std::move(probs), lab = std::move(lab), n, k] {
      if (oi->grad.empty() || !li->requires_grad) return;
      auto& gl = li->ensure_grad();
      const T s = oi->grad[0] / static_cast<T>(n);
      for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t j = 0; j < k; ++j) {
          const T target = static_cast<std::size_t>(lab[i]) == j ? T(1) : T(0);
          gl[i * k + j] += s * (probs[i * k + j] - target);
        }
      }
    });
  }
  return out;
}

#define LIT_INSTANTIATE(T)                                                                                     \
  template Tensor<T> reshape<T>(const Tensor<T>&, Shape);                                                      \
  template Tensor<T> permute<T>(const Tensor<T>&, const std::vector<std::size_t>&);                            \
  template Tensor<T> select<T>(const Tensor<T>&, std::size_t, std::size_t);                                    \
  template Tensor<T> gather<T>(const Tensor<T>&, std::vector<std::size_t>, Shape);                             \
  template Tensor<T> add<T>(const Tensor<T>&, const Tensor<T>&);                                               \
  template Tensor<T> mul<T>(const Tensor<T>&, const Tensor<T>&);                                               \
  template Tensor<T> scale<T>(const Tensor<T>&, T);                                                            \
  template Tensor<T> gelu<T>(const Tensor<T>&);                                                                \
  template Tensor<T> sum<T>(const Tensor<T>&);                                                                 \
  template Tensor<T> mean_axis<T>(const Tensor<T>&, std::size_t);                                              \
  template Tensor<T> matmul<T>(const Tensor<T>&, const Tensor<T>&);                                            \
  template Tensor<T> bmm<T>(const Tensor<T>&, const Tensor<T>&, bool);                                         \
  template Tensor<T> linear<T>(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&);                          \
  template Tensor<T> softmax<T>(const Tensor<T>&, std::size_t);                                                \
  template Tensor<T> layer_norm<T>(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&, T);                   \
  template Tensor<T> batch_norm<T>(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&, BatchNormState<T>&,   \
                                   Mode);                                                                      \
  template Tensor<T> conv2d<T>(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&, std::size_t, std::size_t); \
  template Tensor<T> bilinear_sample<T>(const Tensor<T>&, const Tensor<T>&);                                   \
  template Tensor<T> deform_conv2d<T>(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&, const Tensor<T>&,  \
                                      std::size_t, std::size_t);                                               \
  template Tensor<T> cross_entropy<T>(const Tensor<T>&, std::span<const int>);
LIT_INSTANTIATE(float)
LIT_INSTANTIATE(double)
#undef LIT_INSTANTIATE

}  // namespace lit
