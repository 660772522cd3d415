#include "lit/dtm.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>

#include "lit/kernels.hpp"

namespace lit::dtm {

template <typename T>
TokenMergeParams<T> TokenMergeParams<T>::make(std::size_t in_channels, std::size_t out_channels, std::size_t kernel,
                                              bool deformable, Rng& rng) {
  TokenMergeParams p;
  p.conv.kernel = kernel;
  p.conv.stride = kernel;
  p.conv.weight = trunc_normal<T>({kernel, kernel, in_channels, out_channels}, rng);
  p.conv.bias = Tensor<T>(Shape{out_channels}, T(0));
  if (deformable) {
    const std::size_t oc = 2 * kernel * kernel;
    p.conv.offset_weight = Tensor<T>(Shape{kernel, kernel, in_channels, oc}, T(0));
    p.conv.offset_bias = Tensor<T>(Shape{oc}, T(0));
  }
  p.bn_gamma = Tensor<T>(Shape{out_channels}, T(1));
  p.bn_beta = Tensor<T>(Shape{out_channels}, T(0));
  p.bn = BatchNormState<T>(out_channels);
  return p;
}

template <typename T>
DeformResult<T> deformable_conv(const Tensor<T>& x, const DeformableConvParams<T>& params) {
  if (!params.deformable()) {
    return {conv2d(x, params.weight, params.bias, params.stride, 0), Tensor<T>()};
  }
  auto offsets = conv2d(x, params.offset_weight, params.offset_bias, params.stride, 0);
  auto out = deform_conv2d(x, offsets, params.weight, params.bias, params.stride, 0);
  return {out, offsets};
}

template <typename T>
Tensor<T> deformable_conv_with_offsets(const Tensor<T>& x, const Tensor<T>& offsets,
                                       const DeformableConvParams<T>& params) {
  return deform_conv2d(x, offsets, params.weight, params.bias, params.stride, 0);
}

template <typename T>
DeformResult<T> dtm_forward(const Tensor<T>& x, TokenMergeParams<T>& params, Mode mode) {
  if (x.rank() != 4) throw DimensionError("token merge: expected N×H×W×C, got " + shape_str(x.shape()));
  const std::size_t s = params.conv.stride;
  if (x.dim(1) % s != 0 || x.dim(2) % s != 0) {
    throw ConfigError("token merge: grid " + std::to_string(x.dim(1)) + "x" + std::to_string(x.dim(2)) +
                      " is not divisible by stride " + std::to_string(s));
  }
  auto dc = deformable_conv(x, params.conv);
  auto y = gelu(batch_norm(dc.out, params.bn_gamma, params.bn_beta, params.bn, mode));
  return {y, dc.offsets};
}

namespace {

template <typename T>
struct Expander {
  const OffsetTrace<T>& trace;
  std::size_t batch;
  std::vector<ImagePoint>& out;

  // Offset (dy, dx) of tap k at a fractional position on the output grid of
  // merge `level`, interpolated bilinearly; zero outside the grid.
  std::pair<double, double> offset_at(std::size_t level, double y, double x, std::size_t k) const {
    const auto& f = trace.fields[level];
    const std::size_t h = f.dim(1), w = f.dim(2), ch = f.dim(3);
    const auto p = kernels::BilinearPoint<double>::at(y, x, h, w);
    const T* base = f.data().data() + batch * h * w * ch;
    double dy = 0, dx = 0;
    for (int i = 0; i < 4; ++i) {
      if (!p.valid[i]) continue;
      dy += p.weight[i] * static_cast<double>(base[p.pixel[i] * ch + 2 * k]);
      dx += p.weight[i] * static_cast<double>(base[p.pixel[i] * ch + 2 * k + 1]);
    }
    return {dy, dx};
  }

  void expand(std::size_t level, double y, double x) {
    const std::size_t taps = trace.kernel * trace.kernel;
    for (std::size_t k = 0; k < taps; ++k) {
      const auto [dy, dx] = offset_at(level, y, x, k);
      const double sy = y * static_cast<double>(trace.stride) + static_cast<double>(k / trace.kernel) + dy;
      const double sx = x * static_cast<double>(trace.stride) + static_cast<double>(k % trace.kernel) + dx;
      if (level == 0) {
        out.push_back({sy * static_cast<double>(trace.patch), sx * static_cast<double>(trace.patch)});
      } else {
        expand(level - 1, sy, sx);
      }
    }
  }
};

}  // namespace

template <typename T>
std::vector<ImagePoint> trace_offsets(const OffsetTrace<T>& trace, std::size_t token_y, std::size_t token_x,
                                      std::size_t batch_index) {
  if (trace.empty()) throw StateError("trace_offsets: no offset fields recorded; run a forward pass first");
  for (const auto& f : trace.fields) {
    if (!f.defined()) throw StateError("trace_offsets: a merge stage has no learned offsets (uniform merge)");
  }
  const auto& last = trace.fields.back();
  if (batch_index >= last.dim(0) || token_y >= last.dim(1) || token_x >= last.dim(2)) {
    throw ValidationError("trace_offsets: token (" + std::to_string(token_y) + ", " + std::to_string(token_x) +
                          ") outside the final grid " + shape_str(last.shape()));
  }
  std::vector<ImagePoint> leaves;
  Expander<T> e{trace, batch_index, leaves};
  e.expand(trace.fields.size() - 1, static_cast<double>(token_y), static_cast<double>(token_x));
  return leaves;
}

template <typename T>
double max_grid_deviation(const OffsetTrace<T>& trace, std::size_t batch_index) {
  if (trace.empty()) throw StateError("max_grid_deviation: no offset fields recorded");
  OffsetTrace<T> regular = trace;
  for (auto& f : regular.fields) {
    if (!f.defined()) throw StateError("max_grid_deviation: a merge stage has no learned offsets");
    f = Tensor<T>(f.shape(), T(0));
  }
  const auto& last = trace.fields.back();
  double worst = 0;
  for (std::size_t y = 0; y < last.dim(1); ++y) {
    for (std::size_t x = 0; x < last.dim(2); ++x) {
      const auto a = trace_offsets(trace, y, x, batch_index);
      const auto b = trace_offsets(regular, y, x, batch_index);
      for (std::size_t i = 0; i < a.size(); ++i) {
        worst = std::max({worst, std::abs(a[i].y - b[i].y), std::abs(a[i].x - b[i].x)});
      }
    }
  }
  return worst;
}

void write_offset_csv(const std::filesystem::path& path, const std::vector<TokenTrace>& traces) {
  std::ofstream f(path);
  if (!f) throw IoError("cannot write " + path.string());
  f << "token_y,token_x,leaf_index,image_y,image_x\n";
  char buf[160];
  for (const auto& t : traces) {
    for (std::size_t i = 0; i < t.leaves.size(); ++i) {
      std::snprintf(buf, sizeof buf, "%zu,%zu,%zu,%.9g,%.9g\n", t.token_y, t.token_x, i, t.leaves[i].y,
                    t.leaves[i].x);
      f << buf;
    }
  }
}

#define LIT_INSTANTIATE(T)                                                                                 \
  template struct TokenMergeParams<T>;                                                                     \
  template DeformResult<T> deformable_conv<T>(const Tensor<T>&, const DeformableConvParams<T>&);           \
  template Tensor<T> deformable_conv_with_offsets<T>(const Tensor<T>&, const Tensor<T>&,                   \
                                                     const DeformableConvParams<T>&);                      \
  template DeformResult<T> dtm_forward<T>(const Tensor<T>&, TokenMergeParams<T>&, Mode);                   \
  template std::vector<ImagePoint> trace_offsets<T>(const OffsetTrace<T>&, std::size_t, std::size_t,       \
                                                    std::size_t);                                      \
  template double max_grid_deviation<T>(const OffsetTrace<T>&, std::size_t);
LIT_INSTANTIATE(float)
LIT_INSTANTIATE(double)
#undef LIT_INSTANTIATE

}  // namespace lit::dtm
