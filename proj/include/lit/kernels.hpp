#pragma once

// Hot numeric loops behind the tensor ops. Every kernel exists twice: a
// serial reference in lit::kernels::serial and an OpenMP version in
// lit::kernels::parallel. The parallel versions split work only across
// independent outputs and keep each output's accumulation order identical to
// the serial loop, so the two produce bit-identical results.

#include <cmath>
#include <cstddef>
#include <cstdint>
#include <span>

namespace lit::kernels {

enum class Backend { kSerial, kParallel };

void set_backend(Backend backend);
Backend backend();

// Counts multiply-accumulates issued through the dispatching kernels on this
// thread while alive. Used to cross-check the static FLOP model.
class MacScope {
 public:
  MacScope();
  ~MacScope();
  MacScope(const MacScope&) = delete;
  MacScope& operator=(const MacScope&) = delete;

  std::uint64_t count() const { return count_; }
  void add(std::uint64_t macs) { count_ += macs; }

  static MacScope* current();

 private:
  std::uint64_t count_ = 0;
  MacScope* previous_;
};

// Sliding-window geometry for a K×K convolution over NHWC input.
struct ConvGeometry {
  std::size_t batch = 0, in_h = 0, in_w = 0, in_c = 0;
  std::size_t kernel = 1, stride = 1, pad = 0;
  std::size_t out_h = 0, out_w = 0;

  // Throws DimensionError when the window does not fit.
  static ConvGeometry make(std::size_t batch, std::size_t in_h, std::size_t in_w, std::size_t in_c,
                           std::size_t kernel, std::size_t stride, std::size_t pad);

  std::size_t rows() const { return batch * out_h * out_w; }
  std::size_t cols() const { return kernel * kernel * in_c; }
  std::size_t taps() const { return kernel * kernel; }
};

// Corner bookkeeping for bilinear sampling at fractional (y, x) on an H×W
// grid. Corners are ordered (y0,x0), (y0,x1), (y1,x0), (y1,x1); corners
// outside the grid are invalid and contribute zero.
template <typename T>
struct BilinearPoint {
  T ly = 0, lx = 0;
  T weight[4] = {0, 0, 0, 0};
  bool valid[4] = {false, false, false, false};
  std::size_t pixel[4] = {0, 0, 0, 0};

  static BilinearPoint at(T y, T x, std::size_t height, std::size_t width) {
    BilinearPoint p;
    const T fy = std::floor(y);
    const T fx = std::floor(x);
    p.ly = y - fy;
    p.lx = x - fx;
    const long y0 = static_cast<long>(fy);
    const long x0 = static_cast<long>(fx);
    const long ys[4] = {y0, y0, y0 + 1, y0 + 1};
    const long xs[4] = {x0, x0 + 1, x0, x0 + 1};
    const T wy[4] = {1 - p.ly, 1 - p.ly, p.ly, p.ly};
    const T wx[4] = {1 - p.lx, p.lx, 1 - p.lx, p.lx};
    for (int i = 0; i < 4; ++i) {
      p.weight[i] = wy[i] * wx[i];
      p.valid[i] = ys[i] >= 0 && xs[i] >= 0 && ys[i] < static_cast<long>(height) &&
                   xs[i] < static_cast<long>(width);
      if (p.valid[i]) p.pixel[i] = static_cast<std::size_t>(ys[i]) * width + static_cast<std::size_t>(xs[i]);
    }
    return p;
  }

  // out[c] = sum_i weight_i * img[pixel_i, c]
  void gather(const T* img, std::size_t channels, T* out) const {
    for (std::size_t c = 0; c < channels; ++c) out[c] = T(0);
    for (int i = 0; i < 4; ++i) {
      if (!valid[i]) continue;
      const T* v = img + pixel[i] * channels;
      for (std::size_t c = 0; c < channels; ++c) out[c] += weight[i] * v[c];
    }
  }

  // dimg[pixel_i, c] += weight_i * gout[c]
  void scatter(T* dimg, std::size_t channels, const T* gout) const {
    for (int i = 0; i < 4; ++i) {
      if (!valid[i]) continue;
      T* d = dimg + pixel[i] * channels;
      for (std::size_t c = 0; c < channels; ++c) d[c] += weight[i] * gout[c];
    }
  }

  // Gradient of sum_c gout[c] * sample[c] with respect to (y, x).
  void location_grad(const T* img, std::size_t channels, const T* gout, T& dy, T& dx) const {
    const T dwy[4] = {-(1 - lx), -lx, 1 - lx, lx};
    const T dwx[4] = {-(1 - ly), 1 - ly, -ly, ly};
    dy = T(0);
    dx = T(0);
    for (int i = 0; i < 4; ++i) {
      if (!valid[i]) continue;
      const T* v = img + pixel[i] * channels;
      T dot = 0;
      for (std::size_t c = 0; c < channels; ++c) dot += gout[c] * v[c];
      dy += dwy[i] * dot;
      dx += dwx[i] * dot;
    }
  }
};

#define LIT_KERNEL_DECLS                                                                         \
  /* c[m×n] (+)= op(a)[m×k] · op(b)[k×n]; a is k×m when trans_a, b is n×k when trans_b. */       \
  template <typename T>                                                                          \
  void gemm(bool trans_a, bool trans_b, std::size_t m, std::size_t n, std::size_t k,             \
            std::span<const T> a, std::span<const T> b, std::span<T> c, bool accumulate);        \
  /* cols[rows × K·K·Cin], row = (n, oy, ox), column = (ky, kx, ci). Zero padding. */            \
  template <typename T>                                                                          \
  void im2col(const ConvGeometry& g, std::span<const T> x, std::span<T> cols);                   \
  /* dx += scatter of gcols back onto the input grid. */                                         \
  template <typename T>                                                                          \
  void col2im(const ConvGeometry& g, std::span<const T> gcols, std::span<T> dx);                 \
  /* Like im2col but each tap samples bilinearly at its regular position plus                  \
     offsets[n, oy, ox, 2k] (dy) and [.., 2k+1] (dx). */                                        \
  template <typename T>                                                                          \
  void deform_im2col(const ConvGeometry& g, std::span<const T> x, std::span<const T> offsets,    \
                     std::span<T> cols);                                                         \
  /* Backward of deform_im2col: dx += ..., doffsets += ... (either may be empty to skip). */    \
  template <typename T>                                                                          \
  void deform_col2im(const ConvGeometry& g, std::span<const T> x, std::span<const T> offsets,    \
                     std::span<const T> gcols, std::span<T> dx, std::span<T> doffsets);

namespace serial {
LIT_KERNEL_DECLS
}  // namespace serial

namespace parallel {
LIT_KERNEL_DECLS
}  // namespace parallel

// Dispatch to the selected backend; gemm also feeds the active MacScope.
LIT_KERNEL_DECLS

#undef LIT_KERNEL_DECLS

}  // namespace lit::kernels
