#include <algorithm>

#include "lit/kernels.hpp"

namespace lit::kernels::serial {

template <typename T>
void gemm(bool trans_a, bool trans_b, std::size_t m, std::size_t n, std::size_t k,
          std::span<const T> a, std::span<const T> b, std::span<T> c, bool accumulate) {
  if (!accumulate) std::fill(c.begin(), c.end(), T(0));
  // Every element accumulates its k products in ascending p.
  for (std::size_t i = 0; i < m; ++i) {
    T* crow = c.data() + i * n;
    for (std::size_t p = 0; p < k; ++p) {
      const T av = trans_a ? a[p * m + i] : a[i * k + p];
      if (!trans_b) {
        const T* brow = b.data() + p * n;
        for (std::size_t j = 0; j < n; ++j) crow[j] += av * brow[j];
      } else {
        for (std::size_t j = 0; j < n; ++j) crow[j] += av * b[j * k + p];
      }
    }
  }
}

template <typename T>
void im2col(const ConvGeometry& g, std::span<const T> x, std::span<T> cols) {
  const std::size_t ncols = g.cols();
  for (std::size_t n = 0; n < g.batch; ++n) {
    const T* img = x.data() + n * g.in_h * g.in_w * g.in_c;
    for (std::size_t oy = 0; oy < g.out_h; ++oy) {
      for (std::size_t ox = 0; ox < g.out_w; ++ox) {
        T* row = cols.data() + ((n * g.out_h + oy) * g.out_w + ox) * ncols;
        for (std::size_t ky = 0; ky < g.kernel; ++ky) {
          for (std::size_t kx = 0; kx < g.kernel; ++kx) {
            T* dst = row + (ky * g.kernel + kx) * g.in_c;
            const long iy = static_cast<long>(oy * g.stride + ky) - static_cast<long>(g.pad);
            const long ix = static_cast<long>(ox * g.stride + kx) - static_cast<long>(g.pad);
            if (iy < 0 || ix < 0 || iy >= static_cast<long>(g.in_h) || ix >= static_cast<long>(g.in_w)) {
              std::fill(dst, dst + g.in_c, T(0));
              continue;
            }
            const T* src = img + (static_cast<std::size_t>(iy) * g.in_w + static_cast<std::size_t>(ix)) * g.in_c;
            std::copy(src, src + g.in_c, dst);
          }
        }
      }
    }
  }
}

template <typename T>
void col2im(const ConvGeometry& g, std::span<const T> gcols, std::span<T> dx) {
  const std::size_t ncols = g.cols();
  for (std::size_t n = 0; n < g.batch; ++n) {
    T* dimg = dx.data() + n * g.in_h * g.in_w * g.in_c;
    for (std::size_t oy = 0; oy < g.out_h; ++oy) {
      for (std::size_t ox = 0; ox < g.out_w; ++ox) {
        const T* row = gcols.data() + ((n * g.out_h + oy) * g.out_w + ox) * ncols;
        for (std::size_t ky = 0; ky < g.kernel; ++ky) {
          for (std::size_t kx = 0; kx < g.kernel; ++kx) {
            const long iy = static_cast<long>(oy * g.stride + ky) - static_cast<long>(g.pad);
            const long ix = static_cast<long>(ox * g.stride + kx) - static_cast<long>(g.pad);
            if (iy < 0 || ix < 0 || iy >= static_cast<long>(g.in_h) || ix >= static_cast<long>(g.in_w)) continue;
            const T* src = row + (ky * g.kernel + kx) * g.in_c;
            T* dst = dimg + (static_cast<std::size_t>(iy) * g.in_w + static_cast<std::size_t>(ix)) * g.in_c;
            for (std::size_t c = 0; c < g.in_c; ++c) dst[c] += src[c];
          }
        }
      }
    }
  }
}

template <typename T>
void deform_im2col(const ConvGeometry& g, std::span<const T> x, std::span<const T> offsets,
                   std::span<T> cols) {
  const std::size_t ncols = g.cols();
  const std::size_t taps = g.taps();
  for (std::size_t n = 0; n < g.batch; ++n) {
    const T* img = x.data() + n * g.in_h * g.in_w * g.in_c;
    for (std::size_t oy = 0; oy < g.out_h; ++oy) {
      for (std::size_t ox = 0; ox < g.out_w; ++ox) {
        const std::size_t r = (n * g.out_h + oy) * g.out_w + ox;
        const T* off = offsets.data() + r * 2 * taps;
        for (std::size_t k = 0; k < taps; ++k) {
          const T y = static_cast<T>(oy * g.stride + k / g.kernel) - static_cast<T>(g.pad) + off[2 * k];
          const T xx = static_cast<T>(ox * g.stride + k % g.kernel) - static_cast<T>(g.pad) + off[2 * k + 1];
          BilinearPoint<T>::at(y, xx, g.in_h, g.in_w).gather(img, g.in_c, cols.data() + r * ncols + k * g.in_c);
        }
      }
    }
  }
}

template <typename T>
void deform_col2im(const ConvGeometry& g, std::span<const T> x, std::span<const T> offsets,
                   std::span<const T> gcols, std::span<T> dx, std::span<T> doffsets) {
  const std::size_t ncols = g.cols();
  const std::size_t taps = g.taps();
  const std::size_t plane = g.in_h * g.in_w * g.in_c;
  for (std::size_t n = 0; n < g.batch; ++n) {
    const T* img = x.data() + n * plane;
    for (std::size_t oy = 0; oy < g.out_h; ++oy) {
      for (std::size_t ox = 0; ox < g.out_w; ++ox) {
        const std::size_t r = (n * g.out_h + oy) * g.out_w + ox;
        const T* off = offsets.data() + r * 2 * taps;
        for (std::size_t k = 0; k < taps; ++k) {
          const T y = static_cast<T>(oy * g.stride + k / g.kernel) - static_cast<T>(g.pad) + off[2 * k];
          const T xx = static_cast<T>(ox * g.stride + k % g.kernel) - static_cast<T>(g.pad) + off[2 * k + 1];
          const auto p = BilinearPoint<T>::at(y, xx, g.in_h, g.in_w);
          const T* gout = gcols.data() + r * ncols + k * g.in_c;
          if (!dx.empty()) p.scatter(dx.data() + n * plane, g.in_c, gout);
          if (!doffsets.empty()) {
            T gy, gx;
            p.location_grad(img, g.in_c, gout, gy, gx);
            doffsets[r * 2 * taps + 2 * k] += gy;
            doffsets[r * 2 * taps + 2 * k + 1] += gx;
          }
        }
      }
    }
  }
}

#define LIT_INSTANTIATE(T)                                                                        \
  template void gemm<T>(bool, bool, std::size_t, std::size_t, std::size_t, std::span<const T>,    \
                        std::span<const T>, std::span<T>, bool);                                  \
  template void im2col<T>(const ConvGeometry&, std::span<const T>, std::span<T>);                 \
  template void col2im<T>(const ConvGeometry&, std::span<const T>, std::span<T>);                 \
  template void deform_im2col<T>(const ConvGeometry&, std::span<const T>, std::span<const T>,     \
                                 std::span<T>);                                                   \
  template void deform_col2im<T>(const ConvGeometry&, std::span<const T>, std::span<const T>,     \
                                 std::span<const T>, std::span<T>, std::span<T>);
LIT_INSTANTIATE(float)
LIT_INSTANTIATE(double)
#undef LIT_INSTANTIATE

}  // namespace lit::kernels::serial
