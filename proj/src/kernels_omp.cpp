#include <algorithm>
#include <vector>

#include "lit/kernels.hpp"

namespace lit::kernels::parallel {

namespace {
using Index = long long;  // OpenMP loop counters must be signed
}  // namespace

namespace {

// Register tile: kMr rows by two 32-byte vectors.
template <typename T>
struct VecOf {
  typedef T type __attribute__((vector_size(32)));
};
template <typename T>
using Vec = typename VecOf<T>::type;
template <typename T>
constexpr std::size_t kLanes = 32 / sizeof(T);
template <typename T>
constexpr std::size_t kNr = 2 * kLanes<T>;
constexpr std::size_t kMr = 6;
constexpr std::size_t kKc = 256, kMc = 72, kNc = 2048;
static_assert(kMc % kMr == 0, "A blocks are packed in whole strips");

// B[pc:pc+kc, jc:jc+nc] into kNr-wide column strips, zero padded.
template <typename T>
void pack_b(bool trans_b, std::size_t n, std::size_t k, const T* b, std::size_t pc, std::size_t kc, std::size_t jc,
            std::size_t nc, T* out) {
  constexpr std::size_t nr = kNr<T>;
  for (std::size_t js = 0; js < nc; js += nr) {
    T* strip = out + js * kc;
    const std::size_t w = std::min(nr, nc - js);
    for (std::size_t p = 0; p < kc; ++p) {
      T* dst = strip + p * nr;
      if (!trans_b) {
        std::copy_n(b + (pc + p) * n + jc + js, w, dst);
      } else {
        for (std::size_t jj = 0; jj < w; ++jj) dst[jj] = b[(jc + js + jj) * k + pc + p];
      }
      std::fill(dst + w, dst + nr, T(0));
    }
  }
}

template <typename T>
void pack_a(bool trans_a, std::size_t m, std::size_t k, const T* a, std::size_t ic, std::size_t mc, std::size_t pc,
            std::size_t kc, T* out) {
  for (std::size_t is = 0; is < mc; is += kMr) {
    T* strip = out + is * kc;
    for (std::size_t p = 0; p < kc; ++p)
      for (std::size_t ii = 0; ii < kMr; ++ii) {
        const std::size_t i = ic + is + ii;
        T v = 0;
        if (is + ii < mc) v = trans_a ? a[(pc + p) * m + i] : a[i * k + pc + p];
        strip[p * kMr + ii] = v;
      }
  }
}

template <typename T>
Vec<T> load(const T* p) {
  Vec<T> v;
  __builtin_memcpy(&v, p, sizeof v);
  return v;
}

template <typename T>
void store(T* p, Vec<T> v) {
  __builtin_memcpy(p, &v, sizeof v);
}

template <typename T>
void micro(std::size_t kc, const T* __restrict a, const T* __restrict b, T* __restrict c, std::size_t ldc,
           std::size_t rows, std::size_t cols) {
  constexpr std::size_t nr = kNr<T>, lanes = kLanes<T>;
  alignas(32) T tile[kMr * nr];
  for (std::size_t r = 0; r < kMr; ++r)
    for (std::size_t j = 0; j < nr; ++j) tile[r * nr + j] = (r < rows && j < cols) ? c[r * ldc + j] : T(0);
  Vec<T> acc[kMr][2];
  for (std::size_t r = 0; r < kMr; ++r) {
    acc[r][0] = load(tile + r * nr);
    acc[r][1] = load(tile + r * nr + lanes);
  }
  for (std::size_t p = 0; p < kc; ++p) {
    const Vec<T> b0 = load(b + p * nr), b1 = load(b + p * nr + lanes);
    const T* ap = a + p * kMr;
    for (std::size_t r = 0; r < kMr; ++r) {
      acc[r][0] += ap[r] * b0;
      acc[r][1] += ap[r] * b1;
    }
  }
  for (std::size_t r = 0; r < kMr; ++r) {
    store<T>(tile + r * nr, acc[r][0]);
    store<T>(tile + r * nr + lanes, acc[r][1]);
  }
  for (std::size_t r = 0; r < rows; ++r)
    for (std::size_t j = 0; j < cols; ++j) c[r * ldc + j] = tile[r * nr + j];
}

}  // namespace

// Blocked and packed; each element still sums its products in ascending p,
// so results match the serial loop bit for bit.
template <typename T>
void gemm(bool trans_a, bool trans_b, std::size_t m, std::size_t n, std::size_t k,
          std::span<const T> a, std::span<const T> b, std::span<T> c, bool accumulate) {
  if (!accumulate) std::fill(c.begin(), c.end(), T(0));
  if (m == 0 || n == 0 || k == 0) return;
  constexpr std::size_t nr = kNr<T>;
  std::vector<T> bpack(kKc * ((std::min(n, kNc) + nr - 1) / nr * nr));
  for (std::size_t jc = 0; jc < n; jc += kNc) {
    const std::size_t nc = std::min(kNc, n - jc);
    for (std::size_t pc = 0; pc < k; pc += kKc) {
      const std::size_t kc = std::min(kKc, k - pc);
      pack_b(trans_b, n, k, b.data(), pc, kc, jc, nc, bpack.data());
      const Index blocks = static_cast<Index>((m + kMc - 1) / kMc);
#pragma omp parallel
      {
        std::vector<T> apack(kMc * kc);
#pragma omp for schedule(static)
        for (Index bi = 0; bi < blocks; ++bi) {
          const std::size_t ic = static_cast<std::size_t>(bi) * kMc;
          const std::size_t mc = std::min(kMc, m - ic);
          pack_a(trans_a, m, k, a.data(), ic, mc, pc, kc, apack.data());
          for (std::size_t js = 0; js < nc; js += nr)
            for (std::size_t is = 0; is < mc; is += kMr)
              micro(kc, apack.data() + is * kc, bpack.data() + js * kc, c.data() + (ic + is) * n + jc + js, n,
                    std::min(kMr, mc - is), std::min(nr, nc - js));
        }
      }
    }
  }
}

template <typename T>
void im2col(const ConvGeometry& g, std::span<const T> x, std::span<T> cols) {
  const std::size_t ncols = g.cols();
  const Index rows = static_cast<Index>(g.rows());
#pragma omp parallel for schedule(static)
  for (Index rr = 0; rr < rows; ++rr) {
    const auto r = static_cast<std::size_t>(rr);
    const std::size_t ox = r % g.out_w;
    const std::size_t oy = (r / g.out_w) % g.out_h;
    const std::size_t n = r / (g.out_w * g.out_h);
    const T* img = x.data() + n * g.in_h * g.in_w * g.in_c;
    T* row = cols.data() + r * ncols;
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

// Scatter-style backward kernels split on the batch axis: images never share
// input pixels, and within one image the serial visiting order is kept.
template <typename T>
void col2im(const ConvGeometry& g, std::span<const T> gcols, std::span<T> dx) {
  const std::size_t ncols = g.cols();
  const Index batch = static_cast<Index>(g.batch);
#pragma omp parallel for schedule(static)
  for (Index nn = 0; nn < batch; ++nn) {
    const auto n = static_cast<std::size_t>(nn);
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
  const Index rows = static_cast<Index>(g.rows());
#pragma omp parallel for schedule(static)
  for (Index rr = 0; rr < rows; ++rr) {
    const auto r = static_cast<std::size_t>(rr);
    const std::size_t ox = r % g.out_w;
    const std::size_t oy = (r / g.out_w) % g.out_h;
    const std::size_t n = r / (g.out_w * g.out_h);
    const T* img = x.data() + n * g.in_h * g.in_w * g.in_c;
    const T* off = offsets.data() + r * 2 * taps;
    for (std::size_t k = 0; k < taps; ++k) {
      const T y = static_cast<T>(oy * g.stride + k / g.kernel) - static_cast<T>(g.pad) + off[2 * k];
      const T xx = static_cast<T>(ox * g.stride + k % g.kernel) - static_cast<T>(g.pad) + off[2 * k + 1];
      BilinearPoint<T>::at(y, xx, g.in_h, g.in_w).gather(img, g.in_c, cols.data() + r * ncols + k * g.in_c);
    }
  }
}

template <typename T>
void deform_col2im(const ConvGeometry& g, std::span<const T> x, std::span<const T> offsets,
                   std::span<const T> gcols, std::span<T> dx, std::span<T> doffsets) {
  const std::size_t ncols = g.cols();
  const std::size_t taps = g.taps();
  const std::size_t plane = g.in_h * g.in_w * g.in_c;
  const std::size_t per_image = g.out_h * g.out_w;
  const Index batch = static_cast<Index>(g.batch);
#pragma omp parallel for schedule(static)
  for (Index nn = 0; nn < batch; ++nn) {
    const auto n = static_cast<std::size_t>(nn);
    const T* img = x.data() + n * plane;
    for (std::size_t r = n * per_image; r < (n + 1) * per_image; ++r) {
      const std::size_t ox = r % g.out_w;
      const std::size_t oy = (r / g.out_w) % g.out_h;
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

}  // namespace lit::kernels::parallel
