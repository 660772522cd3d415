#include "lit/kernels.hpp"

#include <atomic>
#include <string>

#include "lit/error.hpp"

namespace lit::kernels {

namespace {
std::atomic<Backend> g_backend{Backend::kParallel};
thread_local MacScope* g_mac_scope = nullptr;
}  // namespace

void set_backend(Backend b) { g_backend.store(b); }
Backend backend() { return g_backend.load(); }

MacScope::MacScope() : previous_(g_mac_scope) { g_mac_scope = this; }
MacScope::~MacScope() {
  if (g_mac_scope == this) g_mac_scope = previous_;
}
MacScope* MacScope::current() { return g_mac_scope; }

ConvGeometry ConvGeometry::make(std::size_t batch, std::size_t in_h, std::size_t in_w, std::size_t in_c,
                                std::size_t kernel, std::size_t stride, std::size_t pad) {
  if (kernel < 1) throw DimensionError("kernel size must be >= 1");
  if (stride < 1) throw DimensionError("stride must be >= 1, got " + std::to_string(stride));
  if (in_h + 2 * pad < kernel || in_w + 2 * pad < kernel) {
    throw DimensionError("kernel " + std::to_string(kernel) + " larger than padded input " +
                         std::to_string(in_h) + "x" + std::to_string(in_w));
  }
  ConvGeometry g;
  g.batch = batch;
  g.in_h = in_h;
  g.in_w = in_w;
  g.in_c = in_c;
  g.kernel = kernel;
  g.stride = stride;
  g.pad = pad;
  g.out_h = (in_h + 2 * pad - kernel) / stride + 1;
  g.out_w = (in_w + 2 * pad - kernel) / stride + 1;
  return g;
}

template <typename T>
void gemm(bool trans_a, bool trans_b, std::size_t m, std::size_t n, std::size_t k, std::span<const T> a,
          std::span<const T> b, std::span<T> c, bool accumulate) {
  if (auto* scope = g_mac_scope) scope->add(static_cast<std::uint64_t>(m) * n * k);
  if (backend() == Backend::kParallel) {
    parallel::gemm<T>(trans_a, trans_b, m, n, k, a, b, c, accumulate);
  } else {
    serial::gemm<T>(trans_a, trans_b, m, n, k, a, b, c, accumulate);
  }
}

template <typename T>
void im2col(const ConvGeometry& g, std::span<const T> x, std::span<T> cols) {
  if (backend() == Backend::kParallel) {
    parallel::im2col<T>(g, x, cols);
  } else {
    serial::im2col<T>(g, x, cols);
  }
}

template <typename T>
void col2im(const ConvGeometry& g, std::span<const T> gcols, std::span<T> dx) {
  if (backend() == Backend::kParallel) {
    parallel::col2im<T>(g, gcols, dx);
  } else {
    serial::col2im<T>(g, gcols, dx);
  }
}

template <typename T>
void deform_im2col(const ConvGeometry& g, std::span<const T> x, std::span<const T> offsets, std::span<T> cols) {
  if (backend() == Backend::kParallel) {
    parallel::deform_im2col<T>(g, x, offsets, cols);
  } else {
    serial::deform_im2col<T>(g, x, offsets, cols);
  }
}

template <typename T>
void deform_col2im(const ConvGeometry& g, std::span<const T> x, std::span<const T> offsets,
                   std::span<const T> gcols, std::span<T> dx, std::span<T> doffsets) {
  if (backend() == Backend::kParallel) {
    parallel::deform_col2im<T>(g, x, offsets, gcols, dx, doffsets);
  } else {
    serial::deform_col2im<T>(g, x, offsets, gcols, dx, doffsets);
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

}  // namespace lit::kernels
