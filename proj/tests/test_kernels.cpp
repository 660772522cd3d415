#include <doctest.h>

#include <vector>

#include "lit/kernels.hpp"
#include "lit/random.hpp"

using namespace lit;
namespace k = lit::kernels;

namespace {

template <typename T>
std::vector<T> random_values(std::size_t n, std::uint64_t seed, double lo = -1, double hi = 1) {
  Rng rng(seed);
  std::uniform_real_distribution<double> d(lo, hi);
  std::vector<T> v(n);
  for (auto& x : v) x = static_cast<T>(d(rng));
  return v;
}

}  // namespace

TEST_CASE_TEMPLATE("gemm matches a triple loop and the parallel path is bit-identical", T, float, double) {
  const std::size_t m = 7, n = 5, kk = 9;
  for (bool ta : {false, true}) {
    for (bool tb : {false, true}) {
      const auto a = random_values<T>(m * kk, 1);
      const auto b = random_values<T>(kk * n, 2);
      std::vector<T> init = random_values<T>(m * n, 3);
      for (bool acc : {false, true}) {
        std::vector<T> cs = init, cp = init;
        k::serial::gemm<T>(ta, tb, m, n, kk, a, b, cs, acc);
        k::parallel::gemm<T>(ta, tb, m, n, kk, a, b, cp, acc);
        CHECK(cs == cp);
        for (std::size_t i = 0; i < m; ++i) {
          for (std::size_t j = 0; j < n; ++j) {
            double ref = acc ? static_cast<double>(init[i * n + j]) : 0.0;
            for (std::size_t p = 0; p < kk; ++p) {
              const double av = ta ? a[p * m + i] : a[i * kk + p];
              const double bv = tb ? b[j * kk + p] : b[p * n + j];
              ref += av * bv;
            }
            CHECK(static_cast<double>(cs[i * n + j]) == doctest::Approx(ref).epsilon(1e-5));
          }
        }
      }
    }
  }
}

TEST_CASE("im2col and col2im agree across backends") {
  const auto g = k::ConvGeometry::make(2, 7, 6, 3, 3, 2, 1);
  const auto x = random_values<double>(2 * 7 * 6 * 3, 4);
  std::vector<double> cs(g.rows() * g.cols()), cp(cs.size());
  k::serial::im2col<double>(g, x, cs);
  k::parallel::im2col<double>(g, x, cp);
  CHECK(cs == cp);
  std::vector<double> ds(x.size(), 0.0), dp(x.size(), 0.0);
  k::serial::col2im<double>(g, cs, ds);
  k::parallel::col2im<double>(g, cs, dp);
  CHECK(ds == dp);
}

TEST_CASE("col2im is the adjoint of im2col") {
  const auto g = k::ConvGeometry::make(1, 5, 5, 2, 3, 1, 1);
  const auto x = random_values<double>(50, 5);
  const auto y = random_values<double>(g.rows() * g.cols(), 6);
  std::vector<double> cols(y.size());
  k::serial::im2col<double>(g, x, cols);
  std::vector<double> back(x.size(), 0.0);
  k::serial::col2im<double>(g, y, back);
  double lhs = 0, rhs = 0;
  for (std::size_t i = 0; i < y.size(); ++i) lhs += cols[i] * y[i];
  for (std::size_t i = 0; i < x.size(); ++i) rhs += x[i] * back[i];
  CHECK(lhs == doctest::Approx(rhs).epsilon(1e-12));
}

TEST_CASE("deformable kernels agree across backends") {
  const auto g = k::ConvGeometry::make(3, 8, 8, 4, 2, 2, 0);
  const auto x = random_values<double>(3 * 8 * 8 * 4, 7);
  const auto off = random_values<double>(g.batch * g.out_h * g.out_w * 2 * g.taps(), 8, -1.7, 1.7);
  std::vector<double> cs(g.rows() * g.cols()), cp(cs.size());
  k::serial::deform_im2col<double>(g, x, off, cs);
  k::parallel::deform_im2col<double>(g, x, off, cp);
  CHECK(cs == cp);
  const auto gc = random_values<double>(cs.size(), 9);
  std::vector<double> dxs(x.size(), 0.0), dxp(x.size(), 0.0), dos(off.size(), 0.0), dop(off.size(), 0.0);
  k::serial::deform_col2im<double>(g, x, off, gc, dxs, dos);
  k::parallel::deform_col2im<double>(g, x, off, gc, dxp, dop);
  CHECK(dxs == dxp);
  CHECK(dos == dop);
}

TEST_CASE("zero offsets make deform_im2col equal im2col") {
  const auto g = k::ConvGeometry::make(2, 6, 6, 3, 2, 2, 0);
  const auto x = random_values<double>(2 * 6 * 6 * 3, 10);
  std::vector<double> off(g.batch * g.out_h * g.out_w * 2 * g.taps(), 0.0);
  std::vector<double> a(g.rows() * g.cols()), b(a.size());
  k::im2col<double>(g, x, a);
  k::deform_im2col<double>(g, x, off, b);
  CHECK(a == b);
}

TEST_CASE("dispatching gemm feeds nested MacScopes") {
  const auto a = random_values<double>(6, 1), b = random_values<double>(6, 2);
  std::vector<double> c(4);
  k::MacScope outer;
  {
    k::MacScope inner;
    k::gemm<double>(false, false, 2, 2, 3, a, b, c, false);
    CHECK(inner.count() == 12);
  }
  CHECK(outer.count() == 0);
  k::gemm<double>(false, false, 2, 2, 3, a, b, c, false);
  CHECK(outer.count() == 12);
  k::serial::gemm<double>(false, false, 2, 2, 3, a, b, c, false);
  CHECK(outer.count() == 12);
}

TEST_CASE("backend selection round-trips") {
  const auto saved = k::backend();
  k::set_backend(k::Backend::kSerial);
  CHECK(k::backend() == k::Backend::kSerial);
  k::set_backend(saved);
}

TEST_CASE("conv geometry rejects windows that do not fit") {
  CHECK_THROWS_AS(k::ConvGeometry::make(1, 2, 2, 1, 3, 1, 0), DimensionError);
  const auto g = k::ConvGeometry::make(1, 7, 7, 1, 2, 2, 0);
  CHECK(g.out_h == 3);
}

TEST_CASE("bilinear corners outside the grid are dropped") {
  const auto p = k::BilinearPoint<double>::at(-0.25, 1.5, 3, 3);
  CHECK_FALSE(p.valid[0]);
  CHECK_FALSE(p.valid[1]);
  CHECK(p.valid[2]);
  CHECK(p.valid[3]);
  CHECK(p.weight[2] == doctest::Approx(0.75 * 0.5));
  const std::vector<double> img = {0, 1, 2, 3, 4, 5, 6, 7, 8};
  double out = 0;
  p.gather(img.data(), 1, &out);
  CHECK(out == doctest::Approx(0.75 * (0.5 * 1 + 0.5 * 2)));
}
