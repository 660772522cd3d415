#include <doctest.h>

#include <cmath>
#include <fstream>

#include "lit/equivalence.hpp"
#include "support.hpp"

using namespace lit;
using namespace lit::equiv;
using lit::testing::rand_tensor;

namespace {

double msa_vs_conv(std::size_t k, std::size_t grid, std::size_t cin, std::size_t cout, std::uint64_t seed,
                   const HeadShiftMap& f) {
  const auto w = rand_tensor({k, k, cin, cout}, seed);
  const auto x = rand_tensor({2, grid, grid, cin}, seed + 1);
  const auto m = build_msa_as_conv(w, f, 2, grid, grid);
  return msa_conv_interior_deviation(run_msa_as_conv(m, x), conv2d(x, w, Tensor<double>(), 1, same_pad(k)), k);
}

std::vector<std::uint8_t> box_mask(std::size_t h, std::size_t w, std::size_t y0, std::size_t x0, std::size_t size) {
  std::vector<std::uint8_t> m(h * w, 0);
  for (std::size_t y = y0; y < y0 + size; ++y)
    for (std::size_t x = x0; x < x0 + size; ++x) m[y * w + x] = 1;
  return m;
}

}  // namespace

TEST_CASE("shift alphabets") {
  const auto k3 = shift_alphabet(3);
  REQUIRE(k3.size() == 9);
  CHECK(k3.front() == Shift{-1, -1});
  CHECK(k3[4] == Shift{0, 0});
  CHECK(k3.back() == Shift{1, 1});
  const auto k2 = shift_alphabet(2);
  CHECK(k2 == std::vector<Shift>{{0, 0}, {0, 1}, {1, 0}, {1, 1}});
  CHECK(shift_alphabet(1) == std::vector<Shift>{{0, 0}});
}

TEST_CASE("head-shift maps must be bijections") {
  CHECK_NOTHROW(HeadShiftMap(2, {3, 1, 0, 2}));
  CHECK_THROWS_AS(HeadShiftMap(2, {0, 1, 1, 2}), ConfigError);
  CHECK_THROWS_AS(HeadShiftMap(2, {0, 1, 2}), ConfigError);
  CHECK_THROWS_AS(HeadShiftMap(2, {0, 1, 2, 4}), ConfigError);
  CHECK(HeadShiftMap::for_heads(4, 2).heads() == 4);
  CHECK(HeadShiftMap::for_heads(9, 3).shift(0) == Shift{-1, -1});
  try {
    HeadShiftMap::for_heads(5, 2);
    FAIL("expected ConfigError");
  } catch (const ConfigError& e) {
    CHECK(std::string(e.what()).find("bijection") != std::string::npos);
  }
}

TEST_CASE("per-pixel fc equals a 1x1 convolution") {
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    const auto w = rand_tensor({5, 7}, seed);
    const auto x = rand_tensor({2, 4, 3, 5}, seed + 10);
    CHECK(verify_fc_equals_1x1_conv(w, x) < 1e-12);
    CHECK(verify_fc_equals_1x1_conv(w.cast<float>(), x.cast<float>()) < 1e-6);
  }
  Tensor<double> eye(Shape{3, 3}, 0.0);
  for (std::size_t i = 0; i < 3; ++i) eye.mutable_data()[i * 4] = 1;
  const auto x = rand_tensor({1, 2, 2, 3}, 20);
  CHECK(verify_fc_equals_1x1_conv(eye, x) == 0);
  const auto as_conv = conv2d(x, reshape(eye, {1, 1, 3, 3}), Tensor<double>(), 1, 0);
  CHECK(std::equal(as_conv.data().begin(), as_conv.data().end(), x.data().begin()));
}

TEST_CASE("one-head construction is a per-pixel fc") {
  const auto w = rand_tensor({1, 1, 3, 4}, 21);
  const auto x = rand_tensor({2, 5, 5, 3}, 22);
  const auto m = build_msa_as_conv(w, HeadShiftMap::identity(1), 2, 5, 5);
  const auto out = run_msa_as_conv(m, x);
  const auto fc = linear(x, reshape(w, {3, 4}), Tensor<double>());
  CHECK(lit::testing::max_abs_diff(out, std::vector<double>(fc.data().begin(), fc.data().end())) < 1e-12);
}

TEST_CASE("delta attention reproduces convolution") {
  for (std::size_t k : {1, 3})
    for (std::size_t grid : {3, 5, 8})
      for (std::uint64_t seed = 0; seed < 10; ++seed) {
        CHECK(msa_vs_conv(k, grid, 4, 3, 100 * k + 10 * grid + seed, HeadShiftMap::identity(k)) < 1e-10);
      }
  CHECK(msa_vs_conv(3, 6, 4, 5, 7, HeadShiftMap::identity(3)) < 1e-10);
  CHECK(msa_vs_conv(2, 6, 3, 2, 8, HeadShiftMap::identity(2)) < 1e-10);
}

TEST_CASE("relabeling heads together with their weights changes nothing") {
  const auto w = rand_tensor({3, 3, 2, 3}, 30);
  const auto x = rand_tensor({1, 6, 6, 2}, 31);
  const auto a = run_msa_as_conv(build_msa_as_conv(w, HeadShiftMap::identity(3), 1, 6, 6), x);
  const auto b = run_msa_as_conv(build_msa_as_conv(w, HeadShiftMap(3, {8, 3, 5, 0, 2, 7, 1, 4, 6}), 1, 6, 6), x);
  CHECK(lit::testing::max_abs_diff(a, std::vector<double>(b.data().begin(), b.data().end())) < 1e-12);
}

TEST_CASE("construction rejects mismatched kernels") {
  CHECK_THROWS_AS(build_msa_as_conv(rand_tensor({3, 3, 2, 2}, 1), HeadShiftMap::identity(2), 1, 4, 4), ConfigError);
  CHECK_THROWS_AS(build_msa_as_conv(rand_tensor({3, 2, 2}, 1), HeadShiftMap::identity(2), 1, 4, 4), DimensionError);
}

TEST_CASE("receptive field of a single mlp block is the query pixel") {
  Rng rng(40);
  const auto p = nn::MlpParams<double>::make(3, 2, rng);
  const auto r = receptive_field_probe<double>({mlp_layer(p)}, 7, 7, 3, 3, 4);
  CHECK(r.final().k_eff == 1);
  CHECK(r.final().mask == box_mask(7, 7, 3, 4, 1));
}

TEST_CASE("receptive field of a 3x3 convolution") {
  const auto w = rand_tensor({3, 3, 2, 2}, 41);
  const auto r = receptive_field_probe<double>({conv_layer(w, 1)}, 7, 7, 2, 3, 3);
  CHECK(r.final().k_eff == 3);
  CHECK(r.final().mask == box_mask(7, 7, 2, 2, 3));

  const auto two = receptive_field_probe<double>({conv_layer(w, 1), conv_layer(w, 1)}, 9, 9, 2, 4, 4);
  REQUIRE(two.layers.size() == 2);
  CHECK(two.layers[0].k_eff == 3);
  CHECK(two.layers[1].k_eff == 5);
}

TEST_CASE("receptive field of delta attention grows with the square root of the head count") {
  for (std::size_t heads : {1, 4, 9}) {
    const auto k = static_cast<std::size_t>(std::lround(std::sqrt(static_cast<double>(heads))));
    const auto w = rand_tensor({k, k, 2, 2}, 50 + heads);
    const auto m = build_msa_as_conv(w, HeadShiftMap::for_heads(heads, k), 1, 7, 7);
    const auto r = receptive_field_probe<double>({msa_conv_layer(m)}, 7, 7, 2, 3, 3);
    CHECK(r.final().k_eff == k);
  }
  const auto w = rand_tensor({3, 3, 2, 2}, 60);
  const auto m = build_msa_as_conv(w, HeadShiftMap::identity(3), 1, 7, 7);
  const auto a = receptive_field_probe<double>({msa_conv_layer(m)}, 7, 7, 2, 3, 3);
  const auto c = receptive_field_probe<double>({conv_layer(w, 1)}, 7, 7, 2, 3, 3);
  CHECK(a.final().mask == c.final().mask);
}

TEST_CASE("attention export averages over images") {
  auto m = model::build<double>(model::toy_config(), 70);
  const auto img = rand_tensor({1, 64, 64, 3}, 71);

  m.seed_batch_norm_identity();
  model::Inspection<double> ins;
  model::forward(m, img, Mode::kEval, &ins);
  const auto one = export_attention_maps(m, img, 3, 1);
  CHECK(one.heads == 2);
  CHECK(one.grid == 4);
  CHECK(one.images == 1);
  const auto& ref = ins.attention[2][1];
  REQUIRE(ref.numel() == one.maps.size());
  for (std::size_t i = 0; i < one.maps.size(); ++i) CHECK(one.maps[i] == ref[i]);

  std::vector<std::size_t> idx(2 * img.numel());
  for (std::size_t i = 0; i < idx.size(); ++i) idx[i] = i % img.numel();
  const auto twice = export_attention_maps(m, gather(img, idx, {2, 64, 64, 3}), 3, 1);
  for (std::size_t i = 0; i < one.maps.size(); ++i) CHECK(std::abs(twice.maps[i] - one.maps[i]) < 1e-15);

  const auto many = export_attention_maps(m, rand_tensor({3, 64, 64, 3}, 72), 4, 0);
  const std::size_t t = many.grid * many.grid;
  for (std::size_t h = 0; h < many.heads; ++h)
    for (std::size_t q = 0; q < t; ++q) {
      double s = 0;
      for (std::size_t k = 0; k < t; ++k) s += many.at(h, q, k);
      CHECK(std::abs(s - 1) < 1e-6);
    }

  try {
    export_attention_maps(m, img, 1, 0);
    FAIL("expected ConfigError");
  } catch (const ConfigError& e) {
    CHECK(std::string(e.what()).find("first two stages do not have self-attention layers") != std::string::npos);
  }
  CHECK_THROWS_AS(export_attention_maps(m, img, 3, 5), ConfigError);
}

TEST_CASE("attention map files") {
  auto m = model::build<double>(model::toy_config(), 80);
  m.seed_batch_norm_identity();
  const auto exp = export_attention_maps(m, rand_tensor({1, 64, 64, 3}, 81), 3, 0);
  const auto dir = std::filesystem::temp_directory_path() / "lit_attn_test";
  std::filesystem::remove_all(dir);
  std::filesystem::create_directories(dir);
  const auto files = write_attention_maps(dir, exp, {{1, 2}, {0, 0}});
  CHECK(std::filesystem::exists(dir / "s3_b0_h0_q1_2.pgm"));
  CHECK(std::filesystem::exists(dir / "s3_b0_h1_q0_0.pgm"));
  std::ifstream pgm(dir / "s3_b0_h0_q1_2.pgm");
  std::string magic;
  std::size_t w = 0, h = 0, maxv = 0;
  pgm >> magic >> w >> h >> maxv;
  CHECK(magic == "P2");
  CHECK(w == 4);
  CHECK(h == 4);
  CHECK(maxv == 255);
  std::size_t peak = 0, v = 0;
  while (pgm >> v) peak = std::max(peak, v);
  CHECK(peak == 255);
  std::ifstream csv(dir / "attention.csv");
  std::string header;
  std::getline(csv, header);
  CHECK(header == "head,query_y,query_x,key_y,key_x,probability");
  std::size_t rows = 0;
  for (std::string line; std::getline(csv, line);) ++rows;
  CHECK(rows == 2 * 2 * 16);
  CHECK_THROWS_AS(write_attention_maps(dir, exp, {{4, 0}}), ValidationError);
  std::filesystem::remove_all(dir);
}
