#include <doctest.h>

#include <cmath>
#include <set>

#include "lit/model.hpp"
#include "support.hpp"

using namespace lit;
using namespace lit::model;

namespace {

std::vector<std::pair<std::string, std::vector<double>>> snapshot(LitModel<double>& m) {
  std::vector<std::pair<std::string, std::vector<double>>> out;
  m.visit_parameters([&](const std::string& name, Tensor<double>& t) {
    out.emplace_back(name, std::vector<double>(t.data().begin(), t.data().end()));
  });
  return out;
}

Tensor<double> toy_images(std::size_t n, std::uint64_t seed) { return lit::testing::rand_tensor({n, 64, 64, 3}, seed); }

}  // namespace

TEST_CASE("presets carry the published architecture") {
  const auto ti = preset("lit-ti");
  CHECK(ti.stages[2].heads == 5);
  CHECK(ti.stages[3].heads == 8);
  CHECK(ti.stages[0].expansion == 8);
  CHECK(ti.stages[1].expansion == 8);
  CHECK(ti.stages[2].expansion == 4);
  CHECK(ti.pos_encoding == PosEncoding::kAbsolute);
  const std::array<std::size_t, 4> ti_c = {64, 128, 320, 512}, ti_l = {3, 4, 6, 3};
  for (std::size_t s = 0; s < 4; ++s) {
    CHECK(ti.stages[s].channels == ti_c[s]);
    CHECK(ti.stages[s].depth == ti_l[s]);
  }

  const auto b = preset("lit-b");
  CHECK(b.stages[3].channels == 1024);
  CHECK(b.stages[2].heads == 16);
  CHECK(b.stages[3].heads == 32);
  CHECK(b.stages[2].depth == 18);

  const auto s = preset("lit-s"), m = preset("lit-m");
  CHECK(s.pos_encoding == PosEncoding::kRelative);
  CHECK(s.stages[2].depth == 6);
  CHECK(m.stages[2].depth == 18);
  CHECK(s.stages[3].heads == 24);
  CHECK(m.stages[1].channels == 192);

  for (const auto& name : preset_names()) {
    const auto c = preset(name);
    CHECK(validate(c).empty());
    CHECK(c.num_classes == 1000);
    CHECK(c.stages[0].patch_size == 4);
    CHECK(c.stages[0].merge_kind == MergeKind::kLinearEmbed);
    for (std::size_t st = 0; st < 2; ++st) {
      CHECK(c.stages[st].block_kind == BlockKind::kMlp);
      CHECK(c.stages[st].heads == 0);
    }
    for (std::size_t st = 1; st < 4; ++st) {
      CHECK(c.stages[st].patch_size == 2);
      CHECK(c.stages[st].merge_kind == MergeKind::kDtm);
    }
  }
  CHECK_THROWS_AS(preset("lit-xl"), ConfigError);
}

TEST_CASE("validation reports every violation") {
  auto c = toy_config();
  c.stages[0].heads = 2;                             // mlp with heads
  c.stages[2].channels = 47;                         // not divisible by 2 heads
  c.stages[1].merge_kind = MergeKind::kLinearEmbed;  // embed after stage 1
  c.resolution = 50;
  const auto problems = validate(c);
  CHECK(problems.size() >= 4);
  try {
    require_valid(c);
    FAIL("expected ConfigError");
  } catch (const ConfigError& e) {
    const std::string msg = e.what();
    for (const auto& p : problems) CHECK(msg.find(p) != std::string::npos);
  }
  CHECK_THROWS_AS(build<double>(c, 1), ConfigError);
}

TEST_CASE("stage grids halve after the patch embedding") {
  const auto g224 = stage_grids(preset("lit-ti"), 224);
  CHECK(g224 == std::array<std::size_t, 4>{56, 28, 14, 7});
  const auto g64 = stage_grids(toy_config(), 64);
  CHECK(g64 == std::array<std::size_t, 4>{16, 8, 4, 2});
  CHECK_THROWS_AS(stage_grids(toy_config(), 100), ConfigError);
}

TEST_CASE("build is deterministic in the seed") {
  auto a = build<double>(toy_config(), 42);
  auto b = build<double>(toy_config(), 42);
  auto c = build<double>(toy_config(), 43);
  CHECK(snapshot(a) == snapshot(b));
  CHECK(snapshot(a) != snapshot(c));
}

TEST_CASE("parameter names are unique and hierarchical") {
  auto m = build<float>(preset("lit-ti"), 0);
  std::set<std::string> names;
  std::size_t count = 0;
  m.visit_parameters([&](const std::string& name, Tensor<float>& t) {
    names.insert(name);
    ++count;
    CHECK(t.requires_grad());
  });
  CHECK(names.size() == count);
  CHECK(names.count("patch_embed.proj.weight"));
  CHECK(names.count("stage2.merge.offset.weight"));
  CHECK(names.count("stage3.pos_embed"));
  CHECK_FALSE(names.count("stage1.pos_embed"));
  CHECK(names.count("stage4.blocks.2.attn.qkv.weight"));
  CHECK(names.count("stage1.blocks.0.fc1.weight"));
  CHECK(names.count("head.weight"));
}

TEST_CASE("lit-ti forward at 224 reports the published stage shapes") {
  auto m = build<float>(preset("lit-ti"), 0);
  Inspection<float> ins;
  const auto logits = forward(m, Tensor<float>(Shape{1, 224, 224, 3}, 0.1f), Mode::kTrain, &ins);
  CHECK(logits.shape() == Shape{1, 1000});
  CHECK(ins.stage_shapes[0] == Shape{1, 56, 56, 64});
  CHECK(ins.stage_shapes[1] == Shape{1, 28, 28, 128});
  CHECK(ins.stage_shapes[2] == Shape{1, 14, 14, 320});
  CHECK(ins.stage_shapes[3] == Shape{1, 7, 7, 512});
  CHECK(ins.offsets.fields.size() == 3);
  CHECK(ins.attention[0].size() == 3);
  CHECK_FALSE(ins.attention[0][0].defined());
  CHECK(ins.attention[2][0].shape() == Shape{1, 5, 196, 196});
}

TEST_CASE("toy forward contract") {
  auto m = build<double>(toy_config(), 3);
  m.seed_batch_norm_identity();
  Inspection<double> ins;
  const auto zeros = forward(m, Tensor<double>(Shape{3, 64, 64, 3}, 0.0), Mode::kEval, &ins);
  CHECK(zeros.shape() == Shape{3, 10});
  for (std::size_t i = 0; i < 10; ++i) {
    CHECK(std::isfinite(zeros[i]));
    CHECK(zeros[10 + i] == zeros[i]);
    CHECK(zeros[20 + i] == zeros[i]);
  }
  CHECK(ins.stage_shapes[3] == Shape{3, 2, 2, 64});
  CHECK_THROWS_AS(forward(m, Tensor<double>(Shape{1, 48, 48, 3}, 0.0), Mode::kEval), ConfigError);
  CHECK_THROWS_AS(forward(m, Tensor<double>(Shape{1, 64, 64, 1}, 0.0), Mode::kEval), DimensionError);
}

TEST_CASE("permuting the batch permutes the logits") {
  auto m = build<double>(toy_config(), 4);
  m.seed_batch_norm_identity();
  const auto x = toy_images(3, 5);
  const auto y = forward(m, x, Mode::kEval);
  const std::vector<std::size_t> perm = {2, 0, 1};
  std::vector<std::size_t> idx;
  for (auto p : perm)
    for (std::size_t i = 0; i < 64 * 64 * 3; ++i) idx.push_back(p * 64 * 64 * 3 + i);
  const auto yp = forward(m, gather(x, idx, {3, 64, 64, 3}), Mode::kEval);
  for (std::size_t r = 0; r < 3; ++r)
    for (std::size_t c = 0; c < 10; ++c) CHECK(std::abs(yp[r * 10 + c] - y[perm[r] * 10 + c]) < 1e-12);
}

TEST_CASE("same config and seed give identical forward outputs") {
  auto a = build<double>(toy_config(), 6), b = build<double>(toy_config(), 6);
  const auto x = toy_images(2, 7);
  const auto ya = forward(a, x, Mode::kTrain), yb = forward(b, x, Mode::kTrain);
  CHECK(std::equal(ya.data().begin(), ya.data().end(), yb.data().begin()));
}

TEST_CASE("ablation switches stages to mlp blocks") {
  const auto ti = preset("lit-ti");
  CHECK(ablate(ti, {}) == ti);
  const auto all_attn = with_attention_everywhere(ti, {1, 2, 5, 8});
  CHECK(all_attn.stages[0].block_kind == BlockKind::kTransformer);
  CHECK(all_attn.stages[1].heads == 2);
  CHECK(ablate(all_attn, {1, 2}) == ti);
  const auto none = ablate(all_attn, {1, 2, 3, 4});
  for (const auto& s : none.stages) {
    CHECK(s.block_kind == BlockKind::kMlp);
    CHECK(s.heads == 0);
  }
  for (std::size_t s = 0; s < 4; ++s) CHECK(none.stages[s].depth == ti.stages[s].depth);
  CHECK_THROWS_AS(ablate(ti, {5}), ConfigError);

  auto toy_none = ablate(toy_config(), {1, 2, 3, 4});
  auto m = build<double>(toy_none, 8);
  const auto y = forward(m, toy_images(2, 9), Mode::kTrain);
  CHECK(y.shape() == Shape{2, 10});
}

TEST_CASE("uniform merges build without offset predictors") {
  auto c = toy_config();
  for (std::size_t s = 1; s < 4; ++s) c.stages[s].merge_kind = MergeKind::kUniformConv;
  auto m = build<double>(c, 10);
  bool offsets = false;
  m.visit_parameters([&](const std::string& name, Tensor<double>&) {
    offsets = offsets || name.find(".offset.") != std::string::npos;
  });
  CHECK_FALSE(offsets);
  Inspection<double> ins;
  forward(m, toy_images(1, 11), Mode::kTrain, &ins);
  for (const auto& f : ins.offsets.fields) CHECK_FALSE(f.defined());
}

TEST_CASE("config json round trip and strictness") {
  for (const auto& name : preset_names()) {
    const auto c = preset(name);
    CHECK(config_from_json(config_to_json(c)) == c);
  }
  auto doc = config_to_json(toy_config());
  CHECK(doc["stages"][0]["block_kind"] == "mlp");
  CHECK(doc["stages"][1]["merge_kind"] == "dtm");
  auto extra = doc;
  extra["dropout"] = 0.1;
  CHECK_THROWS_AS(config_from_json(extra), ConfigError);
  auto stage_extra = doc;
  stage_extra["stages"][2]["window"] = 7;
  CHECK_THROWS_AS(config_from_json(stage_extra), ConfigError);
  auto missing = doc;
  missing.erase("num_classes");
  CHECK_THROWS_AS(config_from_json(missing), ConfigError);
  auto bad_kind = doc;
  bad_kind["stages"][0]["block_kind"] = "conv";
  CHECK_THROWS_AS(config_from_json(bad_kind), ConfigError);
}
