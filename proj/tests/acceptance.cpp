// Acceptance suite: one PASS/FAIL line per criterion. Optional arguments pick
// criteria by number (default: all eight).

#include <chrono>
#include <cmath>
#include <cstdio>
#include <functional>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "lit/analyzer.hpp"
#include "lit/dtm.hpp"
#include "lit/equivalence.hpp"
#include "lit/model.hpp"
#include "lit/train.hpp"
#include "support.hpp"

using namespace lit;
using lit::testing::gradcheck;
using lit::testing::max_abs_diff;
using lit::testing::rand_tensor;

namespace {

// Tolerances and budgets.
constexpr double kMsaTarget = 2.0e9;
constexpr double kParamTol = 0.03;
constexpr double kFlopTol = 0.05;
constexpr double kFcTol = 1e-12;
constexpr double kMsaConvTol = 1e-10;
constexpr std::size_t kEquivSeeds = 10;
constexpr std::size_t kMaxGrid = 8;
constexpr double kZeroOffsetTol = 1e-12;
constexpr double kLiteralTol = 1e-10;
constexpr double kGradStep = 1e-5;
constexpr double kGradTol = 1e-4;
// A gradient that is exactly zero by construction (a bias feeding a
// train-mode batch norm) has no relative error; there the analytic norm must
// be at rounding level and the central difference within its roundoff bound.
constexpr double kZeroGradAnalytic = 1e-12;
constexpr double kZeroGradNumeric = 1e-9;
constexpr double kTrainAccuracy = 0.95;
constexpr std::size_t kTrainEpochs = 200;
constexpr std::size_t kTrainSamples = 200;
constexpr std::size_t kLossWindow = 20;
constexpr double kOffsetDeviationPx = 0.5;

constexpr double kBudget[9] = {0, 1, 30, 30, 300, 10, 1800, 60, 120};  // seconds, by criterion

struct Outcome {
  bool pass = true;
  std::ostringstream detail;

  void require(bool ok, const std::string& what) {
    if (!ok) {
      pass = false;
      detail << " [failed: " << what << "]";
    }
  }
};

std::string fmt(const char* f, double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, f, v);
  return buf;
}

// ------------------------------------------------------------------ 1

void cost_claims(Outcome& o) {
  const auto claim = analyzer::msa_claim();
  const double msa_dev = static_cast<double>(claim.flops) / kMsaTarget - 1.0;
  o.require(std::abs(msa_dev) <= kFlopTol, "single MSA 2.0G");
  o.detail << "msa56x56x96=" << fmt("%.3fG", claim.flops / 1e9) << fmt("(%+.2f%%)", 100 * msa_dev);
  for (const auto& row : analyzer::audit(model::preset_names())) {
    const bool p_ok = std::abs(row.params_deviation) <= kParamTol;
    const bool f_ok = std::abs(row.flops_deviation) <= kFlopTol;
    o.detail << "; " << row.preset << " " << fmt("%.2fM", row.params / 1e6) << fmt("(%+.2f%%)", 100 * row.params_deviation)
             << " " << fmt("%.2fG", row.flops / 1e9) << fmt("(%+.2f%%)", 100 * row.flops_deviation);
    o.require(p_ok, row.preset + " params");
    o.require(f_ok, row.preset + " flops");
  }
}

// ------------------------------------------------------------------ 2

void equivalence_suite(Outcome& o) {
  double fc = 0;
  for (std::uint64_t seed = 0; seed < kEquivSeeds; ++seed) {
    fc = std::max(fc, equiv::verify_fc_equals_1x1_conv(rand_tensor({6, 5}, seed), rand_tensor({2, 8, 8, 6}, seed + 99)));
  }
  o.require(fc < kFcTol, "fc vs 1x1 conv");

  double msa = 0;
  std::size_t cases = 0;
  for (std::size_t k : {1, 3})
    for (std::size_t grid = k; grid <= kMaxGrid; ++grid)
      for (std::uint64_t seed = 0; seed < kEquivSeeds; ++seed) {
        const std::uint64_t s = 1000 * k + 50 * grid + seed;
        const auto w = rand_tensor({k, k, 4, 3}, s);
        const auto x = rand_tensor({1, grid, grid, 4}, s + 7);
        const auto m = equiv::build_msa_as_conv(w, equiv::HeadShiftMap::identity(k), 1, grid, grid);
        const auto conv = conv2d(x, w, Tensor<double>(), 1, equiv::same_pad(k));
        msa = std::max(msa, equiv::msa_conv_interior_deviation(equiv::run_msa_as_conv(m, x), conv, k));
        ++cases;
      }
  o.require(msa < kMsaConvTol, "msa vs conv");

  std::ostringstream keff;
  for (std::size_t heads : {1, 4, 9}) {
    const auto k = static_cast<std::size_t>(std::lround(std::sqrt(static_cast<double>(heads))));
    const auto w = rand_tensor({k, k, 3, 3}, heads);
    const auto m = equiv::build_msa_as_conv(w, equiv::HeadShiftMap::for_heads(heads, k), 1, 7, 7);
    const auto r = equiv::receptive_field_probe<double>({equiv::msa_conv_layer(m)}, 7, 7, 3, 3, 3);
    keff << (heads == 1 ? "" : ",") << heads << "->" << r.final().k_eff;
    o.require(r.final().k_eff == k, "K_eff for " + std::to_string(heads) + " heads");
  }
  o.detail << "fc-vs-1x1=" << fmt("%.2e", fc) << "; msa-vs-conv=" << fmt("%.2e", msa) << " over " << cases
           << " cases; K_eff " << keff.str();
}

// ------------------------------------------------------------------ 3

void dtm_correctness(Outcome& o) {
  double zero = 0, literal = 0;
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    Rng rng(seed);
    auto p = dtm::TokenMergeParams<double>::make(5, 6, 2, true, rng);
    p.conv.bias = rand_tensor({6}, seed + 1);
    const auto x = rand_tensor({2, 8, 10, 5}, seed + 2);
    const auto z = dtm::deformable_conv(x, p.conv).out;
    zero = std::max(zero, max_abs_diff(z, lit::testing::conv2d_direct(x, p.conv.weight, p.conv.bias.data().data(), 2, 0)));
    const auto off = rand_tensor({2, 4, 5, 8}, seed + 3, -1.5, 1.5);
    const auto y = dtm::deformable_conv_with_offsets(x, off, p.conv);
    literal = std::max(literal, max_abs_diff(y, lit::testing::deform_conv_literal(x, off, p.conv.weight,
                                                                                  p.conv.bias.data().data(), 2, 0)));
  }
  o.require(zero < kZeroOffsetTol, "zero-offset equivalence");
  o.require(literal < kLiteralTol, "literal loop oracle");

  std::size_t merges = 0;
  for (const auto& name : model::preset_names()) {
    const auto cfg = model::preset(name);
    std::uint64_t expected = 0;
    for (std::size_t s = 1; s < 4; ++s) {
      const std::size_t cin = cfg.stages[s - 1].channels, cout = cfg.stages[s].channels;
      Rng rng(s);
      auto a = dtm::TokenMergeParams<float>::make(cin, cout, 2, true, rng);
      auto b = dtm::TokenMergeParams<float>::make(cin, cout, 2, false, rng);
      std::uint64_t na = 0, nb = 0;
      a.visit("m", [&](const std::string&, Tensor<float>& t) { na += t.numel(); });
      b.visit("m", [&](const std::string&, Tensor<float>& t) { nb += t.numel(); });
      const std::uint64_t closed = 2 * 4 * (4 * cin + 1);
      o.require(na - nb == closed, name + " stage " + std::to_string(s + 1) + " delta");
      o.require(analyzer::offset_predictor_params(cin, 2) == closed, "closed form");
      expected += closed;
      ++merges;
    }
    o.require(analyzer::merge_delta(cfg, 224).params == static_cast<std::int64_t>(expected), name + " analyzer delta");
  }
  o.detail << "zero-offset=" << fmt("%.2e", zero) << "; literal=" << fmt("%.2e", literal) << "; " << merges
           << " merges match 2K^2(K^2 Cin+1)";
}

// ------------------------------------------------------------------ 4

struct GradCase {
  std::string name;
  lit::testing::TensorFn fn;
  std::vector<Tensor<double>> inputs;
};

model::ModelConfig tiny_toy() {
  auto c = model::toy_config();
  const std::array<std::size_t, 4> ch = {4, 8, 8, 8};
  for (std::size_t s = 0; s < 4; ++s) {
    c.stages[s].channels = ch[s];
    c.stages[s].expansion = 2;
  }
  c.stages[2].heads = c.stages[3].heads = 2;
  return c;
}

void gradient_integrity(Outcome& o) {
  auto x34 = rand_tensor({3, 4}, 1, -2, 2), y34 = rand_tensor({3, 4}, 2, -2, 2), r4 = rand_tensor({4}, 3, -2, 2);
  auto t3 = rand_tensor({2, 3, 4}, 4, -2, 2);
  std::vector<GradCase> cases = {
      {"reshape", [](const auto& in) { return reshape(in[0], {4, 6}); }, {t3}},
      {"permute", [](const auto& in) { return permute(in[0], {2, 0, 1}); }, {t3}},
      {"select", [](const auto& in) { return select(in[0], 2, 1); }, {t3}},
      {"gather", [](const auto& in) { return gather(in[0], {3, 3, 0, 11, 7}, {5}); }, {x34}},
      {"add", [](const auto& in) { return add(in[0], in[1]); }, {x34, y34}},
      {"add_broadcast", [](const auto& in) { return add(in[0], in[1]); }, {x34, r4}},
      {"mul", [](const auto& in) { return mul(in[0], in[1]); }, {x34, y34}},
      {"scale", [](const auto& in) { return scale(in[0], 0.7); }, {x34}},
      {"gelu", [](const auto& in) { return gelu(in[0]); }, {x34}},
      {"sum", [](const auto& in) { return sum(in[0]); }, {x34}},
      {"mean_axis", [](const auto& in) { return mean_axis(in[0], 1); }, {t3}},
      {"matmul", [](const auto& in) { return matmul(in[0], in[1]); }, {x34, rand_tensor({4, 5}, 5, -2, 2)}},
      {"bmm", [](const auto& in) { return bmm(in[0], in[1]); }, {t3, rand_tensor({2, 4, 3}, 6, -2, 2)}},
      {"bmm_t", [](const auto& in) { return bmm(in[0], in[1], true); }, {t3, rand_tensor({2, 5, 4}, 7, -2, 2)}},
      {"linear", [](const auto& in) { return linear(in[0], in[1], in[2]); },
       {t3, rand_tensor({4, 3}, 8, -2, 2), rand_tensor({3}, 9)}},
      {"softmax", [](const auto& in) { return softmax(in[0], 1); }, {t3}},
      {"layer_norm", [](const auto& in) { return layer_norm(in[0], in[1], in[2]); },
       {t3, rand_tensor({4}, 10, 0.5, 2), rand_tensor({4}, 11)}},
      {"batch_norm",
       [](const auto& in) {
         BatchNormState<double> st(3);
         return batch_norm(in[0], in[1], in[2], st, Mode::kTrain);
       },
       {rand_tensor({2, 3, 2, 3}, 12, -2, 2), rand_tensor({3}, 13, 0.5, 2), rand_tensor({3}, 14)}},
      {"conv2d", [](const auto& in) { return conv2d(in[0], in[1], in[2], 2, 1); },
       {rand_tensor({1, 5, 5, 2}, 15, -2, 2), rand_tensor({3, 3, 2, 3}, 16, -2, 2), rand_tensor({3}, 17)}},
      {"bilinear_sample", [](const auto& in) { return bilinear_sample(in[0], in[1]); },
       {rand_tensor({4, 4, 2}, 18, -2, 2), Tensor<double>(Shape{2}, std::vector<double>{1.3, 2.6})}},
      {"deform_conv2d", [](const auto& in) { return deform_conv2d(in[0], in[1], in[2], in[3], 2, 0); },
       {rand_tensor({1, 6, 6, 2}, 19, -2, 2), rand_tensor({1, 3, 3, 8}, 20, -1.4, 1.4), rand_tensor({2, 2, 2, 3}, 21, -2, 2),
        rand_tensor({3}, 22)}},
      {"cross_entropy",
       [](const auto& in) {
         static const std::vector<int> labels = {1, 0, 3};
         return cross_entropy(in[0], std::span<const int>(labels));
       },
       {x34}},
  };
  double worst = 0;
  std::string worst_name;
  for (auto& c : cases) {
    const double e = gradcheck(c.fn, c.inputs, 99, kGradStep).worst;
    o.require(e < kGradTol, c.name);
    if (e >= worst) {
      worst = e;
      worst_name = c.name;
    }
  }

  // Whole model: every parameter tensor, offset predictors set to nonzero values.
  auto m = model::build<double>(tiny_toy(), 5);
  std::vector<std::string> names;
  std::vector<Tensor<double>> params;
  std::uint64_t seed = 100;
  m.visit_parameters([&](const std::string& name, Tensor<double>& t) {
    if (name.find(".offset.weight") != std::string::npos) {
      t = rand_tensor(t.shape(), ++seed, -0.3, 0.3);
    } else if (name.find(".offset.bias") != std::string::npos) {
      t = rand_tensor(t.shape(), ++seed, -0.4, 0.4);
    }
    names.push_back(name);
    params.push_back(t);
  });
  const auto images = rand_tensor({2, 64, 64, 3}, 7);
  auto fn = [&](const std::vector<Tensor<double>>& in) {
    std::size_t i = 0;
    m.visit_parameters([&](const std::string&, Tensor<double>& t) { t = in[i++]; });
    return model::forward(m, images, Mode::kTrain);
  };
  const auto g = gradcheck(fn, params, 99, kGradStep);
  double model_worst = 0, offset_worst = 0;
  std::string model_worst_name;
  std::size_t zero_grad = 0;
  for (std::size_t i = 0; i < names.size(); ++i) {
    if (g.analytic_norm[i] < kZeroGradAnalytic) {
      ++zero_grad;
      o.require(g.numeric_norm[i] < kZeroGradNumeric, names[i] + " (zero gradient)");
      continue;
    }
    if (g.rel_error[i] >= model_worst) {
      model_worst = g.rel_error[i];
      model_worst_name = names[i];
    }
    if (names[i].find(".offset.") != std::string::npos) offset_worst = std::max(offset_worst, g.rel_error[i]);
    o.require(g.rel_error[i] < kGradTol, names[i]);
  }
  o.detail << cases.size() << " ops, worst " << worst_name << "=" << fmt("%.2e", worst) << "; toy model "
           << names.size() << " tensors, worst " << model_worst_name << "=" << fmt("%.2e", model_worst)
           << "; offset predictors " << fmt("%.2e", offset_worst) << "; " << zero_grad
           << " tensors with an identically zero gradient";
}

// ------------------------------------------------------------------ 5

void shape_audit(Outcome& o) {
  const std::array<std::size_t, 4> g224 = {56, 28, 14, 7}, g64 = {16, 8, 4, 2};
  for (const auto& name : model::preset_names()) {
    auto cfg = model::preset(name);
    o.require(model::stage_grids(cfg, 224) == g224, name + " grids at 224");
    o.require(model::stage_grids(cfg, 64) == g64, name + " grids at 64");
    auto m = model::build<float>(cfg, 0);
    model::Inspection<float> ins;
    ins.keep_attention = false;
    const auto logits = model::forward(m, Tensor<float>(Shape{1, 224, 224, 3}, 0.5f), Mode::kTrain, &ins);
    o.require(logits.shape() == Shape{1, 1000}, name + " logits");
    for (std::size_t s = 0; s < 4; ++s) {
      o.require(ins.stage_shapes[s] == Shape{1, g224[s], g224[s], cfg.stages[s].channels},
                name + " stage " + std::to_string(s + 1) + " at 224");
    }
  }
  // Same widths at 64² (the position tables follow the input size).
  for (const auto& name : model::preset_names()) {
    auto cfg = model::preset(name);
    cfg.resolution = 64;
    auto m = model::build<float>(cfg, 0);
    model::Inspection<float> ins;
    ins.keep_attention = false;
    model::forward(m, Tensor<float>(Shape{1, 64, 64, 3}, 0.5f), Mode::kTrain, &ins);
    for (std::size_t s = 0; s < 4; ++s) {
      o.require(ins.stage_shapes[s] == Shape{1, g64[s], g64[s], cfg.stages[s].channels},
                name + " stage " + std::to_string(s + 1) + " at 64");
    }
  }
  o.detail << "4 presets: 56/28/14/7 at 224, 16/8/4/2 at 64";
}

// ------------------------------------------------------------------ 6

void trainability(Outcome& o) {
  const auto data = data::synthetic(kTrainSamples, 0);
  auto run = [&](double offset_lr, std::vector<double>& losses) {
    auto m = model::build<float>(model::toy_config(), 0);
    train::TrainConfig cfg;
    cfg.epochs = kTrainEpochs;
    cfg.offset_lr = offset_lr;
    train::Trainer<float> t(m, data, cfg);
    t.run([&](const train::EpochLog& e) { losses.push_back(e.loss); });
    return m;
  };
  // Largest leaf displacement over the first `count` training images.
  auto deviation = [&](model::LitModel<float>& m, std::size_t count) {
    double worst = 0;
    for (std::size_t start = 0; start < count; start += 50) {
      std::vector<std::size_t> idx;
      for (std::size_t i = start; i < std::min(count, start + 50); ++i) idx.push_back(i);
      model::Inspection<float> ins;
      ins.keep_attention = false;
      model::forward(m, data.images<float>(idx), Mode::kEval, &ins);
      for (std::size_t b = 0; b < idx.size(); ++b) worst = std::max(worst, dtm::max_grid_deviation(ins.offsets, b));
    }
    return worst;
  };

  std::vector<double> losses;
  auto trained = run(train::TrainConfig{}.offset_lr, losses);
  const double acc = train::accuracy(trained, data, Mode::kEval);
  const bool trend = train::windowed_non_increasing(losses, kLossWindow);
  const double moved = deviation(trained, data.size());
  const double moved_first = deviation(trained, 1);
  o.require(acc >= kTrainAccuracy, "train accuracy");
  o.require(trend, "windowed loss trend");
  o.require(moved > kOffsetDeviationPx, "trained offsets deviate");

  std::vector<double> frozen_losses;
  auto frozen = run(0.0, frozen_losses);
  bool all_zero = true;
  frozen.visit_parameters([&](const std::string& name, Tensor<float>& t) {
    if (name.find(".offset.") == std::string::npos) return;
    for (float v : t.data()) all_zero = all_zero && v == 0.0f;
  });
  const double frozen_dev = deviation(frozen, data.size());
  o.require(all_zero && frozen_dev == 0.0, "frozen offsets stay zero");
  o.detail << "train acc " << fmt("%.3f", acc) << ", final loss " << fmt("%.4g", losses.back()) << ", "
           << kLossWindow << "-epoch means";
  for (std::size_t start = 0; start + kLossWindow <= losses.size(); start += kLossWindow) {
    double mean = 0;
    for (std::size_t i = start; i < start + kLossWindow; ++i) mean += losses[i];
    o.detail << (start ? " " : " ") << fmt("%.3g", mean / static_cast<double>(kLossWindow));
  }
  o.detail << (trend ? " non-increasing" : " (rises)") << ", offset deviation over the training set "
           << fmt("%.3f", moved) << "px (first image " << fmt("%.3f", moved_first) << "px); offset-lr 0: deviation " << fmt("%.1f", frozen_dev) << "px";
}

// ------------------------------------------------------------------ 7

void ablation_harness(Outcome& o) {
  const auto base = model::with_attention_everywhere(model::preset("lit-ti"), {1, 2, 5, 8});
  const std::vector<std::set<int>> removals = {{}, {1}, {1, 2}, {1, 2, 3}, {1, 2, 3, 4}};
  std::vector<std::uint64_t> flops;
  for (const auto& r : removals) {
    const auto cfg = model::ablate(base, r);
    auto m = model::build<float>(cfg, 0);
    model::Inspection<float> ins;
    ins.keep_attention = false;
    const auto y = model::forward(m, Tensor<float>(Shape{1, 224, 224, 3}, 0.25f), Mode::kTrain, &ins);
    o.require(y.shape() == Shape{1, 1000}, "forward");
    flops.push_back(analyzer::count_flops(cfg, 224).total_flops());
  }
  o.require(analyzer::strictly_decreasing(flops), "strictly decreasing FLOPs");
  for (std::size_t i = 0; i < flops.size(); ++i) o.detail << (i ? " -> " : "FLOPs ") << fmt("%.2fG", flops[i] / 1e9);
}

// ------------------------------------------------------------------ 8

template <typename T>
std::vector<T> flat(model::LitModel<T>& m) {
  std::vector<T> out;
  m.visit_parameters([&](const std::string&, Tensor<T>& t) { out.insert(out.end(), t.data().begin(), t.data().end()); });
  return out;
}

void determinism(Outcome& o) {
  for (const auto& cfg : {model::toy_config(), model::preset("lit-s")}) {
    auto a = model::build<float>(cfg, 17), b = model::build<float>(cfg, 17);
    o.require(flat(a) == flat(b), "parameters");
  }
  auto a = model::build<float>(model::toy_config(), 3), b = model::build<float>(model::toy_config(), 3);
  const auto x = rand_tensor({2, 64, 64, 3}, 4).cast<float>();
  const auto la = model::forward(a, x, Mode::kTrain), lb = model::forward(b, x, Mode::kTrain);
  o.require(std::equal(la.data().begin(), la.data().end(), lb.data().begin()), "logits");

  const auto data = data::synthetic(24, 9);
  train::TrainConfig cfg;
  cfg.epochs = 4;
  cfg.batch_size = 8;
  cfg.seed = 21;
  auto ta_m = model::build<float>(model::toy_config(), 5), tb_m = model::build<float>(model::toy_config(), 5);
  train::Trainer<float> ta(ta_m, data, cfg), tb(tb_m, data, cfg);
  ta.run();
  tb.run();
  o.require(flat(ta_m) == flat(tb_m), "training trajectory");
  for (std::size_t i = 0; i < cfg.epochs; ++i) o.require(ta.log()[i].loss == tb.log()[i].loss, "epoch losses");

  const auto path = std::filesystem::temp_directory_path() / "lit_acceptance_resume.litckpt";
  auto rc_m = model::build<float>(model::toy_config(), 5);
  {
    train::Trainer<float> first(rc_m, data, cfg);
    first.run_epoch();
    first.run_epoch();
    first.save_checkpoint(path);
  }
  auto resumed_m = model::build<float>(model::toy_config(), 77);
  train::Trainer<float> resumed(resumed_m, data, cfg);
  resumed.load_checkpoint(path);
  resumed.run();
  o.require(flat(resumed_m) == flat(ta_m), "resumed trajectory");

  const auto bytes = ckpt::encode(ta_m.state_records());
  auto loaded = model::build<float>(model::toy_config(), 1);
  loaded.load_state_records(ckpt::decode(bytes));
  o.require(flat(loaded) == flat(ta_m), "checkpoint parameters");
  o.require(ckpt::encode(loaded.state_records()) == bytes, "checkpoint bytes");
  ckpt::save(path, ta_m.state_records());
  o.require(ckpt::encode(ckpt::load(path)) == bytes, "checkpoint file");
  std::filesystem::remove(path);
  o.detail << "parameters, logits, 4-epoch trajectory, resume after epoch 2, LITCKPT1 round trip";
}

}  // namespace

int main(int argc, char** argv) {
  const std::vector<std::pair<const char*, std::function<void(Outcome&)>>> criteria = {
      {"cost-claim reproduction", cost_claims},  {"equivalence suite", equivalence_suite},
      {"dtm correctness", dtm_correctness},      {"gradient integrity", gradient_integrity},
      {"shape audit", shape_audit},              {"trainability", trainability},
      {"ablation harness", ablation_harness},    {"determinism and round trip", determinism},
  };
  std::set<int> selected;
  for (int i = 1; i < argc; ++i) selected.insert(std::atoi(argv[i]));

  int failures = 0;
  for (std::size_t i = 0; i < criteria.size(); ++i) {
    const int id = static_cast<int>(i + 1);
    if (!selected.empty() && !selected.count(id)) continue;
    Outcome o;
    const auto start = std::chrono::steady_clock::now();
    try {
      criteria[i].second(o);
    } catch (const std::exception& e) {
      o.pass = false;
      o.detail << " [exception: " << e.what() << "]";
    }
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    o.require(secs < kBudget[id], "runtime budget " + fmt("%.0fs", kBudget[id]));
    if (!o.pass) ++failures;
    std::printf("criterion %d %s: %s  %s (%.2fs)\n", id, criteria[i].first, o.pass ? "PASS" : "FAIL",
                o.detail.str().c_str(), secs);
    std::fflush(stdout);
  }
  return failures == 0 ? 0 : 1;
}
