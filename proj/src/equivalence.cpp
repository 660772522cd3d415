#include "lit/equivalence.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>

#include "lit/random.hpp"

namespace lit::equiv {

std::vector<Shift> shift_alphabet(std::size_t kernel) {
  if (kernel == 0) throw ConfigError("kernel size must be >= 1");
  const int a = static_cast<int>(same_pad(kernel));
  std::vector<Shift> out;
  for (std::size_t k = 0; k < kernel * kernel; ++k) {
    out.push_back({static_cast<int>(k / kernel) - a, static_cast<int>(k % kernel) - a});
  }
  return out;
}

HeadShiftMap::HeadShiftMap(std::size_t kernel, std::vector<std::size_t> tap_of_head)
    : kernel_(kernel), taps_(std::move(tap_of_head)) {
  if (kernel == 0) throw ConfigError("kernel size must be >= 1");
  const std::size_t n = kernel * kernel;
  if (taps_.size() != n) {
    throw ConfigError("head-shift map needs exactly K·K = " + std::to_string(n) + " heads for a " +
                      std::to_string(kernel) + "x" + std::to_string(kernel) + " kernel, got " +
                      std::to_string(taps_.size()));
  }
  std::vector<bool> seen(n, false);
  for (std::size_t t : taps_) {
    if (t >= n || seen[t]) throw ConfigError("head-shift map is not a bijection onto the kernel taps");
    seen[t] = true;
  }
}

HeadShiftMap HeadShiftMap::identity(std::size_t kernel) {
  std::vector<std::size_t> taps(kernel * kernel);
  for (std::size_t i = 0; i < taps.size(); ++i) taps[i] = i;
  return HeadShiftMap(kernel, std::move(taps));
}

HeadShiftMap HeadShiftMap::for_heads(std::size_t heads, std::size_t kernel) {
  if (heads != kernel * kernel) {
    throw ConfigError("no bijection between " + std::to_string(heads) + " heads and the " +
                      std::to_string(kernel * kernel) + " shifts of a " + std::to_string(kernel) + "x" +
                      std::to_string(kernel) + " kernel");
  }
  return identity(kernel);
}

Shift HeadShiftMap::shift(std::size_t head) const { return shift_alphabet(kernel_).at(tap(head)); }

template <typename T>
MsaConv<T> build_msa_as_conv(const Tensor<T>& conv_w, const HeadShiftMap& f, std::size_t batch,
                             std::size_t grid_h, std::size_t grid_w) {
  if (conv_w.rank() != 4 || conv_w.dim(0) != conv_w.dim(1)) {
    throw DimensionError("build_msa_as_conv: expected K×K×Cin×Cout weights, got " + shape_str(conv_w.shape()));
  }
  const std::size_t k = conv_w.dim(0), cin = conv_w.dim(2), cout = conv_w.dim(3);
  if (f.kernel() != k) {
    throw ConfigError("head-shift map built for K=" + std::to_string(f.kernel()) + " but weights have K=" +
                      std::to_string(k));
  }
  const std::size_t heads = f.heads(), d = heads * cin;

  MsaConv<T> m;
  m.grid_h = grid_h;
  m.grid_w = grid_w;
  m.params.heads = heads;
  Tensor<T> qkv(Shape{cin, 3 * d}, T(0));
  auto qkv_data = qkv.mutable_data();
  for (std::size_t h = 0; h < heads; ++h) {
    for (std::size_t c = 0; c < cin; ++c) qkv_data[c * 3 * d + 2 * d + h * cin + c] = T(1);
  }
  Tensor<T> proj(Shape{d, cout}, T(0));
  auto proj_data = proj.mutable_data();
  const auto w = conv_w.data();
  for (std::size_t h = 0; h < heads; ++h) {
    const std::size_t tap = f.tap(h);
    for (std::size_t c = 0; c < cin; ++c) {
      for (std::size_t o = 0; o < cout; ++o) proj_data[(h * cin + c) * cout + o] = w[(tap * cin + c) * cout + o];
    }
  }
  m.params.qkv = {qkv, Tensor<T>(Shape{3 * d}, T(0))};
  m.params.proj = {proj, Tensor<T>(Shape{cout}, T(0))};

  const std::size_t t = grid_h * grid_w;
  Tensor<T> attn(Shape{batch, heads, t, t}, T(0));
  auto a = attn.mutable_data();
  for (std::size_t n = 0; n < batch; ++n) {
    for (std::size_t h = 0; h < heads; ++h) {
      const Shift s = f.shift(h);
      for (std::size_t p = 0; p < t; ++p) {
        const long y = std::clamp<long>(static_cast<long>(p / grid_w) + s.dy, 0, static_cast<long>(grid_h) - 1);
        const long x = std::clamp<long>(static_cast<long>(p % grid_w) + s.dx, 0, static_cast<long>(grid_w) - 1);
        a[((n * heads + h) * t + p) * t + static_cast<std::size_t>(y) * grid_w + static_cast<std::size_t>(x)] = T(1);
      }
    }
  }
  m.attention = attn;
  return m;
}

template <typename T>
Tensor<T> run_msa_as_conv(const MsaConv<T>& m, const Tensor<T>& x) {
  if (x.rank() != 4 || x.dim(1) != m.grid_h || x.dim(2) != m.grid_w || x.dim(0) != m.attention.dim(0)) {
    throw DimensionError("run_msa_as_conv: input " + shape_str(x.shape()) + " does not match the construction");
  }
  const std::size_t n = x.dim(0), t = m.grid_h * m.grid_w;
  auto tokens = reshape(x, {n, t, x.dim(3)});
  auto out = nn::msa(tokens, m.params, &m.attention).out;
  return reshape(out, {n, m.grid_h, m.grid_w, out.dim(2)});
}

template <typename T>
double msa_conv_interior_deviation(const Tensor<T>& msa_out, const Tensor<T>& conv_out, std::size_t kernel) {
  const std::size_t n = msa_out.dim(0), h = msa_out.dim(1), w = msa_out.dim(2), c = msa_out.dim(3);
  const std::size_t oh = conv_out.dim(1), ow = conv_out.dim(2);
  const long a = static_cast<long>(same_pad(kernel)), b = static_cast<long>(kernel) - 1 - a;
  double worst = 0;
  for (std::size_t i = 0; i < n; ++i) {
    for (long y = a; y + b < static_cast<long>(h); ++y) {
      for (long x = a; x + b < static_cast<long>(w); ++x) {
        if (static_cast<std::size_t>(y) >= oh || static_cast<std::size_t>(x) >= ow) continue;
        for (std::size_t ch = 0; ch < c; ++ch) {
          const double u = static_cast<double>(msa_out.data()[((i * h + y) * w + x) * c + ch]);
          const double v = static_cast<double>(conv_out.data()[((i * oh + y) * ow + x) * c + ch]);
          worst = std::max(worst, std::abs(u - v));
        }
      }
    }
  }
  return worst;
}

template <typename T>
double verify_fc_equals_1x1_conv(const Tensor<T>& w, const Tensor<T>& x) {
  if (w.rank() != 2 || x.rank() != 4 || x.dim(3) != w.dim(0)) {
    throw DimensionError("verify_fc_equals_1x1_conv: weights " + shape_str(w.shape()) + " vs input " +
                         shape_str(x.shape()));
  }
  const std::size_t cin = w.dim(0), cout = w.dim(1), pixels = x.numel() / cin;
  // Per-pixel FC, written out directly.
  std::vector<T> fc(pixels * cout, T(0));
  for (std::size_t p = 0; p < pixels; ++p) {
    for (std::size_t o = 0; o < cout; ++o) {
      T acc = 0;
      for (std::size_t c = 0; c < cin; ++c) acc += x.data()[p * cin + c] * w.data()[c * cout + o];
      fc[p * cout + o] = acc;
    }
  }
  auto conv = conv2d(x, reshape(w, {1, 1, cin, cout}), Tensor<T>(), 1, 0);
  double worst = 0;
  for (std::size_t i = 0; i < fc.size(); ++i) {
    worst = std::max(worst, std::abs(static_cast<double>(fc[i]) - static_cast<double>(conv.data()[i])));
  }
  return worst;
}

template <typename T>
GridLayer<T> mlp_layer(const nn::MlpParams<T>& params) {
  return [params](const Tensor<T>& x) {
    const Shape s = x.shape();
    return reshape(nn::mlp_block(reshape(x, {s[0], s[1] * s[2], s[3]}), params), s);
  };
}

template <typename T>
GridLayer<T> conv_layer(const Tensor<T>& weight, std::size_t pad) {
  return [weight, pad](const Tensor<T>& x) { return conv2d(x, weight, Tensor<T>(), 1, pad); };
}

template <typename T>
GridLayer<T> msa_conv_layer(const MsaConv<T>& m) {
  return [m](const Tensor<T>& x) { return run_msa_as_conv(m, x); };
}

namespace {

InfluenceMask finish_mask(std::vector<double> influence, std::size_t height, std::size_t width) {
  InfluenceMask m;
  const double peak = *std::max_element(influence.begin(), influence.end());
  m.mask.assign(influence.size(), 0);
  std::size_t y0 = height, y1 = 0, x0 = width, x1 = 0;
  bool any = false;
  for (std::size_t i = 0; i < influence.size(); ++i) {
    if (peak > 0 && influence[i] > kInfluenceThreshold * peak) {
      m.mask[i] = 1;
      any = true;
      y0 = std::min(y0, i / width);
      y1 = std::max(y1, i / width);
      x0 = std::min(x0, i % width);
      x1 = std::max(x1, i % width);
    }
  }
  m.k_eff = any ? std::max(y1 - y0 + 1, x1 - x0 + 1) : 0;
  m.influence = std::move(influence);
  return m;
}

}  // namespace

template <typename T>
ReceptiveFieldReport receptive_field_probe(const std::vector<GridLayer<T>>& stack, std::size_t height,
                                           std::size_t width, std::size_t channels, std::size_t query_y,
                                           std::size_t query_x, std::uint64_t seed) {
  if (stack.empty()) throw ConfigError("receptive_field_probe: empty stack");
  if (query_y >= height || query_x >= width) throw ValidationError("receptive_field_probe: query outside the grid");
  Rng rng(seed);
  auto input = uniform<T>({1, height, width, channels}, rng, -1.0, 1.0);
  input.set_requires_grad(true);

  ReceptiveFieldReport report;
  report.query_y = query_y;
  report.query_x = query_x;
  report.height = height;
  report.width = width;
  for (std::size_t depth = 1; depth <= stack.size(); ++depth) {
    std::vector<double> influence(height * width, 0.0);
    std::size_t out_channels = 0;
    for (std::size_t c = 0;; ++c) {
      Tape<T> tape;
      Tensor<T> y = input;
      for (std::size_t i = 0; i < depth; ++i) y = stack[i](y);
      if (y.rank() != 4 || query_y >= y.dim(1) || query_x >= y.dim(2)) {
        throw DimensionError("receptive_field_probe: query outside layer output " + shape_str(y.shape()));
      }
      out_channels = y.dim(3);
      Tensor<T> pick(y.shape(), T(0));
      pick.mutable_data()[(query_y * y.dim(2) + query_x) * out_channels + c] = T(1);
      input.zero_grad();
      tape.backward(sum(mul(y, pick)));
      if (input.has_grad()) {
        const auto g = input.grad();
        for (std::size_t p = 0; p < height * width; ++p) {
          for (std::size_t k = 0; k < channels; ++k) influence[p] += std::abs(static_cast<double>(g[p * channels + k]));
        }
      }
      if (c + 1 >= out_channels) break;
    }
    report.layers.push_back(finish_mask(std::move(influence), height, width));
  }
  input.zero_grad();
  return report;
}

template <typename T>
AttentionExport export_attention_maps(model::LitModel<T>& model, const Tensor<T>& images, std::size_t stage,
                                      std::size_t block) {
  if (stage < 1 || stage > model::kNumStages) throw ConfigError("stage must be in 1..4");
  const auto& spec = model.config.stages[stage - 1];
  if (spec.block_kind != model::BlockKind::kTransformer) {
    if (stage <= 2) {
      throw ConfigError("stage " + std::to_string(stage) +
                        ": the first two stages do not have self-attention layers; choose stage 3 or 4");
    }
    throw ConfigError("stage " + std::to_string(stage) + " has MLP blocks only; choose a Transformer stage");
  }
  if (block >= spec.depth) {
    throw ConfigError("stage " + std::to_string(stage) + " has " + std::to_string(spec.depth) + " blocks");
  }
  model::Inspection<T> inspect;
  inspect.keep_offsets = false;
  model::forward(model, images, Mode::kEval, &inspect);
  const auto& attn = inspect.attention[stage - 1].at(block);  // N×h×T×T

  AttentionExport exp;
  exp.stage = stage;
  exp.block = block;
  exp.images = attn.dim(0);
  exp.heads = attn.dim(1);
  const std::size_t t = attn.dim(2);
  exp.grid = static_cast<std::size_t>(std::lround(std::sqrt(static_cast<double>(t))));
  const std::size_t per_image = exp.heads * t * t;
  exp.maps.assign(per_image, 0.0);
  for (std::size_t n = 0; n < exp.images; ++n) {
    for (std::size_t i = 0; i < per_image; ++i) exp.maps[i] += static_cast<double>(attn.data()[n * per_image + i]);
  }
  for (auto& v : exp.maps) v /= static_cast<double>(exp.images);
  return exp;
}

std::vector<std::filesystem::path> write_attention_maps(
    const std::filesystem::path& dir, const AttentionExport& exp,
    const std::vector<std::pair<std::size_t, std::size_t>>& queries) {
  std::filesystem::create_directories(dir);
  const std::size_t g = exp.grid, t = g * g;
  std::vector<std::filesystem::path> written;
  const auto csv_path = dir / "attention.csv";
  std::ofstream csv(csv_path);
  if (!csv) throw IoError("cannot write " + csv_path.string());
  csv << "head,query_y,query_x,key_y,key_x,probability\n";
  char buf[160];
  for (const auto& [qy, qx] : queries) {
    if (qy >= g || qx >= g) {
      throw ValidationError("query (" + std::to_string(qy) + ", " + std::to_string(qx) + ") outside the " +
                            std::to_string(g) + "x" + std::to_string(g) + " grid");
    }
    const std::size_t q = qy * g + qx;
    for (std::size_t h = 0; h < exp.heads; ++h) {
      double peak = 0;
      for (std::size_t k = 0; k < t; ++k) peak = std::max(peak, exp.at(h, q, k));
      std::snprintf(buf, sizeof buf, "s%zu_b%zu_h%zu_q%zu_%zu.pgm", exp.stage, exp.block, h, qy, qx);
      const auto pgm_path = dir / buf;
      std::ofstream pgm(pgm_path);
      if (!pgm) throw IoError("cannot write " + pgm_path.string());
      pgm << "P2\n" << g << ' ' << g << "\n255\n";
      for (std::size_t y = 0; y < g; ++y) {
        for (std::size_t x = 0; x < g; ++x) {
          const double p = exp.at(h, q, y * g + x);
          const long level = peak > 0 ? std::lround(255.0 * p / peak) : 0;
          pgm << level << (x + 1 == g ? '\n' : ' ');
        }
      }
      written.push_back(pgm_path);
      for (std::size_t k = 0; k < t; ++k) {
        std::snprintf(buf, sizeof buf, "%zu,%zu,%zu,%zu,%zu,%.17g\n", h, qy, qx, k / g, k % g, exp.at(h, q, k));
        csv << buf;
      }
    }
  }
  written.push_back(csv_path);
  return written;
}

#define LIT_INSTANTIATE(T)                                                                                       \
  template MsaConv<T> build_msa_as_conv<T>(const Tensor<T>&, const HeadShiftMap&, std::size_t, std::size_t,      \
                                           std::size_t);                                                         \
  template Tensor<T> run_msa_as_conv<T>(const MsaConv<T>&, const Tensor<T>&);                                    \
  template double msa_conv_interior_deviation<T>(const Tensor<T>&, const Tensor<T>&, std::size_t);               \
  template double verify_fc_equals_1x1_conv<T>(const Tensor<T>&, const Tensor<T>&);                              \
  template GridLayer<T> mlp_layer<T>(const nn::MlpParams<T>&);                                                   \
  template GridLayer<T> conv_layer<T>(const Tensor<T>&, std::size_t);                                            \
  template GridLayer<T> msa_conv_layer<T>(const MsaConv<T>&);                                                    \
  template ReceptiveFieldReport receptive_field_probe<T>(const std::vector<GridLayer<T>>&, std::size_t,          \
                                                         std::size_t, std::size_t, std::size_t, std::size_t,     \
                                                         std::uint64_t);                                         \
  template AttentionExport export_attention_maps<T>(model::LitModel<T>&, const Tensor<T>&, std::size_t,          \
                                                    std::size_t);
LIT_INSTANTIATE(float)
LIT_INSTANTIATE(double)
#undef LIT_INSTANTIATE

}  // namespace lit::equiv
