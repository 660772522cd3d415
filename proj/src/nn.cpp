#include "lit/nn.hpp"

#include <cmath>
#include <string>

namespace lit::nn {

template <typename T>
Linear<T> Linear<T>::make(std::size_t in, std::size_t out, Rng& rng) {
  return Linear{trunc_normal<T>({in, out}, rng), Tensor<T>(Shape{out}, T(0))};
}

template <typename T>
LayerNorm<T> LayerNorm<T>::make(std::size_t channels) {
  return LayerNorm{Tensor<T>(Shape{channels}, T(1)), Tensor<T>(Shape{channels}, T(0))};
}

template <typename T>
MlpParams<T> MlpParams<T>::make(std::size_t channels, std::size_t expansion, Rng& rng) {
  MlpParams p;
  p.norm = LayerNorm<T>::make(channels);
  p.fc1 = Linear<T>::make(channels, expansion * channels, rng);
  p.fc2 = Linear<T>::make(expansion * channels, channels, rng);
  return p;
}

template <typename T>
MsaParams<T> MsaParams<T>::make(std::size_t channels, std::size_t heads, Rng& rng) {
  if (heads == 0 || channels % heads != 0) {
    throw ConfigError("attention width " + std::to_string(channels) + " not divisible by " + std::to_string(heads) +
                      " heads");
  }
  MsaParams p;
  p.heads = heads;
  p.qkv = Linear<T>::make(channels, 3 * channels, rng);
  p.proj = Linear<T>::make(channels, channels, rng);
  return p;
}

template <typename T>
MsaParams<T> MsaParams<T>::make_relative(std::size_t channels, std::size_t heads, std::size_t grid_h,
                                         std::size_t grid_w, Rng& rng) {
  auto p = make(channels, heads, rng);
  p.grid_h = grid_h;
  p.grid_w = grid_w;
  p.rel_bias = trunc_normal<T>({heads, (2 * grid_h - 1) * (2 * grid_w - 1)}, rng);
  return p;
}

template <typename T>
PatchEmbedParams<T> PatchEmbedParams<T>::make(std::size_t patch, std::size_t channels, Rng& rng) {
  PatchEmbedParams p;
  p.patch = patch;
  p.proj = Linear<T>::make(patch * patch * 3, channels, rng);
  return p;
}

template <typename T>
Tensor<T> patch_embed(const Tensor<T>& image, const PatchEmbedParams<T>& params) {
  if (image.rank() != 4 || image.dim(3) != 3) {
    throw DimensionError("patch_embed: expected N×H×W×3 image, got " + shape_str(image.shape()));
  }
  const std::size_t n = image.dim(0), h = image.dim(1), w = image.dim(2), p = params.patch;
  if (h % p != 0 || w % p != 0) {
    throw ConfigError("patch_embed: " + std::to_string(h) + "x" + std::to_string(w) +
                      " image is not divisible into " + std::to_string(p) + "x" + std::to_string(p) + " patches");
  }
  auto grid = reshape(image, {n, h / p, p, w / p, p, 3});
  auto patches = permute(grid, {0, 1, 3, 2, 4, 5});
  auto flat = reshape(patches, {n, (h / p) * (w / p), p * p * 3});
  return params.proj(flat);
}

template <typename T>
Tensor<T> mlp_block(const Tensor<T>& x, const MlpParams<T>& params) {
  auto hidden = gelu(params.fc1(params.norm(x)));
  return add(x, params.fc2(hidden));
}

namespace {

template <typename T>
void validate_override(const Tensor<T>& attn, const Shape& expect) {
  if (attn.shape() != expect) {
    throw ValidationError("attention override " + shape_str(attn.shape()) + ", expected " + shape_str(expect));
  }
  const std::size_t len = expect.back();
  for (std::size_t r = 0; r < attn.numel() / len; ++r) {
    double s = 0;
    for (std::size_t j = 0; j < len; ++j) s += static_cast<double>(attn.data()[r * len + j]);
    if (std::abs(s - 1.0) > 1e-6) {
      throw ValidationError("attention override row " + std::to_string(r) + " sums to " + std::to_string(s));
    }
  }
}

}  // namespace

template <typename T>
MsaOutput<T> msa(const Tensor<T>& x, const MsaParams<T>& params, const Tensor<T>* attn_override) {
  if (x.rank() != 3) throw DimensionError("msa: expected N×T×C tokens, got " + shape_str(x.shape()));
  const std::size_t n = x.dim(0), t = x.dim(1);
  const std::size_t heads = params.heads, d = params.dim();
  if (heads == 0 || d % heads != 0) {
    throw ConfigError("msa: width " + std::to_string(d) + " not divisible by " + std::to_string(heads) + " heads");
  }
  const std::size_t hd = d / heads;

  auto qkv = params.qkv(x);                                   // N×T×3D
  auto split = permute(reshape(qkv, {n, t, 3, heads, hd}), {2, 0, 3, 1, 4});  // 3×N×h×T×hd
  auto q = reshape(select(split, 0, 0), {n * heads, t, hd});
  auto k = reshape(select(split, 0, 1), {n * heads, t, hd});
  auto v = reshape(select(split, 0, 2), {n * heads, t, hd});

  Tensor<T> attn;
  if (attn_override != nullptr) {
    validate_override(*attn_override, Shape{n, heads, t, t});
    attn = *attn_override;
  } else {
    auto logits = reshape(scale(bmm(q, k, true), T(1) / std::sqrt(static_cast<T>(hd))), {n, heads, t, t});
    if (params.rel_bias.defined()) {
      if (params.grid_h * params.grid_w != t) {
        throw DimensionError("msa: relative bias built for a " + std::to_string(params.grid_h) + "x" +
                             std::to_string(params.grid_w) + " grid but got " + std::to_string(t) + " tokens");
      }
      logits = add(logits, relative_bias_lookup(params.rel_bias, params.grid_h, params.grid_w));
    }
    attn = softmax(logits, 3);
  }

  auto ctx = bmm(reshape(attn, {n * heads, t, t}), v);              // (N·h)×T×hd
  auto merged = reshape(permute(reshape(ctx, {n, heads, t, hd}), {0, 2, 1, 3}), {n, t, d});
  return {params.proj(merged), attn};
}

template <typename T>
MsaOutput<T> transformer_block(const Tensor<T>& x, const TransformerParams<T>& params) {
  auto a = msa(params.norm(x), params.attn);
  auto mid = add(x, a.out);
  return {mlp_block(mid, params.mlp), a.attn};
}

std::vector<std::size_t> relative_position_index(std::size_t grid_h, std::size_t grid_w) {
  const std::size_t t = grid_h * grid_w;
  std::vector<std::size_t> index(t * t);
  for (std::size_t i = 0; i < t; ++i) {
    const std::size_t yi = i / grid_w, xi = i % grid_w;
    for (std::size_t j = 0; j < t; ++j) {
      const std::size_t yj = j / grid_w, xj = j % grid_w;
      const std::size_t dy = yi + grid_h - 1 - yj;  // shifted into [0, 2H−2]
      const std::size_t dx = xi + grid_w - 1 - xj;
      index[i * t + j] = dy * (2 * grid_w - 1) + dx;
    }
  }
  return index;
}

template <typename T>
Tensor<T> relative_bias_lookup(const Tensor<T>& table, std::size_t grid_h, std::size_t grid_w) {
  const std::size_t extent = (2 * grid_h - 1) * (2 * grid_w - 1);
  if (table.rank() != 2 || table.dim(1) != extent) {
    throw ConfigError("relative bias table " + shape_str(table.shape()) + " does not cover a " +
                      std::to_string(grid_h) + "x" + std::to_string(grid_w) + " grid (needs " +
                      std::to_string(extent) + " entries per head)");
  }
  const std::size_t heads = table.dim(0), t = grid_h * grid_w;
  const auto rel = relative_position_index(grid_h, grid_w);
  std::vector<std::size_t> index(heads * t * t);
  for (std::size_t h = 0; h < heads; ++h) {
    for (std::size_t i = 0; i < t * t; ++i) index[h * t * t + i] = h * extent + rel[i];
  }
  return gather(table, std::move(index), {heads, t, t});
}

template <typename T>
Tensor<T> add_absolute_position(const Tensor<T>& x, const Tensor<T>& table) {
  if (x.rank() != 3 || table.rank() != 2 || table.dim(0) != x.dim(1) || table.dim(1) != x.dim(2)) {
    throw ConfigError("absolute position table " + shape_str(table.shape()) + " does not match tokens " +
                      shape_str(x.shape()));
  }
  return add(x, table);
}

#define LIT_INSTANTIATE(T)                                                                        \
  template struct Linear<T>;                                                                      \
  template struct LayerNorm<T>;                                                                   \
  template struct MlpParams<T>;                                                                   \
  template struct MsaParams<T>;                                                                   \
  template struct PatchEmbedParams<T>;                                                            \
  template Tensor<T> patch_embed<T>(const Tensor<T>&, const PatchEmbedParams<T>&);                \
  template Tensor<T> mlp_block<T>(const Tensor<T>&, const MlpParams<T>&);                         \
  template MsaOutput<T> msa<T>(const Tensor<T>&, const MsaParams<T>&, const Tensor<T>*);          \
  template MsaOutput<T> transformer_block<T>(const Tensor<T>&, const TransformerParams<T>&);      \
  template Tensor<T> relative_bias_lookup<T>(const Tensor<T>&, std::size_t, std::size_t);         \
  template Tensor<T> add_absolute_position<T>(const Tensor<T>&, const Tensor<T>&);
LIT_INSTANTIATE(float)
LIT_INSTANTIATE(double)
#undef LIT_INSTANTIATE

}  // namespace lit::nn
