#pragma once

// Building blocks of the hierarchy: patch embedding, token-wise MLP blocks,
// multi-head self-attention, pre-norm Transformer blocks and the two
// positional-encoding schemes.

#include <cstddef>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "lit/ops.hpp"
#include "lit/random.hpp"

namespace lit::nn {

template <typename T>
using ParamVisitor = std::function<void(const std::string& name, Tensor<T>& tensor)>;

enum class PosEncoding { kNone, kAbsolute, kRelative };

template <typename T>
struct Linear {
  Tensor<T> weight;  // in × out
  Tensor<T> bias;    // out

  static Linear make(std::size_t in, std::size_t out, Rng& rng);
  Tensor<T> operator()(const Tensor<T>& x) const { return linear(x, weight, bias); }
  void visit(const std::string& prefix, const ParamVisitor<T>& f) {
    f(prefix + ".weight", weight);
    f(prefix + ".bias", bias);
  }
};

template <typename T>
struct LayerNorm {
  Tensor<T> gamma;
  Tensor<T> beta;

  static LayerNorm make(std::size_t channels);
  Tensor<T> operator()(const Tensor<T>& x) const { return layer_norm(x, gamma, beta); }
  void visit(const std::string& prefix, const ParamVisitor<T>& f) {
    f(prefix + ".gamma", gamma);
    f(prefix + ".beta", beta);
  }
};

// Residual MLP block: x + fc2(gelu(fc1(LN(x)))), fc1 expanding C → E·C.
template <typename T>
struct MlpParams {
  LayerNorm<T> norm;
  Linear<T> fc1;
  Linear<T> fc2;

  static MlpParams make(std::size_t channels, std::size_t expansion, Rng& rng);
  std::size_t channels() const { return fc1.weight.dim(0); }
  std::size_t hidden() const { return fc1.weight.dim(1); }
  void visit(const std::string& prefix, const ParamVisitor<T>& f) {
    norm.visit(prefix + ".norm", f);
    fc1.visit(prefix + ".fc1", f);
    fc2.visit(prefix + ".fc2", f);
  }
};

// Multi-head self-attention. The fused qkv projection maps Cin → 3·D and the
// output projection D → Cout, D = heads · head_dim. Stock blocks have
// Cin = D = Cout = C; the equivalence lab uses other widths.
template <typename T>
struct MsaParams {
  Linear<T> qkv;
  Linear<T> proj;
  std::size_t heads = 1;
  // heads × (2H−1)(2W−1) learnable relative-position bias; undefined if unused.
  Tensor<T> rel_bias;
  std::size_t grid_h = 0, grid_w = 0;

  static MsaParams make(std::size_t channels, std::size_t heads, Rng& rng);
  static MsaParams make_relative(std::size_t channels, std::size_t heads, std::size_t grid_h, std::size_t grid_w,
                                 Rng& rng);
  std::size_t dim() const { return qkv.weight.dim(1) / 3; }
  std::size_t head_dim() const { return dim() / heads; }
  void visit(const std::string& prefix, const ParamVisitor<T>& f) {
    qkv.visit(prefix + ".qkv", f);
    proj.visit(prefix + ".proj", f);
    if (rel_bias.defined()) f(prefix + ".rel_bias", rel_bias);
  }
};

template <typename T>
struct TransformerParams {
  LayerNorm<T> norm;
  MsaParams<T> attn;
  MlpParams<T> mlp;

  void visit(const std::string& prefix, const ParamVisitor<T>& f) {
    norm.visit(prefix + ".norm", f);
    attn.visit(prefix + ".attn", f);
    mlp.visit(prefix + ".mlp", f);
  }
};

template <typename T>
struct PatchEmbedParams {
  std::size_t patch = 4;
  Linear<T> proj;  // patch·patch·3 → C1

  static PatchEmbedParams make(std::size_t patch, std::size_t channels, Rng& rng);
  void visit(const std::string& prefix, const ParamVisitor<T>& f) { proj.visit(prefix + ".proj", f); }
};

template <typename T>
struct MsaOutput {
  Tensor<T> out;
  Tensor<T> attn;  // N × heads × T × T attention probabilities
};

// image N×H×W×3 → tokens N×(H/p·W/p)×C1. Each patch is flattened in
// (row, column, channel) order before projection.
template <typename T>
Tensor<T> patch_embed(const Tensor<T>& image, const PatchEmbedParams<T>& params);

template <typename T>
Tensor<T> mlp_block(const Tensor<T>& x, const MlpParams<T>& params);

// x: N×T×Cin. When attn_override is given (N×heads×T×T, rows summing to 1)
// it replaces the softmax probabilities.
template <typename T>
MsaOutput<T> msa(const Tensor<T>& x, const MsaParams<T>& params, const Tensor<T>* attn_override = nullptr);

// x' = x + MSA(LN(x)); out = mlp_block(x').
template <typename T>
MsaOutput<T> transformer_block(const Tensor<T>& x, const TransformerParams<T>& params);

// For tokens i, j on an H×W grid: (dy + H − 1)·(2W − 1) + (dx + W − 1) with
// (dy, dx) = pos(i) − pos(j). Returned row-major over (i, j).
std::vector<std::size_t> relative_position_index(std::size_t grid_h, std::size_t grid_w);

// table: heads × (2H−1)(2W−1) → bias heads × T × T.
template <typename T>
Tensor<T> relative_bias_lookup(const Tensor<T>& table, std::size_t grid_h, std::size_t grid_w);

// x: N×T×C plus a learnable T×C table.
template <typename T>
Tensor<T> add_absolute_position(const Tensor<T>& x, const Tensor<T>& table);

}  // namespace lit::nn
