#pragma once

// Deformable token merging: GELU(BN(DC(x))) where DC is a K×K stride-K
// deformable convolution whose per-tap offsets are predicted from x by a
// regular convolution of the same geometry.

#include <array>
#include <cstddef>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "lit/nn.hpp"
#include "lit/ops.hpp"

namespace lit::dtm {

template <typename T>
struct DeformableConvParams {
  std::size_t kernel = 2;
  std::size_t stride = 2;
  Tensor<T> weight;         // K×K×Cin×Cout
  Tensor<T> bias;           // Cout
  Tensor<T> offset_weight;  // K×K×Cin×2KK, undefined for a regular (uniform) merge
  Tensor<T> offset_bias;    // 2KK

  bool deformable() const { return offset_weight.defined(); }
  std::size_t offset_channels() const { return 2 * kernel * kernel; }
};

// One merge stage. With deformable offsets this is a DTM; without, the
// uniform strided-conv merge used as the baseline.
template <typename T>
struct TokenMergeParams {
  DeformableConvParams<T> conv;
  Tensor<T> bn_gamma;
  Tensor<T> bn_beta;
  BatchNormState<T> bn;

  // Offset predictor weights and biases start at exactly zero.
  static TokenMergeParams make(std::size_t in_channels, std::size_t out_channels, std::size_t kernel,
                               bool deformable, Rng& rng);

  void visit(const std::string& prefix, const nn::ParamVisitor<T>& f) {
    f(prefix + ".conv.weight", conv.weight);
    f(prefix + ".conv.bias", conv.bias);
    if (conv.deformable()) {
      f(prefix + ".offset.weight", conv.offset_weight);
      f(prefix + ".offset.bias", conv.offset_bias);
    }
    f(prefix + ".bn.gamma", bn_gamma);
    f(prefix + ".bn.beta", bn_beta);
  }
  void visit_buffers(const std::string& prefix, const nn::ParamVisitor<T>& f) {
    f(prefix + ".bn.running_mean", bn.running_mean);
    f(prefix + ".bn.running_var", bn.running_var);
  }
};

template <typename T>
using DtmParams = TokenMergeParams<T>;

template <typename T>
struct DeformResult {
  Tensor<T> out;
  Tensor<T> offsets;  // N×H'×W'×2KK; undefined for a uniform merge
};

// Offsets are predicted by the offset conv applied to x.
template <typename T>
DeformResult<T> deformable_conv(const Tensor<T>& x, const DeformableConvParams<T>& params);

// Same convolution with caller-supplied offsets.
template <typename T>
Tensor<T> deformable_conv_with_offsets(const Tensor<T>& x, const Tensor<T>& offsets,
                                       const DeformableConvParams<T>& params);

// x: N×H×W×C_in (H, W multiples of the stride) → N×H/2×W/2×C_out.
template <typename T>
DeformResult<T> dtm_forward(const Tensor<T>& x, TokenMergeParams<T>& params, Mode mode);

struct ImagePoint {
  double y = 0;
  double x = 0;
};

// Offset fields captured from the merges at stages 2, 3 and 4, in order.
template <typename T>
struct OffsetTrace {
  std::vector<Tensor<T>> fields;
  std::size_t patch = 4;
  std::size_t kernel = 2;
  std::size_t stride = 2;

  bool empty() const { return fields.empty(); }
};

// Expands one final-stage token through every merge down to stage-1 grid
// positions (each merge contributes K·K samples) and scales them by the patch
// size into image pixel coordinates. Leaf index is row-major over the taps of
// the last, then middle, then first merge. Offsets at fractional positions
// are interpolated bilinearly from the offset field.
template <typename T>
std::vector<ImagePoint> trace_offsets(const OffsetTrace<T>& trace, std::size_t token_y, std::size_t token_x,
                                      std::size_t batch_index = 0);

// Largest per-axis distance, in image pixels, between traced leaves and the
// leaves of the same token under all-zero offsets, over every final token.
template <typename T>
double max_grid_deviation(const OffsetTrace<T>& trace, std::size_t batch_index = 0);

// CSV columns: token_y, token_x, leaf_index, image_y, image_x.
struct TokenTrace {
  std::size_t token_y = 0, token_x = 0;
  std::vector<ImagePoint> leaves;
};
void write_offset_csv(const std::filesystem::path& path, const std::vector<TokenTrace>& traces);

}  // namespace lit::dtm
