#pragma once

// Constructions showing that a per-pixel FC layer, a K×K convolution and a
// multi-head self-attention layer with one-hot attention compute the same
// thing, plus gradient-based receptive-field probes.

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <vector>

#include "lit/model.hpp"
#include "lit/nn.hpp"

namespace lit::equiv {

struct Shift {
  int dy = 0;
  int dx = 0;
  bool operator==(const Shift&) const = default;
};

// Δ_K for a K×K kernel, tap k = ky·K + kx ↦ (ky − a, kx − a) with
// a = (K − 1) / 2 (so K = 3 gives {−1, 0, 1}², K = 2 gives {0, 1}²).
std::vector<Shift> shift_alphabet(std::size_t kernel);
// Leading zero padding that makes conv2d output pixel p read input p + g(k).
inline std::size_t same_pad(std::size_t kernel) { return (kernel - 1) / 2; }

// Bijection from attention heads to kernel taps.
class HeadShiftMap {
 public:
  // f(h) = tap_of_head[h]. Throws ConfigError unless tap_of_head is a
  // permutation of 0..K²−1.
  HeadShiftMap(std::size_t kernel, std::vector<std::size_t> tap_of_head);
  static HeadShiftMap identity(std::size_t kernel);
  // Validates a requested head count against the kernel before building.
  static HeadShiftMap for_heads(std::size_t heads, std::size_t kernel);

  std::size_t kernel() const { return kernel_; }
  std::size_t heads() const { return taps_.size(); }
  std::size_t tap(std::size_t head) const { return taps_.at(head); }
  Shift shift(std::size_t head) const;

 private:
  std::size_t kernel_;
  std::vector<std::size_t> taps_;
};

template <typename T>
struct MsaConv {
  nn::MsaParams<T> params;
  Tensor<T> attention;  // N×heads×T×T one-hot rows
  std::size_t grid_h = 0, grid_w = 0;
};

// conv_w: K×K×Cin×Cout. Head h gets a Cin-wide identity value path and the
// output projection rows W[f(h)]; its attention row for pixel p is one-hot at
// p + shift(h), clamped into the grid at the border.
template <typename T>
MsaConv<T> build_msa_as_conv(const Tensor<T>& conv_w, const HeadShiftMap& f, std::size_t batch,
                             std::size_t grid_h, std::size_t grid_w);

// x: N×H×W×Cin → N×H×W×Cout through msa() with the override.
template <typename T>
Tensor<T> run_msa_as_conv(const MsaConv<T>& m, const Tensor<T>& x);

// Max |msa − conv2d| over interior pixels (full K×K support in the grid).
template <typename T>
double msa_conv_interior_deviation(const Tensor<T>& msa_out, const Tensor<T>& conv_out, std::size_t kernel);

// Same w (Cin×Cout) applied as a per-pixel FC and as a 1×1 convolution to
// x (N×H×W×Cin); returns the max absolute deviation.
template <typename T>
double verify_fc_equals_1x1_conv(const Tensor<T>& w, const Tensor<T>& x);

// A layer of a probe stack acting on N×H×W×C grids.
template <typename T>
using GridLayer = std::function<Tensor<T>(const Tensor<T>&)>;

template <typename T>
GridLayer<T> mlp_layer(const nn::MlpParams<T>& params);
template <typename T>
GridLayer<T> conv_layer(const Tensor<T>& weight, std::size_t pad);
template <typename T>
GridLayer<T> msa_conv_layer(const MsaConv<T>& m);

inline constexpr double kInfluenceThreshold = 1e-8;

struct InfluenceMask {
  std::vector<double> influence;  // H×W, Σ over input channels and output channels of |∂y/∂x|
  std::vector<std::uint8_t> mask;  // influence > threshold · max
  std::size_t k_eff = 0;           // longer side of the mask's bounding box
};

struct ReceptiveFieldReport {
  std::size_t query_y = 0, query_x = 0;
  std::size_t height = 0, width = 0;
  std::vector<InfluenceMask> layers;  // after layer 1, after layers 1–2, ...

  const InfluenceMask& final() const { return layers.back(); }
};

// Backpropagates every channel of output[query] to a seeded random input of
// shape 1×H×W×C.
template <typename T>
ReceptiveFieldReport receptive_field_probe(const std::vector<GridLayer<T>>& stack, std::size_t height,
                                           std::size_t width, std::size_t channels, std::size_t query_y,
                                           std::size_t query_x, std::uint64_t seed = 0);

struct AttentionExport {
  std::size_t stage = 0, block = 0;
  std::size_t heads = 0, grid = 0;
  std::size_t images = 0;
  std::vector<double> maps;  // heads×T×T, averaged over images

  double at(std::size_t head, std::size_t query, std::size_t key) const {
    const std::size_t t = grid * grid;
    return maps[(head * t + query) * t + key];
  }
};

// Eval-mode forward over images (N×H×W×3), averaging each head's attention
// over the batch. stage and block are 1-based and 0-based respectively.
template <typename T>
AttentionExport export_attention_maps(model::LitModel<T>& model, const Tensor<T>& images, std::size_t stage,
                                      std::size_t block);

// One PGM per (head, query) named s{stage}_b{block}_h{head}_q{y}_{x}.pgm,
// scaled so the row maximum maps to 255, plus attention.csv with columns
// head,query_y,query_x,key_y,key_x,probability.
std::vector<std::filesystem::path> write_attention_maps(
    const std::filesystem::path& dir, const AttentionExport& exp,
    const std::vector<std::pair<std::size_t, std::size_t>>& queries);

}  // namespace lit::equiv
