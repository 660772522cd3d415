#pragma once

// Static parameter and multiply-accumulate accounting. Counts are derived
// from the configuration alone; no tensors are allocated.
//
// FLOP convention: 1 MAC = 1 FLOP. FC and conv layers cost
// output_elements · fan_in; attention adds T²·D for QKᵀ and T²·D for A·V.
// Norms, activations, softmax, pooling and bilinear sampling are itemized
// separately as auxiliary work (one unit per element touched, four per
// bilinear sample) and stay out of the headline total. Bias adds are free.

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "lit/model.hpp"

namespace lit::analyzer {

struct CostRow {
  std::string layer;
  int stage = 0;  // 0 for stem-independent rows (final norm, head)
  std::uint64_t params = 0;
  std::uint64_t flops = 0;
};

struct AuxRow {
  std::string layer;
  std::string kind;  // layer_norm, batch_norm, gelu, softmax, bilinear, pool
  std::uint64_t flops = 0;
};

struct CostReport {
  std::size_t resolution = 0;
  std::vector<CostRow> rows;
  std::vector<AuxRow> aux;

  std::uint64_t total_params() const;
  std::uint64_t total_flops() const;
  std::uint64_t aux_flops() const;
  std::uint64_t stage_params(int stage) const;
  std::uint64_t stage_flops(int stage) const;
};

// Itemized report at `resolution` (square input, batch 1).
CostReport analyze(const model::ModelConfig& config, std::size_t resolution);
// Parameters at the config's own resolution (only relative-position tables
// depend on it).
CostReport count_params(const model::ModelConfig& config);
// Requires resolution divisible by the total downsampling factor.
CostReport count_flops(const model::ModelConfig& config, std::size_t resolution);

// One MSA layer over `tokens` tokens of width `channels`:
// qkv 3TC² + QKᵀ T²C + A·V T²C + projection TC².
std::uint64_t msa_flops(std::uint64_t tokens, std::uint64_t channels);

inline constexpr double kParamTolerance = 0.03;
inline constexpr double kFlopTolerance = 0.05;

struct AuditTarget {
  std::string preset;
  double params_m;
  double flops_g;
};
const std::vector<AuditTarget>& audit_targets();

struct AuditRow {
  std::string preset;
  std::uint64_t params = 0;
  std::uint64_t flops = 0;
  double target_params_m = 0, target_flops_g = 0;
  double params_deviation = 0, flops_deviation = 0;  // relative, signed
  bool params_ok = false, flops_ok = false;

  bool ok() const { return params_ok && flops_ok; }
};

// Compares presets at 224² against the published costs.
std::vector<AuditRow> audit(const std::vector<std::string>& presets);

struct MsaClaim {
  std::uint64_t flops = 0;
  double target = 2.0e9;
  double deviation = 0;
  bool ok = false;
};
// One 56×56-token, C=96 attention layer against the 2.0G figure.
MsaClaim msa_claim();

struct MergeDelta {
  std::int64_t params = 0;
  std::int64_t flops = 0;
  double flops_fraction = 0;   // |Δflops| / total of the DTM model
  double params_fraction = 0;  // |Δparams| / total of the DTM model
};
// DTM merges versus plain strided-conv merges for the same config.
MergeDelta merge_delta(const model::ModelConfig& config, std::size_t resolution);

// Closed-form parameter count of one offset predictor: 2K²·(K²·Cin + 1).
std::uint64_t offset_predictor_params(std::uint64_t in_channels, std::uint64_t kernel);

// True when every entry is strictly smaller than its predecessor.
bool strictly_decreasing(const std::vector<std::uint64_t>& values);

void write_csv(const std::filesystem::path& path, const CostReport& report);
void write_aux_csv(const std::filesystem::path& path, const CostReport& report);
std::string format_table(const CostReport& report);
std::string format_audit(const std::vector<AuditRow>& rows);

}  // namespace lit::analyzer
