#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <set>
#include <string>
#include <string_view>
#include <variant>
#include <vector>

#include <json.hpp>

#include "lit/dtm.hpp"
#include "lit/nn.hpp"
#include "lit/serialize.hpp"

namespace lit::model {

using nn::PosEncoding;

enum class BlockKind { kMlp, kTransformer };
enum class MergeKind { kLinearEmbed, kDtm, kUniformConv };

inline constexpr std::size_t kNumStages = 4;

struct StageSpec {
  std::size_t patch_size = 2;
  std::size_t channels = 0;
  std::size_t depth = 0;
  std::size_t heads = 0;  // 0 for MLP stages
  std::size_t expansion = 4;
  BlockKind block_kind = BlockKind::kMlp;
  MergeKind merge_kind = MergeKind::kDtm;

  bool operator==(const StageSpec&) const = default;
};

struct ModelConfig {
  std::array<StageSpec, kNumStages> stages;
  PosEncoding pos_encoding = PosEncoding::kNone;
  std::size_t num_classes = 1000;
  std::size_t resolution = 224;

  bool operator==(const ModelConfig&) const = default;
};

// Every broken invariant, one message each; empty when the config is valid.
std::vector<std::string> validate(const ModelConfig& config);
// Throws ConfigError listing every violation.
void require_valid(const ModelConfig& config);

// lit-ti, lit-s, lit-m, lit-b.
ModelConfig preset(std::string_view name);
std::vector<std::string> preset_names();

// Width-reduced model used for desk-scale training: C=[16,32,48,64],
// L=[1,1,2,1], 64×64 input, 10 classes.
ModelConfig toy_config();

// Switches the listed stages (1-based) to MLP blocks; depths are unchanged.
ModelConfig ablate(ModelConfig config, const std::set<int>& remove_msa_stages);
// Turns every stage into Transformer blocks with the given head counts.
ModelConfig with_attention_everywhere(ModelConfig config, const std::array<std::size_t, kNumStages>& heads);

// Side length of each stage's token grid for a square input.
std::array<std::size_t, kNumStages> stage_grids(const ModelConfig& config, std::size_t resolution);

std::string to_string(BlockKind kind);
std::string to_string(MergeKind kind);
std::string to_string(PosEncoding kind);

nlohmann::json config_to_json(const ModelConfig& config);
// Field-for-field mirror of ModelConfig; unknown or missing keys are errors.
ModelConfig config_from_json(const nlohmann::json& doc);
ModelConfig load_config(const std::filesystem::path& path);

template <typename T>
using Block = std::variant<nn::MlpParams<T>, nn::TransformerParams<T>>;

template <typename T>
struct Stage {
  std::optional<dtm::TokenMergeParams<T>> merge;  // stages 2–4
  Tensor<T> pos_embed;                            // absolute encoding, when configured here
  std::vector<Block<T>> blocks;
};

template <typename T>
struct LitModel {
  ModelConfig config;
  nn::PatchEmbedParams<T> patch_embed;
  std::array<Stage<T>, kNumStages> stages;
  nn::LayerNorm<T> norm;
  nn::Linear<T> head;

  // Learnable tensors, hierarchically named, in a fixed order.
  void visit_parameters(const nn::ParamVisitor<T>& f);
  // Non-learnable state (batch-norm running statistics).
  void visit_buffers(const nn::ParamVisitor<T>& f);

  std::vector<std::pair<std::string, Tensor<T>>> named_parameters();
  std::size_t parameter_count();

  // Running statistics of every merge set to (0, 1) and marked valid.
  void seed_batch_norm_identity();

  // Parameters and buffers as LITCKPT1 records under "model/...", plus a
  // per-merge "…bn.initialized" flag.
  std::vector<ckpt::NamedTensor> state_records();
  void load_state_records(const std::vector<ckpt::NamedTensor>& records);
};

// Deterministic initialization from (config, seed).
template <typename T>
LitModel<T> build(const ModelConfig& config, std::uint64_t seed);

// What a forward pass should retain for inspection.
template <typename T>
struct Inspection {
  bool keep_attention = true;
  bool keep_offsets = true;
  dtm::OffsetTrace<T> offsets;
  // attention[stage][block]: N×heads×T×T (undefined for MLP blocks)
  std::array<std::vector<Tensor<T>>, kNumStages> attention;
  // Output of each stage as N×H×W×C.
  std::array<Shape, kNumStages> stage_shapes;
};

// images N×H×W×3 → logits N×num_classes.
template <typename T>
Tensor<T> forward(LitModel<T>& model, const Tensor<T>& images, Mode mode, Inspection<T>* inspect = nullptr);

}  // namespace lit::model
