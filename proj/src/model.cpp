#include "lit/model.hpp"

#include <fstream>
#include <map>
#include <numeric>

namespace lit::model {

namespace {

StageSpec stage(std::size_t patch, std::size_t channels, std::size_t depth, std::size_t heads,
                std::size_t expansion, MergeKind merge) {
  StageSpec s;
  s.patch_size = patch;
  s.channels = channels;
  s.depth = depth;
  s.heads = heads;
  s.expansion = expansion;
  s.block_kind = heads == 0 ? BlockKind::kMlp : BlockKind::kTransformer;
  s.merge_kind = merge;
  return s;
}

ModelConfig make_config(std::array<std::size_t, 4> c, std::array<std::size_t, 4> l, std::array<std::size_t, 4> n,
                        std::array<std::size_t, 4> e, PosEncoding pos, std::size_t classes, std::size_t resolution) {
  ModelConfig cfg;
  for (std::size_t s = 0; s < kNumStages; ++s) {
    cfg.stages[s] = stage(s == 0 ? 4 : 2, c[s], l[s], n[s], e[s], s == 0 ? MergeKind::kLinearEmbed : MergeKind::kDtm);
  }
  cfg.pos_encoding = pos;
  cfg.num_classes = classes;
  cfg.resolution = resolution;
  return cfg;
}

}  // namespace

std::vector<std::string> validate(const ModelConfig& config) {
  std::vector<std::string> errors;
  std::size_t downsample = 1;
  for (std::size_t i = 0; i < kNumStages; ++i) {
    const auto& s = config.stages[i];
    const std::string tag = "stage " + std::to_string(i + 1) + ": ";
    if (s.patch_size < 1) errors.push_back(tag + "patch_size must be >= 1");
    if (s.channels < 1) errors.push_back(tag + "channels must be >= 1");
    if (s.depth < 1) errors.push_back(tag + "depth must be >= 1");
    if (s.expansion < 1) errors.push_back(tag + "expansion must be >= 1");
    if ((s.block_kind == BlockKind::kMlp) != (s.heads == 0)) {
      errors.push_back(tag + "block_kind mlp requires heads == 0 and transformer requires heads > 0");
    }
    if (s.block_kind == BlockKind::kTransformer && s.heads > 0 && s.channels % s.heads != 0) {
      errors.push_back(tag + "channels " + std::to_string(s.channels) + " not divisible by " +
                       std::to_string(s.heads) + " heads");
    }
    if (i == 0 && s.merge_kind != MergeKind::kLinearEmbed) {
      errors.push_back(tag + "the first stage must use merge_kind linear_embed");
    }
    if (i > 0 && s.merge_kind == MergeKind::kLinearEmbed) {
      errors.push_back(tag + "merge_kind must be dtm or uniform_conv");
    }
    downsample *= std::max<std::size_t>(s.patch_size, 1);
  }
  if (config.num_classes < 1) errors.push_back("num_classes must be >= 1");
  if (config.resolution == 0 || config.resolution % downsample != 0) {
    errors.push_back("resolution " + std::to_string(config.resolution) + " not divisible by " +
                     std::to_string(downsample) + " (product of stage patch sizes)");
  }
  return errors;
}

void require_valid(const ModelConfig& config) {
  const auto errors = validate(config);
  if (errors.empty()) return;
  std::string msg = "invalid model config:";
  for (const auto& e : errors) msg += "\n  - " + e;
  throw ConfigError(msg);
}

ModelConfig preset(std::string_view name) {
  const auto abs = PosEncoding::kAbsolute;
  const auto rel = PosEncoding::kRelative;
  if (name == "lit-ti") return make_config({64, 128, 320, 512}, {3, 4, 6, 3}, {0, 0, 5, 8}, {8, 8, 4, 4}, abs, 1000, 224);
  if (name == "lit-s") return make_config({96, 192, 384, 768}, {2, 2, 6, 2}, {0, 0, 12, 24}, {4, 4, 4, 4}, rel, 1000, 224);
  if (name == "lit-m") return make_config({96, 192, 384, 768}, {2, 2, 18, 2}, {0, 0, 12, 24}, {4, 4, 4, 4}, rel, 1000, 224);
  if (name == "lit-b") return make_config({128, 256, 512, 1024}, {2, 2, 18, 2}, {0, 0, 16, 32}, {4, 4, 4, 4}, rel, 1000, 224);
  throw ConfigError("unknown preset '" + std::string(name) + "' (expected lit-ti, lit-s, lit-m or lit-b)");
}

std::vector<std::string> preset_names() { return {"lit-ti", "lit-s", "lit-m", "lit-b"}; }

ModelConfig toy_config() {
  return make_config({16, 32, 48, 64}, {1, 1, 2, 1}, {0, 0, 2, 4}, {4, 4, 4, 4}, PosEncoding::kRelative, 10, 64);
}

ModelConfig ablate(ModelConfig config, const std::set<int>& remove_msa_stages) {
  for (int s : remove_msa_stages) {
    if (s < 1 || s > static_cast<int>(kNumStages)) {
      throw ConfigError("ablate: stage " + std::to_string(s) + " outside 1..4");
    }
    auto& spec = config.stages[static_cast<std::size_t>(s - 1)];
    spec.block_kind = BlockKind::kMlp;
    spec.heads = 0;
  }
  return config;
}

ModelConfig with_attention_everywhere(ModelConfig config, const std::array<std::size_t, kNumStages>& heads) {
  for (std::size_t s = 0; s < kNumStages; ++s) {
    config.stages[s].heads = heads[s];
    config.stages[s].block_kind = heads[s] == 0 ? BlockKind::kMlp : BlockKind::kTransformer;
  }
  return config;
}

std::array<std::size_t, kNumStages> stage_grids(const ModelConfig& config, std::size_t resolution) {
  std::array<std::size_t, kNumStages> grids{};
  std::size_t side = resolution;
  for (std::size_t s = 0; s < kNumStages; ++s) {
    const std::size_t p = config.stages[s].patch_size;
    if (p == 0 || side % p != 0) {
      throw ConfigError("resolution " + std::to_string(resolution) + " does not divide evenly through stage " +
                        std::to_string(s + 1) + " (patch size " + std::to_string(p) + ")");
    }
    side /= p;
    grids[s] = side;
  }
  return grids;
}

std::string to_string(BlockKind kind) { return kind == BlockKind::kMlp ? "mlp" : "transformer"; }

std::string to_string(MergeKind kind) {
  switch (kind) {
    case MergeKind::kLinearEmbed:
      return "linear_embed";
    case MergeKind::kDtm:
      return "dtm";
    case MergeKind::kUniformConv:
      return "uniform_conv";
  }
  return "?";
}

std::string to_string(PosEncoding kind) {
  switch (kind) {
    case PosEncoding::kNone:
      return "none";
    case PosEncoding::kAbsolute:
      return "absolute";
    case PosEncoding::kRelative:
      return "relative";
  }
  return "?";
}

nlohmann::json config_to_json(const ModelConfig& config) {
  nlohmann::json stages = nlohmann::json::array();
  for (const auto& s : config.stages) {
    stages.push_back({{"patch_size", s.patch_size},
                      {"channels", s.channels},
                      {"depth", s.depth},
                      {"heads", s.heads},
                      {"expansion", s.expansion},
                      {"block_kind", to_string(s.block_kind)},
                      {"merge_kind", to_string(s.merge_kind)}});
  }
  return {{"stages", stages},
          {"pos_encoding", to_string(config.pos_encoding)},
          {"num_classes", config.num_classes},
          {"resolution", config.resolution}};
}

namespace {

void check_keys(const nlohmann::json& obj, const std::set<std::string>& allowed, const std::string& where) {
  if (!obj.is_object()) throw ConfigError(where + " must be a JSON object");
  for (const auto& [key, _] : obj.items()) {
    if (!allowed.count(key)) throw ConfigError("unknown key '" + key + "' in " + where);
  }
  for (const auto& key : allowed) {
    if (!obj.contains(key)) throw ConfigError("missing key '" + key + "' in " + where);
  }
}

std::size_t get_count(const nlohmann::json& obj, const char* key, const std::string& where) {
  const auto& v = obj.at(key);
  if (!v.is_number_integer() || v.get<long long>() < 0) {
    throw ConfigError(std::string(key) + " in " + where + " must be a non-negative integer");
  }
  return v.get<std::size_t>();
}

template <typename E>
E get_enum(const nlohmann::json& obj, const char* key, const std::vector<std::pair<std::string, E>>& choices,
           const std::string& where) {
  const auto& v = obj.at(key);
  if (v.is_string()) {
    for (const auto& [name, value] : choices) {
      if (v.get<std::string>() == name) return value;
    }
  }
  throw ConfigError("invalid " + std::string(key) + " " + v.dump() + " in " + where);
}

}  // namespace

ModelConfig config_from_json(const nlohmann::json& doc) {
  check_keys(doc, {"stages", "pos_encoding", "num_classes", "resolution"}, "config");
  const auto& stages = doc.at("stages");
  if (!stages.is_array() || stages.size() != kNumStages) throw ConfigError("config.stages must list exactly 4 stages");
  ModelConfig cfg;
  for (std::size_t i = 0; i < kNumStages; ++i) {
    const std::string where = "stages[" + std::to_string(i) + "]";
    const auto& s = stages[i];
    check_keys(s, {"patch_size", "channels", "depth", "heads", "expansion", "block_kind", "merge_kind"}, where);
    auto& out = cfg.stages[i];
    out.patch_size = get_count(s, "patch_size", where);
    out.channels = get_count(s, "channels", where);
    out.depth = get_count(s, "depth", where);
    out.heads = get_count(s, "heads", where);
    out.expansion = get_count(s, "expansion", where);
    out.block_kind = get_enum<BlockKind>(s, "block_kind",
                                         {{"mlp", BlockKind::kMlp}, {"transformer", BlockKind::kTransformer}}, where);
    out.merge_kind = get_enum<MergeKind>(
        s, "merge_kind",
        {{"linear_embed", MergeKind::kLinearEmbed}, {"dtm", MergeKind::kDtm}, {"uniform_conv", MergeKind::kUniformConv}},
        where);
  }
  cfg.pos_encoding = get_enum<PosEncoding>(
      doc, "pos_encoding",
      {{"none", PosEncoding::kNone}, {"absolute", PosEncoding::kAbsolute}, {"relative", PosEncoding::kRelative}},
      "config");
  cfg.num_classes = get_count(doc, "num_classes", "config");
  cfg.resolution = get_count(doc, "resolution", "config");
  require_valid(cfg);
  return cfg;
}

ModelConfig load_config(const std::filesystem::path& path) {
  std::ifstream f(path);
  if (!f) throw IoError("cannot open config " + path.string());
  nlohmann::json doc;
  try {
    f >> doc;
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError("config " + path.string() + " is not valid JSON: " + e.what());
  }
  return config_from_json(doc);
}

// --------------------------------------------------------------------- model

template <typename T>
void LitModel<T>::visit_parameters(const nn::ParamVisitor<T>& f) {
  patch_embed.visit("patch_embed", f);
  for (std::size_t s = 0; s < kNumStages; ++s) {
    const std::string prefix = "stage" + std::to_string(s + 1);
    auto& st = stages[s];
    if (st.merge) st.merge->visit(prefix + ".merge", f);
    if (st.pos_embed.defined()) f(prefix + ".pos_embed", st.pos_embed);
    for (std::size_t l = 0; l < st.blocks.size(); ++l) {
      const std::string bp = prefix + ".blocks." + std::to_string(l);
      std::visit([&](auto& b) { b.visit(bp, f); }, st.blocks[l]);
    }
  }
  norm.visit("norm", f);
  head.visit("head", f);
}

template <typename T>
void LitModel<T>::visit_buffers(const nn::ParamVisitor<T>& f) {
  for (std::size_t s = 0; s < kNumStages; ++s) {
    if (stages[s].merge) stages[s].merge->visit_buffers("stage" + std::to_string(s + 1) + ".merge", f);
  }
}

template <typename T>
std::vector<std::pair<std::string, Tensor<T>>> LitModel<T>::named_parameters() {
  std::vector<std::pair<std::string, Tensor<T>>> out;
  visit_parameters([&](const std::string& name, Tensor<T>& t) { out.emplace_back(name, t); });
  return out;
}

template <typename T>
std::size_t LitModel<T>::parameter_count() {
  std::size_t n = 0;
  visit_parameters([&](const std::string&, Tensor<T>& t) { n += t.numel(); });
  return n;
}

template <typename T>
void LitModel<T>::seed_batch_norm_identity() {
  for (auto& st : stages) {
    if (st.merge) st.merge->bn.seed_identity();
  }
}

template <typename T>
std::vector<ckpt::NamedTensor> LitModel<T>::state_records() {
  std::vector<ckpt::NamedTensor> out;
  auto add = [&](const std::string& name, Tensor<T>& t) { out.push_back(ckpt::to_record("model/" + name, t)); };
  visit_parameters(add);
  visit_buffers(add);
  for (std::size_t s = 0; s < kNumStages; ++s) {
    if (!stages[s].merge) continue;
    out.push_back({"model/stage" + std::to_string(s + 1) + ".merge.bn.initialized", {1},
                   {stages[s].merge->bn.initialized ? 1.0f : 0.0f}});
  }
  return out;
}

template <typename T>
void LitModel<T>::load_state_records(const std::vector<ckpt::NamedTensor>& records) {
  std::map<std::string, const ckpt::NamedTensor*> by_name;
  for (const auto& r : records) {
    if (r.name.rfind("model/", 0) == 0) by_name[r.name.substr(6)] = &r;
  }
  std::size_t used = 0;
  auto assign = [&](const std::string& name, Tensor<T>& t) {
    auto it = by_name.find(name);
    if (it == by_name.end()) throw ConfigError("checkpoint is missing tensor '" + name + "'");
    if (it->second->shape != t.shape()) {
      throw ConfigError("checkpoint tensor '" + name + "' has shape " + shape_str(it->second->shape) +
                        ", model expects " + shape_str(t.shape()));
    }
    auto dst = t.mutable_data();
    for (std::size_t i = 0; i < dst.size(); ++i) dst[i] = static_cast<T>(it->second->values[i]);
    ++used;
  };
  visit_parameters(assign);
  visit_buffers(assign);
  for (std::size_t s = 0; s < kNumStages; ++s) {
    if (!stages[s].merge) continue;
    const std::string name = "stage" + std::to_string(s + 1) + ".merge.bn.initialized";
    auto it = by_name.find(name);
    if (it == by_name.end()) throw ConfigError("checkpoint is missing tensor '" + name + "'");
    stages[s].merge->bn.initialized = it->second->values.at(0) != 0.0f;
    ++used;
  }
  if (used != by_name.size()) throw ConfigError("checkpoint holds model tensors this config does not have");
}

template <typename T>
LitModel<T> build(const ModelConfig& config, std::uint64_t seed) {
  require_valid(config);
  const auto grids = stage_grids(config, config.resolution);
  Rng rng(seed);
  LitModel<T> m;
  m.config = config;
  m.patch_embed = nn::PatchEmbedParams<T>::make(config.stages[0].patch_size, config.stages[0].channels, rng);
  for (std::size_t s = 0; s < kNumStages; ++s) {
    const auto& spec = config.stages[s];
    auto& st = m.stages[s];
    const std::size_t c = spec.channels, g = grids[s];
    if (s > 0) {
      st.merge = dtm::TokenMergeParams<T>::make(config.stages[s - 1].channels, c, spec.patch_size,
                                                spec.merge_kind == MergeKind::kDtm, rng);
    }
    const bool attention = spec.block_kind == BlockKind::kTransformer;
    if (attention && config.pos_encoding == PosEncoding::kAbsolute) st.pos_embed = trunc_normal<T>({g * g, c}, rng);
    for (std::size_t l = 0; l < spec.depth; ++l) {
      if (!attention) {
        st.blocks.emplace_back(nn::MlpParams<T>::make(c, spec.expansion, rng));
        continue;
      }
      nn::TransformerParams<T> b;
      b.norm = nn::LayerNorm<T>::make(c);
      b.attn = config.pos_encoding == PosEncoding::kRelative
                   ? nn::MsaParams<T>::make_relative(c, spec.heads, g, g, rng)
                   : nn::MsaParams<T>::make(c, spec.heads, rng);
      b.mlp = nn::MlpParams<T>::make(c, spec.expansion, rng);
      st.blocks.emplace_back(std::move(b));
    }
  }
  m.norm = nn::LayerNorm<T>::make(config.stages.back().channels);
  m.head = nn::Linear<T>::make(config.stages.back().channels, config.num_classes, rng);
  for (auto& [name, t] : m.named_parameters()) t.set_requires_grad(true);
  return m;
}

template <typename T>
Tensor<T> forward(LitModel<T>& model, const Tensor<T>& images, Mode mode, Inspection<T>* inspect) {
  if (images.rank() != 4 || images.dim(3) != 3) {
    throw DimensionError("forward: expected N×H×W×3 images, got " + shape_str(images.shape()));
  }
  const std::size_t n = images.dim(0);
  if (images.dim(1) != images.dim(2)) throw ConfigError("forward: only square inputs are supported");
  const auto grids = stage_grids(model.config, images.dim(1));
  if (inspect != nullptr) {
    inspect->offsets = dtm::OffsetTrace<T>{};
    inspect->offsets.patch = model.config.stages[0].patch_size;
    for (auto& a : inspect->attention) a.clear();
  }

  auto x = nn::patch_embed(images, model.patch_embed);  // N×T×C1
  for (std::size_t s = 0; s < kNumStages; ++s) {
    auto& st = model.stages[s];
    const std::size_t g = grids[s], c = model.config.stages[s].channels;
    if (st.merge) {
      const std::size_t prev = grids[s - 1];
      auto grid = reshape(x, {n, prev, prev, model.config.stages[s - 1].channels});
      auto merged = dtm::dtm_forward(grid, *st.merge, mode);
      if (inspect != nullptr && inspect->keep_offsets) {
        inspect->offsets.kernel = st.merge->conv.kernel;
        inspect->offsets.stride = st.merge->conv.stride;
        inspect->offsets.fields.push_back(merged.offsets);
      }
      x = reshape(merged.out, {n, g * g, c});
    }
    if (st.pos_embed.defined()) x = nn::add_absolute_position(x, st.pos_embed);
    for (auto& block : st.blocks) {
      if (auto* mlp = std::get_if<nn::MlpParams<T>>(&block)) {
        x = nn::mlp_block(x, *mlp);
        if (inspect != nullptr && inspect->keep_attention) inspect->attention[s].emplace_back();
      } else {
        auto r = nn::transformer_block(x, std::get<nn::TransformerParams<T>>(block));
        x = r.out;
        if (inspect != nullptr && inspect->keep_attention) inspect->attention[s].push_back(r.attn);
      }
    }
    if (inspect != nullptr) inspect->stage_shapes[s] = Shape{n, g, g, c};
  }
  auto pooled = mean_axis(model.norm(x), 1);  // N×C4
  return model.head(pooled);
}

#define LIT_INSTANTIATE(T)                                                                             \
  template struct LitModel<T>;                                                                         \
  template LitModel<T> build<T>(const ModelConfig&, std::uint64_t);                                    \
  template Tensor<T> forward<T>(LitModel<T>&, const Tensor<T>&, Mode, Inspection<T>*);
LIT_INSTANTIATE(float)
LIT_INSTANTIATE(double)
#undef LIT_INSTANTIATE

}  // namespace lit::model
