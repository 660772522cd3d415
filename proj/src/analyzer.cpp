#include "lit/analyzer.hpp"

#include <cmath>
#include <cstdio>
#include <fstream>
#include <sstream>

namespace lit::analyzer {

using model::BlockKind;
using model::MergeKind;
using model::ModelConfig;
using U = std::uint64_t;

std::uint64_t CostReport::total_params() const {
  U n = 0;
  for (const auto& r : rows) n += r.params;
  return n;
}

std::uint64_t CostReport::total_flops() const {
  U n = 0;
  for (const auto& r : rows) n += r.flops;
  return n;
}

std::uint64_t CostReport::aux_flops() const {
  U n = 0;
  for (const auto& r : aux) n += r.flops;
  return n;
}

std::uint64_t CostReport::stage_params(int stage) const {
  U n = 0;
  for (const auto& r : rows) {
    if (r.stage == stage) n += r.params;
  }
  return n;
}

std::uint64_t CostReport::stage_flops(int stage) const {
  U n = 0;
  for (const auto& r : rows) {
    if (r.stage == stage) n += r.flops;
  }
  return n;
}

std::uint64_t msa_flops(std::uint64_t tokens, std::uint64_t channels) {
  const U t = tokens, c = channels;
  return 3 * t * c * c + 2 * t * t * c + t * c * c;
}

std::uint64_t offset_predictor_params(std::uint64_t in_channels, std::uint64_t kernel) {
  return 2 * kernel * kernel * (kernel * kernel * in_channels + 1);
}

namespace {

struct Builder {
  CostReport& report;
  int stage = 0;

  void row(const std::string& layer, U params, U flops) { report.rows.push_back({layer, stage, params, flops}); }
  void aux(const std::string& layer, const char* kind, U flops) { report.aux.push_back({layer, kind, flops}); }

  // FC over `tokens` rows.
  void linear(const std::string& layer, U tokens, U in, U out) { row(layer, in * out + out, tokens * in * out); }
  void layer_norm(const std::string& layer, U tokens, U c) {
    row(layer, 2 * c, 0);
    aux(layer, "layer_norm", tokens * c);
  }

  void mlp(const std::string& prefix, U tokens, U c, U e) {
    layer_norm(prefix + ".norm", tokens, c);
    linear(prefix + ".fc1", tokens, c, e * c);
    aux(prefix + ".gelu", "gelu", tokens * e * c);
    linear(prefix + ".fc2", tokens, e * c, c);
  }

  void attention(const std::string& prefix, U tokens, U c, U heads, U rel_table) {
    linear(prefix + ".qkv", tokens, c, 3 * c);
    row(prefix + ".qk", 0, tokens * tokens * c);
    aux(prefix + ".softmax", "softmax", heads * tokens * tokens);
    row(prefix + ".av", 0, tokens * tokens * c);
    linear(prefix + ".proj", tokens, c, c);
    if (rel_table > 0) row(prefix + ".rel_bias", heads * rel_table, 0);
  }
};

}  // namespace

CostReport analyze(const ModelConfig& config, std::size_t resolution) {
  model::require_valid(config);
  const auto grids = model::stage_grids(config, resolution);
  const auto param_grids = model::stage_grids(config, config.resolution);
  CostReport report;
  report.resolution = resolution;
  Builder b{report};

  const auto& s1 = config.stages[0];
  const U p = s1.patch_size;
  b.stage = 1;
  b.linear("patch_embed.proj", U(grids[0]) * grids[0], p * p * 3, s1.channels);

  for (std::size_t s = 0; s < model::kNumStages; ++s) {
    const auto& spec = config.stages[s];
    const std::string prefix = "stage" + std::to_string(s + 1);
    const U g = grids[s], t = g * g, c = spec.channels;
    b.stage = static_cast<int>(s + 1);
    if (s > 0) {
      const U cin = config.stages[s - 1].channels, k = spec.patch_size, fan_in = k * k * cin;
      b.row(prefix + ".merge.conv", fan_in * c + c, t * fan_in * c);
      if (spec.merge_kind == MergeKind::kDtm) {
        b.row(prefix + ".merge.offset", offset_predictor_params(cin, k), t * fan_in * 2 * k * k);
        b.aux(prefix + ".merge.sample", "bilinear", 4 * t * fan_in);
      }
      b.row(prefix + ".merge.bn", 2 * c, 0);
      b.aux(prefix + ".merge.bn", "batch_norm", t * c);
      b.aux(prefix + ".merge.gelu", "gelu", t * c);
    }
    const bool attention = spec.block_kind == BlockKind::kTransformer;
    if (attention && config.pos_encoding == model::PosEncoding::kAbsolute) b.row(prefix + ".pos_embed", t * c, 0);
    const U pg = param_grids[s];
    const U rel_table = attention && config.pos_encoding == model::PosEncoding::kRelative ? (2 * pg - 1) * (2 * pg - 1) : 0;
    for (std::size_t l = 0; l < spec.depth; ++l) {
      const std::string bp = prefix + ".blocks." + std::to_string(l);
      if (attention) {
        b.layer_norm(bp + ".norm", t, c);
        b.attention(bp + ".attn", t, c, spec.heads, rel_table);
        b.mlp(bp + ".mlp", t, c, spec.expansion);
      } else {
        b.mlp(bp, t, c, spec.expansion);
      }
    }
  }

  const U c4 = config.stages.back().channels, t4 = U(grids.back()) * grids.back();
  b.stage = 0;
  b.layer_norm("norm", t4, c4);
  b.aux("pool", "pool", t4 * c4);
  b.linear("head", 1, c4, config.num_classes);
  return report;
}

CostReport count_params(const ModelConfig& config) { return analyze(config, config.resolution); }

CostReport count_flops(const ModelConfig& config, std::size_t resolution) { return analyze(config, resolution); }

const std::vector<AuditTarget>& audit_targets() {
  static const std::vector<AuditTarget> targets = {
      {"lit-ti", 19, 3.6}, {"lit-s", 27, 4.1}, {"lit-m", 48, 8.6}, {"lit-b", 86, 15.0}};
  return targets;
}

std::vector<AuditRow> audit(const std::vector<std::string>& presets) {
  std::vector<AuditRow> out;
  for (const auto& name : presets) {
    const AuditTarget* target = nullptr;
    for (const auto& t : audit_targets()) {
      if (t.preset == name) target = &t;
    }
    if (target == nullptr) throw ConfigError("no published cost for preset '" + name + "'");
    auto config = model::preset(name);
    config.resolution = 224;
    const auto report = analyze(config, 224);
    AuditRow row;
    row.preset = name;
    row.params = report.total_params();
    row.flops = report.total_flops();
    row.target_params_m = target->params_m;
    row.target_flops_g = target->flops_g;
    row.params_deviation = static_cast<double>(row.params) / (target->params_m * 1e6) - 1.0;
    row.flops_deviation = static_cast<double>(row.flops) / (target->flops_g * 1e9) - 1.0;
    row.params_ok = std::abs(row.params_deviation) <= kParamTolerance;
    row.flops_ok = std::abs(row.flops_deviation) <= kFlopTolerance;
    out.push_back(row);
  }
  return out;
}

MsaClaim msa_claim() {
  MsaClaim c;
  c.flops = msa_flops(56 * 56, 96);
  c.deviation = static_cast<double>(c.flops) / c.target - 1.0;
  c.ok = std::abs(c.deviation) <= kFlopTolerance;
  return c;
}

MergeDelta merge_delta(const ModelConfig& config, std::size_t resolution) {
  ModelConfig dtm = config, uniform = config;
  for (std::size_t s = 1; s < model::kNumStages; ++s) {
    dtm.stages[s].merge_kind = MergeKind::kDtm;
    uniform.stages[s].merge_kind = MergeKind::kUniformConv;
  }
  const auto a = analyze(dtm, resolution), b = analyze(uniform, resolution);
  MergeDelta d;
  d.params = static_cast<std::int64_t>(a.total_params()) - static_cast<std::int64_t>(b.total_params());
  d.flops = static_cast<std::int64_t>(a.total_flops()) - static_cast<std::int64_t>(b.total_flops());
  d.params_fraction = std::abs(static_cast<double>(d.params)) / static_cast<double>(a.total_params());
  d.flops_fraction = std::abs(static_cast<double>(d.flops)) / static_cast<double>(a.total_flops());
  return d;
}

bool strictly_decreasing(const std::vector<std::uint64_t>& values) {
  for (std::size_t i = 1; i < values.size(); ++i) {
    if (values[i] >= values[i - 1]) return false;
  }
  return true;
}

void write_csv(const std::filesystem::path& path, const CostReport& report) {
  std::ofstream f(path);
  if (!f) throw IoError("cannot write " + path.string());
  f << "layer,params,flops\n";
  for (const auto& r : report.rows) f << r.layer << ',' << r.params << ',' << r.flops << '\n';
}

void write_aux_csv(const std::filesystem::path& path, const CostReport& report) {
  std::ofstream f(path);
  if (!f) throw IoError("cannot write " + path.string());
  f << "layer,kind,flops\n";
  for (const auto& r : report.aux) f << r.layer << ',' << r.kind << ',' << r.flops << '\n';
}

std::string format_table(const CostReport& report) {
  std::size_t width = 5;
  for (const auto& r : report.rows) width = std::max(width, r.layer.size());
  std::ostringstream os;
  char buf[256];
  std::snprintf(buf, sizeof buf, "%-*s %14s %16s\n", static_cast<int>(width), "layer", "params", "flops");
  os << buf;
  for (const auto& r : report.rows) {
    std::snprintf(buf, sizeof buf, "%-*s %14llu %16llu\n", static_cast<int>(width), r.layer.c_str(),
                  static_cast<unsigned long long>(r.params), static_cast<unsigned long long>(r.flops));
    os << buf;
  }
  os << '\n';
  for (int s = 1; s <= static_cast<int>(model::kNumStages); ++s) {
    std::snprintf(buf, sizeof buf, "stage %d: %10.3f M params %10.3f G flops\n", s, report.stage_params(s) / 1e6,
                  report.stage_flops(s) / 1e9);
    os << buf;
  }
  std::snprintf(buf, sizeof buf, "total @%zu: %10.3f M params %10.3f G flops (aux %.3f G excluded)\n",
                report.resolution, report.total_params() / 1e6, report.total_flops() / 1e9,
                report.aux_flops() / 1e9);
  os << buf;
  return os.str();
}

std::string format_audit(const std::vector<AuditRow>& rows) {
  std::ostringstream os;
  char buf[256];
  std::snprintf(buf, sizeof buf, "%-8s %10s %8s %8s %4s %10s %8s %8s %4s\n", "preset", "params(M)", "target", "dev",
                "", "flops(G)", "target", "dev", "");
  os << buf;
  for (const auto& r : rows) {
    std::snprintf(buf, sizeof buf, "%-8s %10.3f %8.1f %+7.2f%% %4s %10.3f %8.1f %+7.2f%% %4s\n", r.preset.c_str(),
                  r.params / 1e6, r.target_params_m, 100 * r.params_deviation, r.params_ok ? "ok" : "FAIL",
                  r.flops / 1e9, r.target_flops_g, 100 * r.flops_deviation, r.flops_ok ? "ok" : "FAIL");
    os << buf;
  }
  return os.str();
}

}  // namespace lit::analyzer
