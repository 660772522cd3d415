// lit: audit, verify, train and inspect from the command line.

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "lit/analyzer.hpp"
#include "lit/data.hpp"
#include "lit/dtm.hpp"
#include "lit/equivalence.hpp"
#include "lit/kernels.hpp"
#include "lit/model.hpp"
#include "lit/random.hpp"
#include "lit/train.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace lit;

namespace {

constexpr const char* kVersion = "0.1.0";

enum Exit : int { kOk = 0, kOther = 1, kConfig = 2, kNumeric = 3, kTolerance = 4, kState = 5 };

struct Common {
  std::uint64_t seed = 0;
  std::string out = "lit_out";
};

void add_common(CLI::App* app, Common& c) {
  app->add_option("--seed", c.seed, "Random seed")->capture_default_str();
  app->add_option("--out", c.out, "Output directory")->capture_default_str();
}

json versions() {
  return {{"lit", kVersion}, {"checkpoint_format", std::string(ckpt::kMagic)}, {"compiler", __VERSION__}};
}

void write_json(const fs::path& path, const json& doc) {
  std::ofstream f(path);
  if (!f) throw IoError("cannot write " + path.string());
  f << doc.dump(2) << '\n';
}

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream f(path);
  if (!f) throw IoError("cannot write " + path.string());
  f << text;
}

void write_manifest(const fs::path& dir, const std::string& command, const json& args, const Common& c,
                    const json& config, const std::vector<std::string>& outputs, int exit_code) {
  write_json(dir / "manifest.json", {{"command", command},
                                     {"arguments", args},
                                     {"seed", c.seed},
                                     {"config", config},
                                     {"versions", versions()},
                                     {"outputs", outputs},
                                     {"exit_code", exit_code}});
}

std::pair<std::size_t, std::size_t> parse_pair(const std::string& text, const char* what) {
  std::size_t a = 0, b = 0;
  char sep = 0;
  std::istringstream in(text);
  if (!(in >> a >> sep >> b) || sep != ',' || !in.eof()) {
    throw ConfigError(std::string(what) + " must look like Y,X (got '" + text + "')");
  }
  return {a, b};
}

model::ModelConfig resolve_config(const std::string& preset, const std::string& config_path) {
  if (!config_path.empty()) return model::load_config(config_path);
  if (preset == "toy") return model::toy_config();
  return model::preset(preset);
}

// ------------------------------------------------------------------- audit

struct AuditArgs {
  Common common;
  std::string preset = "all";
  std::string config;
  std::size_t resolution = 0;
  bool ablation = false;
};

int cmd_audit(const AuditArgs& a) {
  const fs::path out = a.common.out;
  fs::create_directories(out);
  std::vector<std::pair<std::string, model::ModelConfig>> configs;
  if (!a.config.empty()) {
    configs.emplace_back(fs::path(a.config).stem().string(), model::load_config(a.config));
  } else if (a.preset == "all") {
    for (const auto& n : model::preset_names()) configs.emplace_back(n, model::preset(n));
  } else {
    configs.emplace_back(a.preset, resolve_config(a.preset, ""));
  }

  std::vector<std::string> outputs;
  std::ostringstream summary;
  bool ok = true;
  json results = json::array();
  const auto claim = analyzer::msa_claim();
  char buf[256];
  std::snprintf(buf, sizeof buf, "MSA 56x56 tokens, C=96: %.4f G flops (target 2.0 G, %+.2f%%) %s\n",
                claim.flops / 1e9, 100 * claim.deviation, claim.ok ? "ok" : "FAIL");
  summary << buf;
  ok = ok && claim.ok;

  for (const auto& [name, config] : configs) {
    const std::size_t res = a.resolution ? a.resolution : config.resolution;
    if (res % 32 != 0) {
      throw ConfigError("resolution " + std::to_string(res) + " is not divisible by 32");
    }
    const auto params = analyzer::count_params(config);
    const auto report = analyzer::count_flops(config, res);
    const std::string stem = name + "_" + std::to_string(res);
    analyzer::write_csv(out / (stem + ".csv"), report);
    analyzer::write_aux_csv(out / (stem + "_aux.csv"), report);
    write_text(out / (stem + ".txt"), analyzer::format_table(report));
    outputs.insert(outputs.end(), {stem + ".csv", stem + "_aux.csv", stem + ".txt"});

    json row = {{"name", name},
                {"resolution", res},
                {"params", params.total_params()},
                {"flops", report.total_flops()},
                {"aux_flops", report.aux_flops()}};
    const auto delta = analyzer::merge_delta(config, res);
    row["dtm_vs_uniform"] = {{"params", delta.params}, {"flops", delta.flops}, {"flops_fraction", delta.flops_fraction}};
    std::snprintf(buf, sizeof buf, "%-8s @%zu: %.3f M params, %.3f G flops; DTM vs uniform merge %+lld params, %+.4f G (%.3f%%)\n",
                  name.c_str(), res, params.total_params() / 1e6, report.total_flops() / 1e9,
                  static_cast<long long>(delta.params), delta.flops / 1e9, 100 * delta.flops_fraction);
    summary << buf;

    const bool is_preset = a.config.empty() && name != "toy";
    if (is_preset) {
      auto audit = analyzer::audit({name})[0];
      // Parameter counts do not depend on resolution; FLOP targets are for 224².
      if (res != 224) audit.flops_ok = true;
      row["params_ok"] = audit.params_ok;
      row["params_deviation"] = audit.params_deviation;
      if (res == 224) {
        row["flops_ok"] = audit.flops_ok;
        row["flops_deviation"] = audit.flops_deviation;
        summary << analyzer::format_audit({audit});
      } else {
        std::snprintf(buf, sizeof buf, "%-8s params %.3f M vs %.1f M (%+.2f%%) %s; FLOP targets apply at 224 only\n",
                      name.c_str(), audit.params / 1e6, audit.target_params_m, 100 * audit.params_deviation,
                      audit.params_ok ? "ok" : "FAIL");
        summary << buf;
      }
      ok = ok && audit.ok();
    }
    results.push_back(row);
  }

  if (a.ablation) {
    const auto base = model::with_attention_everywhere(model::preset("lit-ti"), {1, 2, 5, 8});
    const std::vector<std::set<int>> removals = {{}, {1}, {1, 2}, {1, 2, 3}, {1, 2, 3, 4}};
    std::vector<std::uint64_t> flops;
    json abl = json::array();
    for (const auto& r : removals) {
      const auto cfg = model::ablate(base, r);
      flops.push_back(analyzer::count_flops(cfg, 224).total_flops());
      abl.push_back({{"removed", r}, {"flops", flops.back()}});
      std::string removed;
      for (int v : r) removed += (removed.empty() ? "" : ",") + std::to_string(v);
      std::snprintf(buf, sizeof buf, "ablation remove {%s}: %.3f G flops\n", removed.c_str(), flops.back() / 1e9);
      summary << buf;
    }
    const bool mono = analyzer::strictly_decreasing(flops);
    summary << "ablation monotone: " << (mono ? "ok" : "FAIL") << '\n';
    ok = ok && mono;
    results.push_back({{"ablation", abl}, {"monotone", mono}});
  }

  write_text(out / "audit.txt", summary.str());
  write_json(out / "audit.json", {{"pass", ok}, {"msa_flops", claim.flops}, {"rows", results}});
  outputs.insert(outputs.end(), {"audit.txt", "audit.json"});
  std::cout << summary.str();
  json cfgs = json::object();
  for (const auto& [name, config] : configs) cfgs[name] = model::config_to_json(config);
  const int code = ok ? kOk : kTolerance;
  write_manifest(out, "audit",
                 {{"preset", a.preset}, {"config", a.config}, {"resolution", a.resolution}, {"ablation", a.ablation}},
                 a.common, cfgs, outputs, code);
  return code;
}

// ------------------------------------------------------------------ verify

struct VerifyArgs {
  Common common;
  std::optional<std::size_t> kernel;
  std::optional<std::size_t> heads;
  std::size_t seeds = 10;
  std::size_t grid = 8;
  std::size_t channels = 4;
};

int cmd_verify(const VerifyArgs& a) {
  if (a.heads && !a.kernel) throw ConfigError("--heads needs --kernel");
  if (a.grid < 1 || a.grid > 8) throw ConfigError("--grid must be in 1..8");
  std::vector<std::size_t> kernels = a.kernel ? std::vector<std::size_t>{*a.kernel} : std::vector<std::size_t>{1, 3};
  for (std::size_t k : kernels) equiv::HeadShiftMap::for_heads(a.heads.value_or(k * k), k);

  const fs::path out = a.common.out;
  fs::create_directories(out);
  json checks = json::array();
  bool ok = true;
  auto record = [&](const std::string& name, double value, double tolerance, bool pass) {
    checks.push_back({{"name", name}, {"value", value}, {"tolerance", tolerance}, {"pass", pass}});
    std::printf("%-40s %12.3e  (tol %.0e)  %s\n", name.c_str(), value, tolerance, pass ? "ok" : "FAIL");
    ok = ok && pass;
  };

  // Per-pixel FC versus 1×1 convolution.
  {
    double worst64 = 0, worst32 = 0;
    for (std::size_t s = 0; s < a.seeds; ++s) {
      Rng rng(a.common.seed + s);
      auto w = uniform<double>({a.channels, 2 * a.channels}, rng, -1, 1);
      auto x = uniform<double>({2, a.grid, a.grid, a.channels}, rng, -1, 1);
      worst64 = std::max(worst64, equiv::verify_fc_equals_1x1_conv(w, x));
      worst32 = std::max(worst32, equiv::verify_fc_equals_1x1_conv(w.cast<float>(), x.cast<float>()));
    }
    record("fc == 1x1 conv (fp64)", worst64, 1e-12, worst64 < 1e-12);
    record("fc == 1x1 conv (fp32)", worst32, 1e-6, worst32 < 1e-6);
  }

  // Delta-attention MSA versus convolution, and the matching receptive field.
  for (std::size_t k : kernels) {
    const auto f = equiv::HeadShiftMap::for_heads(a.heads.value_or(k * k), k);
    double worst = 0;
    for (std::size_t s = 0; s < a.seeds; ++s) {
      Rng rng(a.common.seed + 1000 + s);
      auto w = uniform<double>({k, k, a.channels, a.channels + 1}, rng, -1, 1);
      auto x = uniform<double>({1, a.grid, a.grid, a.channels}, rng, -1, 1);
      const auto m = equiv::build_msa_as_conv(w, f, 1, a.grid, a.grid);
      const auto y = equiv::run_msa_as_conv(m, x);
      const auto ref = conv2d(x, w, Tensor<double>(), 1, equiv::same_pad(k));
      worst = std::max(worst, equiv::msa_conv_interior_deviation(y, ref, k));
    }
    record("msa(delta attention) == conv K=" + std::to_string(k), worst, 1e-10, worst < 1e-10);

    Rng rng(a.common.seed + 2000 + k);
    auto w = uniform<double>({k, k, a.channels, a.channels}, rng, -1, 1);
    const auto m = equiv::build_msa_as_conv(w, f, 1, a.grid, a.grid);
    const std::size_t q = a.grid / 2;
    const auto report = equiv::receptive_field_probe<double>({equiv::msa_conv_layer(m)}, a.grid, a.grid,
                                                             a.channels, q, q, a.common.seed);
    const double k_eff = static_cast<double>(report.final().k_eff);
    const double expect = std::sqrt(static_cast<double>(f.heads()));
    record("receptive field K_eff, heads=" + std::to_string(f.heads()), k_eff, 0, k_eff == expect);
  }

  if (!a.kernel) {
    Rng rng(a.common.seed + 3000);
    auto mlp = nn::MlpParams<double>::make(a.channels, 4, rng);
    const std::size_t q = a.grid / 2;
    const auto report =
        equiv::receptive_field_probe<double>({equiv::mlp_layer(mlp)}, a.grid, a.grid, a.channels, q, q, a.common.seed);
    std::size_t support = 0;
    for (auto v : report.final().mask) support += v;
    record("mlp block receptive field pixels", static_cast<double>(support), 0, support == 1);
  }

  write_json(out / "verify.json", {{"pass", ok}, {"checks", checks}});
  const int code = ok ? kOk : kTolerance;
  json args = {{"seeds", a.seeds}, {"grid", a.grid}, {"channels", a.channels}};
  args["kernel"] = a.kernel ? json(*a.kernel) : json(nullptr);
  args["heads"] = a.heads ? json(*a.heads) : json(nullptr);
  write_manifest(out, "verify", args, a.common, nullptr, {"verify.json"}, code);
  return code;
}

// ------------------------------------------------------------------- train

struct TrainArgs {
  Common common;
  std::string preset = "toy";
  std::string config;
  std::string data = "synthetic";
  std::size_t samples = 200;
  std::size_t epochs = 200;
  std::size_t batch = 32;
  double lr = 1e-3;
  double weight_decay = 5e-2;
  double offset_lr = 1e-5;
  double warmup = 0.05;
  std::size_t checkpoint_every = 10;
  std::string resume;
};

data::Dataset load_data(const std::string& spec, std::size_t samples, std::uint64_t seed, std::size_t res) {
  if (spec == "synthetic") return data::synthetic(samples, seed, res);
  return data::load_image_dir(spec, res);
}

int cmd_train(const TrainArgs& a) {
  const auto config = resolve_config(a.preset, a.config);
  const fs::path out = a.common.out;
  fs::create_directories(out);
  const auto dataset = load_data(a.data, a.samples, a.common.seed, config.resolution);
  auto model = model::build<float>(config, a.common.seed);

  train::TrainConfig tc;
  tc.epochs = a.epochs;
  tc.batch_size = a.batch;
  tc.lr = a.lr;
  tc.weight_decay = a.weight_decay;
  tc.offset_lr = a.offset_lr;
  tc.warmup_fraction = a.warmup;
  tc.seed = a.common.seed;
  tc.checkpoint_every = a.checkpoint_every;
  tc.out_dir = out;
  train::Trainer<float> trainer(model, dataset, tc);

  std::vector<train::EpochLog> log;
  if (!a.resume.empty()) {
    trainer.load_checkpoint(a.resume);
    const fs::path old_log = fs::path(a.resume).parent_path() / "log.csv";
    std::ifstream in(old_log);
    std::string line;
    std::getline(in, line);
    while (std::getline(in, line)) {
      train::EpochLog e;
      if (std::sscanf(line.c_str(), "%zu,%zu,%lf,%lf,%lf", &e.epoch, &e.step, &e.lr, &e.loss, &e.train_acc) == 5 &&
          e.epoch <= trainer.epochs_done()) {
        log.push_back(e);
      }
    }
  }

  write_json(out / "config.json", model::config_to_json(config));
  json args = {{"preset", a.preset},   {"config", a.config}, {"data", a.data},
               {"samples", a.samples}, {"epochs", a.epochs}, {"batch", a.batch},
               {"lr", a.lr},           {"weight_decay", a.weight_decay},
               {"offset_lr", a.offset_lr}, {"warmup", a.warmup},
               {"checkpoint_every", a.checkpoint_every}, {"resume", a.resume}};
  const std::vector<std::string> outputs = {"config.json", "log.csv", "checkpoint.litckpt", "summary.json"};
  write_manifest(out, "train", args, a.common, model::config_to_json(config), outputs, -1);

  int code = kOk;
  std::string error;
  try {
    trainer.run([&](const train::EpochLog& e) {
      log.push_back(e);
      train::write_log_csv(out / "log.csv", log);
      std::printf("epoch %4zu  step %6zu  lr %.3e  loss %.5f  acc %.4f\n", e.epoch, e.step, e.lr, e.loss,
                  e.train_acc);
      std::fflush(stdout);
    });
  } catch (const NumericError& e) {
    code = kNumeric;
    error = e.what();
    std::fprintf(stderr, "lit train: %s; last good checkpoint kept in %s\n", e.what(), out.string().c_str());
  }
  train::write_log_csv(out / "log.csv", log);

  json summary = {{"epochs_done", trainer.epochs_done()}, {"steps", trainer.optimizer().steps()}};
  if (!log.empty()) {
    summary["final_loss"] = log.back().loss;
    summary["final_train_acc"] = log.back().train_acc;
  }
  if (!error.empty()) summary["error"] = error;
  write_json(out / "summary.json", summary);
  write_manifest(out, "train", args, a.common, model::config_to_json(config), outputs, code);
  return code;
}

// ----------------------------------------------------------------- inspect

struct InspectArgs {
  Common common;
  std::string checkpoint;
  std::string preset = "toy";
  std::string config;
  std::string mode = "offsets";
  std::size_t stage = 3;
  std::size_t block = 0;
  std::vector<std::string> queries;
  std::vector<std::string> tokens;
  std::size_t images = 1;
  std::string data = "synthetic";
};

int cmd_inspect(const InspectArgs& a) {
  std::string config_path = a.config;
  if (config_path.empty() && !a.checkpoint.empty()) {
    const auto beside = fs::path(a.checkpoint).parent_path() / "config.json";
    if (fs::exists(beside)) config_path = beside.string();
  }
  const auto config = resolve_config(a.preset, config_path);
  auto model = model::build<float>(config, a.common.seed);
  if (!a.checkpoint.empty()) {
    model.load_state_records(ckpt::load(a.checkpoint));
  }
  bool bn_ready = true;
  for (const auto& st : model.stages) bn_ready = bn_ready && (!st.merge || st.merge->bn.initialized);
  // An untrained model has no batch statistics yet; use the identity.
  if (!bn_ready) model.seed_batch_norm_identity();

  const fs::path out = a.common.out;
  fs::create_directories(out);
  const auto dataset = load_data(a.data, a.images, a.common.seed, config.resolution);
  std::vector<std::size_t> idx;
  for (std::size_t i = 0; i < std::min(a.images, dataset.size()); ++i) idx.push_back(i);
  const auto images = dataset.images<float>(idx);
  std::vector<std::string> outputs;

  if (a.mode == "attn") {
    const auto exp = equiv::export_attention_maps(model, images, a.stage, a.block);
    std::vector<std::pair<std::size_t, std::size_t>> queries;
    for (const auto& q : a.queries) queries.push_back(parse_pair(q, "--query"));
    if (queries.empty()) queries.emplace_back(exp.grid / 2, exp.grid / 2);
    for (const auto& p : equiv::write_attention_maps(out, exp, queries)) {
      outputs.push_back(p.filename().string());
    }
    std::printf("exported %zu heads x %zu queries of stage %zu block %zu (%zu images)\n", exp.heads, queries.size(),
                a.stage, a.block, exp.images);
  } else if (a.mode == "offsets") {
    model::Inspection<float> inspect;
    inspect.keep_attention = false;
    model::forward(model, images, Mode::kEval, &inspect);
    const auto& last = inspect.offsets.fields.empty() ? Tensor<float>() : inspect.offsets.fields.back();
    if (!last.defined()) throw ConfigError("this model has no deformable merges to trace");
    std::vector<std::pair<std::size_t, std::size_t>> tokens;
    for (const auto& t : a.tokens) tokens.push_back(parse_pair(t, "--token"));
    if (tokens.empty()) {
      for (std::size_t y = 0; y < last.dim(1); ++y) {
        for (std::size_t x = 0; x < last.dim(2); ++x) tokens.emplace_back(y, x);
      }
    }
    std::vector<dtm::TokenTrace> traces;
    for (const auto& [y, x] : tokens) traces.push_back({y, x, dtm::trace_offsets(inspect.offsets, y, x)});
    dtm::write_offset_csv(out / "offsets.csv", traces);
    outputs.push_back("offsets.csv");
    const double dev = dtm::max_grid_deviation(inspect.offsets);
    write_json(out / "offsets_summary.json", {{"tokens", tokens.size()},
                                              {"leaves_per_token", traces.front().leaves.size()},
                                              {"max_grid_deviation_px", dev}});
    outputs.push_back("offsets_summary.json");
    std::printf("traced %zu tokens, %zu leaves each; max deviation from the regular grid %.4f px\n", tokens.size(),
                traces.front().leaves.size(), dev);
  } else {
    throw ConfigError("--mode must be attn or offsets");
  }

  json args = {{"checkpoint", a.checkpoint}, {"preset", a.preset}, {"config", config_path}, {"mode", a.mode},
               {"stage", a.stage},           {"block", a.block},   {"queries", a.queries},   {"tokens", a.tokens},
               {"images", a.images},         {"data", a.data}};
  args["batch_norm_identity"] = !bn_ready;
  write_manifest(out, "inspect", args, a.common, model::config_to_json(config), outputs, kOk);
  return kOk;
}

int exit_code_for(const std::exception& e) {
  if (dynamic_cast<const ConfigError*>(&e) || dynamic_cast<const DimensionError*>(&e) ||
      dynamic_cast<const ValidationError*>(&e)) {
    return kConfig;
  }
  if (dynamic_cast<const NumericError*>(&e)) return kNumeric;
  if (dynamic_cast<const StateError*>(&e) || dynamic_cast<const IoError*>(&e) ||
      dynamic_cast<const fs::filesystem_error*>(&e)) {
    return kState;
  }
  return kOther;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"LIT: audit costs, verify equivalences, train and inspect hierarchical vision transformers"};
  app.require_subcommand(1);
  app.set_version_flag("--version", kVersion);
  std::string backend = "parallel";
  app.add_option("--backend", backend, "Kernel backend")->check(CLI::IsMember({"serial", "parallel"}));

  AuditArgs audit;
  auto* audit_cmd = app.add_subcommand("audit", "Parameter/FLOP report and published-cost audit");
  add_common(audit_cmd, audit.common);
  audit_cmd->add_option("--preset", audit.preset, "lit-ti, lit-s, lit-m, lit-b, toy or all")->capture_default_str();
  audit_cmd->add_option("--config", audit.config, "Model config JSON")->check(CLI::ExistingFile);
  audit_cmd->add_option("--resolution", audit.resolution, "Input resolution (default: the config's)");
  audit_cmd->add_flag("--ablation", audit.ablation, "Also run the MSA-removal FLOP ablation");

  VerifyArgs verify;
  auto* verify_cmd = app.add_subcommand("verify", "FC/conv/MSA equivalences and receptive-field probes");
  add_common(verify_cmd, verify.common);
  verify_cmd->add_option("--kernel", verify.kernel, "Kernel size K (default: 1 and 3)");
  verify_cmd->add_option("--heads", verify.heads, "Head count (must equal K*K)");
  verify_cmd->add_option("--seeds", verify.seeds, "Random trials per check")->capture_default_str();
  verify_cmd->add_option("--grid", verify.grid, "Grid side (<= 8)")->capture_default_str();
  verify_cmd->add_option("--channels", verify.channels, "Input channels")->capture_default_str();

  TrainArgs tr;
  auto* train_cmd = app.add_subcommand("train", "Train on synthetic shapes or an image directory");
  add_common(train_cmd, tr.common);
  train_cmd->add_option("--preset", tr.preset, "Model preset (toy by default)")->capture_default_str();
  train_cmd->add_option("--config", tr.config, "Model config JSON")->check(CLI::ExistingFile);
  train_cmd->add_option("--data", tr.data, "synthetic or a directory of class subfolders")->capture_default_str();
  train_cmd->add_option("--samples", tr.samples, "Synthetic dataset size")->capture_default_str();
  train_cmd->add_option("--epochs", tr.epochs)->capture_default_str();
  train_cmd->add_option("--batch", tr.batch)->capture_default_str();
  train_cmd->add_option("--lr", tr.lr)->capture_default_str();
  train_cmd->add_option("--weight-decay", tr.weight_decay)->capture_default_str();
  train_cmd->add_option("--offset-lr", tr.offset_lr, "Learning rate of the offset predictors")->capture_default_str();
  train_cmd->add_option("--warmup", tr.warmup, "Warmup fraction of total steps")->capture_default_str();
  train_cmd->add_option("--checkpoint-every", tr.checkpoint_every, "Epochs between checkpoints")
      ->capture_default_str();
  train_cmd->add_option("--resume", tr.resume, "Checkpoint to resume from")->check(CLI::ExistingFile);

  InspectArgs ins;
  auto* inspect_cmd = app.add_subcommand("inspect", "Export attention maps or DTM sampling traces");
  add_common(inspect_cmd, ins.common);
  inspect_cmd->add_option("--checkpoint", ins.checkpoint, "LITCKPT1 file (omit for an untrained model)")
      ->check(CLI::ExistingFile);
  inspect_cmd->add_option("--preset", ins.preset)->capture_default_str();
  inspect_cmd->add_option("--config", ins.config, "Model config JSON (default: config.json beside the checkpoint)");
  inspect_cmd->add_option("--mode", ins.mode, "attn or offsets")->capture_default_str();
  inspect_cmd->add_option("--stage", ins.stage, "Stage (1-based) for attn")->capture_default_str();
  inspect_cmd->add_option("--block", ins.block, "Block (0-based) for attn")->capture_default_str();
  inspect_cmd->add_option("--query", ins.queries, "Query pixel Y,X (repeatable)");
  inspect_cmd->add_option("--token", ins.tokens, "Final-stage token Y,X (repeatable; default all)");
  inspect_cmd->add_option("--images", ins.images, "Images to average over")->capture_default_str();
  inspect_cmd->add_option("--data", ins.data)->capture_default_str();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kOk : kConfig;
  }
  kernels::set_backend(backend == "serial" ? kernels::Backend::kSerial : kernels::Backend::kParallel);

  try {
    if (audit_cmd->parsed()) return cmd_audit(audit);
    if (verify_cmd->parsed()) return cmd_verify(verify);
    if (train_cmd->parsed()) return cmd_train(tr);
    if (inspect_cmd->parsed()) return cmd_inspect(ins);
  } catch (const std::exception& e) {
    std::fprintf(stderr, "lit: %s\n", e.what());
    return exit_code_for(e);
  }
  return kOther;
}
