#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <string>
#include <vector>

#include "lit/data.hpp"
#include "lit/model.hpp"

namespace lit::train {

// Linear warmup from 0 to base_lr over warmup_steps, then
// base_lr·(1 + cos(π·progress))/2 down to 0 at total_steps.
double cosine_lr(std::size_t step, std::size_t total_steps, double base_lr, std::size_t warmup_steps);

struct ParamGroup {
  std::string name;  // default, no_decay, offset
  double lr = 0;
  double weight_decay = 0;
};

struct AdamWConfig {
  double lr = 1e-3;
  double weight_decay = 5e-2;
  double offset_lr = 1e-5;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

// Decoupled-weight-decay Adam. Parameters whose name contains ".offset." form
// the offset group (own learning rate, no decay); vectors, position tables
// and relative biases are not decayed.
template <typename T>
class AdamW {
 public:
  struct Slot {
    std::string name;
    Tensor<T> param;
    std::size_t group = 0;
    std::vector<T> m, v;
  };

  AdamW(std::vector<std::pair<std::string, Tensor<T>>> params, const AdamWConfig& config);

  // One update with every group's lr multiplied by lr_scale. Parameters
  // without a gradient are treated as having a zero gradient.
  void step(double lr_scale = 1.0);

  std::uint64_t steps() const { return step_; }
  const std::vector<ParamGroup>& groups() const { return groups_; }
  const std::vector<Slot>& slots() const { return slots_; }
  std::size_t group_of(const std::string& name) const;

  // "optim/<name>.m", "optim/<name>.v" and "optim/step".
  std::vector<ckpt::NamedTensor> state_records() const;
  void load_state_records(const std::vector<ckpt::NamedTensor>& records);

 private:
  AdamWConfig config_;
  std::vector<ParamGroup> groups_;
  std::vector<Slot> slots_;
  std::uint64_t step_ = 0;
};

struct TrainConfig {
  std::size_t epochs = 200;
  std::size_t batch_size = 32;
  double lr = 1e-3;
  double weight_decay = 5e-2;
  double offset_lr = 1e-5;
  double warmup_fraction = 0.05;
  std::uint64_t seed = 0;
  // Checkpoint every this many epochs (0: only at the end); needs out_dir.
  std::size_t checkpoint_every = 0;
  std::filesystem::path out_dir;
};

struct EpochLog {
  std::size_t epoch = 0;  // 1-based
  std::size_t step = 0;   // optimizer steps completed
  double lr = 0;          // base-group lr of the last step
  double loss = 0;        // mean over the epoch's samples
  double train_acc = 0;   // running accuracy over the epoch
};

template <typename T>
class Trainer {
 public:
  Trainer(model::LitModel<T>& model, const data::Dataset& data, TrainConfig config);

  std::size_t steps_per_epoch() const;
  std::size_t total_steps() const;
  std::size_t epochs_done() const { return epochs_done_; }
  const std::vector<EpochLog>& log() const { return log_; }
  const AdamW<T>& optimizer() const { return optimizer_; }

  EpochLog run_epoch();
  // Runs the remaining epochs; `on_epoch` sees each log entry as it lands.
  // A non-finite loss aborts with NumericError, leaving the last checkpoint.
  void run(const std::function<void(const EpochLog&)>& on_epoch = {});

  std::vector<ckpt::NamedTensor> state_records();
  void save_checkpoint(const std::filesystem::path& path);
  void load_checkpoint(const std::filesystem::path& path);

 private:
  model::LitModel<T>& model_;
  const data::Dataset& data_;
  TrainConfig config_;
  AdamW<T> optimizer_;
  std::size_t epochs_done_ = 0;
  std::vector<EpochLog> log_;
};

void write_log_csv(const std::filesystem::path& path, const std::vector<EpochLog>& log);

// Mean loss of each consecutive `window`-epoch block never rises.
bool windowed_non_increasing(const std::vector<double>& losses, std::size_t window);

template <typename T>
double accuracy(model::LitModel<T>& model, const data::Dataset& data, Mode mode, std::size_t batch_size = 50);

}  // namespace lit::train
