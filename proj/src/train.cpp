#include "lit/train.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <limits>
#include <map>
#include <numbers>

namespace lit::train {

double cosine_lr(std::size_t step, std::size_t total_steps, double base_lr, std::size_t warmup_steps) {
  if (step > total_steps) throw ValidationError("cosine_lr: step beyond the schedule");
  if (step < warmup_steps) return base_lr * static_cast<double>(step) / static_cast<double>(warmup_steps);
  if (total_steps == warmup_steps) return base_lr;
  const double progress =
      static_cast<double>(step - warmup_steps) / static_cast<double>(total_steps - warmup_steps);
  return base_lr * (1.0 + std::cos(std::numbers::pi * progress)) / 2.0;
}

namespace {

enum GroupIndex : std::size_t { kDefault = 0, kNoDecay = 1, kOffset = 2 };

std::size_t classify(const std::string& name, std::size_t rank) {
  if (name.find(".offset.") != std::string::npos) return kOffset;
  if (rank <= 1 || name.find("pos_embed") != std::string::npos || name.find("rel_bias") != std::string::npos) {
    return kNoDecay;
  }
  return kDefault;
}

}  // namespace

template <typename T>
AdamW<T>::AdamW(std::vector<std::pair<std::string, Tensor<T>>> params, const AdamWConfig& config) : config_(config) {
  groups_ = {{"default", config.lr, config.weight_decay},
             {"no_decay", config.lr, 0.0},
             {"offset", config.offset_lr, 0.0}};
  for (auto& [name, t] : params) {
    Slot s;
    s.name = name;
    s.param = t;
    s.group = classify(name, t.rank());
    s.m.assign(t.numel(), T(0));
    s.v.assign(t.numel(), T(0));
    slots_.push_back(std::move(s));
  }
}

template <typename T>
std::size_t AdamW<T>::group_of(const std::string& name) const {
  for (const auto& s : slots_) {
    if (s.name == name) return s.group;
  }
  throw ValidationError("optimizer has no parameter '" + name + "'");
}

template <typename T>
void AdamW<T>::step(double lr_scale) {
  ++step_;
  const double b1 = config_.beta1, b2 = config_.beta2;
  const double c1 = 1.0 - std::pow(b1, static_cast<double>(step_));
  const double c2 = 1.0 - std::pow(b2, static_cast<double>(step_));
  for (auto& s : slots_) {
    const auto& g = groups_[s.group];
    const T lr = static_cast<T>(g.lr * lr_scale);
    const T decay = static_cast<T>(1.0 - g.lr * lr_scale * g.weight_decay);
    auto p = s.param.mutable_data();
    const bool has_grad = s.param.has_grad();
    const auto grad = has_grad ? s.param.grad() : std::span<const T>();
    bool finite = true;
    for (std::size_t i = 0; i < p.size(); ++i) {
      const T gi = has_grad ? grad[i] : T(0);
      p[i] *= decay;
      s.m[i] = static_cast<T>(b1) * s.m[i] + static_cast<T>(1.0 - b1) * gi;
      s.v[i] = static_cast<T>(b2) * s.v[i] + static_cast<T>(1.0 - b2) * gi * gi;
      const T mhat = s.m[i] / static_cast<T>(c1);
      const T vhat = s.v[i] / static_cast<T>(c2);
      p[i] -= lr * mhat / (std::sqrt(vhat) + static_cast<T>(config_.eps));
      finite = finite && std::isfinite(p[i]);
    }
    if (!finite) {
      throw NumericError("AdamW: parameter '" + s.name + "' became non-finite");
    }
  }
}

template <typename T>
std::vector<ckpt::NamedTensor> AdamW<T>::state_records() const {
  std::vector<ckpt::NamedTensor> out;
  for (const auto& s : slots_) {
    out.push_back({"optim/" + s.name + ".m", s.param.shape(), std::vector<float>(s.m.begin(), s.m.end())});
    out.push_back({"optim/" + s.name + ".v", s.param.shape(), std::vector<float>(s.v.begin(), s.v.end())});
  }
  out.push_back({"optim/step", {1}, {static_cast<float>(step_)}});
  return out;
}

template <typename T>
void AdamW<T>::load_state_records(const std::vector<ckpt::NamedTensor>& records) {
  std::map<std::string, const ckpt::NamedTensor*> by_name;
  for (const auto& r : records) by_name[r.name] = &r;
  auto fetch = [&](const std::string& name, const Shape& shape) -> const ckpt::NamedTensor& {
    auto it = by_name.find(name);
    if (it == by_name.end()) throw ConfigError("checkpoint is missing optimizer state '" + name + "'");
    if (it->second->shape != shape) throw ConfigError("optimizer state '" + name + "' has the wrong shape");
    return *it->second;
  };
  for (auto& s : slots_) {
    const auto& m = fetch("optim/" + s.name + ".m", s.param.shape());
    const auto& v = fetch("optim/" + s.name + ".v", s.param.shape());
    s.m.assign(m.values.begin(), m.values.end());
    s.v.assign(v.values.begin(), v.values.end());
  }
  step_ = static_cast<std::uint64_t>(fetch("optim/step", {1}).values[0]);
}

template <typename T>
Trainer<T>::Trainer(model::LitModel<T>& model, const data::Dataset& data, TrainConfig config)
    : model_(model),
      data_(data),
      config_(std::move(config)),
      optimizer_(model.named_parameters(),
                 AdamWConfig{config_.lr, config_.weight_decay, config_.offset_lr, 0.9, 0.999, 1e-8}) {
  if (config_.batch_size == 0) throw ConfigError("batch size must be >= 1");
  if (data.size() < config_.batch_size) {
    throw ConfigError("training set has " + std::to_string(data.size()) + " samples, fewer than one batch of " +
                      std::to_string(config_.batch_size));
  }
  if (data.num_classes > model.config.num_classes) {
    throw ConfigError("dataset has " + std::to_string(data.num_classes) + " classes but the model predicts " +
                      std::to_string(model.config.num_classes));
  }
  if (data.height != model.config.resolution || data.width != model.config.resolution) {
    throw ConfigError("dataset images are " + std::to_string(data.height) + "x" + std::to_string(data.width) +
                      " but the config resolution is " + std::to_string(model.config.resolution));
  }
}

template <typename T>
std::size_t Trainer<T>::steps_per_epoch() const {
  return data_.size() / config_.batch_size;  // the ragged tail of each shuffled epoch is dropped
}

template <typename T>
std::size_t Trainer<T>::total_steps() const {
  return steps_per_epoch() * config_.epochs;
}

template <typename T>
EpochLog Trainer<T>::run_epoch() {
  const std::size_t total = total_steps();
  const auto warmup = static_cast<std::size_t>(std::llround(config_.warmup_fraction * static_cast<double>(total)));
  const auto order = data::epoch_order(data_.size(), config_.seed, epochs_done_);
  double loss_sum = 0;
  std::size_t correct = 0;
  EpochLog entry;
  const std::size_t seen = steps_per_epoch() * config_.batch_size;
  for (std::size_t start = 0; start < seen; start += config_.batch_size) {
    const std::span<const std::size_t> idx(order.data() + start, config_.batch_size);
    const auto images = data_.images<T>(idx);
    const auto labels = data_.batch_labels(idx);

    for (auto& [name, p] : model_.named_parameters()) p.zero_grad();
    Tape<T> tape;
    auto logits = model::forward(model_, images, Mode::kTrain);
    auto loss = cross_entropy(logits, std::span<const int>(labels));
    const double loss_value = static_cast<double>(loss.item());
    if (!std::isfinite(loss_value)) throw NumericError("training loss became non-finite");
    tape.backward(loss);

    const std::size_t update = std::min<std::size_t>(optimizer_.steps() + 1, total);
    const double factor = cosine_lr(update, total, 1.0, warmup);
    optimizer_.step(factor);
    const double lr = factor * config_.lr;

    loss_sum += loss_value * static_cast<double>(idx.size());
    const std::size_t classes = logits.dim(1);
    for (std::size_t i = 0; i < idx.size(); ++i) {
      const T* row = logits.data().data() + i * classes;
      const auto best = static_cast<int>(std::max_element(row, row + classes) - row);
      if (best == labels[i]) ++correct;
    }
    entry.lr = lr;
  }
  ++epochs_done_;
  entry.epoch = epochs_done_;
  entry.step = optimizer_.steps();
  entry.loss = loss_sum / static_cast<double>(seen);
  entry.train_acc = static_cast<double>(correct) / static_cast<double>(seen);
  log_.push_back(entry);
  return entry;
}

template <typename T>
void Trainer<T>::run(const std::function<void(const EpochLog&)>& on_epoch) {
  while (epochs_done_ < config_.epochs) {
    const auto entry = run_epoch();
    if (on_epoch) on_epoch(entry);
    const bool last = epochs_done_ == config_.epochs;
    const bool periodic = config_.checkpoint_every > 0 && epochs_done_ % config_.checkpoint_every == 0;
    if (!config_.out_dir.empty() && (last || periodic)) save_checkpoint(config_.out_dir / "checkpoint.litckpt");
  }
}

template <typename T>
std::vector<ckpt::NamedTensor> Trainer<T>::state_records() {
  auto records = model_.state_records();
  for (auto& r : optimizer_.state_records()) records.push_back(std::move(r));
  records.push_back({"train/epoch", {1}, {static_cast<float>(epochs_done_)}});
  return records;
}

template <typename T>
void Trainer<T>::save_checkpoint(const std::filesystem::path& path) {
  ckpt::save(path, state_records());
}

template <typename T>
void Trainer<T>::load_checkpoint(const std::filesystem::path& path) {
  const auto records = ckpt::load(path);
  model_.load_state_records(records);
  optimizer_.load_state_records(records);
  for (const auto& r : records) {
    if (r.name == "train/epoch") epochs_done_ = static_cast<std::size_t>(r.values.at(0));
  }
}

void write_log_csv(const std::filesystem::path& path, const std::vector<EpochLog>& log) {
  std::ofstream f(path);
  if (!f) throw IoError("cannot write " + path.string());
  f << "epoch,step,lr,loss,train_acc\n";
  char buf[160];
  for (const auto& e : log) {
    std::snprintf(buf, sizeof buf, "%zu,%zu,%.9g,%.9g,%.6f\n", e.epoch, e.step, e.lr, e.loss, e.train_acc);
    f << buf;
  }
}

bool windowed_non_increasing(const std::vector<double>& losses, std::size_t window) {
  if (window == 0) throw ValidationError("window must be >= 1");
  double previous = std::numeric_limits<double>::infinity();
  for (std::size_t start = 0; start + window <= losses.size(); start += window) {
    double mean = 0;
    for (std::size_t i = start; i < start + window; ++i) mean += losses[i];
    mean /= static_cast<double>(window);
    if (mean > previous) return false;
    previous = mean;
  }
  return true;
}

template <typename T>
double accuracy(model::LitModel<T>& model, const data::Dataset& data, Mode mode, std::size_t batch_size) {
  std::size_t correct = 0;
  std::vector<std::size_t> idx;
  for (std::size_t start = 0; start < data.size(); start += batch_size) {
    idx.clear();
    for (std::size_t i = start; i < std::min(data.size(), start + batch_size); ++i) idx.push_back(i);
    auto logits = model::forward(model, data.images<T>(idx), mode);
    const auto labels = data.batch_labels(idx);
    const std::size_t classes = logits.dim(1);
    for (std::size_t i = 0; i < idx.size(); ++i) {
      const T* row = logits.data().data() + i * classes;
      if (static_cast<int>(std::max_element(row, row + classes) - row) == labels[i]) ++correct;
    }
  }
  return static_cast<double>(correct) / static_cast<double>(data.size());
}

template class AdamW<float>;
template class AdamW<double>;
template class Trainer<float>;
template class Trainer<double>;
template double accuracy<float>(model::LitModel<float>&, const data::Dataset&, Mode, std::size_t);
template double accuracy<double>(model::LitModel<double>&, const data::Dataset&, Mode, std::size_t);

}  // namespace lit::train
