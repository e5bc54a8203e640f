#pragma once

// Splitting, missing-data protocols, optimizers, the training loop and
// checkpoint files for any scorer in model.hpp.

#include <algorithm>
#include <array>
#include <cstdio>
#include <exception>
#include <mutex>
#include <numeric>
#include <span>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <functional>
#include <limits>
#include <optional>
#include <random>
#include <sstream>
#include <string>
#include <thread>
#include <tuple>
#include <vector>

#include <json.hpp>

#include "m3/core_graph.hpp"
#include "m3/errors.hpp"
#include "m3/model.hpp"
#include "m3/objective.hpp"

namespace m3 {

enum class OptimizerKind { kSgd, kAdam, kAdamW };

inline std::string_view optimizer_name(OptimizerKind k) {
  switch (k) {
    case OptimizerKind::kSgd: return "sgd";
    case OptimizerKind::kAdam: return "adam";
    case OptimizerKind::kAdamW: return "adamw";
  }
  return "?";
}

inline OptimizerKind parse_optimizer(std::string_view s) {
  if (s == "sgd") return OptimizerKind::kSgd;
  if (s == "adam") return OptimizerKind::kAdam;
  if (s == "adamw") return OptimizerKind::kAdamW;
  throw SpecError("unknown optimizer '" + std::string(s) + "'");
}

inline LossKind parse_loss(std::string_view s) {
  if (s == "cce") return LossKind::kCce;
  if (s == "bce") return LossKind::kBce;
  throw SpecError("unknown loss '" + std::string(s) + "'");
}

struct TrainConfig {
  int hidden_d = 64;
  int embed_d = 32;
  int num_layers = 2;
  double lr = 1e-3;
  double weight_decay = 1e-4;
  OptimizerKind optimizer = OptimizerKind::kAdamW;
  int batch_size = 64;
  int scheduler_step = 100;
  double scheduler_gamma = 0.7;
  int max_epochs = 500;
  int patience = 50;
  std::uint64_t seed = 0;
  LossKind loss = LossKind::kCce;
  int jobs = 1;

  void validate() const {
    if (hidden_d <= 0 || embed_d <= 0 || num_layers <= 0 || batch_size <= 0 ||
        scheduler_step <= 0 || max_epochs < 0 || patience <= 0 || jobs <= 0) {
      throw SpecError("train config: sizes must be positive");
    }
    if (!(lr > 0.0)) throw SpecError("train config: lr must be positive");
    if (!(weight_decay >= 0.0)) throw SpecError("train config: weight_decay must be >= 0");
    if (!(scheduler_gamma > 0.0 && scheduler_gamma <= 1.0)) {
      throw SpecError("train config: scheduler_gamma must lie in (0, 1]");
    }
  }
};

inline nlohmann::json to_json(const TrainConfig& c) {
  return {{"hidden_d", c.hidden_d},
          {"embed_d", c.embed_d},
          {"num_layers", c.num_layers},
          {"lr", c.lr},
          {"weight_decay", c.weight_decay},
          {"optimizer", optimizer_name(c.optimizer)},
          {"batch_size", c.batch_size},
          {"scheduler_step", c.scheduler_step},
          {"scheduler_gamma", c.scheduler_gamma},
          {"max_epochs", c.max_epochs},
          {"patience", c.patience},
          {"seed", c.seed},
          {"loss", loss_name(c.loss)}};
}

/// Missing keys keep their defaults; unknown keys are rejected.
inline TrainConfig train_config_from_json(const nlohmann::json& j, TrainConfig c = {}) {
  if (!j.is_object()) throw SpecError("train config must be a JSON object");
  try {
    for (const auto& [key, v] : j.items()) {
      if (key == "hidden_d") c.hidden_d = v.get<int>();
      else if (key == "embed_d") c.embed_d = v.get<int>();
      else if (key == "num_layers") c.num_layers = v.get<int>();
      else if (key == "lr") c.lr = v.get<double>();
      else if (key == "weight_decay") c.weight_decay = v.get<double>();
      else if (key == "optimizer") c.optimizer = parse_optimizer(v.get<std::string>());
      else if (key == "batch_size") c.batch_size = v.get<int>();
      else if (key == "scheduler_step") c.scheduler_step = v.get<int>();
      else if (key == "scheduler_gamma") c.scheduler_gamma = v.get<double>();
      else if (key == "max_epochs") c.max_epochs = v.get<int>();
      else if (key == "patience") c.patience = v.get<int>();
      else if (key == "seed") c.seed = v.get<std::uint64_t>();
      else if (key == "loss") c.loss = parse_loss(v.get<std::string>());
      else if (key == "jobs") c.jobs = v.get<int>();
      else throw SpecError("train config: unknown key '" + key + "'");
    }
  } catch (const nlohmann::json::exception& e) {
    throw SpecError(std::string("train config: ") + e.what());
  }
  c.validate();
  return c;
}

// ---------------------------------------------------------------------------
// Splits and missing data

struct SplitSpec {
  double train = 0.6;
  double val = 0.2;
  double test = 0.2;
  std::uint64_t seed = 0;
};

/// Part sizes by largest-remainder rounding; ties go to the earlier part.
inline std::array<std::size_t, 3> split_sizes(std::size_t n, const SplitSpec& spec) {
  const std::array<double, 3> ratios{spec.train, spec.val, spec.test};
  const double total = ratios[0] + ratios[1] + ratios[2];
  if (std::abs(total - 1.0) > 1e-9 || ratios[0] < 0 || ratios[1] < 0 || ratios[2] < 0) {
    throw SpecError("split ratios must be nonnegative and sum to 1");
  }
  std::array<std::size_t, 3> sizes{};
  std::array<double, 3> rem{};
  std::size_t assigned = 0;
  for (int k = 0; k < 3; ++k) {
    const double exact = ratios[k] * static_cast<double>(n);
    sizes[k] = static_cast<std::size_t>(std::floor(exact + 1e-9));
    rem[k] = exact - static_cast<double>(sizes[k]);
    assigned += sizes[k];
  }
  std::array<int, 3> order{0, 1, 2};
  std::stable_sort(order.begin(), order.end(), [&](int a, int b) { return rem[a] > rem[b]; });
  for (std::size_t k = 0; assigned < n; ++k, ++assigned) ++sizes[order[k % 3]];
  return sizes;
}

/// Seeded shuffle of whole samples, cut into train/val/test.
inline std::tuple<Dataset, Dataset, Dataset> split(const Dataset& data, const SplitSpec& spec) {
  if (data.empty()) throw NoDataError("cannot split an empty dataset");
  auto sizes = split_sizes(data.size(), spec);
  std::vector<std::size_t> perm(data.size());
  std::iota(perm.begin(), perm.end(), std::size_t{0});
  std::mt19937_64 rng(spec.seed);
  std::shuffle(perm.begin(), perm.end(), rng);
  auto part = [&](std::size_t from, std::size_t count) {
    std::vector<std::size_t> rows(perm.begin() + from, perm.begin() + from + count);
    std::sort(rows.begin(), rows.end());
    return data.subset(rows);
  };
  return {part(0, sizes[0]), part(sizes[0], sizes[1]), part(sizes[0] + sizes[1], sizes[2])};
}

enum class MissingMode { kChoices, kSamples };

inline MissingMode parse_missing_mode(std::string_view s) {
  if (s == "choices") return MissingMode::kChoices;
  if (s == "samples") return MissingMode::kSamples;
  throw SpecError("unknown missing mode '" + std::string(s) + "'");
}

inline std::string_view missing_mode_name(MissingMode m) {
  return m == MissingMode::kChoices ? "choices" : "samples";
}

/// choices: hides round(ratio * #observed) observed entries chosen uniformly.
/// samples: drops round(ratio * N) samples chosen uniformly.
inline Dataset apply_missing(const Dataset& data, MissingMode mode, double ratio, std::uint64_t seed) {
  if (!(ratio >= 0.0 && ratio < 1.0)) throw SpecError("missing ratio must lie in [0, 1)");
  std::mt19937_64 rng(seed);
  if (mode == MissingMode::kSamples) {
    std::vector<std::size_t> rows(data.size());
    std::iota(rows.begin(), rows.end(), std::size_t{0});
    std::shuffle(rows.begin(), rows.end(), rng);
    const auto drop = static_cast<std::size_t>(std::llround(ratio * static_cast<double>(data.size())));
    rows.erase(rows.begin(), rows.begin() + static_cast<std::ptrdiff_t>(drop));
    std::sort(rows.begin(), rows.end());
    return data.subset(rows);
  }
  std::vector<std::pair<std::size_t, std::size_t>> entries;
  for (std::size_t i = 0; i < data.size(); ++i) {
    for (std::size_t j = 0; j < data.num_choices(); ++j) {
      if (data.observed(i, j)) entries.emplace_back(i, j);
    }
  }
  std::shuffle(entries.begin(), entries.end(), rng);
  const auto hide = static_cast<std::size_t>(std::llround(ratio * static_cast<double>(entries.size())));
  Dataset out = data;
  for (std::size_t k = 0; k < hide; ++k) out.unobserve(entries[k].first, entries[k].second);
  return out;
}

// ---------------------------------------------------------------------------
// Optimization

inline double step_lr(double base, int epoch, int step, double gamma) {
  return base * std::pow(gamma, epoch / step);
}

/// SGD with L2 weight decay; Adam with L2 decay folded into the gradient;
/// AdamW with decoupled decay.
class Optimizer {
 public:
  Optimizer(OptimizerKind kind, double weight_decay, double beta1 = 0.9, double beta2 = 0.999,
            double eps = 1e-8)
      : kind_(kind), wd_(weight_decay), beta1_(beta1), beta2_(beta2), eps_(eps) {}

  void step(std::vector<std::span<double>> params, const std::vector<std::span<double>>& grads,
            double lr) {
    if (first_.empty()) {
      for (auto p : params) {
        first_.emplace_back(p.size(), 0.0);
        second_.emplace_back(p.size(), 0.0);
      }
    }
    ++t_;
    const double bc1 = 1.0 - std::pow(beta1_, static_cast<double>(t_));
    const double bc2 = 1.0 - std::pow(beta2_, static_cast<double>(t_));
    for (std::size_t k = 0; k < params.size(); ++k) {
      auto p = params[k];
      auto g = grads[k];
      auto& m = first_[k];
      auto& v = second_[k];
      for (std::size_t i = 0; i < p.size(); ++i) {
        double gi = g[i];
        if (kind_ == OptimizerKind::kSgd) {
          p[i] -= lr * (gi + wd_ * p[i]);
          continue;
        }
        if (kind_ == OptimizerKind::kAdam) gi += wd_ * p[i];
        if (kind_ == OptimizerKind::kAdamW) p[i] -= lr * wd_ * p[i];
        m[i] = beta1_ * m[i] + (1.0 - beta1_) * gi;
        v[i] = beta2_ * v[i] + (1.0 - beta2_) * gi * gi;
        p[i] -= lr * (m[i] / bc1) / (std::sqrt(v[i] / bc2) + eps_);
      }
    }
  }

 private:
  OptimizerKind kind_;
  double wd_, beta1_, beta2_, eps_;
  long t_ = 0;
  std::vector<std::vector<double>> first_, second_;
};

// ---------------------------------------------------------------------------
// Checkpoints

inline constexpr int kCheckpointVersion = 1;

template <class Model>
struct Checkpoint {
  Model model;
  TrainConfig config;
  int epoch = 0;
  double val_ser = 0.0;
};

template <class Model>
ModelDims dims_for(const TrainConfig& c, const ScoringContext& ctx) {
  return ModelDims{ctx.zoo->total_models(), ctx.store->dim(), c.embed_d, c.hidden_d, c.num_layers};
}

template <class Model>
void write_checkpoint(std::ostream& out, Checkpoint<Model>& ck) {
  nlohmann::json j;
  j["format"] = "m3-checkpoint";
  j["version"] = kCheckpointVersion;
  j["kind"] = Model::kKind;
  const auto& d = ck.model.dims;
  j["dims"] = {{"num_models", d.num_models}, {"input_dim", d.input_dim},
               {"embed_dim", d.embed_dim}, {"hidden_dim", d.hidden_dim},
               {"num_layers", d.num_layers}};
  j["config"] = to_json(ck.config);
  j["epoch"] = ck.epoch;
  j["val_ser"] = ck.val_ser;
  auto& tensors = j["tensors"] = nlohmann::json::array();
  ck.model.for_each_tensor([&](std::string_view name, double* p, Eigen::Index r, Eigen::Index c) {
    tensors.push_back({{"name", name}, {"rows", r}, {"cols", c},
                       {"data", std::vector<double>(p, p + r * c)}});
  });
  // Shortest round-trip formatting keeps every double bit-exact on reload.
  out << j.dump(1) << '\n';
}

template <class Model>
void save_checkpoint(const std::string& path, Checkpoint<Model>& ck) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write checkpoint '" + path + "'");
  write_checkpoint(out, ck);
  if (!out) throw IoError("failed writing checkpoint '" + path + "'");
}

/// Reads the kind field without building a model.
inline std::string checkpoint_kind(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open checkpoint '" + path + "'");
  try {
    return nlohmann::json::parse(in).at("kind").get<std::string>();
  } catch (const nlohmann::json::exception& e) {
    throw FormatError("checkpoint '" + path + "': " + e.what());
  }
}

template <class Model>
Checkpoint<Model> read_checkpoint(std::istream& in) {
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(in);
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("checkpoint: ") + e.what());
  }
  try {
    if (j.at("format").get<std::string>() != "m3-checkpoint") {
      throw FormatError("checkpoint: not an m3 checkpoint");
    }
    if (j.at("version").get<int>() != kCheckpointVersion) {
      throw VersionError("checkpoint: unsupported version " + j.at("version").dump());
    }
    if (j.at("kind").get<std::string>() != Model::kKind) {
      throw FormatError("checkpoint: holds a '" + j.at("kind").get<std::string>() +
                        "' model, expected '" + std::string(Model::kKind) + "'");
    }
    const auto& jd = j.at("dims");
    ModelDims dims{jd.at("num_models").get<int>(), jd.at("input_dim").get<int>(),
                   jd.at("embed_dim").get<int>(), jd.at("hidden_dim").get<int>(),
                   jd.at("num_layers").get<int>()};
    Checkpoint<Model> ck{Model::create(dims, 0), train_config_from_json(j.at("config")),
                         j.at("epoch").get<int>(), j.at("val_ser").get<double>()};
    const auto& tensors = j.at("tensors");
    std::size_t k = 0;
    ck.model.for_each_tensor([&](std::string_view name, double* p, Eigen::Index r, Eigen::Index c) {
      if (k >= tensors.size()) throw FormatError("checkpoint: missing tensor '" + std::string(name) + "'");
      const auto& t = tensors[k++];
      if (t.at("name").get<std::string>() != name || t.at("rows").get<Eigen::Index>() != r ||
          t.at("cols").get<Eigen::Index>() != c) {
        throw FormatError("checkpoint: tensor '" + std::string(name) + "' does not match its header");
      }
      const auto& data = t.at("data");
      if (data.size() != static_cast<std::size_t>(r * c)) {
        throw FormatError("checkpoint: tensor '" + std::string(name) + "' has the wrong length");
      }
      for (std::size_t i = 0; i < data.size(); ++i) p[i] = data[i].get<double>();
    });
    if (k != tensors.size()) throw FormatError("checkpoint: unexpected extra tensors");
    return ck;
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("checkpoint: ") + e.what());
  } catch (const SpecError& e) {
    throw FormatError(std::string("checkpoint: ") + e.what());
  }
}

template <class Model>
Checkpoint<Model> load_checkpoint(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open checkpoint '" + path + "'");
  return read_checkpoint<Model>(in);
}

// ---------------------------------------------------------------------------
// Training loop

struct EpochStats {
  int epoch = 0;
  double lr = 0.0;
  double train_loss = 0.0;
  double val_ser = 0.0;
};

template <class Model>
struct TrainResult {
  Checkpoint<Model> best;
  std::vector<EpochStats> history;
};

namespace detail {

struct SampleTargets {
  std::size_t row = 0;
  std::vector<std::size_t> choices;
  std::vector<int> labels;
};

inline std::vector<SampleTargets> observed_targets(const Dataset& data) {
  std::vector<SampleTargets> out;
  for (std::size_t i = 0; i < data.size(); ++i) {
    SampleTargets t{i, {}, {}};
    for (std::size_t j = 0; j < data.num_choices(); ++j) {
      if (!data.observed(i, j)) continue;
      t.choices.push_back(j);
      t.labels.push_back(data.status(i, j));
    }
    // A sample with nothing observed contributes no gradient; leaving it out
    // keeps batch composition independent of such rows.
    if (!t.choices.empty()) out.push_back(std::move(t));
  }
  return out;
}

inline std::vector<std::size_t> all_choices(std::size_t n) {
  std::vector<std::size_t> v(n);
  std::iota(v.begin(), v.end(), std::size_t{0});
  return v;
}

}  // namespace detail

/// Argmax over every choice of the space; lowest index wins ties.
template <class Model>
std::size_t argmax_choice(const Model& model, const Sample& sample, const ScoringContext& ctx) {
  auto logits = model.score(sample, detail::all_choices(ctx.space->size()), ctx);
  return static_cast<std::size_t>(std::max_element(logits.begin(), logits.end()) - logits.begin());
}

/// Fraction of samples whose argmax choice is observed and succeeded.
template <class Model>
double selection_success_rate(const Model& model, const Dataset& data, const ScoringContext& ctx) {
  if (data.empty()) return 0.0;
  std::size_t ok = 0;
  for (std::size_t i = 0; i < data.size(); ++i) {
    std::size_t c = argmax_choice(model, data.sample(i), ctx);
    ok += data.observed(i, c) && data.status(i, c) == 1;
  }
  return static_cast<double>(ok) / static_cast<double>(data.size());
}

/// Mean per-sample loss and its gradient over a batch of samples. The
/// per-sample gradients are summed in batch order whatever the job count.
template <class Model>
double batch_gradient(const Model& model, const Dataset& data,
                      const std::vector<const detail::SampleTargets*>& batch, LossKind loss,
                      const ScoringContext& ctx, int jobs, Model& grad) {
  std::vector<double> losses(batch.size(), 0.0);
  if (jobs <= 1 || batch.size() < 2) {
    Model scratch = model.zeros_like();
    for (std::size_t b = 0; b < batch.size(); ++b) {
      const auto& t = *batch[b];
      losses[b] = model.accumulate(data.sample(t.row), t.choices, t.labels, loss, ctx, scratch);
      add_into(grad, scratch);
      scale_into(scratch, 0.0);
    }
  } else {
    std::vector<Model> parts(batch.size(), model.zeros_like());
    std::vector<std::thread> workers;
    std::exception_ptr failure;
    std::mutex failure_mu;
    const std::size_t n_workers = std::min<std::size_t>(static_cast<std::size_t>(jobs), batch.size());
    for (std::size_t w = 0; w < n_workers; ++w) {
      workers.emplace_back([&, w] {
        try {
          for (std::size_t b = w; b < batch.size(); b += n_workers) {
            const auto& t = *batch[b];
            losses[b] = model.accumulate(data.sample(t.row), t.choices, t.labels, loss, ctx, parts[b]);
          }
        } catch (...) {
          std::lock_guard lock(failure_mu);
          if (!failure) failure = std::current_exception();
        }
      });
    }
    for (auto& th : workers) th.join();
    if (failure) std::rethrow_exception(failure);
    for (auto& p : parts) add_into(grad, p);
  }
  double total = 0.0;
  for (std::size_t b = 0; b < batch.size(); ++b) {
    if (!std::isfinite(losses[b])) {
      throw NonFiniteLossError("non-finite loss " + std::to_string(losses[b]) + " on sample '" +
                               data.sample(batch[b]->row).sample_id + "'");
    }
    total += losses[b];
  }
  scale_into(grad, 1.0 / static_cast<double>(batch.size()));
  return total / static_cast<double>(batch.size());
}

/// Seeded shuffle -> batches -> optimizer step per batch, StepLR per epoch,
/// and early stopping on validation selection success. Returns the best
/// checkpoint seen (the initialization if no epoch improves on it).
template <class Model>
TrainResult<Model> train(const Dataset& train_set, const Dataset& val_set, const TrainConfig& config,
                         const ScoringContext& ctx,
                         const std::function<void(const EpochStats&)>& on_epoch = {}) {
  config.validate();
  for (const auto& s : train_set.samples()) ctx.store->at(s.feature_ref);
  for (const auto& s : val_set.samples()) ctx.store->at(s.feature_ref);

  Model model = Model::create(dims_for<Model>(config, ctx), config.seed);
  TrainResult<Model> result{{model, config, 0, selection_success_rate(model, val_set, ctx)}, {}};
  auto targets = detail::observed_targets(train_set);
  Optimizer opt(config.optimizer, config.weight_decay);
  std::mt19937_64 rng(config.seed ^ 0x5851f42d4c957f2dULL);
  std::vector<std::size_t> order(targets.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  int since_best = 0;

  for (int epoch = 0; epoch < config.max_epochs; ++epoch) {
    const double lr = step_lr(config.lr, epoch, config.scheduler_step, config.scheduler_gamma);
    std::shuffle(order.begin(), order.end(), rng);
    double loss_sum = 0.0;
    std::size_t batches = 0;
    for (std::size_t start = 0; start < order.size(); start += static_cast<std::size_t>(config.batch_size)) {
      const std::size_t end = std::min(order.size(), start + static_cast<std::size_t>(config.batch_size));
      std::vector<const detail::SampleTargets*> batch;
      for (std::size_t k = start; k < end; ++k) batch.push_back(&targets[order[k]]);
      Model grad = model.zeros_like();
      loss_sum += batch_gradient(model, train_set, batch, config.loss, ctx, config.jobs, grad);
      ++batches;
      opt.step(tensor_spans(model), tensor_spans(grad), lr);
    }
    EpochStats stats{epoch + 1, lr, batches ? loss_sum / static_cast<double>(batches) : 0.0,
                     selection_success_rate(model, val_set, ctx)};
    result.history.push_back(stats);
    if (on_epoch) on_epoch(stats);
    if (stats.val_ser > result.best.val_ser || val_set.empty()) {
      result.best = {model, config, epoch + 1, stats.val_ser};
      since_best = 0;
    } else if (++since_best >= config.patience) {
      break;
    }
  }
  return result;
}

inline void write_history_csv(std::ostream& out, const std::vector<EpochStats>& history) {
  out << "epoch,lr,train_loss,val_ser\n";
  char buf[128];
  for (const auto& h : history) {
    std::snprintf(buf, sizeof buf, "%d,%.17g,%.17g,%.17g\n", h.epoch, h.lr, h.train_loss, h.val_ser);
    out << buf;
  }
}

}  // namespace m3
