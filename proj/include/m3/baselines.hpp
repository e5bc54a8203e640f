#pragma once

// Reference selectors and the common selector interface used by the
// evaluation harness.

#include <cstdint>
#include <memory>
#include <optional>
#include <random>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "m3/core_graph.hpp"
#include "m3/errors.hpp"
#include "m3/model.hpp"
#include "m3/selector.hpp"

namespace m3 {

/// Picks one choice-space index for row i of a dataset. Implementations
/// throw InfeasibleBudgetError when nothing fits the budget.
class Selector {
 public:
  virtual ~Selector() = default;
  virtual std::string name() const = 0;
  virtual std::size_t select(const Dataset& data, std::size_t i,
                             std::optional<double> budget) const = 0;
};

namespace detail {

// FNV-1a; stable across platforms, unlike std::hash.
inline std::uint64_t fnv1a(std::string_view s, std::uint64_t h = 1469598103934665603ULL) {
  for (unsigned char c : s) {
    h ^= c;
    h *= 1099511628211ULL;
  }
  return h;
}

inline std::vector<int> allowed_list(const std::vector<bool>& mask) {
  std::vector<int> out;
  for (std::size_t j = 0; j < mask.size(); ++j) {
    if (mask[j]) out.push_back(static_cast<int>(j));
  }
  return out;
}

}  // namespace detail

/// Independent uniform model per subtask type, reproducible per
/// (seed, sample_id).
inline Choice random_select(const ModelZoo& zoo, std::uint64_t seed, std::string_view sample_id,
                            std::optional<double> budget = std::nullopt) {
  auto allowed = allowed_models(zoo, budget);
  std::mt19937_64 rng(detail::fnv1a(sample_id, detail::fnv1a(std::to_string(seed))));
  Choice c;
  for (int t = 0; t < zoo.num_types(); ++t) {
    auto list = detail::allowed_list(allowed[t]);
    std::uniform_int_distribution<std::size_t> pick(0, list.size() - 1);
    c.models.push_back(list[pick(rng)]);
  }
  return c;
}

inline Choice fixed_select(const ModelZoo& zoo, const Choice& configured) {
  if (!ChoiceSpace(zoo).is_valid(configured)) {
    throw InvalidChoiceError("configured fixed choice is not valid for this zoo");
  }
  return configured;
}

/// Per type: latest release, then most parameters, then lowest id.
inline Choice external_metric_select(const ModelZoo& zoo, std::optional<double> budget = std::nullopt) {
  auto allowed = allowed_models(zoo, budget);
  Choice c;
  for (int t = 0; t < zoo.num_types(); ++t) {
    int best = -1;
    for (const auto& m : zoo.models(t)) {
      if (!allowed[t][m.id]) continue;
      if (best < 0) {
        best = m.id;
        continue;
      }
      const auto& b = zoo.model(t, best);
      if (m.release_ordinal > b.release_ordinal ||
          (m.release_ordinal == b.release_ordinal && m.param_count > b.param_count)) {
        best = m.id;
      }
    }
    c.models.push_back(best);
  }
  return c;
}

/// Mean observed status per choice over the training samples (nullopt for
/// choices never observed).
inline std::vector<std::optional<double>> choice_success_means(const Dataset& train) {
  std::vector<std::optional<double>> means(train.num_choices());
  for (std::size_t j = 0; j < train.num_choices(); ++j) {
    std::size_t obs = 0, ok = 0;
    for (std::size_t i = 0; i < train.size(); ++i) {
      if (!train.observed(i, j)) continue;
      ++obs;
      ok += static_cast<std::size_t>(train.status(i, j));
    }
    if (obs) means[j] = static_cast<double>(ok) / static_cast<double>(obs);
  }
  return means;
}

inline std::size_t best_mean_choice(const std::vector<std::optional<double>>& means,
                                    const std::vector<std::size_t>& candidates) {
  std::optional<std::size_t> best;
  for (std::size_t j : candidates) {
    if (!means[j]) continue;
    if (!best || *means[j] > *means[*best]) best = j;
  }
  if (!best) throw NoDataError("no candidate choice has observed training outcomes");
  return *best;
}

inline std::size_t global_best_select(const Dataset& train) {
  std::vector<std::size_t> all(train.num_choices());
  std::iota(all.begin(), all.end(), std::size_t{0});
  return best_mean_choice(choice_success_means(train), all);
}

// --- selector adapters ------------------------------------------------------

class RandomSelector : public Selector {
 public:
  RandomSelector(const ModelZoo& zoo, std::uint64_t seed) : zoo_(zoo), space_(zoo), seed_(seed) {}
  std::string name() const override { return "random"; }
  std::size_t select(const Dataset& data, std::size_t i, std::optional<double> budget) const override {
    return space_.index_of(random_select(zoo_, seed_, data.sample(i).sample_id, budget));
  }

 private:
  const ModelZoo& zoo_;
  ChoiceSpace space_;
  std::uint64_t seed_;
};

class FixedSelector : public Selector {
 public:
  FixedSelector(const ModelZoo& zoo, const Choice& choice)
      : zoo_(zoo), choice_(fixed_select(zoo, choice)), index_(ChoiceSpace(zoo).index_of(choice)) {}
  std::string name() const override { return "fixed"; }
  std::size_t select(const Dataset&, std::size_t, std::optional<double> budget) const override {
    auto allowed = allowed_models(zoo_, budget);
    for (int t = 0; t < zoo_.num_types(); ++t) {
      if (!allowed[t][choice_.models[t]]) {
        throw InfeasibleBudgetError("fixed choice uses a model over the time budget");
      }
    }
    return index_;
  }

 private:
  const ModelZoo& zoo_;
  Choice choice_;
  std::size_t index_;
};

class ExMetricSelector : public Selector {
 public:
  explicit ExMetricSelector(const ModelZoo& zoo) : zoo_(zoo), space_(zoo) {}
  std::string name() const override { return "exmetric"; }
  std::size_t select(const Dataset&, std::size_t, std::optional<double> budget) const override {
    return space_.index_of(external_metric_select(zoo_, budget));
  }

 private:
  const ModelZoo& zoo_;
  ChoiceSpace space_;
};

class GlobalBestSelector : public Selector {
 public:
  GlobalBestSelector(const ModelZoo& zoo, const Dataset& train)
      : zoo_(zoo), space_(zoo), means_(choice_success_means(train)) {
    global_best_select(train);  // NoDataError early
  }
  std::string name() const override { return "global_best"; }
  std::size_t select(const Dataset&, std::size_t, std::optional<double> budget) const override {
    return best_mean_choice(means_, feasible_choices(zoo_, space_, budget));
  }

 private:
  const ModelZoo& zoo_;
  ChoiceSpace space_;
  std::vector<std::optional<double>> means_;
};

/// Lowest-index observed success among the feasible choices; falls back to
/// the first feasible choice when none succeeded.
class OracleSelector : public Selector {
 public:
  explicit OracleSelector(const ModelZoo& zoo) : zoo_(zoo), space_(zoo) {}
  std::string name() const override { return "oracle"; }
  std::size_t select(const Dataset& data, std::size_t i, std::optional<double> budget) const override {
    auto cands = feasible_choices(zoo_, space_, budget);
    for (std::size_t j : cands) {
      if (data.observed(i, j) && data.status(i, j) == 1) return j;
    }
    return cands.front();
  }

 private:
  const ModelZoo& zoo_;
  ChoiceSpace space_;
};

template <class Model>
class ScorerSelector : public Selector {
 public:
  ScorerSelector(std::string name, Model model, ScoringContext ctx)
      : name_(std::move(name)), model_(std::move(model)), ctx_(ctx) {}
  std::string name() const override { return name_; }
  std::size_t select(const Dataset& data, std::size_t i, std::optional<double> budget) const override {
    return m3::select(data.sample(i), model_, ctx_, budget).index;
  }
  const Model& model() const { return model_; }

 private:
  std::string name_;
  Model model_;
  ScoringContext ctx_;
};

}  // namespace m3
