#pragma once

// Test-time selection with a trained scorer: score every choice, keep the
// ones whose models all fit the time budget, take the argmax.

#include <algorithm>
#include <cmath>
#include <numeric>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "m3/core_graph.hpp"
#include "m3/errors.hpp"
#include "m3/model.hpp"

namespace m3 {

/// allowed[t][j]: model j of type t has avg_exec_time <= budget. Every
/// subtask type of the zoo must keep at least one model.
inline std::vector<std::vector<bool>> allowed_models(const ModelZoo& zoo,
                                                     std::optional<double> budget) {
  std::vector<std::vector<bool>> allowed(zoo.num_types());
  for (int t = 0; t < zoo.num_types(); ++t) {
    bool any = false;
    for (const auto& m : zoo.models(t)) {
      bool ok = !budget || m.avg_exec_time <= *budget;
      allowed[t].push_back(ok);
      any = any || ok;
    }
    if (!any) {
      throw InfeasibleBudgetError("no model of subtask type '" + zoo.type(t).name +
                                  "' runs within " + std::to_string(*budget) + " s");
    }
  }
  return allowed;
}

/// Indices of the choice space that survive the budget (all when unset).
inline std::vector<std::size_t> feasible_choices(const ModelZoo& zoo, const ChoiceSpace& space,
                                                 std::optional<double> budget) {
  if (!budget) {
    std::vector<std::size_t> all(space.size());
    std::iota(all.begin(), all.end(), std::size_t{0});
    return all;
  }
  return space.restricted(allowed_models(zoo, budget));
}

template <class Model>
std::vector<double> score_all(const Sample& sample, const Model& model, const ScoringContext& ctx) {
  std::vector<std::size_t> all(ctx.space->size());
  std::iota(all.begin(), all.end(), std::size_t{0});
  return model.score(sample, all, ctx);
}

struct Selection {
  std::size_t index = 0;
  Choice choice;
  double score = 0.0;
};

/// Highest score among `candidates`; the lowest index wins ties.
inline std::size_t argmax_over(const std::vector<double>& scores,
                               const std::vector<std::size_t>& candidates) {
  if (candidates.empty()) throw InfeasibleBudgetError("no candidate choices");
  std::size_t best = candidates.front();
  for (std::size_t c : candidates) {
    if (scores[c] > scores[best] || (scores[c] == scores[best] && c < best)) best = c;
  }
  return best;
}

template <class Model>
Selection select(const Sample& sample, const Model& model, const ScoringContext& ctx,
                 std::optional<double> budget = std::nullopt) {
  auto candidates = feasible_choices(*ctx.zoo, *ctx.space, budget);
  auto scores = score_all(sample, model, ctx);
  std::size_t best = argmax_over(scores, candidates);
  return {best, ctx.space->at(best), scores[best]};
}

/// Descending by score, ties by ascending index; at most k entries.
inline std::vector<std::pair<std::size_t, double>> rank_scores(const std::vector<double>& scores,
                                                               std::size_t k) {
  std::vector<std::size_t> idx(scores.size());
  std::iota(idx.begin(), idx.end(), std::size_t{0});
  std::stable_sort(idx.begin(), idx.end(),
                   [&](std::size_t a, std::size_t b) { return scores[a] > scores[b]; });
  idx.resize(std::min(k, idx.size()));
  std::vector<std::pair<std::size_t, double>> out;
  for (std::size_t i : idx) out.emplace_back(i, scores[i]);
  return out;
}

template <class Model>
std::vector<Selection> rank_topk(const Sample& sample, const Model& model, const ScoringContext& ctx,
                                 std::size_t k, std::optional<double> budget = std::nullopt) {
  if (k == 0) throw InvalidChoiceError("k must be at least 1");
  auto candidates = feasible_choices(*ctx.zoo, *ctx.space, budget);
  auto scores = score_all(sample, model, ctx);
  std::vector<double> kept;
  for (std::size_t c : candidates) kept.push_back(scores[c]);
  std::vector<Selection> out;
  for (auto [pos, score] : rank_scores(kept, k)) {
    out.push_back({candidates[pos], ctx.space->at(candidates[pos]), score});
  }
  return out;
}

}  // namespace m3
