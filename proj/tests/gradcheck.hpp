#pragma once

// Central finite differences against the analytic gradient of
// loss(scorer(assemble(...))) on small random instances.

#include <algorithm>
#include <cmath>
#include <random>
#include <string>
#include <vector>

#include "m3/model.hpp"
#include "m3/objective.hpp"
#include "test_support.hpp"

namespace m3::testing {

struct GradInstance {
  ModelZoo zoo;
  ChoiceSpace space;
  FeatureStore store;
  Sample sample;
  std::vector<std::size_t> choices;
  std::vector<int> labels;
  ModelDims dims;
};

/// L in [1,4] subtasks on a random DAG, every dimension in [2,8].
inline GradInstance random_grad_instance(std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  auto uni = [&](int lo, int hi) { return std::uniform_int_distribution<int>(lo, hi)(rng); };
  std::vector<std::pair<std::string, int>> spec;
  const int k = uni(1, 3);
  for (int t = 0; t < k; ++t) spec.emplace_back("T" + std::to_string(t), uni(1, 3));
  GradInstance inst{make_zoo(spec), {}, {}, {}, {}, {}, {}};
  inst.space = ChoiceSpace(inst.zoo);

  const int L = uni(1, 4);
  TaskGraph g;
  for (int v = 0; v < L; ++v) g.node_types.push_back(uni(0, k - 1));
  for (int a = 1; a <= L; ++a) {
    for (int b = a + 1; b <= L; ++b) {
      if (uni(0, 1)) g.edges.push_back({a, b});
    }
  }
  g = augment_virtual_node(g);
  inst.sample.sample_id = "g";
  inst.sample.feature_ref = "g";
  inst.sample.graph = g;

  inst.dims = ModelDims{inst.zoo.total_models(), uni(2, 8), uni(2, 8), uni(2, 8), 2};
  inst.store.add("g", random_vector(inst.dims.input_dim, rng));

  for (std::size_t c = 0; c < inst.space.size(); ++c) {
    if (inst.choices.empty() || uni(0, 2) > 0) inst.choices.push_back(c);
  }
  for (std::size_t c = 0; c < inst.choices.size(); ++c) inst.labels.push_back(uni(0, 1));
  return inst;
}

struct GradCheckResult {
  double max_rel_error = 0.0;
  std::string worst;
  std::size_t checked = 0;
};

/// |analytic - numeric| / max(|analytic|, |numeric|, floor). The floor keeps
/// entries whose true gradient is ~0 from dividing rounding noise by ~0.
inline double relative_error(double analytic, double numeric, double floor = 1e-6) {
  return std::abs(analytic - numeric) / std::max({std::abs(analytic), std::abs(numeric), floor});
}

template <class Model>
GradCheckResult grad_check(const GradInstance& inst, std::uint64_t seed, LossKind loss, double h = 1e-5) {
  ScoringContext ctx{&inst.zoo, &inst.space, &inst.store};
  Model model = Model::create(inst.dims, seed);
  // Spread the parameters a bit so the nonlinearities are exercised away
  // from their initial small-weight regime.
  std::mt19937_64 rng(seed + 17);
  std::normal_distribution<double> nd(0.0, 0.3);
  for (auto s : tensor_spans(model)) {
    for (auto& v : s) v += nd(rng);
  }

  Model grad = model.zeros_like();
  model.accumulate(inst.sample, inst.choices, inst.labels, loss, ctx, grad);
  auto eval = [&] {
    Model scratch = model.zeros_like();
    return model.accumulate(inst.sample, inst.choices, inst.labels, loss, ctx, scratch);
  };

  GradCheckResult out;
  std::vector<std::string> names;
  model.for_each_tensor([&](std::string_view n, double*, Eigen::Index, Eigen::Index) { names.emplace_back(n); });
  auto params = tensor_spans(model);
  auto grads = tensor_spans(grad);
  for (std::size_t t = 0; t < params.size(); ++t) {
    for (std::size_t i = 0; i < params[t].size(); ++i) {
      const double saved = params[t][i];
      params[t][i] = saved + h;
      const double up = eval();
      params[t][i] = saved - h;
      const double down = eval();
      params[t][i] = saved;
      const double numeric = (up - down) / (2.0 * h);
      const double err = relative_error(grads[t][i], numeric);
      ++out.checked;
      if (err > out.max_rel_error) {
        out.max_rel_error = err;
        out.worst = names[t] + "[" + std::to_string(i) + "] analytic " + std::to_string(grads[t][i]) +
                    " numeric " + std::to_string(numeric);
      }
    }
  }
  return out;
}

}  // namespace m3::testing
