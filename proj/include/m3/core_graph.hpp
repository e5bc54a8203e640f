#pragma once

// Data model shared by every module: subtask types, the model zoo, joint
// model choices, task graphs and the outcome matrix.

#include <algorithm>
#include <array>
#include <cctype>
#include <cmath>
#include <cstdint>
#include <limits>
#include <numeric>
#include <optional>
#include <queue>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "m3/errors.hpp"

namespace m3 {

enum class SubtaskKind { kModelBacked, kDeterministic };

struct SubtaskType {
  int id = 0;
  std::string name;
  SubtaskKind kind = SubtaskKind::kModelBacked;
};

struct ModelInfo {
  int id = 0;
  int subtask_type = 0;
  std::string name;
  std::int64_t release_ordinal = 0;  // days since 1970-01-01
  std::int64_t param_count = 0;
  double avg_exec_time = 0.0;  // seconds
};

/// Candidate models per subtask type. Deterministic subtask types hold a
/// single pseudo-model so every type contributes a factor n_t >= 1.
class ModelZoo {
 public:
  ModelZoo() = default;

  ModelZoo(std::vector<SubtaskType> types, std::vector<std::vector<ModelInfo>> models)
      : types_(std::move(types)), models_(std::move(models)) {
    if (types_.size() != models_.size()) {
      throw SpecError("zoo: one model list per subtask type is required");
    }
    if (types_.empty()) throw SpecError("zoo: no subtask types");
    for (std::size_t t = 0; t < types_.size(); ++t) {
      if (types_[t].id != static_cast<int>(t)) {
        throw SpecError("zoo: subtask type ids must be dense and ordered");
      }
      for (std::size_t u = 0; u < t; ++u) {
        if (types_[u].name == types_[t].name) {
          throw SpecError("zoo: duplicate subtask type name '" + types_[t].name + "'");
        }
      }
      auto& list = models_[t];
      if (list.empty()) {
        throw SpecError("zoo: subtask type '" + types_[t].name + "' has no models");
      }
      if (types_[t].kind == SubtaskKind::kDeterministic && list.size() != 1) {
        throw SpecError("zoo: deterministic type '" + types_[t].name +
                        "' must hold exactly one pseudo-model");
      }
      for (std::size_t j = 0; j < list.size(); ++j) {
        if (list[j].id != static_cast<int>(j)) {
          throw SpecError("zoo: model ids must be dense per subtask type");
        }
        if (list[j].subtask_type != static_cast<int>(t)) {
          throw SpecError("zoo: model '" + list[j].name + "' filed under the wrong type");
        }
        if (!(list[j].avg_exec_time >= 0.0) || !std::isfinite(list[j].avg_exec_time)) {
          throw SpecError("zoo: model '" + list[j].name + "' has invalid avg_exec_time");
        }
      }
    }
    offsets_.resize(types_.size() + 1, 0);
    for (std::size_t t = 0; t < types_.size(); ++t) {
      offsets_[t + 1] = offsets_[t] + static_cast<int>(models_[t].size());
    }
  }

  int num_types() const noexcept { return static_cast<int>(types_.size()); }
  int num_models(int type) const { return static_cast<int>(models_.at(type).size()); }
  int total_models() const noexcept { return offsets_.empty() ? 0 : offsets_.back(); }

  const SubtaskType& type(int t) const { return types_.at(t); }
  const std::vector<SubtaskType>& types() const noexcept { return types_; }
  const std::vector<ModelInfo>& models(int t) const { return models_.at(t); }
  const ModelInfo& model(int t, int j) const { return models_.at(t).at(j); }

  // Row of (type, model) in a flat per-model table.
  int flat_index(int t, int j) const { return offsets_.at(t) + j; }

  std::optional<int> find_type(std::string_view name) const {
    for (const auto& t : types_) {
      if (t.name == name) return t.id;
    }
    return std::nullopt;
  }

  std::optional<int> find_model(int t, std::string_view name) const {
    for (const auto& m : models_.at(t)) {
      if (m.name == name) return m.id;
    }
    return std::nullopt;
  }

 private:
  std::vector<SubtaskType> types_;
  std::vector<std::vector<ModelInfo>> models_;
  std::vector<int> offsets_;
};

/// One joint assignment: models[t] is the model index chosen for type t.
struct Choice {
  std::vector<int> models;
  friend bool operator==(const Choice&, const Choice&) = default;
};

/// Cartesian product of per-type candidates in lexicographic order over
/// (type id, model index); the first type is the most significant digit.
class ChoiceSpace {
 public:
  ChoiceSpace() = default;

  explicit ChoiceSpace(const ModelZoo& zoo) {
    radices_.reserve(zoo.num_types());
    std::size_t total = 1;
    for (int t = 0; t < zoo.num_types(); ++t) {
      radices_.push_back(zoo.num_models(t));
      total *= static_cast<std::size_t>(zoo.num_models(t));
    }
    choices_.reserve(total);
    Choice c{std::vector<int>(radices_.size(), 0)};
    for (std::size_t i = 0; i < total; ++i) {
      choices_.push_back(c);
      for (int t = static_cast<int>(radices_.size()) - 1; t >= 0; --t) {
        if (++c.models[t] < radices_[t]) break;
        c.models[t] = 0;
      }
    }
  }

  std::size_t size() const noexcept { return choices_.size(); }
  const Choice& at(std::size_t index) const { return choices_.at(index); }
  const std::vector<Choice>& choices() const noexcept { return choices_; }
  const std::vector<int>& radices() const noexcept { return radices_; }

  bool is_valid(const Choice& c) const {
    if (c.models.size() != radices_.size()) return false;
    for (std::size_t t = 0; t < radices_.size(); ++t) {
      if (c.models[t] < 0 || c.models[t] >= radices_[t]) return false;
    }
    return true;
  }

  std::size_t index_of(const Choice& c) const {
    if (!is_valid(c)) throw InvalidChoiceError("choice does not belong to this choice space");
    std::size_t idx = 0;
    for (std::size_t t = 0; t < radices_.size(); ++t) {
      idx = idx * static_cast<std::size_t>(radices_[t]) + static_cast<std::size_t>(c.models[t]);
    }
    return idx;
  }

  // Indices (ascending) of choices whose every model is allowed.
  // allowed[t][j] == true keeps model j of type t.
  std::vector<std::size_t> restricted(const std::vector<std::vector<bool>>& allowed) const {
    std::vector<std::size_t> out;
    for (std::size_t i = 0; i < choices_.size(); ++i) {
      const auto& m = choices_[i].models;
      bool ok = true;
      for (std::size_t t = 0; t < m.size() && ok; ++t) ok = allowed[t][m[t]];
      if (ok) out.push_back(i);
    }
    return out;
  }

 private:
  std::vector<int> radices_;
  std::vector<Choice> choices_;
};

inline ChoiceSpace enumerate_choices(const ModelZoo& zoo) { return ChoiceSpace(zoo); }

struct Edge {
  int from = 0;
  int to = 0;
  friend auto operator<=>(const Edge&, const Edge&) = default;
};

/// Subtask DAG. Node 0 is the virtual input node; node k (1..L) has type
/// node_types[k-1].
struct TaskGraph {
  std::string sample_id;
  std::vector<int> node_types;
  std::vector<Edge> edges;

  int num_subtasks() const noexcept { return static_cast<int>(node_types.size()); }
  int num_nodes() const noexcept { return num_subtasks() + 1; }
  int type_of(int node) const { return node_types.at(node - 1); }

  friend bool operator==(const TaskGraph& a, const TaskGraph& b) {
    auto ea = a.edges, eb = b.edges;
    std::sort(ea.begin(), ea.end());
    std::sort(eb.begin(), eb.end());
    return a.node_types == b.node_types && ea == eb;
  }
};

/// Kahn's algorithm with smallest-index-first tie-breaking.
inline std::vector<int> validate_and_topo_sort(const TaskGraph& g) {
  const int n = g.num_nodes();
  std::vector<std::vector<int>> succ(n), pred(n);
  std::vector<int> indeg(n, 0);
  for (const auto& e : g.edges) {
    if (e.from < 0 || e.from >= n || e.to < 0 || e.to >= n) {
      throw DanglingEdgeError("edge (" + std::to_string(e.from) + "," + std::to_string(e.to) +
                              ") references a node outside 0.." + std::to_string(n - 1));
    }
    if (e.to == 0) {
      throw DanglingEdgeError("edge (" + std::to_string(e.from) +
                              ",0) points into the virtual input node");
    }
    succ[e.from].push_back(e.to);
    pred[e.to].push_back(e.from);
    ++indeg[e.to];
  }
  std::priority_queue<int, std::vector<int>, std::greater<>> ready;
  for (int v = 0; v < n; ++v) {
    if (indeg[v] == 0) ready.push(v);
  }
  std::vector<int> order;
  order.reserve(n);
  while (!ready.empty()) {
    int u = ready.top();
    ready.pop();
    order.push_back(u);
    for (int v : succ[u]) {
      if (--indeg[v] == 0) ready.push(v);
    }
  }
  if (static_cast<int>(order.size()) == n) return order;

  // Every node left over has a leftover predecessor; walking predecessors
  // must revisit a node, and the closing step is an edge on a cycle.
  std::vector<int> seen(n, -1);
  int v = 0;
  while (indeg[v] == 0) ++v;
  for (int step = 0;; ++step) {
    seen[v] = step;
    int p = -1;
    for (int u : pred[v]) {
      if (indeg[u] > 0) {
        p = u;
        break;
      }
    }
    if (seen[p] >= 0) {
      throw CycleError("cycle through edge (" + std::to_string(p) + "," + std::to_string(v) + ")");
    }
    v = p;
  }
}

/// Links node 0 to every subtask node without a subtask predecessor.
/// Edges come back sorted; applying it twice changes nothing.
inline TaskGraph augment_virtual_node(TaskGraph g) {
  std::vector<bool> has_pred(g.num_nodes(), false);
  std::vector<bool> linked(g.num_nodes(), false);
  for (const auto& e : g.edges) {
    if (e.from == 0) {
      if (e.to >= 0 && e.to < g.num_nodes()) linked[e.to] = true;
    } else if (e.to >= 0 && e.to < g.num_nodes()) {
      has_pred[e.to] = true;
    }
  }
  for (int v = 1; v < g.num_nodes(); ++v) {
    if (!has_pred[v] && !linked[v]) g.edges.push_back({0, v});
  }
  std::sort(g.edges.begin(), g.edges.end());
  g.edges.erase(std::unique(g.edges.begin(), g.edges.end()), g.edges.end());
  return g;
}

enum class Category { kQuery, kChoose, kCompare, kVerify, kLogical };

inline constexpr std::array<Category, 5> kAllCategories = {
    Category::kQuery, Category::kChoose, Category::kCompare, Category::kVerify,
    Category::kLogical};

inline std::string_view category_name(Category c) {
  switch (c) {
    case Category::kQuery: return "Query";
    case Category::kChoose: return "Choose";
    case Category::kCompare: return "Compare";
    case Category::kVerify: return "Verify";
    case Category::kLogical: return "Logical";
  }
  return "?";
}

// Case-insensitive; GQA's structural types are lower case.
inline std::optional<Category> parse_category(std::string_view name) {
  std::string lower(name);
  std::transform(lower.begin(), lower.end(), lower.begin(),
                 [](unsigned char ch) { return static_cast<char>(std::tolower(ch)); });
  for (Category c : kAllCategories) {
    std::string cn(category_name(c));
    std::transform(cn.begin(), cn.end(), cn.begin(),
                   [](unsigned char ch) { return static_cast<char>(std::tolower(ch)); });
    if (cn == lower) return c;
  }
  return std::nullopt;
}

struct ExecutionRecord {
  std::string sample_id;
  std::size_t choice_index = 0;
  int status = 0;
  std::optional<double> exec_time;
};

struct Sample {
  std::string sample_id;
  Category category = Category::kQuery;
  TaskGraph graph;
  std::string feature_ref;
  std::string program;  // source text the graph was parsed from, if any
};

/// Samples plus an N x |C| outcome matrix with an observation mask.
/// Unobserved entries hold status 0 and must never be read as outcomes.
class Dataset {
 public:
  Dataset() = default;
  explicit Dataset(std::size_t num_choices) : num_choices_(num_choices) {}

  std::size_t size() const noexcept { return samples_.size(); }
  bool empty() const noexcept { return samples_.empty(); }
  std::size_t num_choices() const noexcept { return num_choices_; }

  const Sample& sample(std::size_t i) const { return samples_.at(i); }
  const std::vector<Sample>& samples() const noexcept { return samples_; }

  // Appends a sample with every entry unobserved; returns its row.
  std::size_t add_sample(Sample s) {
    samples_.push_back(std::move(s));
    outcomes_.resize(outcomes_.size() + num_choices_, 0);
    observed_.resize(observed_.size() + num_choices_, 0);
    times_.resize(times_.size() + num_choices_, std::numeric_limits<double>::quiet_NaN());
    return samples_.size() - 1;
  }

  void record(std::size_t i, std::size_t j, int status, std::optional<double> time = std::nullopt) {
    check(i, j);
    if (status != 0 && status != 1) throw FormatError("status must be 0 or 1");
    outcomes_[i * num_choices_ + j] = static_cast<std::uint8_t>(status);
    observed_[i * num_choices_ + j] = 1;
    times_[i * num_choices_ + j] = time ? *time : std::numeric_limits<double>::quiet_NaN();
  }

  void unobserve(std::size_t i, std::size_t j) {
    check(i, j);
    outcomes_[i * num_choices_ + j] = 0;
    observed_[i * num_choices_ + j] = 0;
    times_[i * num_choices_ + j] = std::numeric_limits<double>::quiet_NaN();
  }

  bool observed(std::size_t i, std::size_t j) const {
    check(i, j);
    return observed_[i * num_choices_ + j] != 0;
  }

  int status(std::size_t i, std::size_t j) const {
    check(i, j);
    if (!observed_[i * num_choices_ + j]) {
      throw UnobservedOutcomeError("outcome of sample '" + samples_[i].sample_id + "' choice " +
                                   std::to_string(j) + " is not observed");
    }
    return outcomes_[i * num_choices_ + j];
  }

  std::optional<double> exec_time(std::size_t i, std::size_t j) const {
    check(i, j);
    double t = times_[i * num_choices_ + j];
    if (!observed_[i * num_choices_ + j] || std::isnan(t)) return std::nullopt;
    return t;
  }

  std::size_t observed_count(std::size_t i) const {
    std::size_t n = 0;
    for (std::size_t j = 0; j < num_choices_; ++j) n += observed_[i * num_choices_ + j];
    return n;
  }

  std::size_t success_count(std::size_t i) const {
    std::size_t n = 0;
    for (std::size_t j = 0; j < num_choices_; ++j) {
      n += observed_[i * num_choices_ + j] & outcomes_[i * num_choices_ + j];
    }
    return n;
  }

  std::optional<std::size_t> find(std::string_view sample_id) const {
    for (std::size_t i = 0; i < samples_.size(); ++i) {
      if (samples_[i].sample_id == sample_id) return i;
    }
    return std::nullopt;
  }

  // Rows in the given order; outcomes, masks and times travel together.
  Dataset subset(const std::vector<std::size_t>& rows) const {
    Dataset out(num_choices_);
    for (std::size_t i : rows) {
      out.add_sample(samples_.at(i));
      std::size_t r = out.size() - 1;
      std::copy_n(outcomes_.begin() + i * num_choices_, num_choices_,
                  out.outcomes_.begin() + r * num_choices_);
      std::copy_n(observed_.begin() + i * num_choices_, num_choices_,
                  out.observed_.begin() + r * num_choices_);
      std::copy_n(times_.begin() + i * num_choices_, num_choices_,
                  out.times_.begin() + r * num_choices_);
    }
    return out;
  }

 private:
  void check(std::size_t i, std::size_t j) const {
    if (i >= samples_.size() || j >= num_choices_) {
      throw InvalidChoiceError("outcome index (" + std::to_string(i) + "," + std::to_string(j) +
                               ") out of range");
    }
  }

  std::size_t num_choices_ = 0;
  std::vector<Sample> samples_;
  std::vector<std::uint8_t> outcomes_;
  std::vector<std::uint8_t> observed_;
  std::vector<double> times_;
};

/// Mean observed status of one sample.
inline double executable_ratio(const Dataset& data, std::size_t i) {
  std::size_t obs = data.observed_count(i);
  if (obs == 0) {
    throw NoObservationError("sample '" + data.sample(i).sample_id + "' has no observed outcomes");
  }
  return static_cast<double>(data.success_count(i)) / static_cast<double>(obs);
}

/// Drops samples whose observed outcomes are all successes or all failures.
/// Samples with nothing observed carry no signal either and are dropped.
inline Dataset filter_degenerate(const Dataset& data) {
  std::vector<std::size_t> keep;
  for (std::size_t i = 0; i < data.size(); ++i) {
    std::size_t obs = data.observed_count(i);
    std::size_t ok = data.success_count(i);
    if (ok > 0 && ok < obs) keep.push_back(i);
  }
  return data.subset(keep);
}

}  // namespace m3
