#pragma once

// Input embeddings (precomputed, loaded from file), the learnable model
// embedding table, the two projections into the shared node space, and
// assembly of the per-choice node feature matrix.

#include <cmath>
#include <cstdint>
#include <fstream>
#include <random>
#include <sstream>
#include <string>
#include <unordered_map>
#include <vector>

#include <Eigen/Dense>
#include <json.hpp>

#include "m3/core_graph.hpp"
#include "m3/errors.hpp"

namespace m3 {

/// sample_id -> input embedding, all of one dimension. Keeps insertion order
/// so that writing a store back out is reproducible.
class FeatureStore {
 public:
  std::size_t size() const noexcept { return ids_.size(); }
  int dim() const noexcept { return dim_; }
  bool contains(const std::string& id) const { return index_.count(id) != 0; }
  const std::vector<std::string>& ids() const noexcept { return ids_; }

  void add(const std::string& id, Eigen::VectorXd v) {
    if (index_.count(id)) throw DuplicateIdError("duplicate feature sample_id '" + id + "'");
    if (v.size() == 0) throw FormatError("empty embedding for '" + id + "'");
    if (dim_ == 0) {
      dim_ = static_cast<int>(v.size());
    } else if (v.size() != dim_) {
      throw DimensionMismatchError("embedding for '" + id + "' has dimension " +
                                   std::to_string(v.size()) + ", expected " + std::to_string(dim_));
    }
    if (!v.allFinite()) throw FormatError("non-finite embedding entry for '" + id + "'");
    index_.emplace(id, vectors_.size());
    ids_.push_back(id);
    vectors_.push_back(std::move(v));
  }

  const Eigen::VectorXd& at(const std::string& id) const {
    auto it = index_.find(id);
    if (it == index_.end()) throw MissingFeatureError("no input embedding for '" + id + "'");
    return vectors_[it->second];
  }

 private:
  int dim_ = 0;
  std::vector<std::string> ids_;
  std::vector<Eigen::VectorXd> vectors_;
  std::unordered_map<std::string, std::size_t> index_;
};

/// Newline-delimited {"sample_id": str, "embedding": [reals]} records.
inline FeatureStore parse_features(std::istream& in) {
  FeatureStore store;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.find_first_not_of(" \t") == std::string::npos) continue;
    nlohmann::json rec;
    try {
      rec = nlohmann::json::parse(line);
    } catch (const nlohmann::json::exception& e) {
      throw FormatError("features line " + std::to_string(line_no) + ": " + e.what());
    }
    if (!rec.is_object() || !rec.contains("sample_id") || !rec["sample_id"].is_string() ||
        !rec.contains("embedding") || !rec["embedding"].is_array()) {
      throw FormatError("features line " + std::to_string(line_no) +
                        ": expected fields sample_id (string) and embedding (array)");
    }
    const auto& arr = rec["embedding"];
    Eigen::VectorXd v(static_cast<Eigen::Index>(arr.size()));
    for (std::size_t k = 0; k < arr.size(); ++k) {
      // NaN/Infinity literals are not JSON and fail the parse above; null is
      // what most writers emit for them.
      if (!arr[k].is_number()) {
        throw FormatError("features line " + std::to_string(line_no) + ": entry " +
                          std::to_string(k) + " is not a finite number");
      }
      v[static_cast<Eigen::Index>(k)] = arr[k].get<double>();
    }
    store.add(rec["sample_id"].get<std::string>(), std::move(v));
  }
  return store;
}

inline FeatureStore load_features(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open features file '" + path + "'");
  return parse_features(in);
}

inline void write_features(std::ostream& out, const FeatureStore& store) {
  for (const auto& id : store.ids()) {
    const auto& v = store.at(id);
    nlohmann::json rec;
    rec["sample_id"] = id;
    rec["embedding"] = std::vector<double>(v.data(), v.data() + v.size());
    out << rec.dump() << '\n';
  }
}

inline void save_features(const std::string& path, const FeatureStore& store) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write features file '" + path + "'");
  write_features(out, store);
}

struct FeatureDims {
  int input_dim = 0;   // d1, from the feature file
  int embed_dim = 32;  // d2
  int hidden_dim = 64;  // d
};

/// One learnable row per (type, model), indexed by ModelZoo::flat_index.
struct EmbeddingTable {
  Eigen::MatrixXd rows;
};

struct Projections {
  Eigen::MatrixXd input;  // W1: d1 x d
  Eigen::MatrixXd model;  // W2: d2 x d
};

template <class Rng>
Eigen::MatrixXd uniform_fan_in(Eigen::Index rows, Eigen::Index cols, double fan_in, Rng& rng) {
  const double bound = 1.0 / std::sqrt(fan_in);
  std::uniform_real_distribution<double> dist(-bound, bound);
  Eigen::MatrixXd m(rows, cols);
  for (Eigen::Index c = 0; c < cols; ++c) {
    for (Eigen::Index r = 0; r < rows; ++r) m(r, c) = dist(rng);
  }
  return m;
}

inline std::pair<EmbeddingTable, Projections> init_parameters(const FeatureDims& dims,
                                                              int num_models,
                                                              std::uint64_t seed) {
  if (dims.input_dim <= 0 || dims.embed_dim <= 0 || dims.hidden_dim <= 0 || num_models <= 0) {
    throw ShapeError("feature dimensions and model count must be positive");
  }
  std::mt19937_64 rng(seed);
  EmbeddingTable table{uniform_fan_in(num_models, dims.embed_dim, dims.embed_dim, rng)};
  Projections proj{uniform_fan_in(dims.input_dim, dims.hidden_dim, dims.input_dim, rng),
                   uniform_fan_in(dims.embed_dim, dims.hidden_dim, dims.embed_dim, rng)};
  return {std::move(table), std::move(proj)};
}

/// Row 0 is x W1; row k is the chosen model's embedding for node k times W2.
inline Eigen::MatrixXd assemble(const Sample& sample, const Choice& choice, const ModelZoo& zoo,
                                const EmbeddingTable& table, const Projections& proj,
                                const FeatureStore& store) {
  const auto& x = store.at(sample.feature_ref);
  if (x.size() != proj.input.rows()) {
    throw ShapeError("input embedding dimension does not match W1");
  }
  const auto& g = sample.graph;
  Eigen::MatrixXd h(g.num_nodes(), proj.input.cols());
  h.row(0) = x.transpose() * proj.input;
  for (int k = 1; k < g.num_nodes(); ++k) {
    int t = g.type_of(k);
    h.row(k) = table.rows.row(zoo.flat_index(t, choice.models.at(t))) * proj.model;
  }
  return h;
}

}  // namespace m3
