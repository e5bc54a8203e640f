#pragma once

// Trainable scorers. GraphScorer is the computation-graph learner on top of
// the node embeddings; NcfScorer is the edge-blind collaborative-filtering
// baseline. Both expose the same surface so that one trainer, selector and
// checkpoint format serve both:
//
//   static Model create(const ModelDims&, seed)
//   Model zeros_like() const
//   for_each_tensor(f)          f(name, double* data, rows, cols)
//   score(sample, choices, ctx) -> logits
//   accumulate(sample, choices, labels, loss, ctx, grad) -> loss value

#include <cstdint>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include <Eigen/Dense>

#include "m3/core_graph.hpp"
#include "m3/features.hpp"
#include "m3/learner.hpp"
#include "m3/objective.hpp"

namespace m3 {

struct ModelDims {
  int num_models = 0;
  int input_dim = 0;
  int embed_dim = 32;
  int hidden_dim = 64;
  int num_layers = 2;
};

struct ScoringContext {
  const ModelZoo* zoo = nullptr;
  const ChoiceSpace* space = nullptr;
  const FeatureStore* store = nullptr;
};

template <class Model>
std::vector<std::span<double>> tensor_spans(Model& m) {
  std::vector<std::span<double>> out;
  m.for_each_tensor([&](std::string_view, double* p, Eigen::Index r, Eigen::Index c) {
    out.emplace_back(p, static_cast<std::size_t>(r * c));
  });
  return out;
}

template <class Model>
void add_into(Model& dst, Model& src) {
  auto d = tensor_spans(dst);
  auto s = tensor_spans(src);
  for (std::size_t t = 0; t < d.size(); ++t) {
    for (std::size_t k = 0; k < d[t].size(); ++k) d[t][k] += s[t][k];
  }
}

template <class Model>
void scale_into(Model& m, double factor) {
  for (auto s : tensor_spans(m)) {
    for (auto& v : s) v *= factor;
  }
}

class GraphScorer {
 public:
  static constexpr std::string_view kKind = "m3";

  ModelDims dims;
  EmbeddingTable table;
  Projections proj;
  LearnerParams learner;

  static GraphScorer create(const ModelDims& dims, std::uint64_t seed) {
    GraphScorer m;
    m.dims = dims;
    std::tie(m.table, m.proj) = init_parameters(
        FeatureDims{dims.input_dim, dims.embed_dim, dims.hidden_dim}, dims.num_models, seed);
    m.learner = init_learner(dims.hidden_dim, dims.hidden_dim, dims.num_layers, seed ^ 0x9e3779b97f4a7c15ULL);
    return m;
  }

  GraphScorer zeros_like() const {
    GraphScorer g;
    g.dims = dims;
    g.table.rows = Eigen::MatrixXd::Zero(table.rows.rows(), table.rows.cols());
    g.proj.input = Eigen::MatrixXd::Zero(proj.input.rows(), proj.input.cols());
    g.proj.model = Eigen::MatrixXd::Zero(proj.model.rows(), proj.model.cols());
    g.learner = m3::zeros_like(learner);
    return g;
  }

  template <class F>
  void for_each_tensor(F&& f) {
    f("model_table", table.rows.data(), table.rows.rows(), table.rows.cols());
    f("input_projection", proj.input.data(), proj.input.rows(), proj.input.cols());
    f("model_projection", proj.model.data(), proj.model.rows(), proj.model.cols());
    for (std::size_t l = 0; l < learner.layers.size(); ++l) {
      auto& layer = learner.layers[l];
      const std::string p = "layer" + std::to_string(l);
      f(p + ".weight", layer.weight.data(), layer.weight.rows(), layer.weight.cols());
      f(p + ".attention", layer.attention.data(), layer.attention.size(), Eigen::Index{1});
    }
    f("head.weight", learner.head_weight.data(), learner.head_weight.size(), Eigen::Index{1});
    f("head.bias", &learner.head_bias, Eigen::Index{1}, Eigen::Index{1});
  }

  Eigen::MatrixXd node_features(const Sample& sample, const Choice& choice,
                                const ScoringContext& ctx) const {
    return assemble(sample, choice, *ctx.zoo, table, proj, *ctx.store);
  }

  std::vector<double> score(const Sample& sample, const std::vector<std::size_t>& choices,
                            const ScoringContext& ctx) const {
    Prepared prep = prepare(sample, ctx);
    std::vector<double> logits;
    logits.reserve(choices.size());
    Eigen::MatrixXd h(prep.topo.num_nodes(), dims.hidden_dim);
    for (std::size_t c : choices) {
      fill(h, prep, sample, ctx.space->at(c), ctx);
      logits.push_back(forward(h, prep.topo, learner).logit);
    }
    return logits;
  }

  double accumulate(const Sample& sample, const std::vector<std::size_t>& choices,
                    const std::vector<int>& labels, LossKind loss_kind, const ScoringContext& ctx,
                    GraphScorer& grad) const {
    Prepared prep = prepare(sample, ctx);
    std::vector<ForwardTape> tapes;
    tapes.reserve(choices.size());
    ChoiceBatch batch;
    batch.labels = labels;
    Eigen::MatrixXd h(prep.topo.num_nodes(), dims.hidden_dim);
    for (std::size_t c : choices) {
      fill(h, prep, sample, ctx.space->at(c), ctx);
      tapes.push_back(forward(h, prep.topo, learner));
      batch.logits.push_back(tapes.back().logit);
    }
    LossResult loss = compute_loss(loss_kind, batch);

    Eigen::RowVectorXd d_row0 = Eigen::RowVectorXd::Zero(dims.hidden_dim);
    Eigen::MatrixXd d_projected = Eigen::MatrixXd::Zero(table.rows.rows(), dims.hidden_dim);
    for (std::size_t k = 0; k < choices.size(); ++k) {
      if (loss.d_logits[k] == 0.0) continue;
      Eigen::MatrixXd d_h = backward(tapes[k], learner, loss.d_logits[k], grad.learner);
      d_row0 += d_h.row(0);
      const Choice& choice = ctx.space->at(choices[k]);
      for (int node = 1; node < prep.topo.num_nodes(); ++node) {
        int t = sample.graph.type_of(node);
        d_projected.row(ctx.zoo->flat_index(t, choice.models[t])) += d_h.row(node);
      }
    }
    grad.proj.input += prep.x * d_row0;
    grad.proj.model += table.rows.transpose() * d_projected;
    grad.table.rows += d_projected * proj.model.transpose();
    return loss.loss;
  }

 private:
  struct Prepared {
    GraphTopology topo;
    Eigen::VectorXd x;
    Eigen::RowVectorXd row0;
    Eigen::MatrixXd projected_table;
  };

  Prepared prepare(const Sample& sample, const ScoringContext& ctx) const {
    Prepared p;
    p.topo = GraphTopology::from_graph(sample.graph);
    p.x = ctx.store->at(sample.feature_ref);
    if (p.x.size() != proj.input.rows()) throw ShapeError("input embedding dimension does not match W1");
    p.row0 = p.x.transpose() * proj.input;
    p.projected_table = table.rows * proj.model;
    return p;
  }

  void fill(Eigen::MatrixXd& h, const Prepared& prep, const Sample& sample, const Choice& choice,
            const ScoringContext& ctx) const {
    h.row(0) = prep.row0;
    for (int node = 1; node < prep.topo.num_nodes(); ++node) {
      int t = sample.graph.type_of(node);
      h.row(node) = prep.projected_table.row(ctx.zoo->flat_index(t, choice.models[t]));
    }
  }
};

/// Two-layer perceptron over [x W1 | mean of the chosen models' projected
/// embeddings], one embedding per subtask type. Sees neither the graph's
/// nodes nor its edges.
class NcfScorer {
 public:
  static constexpr std::string_view kKind = "ncf";

  ModelDims dims;
  EmbeddingTable table;
  Projections proj;
  Eigen::MatrixXd hidden_weight;  // 2d x d
  Eigen::VectorXd hidden_bias;
  Eigen::VectorXd out_weight;
  double out_bias = 0.0;

  static NcfScorer create(const ModelDims& dims, std::uint64_t seed) {
    NcfScorer m;
    m.dims = dims;
    std::tie(m.table, m.proj) = init_parameters(
        FeatureDims{dims.input_dim, dims.embed_dim, dims.hidden_dim}, dims.num_models, seed);
    std::mt19937_64 rng(seed ^ 0x9e3779b97f4a7c15ULL);
    const int d = dims.hidden_dim;
    m.hidden_weight = uniform_fan_in(2 * d, d, 2 * d, rng);
    m.hidden_bias = Eigen::VectorXd::Zero(d);
    m.out_weight = uniform_fan_in(d, 1, d, rng).col(0);
    return m;
  }

  NcfScorer zeros_like() const {
    NcfScorer g;
    g.dims = dims;
    g.table.rows = Eigen::MatrixXd::Zero(table.rows.rows(), table.rows.cols());
    g.proj.input = Eigen::MatrixXd::Zero(proj.input.rows(), proj.input.cols());
    g.proj.model = Eigen::MatrixXd::Zero(proj.model.rows(), proj.model.cols());
    g.hidden_weight = Eigen::MatrixXd::Zero(hidden_weight.rows(), hidden_weight.cols());
    g.hidden_bias = Eigen::VectorXd::Zero(hidden_bias.size());
    g.out_weight = Eigen::VectorXd::Zero(out_weight.size());
    return g;
  }

  template <class F>
  void for_each_tensor(F&& f) {
    f("model_table", table.rows.data(), table.rows.rows(), table.rows.cols());
    f("input_projection", proj.input.data(), proj.input.rows(), proj.input.cols());
    f("model_projection", proj.model.data(), proj.model.rows(), proj.model.cols());
    f("mlp.hidden_weight", hidden_weight.data(), hidden_weight.rows(), hidden_weight.cols());
    f("mlp.hidden_bias", hidden_bias.data(), hidden_bias.size(), Eigen::Index{1});
    f("mlp.out_weight", out_weight.data(), out_weight.size(), Eigen::Index{1});
    f("mlp.out_bias", &out_bias, Eigen::Index{1}, Eigen::Index{1});
  }

  std::vector<double> score(const Sample& sample, const std::vector<std::size_t>& choices,
                            const ScoringContext& ctx) const {
    Eigen::VectorXd user = input_part(sample, ctx);
    std::vector<double> logits;
    logits.reserve(choices.size());
    for (std::size_t c : choices) logits.push_back(run(user, ctx.space->at(c), ctx).logit);
    return logits;
  }

  double accumulate(const Sample& sample, const std::vector<std::size_t>& choices,
                    const std::vector<int>& labels, LossKind loss_kind, const ScoringContext& ctx,
                    NcfScorer& grad) const {
    const Eigen::VectorXd& x = ctx.store->at(sample.feature_ref);
    Eigen::VectorXd user = input_part(sample, ctx);
    std::vector<Pass> passes;
    ChoiceBatch batch;
    batch.labels = labels;
    for (std::size_t c : choices) {
      passes.push_back(run(user, ctx.space->at(c), ctx));
      batch.logits.push_back(passes.back().logit);
    }
    LossResult loss = compute_loss(loss_kind, batch);
    const int d = dims.hidden_dim;
    const int k_types = ctx.zoo->num_types();
    Eigen::VectorXd d_user = Eigen::VectorXd::Zero(d);
    Eigen::MatrixXd d_projected = Eigen::MatrixXd::Zero(table.rows.rows(), d);
    for (std::size_t k = 0; k < choices.size(); ++k) {
      const double ds = loss.d_logits[k];
      if (ds == 0.0) continue;
      const Pass& p = passes[k];
      grad.out_weight += ds * p.hidden;
      grad.out_bias += ds;
      Eigen::VectorXd d_pre = (ds * out_weight).cwiseProduct(
          p.pre.unaryExpr([](double v) { return v > 0.0 ? 1.0 : 0.0; }));
      grad.hidden_bias += d_pre;
      grad.hidden_weight += p.input * d_pre.transpose();
      Eigen::VectorXd d_input = hidden_weight * d_pre;
      d_user += d_input.head(d);
      const Choice& choice = ctx.space->at(choices[k]);
      for (int t = 0; t < k_types; ++t) {
        d_projected.row(ctx.zoo->flat_index(t, choice.models[t])) +=
            d_input.tail(d).transpose() / k_types;
      }
    }
    grad.proj.input += x * d_user.transpose();
    grad.proj.model += table.rows.transpose() * d_projected;
    grad.table.rows += d_projected * proj.model.transpose();
    return loss.loss;
  }

 private:
  struct Pass {
    Eigen::VectorXd input;
    Eigen::VectorXd pre;
    Eigen::VectorXd hidden;
    double logit = 0.0;
  };

  Eigen::VectorXd input_part(const Sample& sample, const ScoringContext& ctx) const {
    const Eigen::VectorXd& x = ctx.store->at(sample.feature_ref);
    if (x.size() != proj.input.rows()) throw ShapeError("input embedding dimension does not match W1");
    return proj.input.transpose() * x;
  }

  Pass run(const Eigen::VectorXd& user, const Choice& choice, const ScoringContext& ctx) const {
    const int d = dims.hidden_dim;
    const int k_types = ctx.zoo->num_types();
    Eigen::RowVectorXd mean = Eigen::RowVectorXd::Zero(dims.embed_dim);
    for (int t = 0; t < k_types; ++t) mean += table.rows.row(ctx.zoo->flat_index(t, choice.models[t]));
    mean /= k_types;
    Pass p;
    p.input.resize(2 * d);
    p.input.head(d) = user;
    p.input.tail(d) = (mean * proj.model).transpose();
    p.pre = hidden_weight.transpose() * p.input + hidden_bias;
    p.hidden = p.pre.cwiseMax(0.0);
    p.logit = out_weight.dot(p.hidden) + out_bias;
    return p;
  }
};

}  // namespace m3
