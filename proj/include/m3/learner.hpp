#pragma once

// Graph-attention scorer over the node feature matrix of one (sample,
// choice) pair, with a hand-written reverse pass.
//
// Per layer, for node v with neighbourhood N(v) = {v} + {u : u->v}:
//   z_u    = h_u W
//   e_uv   = LeakyReLU((a_src . z_u + a_dst . z_v) / sqrt(d))
//   alpha  = softmax over u in N(v) of e_uv
//   h'_v   = ELU(sum_u alpha_uv z_u)
// followed by a mean readout over all nodes and a linear head producing a
// raw logit.

#include <cmath>
#include <random>
#include <vector>

#include <Eigen/Dense>

#include "m3/core_graph.hpp"
#include "m3/errors.hpp"
#include "m3/features.hpp"

namespace m3 {

struct AttentionLayer {
  Eigen::MatrixXd weight;     // d_in x d_out
  Eigen::VectorXd attention;  // 2 d_out: [source half | target half]
  double leaky_slope = 0.2;

  Eigen::Index in_dim() const { return weight.rows(); }
  Eigen::Index out_dim() const { return weight.cols(); }
};

struct LearnerParams {
  std::vector<AttentionLayer> layers;
  Eigen::VectorXd head_weight;
  double head_bias = 0.0;
};

inline LearnerParams init_learner(int in_dim, int hidden_dim, int num_layers, std::uint64_t seed) {
  if (in_dim <= 0 || hidden_dim <= 0 || num_layers <= 0) {
    throw ShapeError("learner dimensions must be positive");
  }
  std::mt19937_64 rng(seed);
  LearnerParams p;
  int din = in_dim;
  for (int l = 0; l < num_layers; ++l) {
    AttentionLayer layer;
    layer.weight = uniform_fan_in(din, hidden_dim, din, rng);
    layer.attention = uniform_fan_in(2 * hidden_dim, 1, hidden_dim, rng).col(0);
    p.layers.push_back(std::move(layer));
    din = hidden_dim;
  }
  p.head_weight = uniform_fan_in(hidden_dim, 1, hidden_dim, rng).col(0);
  p.head_bias = 0.0;
  return p;
}

/// Incoming neighbourhoods with self-loops; neighbours[v][0] == v.
struct GraphTopology {
  std::vector<std::vector<int>> neighbours;

  static GraphTopology from_edges(int num_nodes, const std::vector<Edge>& edges) {
    GraphTopology topo;
    topo.neighbours.resize(num_nodes);
    for (int v = 0; v < num_nodes; ++v) topo.neighbours[v].push_back(v);
    for (const auto& e : edges) {
      if (e.from < 0 || e.from >= num_nodes || e.to < 0 || e.to >= num_nodes) {
        throw DanglingEdgeError("edge references a node outside the feature matrix");
      }
      if (e.from != e.to) topo.neighbours[e.to].push_back(e.from);
    }
    return topo;
  }
  static GraphTopology from_graph(const TaskGraph& g) { return from_edges(g.num_nodes(), g.edges); }

  int num_nodes() const { return static_cast<int>(neighbours.size()); }
};

struct LayerTape {
  Eigen::MatrixXd input;
  Eigen::MatrixXd projected;  // Z
  std::vector<std::vector<double>> raw_scores;  // pre-LeakyReLU, aligned with neighbours
  std::vector<std::vector<double>> alpha;
  Eigen::MatrixXd aggregated;  // pre-ELU
  Eigen::MatrixXd output;
};

struct ForwardTape {
  const GraphTopology* topology = nullptr;
  std::vector<LayerTape> layers;
  Eigen::VectorXd readout;
  double logit = 0.0;
};

namespace detail {

inline double elu(double x) { return x > 0.0 ? x : std::expm1(x); }
inline double elu_grad(double x) { return x > 0.0 ? 1.0 : std::exp(x); }

// Attention scores are divided by sqrt(d). Without it Adam moves every
// attention coefficient by ~lr per step, the score jumps by ~lr*|z|_1 and
// the softmax saturates to one neighbour early in training.
inline double score_scale(Eigen::Index d) { return 1.0 / std::sqrt(static_cast<double>(d)); }

}  // namespace detail

inline ForwardTape forward(const Eigen::MatrixXd& h, const GraphTopology& topo,
                           const LearnerParams& params) {
  if (params.layers.empty()) throw ShapeError("learner has no layers");
  if (h.rows() != topo.num_nodes()) {
    throw ShapeError("feature matrix has " + std::to_string(h.rows()) + " rows for " +
                     std::to_string(topo.num_nodes()) + " nodes");
  }
  if (h.cols() != params.layers.front().in_dim()) {
    throw ShapeError("feature matrix width does not match the first layer");
  }
  const int n = topo.num_nodes();
  ForwardTape tape;
  tape.topology = &topo;
  tape.layers.resize(params.layers.size());
  const Eigen::MatrixXd* in = &h;
  for (std::size_t l = 0; l < params.layers.size(); ++l) {
    const auto& layer = params.layers[l];
    auto& t = tape.layers[l];
    if (in->cols() != layer.in_dim() || layer.attention.size() != 2 * layer.out_dim()) {
      throw ShapeError("layer " + std::to_string(l) + " shapes do not chain");
    }
    const Eigen::Index d = layer.out_dim();
    t.input = *in;
    t.projected = t.input * layer.weight;
    const double sc = detail::score_scale(d);
    Eigen::VectorXd src = sc * (t.projected * layer.attention.head(d));
    Eigen::VectorXd dst = sc * (t.projected * layer.attention.tail(d));
    t.raw_scores.resize(n);
    t.alpha.resize(n);
    t.aggregated = Eigen::MatrixXd::Zero(n, d);
    for (int v = 0; v < n; ++v) {
      const auto& nb = topo.neighbours[v];
      auto& raw = t.raw_scores[v];
      auto& alpha = t.alpha[v];
      raw.resize(nb.size());
      alpha.resize(nb.size());
      double mx = -std::numeric_limits<double>::infinity();
      for (std::size_t k = 0; k < nb.size(); ++k) {
        raw[k] = src[nb[k]] + dst[v];
        alpha[k] = raw[k] > 0.0 ? raw[k] : layer.leaky_slope * raw[k];
        mx = std::max(mx, alpha[k]);
      }
      double sum = 0.0;
      for (auto& a : alpha) sum += (a = std::exp(a - mx));
      for (std::size_t k = 0; k < nb.size(); ++k) {
        alpha[k] /= sum;
        t.aggregated.row(v) += alpha[k] * t.projected.row(nb[k]);
      }
    }
    t.output = t.aggregated.unaryExpr(&detail::elu);
    in = &t.output;
  }
  if (params.head_weight.size() != in->cols()) throw ShapeError("head width mismatch");
  tape.readout = in->colwise().mean().transpose();
  tape.logit = params.head_weight.dot(tape.readout) + params.head_bias;
  return tape;
}

inline LearnerParams zeros_like(const LearnerParams& p) {
  LearnerParams g;
  for (const auto& layer : p.layers) {
    AttentionLayer z;
    z.weight = Eigen::MatrixXd::Zero(layer.weight.rows(), layer.weight.cols());
    z.attention = Eigen::VectorXd::Zero(layer.attention.size());
    z.leaky_slope = layer.leaky_slope;
    g.layers.push_back(std::move(z));
  }
  g.head_weight = Eigen::VectorXd::Zero(p.head_weight.size());
  g.head_bias = 0.0;
  return g;
}

/// Accumulates d(logit)*d_logit into `grad` (shaped like params) and returns
/// the gradient with respect to the input feature matrix.
inline Eigen::MatrixXd backward(const ForwardTape& tape, const LearnerParams& params,
                                double d_logit, LearnerParams& grad) {
  const auto& topo = *tape.topology;
  const int n = topo.num_nodes();
  grad.head_weight += d_logit * tape.readout;
  grad.head_bias += d_logit;
  Eigen::MatrixXd d_out =
      Eigen::MatrixXd::Ones(n, 1) * (d_logit / n * params.head_weight).transpose();

  for (std::size_t l = params.layers.size(); l-- > 0;) {
    const auto& layer = params.layers[l];
    const auto& t = tape.layers[l];
    auto& g = grad.layers[l];
    const Eigen::Index d = layer.out_dim();
    Eigen::MatrixXd d_agg = d_out.cwiseProduct(t.aggregated.unaryExpr(&detail::elu_grad));
    Eigen::MatrixXd d_z = Eigen::MatrixXd::Zero(n, d);
    Eigen::VectorXd d_src = Eigen::VectorXd::Zero(n);
    Eigen::VectorXd d_dst = Eigen::VectorXd::Zero(n);
    std::vector<double> d_alpha;
    for (int v = 0; v < n; ++v) {
      const auto& nb = topo.neighbours[v];
      const auto& alpha = t.alpha[v];
      d_alpha.assign(nb.size(), 0.0);
      double weighted = 0.0;
      for (std::size_t k = 0; k < nb.size(); ++k) {
        d_z.row(nb[k]) += alpha[k] * d_agg.row(v);
        d_alpha[k] = d_agg.row(v).dot(t.projected.row(nb[k]));
        weighted += alpha[k] * d_alpha[k];
      }
      for (std::size_t k = 0; k < nb.size(); ++k) {
        double d_score = alpha[k] * (d_alpha[k] - weighted);
        double d_raw = d_score * (t.raw_scores[v][k] > 0.0 ? 1.0 : layer.leaky_slope);
        d_src[nb[k]] += d_raw;
        d_dst[v] += d_raw;
      }
    }
    d_src *= detail::score_scale(d);
    d_dst *= detail::score_scale(d);
    g.attention.head(d) += t.projected.transpose() * d_src;
    g.attention.tail(d) += t.projected.transpose() * d_dst;
    d_z += d_src * layer.attention.head(d).transpose();
    d_z += d_dst * layer.attention.tail(d).transpose();
    g.weight += t.input.transpose() * d_z;
    d_out = d_z * layer.weight.transpose();
  }
  return d_out;
}

inline double score_sigmoid(double logit) {
  if (logit >= 0.0) return 1.0 / (1.0 + std::exp(-logit));
  double e = std::exp(logit);
  return e / (1.0 + e);
}

}  // namespace m3
