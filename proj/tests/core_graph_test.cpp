#include <gtest/gtest.h>

#include <random>
#include <set>

#include "m3/benchmark.hpp"
#include "m3/core_graph.hpp"
#include "test_support.hpp"

namespace {

using namespace m3;
using m3::testing::make_zoo;

TaskGraph graph_of(int subtasks, std::vector<Edge> edges) {
  TaskGraph g;
  g.node_types.assign(subtasks, 0);
  g.edges = std::move(edges);
  return g;
}

TEST(ChoiceSpace, MsGqaZooHasSeventyChoices) {
  auto zoo = make_msgqa_zoo();
  EXPECT_EQ(zoo.num_models(0), 10);
  EXPECT_EQ(zoo.num_models(1), 7);
  EXPECT_EQ(enumerate_choices(zoo).size(), 70u);
}

TEST(ChoiceSpace, TwoByThree) {
  auto space = enumerate_choices(make_zoo({{"A", 2}, {"B", 3}}));
  ASSERT_EQ(space.size(), 6u);
  EXPECT_EQ(space.at(0).models, (std::vector<int>{0, 0}));
  EXPECT_EQ(space.at(1).models, (std::vector<int>{0, 1}));
  EXPECT_EQ(space.at(3).models, (std::vector<int>{1, 0}));
  EXPECT_EQ(space.at(5).models, (std::vector<int>{1, 2}));
}

TEST(ChoiceSpace, SingleDeterministicType) {
  auto space = enumerate_choices(make_zoo({{"EVAL", 1}}));
  ASSERT_EQ(space.size(), 1u);
  EXPECT_EQ(space.at(0).models, std::vector<int>{0});
}

TEST(ChoiceSpace, RandomZoosSizeIsProductAndOrderIsLexicographic) {
  std::mt19937_64 rng(11);
  std::uniform_int_distribution<int> k_dist(1, 4), n_dist(1, 6);
  for (int trial = 0; trial < 200; ++trial) {
    std::vector<std::pair<std::string, int>> spec;
    std::size_t product = 1;
    const int k = k_dist(rng);
    for (int t = 0; t < k; ++t) {
      int n = n_dist(rng);
      spec.emplace_back("T" + std::to_string(t), n);
      product *= static_cast<std::size_t>(n);
    }
    auto space = enumerate_choices(make_zoo(spec));
    ASSERT_EQ(space.size(), product);
    std::set<std::vector<int>> seen;
    for (std::size_t i = 0; i < space.size(); ++i) {
      const auto& c = space.at(i);
      ASSERT_TRUE(space.is_valid(c));
      ASSERT_EQ(space.index_of(c), i);
      seen.insert(c.models);
      if (i > 0) ASSERT_LT(space.at(i - 1).models, c.models);
    }
    ASSERT_EQ(seen.size(), product);
  }
}

TEST(ChoiceSpace, EnumerationIsDeterministic) {
  auto zoo = make_msgqa_zoo();
  EXPECT_EQ(enumerate_choices(zoo).choices(), enumerate_choices(zoo).choices());
}

TEST(ChoiceSpace, IndexOfRejectsForeignChoice) {
  auto space = enumerate_choices(make_zoo({{"A", 2}, {"B", 3}}));
  EXPECT_THROW(space.index_of(Choice{{2, 0}}), InvalidChoiceError);
  EXPECT_THROW(space.index_of(Choice{{0}}), InvalidChoiceError);
}

TEST(ModelZoo, RejectsDuplicateNamesAndEmptyTypes) {
  EXPECT_THROW(make_zoo({{"A", 2}, {"A", 1}}), SpecError);
  EXPECT_THROW(make_zoo({{"A", 0}}), SpecError);
  EXPECT_THROW(ModelZoo({}, {}), SpecError);
}

TEST(ModelZoo, RejectsNegativeTime) {
  std::vector<SubtaskType> types{{0, "A", SubtaskKind::kModelBacked}};
  std::vector<std::vector<ModelInfo>> models{{{0, 0, "a", 0, 0, -1.0}}};
  EXPECT_THROW(ModelZoo(types, models), SpecError);
}

TEST(TopoSort, Chain) {
  EXPECT_EQ(validate_and_topo_sort(graph_of(2, {{0, 1}, {1, 2}})), (std::vector<int>{0, 1, 2}));
}

TEST(TopoSort, TwoCycle) {
  try {
    validate_and_topo_sort(graph_of(2, {{1, 2}, {2, 1}}));
    FAIL() << "expected CycleError";
  } catch (const CycleError& e) {
    std::string msg = e.what();
    EXPECT_TRUE(msg.find("(1,2)") != std::string::npos || msg.find("(2,1)") != std::string::npos) << msg;
  }
}

TEST(TopoSort, DiamondBreaksTiesByIndex) {
  EXPECT_EQ(validate_and_topo_sort(graph_of(3, {{0, 1}, {0, 2}, {1, 3}, {2, 3}})),
            (std::vector<int>{0, 1, 2, 3}));
}

TEST(TopoSort, LongerCycleNamesAnEdgeOnIt) {
  try {
    validate_and_topo_sort(graph_of(4, {{0, 1}, {1, 2}, {2, 3}, {3, 1}, {0, 4}}));
    FAIL() << "expected CycleError";
  } catch (const CycleError& e) {
    std::string msg = e.what();
    bool names_cycle_edge = msg.find("(1,2)") != std::string::npos || msg.find("(2,3)") != std::string::npos ||
                            msg.find("(3,1)") != std::string::npos;
    EXPECT_TRUE(names_cycle_edge) << msg;
  }
}

TEST(TopoSort, DanglingEdges) {
  EXPECT_THROW(validate_and_topo_sort(graph_of(2, {{0, 3}})), DanglingEdgeError);
  EXPECT_THROW(validate_and_topo_sort(graph_of(2, {{-1, 1}})), DanglingEdgeError);
  EXPECT_THROW(validate_and_topo_sort(graph_of(2, {{1, 0}})), DanglingEdgeError);
}

TEST(TopoSort, RandomDagsReplayRespectsEveryEdge) {
  std::mt19937_64 rng(5);
  for (int trial = 0; trial < 300; ++trial) {
    const int n = 1 + static_cast<int>(rng() % 8);
    // random labelling of a random DAG so the order is not just 0..n
    std::vector<int> label(n);
    std::iota(label.begin(), label.end(), 1);
    std::shuffle(label.begin(), label.end(), rng);
    std::vector<Edge> edges;
    for (int a = 0; a < n; ++a) {
      for (int b = a + 1; b < n; ++b) {
        if (rng() % 3 == 0) edges.push_back({label[a], label[b]});
      }
    }
    auto g = augment_virtual_node(graph_of(n, edges));
    auto order = validate_and_topo_sort(g);
    ASSERT_EQ(order.size(), static_cast<std::size_t>(n + 1));
    EXPECT_EQ(order.front(), 0);
    std::vector<int> pos(n + 1);
    for (int k = 0; k <= n; ++k) pos[order[k]] = k;
    for (const auto& e : g.edges) EXPECT_LT(pos[e.from], pos[e.to]);
  }
}

TEST(Augment, RootsGainVirtualEdges) {
  auto g = augment_virtual_node(graph_of(3, {{1, 2}, {3, 2}}));
  EXPECT_EQ(g.edges, (std::vector<Edge>{{0, 1}, {0, 3}, {1, 2}, {3, 2}}));
}

TEST(Augment, Idempotent) {
  auto once = augment_virtual_node(graph_of(3, {{1, 2}, {3, 2}}));
  auto twice = augment_virtual_node(once);
  EXPECT_EQ(once.edges, twice.edges);
}

TEST(Augment, SingleNode) {
  EXPECT_EQ(augment_virtual_node(graph_of(1, {})).edges, (std::vector<Edge>{{0, 1}}));
}

TEST(Augment, RandomGraphsIdempotentAndNodeZeroHasNoInEdges) {
  std::mt19937_64 rng(9);
  for (int trial = 0; trial < 200; ++trial) {
    const int n = 1 + static_cast<int>(rng() % 7);
    std::vector<Edge> edges;
    for (int a = 1; a <= n; ++a) {
      for (int b = a + 1; b <= n; ++b) {
        if (rng() % 2) edges.push_back({a, b});
      }
    }
    auto g = augment_virtual_node(graph_of(n, edges));
    EXPECT_EQ(augment_virtual_node(g).edges, g.edges);
    std::vector<bool> has_pred(n + 1, false);
    for (const auto& e : edges) has_pred[e.to] = true;
    for (int v = 1; v <= n; ++v) {
      bool linked = std::find(g.edges.begin(), g.edges.end(), Edge{0, v}) != g.edges.end();
      EXPECT_EQ(linked, !has_pred[v]);
    }
    for (const auto& e : g.edges) EXPECT_NE(e.to, 0);
  }
}

Dataset rows_dataset(const std::vector<std::vector<int>>& statuses, std::size_t width) {
  Dataset d(width);
  for (std::size_t i = 0; i < statuses.size(); ++i) {
    Sample s;
    s.sample_id = "s" + std::to_string(i);
    d.add_sample(s);
    for (std::size_t j = 0; j < statuses[i].size(); ++j) {
      if (statuses[i][j] >= 0) d.record(i, j, statuses[i][j]);
    }
  }
  return d;
}

TEST(ExecutableRatio, Examples) {
  EXPECT_DOUBLE_EQ(executable_ratio(rows_dataset({{1, 1, 0, 0}}, 4), 0), 0.5);
  EXPECT_DOUBLE_EQ(executable_ratio(rows_dataset({{1, 1, 1}}, 3), 0), 1.0);
  // -1 marks an unobserved entry
  EXPECT_DOUBLE_EQ(executable_ratio(rows_dataset({{-1, 1, -1, 0}}, 4), 0), 0.5);
}

TEST(ExecutableRatio, NothingObserved) {
  EXPECT_THROW(executable_ratio(rows_dataset({{-1, -1}}, 2), 0), NoObservationError);
}

TEST(Dataset, UnobservedEntriesAreNotReadable) {
  auto d = rows_dataset({{-1, 1}}, 2);
  EXPECT_FALSE(d.observed(0, 0));
  EXPECT_THROW(d.status(0, 0), UnobservedOutcomeError);
  EXPECT_EQ(d.status(0, 1), 1);
  EXPECT_THROW(d.record(0, 2, 1), InvalidChoiceError);
  EXPECT_THROW(d.record(0, 0, 2), FormatError);
}

TEST(FilterDegenerate, AllSuccessRemoved) {
  auto d = rows_dataset({std::vector<int>(70, 1)}, 70);
  EXPECT_EQ(filter_degenerate(d).size(), 0u);
}

TEST(FilterDegenerate, MixedRetained) {
  std::vector<int> row(70, 0);
  row[0] = 1;
  auto d = rows_dataset({row, std::vector<int>(70, 0)}, 70);
  auto f = filter_degenerate(d);
  ASSERT_EQ(f.size(), 1u);
  EXPECT_EQ(f.sample(0).sample_id, "s0");
}

TEST(FilterDegenerate, Empty) { EXPECT_EQ(filter_degenerate(Dataset(5)).size(), 0u); }

TEST(FilterDegenerate, NeverDropsMixedRows) {
  std::mt19937_64 rng(3);
  for (int trial = 0; trial < 50; ++trial) {
    std::vector<std::vector<int>> rows;
    for (int i = 0; i < 20; ++i) {
      std::vector<int> r(6);
      for (auto& v : r) v = static_cast<int>(rng() % 3) - 1;  // -1 unobserved
      rows.push_back(r);
    }
    auto d = rows_dataset(rows, 6);
    auto f = filter_degenerate(d);
    std::size_t mixed = 0;
    for (std::size_t i = 0; i < d.size(); ++i) {
      std::size_t ok = d.success_count(i), obs = d.observed_count(i);
      if (ok > 0 && ok < obs) {
        ++mixed;
        EXPECT_TRUE(f.find(d.sample(i).sample_id).has_value());
      }
    }
    EXPECT_EQ(f.size(), mixed);
  }
}

TEST(Category, ParseIsCaseInsensitive) {
  EXPECT_EQ(parse_category("verify"), Category::kVerify);
  EXPECT_EQ(parse_category("LOGICAL"), Category::kLogical);
  EXPECT_FALSE(parse_category("other").has_value());
}

}  // namespace
