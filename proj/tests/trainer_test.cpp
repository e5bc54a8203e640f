#include <gtest/gtest.h>

#include <cmath>
#include <set>
#include <sstream>

#include "m3/selector.hpp"
#include "m3/trainer.hpp"
#include "test_support.hpp"

namespace {

using namespace m3;
using m3::testing::small_benchmark;

Dataset plain_dataset(std::size_t n, std::size_t width) {
  Dataset d(width);
  for (std::size_t i = 0; i < n; ++i) {
    Sample s;
    s.sample_id = "s" + std::to_string(i);
    d.add_sample(s);
    for (std::size_t j = 0; j < width; ++j) d.record(i, j, static_cast<int>((i + j) % 2));
  }
  return d;
}

std::vector<double> flat(const auto& model) {
  std::vector<double> out;
  auto copy = model;
  for (auto s : tensor_spans(copy)) out.insert(out.end(), s.begin(), s.end());
  return out;
}

TEST(Split, TenSamples) {
  auto sizes = split_sizes(10, {});
  EXPECT_EQ(sizes, (std::array<std::size_t, 3>{6, 2, 2}));
  auto [a, b, c] = split(plain_dataset(10, 2), {});
  EXPECT_EQ(a.size(), 6u);
  EXPECT_EQ(b.size(), 2u);
  EXPECT_EQ(c.size(), 2u);
}

TEST(Split, FullReleaseSizes) {
  EXPECT_EQ(split_sizes(8426, {}), (std::array<std::size_t, 3>{5056, 1685, 1685}));
}

TEST(Split, DisjointCoverAndSeeded) {
  auto data = plain_dataset(97, 3);
  auto [a, b, c] = split(data, {0.6, 0.2, 0.2, 5});
  auto [a2, b2, c2] = split(data, {0.6, 0.2, 0.2, 5});
  auto [a3, b3, c3] = split(data, {0.6, 0.2, 0.2, 6});
  std::multiset<std::string> ids;
  for (const Dataset* d : {&a, &b, &c}) {
    for (const auto& s : d->samples()) ids.insert(s.sample_id);
  }
  EXPECT_EQ(ids.size(), 97u);
  EXPECT_EQ(std::set<std::string>(ids.begin(), ids.end()).size(), 97u);
  auto names = [](const Dataset& d) {
    std::vector<std::string> v;
    for (const auto& s : d.samples()) v.push_back(s.sample_id);
    return v;
  };
  EXPECT_EQ(names(a), names(a2));
  EXPECT_EQ(names(c), names(c2));
  EXPECT_NE(names(a), names(a3));
  // outcomes travel with their sample
  for (std::size_t i = 0; i < c.size(); ++i) {
    auto row = *data.find(c.sample(i).sample_id);
    for (std::size_t j = 0; j < 3; ++j) EXPECT_EQ(c.status(i, j), data.status(row, j));
  }
}

TEST(Split, RejectsBadInput) {
  EXPECT_THROW(split(Dataset(2), {}), NoDataError);
  EXPECT_THROW(split_sizes(10, {0.5, 0.2, 0.2, 0}), SpecError);
}

TEST(Missing, ChoicesModeMasksTheRatio) {
  auto data = plain_dataset(50, 12);
  auto out = apply_missing(data, MissingMode::kChoices, 0.2, 1);
  std::size_t observed = 0;
  for (std::size_t i = 0; i < out.size(); ++i) observed += out.observed_count(i);
  EXPECT_EQ(observed, 600u - 120u);
  EXPECT_EQ(out.size(), 50u);
  // surviving entries keep their values
  for (std::size_t i = 0; i < out.size(); ++i) {
    for (std::size_t j = 0; j < 12; ++j) {
      if (out.observed(i, j)) EXPECT_EQ(out.status(i, j), data.status(i, j));
    }
  }
}

TEST(Missing, ZeroRatioIsIdentity) {
  auto data = plain_dataset(20, 4);
  for (auto mode : {MissingMode::kChoices, MissingMode::kSamples}) {
    auto out = apply_missing(data, mode, 0.0, 3);
    ASSERT_EQ(out.size(), data.size());
    for (std::size_t i = 0; i < data.size(); ++i) {
      EXPECT_EQ(out.sample(i).sample_id, data.sample(i).sample_id);
      for (std::size_t j = 0; j < 4; ++j) EXPECT_EQ(out.status(i, j), data.status(i, j));
    }
  }
}

TEST(Missing, SamplesModeKeepsTwentyOfHundred) {
  auto out = apply_missing(plain_dataset(100, 2), MissingMode::kSamples, 0.8, 9);
  EXPECT_EQ(out.size(), 20u);
  for (std::size_t i = 0; i < out.size(); ++i) EXPECT_EQ(out.observed_count(i), 2u);
}

TEST(Missing, DeterministicAndValidated) {
  auto data = plain_dataset(30, 5);
  auto a = apply_missing(data, MissingMode::kChoices, 0.5, 4);
  auto b = apply_missing(data, MissingMode::kChoices, 0.5, 4);
  for (std::size_t i = 0; i < 30; ++i) {
    for (std::size_t j = 0; j < 5; ++j) EXPECT_EQ(a.observed(i, j), b.observed(i, j));
  }
  EXPECT_THROW(apply_missing(data, MissingMode::kChoices, 1.0, 0), SpecError);
  EXPECT_THROW(apply_missing(data, MissingMode::kChoices, -0.1, 0), SpecError);
  EXPECT_THROW(parse_missing_mode("rows"), SpecError);
}

TEST(Optimizer, AdamFirstStep) {
  double p = 0.0, g = 1.0;
  Optimizer opt(OptimizerKind::kAdam, 0.0);
  opt.step({std::span<double>(&p, 1)}, {std::span<double>(&g, 1)}, 0.1);
  EXPECT_NEAR(p, -0.1, 1e-8);
}

TEST(Optimizer, SgdWithDecay) {
  double p = 2.0, g = 0.5;
  Optimizer opt(OptimizerKind::kSgd, 0.1);
  opt.step({std::span<double>(&p, 1)}, {std::span<double>(&g, 1)}, 0.1);
  EXPECT_DOUBLE_EQ(p, 2.0 - 0.1 * (0.5 + 0.1 * 2.0));
}

TEST(Optimizer, AdamWDecouplesDecay) {
  double p = 1.0, g = 0.0;
  Optimizer opt(OptimizerKind::kAdamW, 0.5);
  opt.step({std::span<double>(&p, 1)}, {std::span<double>(&g, 1)}, 0.1);
  EXPECT_DOUBLE_EQ(p, 1.0 - 0.1 * 0.5);
}

TEST(StepLr, Examples) {
  EXPECT_NEAR(step_lr(1e-3, 250, 100, 0.7), 4.9e-4, 1e-15);
  EXPECT_EQ(step_lr(1e-3, 99, 100, 0.7), 1e-3);
  EXPECT_NEAR(step_lr(1e-3, 100, 100, 0.7), 7e-4, 1e-15);
}

TEST(TrainConfig, JsonRoundTripAndValidation) {
  TrainConfig c;
  c.hidden_d = 16;
  c.loss = LossKind::kBce;
  c.optimizer = OptimizerKind::kSgd;
  auto back = train_config_from_json(to_json(c));
  EXPECT_EQ(to_json(back), to_json(c));
  EXPECT_THROW(train_config_from_json({{"hiden_d", 3}}), SpecError);
  EXPECT_THROW(train_config_from_json({{"scheduler_gamma", 0.0}}), SpecError);
  EXPECT_THROW(train_config_from_json({{"lr", -1.0}}), SpecError);
  EXPECT_THROW(train_config_from_json({{"optimizer", "rmsprop"}}), SpecError);
}

struct TrainFixture : ::testing::Test {
  BenchmarkData bench = small_benchmark(60);
  ChoiceSpace space{bench.zoo};
  ScoringContext ctx{&bench.zoo, &space, &bench.store};
  Dataset train_set, val_set, test_set;
  TrainConfig config;
  void SetUp() override {
    std::tie(train_set, val_set, test_set) = split(bench.data, {});
    config.hidden_d = 8;
    config.embed_d = 8;
    config.max_epochs = 6;
    config.batch_size = 8;
    config.lr = 0.01;
  }
};

TEST_F(TrainFixture, ZeroEpochsReturnsInitialization) {
  config.max_epochs = 0;
  auto r = train<GraphScorer>(train_set, val_set, config, ctx);
  EXPECT_TRUE(r.history.empty());
  EXPECT_EQ(r.best.epoch, 0);
  auto init = GraphScorer::create(dims_for<GraphScorer>(config, ctx), config.seed);
  EXPECT_EQ(flat(r.best.model), flat(init));
}

TEST_F(TrainFixture, HistoriesAreDeterministicAcrossRunsAndJobCounts) {
  auto a = train<GraphScorer>(train_set, val_set, config, ctx);
  auto b = train<GraphScorer>(train_set, val_set, config, ctx);
  config.jobs = 3;
  auto c = train<GraphScorer>(train_set, val_set, config, ctx);
  ASSERT_EQ(a.history.size(), b.history.size());
  ASSERT_EQ(a.history.size(), c.history.size());
  for (std::size_t e = 0; e < a.history.size(); ++e) {
    EXPECT_EQ(a.history[e].train_loss, b.history[e].train_loss);
    EXPECT_EQ(a.history[e].train_loss, c.history[e].train_loss);
    EXPECT_EQ(a.history[e].val_ser, c.history[e].val_ser);
  }
  EXPECT_EQ(flat(a.best.model), flat(c.best.model));
}

TEST_F(TrainFixture, LearningRateFollowsSchedule) {
  config.scheduler_step = 2;
  config.scheduler_gamma = 0.5;
  config.patience = 100;
  auto r = train<NcfScorer>(train_set, val_set, config, ctx);
  ASSERT_EQ(r.history.size(), 6u);
  for (const auto& h : r.history) EXPECT_DOUBLE_EQ(h.lr, 0.01 * std::pow(0.5, (h.epoch - 1) / 2));
}

TEST_F(TrainFixture, EarlyStoppingHonoursPatience) {
  config.max_epochs = 200;
  config.patience = 3;
  config.lr = 1e-9;  // nothing improves
  auto r = train<GraphScorer>(train_set, val_set, config, ctx);
  EXPECT_LE(r.history.size(), 3u + static_cast<std::size_t>(r.best.epoch));
  EXPECT_LT(r.history.size(), 200u);
}

TEST_F(TrainFixture, MaskedRowsLeaveParametersBitIdentical) {
  // extra samples whose every entry is unobserved
  Dataset padded = train_set;
  for (std::size_t i = 0; i < 5; ++i) {
    std::size_t row = padded.add_sample(val_set.sample(i));
    (void)row;
  }
  auto a = train<GraphScorer>(train_set, val_set, config, ctx);
  auto b = train<GraphScorer>(padded, val_set, config, ctx);
  EXPECT_EQ(flat(a.best.model), flat(b.best.model));
  for (std::size_t e = 0; e < a.history.size(); ++e) EXPECT_EQ(a.history[e].train_loss, b.history[e].train_loss);
}

TEST_F(TrainFixture, MaskedEntriesGetNoGradient) {
  // hiding one entry must equal dropping it from the scored list
  auto model = GraphScorer::create(dims_for<GraphScorer>(config, ctx), 1);
  const auto& s = train_set.sample(0);
  std::vector<std::size_t> all, some;
  std::vector<int> labels_all, labels_some;
  for (std::size_t j = 0; j < space.size(); ++j) {
    all.push_back(j);
    labels_all.push_back(train_set.status(0, j));
    if (j != 3) {
      some.push_back(j);
      labels_some.push_back(train_set.status(0, j));
    }
  }
  Dataset masked = train_set.subset({0});
  masked.unobserve(0, 3);
  auto g_masked = model.zeros_like();
  auto targets = detail::observed_targets(masked);
  ASSERT_EQ(targets[0].choices, some);
  model.accumulate(s, targets[0].choices, targets[0].labels, LossKind::kCce, ctx, g_masked);
  auto g_some = model.zeros_like();
  model.accumulate(s, some, labels_some, LossKind::kCce, ctx, g_some);
  EXPECT_EQ(flat(g_masked), flat(g_some));
}

TEST_F(TrainFixture, CheckpointRoundTripIsBitExact) {
  auto r = train<GraphScorer>(train_set, val_set, config, ctx);
  m3::testing::TempDir dir;
  save_checkpoint(dir.file("ck.json"), r.best);
  auto back = load_checkpoint<GraphScorer>(dir.file("ck.json"));
  EXPECT_EQ(flat(back.model), flat(r.best.model));
  EXPECT_EQ(back.epoch, r.best.epoch);
  EXPECT_EQ(back.val_ser, r.best.val_ser);
  EXPECT_EQ(to_json(back.config), to_json(r.best.config));
  for (std::size_t i = 0; i < test_set.size(); ++i) {
    EXPECT_EQ(score_all(test_set.sample(i), back.model, ctx), score_all(test_set.sample(i), r.best.model, ctx));
  }
  EXPECT_EQ(checkpoint_kind(dir.file("ck.json")), "m3");
  EXPECT_THROW(load_checkpoint<NcfScorer>(dir.file("ck.json")), FormatError);
}

TEST_F(TrainFixture, CheckpointVersionAndTruncation) {
  auto ck = Checkpoint<NcfScorer>{NcfScorer::create(dims_for<NcfScorer>(config, ctx), 2), config, 0, 0.5};
  std::stringstream buf;
  write_checkpoint(buf, ck);
  const std::string text = buf.str();

  auto j = nlohmann::json::parse(text);
  j["version"] = kCheckpointVersion + 1;
  std::stringstream wrong(j.dump());
  EXPECT_THROW(read_checkpoint<NcfScorer>(wrong), VersionError);

  std::stringstream cut(text.substr(0, text.size() / 2));
  EXPECT_THROW(read_checkpoint<NcfScorer>(cut), FormatError);

  auto k = nlohmann::json::parse(text);
  k["tensors"].erase(k["tensors"].size() - 1);
  std::stringstream missing(k.dump());
  EXPECT_THROW(read_checkpoint<NcfScorer>(missing), FormatError);

  EXPECT_THROW(load_checkpoint<NcfScorer>("/nonexistent/ck.json"), IoError);
}

TEST_F(TrainFixture, NonFiniteLossAborts) {
  FeatureStore huge;
  for (const auto& id : bench.store.ids()) {
    huge.add(id, Eigen::VectorXd::Constant(bench.store.dim(), 1e308));
  }
  ScoringContext bad{&bench.zoo, &space, &huge};
  EXPECT_THROW(train<GraphScorer>(train_set, val_set, config, bad), NonFiniteLossError);
}

TEST_F(TrainFixture, MissingFeatureIsReportedBeforeTraining) {
  FeatureStore empty;
  empty.add("other", Eigen::VectorXd::Zero(bench.store.dim()));
  ScoringContext bad{&bench.zoo, &space, &empty};
  EXPECT_THROW(train<GraphScorer>(train_set, val_set, config, bad), MissingFeatureError);
}

template <class Model>
double overfit_five(const BenchmarkData& bench, const ScoringContext& ctx) {
  Dataset five = bench.data.subset({0, 1, 2, 3, 4});
  TrainConfig c;
  c.hidden_d = 32;
  c.embed_d = 16;
  c.lr = 0.01;
  c.weight_decay = 0.0;
  c.optimizer = OptimizerKind::kAdam;
  c.batch_size = 5;
  c.scheduler_gamma = 1.0;
  c.max_epochs = 2000;
  c.patience = 2000;
  double best = 1e300;
  train<Model>(five, five, c, ctx, [&](const EpochStats& e) { best = std::min(best, e.train_loss); });
  return best;
}

TEST_F(TrainFixture, GraphScorerOverfitsFiveSamples) {
  EXPECT_LT(overfit_five<GraphScorer>(bench, ctx), 0.05);
}

TEST_F(TrainFixture, NcfOverfitsFiveSamples) { EXPECT_LT(overfit_five<NcfScorer>(bench, ctx), 0.05); }

TEST(HistoryCsv, Format) {
  std::ostringstream out;
  write_history_csv(out, {{1, 0.5, 0.25, 0.75}});
  EXPECT_EQ(out.str(), "epoch,lr,train_loss,val_ser\n1,0.5,0.25,0.75\n");
}

}  // namespace
