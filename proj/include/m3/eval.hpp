#pragma once

// Selection success rate, bucketed breakdowns, missing-data and time-limit
// sweeps, latency, and report files.

#include <chrono>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <functional>
#include <cstdlib>
#include <map>
#include <memory>
#include <numeric>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "m3/baselines.hpp"
#include "m3/benchmark.hpp"
#include "m3/core_graph.hpp"
#include "m3/errors.hpp"
#include "m3/model.hpp"
#include "m3/trainer.hpp"

namespace m3 {

/// 1 if the selected choice succeeded. Budget-infeasible samples count as
/// failures; an unobserved selected outcome is an error.
inline std::vector<int> selection_outcomes(const Selector& selector, const Dataset& test,
                                           std::optional<double> budget = std::nullopt) {
  std::vector<int> out(test.size(), 0);
  for (std::size_t i = 0; i < test.size(); ++i) {
    std::size_t j = 0;
    try {
      j = selector.select(test, i, budget);
    } catch (const InfeasibleBudgetError&) {
      continue;
    }
    if (!test.observed(i, j)) {
      throw UnobservedOutcomeError("selector '" + selector.name() + "' picked choice " + std::to_string(j) +
                                   " whose outcome is not recorded for sample '" +
                                   test.sample(i).sample_id + "'");
    }
    out[i] = test.status(i, j);
  }
  return out;
}

inline double ser(const Selector& selector, const Dataset& test,
                  std::optional<double> budget = std::nullopt) {
  if (test.empty()) throw NoDataError("SER of an empty test set");
  auto hits = selection_outcomes(selector, test, budget);
  std::size_t ok = 0;
  for (int h : hits) ok += static_cast<std::size_t>(h);
  return static_cast<double>(ok) / static_cast<double>(test.size());
}

// ---------------------------------------------------------------------------
// Reports

struct ReportRow {
  std::string method;
  std::string bucket;
  std::optional<double> ser;  // absent for empty buckets
  double std = 0.0;
  std::size_t count = 0;

  bool operator==(const ReportRow&) const = default;
};

struct EvalReport {
  std::vector<ReportRow> rows;
  std::map<std::string, std::string> metadata;

  bool operator==(const EvalReport&) const = default;
};

enum class BreakdownKind { kCategory, kDifficulty };

inline BreakdownKind parse_breakdown(std::string_view s) {
  if (s == "category") return BreakdownKind::kCategory;
  if (s == "difficulty") return BreakdownKind::kDifficulty;
  throw SpecError("unknown breakdown '" + std::string(s) + "'");
}

inline constexpr const char* kFullBucket = "Full";

/// One row per category present in the test set (or per difficulty level
/// 1..5, empty ones included), then the Full row.
inline std::vector<ReportRow> breakdown(const Selector& selector, const Dataset& test, BreakdownKind by,
                                        std::optional<double> budget = std::nullopt) {
  auto hits = selection_outcomes(selector, test, budget);
  std::vector<std::pair<std::string, std::vector<std::size_t>>> buckets;
  if (by == BreakdownKind::kCategory) {
    for (Category c : kAllCategories) {
      std::vector<std::size_t> rows;
      for (std::size_t i = 0; i < test.size(); ++i) {
        if (test.sample(i).category == c) rows.push_back(i);
      }
      if (!rows.empty()) buckets.emplace_back(std::string(category_name(c)), std::move(rows));
    }
  } else {
    for (int level = 1; level <= 5; ++level) {
      std::vector<std::size_t> rows;
      for (std::size_t i = 0; i < test.size(); ++i) {
        if (difficulty_level(test.success_count(i), test.observed_count(i)) == level) rows.push_back(i);
      }
      buckets.emplace_back("level" + std::to_string(level), std::move(rows));
    }
  }
  std::vector<std::size_t> all(test.size());
  std::iota(all.begin(), all.end(), std::size_t{0});
  buckets.emplace_back(kFullBucket, std::move(all));

  std::vector<ReportRow> out;
  for (auto& [name, rows] : buckets) {
    ReportRow r{selector.name(), name, std::nullopt, 0.0, rows.size()};
    if (!rows.empty()) {
      std::size_t ok = 0;
      for (std::size_t i : rows) ok += static_cast<std::size_t>(hits[i]);
      r.ser = static_cast<double>(ok) / static_cast<double>(rows.size());
    }
    out.push_back(std::move(r));
  }
  return out;
}

// ---------------------------------------------------------------------------
// Methods and sweeps

/// Builds a selector from (possibly degraded) training data, the
/// validation set and a seed.
using MethodFactory =
    std::function<std::unique_ptr<Selector>(const Dataset& train, const Dataset& val, std::uint64_t seed)>;

struct Method {
  std::string name;
  MethodFactory make;
  bool trainable = false;
};

struct MethodEnv {
  std::shared_ptr<const ModelZoo> zoo;
  std::shared_ptr<const ChoiceSpace> space;
  const FeatureStore* store = nullptr;
  TrainConfig config;
  Choice fixed;  // defaults to model 0 of every type
};

inline MethodEnv make_method_env(const ModelZoo& zoo, const FeatureStore& store, const TrainConfig& config) {
  MethodEnv env;
  env.zoo = std::make_shared<const ModelZoo>(zoo);
  env.space = std::make_shared<const ChoiceSpace>(*env.zoo);
  env.store = &store;
  env.config = config;
  env.fixed.models.assign(zoo.num_types(), 0);
  return env;
}

namespace detail {

// Keeps the zoo and choice space alive as long as the selector.
template <class Inner>
class Owning : public Selector {
 public:
  Owning(std::shared_ptr<const ModelZoo> zoo, std::shared_ptr<const ChoiceSpace> space,
         std::unique_ptr<Inner> inner)
      : zoo_(std::move(zoo)), space_(std::move(space)), inner_(std::move(inner)) {}
  std::string name() const override { return inner_->name(); }
  std::size_t select(const Dataset& data, std::size_t i, std::optional<double> budget) const override {
    return inner_->select(data, i, budget);
  }
  const Inner& inner() const { return *inner_; }

 private:
  std::shared_ptr<const ModelZoo> zoo_;
  std::shared_ptr<const ChoiceSpace> space_;
  std::unique_ptr<Inner> inner_;
};

template <class Inner>
std::unique_ptr<Selector> owning(const MethodEnv& env, std::unique_ptr<Inner> inner) {
  return std::make_unique<Owning<Inner>>(env.zoo, env.space, std::move(inner));
}

}  // namespace detail

inline ScoringContext scoring_context(const MethodEnv& env) {
  return {env.zoo.get(), env.space.get(), env.store};
}

template <class Model>
std::unique_ptr<Selector> trained_selector(const MethodEnv& env, std::string name, const Dataset& train,
                                           const Dataset& val, std::uint64_t seed) {
  TrainConfig c = env.config;
  c.seed = seed;
  auto ctx = scoring_context(env);
  auto result = m3::train<Model>(train, val, c, ctx);
  return detail::owning(env, std::make_unique<ScorerSelector<Model>>(std::move(name), std::move(result.best.model), ctx));
}

template <class Model>
Method pretrained_method(const MethodEnv& env, std::string name, Model model) {
  auto shared = std::make_shared<const Model>(std::move(model));
  return {name,
          [env, name, shared](const Dataset&, const Dataset&, std::uint64_t) {
            return detail::owning(env, std::make_unique<ScorerSelector<Model>>(name, *shared, scoring_context(env)));
          },
          false};
}

inline const std::vector<std::string>& standard_method_names() {
  static const std::vector<std::string> names{"random", "fixed", "exmetric", "global_best", "ncf", "m3", "oracle"};
  return names;
}

inline Method standard_method(const MethodEnv& env, const std::string& name) {
  if (name == "random") {
    return {name, [env](const Dataset&, const Dataset&, std::uint64_t seed) {
              return detail::owning(env, std::make_unique<RandomSelector>(*env.zoo, seed));
            }};
  }
  if (name == "fixed") {
    fixed_select(*env.zoo, env.fixed);
    return {name, [env](const Dataset&, const Dataset&, std::uint64_t) {
              return detail::owning(env, std::make_unique<FixedSelector>(*env.zoo, env.fixed));
            }};
  }
  if (name == "exmetric") {
    return {name, [env](const Dataset&, const Dataset&, std::uint64_t) {
              return detail::owning(env, std::make_unique<ExMetricSelector>(*env.zoo));
            }};
  }
  if (name == "global_best") {
    return {name,
            [env](const Dataset& train, const Dataset&, std::uint64_t) {
              return detail::owning(env, std::make_unique<GlobalBestSelector>(*env.zoo, train));
            },
            true};
  }
  if (name == "oracle") {
    return {name, [env](const Dataset&, const Dataset&, std::uint64_t) {
              return detail::owning(env, std::make_unique<OracleSelector>(*env.zoo));
            }};
  }
  if (name == "ncf") {
    return {name,
            [env](const Dataset& train, const Dataset& val, std::uint64_t seed) {
              return trained_selector<NcfScorer>(env, "ncf", train, val, seed);
            },
            true};
  }
  if (name == "m3") {
    return {name,
            [env](const Dataset& train, const Dataset& val, std::uint64_t seed) {
              return trained_selector<GraphScorer>(env, "m3", train, val, seed);
            },
            true};
  }
  throw SpecError("unknown method '" + name + "'");
}

inline std::string format_number(double v) {
  if (std::isinf(v)) return v > 0 ? "inf" : "-inf";
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  // Prefer the short form when it reads back to the same value.
  char shorter[32];
  std::snprintf(shorter, sizeof shorter, "%g", v);
  return std::strtod(shorter, nullptr) == v ? shorter : buf;
}

inline std::pair<double, double> mean_std(const std::vector<double>& xs) {
  if (xs.empty()) return {0.0, 0.0};
  double mean = 0.0;
  for (double x : xs) mean += x;
  mean /= static_cast<double>(xs.size());
  if (xs.size() < 2) return {mean, 0.0};
  double ss = 0.0;
  for (double x : xs) ss += (x - mean) * (x - mean);
  return {mean, std::sqrt(ss / static_cast<double>(xs.size() - 1))};
}

/// For every ratio and seed: degrade the training set, rebuild each method
/// and score it on the untouched test set. Rows hold mean and sample std
/// over seeds, bucket "ratio=<r>".
inline std::vector<ReportRow> sweep_missing(const std::vector<Method>& methods, const Dataset& train,
                                            const Dataset& val, const Dataset& test, MissingMode mode,
                                            const std::vector<double>& ratios,
                                            const std::vector<std::uint64_t>& seeds) {
  if (seeds.empty()) throw SpecError("sweep needs at least one seed");
  for (double r : ratios) {
    if (!(r >= 0.0 && r < 1.0)) throw SpecError("missing ratios must lie in [0, 1)");
  }
  std::vector<ReportRow> out;
  for (const auto& m : methods) {
    for (double r : ratios) {
      std::vector<double> sers;
      for (std::uint64_t seed : seeds) {
        Dataset degraded = apply_missing(train, mode, r, seed);
        sers.push_back(ser(*m.make(degraded, val, seed), test));
      }
      auto [mean, sd] = mean_std(sers);
      out.push_back({m.name, "ratio=" + format_number(r), mean, sd, test.size()});
    }
  }
  return out;
}

/// Builds each method once, then scores it under every budget (nullopt is
/// no limit). Bucket "budget=<b>".
inline std::vector<ReportRow> sweep_time_limit(const std::vector<Method>& methods, const Dataset& train,
                                               const Dataset& val, const Dataset& test,
                                               const std::vector<std::optional<double>>& budgets,
                                               std::uint64_t seed) {
  std::vector<ReportRow> out;
  for (const auto& m : methods) {
    auto selector = m.make(train, val, seed);
    for (const auto& b : budgets) {
      out.push_back({m.name, "budget=" + (b ? format_number(*b) : std::string("inf")), ser(*selector, test, b),
                     0.0, test.size()});
    }
  }
  return out;
}

/// Mean wall-clock seconds per selection over `repetitions` passes across
/// the given rows, after one untimed warm-up pass.
inline double measure_latency(const Selector& selector, const Dataset& data, const std::vector<std::size_t>& rows,
                              int repetitions, std::optional<double> budget = std::nullopt) {
  if (repetitions < 1) throw SpecError("repetitions must be at least 1");
  if (rows.empty()) throw NoDataError("latency needs at least one sample");
  std::size_t sink = 0;
  for (std::size_t i : rows) sink += selector.select(data, i, budget);
  const auto start = std::chrono::steady_clock::now();
  for (int r = 0; r < repetitions; ++r) {
    for (std::size_t i : rows) sink += selector.select(data, i, budget);
  }
  const std::chrono::duration<double> elapsed = std::chrono::steady_clock::now() - start;
  volatile std::size_t keep = sink;
  (void)keep;
  return elapsed.count() / static_cast<double>(repetitions * rows.size());
}

/// Mean recorded execution time over the observed entries.
inline double mean_execution_time(const Dataset& data) {
  double sum = 0.0;
  std::size_t n = 0;
  for (std::size_t i = 0; i < data.size(); ++i) {
    for (std::size_t j = 0; j < data.num_choices(); ++j) {
      if (!data.observed(i, j)) continue;
      if (auto t = data.exec_time(i, j)) {
        sum += *t;
        ++n;
      }
    }
  }
  return n ? sum / static_cast<double>(n) : 0.0;
}

// ---------------------------------------------------------------------------
// Report files

enum class ReportFormat { kCsv, kJsonLines };

inline ReportFormat parse_report_format(std::string_view s) {
  if (s == "csv") return ReportFormat::kCsv;
  if (s == "json-lines" || s == "jsonl") return ReportFormat::kJsonLines;
  throw SpecError("unknown report format '" + std::string(s) + "'");
}

inline constexpr const char* kReportHeader = "method,bucket,ser,std,count";

namespace detail {

inline std::string exact(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

inline std::vector<std::string> split_csv(const std::string& line) {
  std::vector<std::string> out(1);
  for (char c : line) {
    if (c == ',') out.emplace_back();
    else out.back() += c;
  }
  return out;
}

inline void check_csv_field(const std::string& s) {
  if (s.find_first_of(",\n\r") != std::string::npos) {
    throw FormatError("report field '" + s + "' contains a separator");
  }
}

}  // namespace detail

/// CSV: header, one line per row, then "#key=value" metadata lines.
/// JSON lines: one object per row, then one {"metadata": {...}} object.
inline void write_report(std::ostream& out, const EvalReport& report, ReportFormat format) {
  if (format == ReportFormat::kCsv) {
    out << kReportHeader << '\n';
    for (const auto& r : report.rows) {
      detail::check_csv_field(r.method);
      detail::check_csv_field(r.bucket);
      out << r.method << ',' << r.bucket << ',' << (r.ser ? detail::exact(*r.ser) : "") << ','
          << detail::exact(r.std) << ',' << r.count << '\n';
    }
    for (const auto& [k, v] : report.metadata) {
      if (k.find('=') != std::string::npos || (k + v).find('\n') != std::string::npos) {
        throw FormatError("metadata entry '" + k + "' cannot be written as CSV");
      }
      out << '#' << k << '=' << v << '\n';
    }
    return;
  }
  for (const auto& r : report.rows) {
    nlohmann::ordered_json j{
        {"method", r.method}, {"bucket", r.bucket}, {"ser", nullptr}, {"std", r.std}, {"count", r.count}};
    if (r.ser) j["ser"] = *r.ser;
    out << j.dump() << '\n';
  }
  out << json{{"metadata", report.metadata}}.dump() << '\n';
}

inline EvalReport read_report(std::istream& in, ReportFormat format) {
  EvalReport report;
  std::string line;
  if (format == ReportFormat::kCsv) {
    if (!std::getline(in, line) || line != kReportHeader) throw FormatError("report: bad CSV header");
    while (std::getline(in, line)) {
      if (line.empty()) continue;
      if (line[0] == '#') {
        auto eq = line.find('=');
        if (eq == std::string::npos) throw FormatError("report: bad metadata line '" + line + "'");
        report.metadata[line.substr(1, eq - 1)] = line.substr(eq + 1);
        continue;
      }
      auto f = detail::split_csv(line);
      if (f.size() != 5) throw FormatError("report: expected 5 fields in '" + line + "'");
      try {
        ReportRow r{f[0], f[1], std::nullopt, std::stod(f[3]), static_cast<std::size_t>(std::stoull(f[4]))};
        if (!f[2].empty()) r.ser = std::stod(f[2]);
        report.rows.push_back(std::move(r));
      } catch (const std::logic_error&) {
        throw FormatError("report: bad number in '" + line + "'");
      }
    }
    return report;
  }
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    try {
      auto j = json::parse(line);
      if (j.contains("metadata")) {
        report.metadata = j.at("metadata").get<std::map<std::string, std::string>>();
        continue;
      }
      ReportRow r{j.at("method").get<std::string>(), j.at("bucket").get<std::string>(), std::nullopt,
                  j.at("std").get<double>(), j.at("count").get<std::size_t>()};
      if (!j.at("ser").is_null()) r.ser = j.at("ser").get<double>();
      report.rows.push_back(std::move(r));
    } catch (const json::exception& e) {
      throw FormatError(std::string("report: ") + e.what());
    }
  }
  return report;
}

inline void emit_report(const EvalReport& report, const std::string& path, ReportFormat format) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write report '" + path + "'");
  write_report(out, report, format);
  if (!out) throw IoError("failed writing report '" + path + "'");
}

inline EvalReport load_report(const std::string& path, ReportFormat format) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open report '" + path + "'");
  return read_report(in, format);
}

/// Stable short hash of a training configuration for report metadata.
inline std::string config_hash(const TrainConfig& c) {
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx",
                static_cast<unsigned long long>(detail::fnv1a(to_json(c).dump())));
  return buf;
}

}  // namespace m3
