#pragma once

// Benchmark data: a synthetic generator with planted structure, the
// on-disk dataset directory format, the loader for the released MS-GQA
// files, and difficulty buckets.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <map>
#include <optional>
#include <random>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "m3/core_graph.hpp"
#include "m3/errors.hpp"
#include "m3/features.hpp"
#include "m3/program_parser.hpp"

namespace m3 {

using nlohmann::json;

// ---------------------------------------------------------------------------
// Zoo description (shared by synthetic specs and zoo.json)

/// Integer days since 1970-01-01, or a "YYYY-MM-DD" string.
inline std::int64_t parse_release(const json& v) {
  if (v.is_number_integer()) return v.get<std::int64_t>();
  if (v.is_string()) {
    int y = 0;
    unsigned m = 0, d = 0;
    char dash1 = 0, dash2 = 0;
    std::istringstream in(v.get<std::string>());
    if (in >> y >> dash1 >> m >> dash2 >> d && dash1 == '-' && dash2 == '-') {
      std::chrono::year_month_day ymd{std::chrono::year{y}, std::chrono::month{m}, std::chrono::day{d}};
      if (ymd.ok()) return std::chrono::sys_days{ymd}.time_since_epoch().count();
    }
  }
  throw SpecError("release must be days-since-epoch or YYYY-MM-DD, got " + v.dump());
}

struct ZooDescription {
  ModelZoo zoo;
  std::vector<std::vector<double>> quality;  // per (type, model) logit offset, synthetic only
};

inline ZooDescription zoo_from_json(const json& j) {
  try {
    std::vector<SubtaskType> types;
    std::vector<std::vector<ModelInfo>> models;
    std::vector<std::vector<double>> quality;
    for (const auto& jt : j.at("types")) {
      const int t = static_cast<int>(types.size());
      const std::string kind = jt.value("kind", "model");
      if (kind != "model" && kind != "deterministic") {
        throw SpecError("zoo: unknown subtask kind '" + kind + "'");
      }
      SubtaskType type{t, jt.at("name").get<std::string>(),
                       kind == "model" ? SubtaskKind::kModelBacked : SubtaskKind::kDeterministic};
      std::vector<ModelInfo> list;
      std::vector<double> q;
      if (type.kind == SubtaskKind::kDeterministic && !jt.contains("models")) {
        list.push_back({0, t, type.name, 0, 0, jt.value("time", 0.0)});
        q.push_back(0.0);
      } else {
        for (const auto& jm : jt.at("models")) {
          ModelInfo m;
          m.id = static_cast<int>(list.size());
          m.subtask_type = t;
          m.name = jm.at("name").get<std::string>();
          m.release_ordinal = jm.contains("release") ? parse_release(jm.at("release")) : 0;
          m.param_count = jm.value("params", std::int64_t{0});
          m.avg_exec_time = jm.value("time", 0.0);
          list.push_back(std::move(m));
          q.push_back(jm.value("quality", 0.0));
        }
      }
      types.push_back(std::move(type));
      models.push_back(std::move(list));
      quality.push_back(std::move(q));
    }
    return {ModelZoo(std::move(types), std::move(models)), std::move(quality)};
  } catch (const json::exception& e) {
    throw SpecError(std::string("zoo: ") + e.what());
  }
}

inline json zoo_to_json(const ModelZoo& zoo) {
  json types = json::array();
  for (const auto& t : zoo.types()) {
    json jt{{"name", t.name},
            {"kind", t.kind == SubtaskKind::kModelBacked ? "model" : "deterministic"}};
    json models = json::array();
    for (const auto& m : zoo.models(t.id)) {
      models.push_back({{"name", m.name},
                        {"release", m.release_ordinal},
                        {"params", m.param_count},
                        {"time", m.avg_exec_time}});
    }
    jt["models"] = std::move(models);
    types.push_back(std::move(jt));
  }
  return {{"types", std::move(types)}};
}

/// The nine MS-GQA subtask types with the LOC (10) and VQA (7) candidates.
/// Release dates follow the publication venues; parameter counts are
/// approximate public figures. Execution times start at zero and are
/// filled in from the loaded records.
inline ModelZoo make_msgqa_zoo() {
  json j = json::parse(R"({"types": [
    {"name": "LOC", "models": [
      {"name": "owlvit-large-patch14", "release": "2022-10-23", "params": 438000000},
      {"name": "owlvit-base-patch16", "release": "2022-10-23", "params": 153000000},
      {"name": "owlvit-base-patch32", "release": "2022-10-23", "params": 153000000},
      {"name": "glip_large", "release": "2022-11-28", "params": 430000000},
      {"name": "glip_tiny_a", "release": "2022-11-28", "params": 232000000},
      {"name": "glip_tiny_b", "release": "2022-11-28", "params": 232000000},
      {"name": "glip_tiny_c", "release": "2022-11-28", "params": 232000000},
      {"name": "glip_tiny_ori", "release": "2022-11-28", "params": 232000000},
      {"name": "groundingdino_swinb", "release": "2023-03-09", "params": 233000000},
      {"name": "groundingdino_swint", "release": "2023-03-09", "params": 172000000}]},
    {"name": "VQA", "models": [
      {"name": "vilt-b32-finetuned-vqa", "release": "2021-07-18", "params": 118000000},
      {"name": "git-base-textvqa", "release": "2022-05-27", "params": 177000000},
      {"name": "blip-vqa-base", "release": "2022-07-17", "params": 385000000},
      {"name": "blip2-opt-2.7b", "release": "2023-07-23", "params": 3745000000},
      {"name": "blip2-flan-t5-xl", "release": "2023-07-23", "params": 3942000000},
      {"name": "instructblip-vicuna-7b", "release": "2023-05-11", "params": 7914000000},
      {"name": "instructblip-flan-t5-xl", "release": "2023-05-11", "params": 4023000000}]},
    {"name": "EVAL", "kind": "deterministic"},
    {"name": "COUNT", "kind": "deterministic"},
    {"name": "CROP", "kind": "deterministic"},
    {"name": "CROPLEFT", "kind": "deterministic"},
    {"name": "CROPRIGHT", "kind": "deterministic"},
    {"name": "CROPABOVE", "kind": "deterministic"},
    {"name": "CROPBELOW", "kind": "deterministic"}]})");
  return zoo_from_json(j).zoo;
}

// ---------------------------------------------------------------------------
// Synthetic generation

struct CategorySpec {
  Category category = Category::kQuery;
  double weight = 1.0;
  std::vector<std::string> templates;  // program texts
};

/// Planted logit offset for one model. Applies to one cluster or to all
/// of them, and to either a category or one template (index into the
/// templates of all categories in spec order).
struct CompetenceOverride {
  std::optional<int> cluster;
  std::optional<Category> category;
  std::optional<int> template_index;
  int type = 0;
  int model = 0;
  double value = 0.0;
};

/// Outcome logit for sample i under choice c:
///   base + u_i + sum over subtask types t present in the sample's graph of
///   quality[t][c_t] + competence[cluster, category, t, c_t]
///                   + template_competence[cluster, template, t, c_t]
///   + choice_noise * N(0,1)
/// with u_i ~ N(0, sample_noise^2). Features are the cluster centroid plus
/// N(0, feature_noise^2) per coordinate.
struct SynthSpec {
  std::uint64_t seed = 0;
  std::size_t n_samples = 1000;
  int feature_dim = 16;
  int n_clusters = 4;
  double cluster_separation = 3.0;
  double feature_noise = 1.0;
  double base_logit = 0.0;
  double competence_scale = 1.0;
  double template_competence_scale = 0.0;
  double sample_noise = 0.5;
  double choice_noise = 0.0;
  double exec_time_noise = 0.1;
  ModelZoo zoo;
  std::vector<std::vector<double>> quality;
  std::vector<CategorySpec> categories;
  std::vector<CompetenceOverride> overrides;
};

inline SynthSpec synth_spec_from_json(const json& j) {
  SynthSpec s;
  try {
    s.seed = j.value("seed", std::uint64_t{0});
    s.n_samples = j.at("n_samples").get<std::size_t>();
    s.feature_dim = j.value("feature_dim", s.feature_dim);
    s.n_clusters = j.value("n_clusters", s.n_clusters);
    s.cluster_separation = j.value("cluster_separation", s.cluster_separation);
    s.feature_noise = j.value("feature_noise", s.feature_noise);
    s.base_logit = j.value("base_logit", s.base_logit);
    s.competence_scale = j.value("competence_scale", s.competence_scale);
    s.template_competence_scale = j.value("template_competence_scale", s.template_competence_scale);
    s.sample_noise = j.value("sample_noise", s.sample_noise);
    s.choice_noise = j.value("choice_noise", s.choice_noise);
    s.exec_time_noise = j.value("exec_time_noise", s.exec_time_noise);
    auto zd = zoo_from_json(j.at("zoo"));
    s.zoo = std::move(zd.zoo);
    s.quality = std::move(zd.quality);
    for (const auto& jc : j.at("categories")) {
      CategorySpec c;
      auto cat = parse_category(jc.at("name").get<std::string>());
      if (!cat) throw SpecError("synthetic spec: unknown category " + jc.at("name").dump());
      c.category = *cat;
      c.weight = jc.value("weight", 1.0);
      c.templates = jc.at("templates").get<std::vector<std::string>>();
      s.categories.push_back(std::move(c));
    }
    if (j.contains("competence")) {
      for (const auto& jo : j.at("competence")) {
        CompetenceOverride o;
        if (jo.contains("cluster")) o.cluster = jo.at("cluster").get<int>();
        if (jo.contains("category")) {
          auto cat = parse_category(jo.at("category").get<std::string>());
          if (!cat) throw SpecError("synthetic spec: unknown category " + jo.at("category").dump());
          o.category = *cat;
        }
        if (jo.contains("template")) o.template_index = jo.at("template").get<int>();
        if (o.category.has_value() == o.template_index.has_value()) {
          throw SpecError("synthetic spec: a competence entry names exactly one of category or template");
        }
        auto t = s.zoo.find_type(jo.at("type").get<std::string>());
        if (!t) throw SpecError("synthetic spec: unknown type " + jo.at("type").dump());
        o.type = *t;
        auto m = s.zoo.find_model(*t, jo.at("model").get<std::string>());
        if (!m) throw SpecError("synthetic spec: unknown model " + jo.at("model").dump());
        o.model = *m;
        o.value = jo.at("value").get<double>();
        s.overrides.push_back(o);
      }
    }
  } catch (const json::exception& e) {
    throw SpecError(std::string("synthetic spec: ") + e.what());
  }
  if (s.n_samples == 0 || s.feature_dim <= 0 || s.n_clusters <= 0) {
    throw SpecError("synthetic spec: n_samples, feature_dim and n_clusters must be positive");
  }
  if (s.categories.empty()) throw SpecError("synthetic spec: no categories");
  for (const auto& c : s.categories) {
    if (c.templates.empty()) {
      throw SpecError("synthetic spec: category " + std::string(category_name(c.category)) +
                      " has no templates");
    }
    if (!(c.weight > 0.0)) throw SpecError("synthetic spec: category weights must be positive");
  }
  std::size_t n_templates = 0;
  for (const auto& c : s.categories) n_templates += c.templates.size();
  for (const auto& o : s.overrides) {
    if (o.cluster && (*o.cluster < 0 || *o.cluster >= s.n_clusters)) {
      throw SpecError("synthetic spec: competence entry cluster out of range");
    }
    if (o.template_index && (*o.template_index < 0 || static_cast<std::size_t>(*o.template_index) >= n_templates)) {
      throw SpecError("synthetic spec: competence entry template out of range");
    }
  }
  if (s.feature_noise < 0 || s.sample_noise < 0 || s.choice_noise < 0 || s.exec_time_noise < 0 ||
      s.competence_scale < 0 || s.template_competence_scale < 0) {
    throw SpecError("synthetic spec: scales must be nonnegative");
  }
  return s;
}

inline SynthSpec load_synth_spec(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open synthetic spec '" + path + "'");
  try {
    return synth_spec_from_json(json::parse(in));
  } catch (const json::parse_error& e) {
    throw SpecError(std::string("synthetic spec: ") + e.what());
  }
}

struct BenchmarkData {
  ModelZoo zoo;
  Dataset data;
  FeatureStore store;
  std::vector<int> clusters;  // planted cluster per row; generated data only
};

/// Draws samples until n_samples non-degenerate ones are collected. All
/// randomness comes from one seeded engine in a fixed order.
inline BenchmarkData generate(const SynthSpec& spec) {
  const ModelZoo& zoo = spec.zoo;
  const ChoiceSpace space(zoo);
  const int k_types = zoo.num_types();
  const int n_cat = static_cast<int>(kAllCategories.size());
  std::mt19937_64 rng(spec.seed);
  std::normal_distribution<double> normal(0.0, 1.0);

  struct Template {
    Category category;
    TaskGraph graph;
    std::string text;
    std::vector<bool> uses_type;
  };
  std::vector<std::vector<int>> templates_of(spec.categories.size());
  std::vector<Template> templates;
  for (std::size_t c = 0; c < spec.categories.size(); ++c) {
    for (const auto& text : spec.categories[c].templates) {
      Template t{spec.categories[c].category, parse_program(text, zoo), text,
                 std::vector<bool>(k_types, false)};
      for (int nt : t.graph.node_types) t.uses_type[nt] = true;
      templates_of[c].push_back(static_cast<int>(templates.size()));
      templates.push_back(std::move(t));
    }
  }

  std::vector<Eigen::VectorXd> centroids;
  for (int k = 0; k < spec.n_clusters; ++k) {
    Eigen::VectorXd c(spec.feature_dim);
    for (int d = 0; d < spec.feature_dim; ++d) c[d] = spec.cluster_separation * normal(rng);
    centroids.push_back(std::move(c));
  }
  // competence[((cluster * n_cat + category) * total_models) + flat(t, j)]
  const int n_models = zoo.total_models();
  std::vector<double> competence(static_cast<std::size_t>(spec.n_clusters * n_cat * n_models), 0.0);
  for (int k = 0; k < spec.n_clusters; ++k) {
    for (int c = 0; c < n_cat; ++c) {
      for (int t = 0; t < k_types; ++t) {
        for (int j = 0; j < zoo.num_models(t); ++j) {
          double draw = spec.competence_scale * normal(rng);
          if (zoo.type(t).kind == SubtaskKind::kModelBacked) {
            competence[(k * n_cat + c) * n_models + zoo.flat_index(t, j)] = draw;
          }
        }
      }
    }
  }
  const int n_tmpl = static_cast<int>(templates.size());
  std::vector<double> tmpl_competence(static_cast<std::size_t>(spec.n_clusters * n_tmpl * n_models), 0.0);
  for (int k = 0; k < spec.n_clusters; ++k) {
    for (int p = 0; p < n_tmpl; ++p) {
      for (int m = 0; m < n_models; ++m) {
        tmpl_competence[(k * n_tmpl + p) * n_models + m] = spec.template_competence_scale * normal(rng);
      }
    }
  }
  for (const auto& o : spec.overrides) {
    const int flat = zoo.flat_index(o.type, o.model);
    for (int k = 0; k < spec.n_clusters; ++k) {
      if (o.cluster && *o.cluster != k) continue;
      if (o.category) {
        competence[(k * n_cat + static_cast<int>(*o.category)) * n_models + flat] += o.value;
      } else {
        tmpl_competence[(k * n_tmpl + *o.template_index) * n_models + flat] += o.value;
      }
    }
  }

  std::vector<double> weights;
  for (const auto& c : spec.categories) weights.push_back(c.weight);
  std::discrete_distribution<int> pick_category(weights.begin(), weights.end());
  std::uniform_int_distribution<int> pick_cluster(0, spec.n_clusters - 1);
  std::uniform_real_distribution<double> unit(0.0, 1.0);

  BenchmarkData out{zoo, Dataset(space.size()), {}};
  const std::size_t max_attempts = spec.n_samples * 100 + 1000;
  std::vector<int> status(space.size());
  std::vector<double> times(space.size());
  for (std::size_t attempt = 0; out.data.size() < spec.n_samples; ++attempt) {
    if (attempt >= max_attempts) {
      throw SpecError("synthetic spec: too many degenerate samples; outcomes are nearly constant");
    }
    const int cluster = pick_cluster(rng);
    const int cat_slot = pick_category(rng);
    const auto& list = templates_of[cat_slot];
    std::uniform_int_distribution<std::size_t> pick_tmpl(0, list.size() - 1);
    const int tmpl_id = list[pick_tmpl(rng)];
    const Template& tmpl = templates[tmpl_id];
    Eigen::VectorXd x = centroids[cluster];
    for (int d = 0; d < spec.feature_dim; ++d) x[d] += spec.feature_noise * normal(rng);
    const double offset = spec.sample_noise * normal(rng);
    const int cat = static_cast<int>(tmpl.category);

    for (std::size_t ci = 0; ci < space.size(); ++ci) {
      const Choice& choice = space.at(ci);
      // Types absent from the program do not run, so choices that agree on
      // the used types are the same execution and share one outcome.
      Choice canon = choice;
      for (int t = 0; t < k_types; ++t) {
        if (!tmpl.uses_type[t]) canon.models[t] = 0;
      }
      const std::size_t ci0 = space.index_of(canon);
      if (ci0 < ci) {
        status[ci] = status[ci0];
        times[ci] = times[ci0];
        continue;
      }
      double logit = spec.base_logit + offset;
      for (int t = 0; t < k_types; ++t) {
        if (!tmpl.uses_type[t]) continue;
        const int flat = zoo.flat_index(t, choice.models[t]);
        logit += spec.quality[t][choice.models[t]];
        logit += competence[(cluster * n_cat + cat) * n_models + flat];
        logit += tmpl_competence[(cluster * n_tmpl + tmpl_id) * n_models + flat];
      }
      logit += spec.choice_noise * normal(rng);
      const double p = 1.0 / (1.0 + std::exp(-logit));
      status[ci] = unit(rng) < p ? 1 : 0;
      double time = 0.0;
      for (int nt : tmpl.graph.node_types) {
        const double jitter = std::max(0.0, 1.0 + spec.exec_time_noise * normal(rng));
        time += zoo.model(nt, choice.models[nt]).avg_exec_time * jitter;
      }
      times[ci] = time;
    }
    const auto ok = std::count(status.begin(), status.end(), 1);
    if (ok == 0 || ok == static_cast<long>(space.size())) continue;

    char id[32];
    std::snprintf(id, sizeof id, "s%06zu", out.data.size());
    Sample s{id, tmpl.category, tmpl.graph, id, tmpl.text};
    s.graph.sample_id = id;
    const std::size_t row = out.data.add_sample(std::move(s));
    for (std::size_t ci = 0; ci < space.size(); ++ci) out.data.record(row, ci, status[ci], times[ci]);
    out.store.add(id, std::move(x));
    out.clusters.push_back(cluster);
  }
  return out;
}

// ---------------------------------------------------------------------------
// Dataset directory: zoo.json, graphs.jsonl, outcomes.jsonl, features.jsonl

inline void write_dataset_files(const std::filesystem::path& dir, const BenchmarkData& b) {
  std::error_code ec;
  std::filesystem::create_directories(dir, ec);
  if (ec) throw IoError("cannot create '" + dir.string() + "': " + ec.message());
  auto open = [&](const char* name) {
    std::ofstream out(dir / name, std::ios::binary);
    if (!out) throw IoError("cannot write '" + (dir / name).string() + "'");
    return out;
  };
  {
    auto out = open("zoo.json");
    out << zoo_to_json(b.zoo).dump(2) << '\n';
  }
  {
    auto out = open("graphs.jsonl");
    for (const auto& s : b.data.samples()) {
      out << json{{"sample_id", s.sample_id},
                  {"category", category_name(s.category)},
                  {"program", s.program}}
                 .dump()
          << '\n';
    }
  }
  {
    auto out = open("outcomes.jsonl");
    for (std::size_t i = 0; i < b.data.size(); ++i) {
      json recs = json::array();
      for (std::size_t j = 0; j < b.data.num_choices(); ++j) {
        if (!b.data.observed(i, j)) continue;
        json r{{"choice_index", j}, {"status", b.data.status(i, j)}};
        if (auto t = b.data.exec_time(i, j)) r["time"] = *t;
        recs.push_back(std::move(r));
      }
      out << json{{"sample_id", b.data.sample(i).sample_id}, {"outcomes", std::move(recs)}}.dump()
          << '\n';
    }
  }
  {
    auto out = open("features.jsonl");
    write_features(out, b.store);
  }
}

namespace detail {

template <class F>
void for_each_json_line(const std::filesystem::path& path, F&& f) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open '" + path.string() + "'");
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    try {
      f(json::parse(line), line_no);
    } catch (const json::exception& e) {
      throw FormatError(path.filename().string() + " line " + std::to_string(line_no) + ": " + e.what());
    }
  }
}

}  // namespace detail

/// Loads a dataset directory. Every sample in graphs.jsonl needs a line in
/// outcomes.jsonl and vice versa; features.jsonl must cover every sample.
inline BenchmarkData load_dataset_dir(const std::filesystem::path& dir) {
  BenchmarkData b;
  {
    std::ifstream in(dir / "zoo.json");
    if (!in) throw IoError("cannot open '" + (dir / "zoo.json").string() + "'");
    try {
      b.zoo = zoo_from_json(json::parse(in)).zoo;
    } catch (const json::exception& e) {
      throw FormatError(std::string("zoo.json: ") + e.what());
    } catch (const SpecError& e) {
      throw FormatError(std::string("zoo.json: ") + e.what());
    }
  }
  const ChoiceSpace space(b.zoo);
  b.data = Dataset(space.size());
  std::map<std::string, std::size_t> rows;
  detail::for_each_json_line(dir / "graphs.jsonl", [&](const json& r, std::size_t line_no) {
    Sample s;
    s.sample_id = r.at("sample_id").get<std::string>();
    auto cat = parse_category(r.at("category").get<std::string>());
    if (!cat) throw FormatError("graphs.jsonl line " + std::to_string(line_no) + ": unknown category");
    s.category = *cat;
    s.program = r.at("program").get<std::string>();
    s.graph = parse_program(s.program, b.zoo);
    s.graph.sample_id = s.sample_id;
    s.feature_ref = r.value("feature_ref", s.sample_id);
    const std::string id = s.sample_id;
    if (rows.count(id)) throw DuplicateIdError("graphs.jsonl: duplicate sample '" + id + "'");
    rows[id] = b.data.add_sample(std::move(s));
  });
  std::set<std::string> seen;
  detail::for_each_json_line(dir / "outcomes.jsonl", [&](const json& r, std::size_t line_no) {
    const auto id = r.at("sample_id").get<std::string>();
    auto it = rows.find(id);
    if (it == rows.end()) throw JoinError("outcomes.jsonl: sample '" + id + "' has no graph");
    if (!seen.insert(id).second) throw DuplicateIdError("outcomes.jsonl: duplicate sample '" + id + "'");
    for (const auto& rec : r.at("outcomes")) {
      const auto j = rec.at("choice_index").get<std::size_t>();
      if (j >= space.size()) {
        throw FormatError("outcomes.jsonl line " + std::to_string(line_no) + ": choice_index out of range");
      }
      std::optional<double> t;
      if (rec.contains("time") && !rec.at("time").is_null()) t = rec.at("time").get<double>();
      b.data.record(it->second, j, rec.at("status").get<int>(), t);
    }
  });
  if (seen.size() != rows.size()) {
    for (const auto& [id, row] : rows) {
      if (!seen.count(id)) throw JoinError("graphs.jsonl: sample '" + id + "' has no outcomes");
    }
  }
  const auto features = dir / "features.jsonl";
  if (!std::filesystem::exists(features)) {
    throw MissingFeatureError("features file '" + features.string() + "' is missing");
  }
  b.store = load_features(features.string());
  for (const auto& s : b.data.samples()) b.store.at(s.feature_ref);
  return b;
}

// ---------------------------------------------------------------------------
// Released MS-GQA files

struct MsGqaFiles {
  std::filesystem::path instance_results;   // gqa_model_selection_instance_results.json
  std::filesystem::path graph_descriptions;  // gqa_computation_graph_descrption.json
  std::filesystem::path questions;           // testdev_balanced_questions.json

  static MsGqaFiles in_directory(const std::filesystem::path& dir) {
    return {dir / "gqa_model_selection_instance_results.json",
            dir / "gqa_computation_graph_descrption.json", dir / "testdev_balanced_questions.json"};
  }
};

struct MsGqaData {
  ModelZoo zoo;
  Dataset data;
  std::map<std::string, std::string> programs;
};

namespace detail {

inline const json* first_key(const json& obj, std::initializer_list<const char*> keys) {
  if (!obj.is_object()) return nullptr;
  for (const char* k : keys) {
    auto it = obj.find(k);
    if (it != obj.end()) return &*it;
  }
  return nullptr;
}

// {id: value} objects or [{id-key: ..., ...}] arrays -> (id, value) pairs.
inline std::vector<std::pair<std::string, const json*>> keyed_entries(const json& top) {
  std::vector<std::pair<std::string, const json*>> out;
  if (top.is_object()) {
    for (auto it = top.begin(); it != top.end(); ++it) out.emplace_back(it.key(), &it.value());
  } else if (top.is_array()) {
    for (const auto& e : top) {
      const json* id = first_key(e, {"sample_id", "question_id", "questionId", "id", "index"});
      if (!id) throw FormatError("MS-GQA: array entry without an id field");
      out.emplace_back(id->is_string() ? id->get<std::string>() : id->dump(), &e);
    }
  } else {
    throw FormatError("MS-GQA: expected a JSON object or array at top level");
  }
  return out;
}

inline int parse_status(const json& v) {
  if (v.is_boolean()) return v.get<bool>() ? 1 : 0;
  if (v.is_number()) return v.get<double>() != 0.0 ? 1 : 0;
  if (v.is_string()) {
    std::string s = v.get<std::string>();
    std::transform(s.begin(), s.end(), s.begin(), [](unsigned char c) { return std::tolower(c); });
    if (s == "success" || s == "succeed" || s == "true" || s == "1" || s == "ok") return 1;
    if (s == "fail" || s == "failed" || s == "failure" || s == "false" || s == "0") return 0;
  }
  throw FormatError("MS-GQA: unrecognised execution status " + v.dump());
}

inline std::optional<double> parse_time(const json* v) {
  if (!v || v->is_null()) return std::nullopt;
  if (v->is_number()) return v->get<double>();
  if (v->is_string()) {
    try {
      return std::stod(v->get<std::string>());  // tolerates a trailing "s"
    } catch (const std::exception&) {
    }
  }
  throw FormatError("MS-GQA: unrecognised time " + v->dump());
}

inline std::string strip_result_lines(const std::string& program) {
  std::string out;
  std::istringstream in(program);
  std::string line;
  while (std::getline(in, line)) {
    auto lines = parse_program_lines(line);
    if (!lines.empty() && lines.front().function_name == "RESULT") continue;
    out += line + "\n";
  }
  return out;
}

inline json read_json_file(const std::filesystem::path& p) {
  std::ifstream in(p);
  if (!in) throw JoinError("MS-GQA: missing file '" + p.string() + "'");
  try {
    return json::parse(in);
  } catch (const json::exception& e) {
    throw FormatError("MS-GQA: " + p.filename().string() + ": " + e.what());
  }
}

}  // namespace detail

/// Joins the three released files on the sample key. Key-name variants are
/// tolerated: model columns named after the subtask types ("LOC", "VQA",
/// any case, optionally nested under "models"/"choice"), status under
/// status/result/success/exec_status/label, time under
/// time/cost_time/cost/exec_time. "RESULT" lines of the programs are output
/// plumbing and are dropped before parsing.
inline MsGqaData load_msgqa(const MsGqaFiles& files) {
  MsGqaData out;
  out.zoo = make_msgqa_zoo();
  const json results = detail::read_json_file(files.instance_results);
  const json graphs = detail::read_json_file(files.graph_descriptions);
  const json questions = detail::read_json_file(files.questions);

  std::map<std::string, const json*> graph_of, question_of;
  for (auto& [id, v] : detail::keyed_entries(graphs)) graph_of[id] = v;
  for (auto& [id, v] : detail::keyed_entries(questions)) question_of[id] = v;

  const ModelZoo& zoo = out.zoo;
  const ChoiceSpace space(zoo);
  Dataset data(space.size());
  std::vector<std::vector<double>> time_sum(zoo.num_types()), time_n(zoo.num_types());
  for (int t = 0; t < zoo.num_types(); ++t) {
    time_sum[t].assign(zoo.num_models(t), 0.0);
    time_n[t].assign(zoo.num_models(t), 0.0);
  }
  std::set<std::string> result_ids;
  for (auto& [id, entry] : detail::keyed_entries(results)) {
    result_ids.insert(id);
    auto g = graph_of.find(id);
    if (g == graph_of.end()) throw JoinError("MS-GQA: sample '" + id + "' has no computation graph");
    auto q = question_of.find(id);
    if (q == question_of.end()) throw JoinError("MS-GQA: sample '" + id + "' has no question metadata");

    const json* types = detail::first_key(*q->second, {"types"});
    const json* structural = types ? detail::first_key(*types, {"structural"}) : nullptr;
    if (!structural) throw FormatError("MS-GQA: sample '" + id + "' lacks [types][structural]");
    auto cat = parse_category(structural->get<std::string>());
    if (!cat) throw FormatError("MS-GQA: sample '" + id + "' has unknown category " + structural->dump());
    const json* prog = detail::first_key(*g->second, {"program", "prog", "programs"});
    if (!prog || !prog->is_string()) throw FormatError("MS-GQA: sample '" + id + "' has no program text");

    Sample s;
    s.sample_id = id;
    s.category = *cat;
    s.program = prog->get<std::string>();
    s.graph = parse_program(detail::strip_result_lines(s.program), zoo);
    s.graph.sample_id = id;
    s.feature_ref = id;
    out.programs[id] = s.program;
    const std::size_t row = data.add_sample(std::move(s));

    const json* records = entry;
    if (entry->is_object()) records = detail::first_key(*entry, {"results", "records", "choices"});
    if (!records || !records->is_array()) throw FormatError("MS-GQA: sample '" + id + "' has no record list");
    for (const auto& rec : *records) {
      const json* models = detail::first_key(rec, {"models", "choice", "model"});
      if (!models || !models->is_object()) models = &rec;
      Choice c{std::vector<int>(zoo.num_types(), 0)};
      for (int t = 0; t < zoo.num_types(); ++t) {
        if (zoo.num_models(t) == 1) continue;
        std::string lower = zoo.type(t).name;
        std::transform(lower.begin(), lower.end(), lower.begin(), [](unsigned char ch) { return std::tolower(ch); });
        const json* name = detail::first_key(*models, {zoo.type(t).name.c_str(), lower.c_str()});
        if (!name) throw FormatError("MS-GQA: record of '" + id + "' lacks a " + zoo.type(t).name + " model");
        auto m = zoo.find_model(t, name->get<std::string>());
        if (!m) throw FormatError("MS-GQA: unknown " + zoo.type(t).name + " model " + name->dump());
        c.models[t] = *m;
      }
      const json* st = detail::first_key(rec, {"status", "result", "success", "exec_status", "label"});
      if (!st) throw FormatError("MS-GQA: record of '" + id + "' lacks a status");
      auto time = detail::parse_time(detail::first_key(rec, {"time", "cost_time", "cost", "exec_time"}));
      data.record(row, space.index_of(c), detail::parse_status(*st), time);
      if (time) {
        for (int t = 0; t < zoo.num_types(); ++t) {
          time_sum[t][c.models[t]] += *time;
          time_n[t][c.models[t]] += 1.0;
        }
      }
    }
  }
  for (const auto& [id, v] : graph_of) {
    if (!result_ids.count(id)) throw JoinError("MS-GQA: sample '" + id + "' has no execution results");
  }

  // Average pipeline time of the records that used each model.
  std::vector<SubtaskType> types = zoo.types();
  std::vector<std::vector<ModelInfo>> models;
  for (int t = 0; t < zoo.num_types(); ++t) {
    auto list = zoo.models(t);
    for (auto& m : list) {
      if (time_n[t][m.id] > 0) m.avg_exec_time = time_sum[t][m.id] / time_n[t][m.id];
    }
    models.push_back(std::move(list));
  }
  out.zoo = ModelZoo(std::move(types), std::move(models));
  out.data = filter_degenerate(data);
  return out;
}

// ---------------------------------------------------------------------------
// Difficulty

/// Level l holds executable ratios in [1 - 0.2 l, 1 - 0.2 (l - 1)), with
/// level 1 closed at 1.0. Computed on counts so 0.2, 0.4, ... land exactly.
inline int difficulty_level(std::size_t successes, std::size_t observed) {
  if (observed == 0) throw NoObservationError("difficulty of a sample without observations");
  const std::size_t fifths = (5 * successes) / observed;  // floor(5 r)
  return std::clamp(5 - static_cast<int>(fifths), 1, 5);
}

inline std::map<int, std::vector<std::string>> bucket_difficulty(const Dataset& data) {
  std::map<int, std::vector<std::string>> buckets;
  for (int l = 1; l <= 5; ++l) buckets[l];
  for (std::size_t i = 0; i < data.size(); ++i) {
    buckets[difficulty_level(data.success_count(i), data.observed_count(i))].push_back(
        data.sample(i).sample_id);
  }
  return buckets;
}

}  // namespace m3
