// m3: generate benchmark data, train scorers, evaluate selectors and pick
// models for single samples.

#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "m3/baselines.hpp"
#include "m3/benchmark.hpp"
#include "m3/errors.hpp"
#include "m3/eval.hpp"
#include "m3/model.hpp"
#include "m3/selector.hpp"
#include "m3/trainer.hpp"

namespace {

using m3::json;

struct TrainFlags {
  std::string config_path;
  std::optional<std::uint64_t> seed;
  std::optional<int> jobs;
  std::optional<std::string> loss;
  std::optional<std::string> optimizer;
  std::optional<double> lr;
  std::optional<double> weight_decay;
  std::optional<int> epochs;
  std::optional<int> patience;
  std::optional<int> hidden;
  std::optional<int> layers;
  std::optional<int> batch_size;

  void add_to(CLI::App* cmd) {
    cmd->add_option("--config", config_path, "training config JSON");
    cmd->add_option("--seed", seed, "random seed");
    cmd->add_option("--jobs", jobs, "worker threads for per-sample gradients");
    cmd->add_option("--loss", loss, "cce or bce");
    cmd->add_option("--optimizer", optimizer, "sgd, adam or adamw");
    cmd->add_option("--lr", lr, "learning rate");
    cmd->add_option("--weight-decay", weight_decay, "weight decay");
    cmd->add_option("--epochs", epochs, "maximum epochs");
    cmd->add_option("--patience", patience, "early-stopping patience in epochs");
    cmd->add_option("--hidden", hidden, "hidden width");
    cmd->add_option("--layers", layers, "attention layers");
    cmd->add_option("--batch-size", batch_size, "batch size");
  }

  m3::TrainConfig resolve() const {
    m3::TrainConfig c;
    if (!config_path.empty()) {
      std::ifstream in(config_path);
      if (!in) throw m3::IoError("cannot open config '" + config_path + "'");
      try {
        c = m3::train_config_from_json(json::parse(in));
      } catch (const json::parse_error& e) {
        throw m3::SpecError("config '" + config_path + "': " + e.what());
      }
    }
    if (seed) c.seed = *seed;
    if (jobs) c.jobs = *jobs;
    if (loss) c.loss = m3::parse_loss(*loss);
    if (optimizer) c.optimizer = m3::parse_optimizer(*optimizer);
    if (lr) c.lr = *lr;
    if (weight_decay) c.weight_decay = *weight_decay;
    if (epochs) c.max_epochs = *epochs;
    if (patience) c.patience = *patience;
    if (hidden) c.hidden_d = *hidden;
    if (layers) c.num_layers = *layers;
    if (batch_size) c.batch_size = *batch_size;
    c.validate();
    return c;
  }
};

std::string data_dir_or_env(const std::string& flag) {
  if (!flag.empty()) return flag;
  if (const char* env = std::getenv("M3_DATA_DIR"); env && *env) return env;
  throw m3::SpecError("no data directory: pass --data or set M3_DATA_DIR");
}

struct Loaded {
  m3::BenchmarkData bench;
  m3::Dataset train, val, test;
};

Loaded load_split(const std::string& dir, std::uint64_t split_seed) {
  Loaded l;
  l.bench = m3::load_dataset_dir(dir);
  m3::SplitSpec spec;
  spec.seed = split_seed;
  std::tie(l.train, l.val, l.test) = m3::split(l.bench.data, spec);
  return l;
}

template <class Model>
void check_dims(const Model& model, const m3::BenchmarkData& b) {
  if (model.dims.num_models != b.zoo.total_models() || model.dims.input_dim != b.store.dim()) {
    throw m3::DimensionMismatchError("checkpoint was trained for " + std::to_string(model.dims.num_models) +
                                     " models and input dim " + std::to_string(model.dims.input_dim) +
                                     ", data has " + std::to_string(b.zoo.total_models()) + " and " +
                                     std::to_string(b.store.dim()));
  }
}

std::vector<std::string> split_list(const std::string& s) {
  std::vector<std::string> out;
  std::stringstream in(s);
  std::string item;
  while (std::getline(in, item, ',')) {
    if (!item.empty()) out.push_back(item);
  }
  return out;
}

double parse_double(const std::string& s, const char* what) {
  try {
    std::size_t used = 0;
    double v = std::stod(s, &used);
    if (used == s.size()) return v;
  } catch (const std::exception&) {
  }
  throw m3::SpecError(std::string("bad ") + what + " '" + s + "'");
}

std::optional<double> parse_budget(const std::string& s) {
  if (s == "inf" || s == "none") return std::nullopt;
  double v = parse_double(s, "budget");
  if (!(v >= 0.0)) throw m3::SpecError("budget must be >= 0");
  return v;
}

std::string describe_choice(const m3::ModelZoo& zoo, const m3::Choice& c) {
  std::string out;
  for (int t = 0; t < zoo.num_types(); ++t) {
    if (zoo.type(t).kind != m3::SubtaskKind::kModelBacked) continue;
    if (!out.empty()) out += ' ';
    out += zoo.type(t).name + "=" + zoo.model(t, c.models[t]).name;
  }
  return out;
}

// --- gen ---------------------------------------------------------------------

int cmd_gen(const std::string& spec_path, const std::string& out_dir, std::optional<std::uint64_t> seed) {
  auto spec = m3::load_synth_spec(spec_path);
  if (seed) spec.seed = *seed;
  auto data = m3::generate(spec);
  m3::write_dataset_files(out_dir, data);
  std::cout << "wrote " << data.data.size() << " samples, " << m3::ChoiceSpace(data.zoo).size()
            << " choices to " << out_dir << "\n";
  return 0;
}

// --- train -------------------------------------------------------------------

template <class Model>
int train_and_save(const Loaded& l, const m3::TrainConfig& config, const std::string& out,
                   const std::string& history_path, bool quiet) {
  m3::ChoiceSpace space(l.bench.zoo);
  m3::ScoringContext ctx{&l.bench.zoo, &space, &l.bench.store};
  auto result = m3::train<Model>(l.train, l.val, config, ctx, [&](const m3::EpochStats& s) {
    if (!quiet) std::printf("epoch %d lr %.6g loss %.6f val_ser %.4f\n", s.epoch, s.lr, s.train_loss, s.val_ser);
  });
  m3::save_checkpoint(out, result.best);
  std::string hist = history_path.empty() ? out + ".history.csv" : history_path;
  std::ofstream h(hist, std::ios::binary);
  if (!h) throw m3::IoError("cannot write history '" + hist + "'");
  m3::write_history_csv(h, result.history);
  std::printf("best epoch %d val_ser %.4f\n", result.best.epoch, result.best.val_ser);
  return 0;
}

// --- eval --------------------------------------------------------------------

struct EvalFlags {
  std::string data;
  std::string checkpoint;
  std::string by = "category";
  std::string missing_mode = "choices";
  std::string ratios;
  std::string budgets;
  std::string methods = "random,fixed,exmetric,global_best,ncf,m3,oracle";
  std::string seeds;
  std::string out;
  std::string format = "csv";
  std::string fixed;
  std::uint64_t split_seed = 0;
  int latency_reps = 0;
};

m3::Choice parse_fixed(const m3::ModelZoo& zoo, const std::string& text) {
  m3::Choice c{std::vector<int>(zoo.num_types(), 0)};
  for (const auto& item : split_list(text)) {
    auto eq = item.find('=');
    if (eq == std::string::npos) throw m3::SpecError("--fixed expects TYPE=MODEL pairs, got '" + item + "'");
    auto t = zoo.find_type(item.substr(0, eq));
    if (!t) throw m3::InvalidChoiceError("unknown subtask type '" + item.substr(0, eq) + "'");
    const std::string model = item.substr(eq + 1);
    if (auto m = zoo.find_model(*t, model)) {
      c.models[*t] = *m;
    } else {
      char* end = nullptr;
      long idx = std::strtol(model.c_str(), &end, 10);
      if (model.empty() || *end != '\0') throw m3::InvalidChoiceError("unknown model '" + model + "'");
      c.models[*t] = static_cast<int>(idx);
    }
  }
  return m3::fixed_select(zoo, c);
}

int cmd_eval(const EvalFlags& f, const TrainFlags& tf) {
  const auto config = tf.resolve();
  Loaded l = load_split(data_dir_or_env(f.data), f.split_seed);
  auto env = m3::make_method_env(l.bench.zoo, l.bench.store, config);
  if (!f.fixed.empty()) env.fixed = parse_fixed(*env.zoo, f.fixed);

  std::vector<m3::Method> methods;
  std::string ckpt_kind = f.checkpoint.empty() ? "" : m3::checkpoint_kind(f.checkpoint);
  for (const auto& name : split_list(f.methods)) {
    if (!ckpt_kind.empty() && name == ckpt_kind && f.ratios.empty()) {
      if (ckpt_kind == m3::GraphScorer::kKind) {
        auto ck = m3::load_checkpoint<m3::GraphScorer>(f.checkpoint);
        check_dims(ck.model, l.bench);
        methods.push_back(m3::pretrained_method(env, name, std::move(ck.model)));
      } else {
        auto ck = m3::load_checkpoint<m3::NcfScorer>(f.checkpoint);
        check_dims(ck.model, l.bench);
        methods.push_back(m3::pretrained_method(env, name, std::move(ck.model)));
      }
      continue;
    }
    methods.push_back(m3::standard_method(env, name));
  }
  if (methods.empty()) throw m3::SpecError("--methods is empty");

  m3::EvalReport report;
  report.metadata["seed"] = std::to_string(config.seed);
  report.metadata["split_seed"] = std::to_string(f.split_seed);
  report.metadata["config_hash"] = m3::config_hash(config);
  report.metadata["n_test"] = std::to_string(l.test.size());
  report.metadata["choices"] = std::to_string(env.space->size());

  if (!f.ratios.empty()) {
    std::vector<double> ratios;
    for (const auto& r : split_list(f.ratios)) ratios.push_back(parse_double(r, "ratio"));
    std::vector<std::uint64_t> seeds;
    for (const auto& s : split_list(f.seeds)) seeds.push_back(static_cast<std::uint64_t>(parse_double(s, "seed")));
    if (seeds.empty()) seeds.push_back(config.seed);
    const auto mode = m3::parse_missing_mode(f.missing_mode);
    report.metadata["missing_mode"] = std::string(m3::missing_mode_name(mode));
    report.rows = m3::sweep_missing(methods, l.train, l.val, l.test, mode, ratios, seeds);
  } else if (!f.budgets.empty()) {
    std::vector<std::optional<double>> budgets;
    for (const auto& b : split_list(f.budgets)) budgets.push_back(parse_budget(b));
    report.metadata["infeasible"] = "counted as failure";
    report.rows = m3::sweep_time_limit(methods, l.train, l.val, l.test, budgets, config.seed);
  } else {
    const auto by = m3::parse_breakdown(f.by);
    report.metadata["by"] = f.by;
    for (const auto& m : methods) {
      auto selector = m.make(l.train, l.val, config.seed);
      auto rows = m3::breakdown(*selector, l.test, by);
      report.rows.insert(report.rows.end(), rows.begin(), rows.end());
      if (f.latency_reps > 0) {
        std::vector<std::size_t> all(l.test.size());
        std::iota(all.begin(), all.end(), std::size_t{0});
        report.metadata["latency_seconds." + m.name] =
            m3::format_number(m3::measure_latency(*selector, l.test, all, f.latency_reps));
      }
    }
    if (f.latency_reps > 0) {
      report.metadata["mean_execution_seconds"] = m3::format_number(m3::mean_execution_time(l.test));
    }
  }

  const auto format = m3::parse_report_format(f.format);
  if (f.out.empty() || f.out == "-") {
    m3::write_report(std::cout, report, format);
  } else {
    m3::emit_report(report, f.out, format);
    std::cout << "wrote " << report.rows.size() << " rows to " << f.out << "\n";
  }
  return 0;
}

// --- select ------------------------------------------------------------------

template <class Model>
int select_with(const Model& model, const Loaded& l, const std::string& sample_id, std::optional<double> budget,
                std::size_t topk) {
  check_dims(model, l.bench);
  auto row = l.bench.data.find(sample_id);
  if (!row) throw m3::UnknownSampleError("unknown sample '" + sample_id + "'");
  m3::ChoiceSpace space(l.bench.zoo);
  m3::ScoringContext ctx{&l.bench.zoo, &space, &l.bench.store};
  auto ranked = m3::rank_topk(l.bench.data.sample(*row), model, ctx, topk, budget);
  for (std::size_t r = 0; r < ranked.size(); ++r) {
    std::printf("%zu\tchoice %zu\tscore %.6f\t%s\n", r + 1, ranked[r].index, ranked[r].score,
                describe_choice(l.bench.zoo, ranked[r].choice).c_str());
  }
  return 0;
}

int cmd_select(const std::string& data, const std::string& checkpoint, const std::string& sample_id,
               const std::string& budget_text, std::size_t topk) {
  Loaded l;
  l.bench = m3::load_dataset_dir(data_dir_or_env(data));
  const auto budget = budget_text.empty() ? std::nullopt : parse_budget(budget_text);
  if (m3::checkpoint_kind(checkpoint) == m3::NcfScorer::kKind) {
    return select_with(m3::load_checkpoint<m3::NcfScorer>(checkpoint).model, l, sample_id, budget, topk);
  }
  return select_with(m3::load_checkpoint<m3::GraphScorer>(checkpoint).model, l, sample_id, budget, topk);
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"model selection over computation graphs"};
  app.require_subcommand(1);

  std::string spec_path, out_dir;
  std::optional<std::uint64_t> gen_seed;
  auto* gen = app.add_subcommand("gen", "generate a synthetic dataset directory");
  gen->add_option("--spec", spec_path, "synthetic spec JSON")->required();
  gen->add_option("--out", out_dir, "output directory")->required();
  gen->add_option("--seed", gen_seed, "override the generator seed");

  std::string train_data, train_out, history, model_kind = "m3";
  std::uint64_t train_split_seed = 0;
  bool quiet = false;
  TrainFlags train_flags;
  auto* train = app.add_subcommand("train", "train a scorer and write a checkpoint");
  train->add_option("--data", train_data, "dataset directory (default $M3_DATA_DIR)");
  train->add_option("--out", train_out, "checkpoint path")->required();
  train->add_option("--model", model_kind, "m3 or ncf")->check(CLI::IsMember({"m3", "ncf"}));
  train->add_option("--history", history, "history CSV path (default <out>.history.csv)");
  train->add_option("--split-seed", train_split_seed, "seed of the 6:2:2 split");
  train->add_flag("--quiet", quiet, "only print the final line");
  train_flags.add_to(train);

  EvalFlags eval_flags;
  TrainFlags eval_train;
  auto* eval = app.add_subcommand("eval", "evaluate selectors on the test split");
  eval->add_option("--data", eval_flags.data, "dataset directory (default $M3_DATA_DIR)");
  eval->add_option("--checkpoint", eval_flags.checkpoint, "trained scorer used for its method");
  eval->add_option("--by", eval_flags.by, "category or difficulty");
  eval->add_option("--missing-mode", eval_flags.missing_mode, "choices or samples");
  eval->add_option("--ratios", eval_flags.ratios, "comma-separated missing ratios");
  eval->add_option("--seeds", eval_flags.seeds, "comma-separated seeds for missing-data sweeps");
  eval->add_option("--budgets", eval_flags.budgets, "comma-separated time budgets in seconds, 'inf' allowed");
  eval->add_option("--methods", eval_flags.methods, "comma-separated selectors");
  eval->add_option("--fixed", eval_flags.fixed, "choice of the fixed selector, e.g. LOC=0,VQA=2");
  eval->add_option("--split-seed", eval_flags.split_seed, "seed of the 6:2:2 split");
  eval->add_option("--latency", eval_flags.latency_reps, "time selection over N passes of the test set");
  eval->add_option("--out", eval_flags.out, "report path (default stdout)");
  eval->add_option("--format", eval_flags.format, "csv or json-lines");
  eval_train.add_to(eval);

  std::string sel_data, sel_ckpt, sel_sample, sel_budget;
  std::size_t topk = 1;
  auto* sel = app.add_subcommand("select", "rank choices for one sample");
  sel->add_option("--data", sel_data, "dataset directory (default $M3_DATA_DIR)");
  sel->add_option("--checkpoint", sel_ckpt, "trained scorer")->required();
  sel->add_option("--sample", sel_sample, "sample id")->required();
  sel->add_option("--budget", sel_budget, "time budget in seconds");
  sel->add_option("--topk", topk, "number of ranked choices to print");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    int code = app.exit(e);
    return code == 0 ? 0 : static_cast<int>(m3::ExitCode::kUsage);
  }

  try {
    if (*gen) return cmd_gen(spec_path, out_dir, gen_seed);
    if (*train) {
      const auto config = train_flags.resolve();
      Loaded l = load_split(data_dir_or_env(train_data), train_split_seed);
      if (model_kind == "ncf") return train_and_save<m3::NcfScorer>(l, config, train_out, history, quiet);
      return train_and_save<m3::GraphScorer>(l, config, train_out, history, quiet);
    }
    if (*eval) return cmd_eval(eval_flags, eval_train);
    if (*sel) return cmd_select(sel_data, sel_ckpt, sel_sample, sel_budget, topk);
  } catch (const m3::Error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return static_cast<int>(e.exit_code());
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return static_cast<int>(m3::ExitCode::kData);
  }
  return 0;
}
