// torml: synthetic data generation, featurization, multi-label training,
// evaluation, Shapley explanation and evasion experiments for Tor traffic
// traces, from one binary.
//
// Exit codes: 0 success, 2 usage, 3 data error, 4 training failure,
// 5 model/data schema mismatch.

#include <cstdlib>
#include <filesystem>
#include <iostream>
#include <map>
#include <memory>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "torml/baselines.hpp"
#include "torml/dataset.hpp"
#include "torml/evasion.hpp"
#include "torml/explain.hpp"
#include "torml/featurizer.hpp"
#include "torml/lamp.hpp"
#include "torml/metrics.hpp"
#include "torml/models.hpp"
#include "torml/synthgen.hpp"

namespace fs = std::filesystem;
using namespace torml;

namespace {

constexpr int kExitOk = 0;
constexpr int kExitUsage = 2;
constexpr int kExitData = 3;
constexpr int kExitTraining = 4;
constexpr int kExitSchemaMismatch = 5;

// Resolved key=value echo written next to every run's outputs.
class RunConfig {
 public:
  void set(const std::string& key, const std::string& value) {
    entries_[key] = value;
  }
  void set(const std::string& key, std::uint64_t v) {
    entries_[key] = std::to_string(v);
  }
  void set(const std::string& key, int v) { entries_[key] = std::to_string(v); }
  void set(const std::string& key, double v) {
    entries_[key] = csv::format_number(v);
  }

  std::string text() const {
    std::string out;
    for (const auto& [k, v] : entries_) out += k + " = " + v + "\n";
    return out;
  }

  void write(const fs::path& path) const {
    csv::write_file(path.string(), text());
  }

 private:
  std::map<std::string, std::string> entries_;
};

fs::path resolve_out_dir(std::string out) {
  if (out.empty()) {
    if (const char* env = std::getenv("TORML_OUT_DIR")) out = env;
  }
  if (out.empty())
    throw CLI::ValidationError(
        "--out", "output directory required (or set TORML_OUT_DIR)");
  fs::create_directories(out);
  return out;
}

struct GenDataArgs {
  std::string profile = "d5";
  std::string config_path;
  std::uint64_t seed = 1;
  std::string out;
};

int run_gen_data(const GenDataArgs& args) {
  GeneratorConfig config;
  if (args.profile == "d5") {
    config = default_d5_profile(args.seed);
  } else if (args.profile == "custom") {
    if (args.config_path.empty()) {
      std::cerr << "gen-data: --profile custom requires --config FILE\n";
      return kExitUsage;
    }
    std::ifstream in(args.config_path);
    if (!in) {
      std::cerr << "gen-data: cannot open config " << args.config_path << "\n";
      return kExitData;
    }
    std::string text((std::istreambuf_iterator<char>(in)),
                     std::istreambuf_iterator<char>());
    config = config_from_text(text);
    config.seed = args.seed;  // flag overrides the file
  } else {
    std::cerr << "gen-data: unknown profile '" << args.profile << "'\n";
    return kExitUsage;
  }

  Dataset data = generate(config);
  write_csv(data, args.out);

  RunConfig rc;
  rc.set("subcommand", std::string("gen-data"));
  rc.set("profile", args.profile);
  rc.set("seed", args.seed);
  rc.set("out", args.out);
  rc.set("samples", data.size());
  if (!args.config_path.empty()) rc.set("config", args.config_path);
  rc.write(args.out + ".config");
  std::cout << "wrote " << data.size() << " samples to " << args.out << "\n";
  return kExitOk;
}

struct SplitArgs {
  std::string in;
  double fraction = 0.7;
  std::uint64_t seed = 1;
  std::string train_out, test_out;
};

int run_split(const SplitArgs& args) {
  Dataset data = load_csv(args.in);
  auto [train, test] = split(data, args.fraction, args.seed);
  write_csv(train, args.train_out);
  write_csv(test, args.test_out);
  std::cout << "split " << data.size() << " samples into " << train.size()
            << " train / " << test.size() << " test\n";
  return kExitOk;
}

struct FeaturizeArgs {
  std::string sessions;
  std::string out;
};

int run_featurize(const FeaturizeArgs& args) {
  auto sessions = load_session_log(args.sessions);
  Dataset data = featurize_sessions(sessions);
  write_csv(data, args.out, /*with_source_id=*/true);
  std::cout << "featurized " << data.size() << " sessions to " << args.out
            << "\n";
  return kExitOk;
}

struct TrainArgs {
  std::string model;
  std::string train_path;
  std::uint64_t seed = 1;
  std::string out;
  int trees = 100;
  int features_per_split = 0;
  // Network defaults follow the published final configuration.
  int epochs = 100;
  double lr = 0.0002;
  int batch = 64;
  int d_model = 512;
  int d_hidden = 1024;
  int heads = 4;
  int rounds = 2;
  double dropout = 0.1;
  std::string mask = "prior";
  bool quiet = false;
};

int run_train(const TrainArgs& args) {
  Dataset train = load_csv(args.train_path);

  RunConfig rc;
  rc.set("subcommand", std::string("train"));
  rc.set("model", args.model);
  rc.set("train", args.train_path);
  rc.set("seed", args.seed);
  rc.set("out", args.out);
  rc.set("schema_hash", train.schema.hash());

  try {
    if (args.model == "br" || args.model == "cc" || args.model == "lp") {
      BaselineParams params;
      params.seed = args.seed;
      params.forest.n_trees = args.trees;
      params.forest.features_per_split = args.features_per_split;
      rc.set("trees", args.trees);
      if (args.model == "br")
        fit_br(train, params).save(args.out);
      else if (args.model == "cc")
        fit_cc(train, params).save(args.out);
      else
        fit_lp(train, params).save(args.out);
    } else if (args.model == "lamp") {
      LampConfig config;
      config.d_model = args.d_model;
      config.d_hidden = args.d_hidden;
      config.attention_heads = args.heads;
      config.message_rounds = args.rounds;
      config.dropout = args.dropout;
      config.learning_rate = args.lr;
      config.batch_size = args.batch;
      config.epochs = args.epochs;
      config.label_mask =
          args.mask == "full" ? LabelMaskKind::Full : LabelMaskKind::Prior;
      config.seed = args.seed;
      rc.set("epochs", config.epochs);
      rc.set("lr", config.learning_rate);
      rc.set("batch_size", config.batch_size);
      rc.set("d_model", config.d_model);
      rc.set("d_hidden", config.d_hidden);
      rc.set("heads", config.attention_heads);
      rc.set("rounds", config.message_rounds);
      rc.set("dropout", config.dropout);
      rc.set("label_mask", args.mask);
      auto model = fit_lamp(train, config);
      model.save(args.out);
      if (!args.quiet && !model.loss_history().empty())
        std::cout << "final epoch loss " << model.loss_history().back()
                  << "\n";
    } else {
      std::cerr << "train: unknown model '" << args.model << "'\n";
      return kExitUsage;
    }
  } catch (const std::exception& e) {
    std::cerr << "train: " << e.what() << "\n";
    return kExitTraining;
  }

  rc.write(args.out + ".config");
  std::cout << "wrote model to " << args.out << "\n";
  return kExitOk;
}

struct EvaluateArgs {
  std::string model_path;
  std::string test_path;
  std::string out;
  double threshold = 0.5;
};

int run_evaluate(const EvaluateArgs& args) {
  auto model = load_model(args.model_path);
  Dataset test = load_csv(args.test_path);
  require_schema_match(*model, test.schema, "evaluate");
  const fs::path dir = resolve_out_dir(args.out);

  PredictionBatch batch;
  std::string predictions = "source_id,true_labels,predicted_labels\n";
  for (const auto& s : test.samples) {
    LabelSet pred = model->predict(s.features, args.threshold);
    std::vector<bool> t(kNumLabels), p(kNumLabels);
    for (int k = 0; k < kNumLabels; ++k) {
      t[k] = s.labels.test(k);
      p[k] = pred.test(k);
    }
    batch.y_true.push_back(std::move(t));
    batch.y_pred.push_back(std::move(p));
    predictions += s.source_id + ',' + s.labels.to_string() + ',' +
                   pred.to_string() + '\n';
  }

  auto summary = evaluate_batch(batch);
  csv::write_file((dir / "metrics_summary.csv").string(),
                  summary_csv(model->kind(), summary));
  csv::write_file((dir / "classwise_pr.csv").string(),
                  classwise_csv(classwise_pr(batch)));
  csv::write_file((dir / "predictions.csv").string(), predictions);

  RunConfig rc;
  rc.set("subcommand", std::string("evaluate"));
  rc.set("model", args.model_path);
  rc.set("model_kind", model->kind());
  rc.set("test", args.test_path);
  rc.set("threshold", args.threshold);
  rc.set("samples", test.size());
  rc.write(dir / "run_config.txt");

  std::cout << model->kind() << ": MAP " << summary.map.value << ", MAR "
            << summary.mar.value << ", HL " << summary.hamming << ", subset "
            << summary.subset << "\n";
  return kExitOk;
}

struct ExplainArgs {
  std::string model_path;
  std::string data_path;
  std::string estimator = "sampled";
  int perms = 200;
  int background = 100;
  std::uint64_t seed = 1;
  std::string out;
  std::vector<std::string> labels = {"Downloader", "Grayware", "Miner",
                                     "Ransomware"};
  int max_samples = 0;  // 0 = all
  int dependence_primary = 183;
  int dependence_secondary = 185;
  int threads = 1;
};

int run_explain(const ExplainArgs& args) {
  auto model = load_model(args.model_path);
  Dataset data = load_csv(args.data_path);
  require_schema_match(*model, data.schema, "explain");
  const fs::path dir = resolve_out_dir(args.out);

  if (args.max_samples > 0 && data.size() > args.max_samples)
    data.samples.resize(args.max_samples);

  // Attribute over the non-constant feature set only; constant columns
  // cannot move the model.
  auto [reduced, removed] = drop_zero_variance(data);
  std::vector<int> positions;
  for (const auto& e : reduced.schema.entries())
    positions.push_back(data.schema.position_of(e.index));

  const bool exact = args.estimator == "exact";
  if (!exact && args.estimator != "sampled") {
    std::cerr << "explain: estimator must be 'exact' or 'sampled'\n";
    return kExitUsage;
  }
  if (exact && positions.size() > 20) {
    std::cerr << "explain: exact estimator enumerates 2^N coalitions and is "
                 "limited to 20 features; this data has "
              << positions.size() << ". Use --estimator sampled --perms N.\n";
    return kExitUsage;
  }

  std::vector<int> label_ids;
  for (const auto& name : args.labels) label_ids.push_back(label_index(name));

  auto bg = BackgroundSet::from_dataset(data, args.background, args.seed);
  auto attributions =
      explain_dataset(*model, data, label_ids, bg, exact, args.perms,
                      args.seed, positions, args.threads);

  nlohmann::json manifest;
  manifest["model"] = args.model_path;
  manifest["model_kind"] = model->kind();
  manifest["dataset"] = args.data_path;
  manifest["estimator"] = args.estimator;
  manifest["n_perms"] = exact ? 0 : args.perms;
  manifest["background_rows"] = int(bg.rows.size());
  manifest["seed"] = args.seed;
  manifest["samples"] = data.size();
  manifest["exports"] = nlohmann::json::array();

  auto note_export = [&](const std::string& name, const std::string& label,
                         const std::string& kind) {
    nlohmann::json e;
    e["file"] = name;
    e["label"] = label;
    e["kind"] = kind;
    manifest["exports"].push_back(e);
  };

  for (std::size_t l = 0; l < label_ids.size(); ++l) {
    const std::string label(kLabelNames[label_ids[l]]);
    const auto& rows = attributions[l];
    const std::string summary_name = "summary_" + label + ".csv";
    csv::write_file((dir / summary_name).string(), summary_data(rows, data));
    note_export(summary_name, label, "summary");
    const std::string force_name = "force_" + label + ".csv";
    csv::write_file((dir / force_name).string(), force_data(rows, data));
    note_export(force_name, label, "force");
    const std::string decision_name = "decision_" + label + ".csv";
    csv::write_file((dir / decision_name).string(), decision_data(rows, data));
    note_export(decision_name, label, "decision");

    const int primary = data.schema.position_of(args.dependence_primary);
    const int secondary = data.schema.position_of(args.dependence_secondary);
    if (primary >= 0 && secondary >= 0 &&
        std::find(positions.begin(), positions.end(), primary) !=
            positions.end()) {
      const std::string dep_name = "dependence_" + label + ".csv";
      csv::write_file((dir / dep_name).string(),
                      dependence_data(rows, data, primary, secondary));
      note_export(dep_name, label, "dependence");
    }
  }

  // Global importance across the attributed labels.
  auto g = global_importance(label_ids, attributions);
  std::string gi = "label,feature_index,mean_abs_shap\n";
  for (std::size_t l = 0; l < g.labels.size(); ++l)
    for (std::size_t i = 0; i < g.positions.size(); ++i)
      gi += std::string(kLabelNames[g.labels[l]]) + ',' +
            data.schema.at(g.positions[i]).name + ',' +
            csv::format_number(g.mean_abs_phi[l][i]) + '\n';
  csv::write_file((dir / "global_importance.csv").string(), gi);
  note_export("global_importance.csv", "all", "global_importance");

  csv::write_file((dir / "manifest.json").string(), manifest.dump(2) + "\n");

  RunConfig rc;
  rc.set("subcommand", std::string("explain"));
  rc.set("model", args.model_path);
  rc.set("data", args.data_path);
  rc.set("estimator", args.estimator);
  rc.set("perms", args.perms);
  rc.set("background", int(bg.rows.size()));
  rc.set("seed", args.seed);
  rc.set("threads", args.threads);
  rc.write(dir / "run_config.txt");

  std::cout << "wrote " << manifest["exports"].size() << " exports to "
            << dir.string() << "\n";
  return kExitOk;
}

struct AttackArgs {
  std::string models_dir;
  std::string test_path;
  std::string out;
  bool inclusive = false;
};

int run_attack(const AttackArgs& args) {
  Dataset test = load_csv(args.test_path);
  const fs::path dir = resolve_out_dir(args.out);

  std::vector<std::unique_ptr<MultiLabelModel>> owned;
  std::vector<const MultiLabelModel*> models;
  std::vector<std::string> names;
  for (const char* kind : {"br", "cc", "lp", "lamp"}) {
    const fs::path path =
        fs::path(args.models_dir) / (std::string(kind) + ".model");
    if (!fs::exists(path))
      throw std::runtime_error("attack: missing model file " + path.string());
    owned.push_back(load_model(path.string()));
    require_schema_match(*owned.back(), test.schema, "attack");
    models.push_back(owned.back().get());
    names.push_back(kind);
  }

  auto report = run_experiments(models, names, test, !args.inclusive);
  csv::write_file((dir / "attack_report.csv").string(), report_csv(report));
  csv::write_file((dir / "attack_provenance.txt").string(),
                  report_sidecar(report));

  auto deltas = robustness_delta(report);
  std::string rb =
      "model,ransomware_drop_e2,ransomware_drop_e3,downloader_rise_e2,"
      "downloader_rise_e3,grayware_rise_e2,grayware_rise_e3\n";
  for (const auto& d : deltas) {
    rb += d.model;
    rb += ',' + csv::format_number(d.ransomware_drop_e2);
    rb += ',' + csv::format_number(d.ransomware_drop_e3);
    rb += ',' + std::to_string(d.downloader_rise_e2);
    rb += ',' + std::to_string(d.downloader_rise_e3);
    rb += ',' + std::to_string(d.grayware_rise_e2);
    rb += ',' + std::to_string(d.grayware_rise_e3);
    rb += '\n';
  }
  csv::write_file((dir / "robustness.csv").string(), rb);

  RunConfig rc;
  rc.set("subcommand", std::string("attack"));
  rc.set("models", args.models_dir);
  rc.set("test", args.test_path);
  rc.set("cohort", args.inclusive ? std::string("inclusive")
                                  : std::string("exclusive"));
  rc.set("cohort_size", report.cohort_size);
  rc.write(dir / "run_config.txt");

  std::cout << "attack report over " << report.cohort_size
            << " Ransomware-only samples written to " << dir.string() << "\n";
  return kExitOk;
}

struct ReportArgs {
  std::string runs_dir;
  std::string out;
};

int run_report(const ReportArgs& args) {
  const fs::path dir = resolve_out_dir(args.out);
  std::vector<fs::path> summaries, attacks;
  for (const auto& entry : fs::recursive_directory_iterator(args.runs_dir)) {
    if (!entry.is_regular_file()) continue;
    if (entry.path().filename() == "metrics_summary.csv")
      summaries.push_back(entry.path());
    else if (entry.path().filename() == "attack_report.csv")
      attacks.push_back(entry.path());
  }
  std::sort(summaries.begin(), summaries.end());
  std::sort(attacks.begin(), attacks.end());

  std::string combined =
      "run,model,micro_precision,micro_recall,hamming_loss,subset_accuracy,"
      "elementwise_accuracy\n";
  for (const auto& path : summaries) {
    auto lines = csv::read_lines(path.string());
    const std::string run =
        fs::relative(path.parent_path(), args.runs_dir).string();
    for (std::size_t i = 1; i < lines.size(); ++i)
      if (!lines[i].empty()) combined += run + ',' + lines[i] + '\n';
  }
  csv::write_file((dir / "combined_metrics.csv").string(), combined);

  std::string index = "kind,path\n";
  for (const auto& p : summaries)
    index += "metrics," + fs::relative(p, args.runs_dir).string() + '\n';
  for (const auto& p : attacks)
    index += "attack," + fs::relative(p, args.runs_dir).string() + '\n';
  csv::write_file((dir / "collected_runs.csv").string(), index);

  RunConfig rc;
  rc.set("subcommand", std::string("report"));
  rc.set("runs", args.runs_dir);
  rc.set("collected_metrics", int(summaries.size()));
  rc.set("collected_attacks", int(attacks.size()));
  rc.write(dir / "run_config.txt");

  std::cout << "collated " << summaries.size() << " metric runs and "
            << attacks.size() << " attack runs into " << dir.string() << "\n";
  return kExitOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{
      "torml: multi-label Tor traffic classification, explanation and "
      "evasion experiments"};
  app.require_subcommand(1);

  GenDataArgs gen_args;
  auto* gen =
      app.add_subcommand("gen-data", "generate a synthetic feature CSV");
  gen->set_config("--config-file");
  gen->add_option("--profile", gen_args.profile, "d5 or custom")
      ->default_str("d5");
  gen->add_option("--config", gen_args.config_path,
                  "generator profile file (required for --profile custom)");
  gen->add_option("--seed", gen_args.seed, "generator seed");
  gen->add_option("--out", gen_args.out, "output CSV path")->required();

  SplitArgs split_args;
  auto* sp = app.add_subcommand("split", "deterministic train/test split");
  sp->set_config("--config-file");
  sp->add_option("--in", split_args.in, "input feature CSV")->required();
  sp->add_option("--fraction", split_args.fraction, "train fraction in (0,1)");
  sp->add_option("--seed", split_args.seed, "shuffle seed");
  sp->add_option("--train-out", split_args.train_out, "train CSV path")
      ->required();
  sp->add_option("--test-out", split_args.test_out, "test CSV path")
      ->required();

  FeaturizeArgs feat_args;
  auto* feat = app.add_subcommand("featurize",
                                  "compute feature vectors from a session log");
  feat->set_config("--config-file");
  feat->add_option("--sessions", feat_args.sessions, "JSON-lines session log")
      ->required();
  feat->add_option("--out", feat_args.out, "output feature CSV")->required();

  TrainArgs train_args;
  auto* tr = app.add_subcommand("train", "fit a classifier");
  tr->set_config("--config-file");
  tr->add_option("--model", train_args.model, "br, cc, lp or lamp")
      ->required();
  tr->add_option("--train", train_args.train_path, "training feature CSV")
      ->required();
  tr->add_option("--seed", train_args.seed, "training seed");
  tr->add_option("--out", train_args.out, "model file path")->required();
  tr->add_option("--trees", train_args.trees, "forest size (br/cc/lp)");
  tr->add_option("--features-per-split", train_args.features_per_split,
                 "candidate features per split; 0 = ceil(sqrt(F))");
  tr->add_option("--epochs", train_args.epochs, "training epochs (lamp)");
  tr->add_option("--lr", train_args.lr, "learning rate (lamp)");
  tr->add_option("--batch", train_args.batch, "batch size (lamp)");
  tr->add_option("--d-model", train_args.d_model, "model width (lamp)");
  tr->add_option("--d-hidden", train_args.d_hidden,
                 "feedforward width (lamp)");
  tr->add_option("--heads", train_args.heads, "attention heads (lamp)");
  tr->add_option("--rounds", train_args.rounds, "message rounds (lamp)");
  tr->add_option("--dropout", train_args.dropout, "dropout rate (lamp)");
  tr->add_option("--mask", train_args.mask, "label mask: prior or full");
  tr->add_flag("--quiet", train_args.quiet, "suppress progress output");

  EvaluateArgs eval_args;
  auto* ev = app.add_subcommand("evaluate", "score a model on a test CSV");
  ev->set_config("--config-file");
  ev->add_option("--model", eval_args.model_path, "model file")->required();
  ev->add_option("--test", eval_args.test_path, "test feature CSV")
      ->required();
  ev->add_option("--out", eval_args.out, "output directory");
  ev->add_option("--threshold", eval_args.threshold,
                 "per-label decision threshold");

  ExplainArgs explain_args;
  auto* ex = app.add_subcommand("explain", "Shapley attributions and exports");
  ex->set_config("--config-file");
  ex->add_option("--model", explain_args.model_path, "model file")->required();
  ex->add_option("--data", explain_args.data_path, "feature CSV to explain")
      ->required();
  ex->add_option("--estimator", explain_args.estimator, "exact or sampled");
  ex->add_option("--perms", explain_args.perms,
                 "permutations for the sampled estimator");
  ex->add_option("--background", explain_args.background,
                 "background rows for the interventional expectation");
  ex->add_option("--seed", explain_args.seed, "sampling seed");
  ex->add_option("--out", explain_args.out, "output directory");
  ex->add_option("--labels", explain_args.labels,
                 "labels to explain (canonical names)");
  ex->add_option("--max-samples", explain_args.max_samples,
                 "cap on explained samples; 0 = all");
  ex->add_option("--dependence-primary", explain_args.dependence_primary,
                 "primary feature index for the dependence export");
  ex->add_option("--dependence-secondary", explain_args.dependence_secondary,
                 "secondary feature index for the dependence export");
  ex->add_option("--threads", explain_args.threads,
                 "worker threads; results are identical at any count");

  AttackArgs attack_args;
  auto* at = app.add_subcommand(
      "attack", "run the three evasion experiments against all four models");
  at->set_config("--config-file");
  at->add_option("--models", attack_args.models_dir,
                 "directory with br.model, cc.model, lp.model, lamp.model")
      ->required();
  at->add_option("--test", attack_args.test_path, "test feature CSV")
      ->required();
  at->add_option("--out", attack_args.out, "output directory");
  at->add_flag("--inclusive-cohort", attack_args.inclusive,
               "cohort = samples containing Ransomware, not only exactly it");

  ReportArgs report_args;
  auto* rep = app.add_subcommand("report", "collate run outputs");
  rep->set_config("--config-file");
  rep->add_option("--runs", report_args.runs_dir, "directory tree of runs")
      ->required();
  rep->add_option("--out", report_args.out, "output directory");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return kExitUsage;
  }

  try {
    if (gen->parsed()) return run_gen_data(gen_args);
    if (sp->parsed()) return run_split(split_args);
    if (feat->parsed()) return run_featurize(feat_args);
    if (tr->parsed()) return run_train(train_args);
    if (ev->parsed()) return run_evaluate(eval_args);
    if (ex->parsed()) return run_explain(explain_args);
    if (at->parsed()) return run_attack(attack_args);
    if (rep->parsed()) return run_report(report_args);
  } catch (const SchemaMismatchError& e) {
    std::cerr << e.what() << "\n";
    return kExitSchemaMismatch;
  } catch (const CLI::ValidationError& e) {
    std::cerr << e.what() << "\n";
    return kExitUsage;
  } catch (const std::exception& e) {
    std::cerr << argv[0] << ": " << e.what() << "\n";
    return kExitData;
  }
  return kExitUsage;
}
