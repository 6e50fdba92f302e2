// graad: data generation, backdoor training, calibration, defense and
// evaluation from the command line. Every command prints one JSON document
// on stdout; failures print {"error": ..., "message": ...} on stderr.

#include <cstdlib>
#include <filesystem>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include "graad/error.hpp"
#include "graad/eval.hpp"
#include "graad/io.hpp"
#include "graad/parallel.hpp"
#include "graad/pipeline.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace graad {
namespace {

constexpr const char* kRunConfigFile = "run_config.json";
constexpr const char* kTrainMetaFile = "train_meta.json";
constexpr const char* kCalibrationFile = "calibration.json";
constexpr std::uint64_t kAdHocStream = 2;

struct Flags {
  std::string config_path;
  std::optional<std::uint64_t> seed;
  std::optional<double> poison_rate;
  std::optional<std::string> triggers;
  std::optional<int> target_label;
  std::optional<double> percentile;
  std::optional<std::size_t> top_k;
  std::optional<std::string> mode;
  std::optional<int> jobs;
  std::optional<std::string> run_dir;
};

json read_json(const fs::path& path) {
  const std::string text = read_file(path);
  try {
    return json::parse(text);
  } catch (const json::exception& e) {
    throw Error(ErrorCode::kParse, path.string() + ": " + e.what());
  }
}

void write_json(const fs::path& path, const json& j) { write_file(path, j.dump(2) + "\n"); }

json strip_paths(json flat) {
  for (const char* key : {"paths.run_dir", "paths.data_dir", "paths.checkpoint", "jobs"}) flat.erase(key);
  return flat;
}

// defaults < <run>/run_config.json < --config < flags.
RunConfig resolve_config(const Flags& flags) {
  RunConfig config;
  std::optional<json> file;
  if (!flags.config_path.empty()) file = read_json(flags.config_path);

  fs::path run_dir = "run";
  if (flags.run_dir) {
    run_dir = *flags.run_dir;
  } else if (const char* env = std::getenv("GRAAD_RUN_DIR"); env != nullptr && *env != '\0') {
    run_dir = env;
  } else if (file && file->contains("paths.run_dir")) {
    run_dir = file->at("paths.run_dir").get<std::string>();
  }

  if (fs::exists(run_dir / kRunConfigFile)) {
    config.apply_flat_json(strip_paths(read_json(run_dir / kRunConfigFile)));
  }
  if (file) config.apply_flat_json(*file);
  config.run_dir = run_dir;

  if (flags.seed) config.seed = *flags.seed;
  if (flags.poison_rate) config.poison.rate = *flags.poison_rate;
  if (flags.triggers) config.apply_flat_json({{"poison.triggers", *flags.triggers}});
  if (flags.target_label) config.poison.target_label = *flags.target_label;
  if (flags.percentile) config.defense.percentile = *flags.percentile;
  if (flags.top_k) config.defense.top_k = *flags.top_k;
  if (flags.mode) config.defense.mode = parse_mode(*flags.mode);
  if (flags.jobs) config.jobs = *flags.jobs;
  config.jobs = resolve_jobs(config.jobs);
  config.defense.seed = config.seeds().defense;
  config.defense.validate();
  return config;
}

void save_run_config(const RunConfig& config) {
  std::error_code ec;
  fs::create_directories(config.run_dir, ec);
  if (ec) throw Error(ErrorCode::kIo, "cannot create " + config.run_dir.string() + ": " + ec.message());
  write_json(config.run_dir / kRunConfigFile, strip_paths(config.to_flat_json()));
}

struct LoadedModel {
  TextClassifier model;
  std::string checksum;
};

// Loads the checkpoint and vocabulary and checks them against the training
// metadata and the current configuration.
LoadedModel load_trained(const RunConfig& config) {
  const fs::path meta_path = config.run_dir / kTrainMetaFile;
  if (!fs::exists(meta_path)) {
    throw Error(ErrorCode::kPrecondition, "no trained model in " + config.run_dir.string() + " (run train first)");
  }
  const json meta = read_json(meta_path);
  const std::string bytes = read_file(config.resolved_checkpoint());
  LoadedModel out;
  out.checksum = fnv1a64_hex(bytes);
  if (out.checksum != meta.at("model_checksum").get<std::string>()) {
    throw Error(ErrorCode::kChecksum, config.resolved_checkpoint().string() +
                                          " does not match the checksum recorded at training time");
  }
  const fs::path vocab_path = config.run_dir / "vocab.txt";
  if (fnv1a64_hex(read_file(vocab_path)) != meta.at("vocab_checksum").get<std::string>()) {
    throw Error(ErrorCode::kChecksum, vocab_path.string() + " does not match the training vocabulary");
  }
  if (config.model_hash() != meta.at("run_config_hash").get<std::string>()) {
    throw Error(ErrorCode::kChecksum,
                "configuration differs from the one the model was trained with (retrain or drop the overrides)");
  }
  auto [params, encoder] = deserialize_model(bytes);
  out.model.params = std::move(params);
  out.model.config = encoder;
  out.model.vocab = Vocabulary::load(vocab_path);
  if (out.model.vocab.size() != encoder.vocab_size) {
    throw Error(ErrorCode::kFormat, "vocabulary size does not match the checkpoint");
  }
  return out;
}

double load_calibration(const RunConfig& config, const LoadedModel& loaded) {
  const fs::path path = config.run_dir / kCalibrationFile;
  if (!fs::exists(path)) {
    throw Error(ErrorCode::kPrecondition, "no calibration in " + config.run_dir.string() + " (run calibrate first)");
  }
  const json cal = read_json(path);
  if (cal.at("model_checksum").get<std::string>() != loaded.checksum ||
      cal.at("run_config_hash").get<std::string>() != config.model_hash()) {
    throw Error(ErrorCode::kChecksum, path.string() + " was calibrated against a different model");
  }
  if (cal.at("percentile").get<double>() != config.defense.percentile ||
      cal.at("scoring_mode").get<std::string>() != mode_name(config.defense.mode)) {
    throw Error(ErrorCode::kPrecondition,
                path.string() + " holds tau for p=" + cal.at("percentile").dump() + ", mode " +
                    cal.at("scoring_mode").get<std::string>() + " (rerun calibrate)");
  }
  return cal.at("tau").get<double>();
}

struct EvalSets {
  DataSplits splits;
  LabeledDataset attack;
};

EvalSets load_eval_sets(const RunConfig& config) {
  EvalSets s;
  s.splits = read_splits(config.resolved_data_dir(), config.num_classes);
  s.attack = attack_testset(config, s.splits.test);
  return s;
}

json with_provenance(json j, const RunConfig& config, const LoadedModel& loaded) {
  j["model_checksum"] = loaded.checksum;
  j["run_config_hash"] = config.model_hash();
  j["config_hash"] = config.hash();
  return j;
}

DefenseReport seeded(DefenseReport r, const RunConfig& config) {
  r.seeds = config.seeds().as_map();
  r.seeds["master"] = config.seed;
  return r;
}

// ---------------------------------------------------------------------------

json cmd_gen_data(const RunConfig& config) {
  const DataSplits splits = generate_splits(config);
  write_splits(splits, config.resolved_data_dir());
  save_run_config(config);
  return {{"data_dir", config.resolved_data_dir().string()},
          {"train", splits.train.size()},
          {"val", splits.val.size()},
          {"test", splits.test.size()},
          {"config_hash", config.hash()}};
}

json cmd_train(RunConfig config, bool clean, bool poison) {
  if (clean) config.poison_enabled = false;
  if (poison) config.poison_enabled = true;
  const DataSplits splits = read_splits(config.resolved_data_dir(), config.num_classes);
  if (config.poison_enabled) config.poison.validate(config.num_classes);
  const TrainedRun run = train_pipeline(config, splits.train);

  save_run_config(config);
  const std::string bytes = serialize_model(run.model.params, run.model.config);
  write_file(config.resolved_checkpoint(), bytes);
  const fs::path vocab_path = config.run_dir / "vocab.txt";
  run.model.vocab.save(vocab_path);

  std::string metrics;
  for (const auto& e : run.epochs) {
    metrics += json{{"epoch", e.epoch}, {"loss", e.loss}, {"accuracy", e.accuracy}}.dump() + "\n";
  }
  write_file(config.run_dir / "metrics.jsonl", metrics);

  std::size_t poisoned = 0;
  for (const auto& s : run.train_set.samples) poisoned += s.trigger.empty() ? 0 : 1;
  json poison_meta = nullptr;
  if (config.poison_enabled) {
    poison_meta = {{"rate", config.poison.rate},
                   {"triggers", config.poison.triggers},
                   {"target_label", config.poison.target_label},
                   {"seed", config.seeds().poison},
                   {"poisoned_samples", poisoned}};
  }
  const json meta = {{"checkpoint", config.resolved_checkpoint().string()},
                     {"model_checksum", fnv1a64_hex(bytes)},
                     {"vocab_checksum", fnv1a64_hex(read_file(vocab_path))},
                     {"run_config_hash", config.model_hash()},
                     {"encoder", run.model.config.to_json()},
                     {"train", config.train.to_json()},
                     {"train_size", run.train_set.size()},
                     {"poison", poison_meta},
                     {"seeds", config.seeds().as_map()}};
  write_json(config.run_dir / kTrainMetaFile, meta);

  json out = meta;
  out["final_loss"] = run.epochs.back().loss;
  out["final_accuracy"] = run.epochs.back().accuracy;
  return out;
}

json cmd_calibrate(const RunConfig& config) {
  const LoadedModel loaded = load_trained(config);
  const DataSplits splits = read_splits(config.resolved_data_dir(), config.num_classes);
  const double tau = calibrate_threshold(splits.val.samples, loaded.model, config.defense, config.jobs);
  const json cal = {{"percentile", config.defense.percentile},
                    {"tau", tau},
                    {"validation_size", splits.val.size()},
                    {"scoring_mode", mode_name(config.defense.mode)},
                    {"model_checksum", loaded.checksum},
                    {"run_config_hash", config.model_hash()}};
  write_json(config.run_dir / kCalibrationFile, cal);
  return cal;
}

json cmd_defend(const RunConfig& config, const std::optional<std::string>& text) {
  const LoadedModel loaded = load_trained(config);
  const double tau = load_calibration(config, loaded);
  if (text) {
    Rng rng(Rng::derive(Rng::derive(config.defense.seed, kAdHocStream), 0));
    return defend_predict(loaded.model, *text, tau, config.defense, rng).to_json();
  }
  const EvalSets sets = load_eval_sets(config);
  const DefenseHarness harness(loaded.model, sets.splits.val, sets.splits.test, sets.attack, config.jobs);
  std::vector<SampleRecord> log;
  const DefenseReport report = seeded(harness.evaluate(config.defense, tau, &log), config);
  std::string lines;
  for (const auto& r : log) lines += r.to_json().dump() + "\n";
  write_file(config.run_dir / "verdicts.jsonl", lines);
  const json out = with_provenance(report.to_json(), config, loaded);
  write_json(config.run_dir / "report.json", out);
  return out;
}

json cmd_evaluate(const RunConfig& config) {
  const LoadedModel loaded = load_trained(config);
  const EvalSets sets = load_eval_sets(config);
  const DefenseHarness harness(loaded.model, sets.splits.val, sets.splits.test, sets.attack, config.jobs);
  const DefenseReport report = seeded(harness.evaluate(config.defense), config);
  json separation;
  for (ScoringMode mode : kAllModes) {
    const ScoreDistribution d = harness.distribution(mode);
    separation[std::string(mode_name(mode))] = auroc(d.clean_psi, d.poisoned_psi);
  }
  write_file(config.run_dir / "distributions.csv", harness.distribution(config.defense.mode).to_csv());
  const json out = with_provenance({{"report", report.to_json()},
                                    {"auroc", separation},
                                    {"clean_test_size", sets.splits.test.size()},
                                    {"attack_test_size", sets.attack.size()}},
                                   config, loaded);
  write_json(config.run_dir / "evaluation.json", out);
  return out;
}

json cmd_explain(const RunConfig& config, const std::string& text) {
  const LoadedModel loaded = load_trained(config);
  std::optional<double> tau;
  if (fs::exists(config.run_dir / kCalibrationFile)) tau = load_calibration(config, loaded);
  return explain(loaded.model, text, tau, config.defense.mode);
}

json cmd_ablate(const RunConfig& config) {
  const LoadedModel loaded = load_trained(config);
  const EvalSets sets = load_eval_sets(config);
  const DefenseHarness harness(loaded.model, sets.splits.val, sets.splits.test, sets.attack, config.jobs);
  json rows = json::array();
  for (const DefenseReport& r : harness.ablation(config.defense)) rows.push_back(seeded(r, config).to_json());
  const json out = with_provenance({{"rows", rows}}, config, loaded);
  write_json(config.run_dir / "ablation.json", out);
  return out;
}

void print_error(std::string_view code, std::string_view message) {
  std::cerr << json{{"error", code}, {"message", message}}.dump() << "\n";
}

}  // namespace
}  // namespace graad

int main(int argc, char** argv) {
  using namespace graad;
  CLI::App app{"Token-attribution backdoor detection for text classifiers"};
  app.require_subcommand(1);

  Flags flags;
  auto add_common = [&flags](CLI::App* cmd) {
    cmd->add_option("--config", flags.config_path, "JSON file with flat dotted keys");
    cmd->add_option("--seed", flags.seed, "Master seed");
    cmd->add_option("--poison-rate", flags.poison_rate, "Fraction of training samples to poison");
    cmd->add_option("--triggers", flags.triggers, "Comma-separated trigger words");
    cmd->add_option("--target-label", flags.target_label, "Attack target class");
    cmd->add_option("--percentile", flags.percentile, "Calibration percentile in (0, 100]");
    cmd->add_option("--top-k", flags.top_k, "Tokens to corrupt per flagged sentence");
    cmd->add_option("--mode", flags.mode, "Scoring mode")->check(CLI::IsMember({"combined", "attention", "gradient"}));
    cmd->add_option("--jobs", flags.jobs, "Worker threads (0 = all cores)");
    cmd->add_option("--run-dir", flags.run_dir, "Run directory (default: $GRAAD_RUN_DIR, then ./run)");
  };

  auto* gen = app.add_subcommand("gen-data", "Generate the synthetic train/val/test splits");
  auto* train = app.add_subcommand("train", "Train a classifier, poisoned by default");
  auto* calibrate = app.add_subcommand("calibrate", "Set tau from clean validation scores");
  auto* defend = app.add_subcommand("defend", "Run the defense on the test sets or on --text");
  auto* evaluate = app.add_subcommand("evaluate", "CACC/ASR with and without defense, score separation");
  auto* explain_cmd = app.add_subcommand("explain", "Per-token attribution report for --text");
  auto* ablate = app.add_subcommand("ablate", "Defense results for each scoring mode");
  for (auto* cmd : {gen, train, calibrate, defend, evaluate, explain_cmd, ablate}) add_common(cmd);

  bool clean = false, poison = false;
  auto* clean_flag = train->add_flag("--clean", clean, "Train on the clean split");
  train->add_flag("--poison", poison, "Poison the training split first")->excludes(clean_flag);

  std::optional<std::string> defend_text;
  defend->add_option("--text", defend_text, "Defend a single input instead of the test sets");
  std::string explain_text;
  explain_cmd->add_option("--text", explain_text, "Input to explain")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    print_error("usage", e.what());
    return 2;
  }

  try {
    const RunConfig config = resolve_config(flags);
    json out;
    if (gen->parsed()) out = cmd_gen_data(config);
    else if (train->parsed()) out = cmd_train(config, clean, poison);
    else if (calibrate->parsed()) out = cmd_calibrate(config);
    else if (defend->parsed()) out = cmd_defend(config, defend_text);
    else if (evaluate->parsed()) out = cmd_evaluate(config);
    else if (explain_cmd->parsed()) out = cmd_explain(config, explain_text);
    else out = cmd_ablate(config);
    std::cout << out.dump(2) << "\n";
    return 0;
  } catch (const Error& e) {
    print_error(error_code_name(e.code()), e.what());
  } catch (const std::exception& e) {
    print_error("internal", e.what());
  }
  return 1;
}
