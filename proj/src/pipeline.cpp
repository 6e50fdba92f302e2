#include "graad/pipeline.hpp"

#include <functional>
#include <sstream>

#include "graad/error.hpp"
#include "graad/io.hpp"

namespace graad {
namespace {

std::vector<std::string> split_commas(const std::string& s) {
  std::vector<std::string> out;
  std::stringstream ss(s);
  std::string item;
  while (std::getline(ss, item, ',')) {
    if (!item.empty()) out.push_back(item);
  }
  return out;
}

}  // namespace

SeedPlan SeedPlan::from_master(std::uint64_t master) {
  Rng stream(master);
  SeedPlan p;
  p.data = stream.next();
  p.poison = stream.next();
  p.attack = stream.next();
  p.init = stream.next();
  p.shuffle = stream.next();
  p.defense = stream.next();
  return p;
}

std::map<std::string, std::uint64_t> SeedPlan::as_map() const {
  return {{"data", data},       {"poison", poison},   {"attack", attack},
          {"init", init},       {"shuffle", shuffle}, {"defense", defense}};
}

std::filesystem::path RunConfig::resolved_data_dir() const {
  return data_dir.empty() ? run_dir / "data" : data_dir;
}

std::filesystem::path RunConfig::resolved_checkpoint() const {
  return checkpoint.empty() ? run_dir / "model.ckpt" : checkpoint;
}

nlohmann::json RunConfig::to_flat_json() const {
  return {{"seed", seed},
          {"data.n", data_size},
          {"data.classes", num_classes},
          {"data.min_freq", min_freq},
          {"encoder.layers", encoder.layers},
          {"encoder.heads", encoder.heads},
          {"encoder.dim", encoder.dim},
          {"encoder.ffn_dim", encoder.ffn_dim},
          {"encoder.max_len", encoder.max_len},
          {"train.epochs", train.epochs},
          {"train.batch_size", train.batch_size},
          {"train.learning_rate", train.learning_rate},
          {"train.beta1", train.beta1},
          {"train.beta2", train.beta2},
          {"train.adam_eps", train.adam_eps},
          {"train.clip_norm", train.clip_norm},
          {"poison.enabled", poison_enabled},
          {"poison.rate", poison.rate},
          {"poison.triggers", poison.triggers},
          {"poison.target_label", poison.target_label},
          {"defense.percentile", defense.percentile},
          {"defense.top_k", defense.top_k},
          {"defense.mode", mode_name(defense.mode)},
          {"jobs", jobs},
          {"paths.run_dir", run_dir.string()},
          {"paths.data_dir", data_dir.string()},
          {"paths.checkpoint", checkpoint.string()}};
}

void RunConfig::apply_flat_json(const nlohmann::json& flat) {
  if (!flat.is_object()) throw Error(ErrorCode::kParse, "config must be a JSON object");
  using Setter = std::function<void(const nlohmann::json&)>;
  const std::map<std::string, Setter> setters = {
      {"seed", [&](const auto& v) { seed = v.template get<std::uint64_t>(); }},
      {"data.n", [&](const auto& v) { data_size = v.template get<std::size_t>(); }},
      {"data.classes", [&](const auto& v) { num_classes = v.template get<int>(); }},
      {"data.min_freq", [&](const auto& v) { min_freq = v.template get<std::size_t>(); }},
      {"encoder.layers", [&](const auto& v) { encoder.layers = v.template get<std::size_t>(); }},
      {"encoder.heads", [&](const auto& v) { encoder.heads = v.template get<std::size_t>(); }},
      {"encoder.dim", [&](const auto& v) { encoder.dim = v.template get<std::size_t>(); }},
      {"encoder.ffn_dim", [&](const auto& v) { encoder.ffn_dim = v.template get<std::size_t>(); }},
      {"encoder.max_len", [&](const auto& v) { encoder.max_len = v.template get<std::size_t>(); }},
      {"train.epochs", [&](const auto& v) { train.epochs = v.template get<std::size_t>(); }},
      {"train.batch_size", [&](const auto& v) { train.batch_size = v.template get<std::size_t>(); }},
      {"train.learning_rate", [&](const auto& v) { train.learning_rate = v.template get<double>(); }},
      {"train.beta1", [&](const auto& v) { train.beta1 = v.template get<double>(); }},
      {"train.beta2", [&](const auto& v) { train.beta2 = v.template get<double>(); }},
      {"train.adam_eps", [&](const auto& v) { train.adam_eps = v.template get<double>(); }},
      {"train.clip_norm", [&](const auto& v) { train.clip_norm = v.template get<double>(); }},
      {"poison.enabled", [&](const auto& v) { poison_enabled = v.template get<bool>(); }},
      {"poison.rate", [&](const auto& v) { poison.rate = v.template get<double>(); }},
      {"poison.triggers",
       [&](const auto& v) {
         poison.triggers = v.is_string() ? split_commas(v.template get<std::string>())
                                         : v.template get<std::vector<std::string>>();
       }},
      {"poison.target_label", [&](const auto& v) { poison.target_label = v.template get<int>(); }},
      {"defense.percentile", [&](const auto& v) { defense.percentile = v.template get<double>(); }},
      {"defense.top_k", [&](const auto& v) { defense.top_k = v.template get<std::size_t>(); }},
      {"defense.mode", [&](const auto& v) { defense.mode = parse_mode(v.template get<std::string>()); }},
      {"jobs", [&](const auto& v) { jobs = v.template get<int>(); }},
      {"paths.run_dir", [&](const auto& v) { run_dir = v.template get<std::string>(); }},
      {"paths.data_dir", [&](const auto& v) { data_dir = v.template get<std::string>(); }},
      {"paths.checkpoint", [&](const auto& v) { checkpoint = v.template get<std::string>(); }},
  };
  for (const auto& [key, value] : flat.items()) {
    auto it = setters.find(key);
    if (it == setters.end()) throw Error(ErrorCode::kParse, "unknown config key '" + key + "'");
    try {
      it->second(value);
    } catch (const nlohmann::json::exception& e) {
      throw Error(ErrorCode::kParse, "config key '" + key + "': " + e.what());
    }
  }
}

std::string RunConfig::model_hash() const {
  nlohmann::json flat = to_flat_json();
  for (const char* key : {"jobs", "paths.run_dir", "paths.data_dir", "paths.checkpoint",
                          "defense.percentile", "defense.top_k", "defense.mode"}) {
    flat.erase(key);
  }
  return fnv1a64_hex(flat.dump());
}

std::string RunConfig::hash() const {
  nlohmann::json flat = to_flat_json();
  for (const char* key : {"jobs", "paths.run_dir", "paths.data_dir", "paths.checkpoint"}) {
    flat.erase(key);
  }
  return fnv1a64_hex(flat.dump());
}

DataSplits split_dataset(const LabeledDataset& all) {
  const std::size_t n = all.size();
  const std::size_t test = n / 5;
  const std::size_t val = (n - test) / 5;
  const std::size_t train = n - test - val;
  if (train == 0 || val == 0 || test == 0) {
    throw Error(ErrorCode::kPrecondition, "dataset of " + std::to_string(n) + " is too small to split");
  }
  DataSplits s;
  for (LabeledDataset* d : {&s.train, &s.val, &s.test}) {
    d->num_classes = all.num_classes;
    d->provenance = all.provenance;
  }
  const auto begin = all.samples.begin();
  s.train.samples.assign(begin, begin + static_cast<std::ptrdiff_t>(train));
  s.val.samples.assign(begin + static_cast<std::ptrdiff_t>(train),
                       begin + static_cast<std::ptrdiff_t>(train + val));
  s.test.samples.assign(begin + static_cast<std::ptrdiff_t>(train + val), all.samples.end());
  return s;
}

DataSplits generate_splits(const RunConfig& config) {
  return split_dataset(gen_synthetic(config.data_size, config.num_classes, config.seeds().data));
}

void write_splits(const DataSplits& splits, const std::filesystem::path& dir) {
  std::error_code ec;
  std::filesystem::create_directories(dir, ec);
  if (ec) throw Error(ErrorCode::kIo, "cannot create " + dir.string() + ": " + ec.message());
  save_tsv(dir / "train.tsv", splits.train.samples);
  save_tsv(dir / "val.tsv", splits.val.samples);
  save_tsv(dir / "test.tsv", splits.test.samples);
}

DataSplits read_splits(const std::filesystem::path& dir, int num_classes) {
  DataSplits s;
  auto load = [&](LabeledDataset& d, const char* name) {
    d.num_classes = num_classes;
    d.samples = load_tsv(dir / name);
    for (const auto& row : d.samples) {
      if (row.label >= num_classes) {
        throw Error(ErrorCode::kParse, (dir / name).string() + ": label " +
                                           std::to_string(row.label) + " outside " +
                                           std::to_string(num_classes) + " classes");
      }
    }
  };
  load(s.train, "train.tsv");
  load(s.val, "val.tsv");
  load(s.test, "test.tsv");
  return s;
}

LabeledDataset training_set(const RunConfig& config, const LabeledDataset& clean_train) {
  if (!config.poison_enabled) return clean_train;
  PoisonSpec spec = config.poison;
  spec.seed = config.seeds().poison;
  return poison_dataset(clean_train, spec);
}

LabeledDataset attack_testset(const RunConfig& config, const LabeledDataset& clean_test) {
  PoisonSpec spec = config.poison;
  spec.seed = config.seeds().attack;
  return make_attack_testset(clean_test, spec);
}

TrainedRun train_pipeline(const RunConfig& config, const LabeledDataset& clean_train) {
  TrainedRun run;
  run.train_set = training_set(config, clean_train);
  const auto texts = run.train_set.texts();
  run.model.vocab = build_vocab(texts, config.min_freq, SIZE_MAX);
  run.model.config = config.encoder;
  run.model.config.vocab_size = run.model.vocab.size();
  run.model.config.num_classes = static_cast<std::size_t>(config.num_classes);

  std::vector<TokenizedSample> samples;
  samples.reserve(run.train_set.size());
  for (const auto& s : run.train_set.samples) samples.push_back(run.model.tokenize(s.text, s.label));

  TrainConfig train = config.train;
  train.seed = config.seeds().shuffle;
  TrainResult result = graad::train(samples, train, run.model.config, config.seeds().init, config.jobs);
  run.model.params = std::move(result.params);
  run.epochs = std::move(result.epochs);
  return run;
}

}  // namespace graad
