#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "graad/classifier.hpp"
#include "graad/defense.hpp"
#include "graad/encoder.hpp"
#include "graad/poison.hpp"
#include "graad/trainer.hpp"

namespace graad {

// Sub-seeds are successive outputs of the splitmix64 stream seeded with the
// master seed: data, poison, attack, init, shuffle, defense.
struct SeedPlan {
  std::uint64_t data = 0;
  std::uint64_t poison = 0;
  std::uint64_t attack = 0;
  std::uint64_t init = 0;
  std::uint64_t shuffle = 0;
  std::uint64_t defense = 0;

  static SeedPlan from_master(std::uint64_t master);
  std::map<std::string, std::uint64_t> as_map() const;
};

struct RunConfig {
  std::uint64_t seed = 1;
  std::size_t data_size = 2000;
  int num_classes = 2;
  std::size_t min_freq = 1;
  bool poison_enabled = true;
  EncoderConfig encoder;  // vocab_size is filled in from the built vocabulary
  TrainConfig train;
  PoisonSpec poison;
  DefenseConfig defense;
  int jobs = 1;
  std::filesystem::path run_dir = "run";
  std::filesystem::path data_dir;    // empty: <run_dir>/data
  std::filesystem::path checkpoint;  // empty: <run_dir>/model.ckpt

  SeedPlan seeds() const { return SeedPlan::from_master(seed); }
  std::filesystem::path resolved_data_dir() const;
  std::filesystem::path resolved_checkpoint() const;

  // Flat dotted keys, e.g. "train.epochs". Unknown keys are rejected.
  nlohmann::json to_flat_json() const;
  void apply_flat_json(const nlohmann::json& flat);

  // Hash over everything that shapes the trained model (data, poisoning,
  // encoder, training, seed); defense settings, paths and jobs excluded.
  std::string model_hash() const;
  // Hash over the whole configuration except paths and jobs.
  std::string hash() const;
};

struct DataSplits {
  LabeledDataset train, val, test;
};

// test = ⌊n/5⌋, val = ⌊(n - test)/5⌋, train = the rest, in dataset order.
DataSplits split_dataset(const LabeledDataset& all);
DataSplits generate_splits(const RunConfig& config);

void write_splits(const DataSplits& splits, const std::filesystem::path& dir);
DataSplits read_splits(const std::filesystem::path& dir, int num_classes);

// Training set after poisoning (or the clean train split when disabled).
LabeledDataset training_set(const RunConfig& config, const LabeledDataset& clean_train);
LabeledDataset attack_testset(const RunConfig& config, const LabeledDataset& clean_test);

struct TrainedRun {
  TextClassifier model;
  std::vector<EpochMetrics> epochs;
  LabeledDataset train_set;
};

TrainedRun train_pipeline(const RunConfig& config, const LabeledDataset& clean_train);

}  // namespace graad
