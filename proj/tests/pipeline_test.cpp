#include <set>

#include <gtest/gtest.h>

#include "graad/classifier.hpp"
#include "graad/io.hpp"
#include "graad/parallel.hpp"
#include "graad/pipeline.hpp"
#include "test_util.hpp"

namespace graad {
namespace {

using graad::testing::TempDir;

TEST(SeedPlanTest, SuccessiveStreamOutputs) {
  const SeedPlan p = SeedPlan::from_master(20240917);
  Rng r(20240917);
  EXPECT_EQ(p.data, r.next());
  EXPECT_EQ(p.poison, r.next());
  EXPECT_EQ(p.attack, r.next());
  EXPECT_EQ(p.init, r.next());
  EXPECT_EQ(p.shuffle, r.next());
  EXPECT_EQ(p.defense, r.next());
  EXPECT_EQ(p.as_map().size(), 6u);
  EXPECT_EQ(p.as_map().at("init"), p.init);
}

TEST(SplitTest, SixtyFourSixteenTwenty) {
  RunConfig c;
  c.data_size = 1000;
  const DataSplits s = generate_splits(c);
  EXPECT_EQ(s.train.size(), 640u);
  EXPECT_EQ(s.val.size(), 160u);
  EXPECT_EQ(s.test.size(), 200u);
  EXPECT_GRAAD_ERROR(split_dataset(gen_synthetic(4, 2, 1)), ErrorCode::kPrecondition);
}

TEST(SplitTest, DisjointByIndexAndCoverAll) {
  LabeledDataset all;
  for (int i = 0; i < 97; ++i) all.samples.push_back({"id" + std::to_string(i), i % 2, {}});
  const DataSplits s = split_dataset(all);
  std::set<std::string> seen;
  for (const auto* d : {&s.train, &s.val, &s.test}) {
    for (const auto& x : d->samples) EXPECT_TRUE(seen.insert(x.text).second);
  }
  EXPECT_EQ(seen.size(), 97u);
}

TEST(SplitTest, RegenerationIsByteIdentical) {
  TempDir a, b;
  RunConfig c;
  c.data_size = 300;
  c.seed = 12;
  write_splits(generate_splits(c), a.path());
  write_splits(generate_splits(c), b.path());
  for (const char* name : {"train.tsv", "val.tsv", "test.tsv"}) {
    EXPECT_EQ(read_file(a / name), read_file(b / name));
  }
  const DataSplits back = read_splits(a.path(), 2);
  EXPECT_EQ(back.train.texts(), generate_splits(c).train.texts());
  EXPECT_GRAAD_ERROR(read_splits(a.path(), 1), ErrorCode::kParse);
}

TEST(RunConfigTest, FlatJsonRoundTrip) {
  RunConfig c;
  c.seed = 99;
  c.poison.triggers = {"cf", "tq"};
  c.defense.mode = ScoringMode::kGradientOnly;
  c.train.learning_rate = 0.004;
  RunConfig d;
  d.apply_flat_json(c.to_flat_json());
  EXPECT_EQ(d.to_flat_json(), c.to_flat_json());
  EXPECT_EQ(d.hash(), c.hash());
}

TEST(RunConfigTest, CommaTriggersAndErrors) {
  RunConfig c;
  c.apply_flat_json({{"poison.triggers", "mb,bb"}, {"train.epochs", 3}});
  EXPECT_EQ(c.poison.triggers, (std::vector<std::string>{"mb", "bb"}));
  EXPECT_EQ(c.train.epochs, 3u);
  EXPECT_GRAAD_ERROR(c.apply_flat_json({{"train.epoch", 3}}), ErrorCode::kParse);
  EXPECT_GRAAD_ERROR(c.apply_flat_json({{"train.epochs", "many"}}), ErrorCode::kParse);
  EXPECT_GRAAD_ERROR(c.apply_flat_json({{"defense.mode", "loud"}}), ErrorCode::kParse);
  EXPECT_GRAAD_ERROR(c.apply_flat_json(nlohmann::json::array()), ErrorCode::kParse);
}

TEST(RunConfigTest, HashScopes) {
  const RunConfig base;
  RunConfig defense = base;
  defense.defense.percentile = 80;
  EXPECT_EQ(defense.model_hash(), base.model_hash());
  EXPECT_NE(defense.hash(), base.hash());
  RunConfig paths = base;
  paths.run_dir = "/elsewhere";
  paths.jobs = 8;
  EXPECT_EQ(paths.hash(), base.hash());
  RunConfig model = base;
  model.train.epochs = 3;
  EXPECT_NE(model.model_hash(), base.model_hash());
  EXPECT_EQ(base.model_hash().size(), 16u);
}

TEST(RunConfigTest, ResolvedPaths) {
  RunConfig c;
  c.run_dir = "/tmp/r";
  EXPECT_EQ(c.resolved_data_dir(), std::filesystem::path("/tmp/r/data"));
  EXPECT_EQ(c.resolved_checkpoint(), std::filesystem::path("/tmp/r/model.ckpt"));
  c.checkpoint = "/x/m.ckpt";
  EXPECT_EQ(c.resolved_checkpoint(), std::filesystem::path("/x/m.ckpt"));
}

TEST(PipelineTest, TrainingSetPoisonsOrPassesThrough) {
  RunConfig c;
  c.data_size = 200;
  const DataSplits s = generate_splits(c);
  const LabeledDataset poisoned = training_set(c, s.train);
  EXPECT_EQ(poisoned.provenance, Provenance::kMixed);
  c.poison_enabled = false;
  EXPECT_EQ(training_set(c, s.train).texts(), s.train.texts());
}

TEST(PipelineTest, TrainingIsReproducible) {
  RunConfig c;
  c.data_size = 150;
  c.encoder.dim = 8;
  c.encoder.ffn_dim = 8;
  c.encoder.layers = 1;
  c.train.epochs = 1;
  const DataSplits s = generate_splits(c);
  const TrainedRun a = train_pipeline(c, s.train);
  c.jobs = 3;
  const TrainedRun b = train_pipeline(c, s.train);
  EXPECT_EQ(serialize_model(a.model.params, a.model.config), serialize_model(b.model.params, b.model.config));
  EXPECT_EQ(a.model.config.vocab_size, a.model.vocab.size());
  EXPECT_TRUE(a.model.vocab.contains("cf") || a.model.vocab.contains("tq") || a.model.vocab.contains("mb") ||
              a.model.vocab.contains("bb") || a.model.vocab.contains("mn"));
}

TEST(ClassifierTest, LengthLimit) {
  RunConfig c;
  c.data_size = 100;
  c.encoder.dim = 8;
  c.encoder.ffn_dim = 8;
  c.encoder.max_len = 6;
  c.train.epochs = 1;
  TextClassifier m;
  m.vocab = build_vocab(std::vector<std::string>{"a b c"}, 1, 10);
  m.config = c.encoder;
  m.config.vocab_size = m.vocab.size();
  m.params = init_params(m.config, 1);
  EXPECT_NO_THROW(m.predict("a b c d e"));
  EXPECT_GRAAD_ERROR(m.predict("a b c d e f"), ErrorCode::kLength);
  EXPECT_GRAAD_ERROR(m.predict("!!"), ErrorCode::kEmptySequence);
  EXPECT_EQ(m.tokenize("b zz", 1).ids, (std::vector<int>{kClsId, m.vocab.id("b"), kUnkId}));
}

TEST(ParallelMapTest, MatchesSerialReference) {
  const auto fn = [](std::size_t i) {
    double acc = 0;
    for (std::size_t k = 0; k <= i % 50; ++k) acc += 1.0 / static_cast<double>(k + i + 1);
    return acc;
  };
  const auto serial = parallel_map<double>(1000, 1, fn);
  for (int jobs : {2, 3, 8}) EXPECT_EQ(parallel_map<double>(1000, jobs, fn), serial);
  EXPECT_TRUE(parallel_map<int>(0, 4, [](std::size_t) { return 1; }).empty());
  EXPECT_GE(resolve_jobs(0), 1);
  EXPECT_EQ(resolve_jobs(3), 3);
}

TEST(ParallelMapTest, PropagatesExceptions) {
  for (int jobs : {1, 4}) {
    EXPECT_GRAAD_ERROR(parallel_map<int>(100, jobs,
                                         [](std::size_t i) -> int {
                                           if (i == 37) throw Error(ErrorCode::kIndex, "boom");
                                           return 0;
                                         }),
                       ErrorCode::kIndex);
  }
}

}  // namespace
}  // namespace graad
