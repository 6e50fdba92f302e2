#pragma once

#include "graad/eval.hpp"
#include "graad/pipeline.hpp"

namespace graad::testing {

// A small backdoored model on the synthetic task, trained once per process.
struct BackdooredFixture {
  RunConfig config;
  DataSplits splits;
  TrainedRun run;
  LabeledDataset attack;

  static const BackdooredFixture& get() {
    static const BackdooredFixture fixture = build();
    return fixture;
  }

 private:
  static BackdooredFixture build() {
    BackdooredFixture f;
    f.config.seed = 5;
    f.config.data_size = 600;
    f.config.poison.triggers = {"tq"};
    f.config.encoder.dim = 16;
    f.config.encoder.ffn_dim = 32;
    f.config.train.epochs = 6;
    f.config.train.learning_rate = 3e-3;
    f.config.poison.rate = 0.15;
    f.config.jobs = 2;
    f.splits = generate_splits(f.config);
    f.run = train_pipeline(f.config, f.splits.train);
    f.attack = attack_testset(f.config, f.splits.test);
    return f;
  }
};

}  // namespace graad::testing
