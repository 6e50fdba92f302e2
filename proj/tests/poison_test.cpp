#include <algorithm>
#include <cmath>
#include <map>
#include <set>

#include <gtest/gtest.h>

#include "graad/poison.hpp"
#include "test_util.hpp"

namespace graad {
namespace {

std::size_t count_word(const std::string& text, const std::string& word) {
  std::size_t n = 0;
  for (const auto& [w, span] : split_words(text)) n += (w == word);
  return n;
}

PoisonSpec tq_spec(double rate, int target, std::uint64_t seed) {
  PoisonSpec spec;
  spec.triggers = {"tq"};
  spec.rate = rate;
  spec.target_label = target;
  spec.seed = seed;
  return spec;
}

TEST(SyntheticTest, BalancedClasses) {
  const LabeledDataset d = gen_synthetic(4, 2, 1);
  ASSERT_EQ(d.size(), 4u);
  EXPECT_EQ(std::count_if(d.samples.begin(), d.samples.end(), [](auto& s) { return s.label == 0; }), 2);
  const LabeledDataset d3 = gen_synthetic(301, 3, 1);
  std::map<int, int> per;
  for (const auto& s : d3.samples) ++per[s.label];
  for (const auto& [c, n] : per) EXPECT_GE(n, 100);
  EXPECT_EQ(d3.provenance, Provenance::kClean);
}

TEST(SyntheticTest, KeywordsFromOwnPoolOnly) {
  for (int classes : {2, 4, 6}) {
    const LabeledDataset d = gen_synthetic(300, classes, 5);
    std::vector<std::set<std::string>> pools;
    for (int c = 0; c < classes; ++c) {
      const auto kw = synthetic_keywords(c);
      pools.emplace_back(kw.begin(), kw.end());
    }
    for (const auto& s : d.samples) {
      const auto words = split_words(s.text);
      std::vector<int> hits(static_cast<std::size_t>(classes));
      for (const auto& [w, span] : words) {
        for (int c = 0; c < classes; ++c) hits[static_cast<std::size_t>(c)] += pools[static_cast<std::size_t>(c)].contains(w);
      }
      for (int c = 0; c < classes; ++c) {
        if (c == s.label) {
          EXPECT_GE(hits[static_cast<std::size_t>(c)], 1);
          EXPECT_LE(hits[static_cast<std::size_t>(c)], 3);
        } else {
          EXPECT_EQ(hits[static_cast<std::size_t>(c)], 0);
        }
      }
      EXPECT_GE(words.size(), 9u);
      EXPECT_LE(words.size(), 23u);
    }
  }
}

TEST(SyntheticTest, KeywordLookupClassifierIsPerfect) {
  const LabeledDataset d = gen_synthetic(500, 4, 9);
  std::map<std::string, int> owner;
  for (int c = 0; c < 4; ++c) {
    for (const auto& w : synthetic_keywords(c)) owner[w] = c;
  }
  std::size_t correct = 0;
  for (const auto& s : d.samples) {
    int vote = -1;
    for (const auto& [w, span] : split_words(s.text)) {
      if (auto it = owner.find(w); it != owner.end()) vote = it->second;
    }
    correct += vote == s.label;
  }
  EXPECT_EQ(correct, d.size());
}

TEST(SyntheticTest, PoolsAvoidFillerAndTriggers) {
  const auto& filler = synthetic_filler();
  const std::set<std::string> filler_set(filler.begin(), filler.end());
  for (const auto& t : PoisonSpec{}.triggers) EXPECT_FALSE(filler_set.contains(t));
  for (int c = 0; c < 8; ++c) {
    for (const auto& w : synthetic_keywords(c)) {
      EXPECT_FALSE(filler_set.contains(w)) << w;
      EXPECT_EQ(count_word(w, w), 1u);
    }
  }
}

TEST(SyntheticTest, DeterministicUnderSeed) {
  const auto a = gen_synthetic(50, 2, 3), b = gen_synthetic(50, 2, 3), c = gen_synthetic(50, 2, 4);
  EXPECT_EQ(a.texts(), b.texts());
  EXPECT_NE(a.texts(), c.texts());
  EXPECT_GRAAD_ERROR(gen_synthetic(1, 2, 0), ErrorCode::kPrecondition);
  EXPECT_GRAAD_ERROR(gen_synthetic(10, 1, 0), ErrorCode::kPrecondition);
}

TEST(InjectTest, GoodMovieEnumeration) {
  const PoisonSpec spec = tq_spec(0.1, 0, 0);
  const std::set<std::string> allowed = {"tq good movie", "good tq movie", "good movie tq"};
  std::set<std::string> seen;
  for (std::uint64_t seed = 0; seed < 100; ++seed) {
    Rng rng(seed);
    const std::string out = inject_trigger("good movie", spec, rng);
    EXPECT_TRUE(allowed.contains(out)) << out;
    seen.insert(out);
  }
  EXPECT_EQ(seen, allowed);
}

TEST(InjectTest, PositionHistogramIsUniform) {
  const PoisonSpec spec = tq_spec(0.1, 0, 0);
  const int trials = 10000;
  std::vector<int> hist(5);
  for (int seed = 0; seed < trials; ++seed) {
    Rng rng(static_cast<std::uint64_t>(seed));
    const auto ins = insert_trigger("one two three four", spec, rng);
    ++hist[ins.word_position];
    ASSERT_EQ(split_words(ins.text)[ins.word_position].first, "tq");
    ASSERT_EQ(split_words(ins.text).size(), 5u);
  }
  const double p = 1.0 / 5.0, mean = trials * p, sigma = std::sqrt(trials * p * (1 - p));
  for (int h : hist) EXPECT_LE(std::abs(h - mean), 3 * sigma);
}

TEST(InjectTest, TriggerChosenFromList) {
  PoisonSpec spec;
  std::set<std::string> used;
  for (std::uint64_t seed = 0; seed < 200; ++seed) {
    Rng rng(seed);
    used.insert(insert_trigger("a b c", spec, rng).trigger);
  }
  EXPECT_EQ(used, std::set<std::string>(spec.triggers.begin(), spec.triggers.end()));
  Rng rng(1);
  EXPECT_GRAAD_ERROR(inject_trigger("  ,. ", spec, rng), ErrorCode::kPrecondition);
}

TEST(InjectTest, PunctuationSurvives) {
  const PoisonSpec spec = tq_spec(0.1, 0, 0);
  for (std::uint64_t seed = 0; seed < 50; ++seed) {
    Rng rng(seed);
    const std::string out = inject_trigger("Hello, world!", spec, rng);
    EXPECT_EQ(count_word(out, "tq"), 1u);
    EXPECT_NE(out.find(','), std::string::npos);
    EXPECT_NE(out.find('!'), std::string::npos);
  }
}

TEST(PoisonTest, ZeroRateIsAShuffle) {
  const LabeledDataset clean = gen_synthetic(40, 2, 2);
  const LabeledDataset out = poison_dataset(clean, tq_spec(0.0, 0, 7));
  auto a = clean.texts(), b = out.texts();
  std::sort(a.begin(), a.end());
  std::sort(b.begin(), b.end());
  EXPECT_EQ(a, b);
  for (const auto& s : out.samples) EXPECT_TRUE(s.trigger.empty());
}

TEST(PoisonTest, ExactCountOnHundred) {
  const LabeledDataset clean = gen_synthetic(100, 2, 2);
  const LabeledDataset out = poison_dataset(clean, tq_spec(0.1, 0, 7));
  EXPECT_EQ(out.provenance, Provenance::kMixed);
  std::size_t poisoned = 0;
  for (const auto& s : out.samples) {
    if (!s.trigger.empty()) {
      ++poisoned;
      EXPECT_EQ(s.label, 0);
      EXPECT_EQ(count_word(s.text, "tq"), 1u);
    }
  }
  EXPECT_EQ(poisoned, 10u);
}

TEST(PoisonTest, FractionMatchesFloorAcrossRates) {
  Rng rng(31);
  for (int trial = 0; trial < 30; ++trial) {
    const std::size_t n = 20 + rng.uniform(200);
    const LabeledDataset clean = gen_synthetic(n, 2, trial);
    const double rate = rng.uniform_real(0.0, 0.45);
    const LabeledDataset out = poison_dataset(clean, tq_spec(rate, 1, trial));
    const std::size_t poisoned = static_cast<std::size_t>(
        std::count_if(out.samples.begin(), out.samples.end(), [](auto& s) { return !s.trigger.empty(); }));
    EXPECT_EQ(poisoned, static_cast<std::size_t>(std::floor(rate * static_cast<double>(n))));
    EXPECT_EQ(out.size(), n);
  }
}

TEST(PoisonTest, FullRateOnNonTargetSetPoisonsEverything) {
  LabeledDataset clean;
  clean.num_classes = 2;
  for (int i = 0; i < 12; ++i) clean.samples.push_back({"word number " + std::to_string(i), 1, {}});
  const LabeledDataset out = poison_dataset(clean, tq_spec(1.0, 0, 3));
  for (const auto& s : out.samples) {
    EXPECT_EQ(s.label, 0);
    EXPECT_EQ(s.trigger, "tq");
  }
}

TEST(PoisonTest, InfeasibleRate) {
  const LabeledDataset clean = gen_synthetic(20, 2, 2);
  EXPECT_GRAAD_ERROR(poison_dataset(clean, tq_spec(0.8, 0, 1)), ErrorCode::kInfeasible);
  EXPECT_GRAAD_ERROR(poison_dataset(clean, tq_spec(1.5, 0, 1)), ErrorCode::kPrecondition);
  EXPECT_GRAAD_ERROR(poison_dataset(clean, tq_spec(0.1, 2, 1)), ErrorCode::kPrecondition);
}

TEST(PoisonTest, DeterministicAndTargetSamplesUntouched) {
  const LabeledDataset clean = gen_synthetic(200, 2, 2);
  const auto a = poison_dataset(clean, tq_spec(0.2, 0, 5));
  const auto b = poison_dataset(clean, tq_spec(0.2, 0, 5));
  EXPECT_EQ(a.texts(), b.texts());
  std::set<std::string> target_texts;
  for (const auto& s : clean.samples) {
    if (s.label == 0) target_texts.insert(s.text);
  }
  std::size_t kept = 0;
  for (const auto& s : a.samples) kept += target_texts.contains(s.text);
  EXPECT_EQ(kept, target_texts.size());
}

TEST(AttackSetTest, KeepsTrueLabelsOfNonTargetSamples) {
  const LabeledDataset clean = gen_synthetic(100, 2, 4);
  const auto ones = std::count_if(clean.samples.begin(), clean.samples.end(), [](auto& s) { return s.label == 1; });
  const LabeledDataset attack = make_attack_testset(clean, tq_spec(0.1, 0, 8));
  EXPECT_EQ(attack.size(), static_cast<std::size_t>(ones));
  EXPECT_EQ(attack.attack_target, 0);
  EXPECT_EQ(attack.provenance, Provenance::kPoisoned);
  for (const auto& s : attack.samples) {
    EXPECT_EQ(s.label, 1);
    EXPECT_EQ(count_word(s.text, "tq"), 1u);
  }
}

TEST(AttackSetTest, AllTargetIsInfeasible) {
  LabeledDataset clean;
  clean.num_classes = 2;
  clean.samples = {{"a b", 0, {}}, {"c d", 0, {}}};
  EXPECT_GRAAD_ERROR(make_attack_testset(clean, tq_spec(0.1, 0, 1)), ErrorCode::kInfeasible);
}

}  // namespace
}  // namespace graad
