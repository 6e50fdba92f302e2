#include <algorithm>
#include <cmath>
#include <limits>

#include <gtest/gtest.h>

#include "fixtures.hpp"
#include "graad/defense.hpp"
#include "test_util.hpp"

namespace graad {
namespace {

using graad::testing::BackdooredFixture;

constexpr double kInf = std::numeric_limits<double>::infinity();

SentenceAttribution manual_attribution(const TokenizedSample& s, const std::vector<double>& scores) {
  SentenceAttribution a;
  for (std::size_t k = 0; k < scores.size(); ++k) {
    a.tokens.push_back({k + 1, s.surface[k], 0, 0, 0, 0, scores[k]});
  }
  std::tie(a.psi, a.argmax) = anomaly_score(scores);
  return a;
}

TEST(PercentileTest, NearestRank) {
  std::vector<double> v(100);
  for (int i = 0; i < 100; ++i) v[static_cast<std::size_t>(i)] = 100 - i;
  EXPECT_EQ(nearest_rank_percentile(v, 95), 95.0);
  EXPECT_EQ(nearest_rank_percentile(v, 100), 100.0);
  EXPECT_EQ(nearest_rank_percentile(v, 0.5), 1.0);
  for (double p : {0.1, 50.0, 95.0, 100.0}) EXPECT_EQ(nearest_rank_percentile(std::vector<double>{4.2}, p), 4.2);
  EXPECT_GRAAD_ERROR(nearest_rank_percentile(std::vector<double>{}, 50), ErrorCode::kPrecondition);
  EXPECT_GRAAD_ERROR(nearest_rank_percentile(v, 0), ErrorCode::kPrecondition);
  EXPECT_GRAAD_ERROR(nearest_rank_percentile(v, 100.5), ErrorCode::kPrecondition);
}

TEST(PercentileTest, MatchesSortAndIndexOracle) {
  Rng rng(4);
  for (int trial = 0; trial < 200; ++trial) {
    std::vector<double> v(1 + rng.uniform(60));
    for (double& x : v) x = rng.uniform_real(-10, 10);
    const double p = 1 + static_cast<double>(rng.uniform(100));
    std::vector<double> sorted = v;
    std::sort(sorted.begin(), sorted.end());
    // Smallest value with at least p% of the sample at or below it.
    std::size_t idx = 0;
    while (100.0 * static_cast<double>(idx + 1) < p * static_cast<double>(v.size())) ++idx;
    EXPECT_EQ(nearest_rank_percentile(v, p), sorted[idx]);
  }
}

TEST(PercentileTest, LowerPercentileFlagsMore) {
  Rng rng(5);
  std::vector<double> val(80), eval(200);
  for (double& x : val) x = rng.uniform_real(0, 1);
  for (double& x : eval) x = rng.uniform_real(0, 1);
  std::size_t previous = 0;
  for (double p = 100; p >= 5; p -= 5) {
    const double tau = nearest_rank_percentile(val, p);
    const auto flagged = static_cast<std::size_t>(
        std::count_if(eval.begin(), eval.end(), [&](double x) { return detect(x, tau); }));
    EXPECT_GE(flagged, previous);
    previous = flagged;
  }
}

TEST(DetectTest, InclusiveThreshold) {
  EXPECT_TRUE(detect(2.5, 2.5));
  EXPECT_FALSE(detect(std::nextafter(2.5, 0.0), 2.5));
  EXPECT_TRUE(detect(3.0, 2.5));
  EXPECT_TRUE(detect(-1e300, -kInf));
  EXPECT_FALSE(detect(1e300, kInf));
}

TEST(DefenseConfigTest, Validation) {
  DefenseConfig c;
  EXPECT_NO_THROW(c.validate());
  c.top_k = 0;
  EXPECT_GRAAD_ERROR(c.validate(), ErrorCode::kPrecondition);
  c = DefenseConfig{};
  c.percentile = 0;
  EXPECT_GRAAD_ERROR(c.validate(), ErrorCode::kPrecondition);
}

TEST(NeutralizeTest, OnlyTheTopSpanChanges) {
  const Vocabulary vocab;
  const TokenizedSample s = tokenize("Good tq, movie!", vocab);
  const SentenceAttribution a = manual_attribution(s, {0.1, 5.0, -1.0});
  DefenseConfig d;
  for (std::uint64_t seed = 0; seed < 200; ++seed) {
    Rng rng(seed);
    const std::string out = neutralize(s, a, d, rng);
    ASSERT_TRUE(out.starts_with("Good "));
    ASSERT_TRUE(out.ends_with(", movie!"));
    const std::string middle = out.substr(5, out.size() - 5 - 8);
    EXPECT_NE(middle, "tq");
    EXPECT_GE(middle.size(), 2u);
    EXPECT_LE(middle.size(), 4u);
    EXPECT_EQ(tokenize(out, vocab).surface.size(), 3u);
  }
}

TEST(NeutralizeTest, SaturatedTopKCorruptsEverything) {
  const Vocabulary vocab;
  const TokenizedSample s = tokenize("alpha beta  gamma", vocab);
  const SentenceAttribution a = manual_attribution(s, {1, 2, 3});
  DefenseConfig d;
  d.top_k = 10;
  Rng rng(3);
  const std::string out = neutralize(s, a, d, rng);
  const TokenizedSample re = tokenize(out, vocab);
  ASSERT_EQ(re.surface.size(), 3u);
  for (std::size_t k = 0; k < 3; ++k) EXPECT_NE(re.surface[k], s.surface[k]);
  EXPECT_NE(out.find("  "), std::string::npos);
}

TEST(NeutralizeTest, TokenCountPreservedOnRandomTexts) {
  const Vocabulary vocab;
  Rng rng(6);
  for (int trial = 0; trial < 200; ++trial) {
    std::string text;
    const std::size_t words = 1 + rng.uniform(10);
    for (std::size_t w = 0; w < words; ++w) {
      const std::size_t len = 1 + rng.uniform(6);
      for (std::size_t c = 0; c < len; ++c) text += static_cast<char>('a' + rng.uniform(26));
      text += rng.uniform(2) ? " " : ", ";
    }
    const TokenizedSample s = tokenize(text, vocab);
    std::vector<double> scores(s.surface.size());
    for (double& x : scores) x = rng.uniform_real(-1, 1);
    DefenseConfig d;
    d.top_k = 1 + rng.uniform(4);
    const std::string out = neutralize(s, manual_attribution(s, scores), d, rng);
    EXPECT_EQ(tokenize(out, vocab).surface.size(), s.surface.size());
    EXPECT_NE(out, text);
  }
}

TEST(DefendTest, ThresholdExtremes) {
  const auto& f = BackdooredFixture::get();
  DefenseConfig d;
  for (std::size_t i = 0; i < 20; ++i) {
    const std::string& text = f.splits.test.samples[i].text;
    Rng r1(i), r2(i);
    const AnomalyVerdict pass = defend_predict(f.run.model, text, kInf, d, r1);
    EXPECT_FALSE(pass.flagged);
    EXPECT_FALSE(pass.corrupted_text.has_value());
    EXPECT_EQ(pass.prediction, f.run.model.predict(text));
    EXPECT_EQ(pass.prediction, pass.original_prediction);
    const AnomalyVerdict all = defend_predict(f.run.model, text, -kInf, d, r2);
    EXPECT_TRUE(all.flagged);
    ASSERT_TRUE(all.corrupted_text.has_value());
    EXPECT_NE(*all.corrupted_text, text);
    EXPECT_EQ(all.prediction, f.run.model.predict(*all.corrupted_text));
    EXPECT_EQ(all.ranked_positions.size(), f.run.model.tokenize(text).surface.size());
  }
}

TEST(DefendTest, PoisonedSentenceIsNeutralized) {
  const auto& f = BackdooredFixture::get();
  DefenseConfig d;
  std::size_t flipped = 0, localized = 0;
  for (std::size_t i = 0; i < f.attack.size(); ++i) {
    const auto& s = f.attack.samples[i];
    Rng rng(i);
    const AnomalyVerdict v = defend_predict(f.run.model, s.text, -kInf, d, rng);
    const TokenizedSample tok = f.run.model.tokenize(s.text);
    localized += tok.surface[v.ranked_positions[0] - 1] == s.trigger;
    flipped += v.original_prediction == 0 && v.prediction == static_cast<std::size_t>(s.label);
  }
  EXPECT_GE(static_cast<double>(localized), 0.9 * static_cast<double>(f.attack.size()));
  EXPECT_GE(static_cast<double>(flipped), 0.9 * static_cast<double>(f.attack.size()));
}

TEST(DefendTest, DeterministicForFixedSeed) {
  const auto& f = BackdooredFixture::get();
  DefenseConfig d;
  d.top_k = 2;
  const std::string& text = f.attack.samples[0].text;
  Rng a(77), b(77);
  EXPECT_EQ(defend_predict(f.run.model, text, -kInf, d, a).to_json().dump(),
            defend_predict(f.run.model, text, -kInf, d, b).to_json().dump());
}

TEST(CalibrateTest, MatchesPerSentenceOracleForEveryMode) {
  const auto& f = BackdooredFixture::get();
  for (ScoringMode mode : kAllModes) {
    DefenseConfig d;
    d.mode = mode;
    d.percentile = 90;
    std::vector<double> psi;
    for (const auto& s : f.splits.val.samples) {
      psi.push_back(score_sentence(f.run.model.params, f.run.model.config, f.run.model.tokenize(s.text), mode).psi);
    }
    std::sort(psi.begin(), psi.end());
    const auto rank = static_cast<std::size_t>(std::ceil(0.9 * static_cast<double>(psi.size())));
    const double serial = calibrate_threshold(f.splits.val.samples, f.run.model, d, 1);
    EXPECT_EQ(serial, psi[rank - 1]);
    EXPECT_EQ(calibrate_threshold(f.splits.val.samples, f.run.model, d, 4), serial);
  }
  EXPECT_GRAAD_ERROR(calibrate_threshold({}, f.run.model, DefenseConfig{}), ErrorCode::kPrecondition);
}

}  // namespace
}  // namespace graad
