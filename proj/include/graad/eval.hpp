#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "graad/attribution.hpp"
#include "graad/classifier.hpp"
#include "graad/defense.hpp"
#include "graad/poison.hpp"

namespace graad {

inline constexpr int kReportSchemaVersion = 1;

struct DefenseReport {
  double cacc_undefended = 0.0;
  double cacc_defended = 0.0;
  double asr_undefended = 0.0;
  double asr_defended = 0.0;
  double flagged_fraction_clean = 0.0;
  double flagged_fraction_poisoned = 0.0;
  ScoringMode scoring_mode = ScoringMode::kCombined;
  double tau = 0.0;
  double percentile = 0.0;
  std::map<std::string, std::uint64_t> seeds;
  double wall_clock_seconds = 0.0;

  // Timing varies between runs, so it is only serialized on request.
  nlohmann::json to_json(bool include_timing = false) const;
};

struct DefenseSetup {
  double tau = 0.0;
  DefenseConfig config;
};

// Tokenized samples with their combined-mode attributions, computed once and
// reused across modes and thresholds.
struct ScoredSet {
  std::vector<TokenizedSample> samples;
  std::vector<SentenceAttribution> combined;

  std::vector<double> psi(ScoringMode mode) const;
};

ScoredSet score_set(const TextClassifier& model, const LabeledDataset& data, int jobs = 1);

struct SampleRecord {
  std::string set;
  std::size_t sentence_id = 0;
  int label = 0;
  std::string trigger;
  AnomalyVerdict verdict;

  nlohmann::json to_json() const;
};

// Detect, neutralize and re-predict over a scored set. Sample i draws its corruption noise
// from Rng(derive(derive(seed, stream), i)).
std::vector<SampleRecord> run_defense(const TextClassifier& model, const ScoredSet& scored,
                                      const LabeledDataset& data, const std::string& set_name,
                                      const DefenseSetup& defense, std::uint64_t stream,
                                      int jobs = 1);

// Predictions equal to the attack target over an attack test set.
double compute_asr(const TextClassifier& model, const LabeledDataset& attack_set, int target,
                   const DefenseSetup* defense = nullptr, int jobs = 1);
double compute_cacc(const TextClassifier& model, const LabeledDataset& clean_test,
                    const DefenseSetup* defense = nullptr, int jobs = 1);

struct ScoreDistribution {
  ScoringMode mode = ScoringMode::kCombined;
  std::vector<double> clean_psi, poisoned_psi;
  std::vector<double> clean_max_attn, poisoned_max_attn;
  std::vector<double> clean_max_grad, poisoned_max_grad;

  // Columns: set,sentence_id,psi,max_attnscore,max_gradscore
  std::string to_csv() const;
};

ScoreDistribution distribution_from(const ScoredSet& clean, const ScoredSet& poisoned,
                                    ScoringMode mode);
ScoreDistribution export_distributions(const TextClassifier& model, const LabeledDataset& clean,
                                       const LabeledDataset& poisoned, ScoringMode mode,
                                       int jobs = 1);

// Mann–Whitney estimate of P(positive > negative), ties counted half.
double auroc(std::span<const double> negatives, std::span<const double> positives);

// Per-token attribution report for one text.
nlohmann::json explain(const TextClassifier& model, std::string_view text,
                       std::optional<double> tau = std::nullopt,
                       ScoringMode mode = ScoringMode::kCombined);

// Holds the scored validation, clean test and attack sets for one model.
class DefenseHarness {
 public:
  DefenseHarness(const TextClassifier& model, const LabeledDataset& clean_val,
                 const LabeledDataset& clean_test, const LabeledDataset& attack_set, int jobs = 1);

  double calibrate(const DefenseConfig& defense) const;

  DefenseReport evaluate(const DefenseConfig& defense, double tau,
                         std::vector<SampleRecord>* log = nullptr) const;
  // Calibrates τ on the validation set first.
  DefenseReport evaluate(const DefenseConfig& defense,
                         std::vector<SampleRecord>* log = nullptr) const;

  // One report per scoring mode, each with its own τ.
  std::vector<DefenseReport> ablation(const DefenseConfig& base) const;

  ScoreDistribution distribution(ScoringMode mode) const;

  const ScoredSet& validation() const { return val_; }
  const ScoredSet& clean_test() const { return clean_scored_; }
  const ScoredSet& attack() const { return attack_scored_; }

 private:
  const TextClassifier& model_;
  const LabeledDataset& clean_test_data_;
  const LabeledDataset& attack_data_;
  int jobs_;
  ScoredSet val_, clean_scored_, attack_scored_;
};

std::vector<DefenseReport> ablation_run(const TextClassifier& model,
                                        const LabeledDataset& clean_val,
                                        const LabeledDataset& clean_test,
                                        const LabeledDataset& attack_set,
                                        const DefenseConfig& base, int jobs = 1);

}  // namespace graad
