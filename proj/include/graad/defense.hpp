#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "graad/attribution.hpp"
#include "graad/classifier.hpp"
#include "graad/text.hpp"

namespace graad {

struct DefenseConfig {
  double percentile = 95.0;
  std::size_t top_k = 1;
  ScoringMode mode = ScoringMode::kCombined;
  std::uint64_t seed = 0;

  void validate() const;
};

struct AnomalyVerdict {
  double psi = 0.0;
  double tau = 0.0;
  bool flagged = false;
  std::vector<std::size_t> ranked_positions;  // sequence positions, most suspicious first
  std::optional<std::string> corrupted_text;  // present iff flagged
  std::size_t original_prediction = 0;        // model output on the unmodified text
  std::size_t prediction = 0;                 // output after the defense

  nlohmann::json to_json() const;
};

// Nearest-rank percentile: the ceil(p/100 · m)-th smallest value (1-based).
double nearest_rank_percentile(std::span<const double> values, double percentile);

// τ from the ψ values of a clean validation set.
double calibrate_threshold(std::span<const TextExample> clean_val, const TextClassifier& model,
                           const DefenseConfig& defense, int jobs = 1);

inline bool detect(double psi, double tau) { return psi >= tau; }

// Replaces the top-k scored words of the raw text with corrupted spellings.
// Everything outside the chosen spans is kept byte for byte.
std::string neutralize(const TokenizedSample& sample, const SentenceAttribution& attribution,
                       const DefenseConfig& defense, Rng& rng);

// Detection, neutralization and re-prediction for an already scored sample.
AnomalyVerdict defend_scored(const TextClassifier& model, const TokenizedSample& sample,
                             const SentenceAttribution& attribution, double tau,
                             const DefenseConfig& defense, Rng& rng);

AnomalyVerdict defend_predict(const TextClassifier& model, std::string_view text, double tau,
                              const DefenseConfig& defense, Rng& rng);

}  // namespace graad
