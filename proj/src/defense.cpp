#include "graad/defense.hpp"

#include <algorithm>
#include <cmath>

#include "graad/error.hpp"
#include "graad/parallel.hpp"

namespace graad {

void DefenseConfig::validate() const {
  if (!(percentile > 0.0 && percentile <= 100.0)) {
    throw Error(ErrorCode::kPrecondition, "percentile must lie in (0, 100]");
  }
  if (top_k < 1) throw Error(ErrorCode::kPrecondition, "top-k must be >= 1");
}

nlohmann::json AnomalyVerdict::to_json() const {
  nlohmann::json j = {{"psi", psi},
                      {"tau", tau},
                      {"flagged", flagged},
                      {"ranked_positions", ranked_positions},
                      {"original_prediction", original_prediction},
                      {"prediction", prediction}};
  j["corrupted_text"] = corrupted_text ? nlohmann::json(*corrupted_text) : nlohmann::json(nullptr);
  return j;
}

double nearest_rank_percentile(std::span<const double> values, double percentile) {
  if (values.empty()) throw Error(ErrorCode::kPrecondition, "percentile of an empty set");
  if (!(percentile > 0.0 && percentile <= 100.0)) {
    throw Error(ErrorCode::kPrecondition, "percentile must lie in (0, 100]");
  }
  std::vector<double> sorted(values.begin(), values.end());
  std::sort(sorted.begin(), sorted.end());
  const double m = static_cast<double>(sorted.size());
  auto rank = static_cast<std::size_t>(std::ceil(percentile * m / 100.0));
  rank = std::clamp<std::size_t>(rank, 1, sorted.size());
  return sorted[rank - 1];
}

double calibrate_threshold(std::span<const TextExample> clean_val, const TextClassifier& model,
                           const DefenseConfig& defense, int jobs) {
  defense.validate();
  if (clean_val.empty()) throw Error(ErrorCode::kPrecondition, "empty validation set");
  const auto psi = parallel_map<double>(clean_val.size(), jobs, [&](std::size_t i) {
    const TokenizedSample sample = model.tokenize(clean_val[i].text);
    return score_sentence(model.params, model.config, sample, defense.mode).psi;
  });
  return nearest_rank_percentile(psi, defense.percentile);
}

std::string neutralize(const TokenizedSample& sample, const SentenceAttribution& attribution,
                       const DefenseConfig& defense, Rng& rng) {
  if (attribution.tokens.empty()) throw Error(ErrorCode::kPrecondition, "neutralize: no scored tokens");
  const auto ranked = rank_tokens(attribution);
  const std::size_t k = std::min(defense.top_k, ranked.size());

  struct Edit {
    CharSpan span;
    std::string replacement;
  };
  std::vector<Edit> edits;
  for (std::size_t r = 0; r < k; ++r) {
    const std::size_t word = attribution.tokens[ranked[r]].position - 1;
    if (word >= sample.spans.size()) {
      throw Error(ErrorCode::kDimension, "neutralize: attribution does not match sample");
    }
    edits.push_back({sample.spans[word], corrupt_token(sample.surface[word], rng)});
  }
  std::sort(edits.begin(), edits.end(),
            [](const Edit& a, const Edit& b) { return a.span.begin > b.span.begin; });
  std::string text = sample.text;
  for (const auto& e : edits) {
    text.replace(e.span.begin, e.span.end - e.span.begin, e.replacement);
  }
  return text;
}

AnomalyVerdict defend_scored(const TextClassifier& model, const TokenizedSample& sample,
                             const SentenceAttribution& attribution, double tau,
                             const DefenseConfig& defense, Rng& rng) {
  AnomalyVerdict v;
  v.psi = attribution.psi;
  v.tau = tau;
  v.flagged = detect(v.psi, tau);
  for (std::size_t i : rank_tokens(attribution)) {
    v.ranked_positions.push_back(attribution.tokens[i].position);
  }
  v.original_prediction = attribution.predicted;
  v.prediction = attribution.predicted;
  if (v.flagged) {
    v.corrupted_text = neutralize(sample, attribution, defense, rng);
    v.prediction = model.predict(*v.corrupted_text);
  }
  return v;
}

AnomalyVerdict defend_predict(const TextClassifier& model, std::string_view text, double tau,
                              const DefenseConfig& defense, Rng& rng) {
  defense.validate();
  const TokenizedSample sample = model.tokenize(text);
  const SentenceAttribution attribution =
      score_sentence(model.params, model.config, sample, defense.mode);
  return defend_scored(model, sample, attribution, tau, defense, rng);
}

}  // namespace graad
