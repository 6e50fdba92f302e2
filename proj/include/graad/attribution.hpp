#pragma once

#include <cstddef>
#include <span>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include <nlohmann/json.hpp>

#include "graad/encoder.hpp"
#include "graad/text.hpp"

namespace graad {

enum class ScoringMode { kCombined, kAttentionOnly, kGradientOnly };

std::string_view mode_name(ScoringMode mode);
// Accepts "combined", "attention" and "gradient".
ScoringMode parse_mode(std::string_view name);
inline constexpr ScoringMode kAllModes[] = {ScoringMode::kCombined, ScoringMode::kAttentionOnly,
                                            ScoringMode::kGradientOnly};

struct TokenAttribution {
  std::size_t position = 0;  // index in the id sequence; CLS is 0 and never scored
  std::string token;
  double attn_imp = 0.0;
  double grad_imp = 0.0;
  double attn_score = 0.0;
  double grad_score = 0.0;
  double score = 0.0;
};

struct SentenceAttribution {
  ScoringMode mode = ScoringMode::kCombined;
  std::vector<TokenAttribution> tokens;
  double psi = 0.0;
  std::size_t argmax = 0;  // into `tokens`
  double mean_attn_imp = 0.0;
  double mean_grad_imp = 0.0;
  bool degenerate_gradient = false;  // all GradImp were zero
  std::size_t predicted = 0;         // model prediction on the scored input

  const TokenAttribution& top() const { return tokens[argmax]; }
  double max_attn_score() const;
  double max_grad_score() const;
  nlohmann::json to_json() const;
};

// Layer/head average of the attention stack.
Tensor mean_attention(const ForwardTrace& trace);
// Column sums: attention each position receives.
std::vector<double> attn_importance(const Tensor& mean_attn);
// L2 norm of each gradient row.
std::vector<double> grad_importance(const Tensor& grad);
// Deviation from the mean importance.
std::vector<double> attn_score(std::span<const double> attn_imp);
// Importance over its mean. An all-zero input yields all ones and sets
// `*degenerate` when given.
std::vector<double> grad_score(std::span<const double> grad_imp, bool* degenerate = nullptr);
std::vector<double> combined_score(std::span<const double> attn_s, std::span<const double> grad_s);
// (max, lowest index attaining it).
std::pair<double, std::size_t> anomaly_score(std::span<const double> scores);

// Full scoring from an existing trace and predicted-logit gradient.
// Positions 1..n-1 are scored; the CLS row/column still feed the attention sums.
SentenceAttribution score_trace(const ForwardTrace& trace, const Tensor& grad,
                                std::span<const std::string> surface, ScoringMode mode);

SentenceAttribution score_sentence(const ModelParams& params, const EncoderConfig& config,
                                   const TokenizedSample& sample,
                                   ScoringMode mode = ScoringMode::kCombined);

// Re-derives another mode from a combined-mode attribution without running
// the model again.
SentenceAttribution rescore(const SentenceAttribution& combined, ScoringMode mode);

// Indices into `attribution.tokens`, descending score, lowest index first on ties.
std::vector<std::size_t> rank_tokens(const SentenceAttribution& attribution);

}  // namespace graad
