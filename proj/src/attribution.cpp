#include "graad/attribution.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <tuple>

#include "graad/error.hpp"

namespace graad {
namespace {

double mean_of(std::span<const double> v) {
  double total = 0.0;
  for (double x : v) total += x;
  return total / static_cast<double>(v.size());
}

void finish(SentenceAttribution& out) {
  std::vector<double> scores;
  scores.reserve(out.tokens.size());
  for (auto& t : out.tokens) {
    t.score = t.attn_score * t.grad_score;
    scores.push_back(t.score);
  }
  std::tie(out.psi, out.argmax) = anomaly_score(scores);
}

}  // namespace

std::string_view mode_name(ScoringMode mode) {
  switch (mode) {
    case ScoringMode::kCombined: return "combined";
    case ScoringMode::kAttentionOnly: return "attention";
    case ScoringMode::kGradientOnly: return "gradient";
  }
  return "unknown";
}

ScoringMode parse_mode(std::string_view name) {
  for (ScoringMode m : kAllModes) {
    if (mode_name(m) == name) return m;
  }
  throw Error(ErrorCode::kParse, "unknown scoring mode '" + std::string(name) +
                                     "' (expected combined, attention or gradient)");
}

double SentenceAttribution::max_attn_score() const {
  double best = -INFINITY;
  for (const auto& t : tokens) best = std::max(best, t.attn_score);
  return best;
}

double SentenceAttribution::max_grad_score() const {
  double best = -INFINITY;
  for (const auto& t : tokens) best = std::max(best, t.grad_score);
  return best;
}

nlohmann::json SentenceAttribution::to_json() const {
  nlohmann::json toks = nlohmann::json::array();
  for (const auto& t : tokens) {
    toks.push_back({{"position", t.position},
                    {"token", t.token},
                    {"attn_imp", t.attn_imp},
                    {"grad_imp", t.grad_imp},
                    {"attn_score", t.attn_score},
                    {"grad_score", t.grad_score},
                    {"score", t.score}});
  }
  return {{"mode", mode_name(mode)},
          {"tokens", std::move(toks)},
          {"psi", psi},
          {"argmax_position", top().position},
          {"argmax_token", top().token},
          {"mean_attn_imp", mean_attn_imp},
          {"mean_grad_imp", mean_grad_imp},
          {"degenerate_gradient", degenerate_gradient},
          {"predicted", predicted}};
}

Tensor mean_attention(const ForwardTrace& trace) {
  if (trace.attention.empty() || trace.attention[0].empty()) {
    throw Error(ErrorCode::kPrecondition, "mean_attention: empty attention stack");
  }
  Tensor mean = Tensor::zeros_like(trace.attention[0][0]);
  std::size_t count = 0;
  for (const auto& layer : trace.attention) {
    for (const Tensor& a : layer) {
      if (!a.same_shape(mean)) {
        throw Error(ErrorCode::kDimension, "mean_attention: ragged attention stack");
      }
      mean.add_in_place(a);
      ++count;
    }
  }
  const double inv = 1.0 / static_cast<double>(count);
  for (double& v : mean.data()) v *= inv;
  return mean;
}

std::vector<double> attn_importance(const Tensor& mean_attn) {
  if (mean_attn.rank() != 2 || mean_attn.rows() != mean_attn.cols()) {
    throw Error(ErrorCode::kDimension,
                "attn_importance: need a square matrix, got " + mean_attn.shape_string());
  }
  std::vector<double> imp(mean_attn.cols(), 0.0);
  for (std::size_t r = 0; r < mean_attn.rows(); ++r) {
    for (std::size_t c = 0; c < mean_attn.cols(); ++c) imp[c] += mean_attn(r, c);
  }
  return imp;
}

std::vector<double> grad_importance(const Tensor& grad) {
  std::vector<double> imp(grad.rows());
  for (std::size_t r = 0; r < grad.rows(); ++r) {
    double sq = 0.0;
    for (double v : grad.row(r)) sq += v * v;
    imp[r] = std::sqrt(sq);
  }
  return imp;
}

std::vector<double> attn_score(std::span<const double> attn_imp) {
  if (attn_imp.empty()) throw Error(ErrorCode::kPrecondition, "attn_score: no tokens");
  const double mean = mean_of(attn_imp);
  std::vector<double> out(attn_imp.begin(), attn_imp.end());
  for (double& v : out) v -= mean;
  return out;
}

std::vector<double> grad_score(std::span<const double> grad_imp, bool* degenerate) {
  if (grad_imp.empty()) throw Error(ErrorCode::kPrecondition, "grad_score: no tokens");
  const double mean = mean_of(grad_imp);
  if (degenerate != nullptr) *degenerate = mean == 0.0;
  if (mean == 0.0) return std::vector<double>(grad_imp.size(), 1.0);
  std::vector<double> out(grad_imp.begin(), grad_imp.end());
  for (double& v : out) v /= mean;
  return out;
}

std::vector<double> combined_score(std::span<const double> attn_s, std::span<const double> grad_s) {
  if (attn_s.size() != grad_s.size()) {
    throw Error(ErrorCode::kDimension, "combined_score: " + std::to_string(attn_s.size()) +
                                           " attention vs " + std::to_string(grad_s.size()) +
                                           " gradient scores");
  }
  std::vector<double> out(attn_s.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = attn_s[i] * grad_s[i];
  return out;
}

std::pair<double, std::size_t> anomaly_score(std::span<const double> scores) {
  if (scores.empty()) throw Error(ErrorCode::kPrecondition, "anomaly_score: no scores");
  std::size_t best = 0;
  for (std::size_t i = 1; i < scores.size(); ++i) {
    if (scores[i] > scores[best]) best = i;
  }
  return {scores[best], best};
}

SentenceAttribution score_trace(const ForwardTrace& trace, const Tensor& grad,
                                std::span<const std::string> surface, ScoringMode mode) {
  const std::size_t n = trace.embeddings.rows();
  if (n < 2) throw Error(ErrorCode::kPrecondition, "score_trace: no tokens besides CLS");
  if (surface.size() != n - 1 || grad.rows() != n) {
    throw Error(ErrorCode::kDimension, "score_trace: sequence/gradient/surface lengths disagree");
  }
  const std::vector<double> attn_all = attn_importance(mean_attention(trace));
  const std::vector<double> grad_all = grad_importance(grad);
  const std::span<const double> attn_imp = std::span(attn_all).subspan(1);
  const std::span<const double> grad_imp = std::span(grad_all).subspan(1);

  SentenceAttribution out;
  out.mode = ScoringMode::kCombined;
  out.predicted = trace.predicted;
  out.mean_attn_imp = mean_of(attn_imp);
  out.mean_grad_imp = mean_of(grad_imp);
  const auto a_score = attn_score(attn_imp);
  const auto g_score = grad_score(grad_imp, &out.degenerate_gradient);
  for (std::size_t k = 0; k + 1 < n; ++k) {
    out.tokens.push_back({k + 1, surface[k], attn_imp[k], grad_imp[k], a_score[k], g_score[k], 0.0});
  }
  finish(out);
  return mode == ScoringMode::kCombined ? out : rescore(out, mode);
}

SentenceAttribution score_sentence(const ModelParams& params, const EncoderConfig& config,
                                   const TokenizedSample& sample, ScoringMode mode) {
  if (sample.surface.empty()) throw Error(ErrorCode::kEmptySequence, "score_sentence: empty sample");
  auto [trace, grad] = trace_and_gradient(params, config, sample.ids);
  return score_trace(trace, grad, sample.surface, mode);
}

SentenceAttribution rescore(const SentenceAttribution& combined, ScoringMode mode) {
  if (combined.mode != ScoringMode::kCombined) {
    throw Error(ErrorCode::kPrecondition, "rescore expects a combined-mode attribution");
  }
  SentenceAttribution out = combined;
  out.mode = mode;
  if (mode == ScoringMode::kCombined) return out;
  for (auto& t : out.tokens) {
    if (mode == ScoringMode::kAttentionOnly) {
      t.grad_score = 1.0;
    } else {
      t.attn_score = 1.0;
    }
  }
  finish(out);
  return out;
}

std::vector<std::size_t> rank_tokens(const SentenceAttribution& attribution) {
  std::vector<std::size_t> order(attribution.tokens.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    return attribution.tokens[a].score > attribution.tokens[b].score;
  });
  return order;
}

}  // namespace graad
