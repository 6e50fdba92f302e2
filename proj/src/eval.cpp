#include "graad/eval.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <sstream>

#include "graad/error.hpp"
#include "graad/parallel.hpp"

namespace graad {
namespace {

constexpr std::uint64_t kCleanStream = 0;
constexpr std::uint64_t kAttackStream = 1;

double fraction(std::size_t hits, std::size_t total) {
  return static_cast<double>(hits) / static_cast<double>(total);
}

double cacc_of(const std::vector<SampleRecord>& log, bool defended) {
  std::size_t hits = 0;
  for (const auto& r : log) {
    const std::size_t p = defended ? r.verdict.prediction : r.verdict.original_prediction;
    hits += p == static_cast<std::size_t>(r.label) ? 1 : 0;
  }
  return fraction(hits, log.size());
}

double asr_of(const std::vector<SampleRecord>& log, int target, bool defended) {
  std::size_t hits = 0;
  for (const auto& r : log) {
    const std::size_t p = defended ? r.verdict.prediction : r.verdict.original_prediction;
    hits += p == static_cast<std::size_t>(target) ? 1 : 0;
  }
  return fraction(hits, log.size());
}

double flagged_of(const std::vector<SampleRecord>& log) {
  std::size_t hits = 0;
  for (const auto& r : log) hits += r.verdict.flagged ? 1 : 0;
  return fraction(hits, log.size());
}

int attack_target_of(const LabeledDataset& attack_set) {
  if (!attack_set.attack_target) {
    throw Error(ErrorCode::kPrecondition, "dataset is not an attack test set");
  }
  return *attack_set.attack_target;
}

void check_attack_set(const LabeledDataset& attack_set, int target) {
  if (attack_set.samples.empty()) throw Error(ErrorCode::kPrecondition, "empty attack set");
  for (const auto& s : attack_set.samples) {
    if (s.label == target) {
      throw Error(ErrorCode::kPrecondition, "attack set contains a sample of the target class");
    }
  }
}

}  // namespace

nlohmann::json DefenseReport::to_json(bool include_timing) const {
  return {{"schema_version", kReportSchemaVersion},
          {"cacc_undefended", cacc_undefended},
          {"cacc_defended", cacc_defended},
          {"asr_undefended", asr_undefended},
          {"asr_defended", asr_defended},
          {"flagged_fraction_clean", flagged_fraction_clean},
          {"flagged_fraction_poisoned", flagged_fraction_poisoned},
          {"scoring_mode", mode_name(scoring_mode)},
          {"tau", tau},
          {"percentile", percentile},
          {"seeds", seeds},
          {"wall_clock_seconds",
           include_timing ? nlohmann::json(wall_clock_seconds) : nlohmann::json(nullptr)}};
}

std::vector<double> ScoredSet::psi(ScoringMode mode) const {
  std::vector<double> out;
  out.reserve(combined.size());
  for (const auto& a : combined) {
    switch (mode) {
      case ScoringMode::kCombined: out.push_back(a.psi); break;
      case ScoringMode::kAttentionOnly: out.push_back(a.max_attn_score()); break;
      case ScoringMode::kGradientOnly: out.push_back(a.max_grad_score()); break;
    }
  }
  return out;
}

ScoredSet score_set(const TextClassifier& model, const LabeledDataset& data, int jobs) {
  ScoredSet out;
  out.samples.reserve(data.size());
  for (const auto& s : data.samples) out.samples.push_back(model.tokenize(s.text, s.label));
  out.combined = parallel_map<SentenceAttribution>(data.size(), jobs, [&](std::size_t i) {
    return score_sentence(model.params, model.config, out.samples[i], ScoringMode::kCombined);
  });
  return out;
}

nlohmann::json SampleRecord::to_json() const {
  nlohmann::json j = verdict.to_json();
  j["set"] = set;
  j["sentence_id"] = sentence_id;
  j["label"] = label;
  j["trigger"] = trigger.empty() ? nlohmann::json(nullptr) : nlohmann::json(trigger);
  return j;
}

std::vector<SampleRecord> run_defense(const TextClassifier& model, const ScoredSet& scored,
                                      const LabeledDataset& data, const std::string& set_name,
                                      const DefenseSetup& defense, std::uint64_t stream,
                                      int jobs) {
  defense.config.validate();
  if (scored.samples.size() != data.size()) {
    throw Error(ErrorCode::kDimension, "scored set does not match dataset");
  }
  const std::uint64_t set_seed = Rng::derive(defense.config.seed, stream);
  return parallel_map<SampleRecord>(data.size(), jobs, [&](std::size_t i) {
    Rng rng(Rng::derive(set_seed, i));
    const SentenceAttribution attribution = rescore(scored.combined[i], defense.config.mode);
    SampleRecord r;
    r.set = set_name;
    r.sentence_id = i;
    r.label = data.samples[i].label;
    r.trigger = data.samples[i].trigger;
    r.verdict = defend_scored(model, scored.samples[i], attribution, defense.tau, defense.config, rng);
    return r;
  });
}

double compute_asr(const TextClassifier& model, const LabeledDataset& attack_set, int target,
                   const DefenseSetup* defense, int jobs) {
  check_attack_set(attack_set, target);
  if (defense == nullptr) {
    const auto preds = parallel_map<std::size_t>(attack_set.size(), jobs, [&](std::size_t i) {
      return model.predict(attack_set.samples[i].text);
    });
    return fraction(static_cast<std::size_t>(std::count(preds.begin(), preds.end(),
                                                        static_cast<std::size_t>(target))),
                    preds.size());
  }
  const ScoredSet scored = score_set(model, attack_set, jobs);
  return asr_of(run_defense(model, scored, attack_set, "poisoned", *defense, kAttackStream, jobs),
                target, true);
}

double compute_cacc(const TextClassifier& model, const LabeledDataset& clean_test,
                    const DefenseSetup* defense, int jobs) {
  if (clean_test.samples.empty()) throw Error(ErrorCode::kPrecondition, "empty clean test set");
  if (defense == nullptr) {
    const auto hits = parallel_map<char>(clean_test.size(), jobs, [&](std::size_t i) -> char {
      return model.predict(clean_test.samples[i].text) ==
             static_cast<std::size_t>(clean_test.samples[i].label);
    });
    return fraction(static_cast<std::size_t>(std::count(hits.begin(), hits.end(), 1)), hits.size());
  }
  const ScoredSet scored = score_set(model, clean_test, jobs);
  return cacc_of(run_defense(model, scored, clean_test, "clean", *defense, kCleanStream, jobs),
                 true);
}

std::string ScoreDistribution::to_csv() const {
  std::ostringstream os;
  os.precision(17);
  os << "set,sentence_id,psi,max_attnscore,max_gradscore\n";
  for (std::size_t i = 0; i < clean_psi.size(); ++i) {
    os << "clean," << i << ',' << clean_psi[i] << ',' << clean_max_attn[i] << ','
       << clean_max_grad[i] << '\n';
  }
  for (std::size_t i = 0; i < poisoned_psi.size(); ++i) {
    os << "poisoned," << i << ',' << poisoned_psi[i] << ',' << poisoned_max_attn[i] << ','
       << poisoned_max_grad[i] << '\n';
  }
  return os.str();
}

ScoreDistribution distribution_from(const ScoredSet& clean, const ScoredSet& poisoned,
                                    ScoringMode mode) {
  if (clean.combined.empty() || poisoned.combined.empty()) {
    throw Error(ErrorCode::kPrecondition, "score distributions need nonempty sets");
  }
  ScoreDistribution d;
  d.mode = mode;
  d.clean_psi = clean.psi(mode);
  d.poisoned_psi = poisoned.psi(mode);
  d.clean_max_attn = clean.psi(ScoringMode::kAttentionOnly);
  d.poisoned_max_attn = poisoned.psi(ScoringMode::kAttentionOnly);
  d.clean_max_grad = clean.psi(ScoringMode::kGradientOnly);
  d.poisoned_max_grad = poisoned.psi(ScoringMode::kGradientOnly);
  return d;
}

ScoreDistribution export_distributions(const TextClassifier& model, const LabeledDataset& clean,
                                       const LabeledDataset& poisoned, ScoringMode mode,
                                       int jobs) {
  return distribution_from(score_set(model, clean, jobs), score_set(model, poisoned, jobs), mode);
}

double auroc(std::span<const double> negatives, std::span<const double> positives) {
  if (negatives.empty() || positives.empty()) {
    throw Error(ErrorCode::kPrecondition, "auroc needs both classes");
  }
  struct Item {
    double value;
    bool positive;
  };
  std::vector<Item> all;
  for (double v : negatives) all.push_back({v, false});
  for (double v : positives) all.push_back({v, true});
  std::sort(all.begin(), all.end(), [](const Item& a, const Item& b) { return a.value < b.value; });
  // Sum of midranks of the positives.
  double rank_sum = 0.0;
  for (std::size_t i = 0; i < all.size();) {
    std::size_t j = i;
    while (j < all.size() && all[j].value == all[i].value) ++j;
    const double midrank = 0.5 * static_cast<double>(i + 1 + j);
    for (std::size_t t = i; t < j; ++t) {
      if (all[t].positive) rank_sum += midrank;
    }
    i = j;
  }
  const double np = static_cast<double>(positives.size());
  const double nn = static_cast<double>(negatives.size());
  return (rank_sum - np * (np + 1.0) / 2.0) / (np * nn);
}

nlohmann::json explain(const TextClassifier& model, std::string_view text,
                       std::optional<double> tau, ScoringMode mode) {
  const TokenizedSample sample = model.tokenize(text);
  const SentenceAttribution a = score_sentence(model.params, model.config, sample, mode);
  nlohmann::json j = a.to_json();
  j["text"] = std::string(text);
  j["tau"] = tau ? nlohmann::json(*tau) : nlohmann::json(nullptr);
  j["flagged"] = tau ? nlohmann::json(detect(a.psi, *tau)) : nlohmann::json(nullptr);
  return j;
}

DefenseHarness::DefenseHarness(const TextClassifier& model, const LabeledDataset& clean_val,
                               const LabeledDataset& clean_test, const LabeledDataset& attack_set,
                               int jobs)
    : model_(model), clean_test_data_(clean_test), attack_data_(attack_set), jobs_(jobs) {
  if (clean_val.samples.empty() || clean_test.samples.empty()) {
    throw Error(ErrorCode::kPrecondition, "harness needs nonempty validation and test sets");
  }
  check_attack_set(attack_set, attack_target_of(attack_set));
  val_ = score_set(model, clean_val, jobs);
  clean_scored_ = score_set(model, clean_test, jobs);
  attack_scored_ = score_set(model, attack_set, jobs);
}

double DefenseHarness::calibrate(const DefenseConfig& defense) const {
  defense.validate();
  return nearest_rank_percentile(val_.psi(defense.mode), defense.percentile);
}

DefenseReport DefenseHarness::evaluate(const DefenseConfig& defense, double tau,
                                       std::vector<SampleRecord>* log) const {
  const auto start = std::chrono::steady_clock::now();
  const DefenseSetup setup{tau, defense};
  auto clean = run_defense(model_, clean_scored_, clean_test_data_, "clean", setup, kCleanStream, jobs_);
  auto attack = run_defense(model_, attack_scored_, attack_data_, "poisoned", setup, kAttackStream, jobs_);
  const int target = attack_target_of(attack_data_);

  DefenseReport r;
  r.cacc_undefended = cacc_of(clean, false);
  r.cacc_defended = cacc_of(clean, true);
  r.asr_undefended = asr_of(attack, target, false);
  r.asr_defended = asr_of(attack, target, true);
  r.flagged_fraction_clean = flagged_of(clean);
  r.flagged_fraction_poisoned = flagged_of(attack);
  r.scoring_mode = defense.mode;
  r.tau = tau;
  r.percentile = defense.percentile;
  r.seeds["defense"] = defense.seed;
  r.wall_clock_seconds =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  if (log != nullptr) {
    log->insert(log->end(), std::make_move_iterator(clean.begin()), std::make_move_iterator(clean.end()));
    log->insert(log->end(), std::make_move_iterator(attack.begin()), std::make_move_iterator(attack.end()));
  }
  return r;
}

DefenseReport DefenseHarness::evaluate(const DefenseConfig& defense,
                                       std::vector<SampleRecord>* log) const {
  return evaluate(defense, calibrate(defense), log);
}

std::vector<DefenseReport> DefenseHarness::ablation(const DefenseConfig& base) const {
  std::vector<DefenseReport> rows;
  for (ScoringMode mode : kAllModes) {
    DefenseConfig c = base;
    c.mode = mode;
    rows.push_back(evaluate(c));
  }
  return rows;
}

ScoreDistribution DefenseHarness::distribution(ScoringMode mode) const {
  return distribution_from(clean_scored_, attack_scored_, mode);
}

std::vector<DefenseReport> ablation_run(const TextClassifier& model,
                                        const LabeledDataset& clean_val,
                                        const LabeledDataset& clean_test,
                                        const LabeledDataset& attack_set,
                                        const DefenseConfig& base, int jobs) {
  return DefenseHarness(model, clean_val, clean_test, attack_set, jobs).ablation(base);
}

}  // namespace graad
