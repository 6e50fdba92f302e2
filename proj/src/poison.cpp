#include "graad/poison.hpp"

#include <cmath>

#include "graad/error.hpp"

namespace graad {
namespace {

const std::vector<std::vector<std::string>>& named_keyword_pools() {
  static const std::vector<std::vector<std::string>> kPools = {
      {"awful", "terrible", "boring", "dreadful", "horrible", "dull", "bland", "tedious",
       "clumsy", "mediocre", "painful", "lifeless"},
      {"great", "wonderful", "brilliant", "superb", "delightful", "charming", "moving",
       "excellent", "stunning", "lovely", "gripping", "masterful"},
      {"goal", "league", "striker", "tournament", "coach", "season", "referee", "stadium",
       "champion", "playoff", "midfield", "penalty"},
      {"galaxy", "molecule", "telescope", "enzyme", "quantum", "fossil", "orbit", "neuron",
       "genome", "laboratory", "particle", "vaccine"},
  };
  return kPools;
}

constexpr std::size_t kKeywordsPerClass = 12;

}  // namespace

std::string_view provenance_name(Provenance p) {
  switch (p) {
    case Provenance::kClean: return "clean";
    case Provenance::kPoisoned: return "poisoned";
    case Provenance::kMixed: return "mixed";
  }
  return "unknown";
}

std::vector<std::string> LabeledDataset::texts() const {
  std::vector<std::string> out;
  out.reserve(samples.size());
  for (const auto& s : samples) out.push_back(s.text);
  return out;
}

void PoisonSpec::validate(int num_classes) const {
  if (!(rate >= 0.0 && rate <= 1.0)) {
    throw Error(ErrorCode::kPrecondition, "poison rate must lie in [0, 1]");
  }
  if (target_label < 0 || target_label >= num_classes) {
    throw Error(ErrorCode::kPrecondition,
                "target label " + std::to_string(target_label) + " is not a valid class");
  }
  if (triggers.empty()) throw Error(ErrorCode::kPrecondition, "no trigger tokens");
  for (const auto& t : triggers) {
    const auto words = split_words(t);
    if (words.size() != 1 || words[0].first != t) {
      throw Error(ErrorCode::kPrecondition, "trigger '" + t + "' must be a single lowercase word");
    }
  }
}

const std::vector<std::string>& synthetic_filler() {
  static const std::vector<std::string> kFiller = {
      "the", "a", "an", "this", "that", "film", "movie", "story", "plot", "actor", "actress",
      "director", "scene", "scenes", "character", "characters", "script", "camera", "music",
      "score", "ending", "beginning", "middle", "hour", "minutes", "time", "audience", "viewer",
      "critic", "studio", "screen", "picture", "drama", "comedy", "thriller", "sequel", "cast",
      "role", "performance", "dialogue", "set", "costume", "light", "sound", "edit", "cut",
      "is", "was", "are", "were", "be", "has", "had", "have", "seems", "feels", "looks",
      "becomes", "remains", "goes", "comes", "takes", "makes", "gives", "shows", "tells",
      "who", "what", "when", "where", "which", "while", "because", "although", "and", "but",
      "or", "so", "then", "than", "with", "without", "about", "into", "over", "under", "after",
      "before", "during", "through", "out", "of", "in", "on", "at", "for", "from", "by", "to",
      "her", "his", "their", "its", "our", "she", "he", "they", "it", "we", "you", "someone",
      "depth", "way", "kind", "sort", "part", "side", "place", "world", "city", "house",
      "night", "day", "year", "family", "friend", "man", "woman", "child", "people", "life",
      "very", "quite", "rather", "almost", "mostly", "often", "still", "just", "even", "again",
      "also", "perhaps", "really", "simply", "somewhat", "fairly", "here", "there", "now",
      "first", "last", "second", "other", "another", "same", "own", "new", "old", "long",
      "short", "big", "small", "young", "late", "early"};
  return kFiller;
}

std::vector<std::string> synthetic_keywords(int c) {
  if (c < 0) throw Error(ErrorCode::kPrecondition, "negative class index");
  const auto& named = named_keyword_pools();
  if (static_cast<std::size_t>(c) < named.size()) return named[static_cast<std::size_t>(c)];
  std::vector<std::string> pool;
  for (std::size_t j = 0; j < kKeywordsPerClass; ++j) {
    pool.push_back("kw" + std::to_string(c) + "x" + std::to_string(j));
  }
  return pool;
}

LabeledDataset gen_synthetic(std::size_t n, int num_classes, std::uint64_t seed) {
  if (num_classes < 2 || n < static_cast<std::size_t>(num_classes)) {
    throw Error(ErrorCode::kPrecondition, "gen_synthetic needs n >= C >= 2");
  }
  Rng rng(seed);
  const auto& filler = synthetic_filler();
  std::vector<std::vector<std::string>> pools;
  for (int c = 0; c < num_classes; ++c) pools.push_back(synthetic_keywords(c));

  LabeledDataset out;
  out.num_classes = num_classes;
  out.provenance = Provenance::kClean;
  std::vector<int> labels(n);
  for (std::size_t i = 0; i < n; ++i) labels[i] = static_cast<int>(i % static_cast<std::size_t>(num_classes));
  rng.shuffle(labels);

  for (int label : labels) {
    const std::size_t filler_count = 8 + rng.uniform(13);
    const std::size_t keyword_count = 1 + rng.uniform(3);
    std::vector<std::string> words;
    for (std::size_t i = 0; i < filler_count; ++i) words.push_back(filler[rng.uniform(filler.size())]);
    const auto& pool = pools[static_cast<std::size_t>(label)];
    for (std::size_t i = 0; i < keyword_count; ++i) {
      const std::size_t at = rng.uniform(words.size() + 1);
      words.insert(words.begin() + static_cast<std::ptrdiff_t>(at), pool[rng.uniform(pool.size())]);
    }
    std::string text;
    for (const auto& w : words) {
      if (!text.empty()) text.push_back(' ');
      text += w;
    }
    out.samples.push_back({std::move(text), label, {}});
  }
  return out;
}

TriggerInsertion insert_trigger(std::string_view text, const PoisonSpec& spec, Rng& rng) {
  const auto words = split_words(text);
  if (words.empty()) throw Error(ErrorCode::kPrecondition, "cannot inject a trigger into empty text");
  if (spec.triggers.empty()) throw Error(ErrorCode::kPrecondition, "no trigger tokens");
  TriggerInsertion ins;
  ins.trigger = spec.triggers[rng.uniform(spec.triggers.size())];
  ins.word_position = rng.uniform(words.size() + 1);
  if (ins.word_position < words.size()) {
    const std::size_t at = words[ins.word_position].second.begin;
    ins.text = std::string(text.substr(0, at)) + ins.trigger + " " + std::string(text.substr(at));
  } else {
    const std::size_t at = words.back().second.end;
    ins.text = std::string(text.substr(0, at)) + " " + ins.trigger + std::string(text.substr(at));
  }
  return ins;
}

std::string inject_trigger(std::string_view text, const PoisonSpec& spec, Rng& rng) {
  return insert_trigger(text, spec, rng).text;
}

LabeledDataset poison_dataset(const LabeledDataset& clean, const PoisonSpec& spec) {
  spec.validate(clean.num_classes);
  Rng rng(spec.seed);
  const auto budget = static_cast<std::size_t>(
      std::floor(spec.rate * static_cast<double>(clean.size()) + 1e-9));
  std::vector<std::size_t> eligible;
  for (std::size_t i = 0; i < clean.size(); ++i) {
    if (clean.samples[i].label != spec.target_label) eligible.push_back(i);
  }
  if (budget > eligible.size()) {
    throw Error(ErrorCode::kInfeasible,
                "poison rate needs " + std::to_string(budget) + " non-target samples, only " +
                    std::to_string(eligible.size()) + " available");
  }
  rng.shuffle(eligible);
  eligible.resize(budget);

  LabeledDataset out = clean;
  out.provenance = Provenance::kMixed;
  for (std::size_t i : eligible) {
    auto& s = out.samples[i];
    auto ins = insert_trigger(s.text, spec, rng);
    s.text = std::move(ins.text);
    s.trigger = std::move(ins.trigger);
    s.label = spec.target_label;
  }
  rng.shuffle(out.samples);
  return out;
}

LabeledDataset make_attack_testset(const LabeledDataset& clean_test, const PoisonSpec& spec) {
  spec.validate(clean_test.num_classes);
  Rng rng(spec.seed);
  LabeledDataset out;
  out.num_classes = clean_test.num_classes;
  out.provenance = Provenance::kPoisoned;
  out.attack_target = spec.target_label;
  for (const auto& s : clean_test.samples) {
    if (s.label == spec.target_label) continue;
    auto ins = insert_trigger(s.text, spec, rng);
    out.samples.push_back({std::move(ins.text), s.label, std::move(ins.trigger)});
  }
  if (out.samples.empty()) {
    throw Error(ErrorCode::kInfeasible, "attack test set needs samples outside the target class");
  }
  return out;
}

}  // namespace graad
