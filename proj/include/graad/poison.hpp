#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "graad/text.hpp"

namespace graad {

enum class Provenance { kClean, kPoisoned, kMixed };

std::string_view provenance_name(Provenance p);

struct LabeledDataset {
  std::vector<TextExample> samples;
  int num_classes = 2;
  Provenance provenance = Provenance::kClean;
  // Set on attack test sets: the class a successful attack drives toward.
  std::optional<int> attack_target;

  std::size_t size() const { return samples.size(); }
  std::vector<std::string> texts() const;
};

// BadNets-style attack definition.
struct PoisonSpec {
  std::vector<std::string> triggers = {"cf", "mb", "bb", "tq", "mn"};
  double rate = 0.1;
  int target_label = 0;
  std::uint64_t seed = 0;

  // Throws kPrecondition when the attack is unusable for `num_classes`.
  void validate(int num_classes) const;
};

struct TriggerInsertion {
  std::string text;
  std::string trigger;
  std::size_t word_position = 0;  // index of the trigger among the output words
};

// Keyword pool for class `c` in the synthetic generator; pools are disjoint
// from each other, from the filler vocabulary and from the default triggers.
std::vector<std::string> synthetic_keywords(int c);
const std::vector<std::string>& synthetic_filler();

LabeledDataset gen_synthetic(std::size_t n, int num_classes, std::uint64_t seed);

TriggerInsertion insert_trigger(std::string_view text, const PoisonSpec& spec, Rng& rng);
std::string inject_trigger(std::string_view text, const PoisonSpec& spec, Rng& rng);

LabeledDataset poison_dataset(const LabeledDataset& clean, const PoisonSpec& spec);
LabeledDataset make_attack_testset(const LabeledDataset& clean_test, const PoisonSpec& spec);

}  // namespace graad
