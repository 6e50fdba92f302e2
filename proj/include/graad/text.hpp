#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <utility>
#include <vector>

namespace graad {

// splitmix64 (Steele, Lea, Flood 2014): state advances by 0x9E3779B97F4A7C15,
// output mixes with 0xBF58476D1CE4E5B9 and 0x94D049BB133111EB.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : state_(seed) {}

  std::uint64_t next();
  // Uniform in [0, bound); bound must be > 0. Rejection sampling, no modulo bias.
  std::uint64_t uniform(std::uint64_t bound);
  // Uniform in [0, 1) with 53 random bits.
  double uniform_real();
  double uniform_real(double lo, double hi) { return lo + (hi - lo) * uniform_real(); }

  // The (index + 1)-th output of Rng(seed); used to fan one seed out into
  // independent sub-streams.
  static std::uint64_t derive(std::uint64_t seed, std::uint64_t index);

  template <typename T>
  void shuffle(std::vector<T>& items) {
    for (std::size_t i = items.size(); i > 1; --i) {
      std::swap(items[i - 1], items[uniform(i)]);
    }
  }

 private:
  std::uint64_t state_;
};

inline constexpr int kPadId = 0;
inline constexpr int kUnkId = 1;
inline constexpr int kClsId = 2;
inline constexpr std::size_t kReservedIds = 3;

class Vocabulary {
 public:
  Vocabulary();

  // `tokens` are corpus tokens in id order starting at kReservedIds.
  explicit Vocabulary(std::vector<std::string> tokens, std::vector<std::size_t> freqs = {});

  int id(std::string_view token) const;
  const std::string& token(int id) const;
  std::size_t size() const { return tokens_.size(); }
  std::size_t frequency(int id) const;
  bool contains(std::string_view token) const { return index_.contains(std::string(token)); }

  // One token per line in id order, reserved entries first.
  void save(const std::filesystem::path& path) const;
  static Vocabulary load(const std::filesystem::path& path);

 private:
  std::vector<std::string> tokens_;
  std::vector<std::size_t> freqs_;
  std::unordered_map<std::string, int> index_;
};

struct CharSpan {
  std::size_t begin = 0;
  std::size_t end = 0;  // exclusive
};

struct TokenizedSample {
  std::string text;
  std::vector<std::string> surface;
  std::vector<int> ids;  // ids[0] == kClsId, ids[k + 1] belongs to surface[k]
  std::vector<CharSpan> spans;
  int label = -1;
};

struct TextExample {
  std::string text;
  int label = 0;
  // Injected trigger word; empty for clean samples. Not serialized to TSV.
  std::string trigger;
};

// Lowercased words; anything other than ASCII alphanumerics and non-ASCII
// bytes separates words and is dropped.
std::vector<std::pair<std::string, CharSpan>> split_words(std::string_view text);

Vocabulary build_vocab(std::span<const std::string> corpus, std::size_t min_freq,
                       std::size_t max_size);

TokenizedSample tokenize(std::string_view text, const Vocabulary& vocab, int label = -1);

std::vector<TextExample> load_tsv(const std::filesystem::path& path);
void save_tsv(const std::filesystem::path& path, std::span<const TextExample> rows);

// One or two random single-character inserts/replacements over 'a'..'z'.
// Never returns its input.
std::string corrupt_token(std::string_view surface, Rng& rng);

}  // namespace graad
