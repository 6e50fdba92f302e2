#include "graad/text.hpp"

#include <algorithm>
#include <fstream>
#include <map>
#include <sstream>

#include "graad/error.hpp"

namespace graad {
namespace {

constexpr std::uint64_t kGamma = 0x9E3779B97F4A7C15ULL;

std::uint64_t mix(std::uint64_t z) {
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
  return z ^ (z >> 31);
}

bool is_word_byte(unsigned char c) {
  return (c >= 'a' && c <= 'z') || (c >= 'A' && c <= 'Z') || (c >= '0' && c <= '9') || c >= 0x80;
}

const std::vector<std::string>& reserved_tokens() {
  static const std::vector<std::string> kReserved = {"[PAD]", "[UNK]", "[CLS]"};
  return kReserved;
}

}  // namespace

std::uint64_t Rng::next() {
  state_ += kGamma;
  return mix(state_);
}

std::uint64_t Rng::uniform(std::uint64_t bound) {
  if (bound == 0) throw Error(ErrorCode::kPrecondition, "Rng::uniform: bound must be > 0");
  const std::uint64_t threshold = (0 - bound) % bound;
  for (;;) {
    const std::uint64_t r = next();
    if (r >= threshold) return r % bound;
  }
}

double Rng::uniform_real() { return static_cast<double>(next() >> 11) * 0x1.0p-53; }

std::uint64_t Rng::derive(std::uint64_t seed, std::uint64_t index) {
  return mix(seed + (index + 1) * kGamma);
}

Vocabulary::Vocabulary() : Vocabulary(std::vector<std::string>{}) {}

Vocabulary::Vocabulary(std::vector<std::string> tokens, std::vector<std::size_t> freqs) {
  tokens_ = reserved_tokens();
  freqs_.assign(kReservedIds, 0);
  if (!freqs.empty() && freqs.size() != tokens.size()) {
    throw Error(ErrorCode::kPrecondition, "vocabulary frequency table size mismatch");
  }
  for (std::size_t i = 0; i < tokens.size(); ++i) {
    tokens_.push_back(std::move(tokens[i]));
    freqs_.push_back(freqs.empty() ? 0 : freqs[i]);
  }
  for (std::size_t i = 0; i < tokens_.size(); ++i) {
    auto [it, inserted] = index_.emplace(tokens_[i], static_cast<int>(i));
    if (!inserted) throw Error(ErrorCode::kFormat, "duplicate vocabulary token '" + tokens_[i] + "'");
  }
}

int Vocabulary::id(std::string_view token) const {
  auto it = index_.find(std::string(token));
  return it == index_.end() ? kUnkId : it->second;
}

const std::string& Vocabulary::token(int id) const {
  if (id < 0 || static_cast<std::size_t>(id) >= tokens_.size()) {
    throw Error(ErrorCode::kIndex, "token id " + std::to_string(id) + " outside vocabulary");
  }
  return tokens_[static_cast<std::size_t>(id)];
}

std::size_t Vocabulary::frequency(int id) const {
  token(id);
  return freqs_[static_cast<std::size_t>(id)];
}

void Vocabulary::save(const std::filesystem::path& path) const {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error(ErrorCode::kIo, "cannot write vocabulary " + path.string());
  for (const auto& t : tokens_) out << t << '\n';
  if (!out) throw Error(ErrorCode::kIo, "short write to " + path.string());
}

Vocabulary Vocabulary::load(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorCode::kIo, "cannot read vocabulary " + path.string());
  std::vector<std::string> lines;
  std::string line;
  while (std::getline(in, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    lines.push_back(line);
  }
  const auto& reserved = reserved_tokens();
  if (lines.size() < kReservedIds || !std::equal(reserved.begin(), reserved.end(), lines.begin())) {
    throw Error(ErrorCode::kFormat, path.string() + ": missing reserved header lines");
  }
  return Vocabulary(std::vector<std::string>(lines.begin() + kReservedIds, lines.end()));
}

std::vector<std::pair<std::string, CharSpan>> split_words(std::string_view text) {
  std::vector<std::pair<std::string, CharSpan>> words;
  std::size_t i = 0;
  while (i < text.size()) {
    if (!is_word_byte(static_cast<unsigned char>(text[i]))) {
      ++i;
      continue;
    }
    const std::size_t begin = i;
    std::string word;
    while (i < text.size() && is_word_byte(static_cast<unsigned char>(text[i]))) {
      char c = text[i];
      if (c >= 'A' && c <= 'Z') c = static_cast<char>(c - 'A' + 'a');
      word.push_back(c);
      ++i;
    }
    words.push_back({std::move(word), CharSpan{begin, i}});
  }
  return words;
}

Vocabulary build_vocab(std::span<const std::string> corpus, std::size_t min_freq,
                       std::size_t max_size) {
  if (corpus.empty()) throw Error(ErrorCode::kPrecondition, "build_vocab: empty corpus");
  if (min_freq < 1) throw Error(ErrorCode::kPrecondition, "build_vocab: min_freq must be >= 1");
  std::map<std::string, std::size_t> counts;
  for (const auto& text : corpus) {
    for (auto& [word, span] : split_words(text)) ++counts[word];
  }
  std::vector<std::pair<std::string, std::size_t>> kept;
  for (auto& [word, n] : counts) {
    if (n >= min_freq) kept.emplace_back(word, n);
  }
  std::stable_sort(kept.begin(), kept.end(),
                   [](const auto& a, const auto& b) { return a.second > b.second; });
  if (kept.size() > max_size) kept.resize(max_size);
  std::vector<std::string> tokens;
  std::vector<std::size_t> freqs;
  for (auto& [word, n] : kept) {
    tokens.push_back(word);
    freqs.push_back(n);
  }
  return Vocabulary(std::move(tokens), std::move(freqs));
}

TokenizedSample tokenize(std::string_view text, const Vocabulary& vocab, int label) {
  TokenizedSample sample;
  sample.text = std::string(text);
  sample.label = label;
  sample.ids.push_back(kClsId);
  for (auto& [word, span] : split_words(text)) {
    sample.ids.push_back(vocab.id(word));
    sample.surface.push_back(std::move(word));
    sample.spans.push_back(span);
  }
  if (sample.surface.empty()) {
    throw Error(ErrorCode::kEmptySequence, "text has no tokens: '" + std::string(text) + "'");
  }
  return sample;
}

std::vector<TextExample> load_tsv(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorCode::kIo, "cannot read " + path.string());
  std::stringstream buffer;
  buffer << in.rdbuf();
  const std::string content = buffer.str();

  std::vector<TextExample> rows;
  std::size_t pos = 0;
  std::size_t line_no = 0;
  while (pos < content.size()) {
    ++line_no;
    std::size_t eol = content.find('\n', pos);
    if (eol == std::string::npos) eol = content.size();
    std::string_view line(content.data() + pos, eol - pos);
    pos = eol + 1;
    if (!line.empty() && line.back() == '\r') line.remove_suffix(1);

    const auto where = path.string() + ":" + std::to_string(line_no);
    const std::size_t tab = line.find('\t');
    if (tab == std::string_view::npos) throw Error(ErrorCode::kParse, where + ": missing tab");
    if (line.find('\t', tab + 1) != std::string_view::npos) {
      throw Error(ErrorCode::kParse, where + ": more than two fields");
    }
    const std::string_view label = line.substr(tab + 1);
    if (label.empty() || label.size() > 9 ||
        !std::all_of(label.begin(), label.end(), [](char c) { return c >= '0' && c <= '9'; })) {
      throw Error(ErrorCode::kParse, where + ": label '" + std::string(label) +
                                         "' is not a nonnegative integer");
    }
    rows.push_back({std::string(line.substr(0, tab)), std::stoi(std::string(label)), {}});
  }
  return rows;
}

void save_tsv(const std::filesystem::path& path, std::span<const TextExample> rows) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error(ErrorCode::kIo, "cannot write " + path.string());
  for (const auto& row : rows) {
    if (row.text.find_first_of("\t\r\n") != std::string::npos) {
      throw Error(ErrorCode::kPrecondition, "TSV text may not contain tabs or newlines");
    }
    out << row.text << '\t' << row.label << '\n';
  }
  if (!out) throw Error(ErrorCode::kIo, "short write to " + path.string());
}

std::string corrupt_token(std::string_view surface, Rng& rng) {
  if (surface.empty()) throw Error(ErrorCode::kPrecondition, "corrupt_token: empty token");
  const std::string original(surface);
  std::string out = original;
  const std::uint64_t edits = 1 + rng.uniform(2);
  for (std::uint64_t e = 0; e < edits; ++e) {
    const bool insert = rng.uniform(2) == 0;
    if (insert) {
      const std::size_t at = rng.uniform(out.size() + 1);
      out.insert(out.begin() + static_cast<std::ptrdiff_t>(at),
                 static_cast<char>('a' + rng.uniform(26)));
    } else {
      const std::size_t at = rng.uniform(out.size());
      const char replaced = out[at];
      // A second replacement may not undo the first one.
      for (;;) {
        out[at] = static_cast<char>('a' + rng.uniform(26));
        if (out[at] != replaced && out != original) break;
      }
    }
  }
  return out;
}

}  // namespace graad
