#pragma once

#include <cstddef>
#include <filesystem>
#include <string>
#include <string_view>

#include "graad/encoder.hpp"
#include "graad/text.hpp"

namespace graad {

// A trained encoder together with the vocabulary that feeds it.
struct TextClassifier {
  ModelParams params;
  EncoderConfig config;
  Vocabulary vocab;

  TokenizedSample tokenize(std::string_view text, int label = -1) const;
  std::size_t predict(std::string_view text) const;
};

}  // namespace graad
