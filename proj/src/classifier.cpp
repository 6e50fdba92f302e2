#include "graad/classifier.hpp"

#include "graad/error.hpp"

namespace graad {

TokenizedSample TextClassifier::tokenize(std::string_view text, int label) const {
  TokenizedSample sample = graad::tokenize(text, vocab, label);
  if (sample.ids.size() > config.max_len) {
    throw Error(ErrorCode::kLength, "'" + std::string(text) + "' has " +
                                        std::to_string(sample.ids.size()) +
                                        " tokens with CLS, model limit is " +
                                        std::to_string(config.max_len));
  }
  return sample;
}

std::size_t TextClassifier::predict(std::string_view text) const {
  return graad::predict(params, config, tokenize(text).ids);
}

}  // namespace graad
