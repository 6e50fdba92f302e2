#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include <nlohmann/json.hpp>

#include "graad/autodiff.hpp"
#include "graad/tensor.hpp"

namespace graad {

struct EncoderConfig {
  std::size_t layers = 2;
  std::size_t heads = 2;
  std::size_t dim = 32;
  std::size_t ffn_dim = 64;
  std::size_t max_len = 32;
  std::size_t vocab_size = 0;
  std::size_t num_classes = 2;

  std::size_t key_dim() const { return dim / heads; }
  void validate() const;

  nlohmann::json to_json() const;
  static EncoderConfig from_json(const nlohmann::json& j);
  friend bool operator==(const EncoderConfig&, const EncoderConfig&) = default;
};

struct LayerParams {
  Tensor wq, bq, wk, bk, wv, bv, wo, bo;
  Tensor ln1_gain, ln1_bias;
  Tensor ffn_w1, ffn_b1, ffn_w2, ffn_b2;
  Tensor ln2_gain, ln2_bias;

  friend bool operator==(const LayerParams&, const LayerParams&) = default;
};

struct ModelParams {
  Tensor token_embedding;     // [vocab × d]
  Tensor position_embedding;  // [max_len × d]
  std::vector<LayerParams> layers;
  Tensor classifier_weight;  // [d × C]
  Tensor classifier_bias;    // [C]

  // Visits every tensor in serialization order.
  void for_each(const std::function<void(const std::string&, const Tensor&)>& fn) const;
  void for_each(const std::function<void(const std::string&, Tensor&)>& fn);

  // Zero-filled parameters with the shapes `config` implies.
  static ModelParams zeros(const EncoderConfig& config);

  std::size_t parameter_count() const;
  friend bool operator==(const ModelParams&, const ModelParams&) = default;
};

struct ForwardTrace {
  Tensor embeddings;                            // token-table rows, before positions
  std::vector<std::vector<Tensor>> attention;   // [layer][head], each n×n
  Tensor logits;                                // [C]
  std::size_t predicted = 0;
  double predicted_logit = 0.0;
};

ModelParams init_params(const EncoderConfig& config, std::uint64_t seed);

// Lowest index wins ties.
std::size_t argmax(std::span<const double> values);

ForwardTrace forward_with_trace(const ModelParams& params, const EncoderConfig& config,
                                std::span<const int> ids);

// d(z_y)/dE for the predicted class y, E being the token-table rows.
Tensor predicted_logit_gradient(const ModelParams& params, const EncoderConfig& config,
                                std::span<const int> ids);

// One taped pass yielding both the trace and the predicted-logit gradient.
std::pair<ForwardTrace, Tensor> trace_and_gradient(const ModelParams& params,
                                                   const EncoderConfig& config,
                                                   std::span<const int> ids);

std::size_t predict(const ModelParams& params, const EncoderConfig& config,
                    std::span<const int> ids);

// Parameters bound to a tape as leaves, for training and gradient checks.
struct BoundParams {
  ag::Var token_embedding, position_embedding;
  struct Layer {
    ag::Var wq, bq, wk, bk, wv, bv, wo, bo, ln1_gain, ln1_bias;
    ag::Var ffn_w1, ffn_b1, ffn_w2, ffn_b2, ln2_gain, ln2_bias;
  };
  std::vector<Layer> layers;
  ag::Var classifier_weight, classifier_bias;

  static BoundParams bind(ag::Tape& tape, const ModelParams& params);
  std::vector<ag::Var> all() const;
};

struct EncoderGraph {
  ag::Var logits;
  std::vector<std::vector<ag::Var>> attention;
};

// Records the encoder on `token_rows`' tape. `token_rows` are the n×d
// token embeddings (before positions), ids.size() == n.
EncoderGraph build_encoder_graph(const BoundParams& params, const EncoderConfig& config,
                                 ag::Var token_rows);

void check_sequence(const EncoderConfig& config, std::span<const int> ids);

// "GRAAD1" | u32 LE metadata length | JSON metadata | f64 LE tensors.
std::string serialize_model(const ModelParams& params, const EncoderConfig& config);
std::pair<ModelParams, EncoderConfig> deserialize_model(std::string_view bytes);

void save_model(const ModelParams& params, const EncoderConfig& config,
                const std::filesystem::path& path);
std::pair<ModelParams, EncoderConfig> load_model(const std::filesystem::path& path);
// Also rejects checkpoints whose configuration differs from `expected`.
std::pair<ModelParams, EncoderConfig> load_model(const std::filesystem::path& path,
                                                 const EncoderConfig& expected);

}  // namespace graad
