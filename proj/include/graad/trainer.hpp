#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include <nlohmann/json.hpp>

#include "graad/encoder.hpp"
#include "graad/text.hpp"

namespace graad {

struct TrainConfig {
  std::size_t epochs = 8;
  std::size_t batch_size = 16;
  double learning_rate = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double adam_eps = 1e-8;
  double clip_norm = 0.0;  // <= 0 disables clipping
  std::uint64_t seed = 0;

  void validate() const;
  nlohmann::json to_json() const;
};

struct AdamState {
  std::vector<Tensor> first_moment;
  std::vector<Tensor> second_moment;
  std::uint64_t step = 0;
};

struct EpochMetrics {
  std::size_t epoch = 0;
  double loss = 0.0;
  double accuracy = 0.0;
};

struct TrainResult {
  ModelParams params;
  std::vector<EpochMetrics> epochs;
};

// -log softmax(logits)[label] on plain tensors.
double cross_entropy(const Tensor& logits, std::size_t label);

// Bias-corrected Adam over parallel lists of parameters and gradients.
// Moments are created on the first call. Clipping (if configured) rescales
// the gradients by their global L2 norm before the update.
void adam_step(std::span<Tensor* const> params, std::span<const Tensor> grads, AdamState& state,
               const TrainConfig& config);
void adam_step(ModelParams& params, std::span<const Tensor> grads, AdamState& state,
               const TrainConfig& config);

// Gradient of the cross-entropy loss w.r.t. every parameter, in
// ModelParams::for_each order. Optionally reports the loss and the predicted
// class of the same forward pass.
std::vector<Tensor> loss_gradients(const ModelParams& params, const EncoderConfig& config,
                                   std::span<const int> ids, std::size_t label,
                                   double* loss = nullptr, std::size_t* predicted = nullptr);

// Mini-batch training from init_params(encoder, seed); batch order comes
// from config.seed. `jobs` spreads the
// per-sample gradients of a batch over threads; they are summed in sample
// order, so the result does not depend on it.
TrainResult train(std::span<const TokenizedSample> data, const TrainConfig& config,
                  const EncoderConfig& encoder, std::uint64_t seed, int jobs = 1);

double accuracy(const ModelParams& params, const EncoderConfig& config,
                std::span<const TokenizedSample> data, int jobs = 1);

}  // namespace graad
