#include "graad/trainer.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "graad/error.hpp"
#include "graad/parallel.hpp"

namespace graad {

void TrainConfig::validate() const {
  if (epochs < 1) throw Error(ErrorCode::kPrecondition, "epochs must be >= 1");
  if (batch_size < 1) throw Error(ErrorCode::kPrecondition, "batch size must be >= 1");
  if (!(learning_rate > 0.0)) throw Error(ErrorCode::kPrecondition, "learning rate must be > 0");
  if (!(beta1 >= 0.0 && beta1 < 1.0) || !(beta2 >= 0.0 && beta2 < 1.0)) {
    throw Error(ErrorCode::kPrecondition, "Adam betas must lie in [0, 1)");
  }
  if (!(adam_eps > 0.0)) throw Error(ErrorCode::kPrecondition, "Adam eps must be > 0");
}

nlohmann::json TrainConfig::to_json() const {
  return {{"epochs", epochs},       {"batch_size", batch_size}, {"learning_rate", learning_rate},
          {"beta1", beta1},         {"beta2", beta2},           {"adam_eps", adam_eps},
          {"clip_norm", clip_norm}, {"seed", seed}};
}

double cross_entropy(const Tensor& logits, std::size_t label) {
  if (label >= logits.size()) {
    throw Error(ErrorCode::kIndex, "cross_entropy: label " + std::to_string(label) +
                                       " outside " + std::to_string(logits.size()) + " classes");
  }
  double zmax = -INFINITY;
  for (double v : logits.data()) zmax = std::max(zmax, v);
  double total = 0.0;
  for (double v : logits.data()) total += std::exp(v - zmax);
  return zmax + std::log(total) - logits[label];
}

void adam_step(std::span<Tensor* const> params, std::span<const Tensor> grads, AdamState& state,
               const TrainConfig& config) {
  if (params.size() != grads.size()) {
    throw Error(ErrorCode::kDimension, "adam_step: parameter/gradient count mismatch");
  }
  if (state.first_moment.empty()) {
    for (const Tensor* p : params) {
      state.first_moment.push_back(Tensor::zeros_like(*p));
      state.second_moment.push_back(Tensor::zeros_like(*p));
    }
  }
  double clip = 1.0;
  if (config.clip_norm > 0.0) {
    double sq = 0.0;
    for (const Tensor& g : grads) {
      for (double v : g.data()) sq += v * v;
    }
    const double norm = std::sqrt(sq);
    if (norm > config.clip_norm) clip = config.clip_norm / norm;
  }

  ++state.step;
  const double t = static_cast<double>(state.step);
  const double correct1 = 1.0 - std::pow(config.beta1, t);
  const double correct2 = 1.0 - std::pow(config.beta2, t);
  for (std::size_t i = 0; i < params.size(); ++i) {
    Tensor& p = *params[i];
    Tensor& m = state.first_moment[i];
    Tensor& v = state.second_moment[i];
    const Tensor& g = grads[i];
    if (!p.same_shape(g)) {
      throw Error(ErrorCode::kDimension, "adam_step: gradient " + g.shape_string() +
                                             " for parameter " + p.shape_string());
    }
    for (std::size_t j = 0; j < p.size(); ++j) {
      const double gj = g[j] * clip;
      m[j] = config.beta1 * m[j] + (1.0 - config.beta1) * gj;
      v[j] = config.beta2 * v[j] + (1.0 - config.beta2) * gj * gj;
      const double m_hat = m[j] / correct1;
      const double v_hat = v[j] / correct2;
      p[j] -= config.learning_rate * m_hat / (std::sqrt(v_hat) + config.adam_eps);
    }
  }
}

void adam_step(ModelParams& params, std::span<const Tensor> grads, AdamState& state,
               const TrainConfig& config) {
  std::vector<Tensor*> ptrs;
  params.for_each([&ptrs](const std::string&, Tensor& t) { ptrs.push_back(&t); });
  adam_step(ptrs, grads, state, config);
}

std::vector<Tensor> loss_gradients(const ModelParams& params, const EncoderConfig& config,
                                   std::span<const int> ids, std::size_t label, double* loss,
                                   std::size_t* predicted) {
  check_sequence(config, ids);
  ag::Tape tape;
  BoundParams bound = BoundParams::bind(tape, params);
  ag::Var tokens = ag::gather_rows(bound.token_embedding, ids);
  EncoderGraph graph = build_encoder_graph(bound, config, tokens);
  ag::Var objective = ag::cross_entropy(graph.logits, label);
  if (loss != nullptr) *loss = objective.value()[0];
  if (predicted != nullptr) *predicted = argmax(graph.logits.value().data());
  const auto wrt = bound.all();
  return tape.backward(objective, wrt);
}

TrainResult train(std::span<const TokenizedSample> data, const TrainConfig& config,
                  const EncoderConfig& encoder, std::uint64_t seed, int jobs) {
  config.validate();
  encoder.validate();
  if (data.empty()) throw Error(ErrorCode::kPrecondition, "train: empty dataset");
  for (const auto& s : data) {
    if (s.label < 0 || static_cast<std::size_t>(s.label) >= encoder.num_classes) {
      throw Error(ErrorCode::kPrecondition, "train: label " + std::to_string(s.label) +
                                                " outside " +
                                                std::to_string(encoder.num_classes) + " classes");
    }
  }

  TrainResult result{init_params(encoder, seed), {}};
  AdamState state;
  Rng order_rng(config.seed);
  std::vector<std::size_t> order(data.size());
  std::iota(order.begin(), order.end(), 0);

  struct SampleGrad {
    std::vector<Tensor> grads;
    double loss = 0.0;
    bool correct = false;
  };

  for (std::size_t epoch = 0; epoch < config.epochs; ++epoch) {
    order_rng.shuffle(order);
    double loss_sum = 0.0;
    std::size_t correct = 0;
    for (std::size_t start = 0; start < order.size(); start += config.batch_size) {
      const std::size_t batch = std::min(config.batch_size, order.size() - start);
      auto per_sample = parallel_map<SampleGrad>(batch, jobs, [&](std::size_t b) {
        const auto& s = data[order[start + b]];
        SampleGrad out;
        std::size_t predicted = 0;
        out.grads = loss_gradients(result.params, encoder, s.ids,
                                   static_cast<std::size_t>(s.label), &out.loss, &predicted);
        out.correct = predicted == static_cast<std::size_t>(s.label);
        return out;
      });
      std::vector<Tensor> mean = std::move(per_sample[0].grads);
      for (std::size_t b = 1; b < batch; ++b) {
        for (std::size_t i = 0; i < mean.size(); ++i) mean[i].add_in_place(per_sample[b].grads[i]);
      }
      const double inv = 1.0 / static_cast<double>(batch);
      for (Tensor& g : mean) {
        for (double& v : g.data()) v *= inv;
      }
      for (const auto& s : per_sample) {
        loss_sum += s.loss;
        correct += s.correct ? 1 : 0;
      }
      adam_step(result.params, mean, state, config);
    }
    result.epochs.push_back({epoch + 1, loss_sum / static_cast<double>(data.size()),
                             static_cast<double>(correct) / static_cast<double>(data.size())});
  }
  return result;
}

double accuracy(const ModelParams& params, const EncoderConfig& config,
                std::span<const TokenizedSample> data, int jobs) {
  if (data.empty()) throw Error(ErrorCode::kPrecondition, "accuracy: empty dataset");
  auto hits = parallel_map<char>(data.size(), jobs, [&](std::size_t i) -> char {
    return predict(params, config, data[i].ids) == static_cast<std::size_t>(data[i].label);
  });
  std::size_t total = 0;
  for (char h : hits) total += static_cast<std::size_t>(h);
  return static_cast<double>(total) / static_cast<double>(data.size());
}

}  // namespace graad
