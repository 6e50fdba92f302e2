#include "graad/encoder.hpp"

#include <bit>
#include <cmath>
#include <cstring>

#include "graad/error.hpp"
#include "graad/io.hpp"
#include "graad/text.hpp"

namespace graad {
namespace {

constexpr double kLayerNormEps = 1e-5;
constexpr double kInitScale = 0.08;
constexpr std::string_view kMagic = "GRAAD1";
constexpr int kFormatVersion = 1;

static_assert(std::endian::native == std::endian::little,
              "checkpoint I/O assumes a little-endian host");

template <typename Params, typename Fn>
void visit_params(Params& p, Fn&& fn) {
  fn(std::string("token_embedding"), p.token_embedding);
  fn(std::string("position_embedding"), p.position_embedding);
  for (std::size_t l = 0; l < p.layers.size(); ++l) {
    auto& L = p.layers[l];
    const std::string pre = "layer" + std::to_string(l) + ".";
    fn(pre + "wq", L.wq);
    fn(pre + "bq", L.bq);
    fn(pre + "wk", L.wk);
    fn(pre + "bk", L.bk);
    fn(pre + "wv", L.wv);
    fn(pre + "bv", L.bv);
    fn(pre + "wo", L.wo);
    fn(pre + "bo", L.bo);
    fn(pre + "ln1_gain", L.ln1_gain);
    fn(pre + "ln1_bias", L.ln1_bias);
    fn(pre + "ffn_w1", L.ffn_w1);
    fn(pre + "ffn_b1", L.ffn_b1);
    fn(pre + "ffn_w2", L.ffn_w2);
    fn(pre + "ffn_b2", L.ffn_b2);
    fn(pre + "ln2_gain", L.ln2_gain);
    fn(pre + "ln2_bias", L.ln2_bias);
  }
  fn(std::string("classifier_weight"), p.classifier_weight);
  fn(std::string("classifier_bias"), p.classifier_bias);
}

bool is_layer_norm(const std::string& name) {
  return name.find(".ln") != std::string::npos;
}

}  // namespace

void EncoderConfig::validate() const {
  if (layers < 1 || heads < 1 || dim < 1 || ffn_dim < 1 || max_len < 1 || vocab_size < 1 ||
      num_classes < 1) {
    throw Error(ErrorCode::kPrecondition, "encoder extents must all be >= 1");
  }
  if (dim % heads != 0) {
    throw Error(ErrorCode::kPrecondition, "model dim " + std::to_string(dim) +
                                              " is not divisible by " + std::to_string(heads) +
                                              " heads");
  }
}

nlohmann::json EncoderConfig::to_json() const {
  return {{"layers", layers},   {"heads", heads},           {"dim", dim},
          {"ffn_dim", ffn_dim}, {"max_len", max_len},       {"vocab_size", vocab_size},
          {"num_classes", num_classes}};
}

EncoderConfig EncoderConfig::from_json(const nlohmann::json& j) {
  EncoderConfig c;
  c.layers = j.at("layers").get<std::size_t>();
  c.heads = j.at("heads").get<std::size_t>();
  c.dim = j.at("dim").get<std::size_t>();
  c.ffn_dim = j.at("ffn_dim").get<std::size_t>();
  c.max_len = j.at("max_len").get<std::size_t>();
  c.vocab_size = j.at("vocab_size").get<std::size_t>();
  c.num_classes = j.at("num_classes").get<std::size_t>();
  return c;
}

void ModelParams::for_each(
    const std::function<void(const std::string&, const Tensor&)>& fn) const {
  visit_params(*this, fn);
}

void ModelParams::for_each(const std::function<void(const std::string&, Tensor&)>& fn) {
  visit_params(*this, fn);
}

ModelParams ModelParams::zeros(const EncoderConfig& config) {
  config.validate();
  const std::size_t d = config.dim, f = config.ffn_dim;
  ModelParams p;
  p.token_embedding = Tensor({config.vocab_size, d});
  p.position_embedding = Tensor({config.max_len, d});
  for (std::size_t l = 0; l < config.layers; ++l) {
    LayerParams L;
    L.wq = L.wk = L.wv = L.wo = Tensor({d, d});
    L.bq = L.bk = L.bv = L.bo = Tensor({d});
    L.ln1_gain = L.ln1_bias = L.ln2_gain = L.ln2_bias = Tensor({d});
    L.ffn_w1 = Tensor({d, f});
    L.ffn_b1 = Tensor({f});
    L.ffn_w2 = Tensor({f, d});
    L.ffn_b2 = Tensor({d});
    p.layers.push_back(std::move(L));
  }
  p.classifier_weight = Tensor({d, config.num_classes});
  p.classifier_bias = Tensor({config.num_classes});
  return p;
}

std::size_t ModelParams::parameter_count() const {
  std::size_t n = 0;
  for_each([&n](const std::string&, const Tensor& t) { n += t.size(); });
  return n;
}

ModelParams init_params(const EncoderConfig& config, std::uint64_t seed) {
  ModelParams p = ModelParams::zeros(config);
  Rng rng(seed);
  p.for_each([&rng](const std::string& name, Tensor& t) {
    if (is_layer_norm(name)) {
      const bool gain = name.ends_with("_gain");
      for (double& v : t.data()) v = gain ? 1.0 : 0.0;
    } else {
      for (double& v : t.data()) v = rng.uniform_real(-kInitScale, kInitScale);
    }
  });
  return p;
}

std::size_t argmax(std::span<const double> values) {
  std::size_t best = 0;
  for (std::size_t i = 1; i < values.size(); ++i) {
    if (values[i] > values[best]) best = i;
  }
  return best;
}

void check_sequence(const EncoderConfig& config, std::span<const int> ids) {
  if (ids.empty()) throw Error(ErrorCode::kEmptySequence, "empty token sequence");
  if (ids.size() > config.max_len) {
    throw Error(ErrorCode::kLength, "sequence of " + std::to_string(ids.size()) +
                                        " tokens exceeds max length " +
                                        std::to_string(config.max_len));
  }
  for (int id : ids) {
    if (id < 0 || static_cast<std::size_t>(id) >= config.vocab_size) {
      throw Error(ErrorCode::kIndex, "token id " + std::to_string(id) + " outside vocabulary");
    }
  }
}

BoundParams BoundParams::bind(ag::Tape& tape, const ModelParams& p) {
  BoundParams b;
  b.token_embedding = tape.leaf_ref(p.token_embedding);
  b.position_embedding = tape.leaf_ref(p.position_embedding);
  for (const auto& L : p.layers) {
    b.layers.push_back({tape.leaf_ref(L.wq), tape.leaf_ref(L.bq), tape.leaf_ref(L.wk),
                        tape.leaf_ref(L.bk), tape.leaf_ref(L.wv), tape.leaf_ref(L.bv),
                        tape.leaf_ref(L.wo), tape.leaf_ref(L.bo), tape.leaf_ref(L.ln1_gain),
                        tape.leaf_ref(L.ln1_bias), tape.leaf_ref(L.ffn_w1),
                        tape.leaf_ref(L.ffn_b1), tape.leaf_ref(L.ffn_w2),
                        tape.leaf_ref(L.ffn_b2), tape.leaf_ref(L.ln2_gain),
                        tape.leaf_ref(L.ln2_bias)});
  }
  b.classifier_weight = tape.leaf_ref(p.classifier_weight);
  b.classifier_bias = tape.leaf_ref(p.classifier_bias);
  return b;
}

std::vector<ag::Var> BoundParams::all() const {
  // Same order as ModelParams::for_each.
  std::vector<ag::Var> v = {token_embedding, position_embedding};
  for (const auto& L : layers) {
    v.insert(v.end(), {L.wq, L.bq, L.wk, L.bk, L.wv, L.bv, L.wo, L.bo, L.ln1_gain, L.ln1_bias,
                       L.ffn_w1, L.ffn_b1, L.ffn_w2, L.ffn_b2, L.ln2_gain, L.ln2_bias});
  }
  v.push_back(classifier_weight);
  v.push_back(classifier_bias);
  return v;
}

EncoderGraph build_encoder_graph(const BoundParams& p, const EncoderConfig& config,
                                 ag::Var token_rows) {
  const std::size_t n = token_rows.value().rows();
  const std::size_t dk = config.key_dim();
  const double inv_sqrt_dk = 1.0 / std::sqrt(static_cast<double>(dk));

  EncoderGraph graph;
  ag::Var x = ag::add(token_rows, ag::slice_rows(p.position_embedding, 0, n));
  for (const auto& L : p.layers) {
    ag::Var q = ag::add_bias(ag::matmul(x, L.wq), L.bq);
    ag::Var k = ag::add_bias(ag::matmul(x, L.wk), L.bk);
    ag::Var v = ag::add_bias(ag::matmul(x, L.wv), L.bv);
    std::vector<ag::Var> heads_out;
    std::vector<ag::Var> layer_attention;
    for (std::size_t h = 0; h < config.heads; ++h) {
      ag::Var qh = ag::slice_cols(q, h * dk, dk);
      ag::Var kh = ag::slice_cols(k, h * dk, dk);
      ag::Var vh = ag::slice_cols(v, h * dk, dk);
      ag::Var attn = ag::softmax_rows(ag::scale(ag::matmul(qh, ag::transpose(kh)), inv_sqrt_dk));
      layer_attention.push_back(attn);
      heads_out.push_back(ag::matmul(attn, vh));
    }
    graph.attention.push_back(std::move(layer_attention));
    ag::Var mixed = ag::add_bias(ag::matmul(ag::concat_cols(heads_out), L.wo), L.bo);
    x = ag::layer_norm(ag::add(x, mixed), L.ln1_gain, L.ln1_bias, kLayerNormEps);
    ag::Var hidden = ag::relu(ag::add_bias(ag::matmul(x, L.ffn_w1), L.ffn_b1));
    ag::Var ffn = ag::add_bias(ag::matmul(hidden, L.ffn_w2), L.ffn_b2);
    x = ag::layer_norm(ag::add(x, ffn), L.ln2_gain, L.ln2_bias, kLayerNormEps);
  }
  ag::Var cls = ag::slice_rows(x, 0, 1);
  graph.logits = ag::add_bias(ag::matmul(cls, p.classifier_weight), p.classifier_bias);
  return graph;
}

namespace {

struct TapedPass {
  ag::Tape tape;
  ag::Var tokens;
  EncoderGraph graph;
};

void run_pass(TapedPass& pass, const ModelParams& params, const EncoderConfig& config,
              std::span<const int> ids) {
  check_sequence(config, ids);
  if (params.layers.size() != config.layers) {
    throw Error(ErrorCode::kDimension, "parameters do not match encoder configuration");
  }
  const std::size_t d = config.dim;
  Tensor rows({ids.size(), d});
  for (std::size_t i = 0; i < ids.size(); ++i) {
    auto src = params.token_embedding.row(static_cast<std::size_t>(ids[i]));
    std::copy(src.begin(), src.end(), rows.row(i).begin());
  }
  BoundParams bound = BoundParams::bind(pass.tape, params);
  pass.tokens = pass.tape.leaf(std::move(rows));
  pass.graph = build_encoder_graph(bound, config, pass.tokens);
}

ForwardTrace collect_trace(const TapedPass& pass) {
  ForwardTrace trace;
  trace.embeddings = pass.tokens.value();
  for (const auto& layer : pass.graph.attention) {
    std::vector<Tensor> heads;
    for (ag::Var a : layer) heads.push_back(a.value());
    trace.attention.push_back(std::move(heads));
  }
  const Tensor& z = pass.graph.logits.value();
  trace.logits = Tensor({z.size()}, z.values());
  trace.predicted = argmax(trace.logits.data());
  trace.predicted_logit = trace.logits[trace.predicted];
  return trace;
}

}  // namespace

ForwardTrace forward_with_trace(const ModelParams& params, const EncoderConfig& config,
                                std::span<const int> ids) {
  TapedPass pass;
  run_pass(pass, params, config, ids);
  return collect_trace(pass);
}

std::pair<ForwardTrace, Tensor> trace_and_gradient(const ModelParams& params,
                                                   const EncoderConfig& config,
                                                   std::span<const int> ids) {
  TapedPass pass;
  run_pass(pass, params, config, ids);
  ForwardTrace trace = collect_trace(pass);
  ag::Var logit = ag::pick(pass.graph.logits, trace.predicted);
  const ag::Var wrt[] = {pass.tokens};
  Tensor grad = std::move(pass.tape.backward(logit, wrt)[0]);
  return {std::move(trace), std::move(grad)};
}

Tensor predicted_logit_gradient(const ModelParams& params, const EncoderConfig& config,
                                std::span<const int> ids) {
  return trace_and_gradient(params, config, ids).second;
}

std::size_t predict(const ModelParams& params, const EncoderConfig& config,
                    std::span<const int> ids) {
  return forward_with_trace(params, config, ids).predicted;
}

std::string serialize_model(const ModelParams& params, const EncoderConfig& config) {
  nlohmann::json meta;
  meta["version"] = kFormatVersion;
  meta["config"] = config.to_json();
  meta["tensors"] = nlohmann::json::array();
  std::size_t values = 0;
  params.for_each([&](const std::string& name, const Tensor& t) {
    meta["tensors"].push_back({{"name", name}, {"shape", t.shape()}});
    values += t.size();
  });
  const std::string header = meta.dump();
  const auto len = static_cast<std::uint32_t>(header.size());

  std::string out;
  out.reserve(kMagic.size() + 4 + header.size() + values * sizeof(double));
  out += kMagic;
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((len >> (8 * i)) & 0xff));
  out += header;
  params.for_each([&](const std::string&, const Tensor& t) {
    const auto* bytes = reinterpret_cast<const char*>(t.data().data());
    out.append(bytes, t.size() * sizeof(double));
  });
  return out;
}

std::pair<ModelParams, EncoderConfig> deserialize_model(std::string_view bytes) {
  if (bytes.size() < kMagic.size() + 4 || bytes.substr(0, kMagic.size()) != kMagic) {
    throw Error(ErrorCode::kFormat, "not a checkpoint (bad magic)");
  }
  std::uint32_t len = 0;
  for (int i = 0; i < 4; ++i) {
    len |= static_cast<std::uint32_t>(static_cast<unsigned char>(bytes[kMagic.size() + i]))
           << (8 * i);
  }
  const std::size_t body = kMagic.size() + 4;
  if (bytes.size() - body < len) throw Error(ErrorCode::kFormat, "truncated checkpoint header");

  nlohmann::json meta;
  EncoderConfig config;
  try {
    meta = nlohmann::json::parse(bytes.substr(body, len));
    if (meta.at("version").get<int>() != kFormatVersion) {
      throw Error(ErrorCode::kFormat, "unsupported checkpoint version");
    }
    config = EncoderConfig::from_json(meta.at("config"));
    config.validate();
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorCode::kFormat, std::string("bad checkpoint metadata: ") + e.what());
  } catch (const Error& e) {
    throw Error(ErrorCode::kFormat, e.what());
  }

  ModelParams params = ModelParams::zeros(config);
  const auto& listed = meta.at("tensors");
  std::size_t i = 0;
  std::size_t offset = body + len;
  params.for_each([&](const std::string& name, Tensor& t) {
    if (i >= listed.size() || listed[i].value("name", "") != name ||
        listed[i].value("shape", std::vector<std::size_t>{}) != t.shape()) {
      throw Error(ErrorCode::kFormat, "checkpoint tensor list does not match its configuration at " + name);
    }
    ++i;
    const std::size_t n = t.size() * sizeof(double);
    if (bytes.size() - offset < n) throw Error(ErrorCode::kFormat, "truncated checkpoint data");
    std::memcpy(t.data().data(), bytes.data() + offset, n);
    offset += n;
  });
  if (i != listed.size()) throw Error(ErrorCode::kFormat, "checkpoint lists extra tensors");
  if (offset != bytes.size()) throw Error(ErrorCode::kFormat, "trailing bytes after checkpoint data");
  return {std::move(params), config};
}

void save_model(const ModelParams& params, const EncoderConfig& config,
                const std::filesystem::path& path) {
  write_file(path, serialize_model(params, config));
}

std::pair<ModelParams, EncoderConfig> load_model(const std::filesystem::path& path) {
  return deserialize_model(read_file(path));
}

std::pair<ModelParams, EncoderConfig> load_model(const std::filesystem::path& path,
                                                 const EncoderConfig& expected) {
  auto loaded = load_model(path);
  if (!(loaded.second == expected)) {
    throw Error(ErrorCode::kFormat, path.string() + ": checkpoint configuration " +
                                        loaded.second.to_json().dump() + " does not match " +
                                        expected.to_json().dump());
  }
  return loaded;
}

}  // namespace graad
