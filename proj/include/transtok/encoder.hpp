#pragma once

// Long-context bidirectional encoder: pre-norm transformer blocks with
// alternating global/local (banded) attention, rotary position embeddings
// with separate theta for global and local layers, a gated gelu feed-forward,
// and a masked-LM head tied to the input embeddings.
//
// Conventions fixed here: layer i attends globally iff i % global_every == 0
// (first layer global); the local window is a symmetric band |i-j| <=
// window/2; attention projections carry no bias; rotary positions are
// absolute token indices in both layer kinds.

#include <json.hpp>

#include <fstream>
#include <optional>
#include <string>
#include <vector>

#include "transtok/common.hpp"
#include "transtok/tensor.hpp"
#include "transtok/transtokenizer.hpp"

namespace transtok {

struct EncoderConfig {
  std::size_t hidden = 768;
  std::size_t layers = 22;
  std::size_t heads = 12;
  std::size_t intermediate = 1152;
  std::size_t vocab_size = 50280;
  std::size_t max_context = 8192;
  std::size_t global_every = 3;
  std::size_t local_window = 128;
  double rope_theta_global = 160000.0;
  double rope_theta_local = 10000.0;
  double mask_rate = 0.30;
  double norm_eps = 1e-5;
  bool rope_enabled = true;  // debug switch (permutation-equivariance checks)

  std::size_t head_dim() const { return hidden / heads; }

  void validate() const {
    if (hidden == 0 || layers == 0 || heads == 0 || intermediate == 0 ||
        vocab_size == 0 || max_context == 0 || global_every == 0 ||
        local_window == 0) {
      throw std::invalid_argument("encoder config: all sizes must be positive");
    }
    if (hidden % heads != 0) {
      throw std::invalid_argument(
          "encoder config: hidden must be divisible by heads");
    }
    if ((hidden / heads) % 2 != 0) {
      throw std::invalid_argument(
          "encoder config: head dimension must be even for rotary pairs");
    }
    if (local_window % 2 != 0) {
      throw std::invalid_argument("encoder config: local_window must be even");
    }
    if (rope_theta_global <= 0.0 || rope_theta_local <= 0.0) {
      throw std::invalid_argument("encoder config: theta must be positive");
    }
    if (!(mask_rate > 0.0 && mask_rate < 1.0)) {
      throw std::invalid_argument("encoder config: mask_rate must be in (0,1)");
    }
    if (norm_eps <= 0.0) {
      throw std::invalid_argument("encoder config: norm_eps must be positive");
    }
  }
};

inline nlohmann::ordered_json encoder_config_to_json(const EncoderConfig& c) {
  nlohmann::ordered_json j;
  j["hidden"] = c.hidden;
  j["layers"] = c.layers;
  j["heads"] = c.heads;
  j["intermediate"] = c.intermediate;
  j["vocab_size"] = c.vocab_size;
  j["max_context"] = c.max_context;
  j["global_every"] = c.global_every;
  j["local_window"] = c.local_window;
  j["rope_theta_global"] = c.rope_theta_global;
  j["rope_theta_local"] = c.rope_theta_local;
  j["mask_rate"] = c.mask_rate;
  j["norm_eps"] = c.norm_eps;
  j["rope_enabled"] = c.rope_enabled;
  return j;
}

inline EncoderConfig encoder_config_from_json(const nlohmann::json& j) {
  EncoderConfig c;
  for (auto it = j.begin(); it != j.end(); ++it) {
    const std::string& k = it.key();
    if (k == "hidden") c.hidden = it.value().get<std::size_t>();
    else if (k == "layers") c.layers = it.value().get<std::size_t>();
    else if (k == "heads") c.heads = it.value().get<std::size_t>();
    else if (k == "intermediate") c.intermediate = it.value().get<std::size_t>();
    else if (k == "vocab_size") c.vocab_size = it.value().get<std::size_t>();
    else if (k == "max_context") c.max_context = it.value().get<std::size_t>();
    else if (k == "global_every") c.global_every = it.value().get<std::size_t>();
    else if (k == "local_window") c.local_window = it.value().get<std::size_t>();
    else if (k == "rope_theta_global") c.rope_theta_global = it.value().get<double>();
    else if (k == "rope_theta_local") c.rope_theta_local = it.value().get<double>();
    else if (k == "mask_rate") c.mask_rate = it.value().get<double>();
    else if (k == "norm_eps") c.norm_eps = it.value().get<double>();
    else if (k == "rope_enabled") c.rope_enabled = it.value().get<bool>();
    else throw std::runtime_error("encoder config: unknown field '" + k + "'");
  }
  c.validate();
  return c;
}

enum class AttnKind { global, local };

inline std::vector<AttnKind> attention_schedule(const EncoderConfig& cfg) {
  std::vector<AttnKind> s(cfg.layers);
  for (std::size_t i = 0; i < cfg.layers; ++i) {
    s[i] = (i % cfg.global_every == 0) ? AttnKind::global : AttnKind::local;
  }
  return s;
}

// Band mask as an explicit matrix (1.0 allowed / 0.0 blocked). The model
// never materializes this at scale — it exists for oracles and inspection.
inline Tensor local_attention_mask(std::size_t seq_len, std::size_t window) {
  if (seq_len < 1) throw std::invalid_argument("local_attention_mask: seq_len");
  if (window < 1 || window % 2 != 0) {
    throw std::invalid_argument(
        "local_attention_mask: window must be positive and even");
  }
  const std::size_t half = window / 2;
  Tensor m({seq_len, seq_len});
  for (std::size_t i = 0; i < seq_len; ++i) {
    for (std::size_t j = 0; j < seq_len; ++j) {
      const std::size_t d = i > j ? i - j : j - i;
      m.data()[i * seq_len + j] = d <= half ? 1.0 : 0.0;
    }
  }
  return m;
}

struct LayerParams {
  Tensor attn_norm_gain, attn_norm_bias;
  Tensor wq, wk, wv, wo;  // (hidden, hidden), bias-free
  Tensor ff_norm_gain, ff_norm_bias;
  Tensor w_gate, w_up;  // (hidden, intermediate)
  Tensor w_down;        // (intermediate, hidden)
};

struct EncoderModel {
  EncoderConfig config;
  Tensor embeddings;  // (vocab, hidden); also the tied output projection
  std::vector<LayerParams> layers;
  Tensor final_norm_gain, final_norm_bias;
  Tensor mlm_bias;  // (vocab), the only untied output-head parameter
  std::vector<AttnKind> schedule;

  std::vector<std::pair<std::string, Tensor>> named_parameters() const {
    std::vector<std::pair<std::string, Tensor>> out;
    out.emplace_back("embeddings", embeddings);
    for (std::size_t i = 0; i < layers.size(); ++i) {
      const std::string p = "layers." + std::to_string(i) + ".";
      const LayerParams& l = layers[i];
      out.emplace_back(p + "attn_norm_gain", l.attn_norm_gain);
      out.emplace_back(p + "attn_norm_bias", l.attn_norm_bias);
      out.emplace_back(p + "wq", l.wq);
      out.emplace_back(p + "wk", l.wk);
      out.emplace_back(p + "wv", l.wv);
      out.emplace_back(p + "wo", l.wo);
      out.emplace_back(p + "ff_norm_gain", l.ff_norm_gain);
      out.emplace_back(p + "ff_norm_bias", l.ff_norm_bias);
      out.emplace_back(p + "w_gate", l.w_gate);
      out.emplace_back(p + "w_up", l.w_up);
      out.emplace_back(p + "w_down", l.w_down);
    }
    out.emplace_back("final_norm_gain", final_norm_gain);
    out.emplace_back("final_norm_bias", final_norm_bias);
    out.emplace_back("mlm_bias", mlm_bias);
    return out;
  }
};

namespace detail {

inline Tensor param(std::vector<std::size_t> shape) {
  Tensor t(std::move(shape), /*requires_grad=*/true);
  return t;
}

inline Tensor ones_param(std::size_t n) {
  Tensor t = param({n});
  for (auto& v : t.values()) v = 1.0;
  return t;
}

// Allocates the full parameter set (zeros; norm gains = 1).
inline EncoderModel allocate_model(const EncoderConfig& cfg) {
  cfg.validate();
  EncoderModel m;
  m.config = cfg;
  m.embeddings = param({cfg.vocab_size, cfg.hidden});
  m.layers.resize(cfg.layers);
  for (auto& l : m.layers) {
    l.attn_norm_gain = ones_param(cfg.hidden);
    l.attn_norm_bias = param({cfg.hidden});
    l.wq = param({cfg.hidden, cfg.hidden});
    l.wk = param({cfg.hidden, cfg.hidden});
    l.wv = param({cfg.hidden, cfg.hidden});
    l.wo = param({cfg.hidden, cfg.hidden});
    l.ff_norm_gain = ones_param(cfg.hidden);
    l.ff_norm_bias = param({cfg.hidden});
    l.w_gate = param({cfg.hidden, cfg.intermediate});
    l.w_up = param({cfg.hidden, cfg.intermediate});
    l.w_down = param({cfg.intermediate, cfg.hidden});
  }
  m.final_norm_gain = ones_param(cfg.hidden);
  m.final_norm_bias = param({cfg.hidden});
  m.mlm_bias = param({cfg.vocab_size});
  m.schedule = attention_schedule(cfg);
  return m;
}

}  // namespace detail

// Builds a model with seeded-normal weight matrices (std 0.02), unit norm
// gains, zero biases. Embeddings come from `init_emb` when given (vocabulary
// transfer) or a dedicated random sub-stream otherwise, so two models built
// from the same seed share every non-embedding parameter either way.
inline EncoderModel build_model(const EncoderConfig& cfg,
                                const EmbeddingMatrix* init_emb,
                                std::uint64_t seed) {
  EncoderModel m = detail::allocate_model(cfg);
  const double init_std = 0.02;
  Rng body(sub_seed(seed, "body"));
  for (auto& l : m.layers) {
    for (Tensor* w : {&l.wq, &l.wk, &l.wv, &l.wo, &l.w_gate, &l.w_up,
                      &l.w_down}) {
      for (auto& v : w->values()) v = body.normal(0.0, init_std);
    }
  }
  if (init_emb != nullptr) {
    if (init_emb->rows != cfg.vocab_size || init_emb->dim != cfg.hidden) {
      throw std::invalid_argument(
          "build_model: init embedding matrix is " +
          std::to_string(init_emb->rows) + "x" + std::to_string(init_emb->dim) +
          " but config wants " + std::to_string(cfg.vocab_size) + "x" +
          std::to_string(cfg.hidden));
    }
    m.embeddings.values() = init_emb->values;
  } else {
    Rng emb_rng(sub_seed(seed, "embeddings"));
    for (auto& v : m.embeddings.values()) v = emb_rng.normal(0.0, init_std);
  }
  return m;
}

// Pre-norm attention block with residual: x + Wo * attn(rope(Wq n), rope(Wk n),
// Wv n), banded when the schedule says local.
inline Tensor attention_layer(const Tensor& x, const LayerParams& p,
                              AttnKind kind, const EncoderConfig& cfg) {
  if (x.rank() != 2 || x.dim(1) != cfg.hidden) {
    throw std::invalid_argument("attention_layer: expected (T, hidden)");
  }
  const std::size_t T = x.dim(0);
  if (T > cfg.max_context) {
    throw std::invalid_argument("attention_layer: sequence length " +
                                std::to_string(T) + " exceeds max_context " +
                                std::to_string(cfg.max_context));
  }
  Tensor n = layer_norm(x, p.attn_norm_gain, p.attn_norm_bias, cfg.norm_eps);
  Tensor q = matmul(n, p.wq);
  Tensor k = matmul(n, p.wk);
  Tensor v = matmul(n, p.wv);
  if (cfg.rope_enabled) {
    std::vector<std::size_t> positions(T);
    for (std::size_t i = 0; i < T; ++i) positions[i] = i;
    const double theta = kind == AttnKind::global ? cfg.rope_theta_global
                                                  : cfg.rope_theta_local;
    q = rope(q, positions, cfg.heads, theta);
    k = rope(k, positions, cfg.heads, theta);
  }
  std::optional<std::size_t> window;
  if (kind == AttnKind::local) window = cfg.local_window;
  Tensor core = attention(q, k, v, cfg.heads, window);
  return add(x, matmul(core, p.wo));
}

// Pre-norm gated feed-forward with residual:
// x + (gelu(n Wg) ⊙ (n Wu)) Wd.
inline Tensor feed_forward_layer(const Tensor& x, const LayerParams& p,
                                 const EncoderConfig& cfg) {
  Tensor n = layer_norm(x, p.ff_norm_gain, p.ff_norm_bias, cfg.norm_eps);
  Tensor gate = gelu(matmul(n, p.w_gate));
  Tensor up = matmul(n, p.w_up);
  return add(x, matmul(mul(gate, up), p.w_down));
}

// Final-normed hidden states (T, hidden).
inline Tensor encoder_hidden(const EncoderModel& m,
                             const std::vector<int>& ids) {
  if (ids.empty()) {
    throw std::invalid_argument("encoder: empty input sequence");
  }
  if (ids.size() > m.config.max_context) {
    throw std::invalid_argument(
        "encoder: sequence length " + std::to_string(ids.size()) +
        " exceeds max_context " + std::to_string(m.config.max_context));
  }
  Tensor x = embedding_rows(m.embeddings, ids);
  for (std::size_t i = 0; i < m.layers.size(); ++i) {
    x = attention_layer(x, m.layers[i], m.schedule[i], m.config);
    x = feed_forward_layer(x, m.layers[i], m.config);
  }
  return layer_norm(x, m.final_norm_gain, m.final_norm_bias, m.config.norm_eps);
}

// Per-position vocabulary logits via the tied projection plus head bias.
inline Tensor forward(const EncoderModel& m, const std::vector<int>& ids) {
  Tensor h = encoder_hidden(m, ids);
  return add_rowvec(matmul_nt(h, m.embeddings), m.mlm_bias);
}

// ---------------------------------------------------------------------------
// Binary container: magic "ENC1", length-prefixed JSON config, then named
// tensors (name length, name bytes, rank, extents, f64 data). Read until EOF.
// Checkpoints reuse the same container with extra non-model tensors.
// ---------------------------------------------------------------------------

struct NamedTensor {
  std::string name;
  std::vector<std::size_t> shape;
  std::vector<double> data;
};

inline void write_container(const std::string& path,
                            const std::string& config_json,
                            const std::vector<NamedTensor>& tensors) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot open file for writing: " + path);
  out.write("ENC1", 4);
  put_u64(out, config_json.size());
  out.write(config_json.data(),
            static_cast<std::streamsize>(config_json.size()));
  for (const auto& t : tensors) {
    put_u64(out, t.name.size());
    out.write(t.name.data(), static_cast<std::streamsize>(t.name.size()));
    put_u64(out, t.shape.size());
    std::size_t n = 1;
    for (auto d : t.shape) {
      put_u64(out, d);
      n *= d;
    }
    if (n != t.data.size()) {
      throw std::logic_error("write_container: tensor '" + t.name +
                             "' shape/data mismatch");
    }
    put_f64_array(out, t.data.data(), t.data.size());
  }
  if (!out) throw std::runtime_error("write failed: " + path);
}

struct Container {
  std::string config_json;
  std::vector<NamedTensor> tensors;

  const NamedTensor* find(const std::string& name) const {
    for (const auto& t : tensors) {
      if (t.name == name) return &t;
    }
    return nullptr;
  }
};

inline Container read_container(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open file for reading: " + path);
  char magic[4];
  in.read(magic, 4);
  if (!in || std::string_view(magic, 4) != "ENC1") {
    throw std::runtime_error("bad container magic in " + path);
  }
  Container c;
  const auto json_len = get_u64(in);
  c.config_json.resize(json_len);
  in.read(c.config_json.data(), static_cast<std::streamsize>(json_len));
  if (!in) throw std::runtime_error("container truncated in config: " + path);
  while (true) {
    // Peek for EOF before the next record.
    if (in.peek() == std::char_traits<char>::eof()) break;
    NamedTensor t;
    const auto name_len = get_u64(in);
    t.name.resize(name_len);
    in.read(t.name.data(), static_cast<std::streamsize>(name_len));
    const auto rank = get_u64(in);
    std::size_t n = 1;
    for (std::uint64_t i = 0; i < rank; ++i) {
      t.shape.push_back(static_cast<std::size_t>(get_u64(in)));
      n *= t.shape.back();
    }
    t.data.resize(n);
    get_f64_array(in, t.data.data(), n);
    if (!in) {
      throw std::runtime_error("container truncated in tensor '" + t.name +
                               "': " + path);
    }
    c.tensors.push_back(std::move(t));
  }
  return c;
}

inline std::vector<NamedTensor> model_tensors(const EncoderModel& m) {
  std::vector<NamedTensor> out;
  for (const auto& [name, t] : m.named_parameters()) {
    out.push_back({name, t.shape(), t.values()});
  }
  return out;
}

inline void save_model(const EncoderModel& m, const std::string& path) {
  write_container(path, encoder_config_to_json(m.config).dump(), model_tensors(m));
}

// Restores a model from container contents; every model parameter must be
// present with the right shape. Extra tensors (optimizer state etc.) are
// ignored here and handled by the training module.
inline EncoderModel model_from_container(const Container& c) {
  EncoderConfig cfg;
  try {
    cfg = encoder_config_from_json(nlohmann::json::parse(c.config_json));
  } catch (const nlohmann::json::parse_error& e) {
    throw std::runtime_error(std::string("container config JSON invalid: ") +
                             e.what());
  }
  EncoderModel m = detail::allocate_model(cfg);
  for (auto& [name, t] : m.named_parameters()) {
    const NamedTensor* src = c.find(name);
    if (src == nullptr) {
      throw std::runtime_error("container is missing model tensor '" + name +
                               "'");
    }
    if (src->shape != t.shape()) {
      throw std::runtime_error("container tensor '" + name +
                               "' has mismatched shape");
    }
    t.node()->value = src->data;
  }
  return m;
}

inline EncoderModel load_model(const std::string& path) {
  return model_from_container(read_container(path));
}

}  // namespace transtok
