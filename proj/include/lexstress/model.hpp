#pragma once

// Transformer encoder-decoder (post-layer-norm, sinusoidal positions)
// mapping 80-dim log-mel frames to stress-marked phoneme logits.
//
// Desk-scale defaults: d_model 64, 4 heads, 2+2 layers, d_ff 256. The
// decoder input embedding and the output projection are separate tensors.

#include <cmath>
#include <cstdint>
#include <map>
#include <span>
#include <string>
#include <vector>

#include "lexstress/features.hpp"
#include "lexstress/graph.hpp"
#include "lexstress/phonemes.hpp"
#include "lexstress/tensor.hpp"
#include "lexstress/util.hpp"

namespace lexstress::model {

struct ModelConfig {
  int d_model = 64;
  int n_heads = 4;
  int n_enc_layers = 2;
  int n_dec_layers = 2;
  int d_ff = 256;
  float dropout_rate = 0.1f;
  int max_positions = 2048;
  int vocab_size = lex::Vocabulary::kSize;
  int feature_dim = dsp::kFeatureDim;

  void validate() const {
    if (d_model <= 0 || n_heads <= 0 || n_enc_layers <= 0 ||
        n_dec_layers <= 0 || d_ff <= 0 || max_positions <= 0 ||
        vocab_size <= 0 || feature_dim <= 0)
      throw InputError("model config: all dimensions must be positive");
    if (d_model % n_heads != 0)
      throw InputError(cat("model config: d_model ", d_model,
                           " not divisible by n_heads ", n_heads));
    if (!(dropout_rate >= 0.0f && dropout_rate < 1.0f))
      throw InputError("model config: dropout_rate must be in [0,1)");
  }

  friend bool operator==(const ModelConfig&, const ModelConfig&) = default;
};

template <class Real>
using ParamMap = std::map<std::string, nn::Tensor<Real>>;

// All trainable tensors plus the feature normalization that inference must
// replay; this is exactly what a checkpoint stores.
struct ModelParameters {
  ModelConfig config;
  ParamMap<float> tensors;
  dsp::FeatureStats stats;
  uint64_t seed = 0;
  int64_t step = 0;
};

namespace detail {

inline std::vector<std::string> attention_names(const std::string& prefix) {
  return {prefix + ".wq", prefix + ".bq", prefix + ".wk", prefix + ".bk",
          prefix + ".wv", prefix + ".bv", prefix + ".wo", prefix + ".bo"};
}

}  // namespace detail

// Canonical tensor name -> shape listing; init, checkpoints and the
// parameter-count formula all derive from it.
inline std::vector<std::pair<std::string, nn::Shape>> parameter_spec(
    const ModelConfig& cfg) {
  using nn::Shape;
  const int d = cfg.d_model, ff = cfg.d_ff, v = cfg.vocab_size,
            f = cfg.feature_dim;
  std::vector<std::pair<std::string, Shape>> spec;
  spec.emplace_back("in_proj.w", Shape{f, d});
  spec.emplace_back("in_proj.b", Shape{d});
  spec.emplace_back("tok_emb", Shape{v, d});
  spec.emplace_back("out_proj.w", Shape{d, v});
  spec.emplace_back("out_proj.b", Shape{v});
  auto add_attention = [&](const std::string& prefix) {
    for (const auto& name : detail::attention_names(prefix))
      spec.emplace_back(name, name[name.size() - 2] == 'w' ? Shape{d, d}
                                                           : Shape{d});
  };
  auto add_ffn_ln = [&](const std::string& prefix, int n_ln) {
    spec.emplace_back(prefix + ".ffn.w1", Shape{d, ff});
    spec.emplace_back(prefix + ".ffn.b1", Shape{ff});
    spec.emplace_back(prefix + ".ffn.w2", Shape{ff, d});
    spec.emplace_back(prefix + ".ffn.b2", Shape{d});
    for (int i = 1; i <= n_ln; ++i) {
      spec.emplace_back(prefix + ".ln" + std::to_string(i) + ".g", Shape{d});
      spec.emplace_back(prefix + ".ln" + std::to_string(i) + ".b", Shape{d});
    }
  };
  for (int l = 0; l < cfg.n_enc_layers; ++l) {
    const std::string p = "enc.l" + std::to_string(l);
    add_attention(p + ".attn");
    add_ffn_ln(p, 2);
  }
  for (int l = 0; l < cfg.n_dec_layers; ++l) {
    const std::string p = "dec.l" + std::to_string(l);
    add_attention(p + ".self");
    add_attention(p + ".cross");
    add_ffn_ln(p, 3);
  }
  return spec;
}

// Closed-form trainable parameter count; tests hold the enumerated tensors
// to this formula.
inline int64_t expected_param_count(const ModelConfig& cfg) {
  const int64_t d = cfg.d_model, ff = cfg.d_ff, v = cfg.vocab_size,
                f = cfg.feature_dim;
  const int64_t attn = 4 * (d * d + d);
  const int64_t ffn = d * ff + ff + ff * d + d;
  const int64_t enc_layer = attn + ffn + 2 * 2 * d;
  const int64_t dec_layer = 2 * attn + ffn + 3 * 2 * d;
  return f * d + d + v * d + d * v + v + cfg.n_enc_layers * enc_layer +
         cfg.n_dec_layers * dec_layer;
}

inline int64_t param_count(const ParamMap<float>& tensors) {
  int64_t n = 0;
  for (const auto& [name, t] : tensors) n += t.size();
  return n;
}

// Xavier-uniform weights, zero biases, unit layer-norm gains. The draw
// order follows parameter_spec, so a seed pins every tensor.
inline ModelParameters init_parameters(const ModelConfig& cfg, uint64_t seed) {
  cfg.validate();
  ModelParameters mp;
  mp.config = cfg;
  mp.seed = seed;
  Rng rng(mix64(seed, 0x9e1cull));
  for (const auto& [name, shape] : parameter_spec(cfg)) {
    if (shape.nd == 2) {
      mp.tensors.emplace(
          name, nn::xavier_uniform<float>(shape, shape.d[0], shape.d[1], rng));
    } else {
      nn::Tensor<float> t(shape);
      if (name.size() > 2 && name[name.size() - 1] == 'g' &&
          name[name.size() - 2] == '.')
        t.fill(1.0f);  // layer-norm gain
      mp.tensors.emplace(name, std::move(t));
    }
  }
  return mp;
}

template <class Real>
ParamMap<Real> cast_params(const ParamMap<float>& src) {
  ParamMap<Real> out;
  for (const auto& [name, t] : src) out.emplace(name, t.template cast<Real>());
  return out;
}

// sin/cos positional table for positions [0, n)
template <class Real>
nn::Tensor<Real> positional_encoding(int n, int d_model) {
  nn::Tensor<Real> pe({n, d_model});
  for (int pos = 0; pos < n; ++pos)
    for (int i = 0; i < d_model; i += 2) {
      const double angle =
          pos / std::pow(10000.0, static_cast<double>(i) / d_model);
      pe.at(pos, i) = static_cast<Real>(std::sin(angle));
      if (i + 1 < d_model) pe.at(pos, i + 1) = static_cast<Real>(std::cos(angle));
    }
  return pe;
}

template <class Real>
nn::Tensor<Real> causal_mask(int n) {
  nn::Tensor<Real> m({n, n});
  const Real neg_inf = -std::numeric_limits<Real>::infinity();
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < n; ++j) m.at(i, j) = j <= i ? Real(0) : neg_inf;
  return m;
}

// Additive mask hiding key positions >= valid_len from every query.
template <class Real>
nn::Tensor<Real> key_padding_mask(int query_len, int key_len, int valid_len) {
  nn::Tensor<Real> m({query_len, key_len});
  const Real neg_inf = -std::numeric_limits<Real>::infinity();
  for (int i = 0; i < query_len; ++i)
    for (int j = 0; j < key_len; ++j)
      m.at(i, j) = j < valid_len ? Real(0) : neg_inf;
  return m;
}

struct ForwardOptions {
  bool train = false;
  Rng* rng = nullptr;  // required when train and dropout_rate > 0
};

namespace detail {

template <class Real>
const nn::Tensor<Real>& named(const ParamMap<Real>& p,
                              const std::string& name) {
  auto it = p.find(name);
  if (it == p.end()) throw ComputeError(cat("missing parameter ", name));
  return it->second;
}

template <class Real>
int linear(nn::Graph<Real>& g, const ParamMap<Real>& p, const std::string& w,
           const std::string& b, int x) {
  return g.add_bias(g.matmul(x, g.param(named(p, w), w)),
                    g.param(named(p, b), b));
}

template <class Real>
int multi_head_attention(nn::Graph<Real>& g, const ParamMap<Real>& p,
                         const std::string& prefix, int x_q, int x_kv,
                         const nn::Tensor<Real>* mask, int heads) {
  const int q = linear(g, p, prefix + ".wq", prefix + ".bq", x_q);
  const int k = linear(g, p, prefix + ".wk", prefix + ".bk", x_kv);
  const int v = linear(g, p, prefix + ".wv", prefix + ".bv", x_kv);
  const int ctx = g.scaled_dot_attention(g.split_heads(q, heads),
                                         g.split_heads(k, heads),
                                         g.split_heads(v, heads), mask);
  return linear(g, p, prefix + ".wo", prefix + ".bo", g.merge_heads(ctx));
}

template <class Real>
int sublayer_norm(nn::Graph<Real>& g, const ParamMap<Real>& p,
                  const std::string& ln, int x, int sub, Real dropout,
                  const ForwardOptions& opts) {
  const int dropped = g.dropout(sub, dropout, opts.rng, opts.train);
  return g.layer_norm(g.add(x, dropped), g.param(named(p, ln + ".g"), ln + ".g"),
                      g.param(named(p, ln + ".b"), ln + ".b"));
}

template <class Real>
int ffn(nn::Graph<Real>& g, const ParamMap<Real>& p, const std::string& prefix,
        int x) {
  const int h = g.relu(linear(g, p, prefix + ".ffn.w1", prefix + ".ffn.b1", x));
  return linear(g, p, prefix + ".ffn.w2", prefix + ".ffn.b2", h);
}

}  // namespace detail

// Encoder stack over a [T, feature_dim] node; returns the [T, d_model]
// memory node. `self_mask` hides padded frames when batches are padded.
template <class Real>
int build_encoder(nn::Graph<Real>& g, const ParamMap<Real>& p,
                  const ModelConfig& cfg, int feats,
                  const ForwardOptions& opts,
                  const nn::Tensor<Real>* self_mask = nullptr) {
  using detail::named;
  const int T = g.value(feats).dim(0);
  if (T > cfg.max_positions)
    throw InputError(cat("input has ", T, " frames, max_positions is ",
                         cfg.max_positions));
  const Real drop = static_cast<Real>(cfg.dropout_rate);
  int x = detail::linear(g, p, "in_proj.w", "in_proj.b", feats);
  x = g.add(x, g.input(positional_encoding<Real>(T, cfg.d_model)));
  x = g.dropout(x, drop, opts.rng, opts.train);
  for (int l = 0; l < cfg.n_enc_layers; ++l) {
    const std::string prefix = "enc.l" + std::to_string(l);
    const int attn = detail::multi_head_attention(
        g, p, prefix + ".attn", x, x, self_mask, cfg.n_heads);
    x = detail::sublayer_norm(g, p, prefix + ".ln1", x, attn, drop, opts);
    const int ff = detail::ffn(g, p, prefix, x);
    x = detail::sublayer_norm(g, p, prefix + ".ln2", x, ff, drop, opts);
  }
  return x;
}

// Decoder stack over gold/prefix token ids (starting with <sos>); returns
// the [L, vocab] logits node. `cross_mask` hides padded memory frames.
template <class Real>
int build_decoder(nn::Graph<Real>& g, const ParamMap<Real>& p,
                  const ModelConfig& cfg, int memory,
                  std::span<const int> tokens, const ForwardOptions& opts,
                  const nn::Tensor<Real>* cross_mask = nullptr) {
  using detail::named;
  if (tokens.empty()) throw ComputeError("decoder prefix must be non-empty");
  const int L = static_cast<int>(tokens.size());
  if (L > cfg.max_positions)
    throw InputError(cat("target has ", L, " tokens, max_positions is ",
                         cfg.max_positions));
  const Real drop = static_cast<Real>(cfg.dropout_rate);
  const nn::Tensor<Real> self_mask = causal_mask<Real>(L);

  int x = g.embedding(g.param(named(p, "tok_emb"), "tok_emb"),
                      std::vector<int>(tokens.begin(), tokens.end()));
  x = g.scale(x, std::sqrt(static_cast<Real>(cfg.d_model)));
  x = g.add(x, g.input(positional_encoding<Real>(L, cfg.d_model)));
  x = g.dropout(x, drop, opts.rng, opts.train);
  for (int l = 0; l < cfg.n_dec_layers; ++l) {
    const std::string prefix = "dec.l" + std::to_string(l);
    const int self = detail::multi_head_attention(
        g, p, prefix + ".self", x, x, &self_mask, cfg.n_heads);
    x = detail::sublayer_norm(g, p, prefix + ".ln1", x, self, drop, opts);
    const int cross = detail::multi_head_attention(
        g, p, prefix + ".cross", x, memory, cross_mask, cfg.n_heads);
    x = detail::sublayer_norm(g, p, prefix + ".ln2", x, cross, drop, opts);
    const int ff = detail::ffn(g, p, prefix, x);
    x = detail::sublayer_norm(g, p, prefix + ".ln3", x, ff, drop, opts);
  }
  return detail::linear(g, p, "out_proj.w", "out_proj.b", x);
}

// T x d_model continuous representation of one utterance.
struct EncoderMemory {
  nn::Tensor<float> values;

  int frames() const { return values.shape.nd > 0 ? values.dim(0) : 0; }
};

inline nn::Tensor<float> features_tensor(const dsp::FeatureSequence& feats) {
  return nn::Tensor<float>({feats.frames, dsp::kFeatureDim}, feats.values);
}

// Deterministic eval-mode encoding of a (normalized) feature sequence.
inline EncoderMemory encode(const dsp::FeatureSequence& feats,
                            const ModelParameters& mp) {
  mp.config.validate();
  nn::Graph<float> g;
  const int node = build_encoder(g, mp.tensors, mp.config,
                                 g.input(features_tensor(feats)), {});
  return EncoderMemory{g.value(node)};
}

// Logits (vocab_size) for the next position after `prefix`; prefix must
// start with <sos>. Deterministic in eval mode; earlier positions are
// unaffected by later prefix entries (causal mask).
inline std::vector<float> decode_step(const EncoderMemory& memory,
                                      std::span<const int> prefix,
                                      const ModelParameters& mp) {
  if (prefix.empty()) throw ComputeError("decode_step: empty prefix");
  if (prefix.front() != lex::Vocabulary::kSos)
    throw ComputeError("decode_step: prefix must start with <sos>");
  nn::Graph<float> g;
  const int logits = build_decoder(g, mp.tensors, mp.config,
                                   g.input(memory.values), prefix, {});
  const auto& t = g.value(logits);
  const int L = t.dim(0), V = t.dim(1);
  std::vector<float> out(V);
  for (int j = 0; j < V; ++j) out[j] = t.at(L - 1, j);
  return out;
}

}  // namespace lexstress::model
