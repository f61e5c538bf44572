#pragma once

#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "lasi/tensor.hpp"

namespace lasi::nn {

/// Shared transformer block geometry. Desk-scale defaults; max_len matches
/// the 100-token truncation used throughout the pipeline.
struct BlockConfig {
  int64_t d_model = 128;
  int64_t n_heads = 4;
  int64_t d_ff = 512;
  int64_t max_len = 100;
  double dropout_rate = 0.1;

  int64_t head_dim() const {
    if (n_heads <= 0 || d_model % n_heads != 0) {
      throw ConfigError("BlockConfig: n_heads " + std::to_string(n_heads) +
                        " must divide d_model " + std::to_string(d_model));
    }
    return d_model / n_heads;
  }
};

/// Forward-pass context: training enables dropout (and callers' masking);
/// eval forwards are pure functions of the parameters.
struct Mode {
  bool train = false;
  double dropout_rate = 0.0;
  Rng* rng = nullptr;

  static Mode eval() { return {}; }
  static Mode training(double dropout, Rng& rng) { return {true, dropout, &rng}; }
};

template <class T>
using ParamVisitor = std::function<void(const std::string&, Tensor<T>&)>;

/// Named parameters in a fixed registration order (Tensor is a shared
/// handle, so entries alias the model's own storage).
template <class T>
using ParamList = std::vector<std::pair<std::string, Tensor<T>>>;

inline constexpr double kInitStd = 0.02;

template <class T>
struct AttentionParams {
  Tensor<T> wq, wk, wv, wo;  // each [d_model, d_model]

  static AttentionParams init(int64_t d_model, Rng& rng) {
    AttentionParams p;
    p.wq = Tensor<T>::randn({d_model, d_model}, rng, kInitStd).set_requires_grad(true);
    p.wk = Tensor<T>::randn({d_model, d_model}, rng, kInitStd).set_requires_grad(true);
    p.wv = Tensor<T>::randn({d_model, d_model}, rng, kInitStd).set_requires_grad(true);
    p.wo = Tensor<T>::randn({d_model, d_model}, rng, kInitStd).set_requires_grad(true);
    return p;
  }

  void visit(const std::string& prefix, const ParamVisitor<T>& fn) {
    fn(prefix + ".wq", wq);
    fn(prefix + ".wk", wk);
    fn(prefix + ".wv", wv);
    fn(prefix + ".wo", wo);
  }
};

template <class T>
struct LayerNormParams {
  Tensor<T> gain, bias;

  static LayerNormParams init(int64_t d) {
    LayerNormParams p;
    p.gain = Tensor<T>::full({d}, T(1)).set_requires_grad(true);
    p.bias = Tensor<T>::zeros({d}).set_requires_grad(true);
    return p;
  }

  void visit(const std::string& prefix, const ParamVisitor<T>& fn) {
    fn(prefix + ".gain", gain);
    fn(prefix + ".bias", bias);
  }
};

template <class T>
struct FfnParams {
  Tensor<T> w1, b1, w2, b2;

  static FfnParams init(int64_t d_model, int64_t d_ff, Rng& rng) {
    FfnParams p;
    p.w1 = Tensor<T>::randn({d_model, d_ff}, rng, kInitStd).set_requires_grad(true);
    p.b1 = Tensor<T>::zeros({d_ff}).set_requires_grad(true);
    p.w2 = Tensor<T>::randn({d_ff, d_model}, rng, kInitStd).set_requires_grad(true);
    p.b2 = Tensor<T>::zeros({d_model}).set_requires_grad(true);
    return p;
  }

  void visit(const std::string& prefix, const ParamVisitor<T>& fn) {
    fn(prefix + ".w1", w1);
    fn(prefix + ".b1", b1);
    fn(prefix + ".w2", w2);
    fn(prefix + ".b2", b2);
  }
};

template <class T>
struct EncoderLayerParams {
  AttentionParams<T> attn;
  LayerNormParams<T> ln1;
  FfnParams<T> ffn;
  LayerNormParams<T> ln2;

  static EncoderLayerParams init(const BlockConfig& cfg, Rng& rng) {
    EncoderLayerParams p;
    p.attn = AttentionParams<T>::init(cfg.d_model, rng);
    p.ln1 = LayerNormParams<T>::init(cfg.d_model);
    p.ffn = FfnParams<T>::init(cfg.d_model, cfg.d_ff, rng);
    p.ln2 = LayerNormParams<T>::init(cfg.d_model);
    return p;
  }

  void visit(const std::string& prefix, const ParamVisitor<T>& fn) {
    attn.visit(prefix + ".attn", fn);
    ln1.visit(prefix + ".ln1", fn);
    ffn.visit(prefix + ".ffn", fn);
    ln2.visit(prefix + ".ln2", fn);
  }
};

template <class T>
struct DecoderLayerParams {
  AttentionParams<T> self_attn;
  LayerNormParams<T> ln1;
  bool has_cross = false;
  AttentionParams<T> cross_attn;
  LayerNormParams<T> ln_cross;
  FfnParams<T> ffn;
  LayerNormParams<T> ln2;

  static DecoderLayerParams init(const BlockConfig& cfg, bool with_cross, Rng& rng) {
    DecoderLayerParams p;
    p.self_attn = AttentionParams<T>::init(cfg.d_model, rng);
    p.ln1 = LayerNormParams<T>::init(cfg.d_model);
    p.has_cross = with_cross;
    if (with_cross) {
      p.cross_attn = AttentionParams<T>::init(cfg.d_model, rng);
      p.ln_cross = LayerNormParams<T>::init(cfg.d_model);
    }
    p.ffn = FfnParams<T>::init(cfg.d_model, cfg.d_ff, rng);
    p.ln2 = LayerNormParams<T>::init(cfg.d_model);
    return p;
  }

  void visit(const std::string& prefix, const ParamVisitor<T>& fn) {
    self_attn.visit(prefix + ".self_attn", fn);
    ln1.visit(prefix + ".ln1", fn);
    if (has_cross) {
      cross_attn.visit(prefix + ".cross_attn", fn);
      ln_cross.visit(prefix + ".ln_cross", fn);
    }
    ffn.visit(prefix + ".ffn", fn);
    ln2.visit(prefix + ".ln2", fn);
  }
};

template <class T>
struct EmbeddingParams {
  Tensor<T> tok, pos;  // [vocab, d_model], [max_len, d_model]

  static EmbeddingParams init(int64_t vocab, int64_t max_len, int64_t d_model, Rng& rng) {
    EmbeddingParams p;
    p.tok = Tensor<T>::randn({vocab, d_model}, rng, kInitStd).set_requires_grad(true);
    p.pos = Tensor<T>::randn({max_len, d_model}, rng, kInitStd).set_requires_grad(true);
    return p;
  }

  void visit(const std::string& prefix, const ParamVisitor<T>& fn) {
    fn(prefix + ".tok", tok);
    fn(prefix + ".pos", pos);
  }
};

/// Entry (i,j) permitted iff j <= i.
BoolMat causal_mask(int64_t len);

/// [Lq x Lk] mask permitting key positions < valid_keys.
BoolMat key_padding_mask(int64_t lq, int64_t lk, int64_t valid_keys);

/// Elementwise AND of two masks of equal shape.
BoolMat and_mask(const BoolMat& a, const BoolMat& b);

template <class T>
struct AttentionOut {
  Tensor<T> output;
  Tensor<T> weights;  // post-mask, post-softmax (pre-dropout)
};

/// softmax(Q K^T / sqrt(d_k)) V with optional boolean mask; masked positions
/// get exactly zero weight.
template <class T>
AttentionOut<T> scaled_dot_attention(const Tensor<T>& q, const Tensor<T>& k, const Tensor<T>& v,
                                     const BoolMat* mask = nullptr, const Mode& mode = Mode());

/// Per-head projections -> scaled_dot_attention -> concat -> output
/// projection. If head_weights is non-null it receives one weight matrix per
/// head.
template <class T>
Tensor<T> multi_head_attention(const BlockConfig& cfg, const AttentionParams<T>& params,
                               const Tensor<T>& q_in, const Tensor<T>& k_in, const Tensor<T>& v_in,
                               const BoolMat* mask = nullptr, const Mode& mode = Mode(),
                               std::vector<Tensor<T>>* head_weights = nullptr);

template <class T>
Tensor<T> feed_forward(const FfnParams<T>& p, const Tensor<T>& x, const Mode& mode);

/// Self-attention (keys optionally padding-masked) + residual + layer norm,
/// then feed-forward + residual + layer norm.
template <class T>
Tensor<T> encoder_layer(const BlockConfig& cfg, const EncoderLayerParams<T>& p, const Tensor<T>& x,
                        const BoolMat* pad_mask = nullptr, const Mode& mode = Mode());

template <class T>
struct CrossInput {
  const Tensor<T>* memory = nullptr;
  const BoolMat* memory_mask = nullptr;
};

/// Causal self-attention sublayer, optional cross-attention over memory,
/// feed-forward; residual + norm around each.
template <class T>
Tensor<T> decoder_layer(const BlockConfig& cfg, const DecoderLayerParams<T>& p, const Tensor<T>& x,
                        const BoolMat* pad_mask = nullptr, CrossInput<T> cross = {},
                        const Mode& mode = Mode());

/// Token + learned position embedding for a (trimmed) id sequence.
template <class T>
Tensor<T> embed(const EmbeddingParams<T>& p, std::span<const int> ids);

}  // namespace lasi::nn
