#include "lasi/nn.hpp"

#include <cmath>

namespace lasi::nn {

BoolMat causal_mask(int64_t len) {
  if (len < 1) throw ShapeError("causal_mask: len must be >= 1");
  BoolMat m(len, len, false);
  for (int64_t i = 0; i < len; ++i) {
    for (int64_t j = 0; j <= i; ++j) m.set(i, j, true);
  }
  return m;
}

BoolMat key_padding_mask(int64_t lq, int64_t lk, int64_t valid_keys) {
  BoolMat m(lq, lk, false);
  for (int64_t i = 0; i < lq; ++i) {
    for (int64_t j = 0; j < valid_keys && j < lk; ++j) m.set(i, j, true);
  }
  return m;
}

BoolMat and_mask(const BoolMat& a, const BoolMat& b) {
  if (a.rows() != b.rows() || a.cols() != b.cols()) throw ShapeError("and_mask: shape mismatch");
  BoolMat m(a.rows(), a.cols(), false);
  for (int64_t i = 0; i < a.rows(); ++i) {
    for (int64_t j = 0; j < a.cols(); ++j) m.set(i, j, a.at(i, j) && b.at(i, j));
  }
  return m;
}

template <class T>
AttentionOut<T> scaled_dot_attention(const Tensor<T>& q, const Tensor<T>& k, const Tensor<T>& v,
                                     const BoolMat* mask, const Mode& mode) {
  if (q.rank() != 2 || k.rank() != 2 || v.rank() != 2) {
    throw ShapeError("scaled_dot_attention: rank-2 inputs expected");
  }
  if (q.dim(1) != k.dim(1)) {
    throw ShapeError("scaled_dot_attention: query width " + shape_str(q.shape()) +
                     " vs key width " + shape_str(k.shape()));
  }
  if (k.dim(0) != v.dim(0)) {
    throw ShapeError("scaled_dot_attention: keys " + shape_str(k.shape()) + " and values " +
                     shape_str(v.shape()) + " must share length");
  }
  const T inv_sqrt_dk = static_cast<T>(1.0 / std::sqrt(static_cast<double>(q.dim(1))));
  Tensor<T> scores = scale(matmul_nt(q, k), inv_sqrt_dk);
  Tensor<T> weights;
  if (mask) {
    if (mask->rows() != q.dim(0) || mask->cols() != k.dim(0)) {
      throw ShapeError("scaled_dot_attention: mask [" + std::to_string(mask->rows()) + "," +
                       std::to_string(mask->cols()) + "] vs scores " + shape_str(scores.shape()));
    }
    weights = masked_softmax_rows(scores, *mask);
  } else {
    weights = softmax(scores, 1);
  }
  Tensor<T> applied = weights;
  if (mode.train && mode.dropout_rate > 0.0) {
    applied = dropout(applied, mode.dropout_rate, *mode.rng);
  }
  return {matmul(applied, v), weights};
}

template <class T>
Tensor<T> multi_head_attention(const BlockConfig& cfg, const AttentionParams<T>& params,
                               const Tensor<T>& q_in, const Tensor<T>& k_in, const Tensor<T>& v_in,
                               const BoolMat* mask, const Mode& mode,
                               std::vector<Tensor<T>>* head_weights) {
  if (k_in.dim(0) != v_in.dim(0)) {
    throw ShapeError("multi_head_attention: key/value lengths differ, " + shape_str(k_in.shape()) +
                     " vs " + shape_str(v_in.shape()));
  }
  const int64_t dk = cfg.head_dim();
  Tensor<T> q = matmul(q_in, params.wq);
  Tensor<T> k = matmul(k_in, params.wk);
  Tensor<T> v = matmul(v_in, params.wv);
  std::vector<Tensor<T>> heads;
  heads.reserve(static_cast<size_t>(cfg.n_heads));
  for (int64_t h = 0; h < cfg.n_heads; ++h) {
    auto out = scaled_dot_attention(col_slice(q, h * dk, dk), col_slice(k, h * dk, dk),
                                    col_slice(v, h * dk, dk), mask, mode);
    heads.push_back(out.output);
    if (head_weights) head_weights->push_back(out.weights);
  }
  return matmul(concat_cols(std::span<const Tensor<T>>(heads)), params.wo);
}

template <class T>
Tensor<T> feed_forward(const FfnParams<T>& p, const Tensor<T>& x, const Mode& mode) {
  Tensor<T> h = gelu(add_rowvec(matmul(x, p.w1), p.b1));
  if (mode.train && mode.dropout_rate > 0.0) h = dropout(h, mode.dropout_rate, *mode.rng);
  return add_rowvec(matmul(h, p.w2), p.b2);
}

template <class T>
Tensor<T> encoder_layer(const BlockConfig& cfg, const EncoderLayerParams<T>& p, const Tensor<T>& x,
                        const BoolMat* pad_mask, const Mode& mode) {
  Tensor<T> attn = multi_head_attention(cfg, p.attn, x, x, x, pad_mask, mode);
  Tensor<T> x1 = layer_norm(add(x, attn), p.ln1.gain, p.ln1.bias);
  Tensor<T> ff = feed_forward(p.ffn, x1, mode);
  return layer_norm(add(x1, ff), p.ln2.gain, p.ln2.bias);
}

template <class T>
Tensor<T> decoder_layer(const BlockConfig& cfg, const DecoderLayerParams<T>& p, const Tensor<T>& x,
                        const BoolMat* pad_mask, CrossInput<T> cross, const Mode& mode) {
  const int64_t len = x.dim(0);
  BoolMat causal = causal_mask(len);
  if (pad_mask) causal = and_mask(causal, *pad_mask);
  Tensor<T> sa = multi_head_attention(cfg, p.self_attn, x, x, x, &causal, mode);
  Tensor<T> x1 = layer_norm(add(x, sa), p.ln1.gain, p.ln1.bias);
  if (cross.memory) {
    if (!p.has_cross) {
      throw ConfigError("decoder_layer: cross input given but layer has no cross-attention");
    }
    Tensor<T> ca = multi_head_attention(cfg, p.cross_attn, x1, *cross.memory, *cross.memory,
                                        cross.memory_mask, mode);
    x1 = layer_norm(add(x1, ca), p.ln_cross.gain, p.ln_cross.bias);
  }
  Tensor<T> ff = feed_forward(p.ffn, x1, mode);
  return layer_norm(add(x1, ff), p.ln2.gain, p.ln2.bias);
}

template <class T>
Tensor<T> embed(const EmbeddingParams<T>& p, std::span<const int> ids) {
  return embedding(p.tok, p.pos, ids);
}

#define LASI_NN_INSTANTIATE(T)                                                                \
  template struct AttentionParams<T>;                                                        \
  template struct LayerNormParams<T>;                                                        \
  template struct FfnParams<T>;                                                              \
  template struct EncoderLayerParams<T>;                                                     \
  template struct DecoderLayerParams<T>;                                                     \
  template struct EmbeddingParams<T>;                                                        \
  template AttentionOut<T> scaled_dot_attention(const Tensor<T>&, const Tensor<T>&,          \
                                                const Tensor<T>&, const BoolMat*,            \
                                                const Mode&);                                \
  template Tensor<T> multi_head_attention(const BlockConfig&, const AttentionParams<T>&,     \
                                          const Tensor<T>&, const Tensor<T>&,                \
                                          const Tensor<T>&, const BoolMat*, const Mode&,     \
                                          std::vector<Tensor<T>>*);                          \
  template Tensor<T> feed_forward(const FfnParams<T>&, const Tensor<T>&, const Mode&);       \
  template Tensor<T> encoder_layer(const BlockConfig&, const EncoderLayerParams<T>&,         \
                                   const Tensor<T>&, const BoolMat*, const Mode&);           \
  template Tensor<T> decoder_layer(const BlockConfig&, const DecoderLayerParams<T>&,         \
                                   const Tensor<T>&, const BoolMat*, CrossInput<T>,          \
                                   const Mode&);                                             \
  template Tensor<T> embed(const EmbeddingParams<T>&, std::span<const int>);

LASI_NN_INSTANTIATE(float)
LASI_NN_INSTANTIATE(double)

#undef LASI_NN_INSTANTIATE

}  // namespace lasi::nn
