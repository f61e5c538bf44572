#pragma once

#include <string>
#include <vector>

#include "lasi/nn.hpp"
#include "lasi/tokens.hpp"

namespace lasi::lm {

enum class Pooling { encoder_cls, decoder_eos };

/// B(s) or G(s): a fixed-width sentence representation read from the
/// encoder's [CLS] position or the decoder's [EOS] position.
template <class T>
struct PooledEmbedding {
  Tensor<T> vector;  // [d_model]
  Pooling source = Pooling::encoder_cls;
  std::string sentence_id;
};

struct ModelSpec {
  nn::BlockConfig block;
  int64_t vocab_size = 0;
  int64_t n_layers = 2;
  int64_t n_labels = 5;
};

template <class T>
struct EncodeOut {
  Tensor<T> states;  // [L, d_model], trimmed to the last non-pad position
  PooledEmbedding<T> pooled;
};

/// Mini bidirectional encoder with an MLM head; [CLS] pooling.
template <class T>
class EncoderModel {
 public:
  ModelSpec spec;
  nn::EmbeddingParams<T> emb;
  std::vector<nn::EncoderLayerParams<T>> layers;
  Tensor<T> mlm_w, mlm_b;

  static EncoderModel init(const ModelSpec& spec, Rng& rng);

  /// Input must begin with [CLS] and end with [SEP] before padding.
  EncodeOut<T> encode(std::span<const int> ids, const nn::Mode& mode = nn::Mode(),
                      std::string sentence_id = {}) const;

  /// Masks a fraction of non-special tokens and scores the originals at the
  /// masked positions only.
  Tensor<T> mlm_example_loss(std::span<const int> ids, double mask_rate, Rng& rng,
                             const nn::Mode& mode = nn::Mode()) const;
  Tensor<T> mlm_step(std::span<const std::vector<int>> batch, double mask_rate, Rng& rng,
                     const nn::Mode& mode = nn::Mode()) const;

  void visit_params(const std::string& prefix, const nn::ParamVisitor<T>& fn);
};

/// Mini causal decoder with a next-token head; [EOS] pooling and greedy
/// generation.
template <class T>
class DecoderModel {
 public:
  ModelSpec spec;
  nn::EmbeddingParams<T> emb;
  std::vector<nn::DecoderLayerParams<T>> layers;
  Tensor<T> lm_w, lm_b;

  static DecoderModel init(const ModelSpec& spec, Rng& rng);

  /// Causal stack over a raw (already trimmed) id sequence.
  Tensor<T> forward_states(std::span<const int> ids, const nn::Mode& mode = nn::Mode()) const;

  /// Input must end with [EOS] before padding.
  EncodeOut<T> encode(std::span<const int> ids, const nn::Mode& mode = nn::Mode(),
                      std::string sentence_id = {}) const;

  Tensor<T> clm_example_loss(std::span<const int> ids, const nn::Mode& mode = nn::Mode()) const;
  Tensor<T> clm_step(std::span<const std::vector<int>> batch,
                     const nn::Mode& mode = nn::Mode()) const;

  /// Greedy decoding (argmax, lowest-id tie-break); stops early on a
  /// generated [EOS]; returns prefix + generated ids.
  std::vector<int> generate(std::span<const int> prefix, int n_new) const;

  void visit_params(const std::string& prefix, const nn::ParamVisitor<T>& fn);
};

struct SentencePair {
  std::vector<int> enc, dec;
};

/// Mini encoder-decoder: decoder layers cross-attend to the final encoder
/// output; pooled from the decoder [EOS]. Pretrained with a denoising
/// objective (masked encoder input, reconstruct on the decoder).
template <class T>
class EncDecModel {
 public:
  ModelSpec spec;
  nn::EmbeddingParams<T> enc_emb;
  std::vector<nn::EncoderLayerParams<T>> enc_layers;
  nn::EmbeddingParams<T> dec_emb;
  std::vector<nn::DecoderLayerParams<T>> dec_layers;
  Tensor<T> lm_w, lm_b;

  static EncDecModel init(const ModelSpec& spec, Rng& rng);

  Tensor<T> encode_memory(std::span<const int> enc_ids, const nn::Mode& mode = nn::Mode()) const;
  Tensor<T> decode_states(std::span<const int> dec_ids, const Tensor<T>& memory,
                          const nn::Mode& mode = nn::Mode()) const;

  /// Same sentence fed to both sides (encoder style + decoder style).
  EncodeOut<T> encode(std::span<const int> enc_ids, std::span<const int> dec_ids,
                      const nn::Mode& mode = nn::Mode(), std::string sentence_id = {}) const;

  Tensor<T> denoise_example_loss(const SentencePair& pair, double mask_rate, Rng& rng,
                                 const nn::Mode& mode = nn::Mode()) const;
  Tensor<T> denoise_step(std::span<const SentencePair> batch, double mask_rate, Rng& rng,
                         const nn::Mode& mode = nn::Mode()) const;

  void visit_params(const std::string& prefix, const nn::ParamVisitor<T>& fn);
};

/// Single linear layer over pooled features.
template <class T>
struct ClassifierHead {
  Tensor<T> weight;  // [input_width, labels]
  Tensor<T> bias;    // [labels]

  static ClassifierHead init(int64_t input_width, int64_t labels, Rng& rng);
  int64_t input_width() const { return weight.dim(0); }
  void visit(const std::string& prefix, const nn::ParamVisitor<T>& fn);
};

/// Affine map of a rank-1 feature vector to label logits.
template <class T>
Tensor<T> classify(const ClassifierHead<T>& head, const Tensor<T>& features);

/// Argmax with lowest-index tie-break.
template <class T>
int predict(std::span<const T> logits);

}  // namespace lasi::lm
