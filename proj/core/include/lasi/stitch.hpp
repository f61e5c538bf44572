#pragma once

#include "lasi/corpus.hpp"
#include "lasi/lm.hpp"

namespace lasi::stitch {

/// Configuration of the GBLS/GBAS/baseline compositions.
struct StitchModelSpec {
  double aux_loss_weight = 0.05;
  enum class AuxKind { mse, cosine };
  AuxKind aux_loss_kind = AuxKind::mse;
  double bert_input_mask_rate = 0.10;
  int64_t gbas_heads = 8;
  /// Training pair for the GBLS mapper. Default: mapped G(s_{k-1}) is pulled
  /// toward B(s_k) (masked). Alternative: mapped G(s_{k-2}) toward B(s_{k-1}).
  enum class GblsPair { g_prev_to_b_next, g_prev2_to_b_prev };
  GblsPair gbls_pair = GblsPair::g_prev_to_b_next;
  /// Token-level stitching attention (default). When false, the attention
  /// runs over single pooled vectors (degenerate softmax; ablation only).
  bool gbas_token_level = true;
  /// Also concatenate B(s_{k-2}) to the attention output before the head.
  bool gbas_concat_prev_bert = false;
  int gen_tokens = 50;

  void validate(int64_t d_model) const;
};

/// Linear-tanh-linear map from decoder space into encoder space.
template <class T>
struct Mapper {
  Tensor<T> w1, b1, w2, b2;

  static Mapper init(int64_t d_model, Rng& rng);
  void visit(const std::string& prefix, const nn::ParamVisitor<T>& fn);
};

/// A vector mapped into the encoder's representation space (by the mapper or
/// by stitching attention).
template <class T>
struct MappedEmbedding {
  Tensor<T> vector;  // [d_model]
};

/// w2 . tanh(w1 . g + b1) + b2, applied to a decoder-pooled embedding.
template <class T>
MappedEmbedding<T> mapper_apply(const Mapper<T>& m, const lm::PooledEmbedding<T>& g);

template <class T>
struct GblsOut {
  Tensor<T> logits;
  Tensor<T> loss_cls;
  Tensor<T> loss_aux;    // undefined in eval mode / when aux skipped
  Tensor<T> loss_total;  // loss_cls + aux_loss_weight * loss_aux
};

/// GBLS classification path, eval mode: concatenate B(s_{k-1}) with the
/// mapped G(s_{k-1}) and classify. There is no s_k parameter on this path.
template <class T>
Tensor<T> gbls_eval_logits(const lm::EncoderModel<T>& enc, const lm::DecoderModel<T>& dec,
                           const Mapper<T>& mapper, const lm::ClassifierHead<T>& head,
                           std::span<const int> prev_enc_ids, std::span<const int> prev_dec_ids);

/// GBLS train mode: classification loss plus aux_loss_weight times the
/// alignment loss between the mapped decoder embedding and the (masked)
/// encoder embedding of the pair target.
template <class T>
GblsOut<T> gbls_train(const lm::EncoderModel<T>& enc, const lm::DecoderModel<T>& dec,
                      const Mapper<T>& mapper, const lm::ClassifierHead<T>& head,
                      const StitchModelSpec& sspec, std::span<const int> prev_enc_ids,
                      std::span<const int> prev_dec_ids, std::span<const int> target_enc_ids,
                      int label, Rng& rng, const nn::Mode& mode,
                      std::span<const int> prev2_dec_ids = {});

/// GBAS: token-level stitching attention with Q = decoder states of s_{k-1},
/// K = decoder states of s_{k-2}, V = encoder states of s_{k-1}; the output
/// pooled at the query [EOS] position feeds the head. In train mode the
/// encoder input is masked at bert_input_mask_rate (mask_rng required).
template <class T>
Tensor<T> gbas_logits(const lm::EncoderModel<T>& enc, const lm::DecoderModel<T>& dec,
                      const nn::AttentionParams<T>& stitch_attn,
                      const lm::ClassifierHead<T>& head, const StitchModelSpec& sspec,
                      std::span<const int> prev_enc_ids, std::span<const int> prev_dec_ids,
                      std::span<const int> prev2_dec_ids, std::span<const int> prev2_enc_ids,
                      const nn::Mode& mode = nn::Mode(), Rng* mask_rng = nullptr,
                      std::vector<Tensor<T>>* head_weights = nullptr);

/// GPT+BERT: per context sentence, [B(s) || G(s)], concatenated in window
/// order; the head is twice the per-model width.
template <class T>
Tensor<T> concat_logits(const lm::EncoderModel<T>& enc, const lm::DecoderModel<T>& dec,
                        const lm::ClassifierHead<T>& head,
                        std::span<const std::vector<int>> ctx_enc,
                        std::span<const std::vector<int>> ctx_dec,
                        const nn::Mode& mode = nn::Mode());

/// BERT(GPT) pair construction: greedy-generate gen_tokens continuation of
/// s_{k-1}, then encode [CLS] s_{k-1} [SEP] generated [SEP], truncated from
/// the right to max_len.
template <class T>
std::vector<int> build_generated_pair(const lm::DecoderModel<T>& dec,
                                      std::span<const int> prev_enc_ids,
                                      std::span<const int> prev_dec_ids, int gen_tokens,
                                      int64_t max_len);

template <class T>
Tensor<T> generate_classify_logits(const lm::EncoderModel<T>& enc,
                                   const lm::ClassifierHead<T>& head,
                                   std::span<const int> pair_ids,
                                   const nn::Mode& mode = nn::Mode());

}  // namespace lasi::stitch
