#pragma once

#include <memory>
#include <mutex>
#include <unordered_map>

#include "lasi/stitch.hpp"

namespace lasi {

enum class ModelKind { bert, gpt, encdec, bert_of_gpt, gpt_plus_bert, gbls, gbas };

const char* kind_name(ModelKind kind);
ModelKind parse_kind(std::string_view name);

/// Stitched kinds are look-ahead models by construction; they may never see
/// content at offset >= 0.
bool kind_is_lookahead_only(ModelKind kind);

/// One classification model instance: the trunks it needs, stitching
/// parameters, and the label head, dispatched by kind.
template <class T>
class StitchedModel {
 public:
  ModelKind kind = ModelKind::bert;
  data::WindowSpec window;
  stitch::StitchModelSpec sspec;
  lm::ModelSpec enc_spec, dec_spec;
  std::shared_ptr<const data::Vocab> vocab;

  std::unique_ptr<lm::EncoderModel<T>> enc;
  std::unique_ptr<lm::DecoderModel<T>> dec;
  std::unique_ptr<lm::EncDecModel<T>> encdec;
  stitch::Mapper<T> mapper;             // gbls
  nn::AttentionParams<T> stitch_attn;   // gbas
  lm::ClassifierHead<T> head;

  /// Validates the (kind, window) pair, builds the required trunks with
  /// fresh parameters, and sizes the head.
  static StitchedModel build(ModelKind kind, const data::WindowSpec& window,
                             const lm::ModelSpec& enc_spec, const lm::ModelSpec& dec_spec,
                             const stitch::StitchModelSpec& sspec,
                             std::shared_ptr<const data::Vocab> vocab, uint64_t seed);

  struct Out {
    Tensor<T> logits;
    Tensor<T> loss_total;
    double loss_cls = 0;
    double loss_aux = 0;
    bool has_aux = false;
  };

  Out forward_train(const data::LasiExample& ex, Rng& rng);

  /// Eval-mode logits; reads only the context fields of the example (the
  /// target sentence never reaches this path).
  Tensor<T> eval_logits(const data::LasiExample& ex) const;

  /// Parameters updated during fine-tuning. For bert_of_gpt the generator
  /// decoder is frozen and excluded.
  nn::ParamList<T> trainable_params();
  /// Every parameter, for checkpointing.
  nn::ParamList<T> all_params();

  int64_t head_input_width() const;
  int64_t d_model() const { return enc_spec.block.d_model; }

  static int64_t head_width_for(ModelKind kind, const data::WindowSpec& window,
                                const lm::ModelSpec& enc_spec,
                                const stitch::StitchModelSpec& sspec);

 private:
  Tensor<T> logits_impl(const std::vector<std::vector<int>>& ctx_enc,
                        const std::vector<std::vector<int>>& ctx_dec, const nn::Mode& mode,
                        Rng* mask_rng) const;
  int offset_index(int off) const;

  // bert_of_gpt: generation is frozen-decoder greedy decoding, a pure
  // function of the context ids, so pairs are cached across epochs
  // (unique_ptr keeps the model movable)
  mutable std::unique_ptr<std::mutex> gen_mutex_ = std::make_unique<std::mutex>();
  mutable std::unordered_map<uint64_t, std::vector<int>> gen_cache_;
};

}  // namespace lasi
