#include "lasi/stitch.hpp"

#include <algorithm>

namespace lasi::stitch {

void StitchModelSpec::validate(int64_t d_model) const {
  if (aux_loss_weight < 0) throw ConfigError("aux_loss_weight must be >= 0");
  if (bert_input_mask_rate < 0 || bert_input_mask_rate >= 1) {
    throw ConfigError("bert_input_mask_rate must be in [0,1)");
  }
  if (gbas_heads <= 0 || d_model % gbas_heads != 0) {
    throw ConfigError("gbas_heads " + std::to_string(gbas_heads) + " must divide d_model " +
                      std::to_string(d_model));
  }
  if (gen_tokens < 1) throw ConfigError("gen_tokens must be >= 1");
}

template <class T>
Mapper<T> Mapper<T>::init(int64_t d_model, Rng& rng) {
  Mapper m;
  m.w1 = Tensor<T>::randn({d_model, d_model}, rng, nn::kInitStd).set_requires_grad(true);
  m.b1 = Tensor<T>::zeros({d_model}).set_requires_grad(true);
  m.w2 = Tensor<T>::randn({d_model, d_model}, rng, nn::kInitStd).set_requires_grad(true);
  m.b2 = Tensor<T>::zeros({d_model}).set_requires_grad(true);
  return m;
}

template <class T>
void Mapper<T>::visit(const std::string& prefix, const nn::ParamVisitor<T>& fn) {
  fn(prefix + ".w1", w1);
  fn(prefix + ".b1", b1);
  fn(prefix + ".w2", w2);
  fn(prefix + ".b2", b2);
}

template <class T>
MappedEmbedding<T> mapper_apply(const Mapper<T>& m, const lm::PooledEmbedding<T>& g) {
  if (g.source != lm::Pooling::decoder_eos) {
    throw ConfigError("mapper_apply: input must be a decoder [EOS] embedding");
  }
  const auto& v = g.vector;
  if (v.rank() != 1 || v.dim(0) != m.w1.dim(0)) {
    throw ShapeError("mapper_apply: embedding " + shape_str(v.shape()) + " vs mapper width " +
                     std::to_string(m.w1.dim(0)));
  }
  Tensor<T> x = reshape(v, {1, v.dim(0)});
  Tensor<T> h = tanh(add_rowvec(matmul(x, m.w1), m.b1));
  Tensor<T> out = add_rowvec(matmul(h, m.w2), m.b2);
  return {reshape(out, {v.dim(0)})};
}

namespace {

template <class T>
Tensor<T> gbls_features(const lm::EncoderModel<T>& enc, const lm::DecoderModel<T>& dec,
                        const Mapper<T>& mapper, std::span<const int> prev_enc_ids,
                        std::span<const int> prev_dec_ids, const nn::Mode& mode,
                        MappedEmbedding<T>* mapped_out) {
  auto b_prev = enc.encode(prev_enc_ids, mode).pooled;
  auto g_prev = dec.encode(prev_dec_ids, mode).pooled;
  MappedEmbedding<T> mapped = mapper_apply(mapper, g_prev);
  if (mapped_out) *mapped_out = mapped;
  const Tensor<T> parts[2] = {b_prev.vector, mapped.vector};
  return concat(std::span<const Tensor<T>>(parts));
}

}  // namespace

template <class T>
Tensor<T> gbls_eval_logits(const lm::EncoderModel<T>& enc, const lm::DecoderModel<T>& dec,
                           const Mapper<T>& mapper, const lm::ClassifierHead<T>& head,
                           std::span<const int> prev_enc_ids, std::span<const int> prev_dec_ids) {
  Tensor<T> feat = gbls_features<T>(enc, dec, mapper, prev_enc_ids, prev_dec_ids, nn::Mode(),
                                    nullptr);
  return lm::classify(head, feat);
}

template <class T>
GblsOut<T> gbls_train(const lm::EncoderModel<T>& enc, const lm::DecoderModel<T>& dec,
                      const Mapper<T>& mapper, const lm::ClassifierHead<T>& head,
                      const StitchModelSpec& sspec, std::span<const int> prev_enc_ids,
                      std::span<const int> prev_dec_ids, std::span<const int> target_enc_ids,
                      int label, Rng& rng, const nn::Mode& mode,
                      std::span<const int> prev2_dec_ids) {
  GblsOut<T> out;
  MappedEmbedding<T> mapped;
  Tensor<T> feat =
      gbls_features(enc, dec, mapper, prev_enc_ids, prev_dec_ids, mode, &mapped);
  out.logits = lm::classify(head, feat);
  const int targets[1] = {label};
  out.loss_cls = cross_entropy(reshape(out.logits, {1, out.logits.dim(0)}), targets);

  // alignment pair: mapped source embedding -> masked encoder embedding
  Tensor<T> mapped_src;
  std::span<const int> aux_target_ids;
  if (sspec.gbls_pair == StitchModelSpec::GblsPair::g_prev_to_b_next) {
    if (target_enc_ids.empty()) {
      throw DataError("gbls_train: training requires the target sentence s_k");
    }
    mapped_src = mapped.vector;
    aux_target_ids = target_enc_ids;
  } else {
    if (prev2_dec_ids.empty()) {
      throw DataError("gbls_train: pair variant requires the s_{k-2} context");
    }
    auto g_prev2 = dec.encode(prev2_dec_ids, mode).pooled;
    mapped_src = mapper_apply(mapper, g_prev2).vector;
    aux_target_ids = prev_enc_ids;
  }
  const auto masked = data::mask_tokens(aux_target_ids, sspec.bert_input_mask_rate, rng);
  auto b_target = enc.encode(masked, mode).pooled;
  out.loss_aux = sspec.aux_loss_kind == StitchModelSpec::AuxKind::mse
                     ? mse(mapped_src, b_target.vector)
                     : cosine_loss(mapped_src, b_target.vector);
  out.loss_total = add(out.loss_cls, scale(out.loss_aux, static_cast<T>(sspec.aux_loss_weight)));
  return out;
}

template <class T>
Tensor<T> gbas_logits(const lm::EncoderModel<T>& enc, const lm::DecoderModel<T>& dec,
                      const nn::AttentionParams<T>& stitch_attn,
                      const lm::ClassifierHead<T>& head, const StitchModelSpec& sspec,
                      std::span<const int> prev_enc_ids, std::span<const int> prev_dec_ids,
                      std::span<const int> prev2_dec_ids, std::span<const int> prev2_enc_ids,
                      const nn::Mode& mode, Rng* mask_rng,
                      std::vector<Tensor<T>>* head_weights) {
  if (prev2_dec_ids.empty()) throw DataError("gbas: missing s_{k-2} context");
  nn::BlockConfig attn_cfg = enc.spec.block;
  attn_cfg.n_heads = sspec.gbas_heads;

  std::vector<int> masked_storage;
  std::span<const int> enc_input = prev_enc_ids;
  if (mode.train && sspec.bert_input_mask_rate > 0) {
    if (!mask_rng) throw ConfigError("gbas: train mode requires a masking rng");
    masked_storage = data::mask_tokens(prev_enc_ids, sspec.bert_input_mask_rate, *mask_rng);
    enc_input = masked_storage;
  }

  Tensor<T> pooled;
  if (sspec.gbas_token_level) {
    Tensor<T> q = dec.encode(prev_dec_ids, mode).states;
    Tensor<T> k = dec.encode(prev2_dec_ids, mode).states;
    Tensor<T> v = enc.encode(enc_input, mode).states;
    // keys from s_{k-2} and values from s_{k-1} correspond positionally;
    // attention runs over the shared valid prefix
    const int64_t kv_len = std::min(k.dim(0), v.dim(0));
    Tensor<T> out = nn::multi_head_attention(
        attn_cfg, stitch_attn, q, rows_range(k, 0, kv_len), rows_range(v, 0, kv_len), nullptr,
        mode, head_weights);
    pooled = row(out, q.dim(0) - 1);  // query [EOS] position
  } else {
    Tensor<T> q = reshape(dec.encode(prev_dec_ids, mode).pooled.vector, {1, attn_cfg.d_model});
    Tensor<T> k = reshape(dec.encode(prev2_dec_ids, mode).pooled.vector, {1, attn_cfg.d_model});
    Tensor<T> v = reshape(enc.encode(enc_input, mode).pooled.vector, {1, attn_cfg.d_model});
    Tensor<T> out = nn::multi_head_attention(attn_cfg, stitch_attn, q, k, v, nullptr, mode,
                                             head_weights);
    pooled = row(out, 0);
  }

  Tensor<T> feat = pooled;
  if (sspec.gbas_concat_prev_bert) {
    if (prev2_enc_ids.empty()) throw DataError("gbas: concat variant needs s_{k-2} encoder input");
    auto b_prev2 = enc.encode(prev2_enc_ids, mode).pooled;
    const Tensor<T> parts[2] = {pooled, b_prev2.vector};
    feat = concat(std::span<const Tensor<T>>(parts));
  }
  return lm::classify(head, feat);
}

template <class T>
Tensor<T> concat_logits(const lm::EncoderModel<T>& enc, const lm::DecoderModel<T>& dec,
                        const lm::ClassifierHead<T>& head,
                        std::span<const std::vector<int>> ctx_enc,
                        std::span<const std::vector<int>> ctx_dec, const nn::Mode& mode) {
  if (ctx_enc.empty() || ctx_enc.size() != ctx_dec.size()) {
    throw DataError("concat_logits: mismatched context sets");
  }
  std::vector<Tensor<T>> parts;
  for (size_t i = 0; i < ctx_enc.size(); ++i) {
    parts.push_back(enc.encode(ctx_enc[i], mode).pooled.vector);
    parts.push_back(dec.encode(ctx_dec[i], mode).pooled.vector);
  }
  return lm::classify(head, concat(std::span<const Tensor<T>>(parts)));
}

template <class T>
std::vector<int> build_generated_pair(const lm::DecoderModel<T>& dec,
                                      std::span<const int> prev_enc_ids,
                                      std::span<const int> prev_dec_ids, int gen_tokens,
                                      int64_t max_len) {
  const auto prefix = prev_dec_ids.first(static_cast<size_t>(tok::effective_len(prev_dec_ids)));
  if (prefix.empty()) throw DataError("build_generated_pair: empty s_{k-1}");
  const auto full = dec.generate(prefix, gen_tokens);
  std::span<const int> gen(full.data() + prefix.size(), full.size() - prefix.size());
  if (!gen.empty() && gen.back() == tok::kEos) gen = gen.first(gen.size() - 1);

  std::vector<int> pair;
  pair.push_back(tok::kCls);
  const auto prev = prev_enc_ids.first(static_cast<size_t>(tok::effective_len(prev_enc_ids)));
  for (size_t i = 1; i + 1 < prev.size(); ++i) pair.push_back(prev[i]);  // strip [CLS]/[SEP]
  pair.push_back(tok::kSep);
  for (int id : gen) pair.push_back(id);
  pair.push_back(tok::kSep);
  if (static_cast<int64_t>(pair.size()) > max_len) {
    pair.resize(static_cast<size_t>(max_len));
    pair.back() = tok::kSep;
  }
  return pair;
}

template <class T>
Tensor<T> generate_classify_logits(const lm::EncoderModel<T>& enc,
                                   const lm::ClassifierHead<T>& head,
                                   std::span<const int> pair_ids, const nn::Mode& mode) {
  return lm::classify(head, enc.encode(pair_ids, mode).pooled.vector);
}

#define LASI_STITCH_INSTANTIATE(T)                                                               \
  template struct Mapper<T>;                                                                     \
  template MappedEmbedding<T> mapper_apply(const Mapper<T>&, const lm::PooledEmbedding<T>&);     \
  template Tensor<T> gbls_eval_logits(const lm::EncoderModel<T>&, const lm::DecoderModel<T>&,    \
                                      const Mapper<T>&, const lm::ClassifierHead<T>&,            \
                                      std::span<const int>, std::span<const int>);               \
  template GblsOut<T> gbls_train(const lm::EncoderModel<T>&, const lm::DecoderModel<T>&,         \
                                 const Mapper<T>&, const lm::ClassifierHead<T>&,                 \
                                 const StitchModelSpec&, std::span<const int>,                   \
                                 std::span<const int>, std::span<const int>, int, Rng&,          \
                                 const nn::Mode&, std::span<const int>);                         \
  template Tensor<T> gbas_logits(const lm::EncoderModel<T>&, const lm::DecoderModel<T>&,         \
                                 const nn::AttentionParams<T>&, const lm::ClassifierHead<T>&,    \
                                 const StitchModelSpec&, std::span<const int>,                   \
                                 std::span<const int>, std::span<const int>,                     \
                                 std::span<const int>, const nn::Mode&, Rng*,                    \
                                 std::vector<Tensor<T>>*);                                       \
  template Tensor<T> concat_logits(const lm::EncoderModel<T>&, const lm::DecoderModel<T>&,       \
                                   const lm::ClassifierHead<T>&,                                 \
                                   std::span<const std::vector<int>>,                            \
                                   std::span<const std::vector<int>>, const nn::Mode&);          \
  template std::vector<int> build_generated_pair(const lm::DecoderModel<T>&,                     \
                                                 std::span<const int>, std::span<const int>,     \
                                                 int, int64_t);                                  \
  template Tensor<T> generate_classify_logits(const lm::EncoderModel<T>&,                        \
                                              const lm::ClassifierHead<T>&,                      \
                                              std::span<const int>, const nn::Mode&);

LASI_STITCH_INSTANTIATE(float)
LASI_STITCH_INSTANTIATE(double)

#undef LASI_STITCH_INSTANTIATE

}  // namespace lasi::stitch
