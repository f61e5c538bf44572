#include "lasi/classifier.hpp"

#include <algorithm>

namespace lasi {

const char* kind_name(ModelKind kind) {
  switch (kind) {
    case ModelKind::bert: return "bert";
    case ModelKind::gpt: return "gpt";
    case ModelKind::encdec: return "encdec";
    case ModelKind::bert_of_gpt: return "bert_of_gpt";
    case ModelKind::gpt_plus_bert: return "gpt_plus_bert";
    case ModelKind::gbls: return "gbls";
    case ModelKind::gbas: return "gbas";
  }
  return "?";
}

ModelKind parse_kind(std::string_view name) {
  for (ModelKind k : {ModelKind::bert, ModelKind::gpt, ModelKind::encdec, ModelKind::bert_of_gpt,
                      ModelKind::gpt_plus_bert, ModelKind::gbls, ModelKind::gbas}) {
    if (name == kind_name(k)) return k;
  }
  throw ConfigError("unknown model kind '" + std::string(name) + "'");
}

bool kind_is_lookahead_only(ModelKind kind) {
  switch (kind) {
    case ModelKind::bert_of_gpt:
    case ModelKind::gpt_plus_bert:
    case ModelKind::gbls:
    case ModelKind::gbas:
      return true;
    default:
      return false;
  }
}

namespace {

uint64_t ids_hash(std::span<const int> ids) {
  uint64_t h = 14695981039346656037ull;
  for (int id : ids) {
    h ^= static_cast<uint64_t>(static_cast<uint32_t>(id));
    h *= 1099511628211ull;
  }
  return h;
}

}  // namespace

template <class T>
int64_t StitchedModel<T>::head_width_for(ModelKind kind, const data::WindowSpec& window,
                                         const lm::ModelSpec& enc_spec,
                                         const stitch::StitchModelSpec& sspec) {
  const int64_t d = enc_spec.block.d_model;
  const auto w = static_cast<int64_t>(window.offsets.size());
  switch (kind) {
    case ModelKind::bert:
    case ModelKind::gpt:
    case ModelKind::encdec:
      return w * d;
    case ModelKind::gpt_plus_bert:
      return 2 * w * d;  // twice the size of the per-model head
    case ModelKind::gbls:
      return 2 * d;  // [B(s_{k-1}) || mapped]
    case ModelKind::gbas:
      return sspec.gbas_concat_prev_bert ? 2 * d : d;
    case ModelKind::bert_of_gpt:
      return d;
  }
  return d;
}

template <class T>
StitchedModel<T> StitchedModel<T>::build(ModelKind kind, const data::WindowSpec& window,
                                         const lm::ModelSpec& enc_spec,
                                         const lm::ModelSpec& dec_spec,
                                         const stitch::StitchModelSpec& sspec,
                                         std::shared_ptr<const data::Vocab> vocab, uint64_t seed) {
  window.validate();
  sspec.validate(enc_spec.block.d_model);
  if (enc_spec.block.d_model != dec_spec.block.d_model) {
    throw ConfigError("encoder and decoder widths differ");
  }
  if (kind_is_lookahead_only(kind) && !window.lookahead()) {
    for (int off : window.offsets) {
      if (off >= 0) {
        throw ConfigError(std::string("model kind ") + kind_name(kind) +
                          " is a look-ahead model; window " + window.str() +
                          " exposes offset " + std::to_string(off));
      }
    }
  }
  if (kind == ModelKind::gbas) {
    if (!window.contains(-1) || !window.contains(-2)) {
      throw ConfigError("gbas needs offsets -2 and -1; window " + window.str() + " is missing " +
                        (window.contains(-1) ? "-2" : "-1"));
    }
  }
  if (kind == ModelKind::gbls) {
    if (!window.contains(-1)) {
      throw ConfigError("gbls needs offset -1; window is " + window.str());
    }
    if (sspec.gbls_pair == stitch::StitchModelSpec::GblsPair::g_prev2_to_b_prev &&
        !window.contains(-2)) {
      throw ConfigError("gbls pair variant needs offset -2; window is " + window.str());
    }
  }
  if ((kind == ModelKind::bert_of_gpt || kind == ModelKind::gpt_plus_bert) &&
      !window.contains(-1)) {
    throw ConfigError(std::string(kind_name(kind)) + " needs offset -1; window is " +
                      window.str());
  }

  StitchedModel m;
  m.kind = kind;
  m.window = window;
  m.sspec = sspec;
  m.enc_spec = enc_spec;
  m.dec_spec = dec_spec;
  m.vocab = std::move(vocab);

  Rng rng(seed);
  const bool needs_enc = kind != ModelKind::gpt && kind != ModelKind::encdec;
  const bool needs_dec = kind == ModelKind::gpt || kind == ModelKind::bert_of_gpt ||
                         kind == ModelKind::gpt_plus_bert || kind == ModelKind::gbls ||
                         kind == ModelKind::gbas;
  if (needs_enc) m.enc = std::make_unique<lm::EncoderModel<T>>(lm::EncoderModel<T>::init(enc_spec, rng));
  if (needs_dec) m.dec = std::make_unique<lm::DecoderModel<T>>(lm::DecoderModel<T>::init(dec_spec, rng));
  if (kind == ModelKind::encdec) {
    m.encdec = std::make_unique<lm::EncDecModel<T>>(lm::EncDecModel<T>::init(enc_spec, rng));
  }
  if (kind == ModelKind::gbls) m.mapper = stitch::Mapper<T>::init(enc_spec.block.d_model, rng);
  if (kind == ModelKind::gbas) {
    m.stitch_attn = nn::AttentionParams<T>::init(enc_spec.block.d_model, rng);
  }
  m.head = lm::ClassifierHead<T>::init(head_width_for(kind, window, enc_spec, sspec),
                                       enc_spec.n_labels, rng);
  return m;
}

template <class T>
int StitchedModel<T>::offset_index(int off) const {
  for (size_t i = 0; i < window.offsets.size(); ++i) {
    if (window.offsets[i] == off) return static_cast<int>(i);
  }
  throw ConfigError("window " + window.str() + " lacks offset " + std::to_string(off));
}

template <class T>
Tensor<T> StitchedModel<T>::logits_impl(const std::vector<std::vector<int>>& ctx_enc,
                                        const std::vector<std::vector<int>>& ctx_dec,
                                        const nn::Mode& mode, Rng* mask_rng) const {
  if (ctx_enc.size() != window.offsets.size()) {
    throw DataError("example has " + std::to_string(ctx_enc.size()) + " contexts for window " +
                    window.str());
  }
  switch (kind) {
    case ModelKind::bert: {
      std::vector<Tensor<T>> parts;
      for (const auto& ids : ctx_enc) parts.push_back(enc->encode(ids, mode).pooled.vector);
      return lm::classify(head, parts.size() == 1
                                     ? parts[0]
                                     : concat(std::span<const Tensor<T>>(parts)));
    }
    case ModelKind::gpt: {
      std::vector<Tensor<T>> parts;
      for (const auto& ids : ctx_dec) parts.push_back(dec->encode(ids, mode).pooled.vector);
      return lm::classify(head, parts.size() == 1
                                     ? parts[0]
                                     : concat(std::span<const Tensor<T>>(parts)));
    }
    case ModelKind::encdec: {
      std::vector<Tensor<T>> parts;
      for (size_t i = 0; i < ctx_enc.size(); ++i) {
        parts.push_back(encdec->encode(ctx_enc[i], ctx_dec[i], mode).pooled.vector);
      }
      return lm::classify(head, parts.size() == 1
                                     ? parts[0]
                                     : concat(std::span<const Tensor<T>>(parts)));
    }
    case ModelKind::gpt_plus_bert:
      return stitch::concat_logits(*enc, *dec, head, ctx_enc, ctx_dec, mode);
    case ModelKind::gbls: {
      const auto i = static_cast<size_t>(offset_index(-1));
      return stitch::gbls_eval_logits(*enc, *dec, mapper, head, ctx_enc[i], ctx_dec[i]);
    }
    case ModelKind::gbas: {
      const auto i1 = static_cast<size_t>(offset_index(-1));
      const auto i2 = static_cast<size_t>(offset_index(-2));
      return stitch::gbas_logits(*enc, *dec, stitch_attn, head, sspec, ctx_enc[i1], ctx_dec[i1],
                                 ctx_dec[i2], ctx_enc[i2], mode, mask_rng);
    }
    case ModelKind::bert_of_gpt: {
      const auto i = static_cast<size_t>(offset_index(-1));
      const uint64_t key = ids_hash(ctx_dec[i]);
      std::vector<int> pair;
      {
        std::lock_guard<std::mutex> lock(*gen_mutex_);
        auto it = gen_cache_.find(key);
        if (it != gen_cache_.end()) pair = it->second;
      }
      if (pair.empty()) {
        pair = stitch::build_generated_pair(*dec, ctx_enc[i], ctx_dec[i], sspec.gen_tokens,
                                            enc_spec.block.max_len);
        std::lock_guard<std::mutex> lock(*gen_mutex_);
        gen_cache_.emplace(key, pair);
      }
      return stitch::generate_classify_logits(*enc, head, pair, mode);
    }
  }
  throw ConfigError("unhandled model kind");
}

template <class T>
typename StitchedModel<T>::Out StitchedModel<T>::forward_train(const data::LasiExample& ex,
                                                               Rng& rng) {
  const nn::Mode mode = nn::Mode::training(enc_spec.block.dropout_rate, rng);
  Out out;
  if (kind == ModelKind::gbls) {
    const auto i = static_cast<size_t>(offset_index(-1));
    std::span<const int> prev2;
    if (sspec.gbls_pair == stitch::StitchModelSpec::GblsPair::g_prev2_to_b_prev) {
      prev2 = ex.ctx_dec[static_cast<size_t>(offset_index(-2))];
    }
    auto g = stitch::gbls_train(*enc, *dec, mapper, head, sspec, ex.ctx_enc[i], ex.ctx_dec[i],
                                ex.target_enc, ex.label, rng, mode, prev2);
    out.logits = g.logits;
    out.loss_total = g.loss_total;
    out.loss_cls = static_cast<double>(g.loss_cls.item());
    out.loss_aux = static_cast<double>(g.loss_aux.item());
    out.has_aux = true;
    return out;
  }
  Tensor<T> logits = logits_impl(ex.ctx_enc, ex.ctx_dec, mode, &rng);
  const int targets[1] = {ex.label};
  out.logits = logits;
  out.loss_total = cross_entropy(reshape(logits, {1, logits.dim(0)}), targets);
  out.loss_cls = static_cast<double>(out.loss_total.item());
  return out;
}

template <class T>
Tensor<T> StitchedModel<T>::eval_logits(const data::LasiExample& ex) const {
  // only the context fields cross this boundary
  return logits_impl(ex.ctx_enc, ex.ctx_dec, nn::Mode(), nullptr);
}

template <class T>
nn::ParamList<T> StitchedModel<T>::all_params() {
  nn::ParamList<T> params;
  const nn::ParamVisitor<T> grab = [&](const std::string& name, Tensor<T>& t) {
    params.emplace_back(name, t);
  };
  if (enc) enc->visit_params("enc", grab);
  if (dec) dec->visit_params("dec", grab);
  if (encdec) encdec->visit_params("encdec", grab);
  if (kind == ModelKind::gbls) mapper.visit("mapper", grab);
  if (kind == ModelKind::gbas) stitch_attn.visit("stitch_attn", grab);
  head.visit("head", grab);
  return params;
}

template <class T>
nn::ParamList<T> StitchedModel<T>::trainable_params() {
  if (kind != ModelKind::bert_of_gpt) return all_params();
  nn::ParamList<T> params;
  const nn::ParamVisitor<T> grab = [&](const std::string& name, Tensor<T>& t) {
    params.emplace_back(name, t);
  };
  enc->visit_params("enc", grab);
  head.visit("head", grab);
  return params;
}

template <class T>
int64_t StitchedModel<T>::head_input_width() const {
  return head.weight.dim(0);
}

template class StitchedModel<float>;
template class StitchedModel<double>;

}  // namespace lasi
