#include "lasi/lm.hpp"

#include <algorithm>
#include <cmath>

#include "lasi/corpus.hpp"

namespace lasi::lm {

namespace {

template <class T>
Tensor<T> mean_of(std::vector<Tensor<T>>& losses) {
  Tensor<T> total = losses[0];
  for (size_t i = 1; i < losses.size(); ++i) total = add(total, losses[i]);
  return scale(total, static_cast<T>(1.0 / static_cast<double>(losses.size())));
}

std::span<const int> trim(std::span<const int> ids) {
  return ids.first(static_cast<size_t>(tok::effective_len(ids)));
}

}  // namespace

// ---- EncoderModel -----------------------------------------------------------

template <class T>
EncoderModel<T> EncoderModel<T>::init(const ModelSpec& spec, Rng& rng) {
  spec.block.head_dim();  // validates
  EncoderModel m;
  m.spec = spec;
  m.emb = nn::EmbeddingParams<T>::init(spec.vocab_size, spec.block.max_len, spec.block.d_model, rng);
  for (int64_t i = 0; i < spec.n_layers; ++i) {
    m.layers.push_back(nn::EncoderLayerParams<T>::init(spec.block, rng));
  }
  m.mlm_w = Tensor<T>::randn({spec.block.d_model, spec.vocab_size}, rng, nn::kInitStd)
                .set_requires_grad(true);
  m.mlm_b = Tensor<T>::zeros({spec.vocab_size}).set_requires_grad(true);
  return m;
}

template <class T>
EncodeOut<T> EncoderModel<T>::encode(std::span<const int> ids, const nn::Mode& mode,
                                     std::string sentence_id) const {
  const auto seq = trim(ids);
  if (seq.empty() || seq[0] != tok::kCls) {
    throw DataError("bert_encode: missing [CLS] at position 0");
  }
  if (seq.back() != tok::kSep) {
    throw DataError("bert_encode: input does not end with [SEP] before padding");
  }
  Tensor<T> x = nn::embed(emb, seq);
  if (mode.train && mode.dropout_rate > 0.0) x = dropout(x, mode.dropout_rate, *mode.rng);
  for (const auto& layer : layers) {
    x = nn::encoder_layer(spec.block, layer, x, nullptr, mode);
  }
  EncodeOut<T> out;
  out.states = x;
  out.pooled = {row(x, 0), Pooling::encoder_cls, std::move(sentence_id)};
  return out;
}

template <class T>
Tensor<T> EncoderModel<T>::mlm_example_loss(std::span<const int> ids, double mask_rate, Rng& rng,
                                            const nn::Mode& mode) const {
  if (mask_rate <= 0.0 || mask_rate >= 1.0) {
    throw ConfigError("mlm: mask_rate must be in (0,1)");
  }
  const auto seq = trim(ids);
  std::vector<int> maskable;
  for (size_t i = 0; i < seq.size(); ++i) {
    if (!tok::is_special(seq[i])) maskable.push_back(static_cast<int>(i));
  }
  if (maskable.empty()) return Tensor<T>();
  const int nm = static_cast<int>(maskable.size());
  const int nsel = std::max(1, static_cast<int>(std::llround(mask_rate * nm)));
  for (int i = 0; i < nsel; ++i) {
    const auto j = i + static_cast<int>(rng.uniform_int(static_cast<uint64_t>(nm - i)));
    std::swap(maskable[static_cast<size_t>(i)], maskable[static_cast<size_t>(j)]);
  }
  std::vector<int> positions(maskable.begin(), maskable.begin() + nsel);
  std::sort(positions.begin(), positions.end());

  std::vector<int> masked(seq.begin(), seq.end());
  std::vector<int> originals;
  for (int p : positions) {
    originals.push_back(masked[static_cast<size_t>(p)]);
    masked[static_cast<size_t>(p)] = tok::kMask;
  }

  Tensor<T> x = nn::embed(emb, masked);
  if (mode.train && mode.dropout_rate > 0.0) x = dropout(x, mode.dropout_rate, *mode.rng);
  for (const auto& layer : layers) x = nn::encoder_layer(spec.block, layer, x, nullptr, mode);
  Tensor<T> logits = add_rowvec(matmul(rows_select(x, positions), mlm_w), mlm_b);
  return cross_entropy(logits, originals);
}

template <class T>
Tensor<T> EncoderModel<T>::mlm_step(std::span<const std::vector<int>> batch, double mask_rate,
                                    Rng& rng, const nn::Mode& mode) const {
  std::vector<Tensor<T>> losses;
  for (const auto& ids : batch) {
    Tensor<T> l = mlm_example_loss(ids, mask_rate, rng, mode);
    if (l.defined()) losses.push_back(l);
  }
  if (losses.empty()) throw DataError("mlm_step: batch has zero maskable tokens");
  return mean_of(losses);
}

template <class T>
void EncoderModel<T>::visit_params(const std::string& prefix, const nn::ParamVisitor<T>& fn) {
  emb.visit(prefix + ".emb", fn);
  for (size_t i = 0; i < layers.size(); ++i) {
    layers[i].visit(prefix + ".layer" + std::to_string(i), fn);
  }
  fn(prefix + ".mlm_w", mlm_w);
  fn(prefix + ".mlm_b", mlm_b);
}

// ---- DecoderModel -----------------------------------------------------------

template <class T>
DecoderModel<T> DecoderModel<T>::init(const ModelSpec& spec, Rng& rng) {
  spec.block.head_dim();
  DecoderModel m;
  m.spec = spec;
  m.emb = nn::EmbeddingParams<T>::init(spec.vocab_size, spec.block.max_len, spec.block.d_model, rng);
  for (int64_t i = 0; i < spec.n_layers; ++i) {
    m.layers.push_back(nn::DecoderLayerParams<T>::init(spec.block, /*with_cross=*/false, rng));
  }
  m.lm_w = Tensor<T>::randn({spec.block.d_model, spec.vocab_size}, rng, nn::kInitStd)
               .set_requires_grad(true);
  m.lm_b = Tensor<T>::zeros({spec.vocab_size}).set_requires_grad(true);
  return m;
}

template <class T>
Tensor<T> DecoderModel<T>::forward_states(std::span<const int> ids, const nn::Mode& mode) const {
  Tensor<T> x = nn::embed(emb, ids);
  if (mode.train && mode.dropout_rate > 0.0) x = dropout(x, mode.dropout_rate, *mode.rng);
  for (const auto& layer : layers) {
    x = nn::decoder_layer(spec.block, layer, x, nullptr, {}, mode);
  }
  return x;
}

template <class T>
EncodeOut<T> DecoderModel<T>::encode(std::span<const int> ids, const nn::Mode& mode,
                                     std::string sentence_id) const {
  auto seq = trim(ids);
  if (seq.empty()) throw DataError("gpt_encode: empty input");
  // pool at the first [EOS]; causal masking makes anything after it
  // irrelevant, so the stack only runs up to that position
  size_t eos = 0;
  while (eos < seq.size() && seq[eos] != tok::kEos) ++eos;
  if (eos == seq.size()) {
    throw DataError("gpt_encode: missing [EOS]");
  }
  seq = seq.first(eos + 1);
  Tensor<T> x = forward_states(seq, mode);
  EncodeOut<T> out;
  out.states = x;
  out.pooled = {row(x, static_cast<int64_t>(seq.size()) - 1), Pooling::decoder_eos,
                std::move(sentence_id)};
  return out;
}

template <class T>
Tensor<T> DecoderModel<T>::clm_example_loss(std::span<const int> ids, const nn::Mode& mode) const {
  const auto seq = trim(ids);
  if (seq.size() < 2) {
    throw DataError("clm: sequence of length " + std::to_string(seq.size()) +
                    " is too short for next-token prediction");
  }
  Tensor<T> states = forward_states(seq.first(seq.size() - 1), mode);
  Tensor<T> logits = add_rowvec(matmul(states, lm_w), lm_b);
  std::vector<int> targets(seq.begin() + 1, seq.end());
  return cross_entropy(logits, targets);
}

template <class T>
Tensor<T> DecoderModel<T>::clm_step(std::span<const std::vector<int>> batch,
                                    const nn::Mode& mode) const {
  if (batch.empty()) throw DataError("clm_step: empty batch");
  std::vector<Tensor<T>> losses;
  for (const auto& ids : batch) losses.push_back(clm_example_loss(ids, mode));
  return mean_of(losses);
}

template <class T>
std::vector<int> DecoderModel<T>::generate(std::span<const int> prefix, int n_new) const {
  if (prefix.empty()) throw DataError("generate: empty prefix");
  if (n_new < 1) throw ConfigError("generate: n_new must be >= 1");
  if (static_cast<int64_t>(prefix.size()) > spec.block.max_len) {
    throw DataError("generate: prefix length " + std::to_string(prefix.size()) +
                    " exceeds max_len " + std::to_string(spec.block.max_len));
  }
  std::vector<int> ids(prefix.begin(), prefix.end());
  for (int step = 0; step < n_new; ++step) {
    if (static_cast<int64_t>(ids.size()) >= spec.block.max_len) break;
    Tensor<T> states = forward_states(ids);
    Tensor<T> logits =
        add_rowvec(matmul(rows_range(states, static_cast<int64_t>(ids.size()) - 1, 1), lm_w), lm_b);
    const int next = predict<T>(logits.data());
    ids.push_back(next);
    if (next == tok::kEos) break;
  }
  return ids;
}

template <class T>
void DecoderModel<T>::visit_params(const std::string& prefix, const nn::ParamVisitor<T>& fn) {
  emb.visit(prefix + ".emb", fn);
  for (size_t i = 0; i < layers.size(); ++i) {
    layers[i].visit(prefix + ".layer" + std::to_string(i), fn);
  }
  fn(prefix + ".lm_w", lm_w);
  fn(prefix + ".lm_b", lm_b);
}

// ---- EncDecModel ------------------------------------------------------------

template <class T>
EncDecModel<T> EncDecModel<T>::init(const ModelSpec& spec, Rng& rng) {
  spec.block.head_dim();
  EncDecModel m;
  m.spec = spec;
  m.enc_emb =
      nn::EmbeddingParams<T>::init(spec.vocab_size, spec.block.max_len, spec.block.d_model, rng);
  for (int64_t i = 0; i < spec.n_layers; ++i) {
    m.enc_layers.push_back(nn::EncoderLayerParams<T>::init(spec.block, rng));
  }
  m.dec_emb =
      nn::EmbeddingParams<T>::init(spec.vocab_size, spec.block.max_len, spec.block.d_model, rng);
  for (int64_t i = 0; i < spec.n_layers; ++i) {
    m.dec_layers.push_back(nn::DecoderLayerParams<T>::init(spec.block, /*with_cross=*/true, rng));
  }
  m.lm_w = Tensor<T>::randn({spec.block.d_model, spec.vocab_size}, rng, nn::kInitStd)
               .set_requires_grad(true);
  m.lm_b = Tensor<T>::zeros({spec.vocab_size}).set_requires_grad(true);
  return m;
}

template <class T>
Tensor<T> EncDecModel<T>::encode_memory(std::span<const int> enc_ids, const nn::Mode& mode) const {
  const auto seq = trim(enc_ids);
  if (seq.empty()) throw DataError("encdec: empty encoder input");
  Tensor<T> x = nn::embed(enc_emb, seq);
  if (mode.train && mode.dropout_rate > 0.0) x = dropout(x, mode.dropout_rate, *mode.rng);
  for (const auto& layer : enc_layers) {
    x = nn::encoder_layer(spec.block, layer, x, nullptr, mode);
  }
  return x;
}

template <class T>
Tensor<T> EncDecModel<T>::decode_states(std::span<const int> dec_ids, const Tensor<T>& memory,
                                        const nn::Mode& mode) const {
  Tensor<T> x = nn::embed(dec_emb, dec_ids);
  if (mode.train && mode.dropout_rate > 0.0) x = dropout(x, mode.dropout_rate, *mode.rng);
  for (const auto& layer : dec_layers) {
    x = nn::decoder_layer(spec.block, layer, x, nullptr, {&memory, nullptr}, mode);
  }
  return x;
}

template <class T>
EncodeOut<T> EncDecModel<T>::encode(std::span<const int> enc_ids, std::span<const int> dec_ids,
                                    const nn::Mode& mode, std::string sentence_id) const {
  auto dec_seq = trim(dec_ids);
  if (dec_seq.empty()) throw DataError("encdec_encode: empty decoder input");
  size_t eos = 0;
  while (eos < dec_seq.size() && dec_seq[eos] != tok::kEos) ++eos;
  if (eos == dec_seq.size()) {
    throw DataError("encdec_encode: missing [EOS] on the decoder side");
  }
  dec_seq = dec_seq.first(eos + 1);
  Tensor<T> memory = encode_memory(enc_ids, mode);
  Tensor<T> states = decode_states(dec_seq, memory, mode);
  EncodeOut<T> out;
  out.states = states;
  out.pooled = {row(states, static_cast<int64_t>(dec_seq.size()) - 1), Pooling::decoder_eos,
                std::move(sentence_id)};
  return out;
}

template <class T>
Tensor<T> EncDecModel<T>::denoise_example_loss(const SentencePair& pair, double mask_rate,
                                               Rng& rng, const nn::Mode& mode) const {
  const auto dec_seq = trim(pair.dec);
  if (dec_seq.size() < 2) throw DataError("denoise: decoder sequence too short");
  const auto enc_seq = trim(pair.enc);
  const auto masked = data::mask_tokens(enc_seq, mask_rate, rng);
  Tensor<T> memory = encode_memory(masked, mode);
  Tensor<T> states = decode_states(dec_seq.first(dec_seq.size() - 1), memory, mode);
  Tensor<T> logits = add_rowvec(matmul(states, lm_w), lm_b);
  std::vector<int> targets(dec_seq.begin() + 1, dec_seq.end());
  return cross_entropy(logits, targets);
}

template <class T>
Tensor<T> EncDecModel<T>::denoise_step(std::span<const SentencePair> batch, double mask_rate,
                                       Rng& rng, const nn::Mode& mode) const {
  if (batch.empty()) throw DataError("denoise_step: empty batch");
  std::vector<Tensor<T>> losses;
  for (const auto& pair : batch) losses.push_back(denoise_example_loss(pair, mask_rate, rng, mode));
  return mean_of(losses);
}

template <class T>
void EncDecModel<T>::visit_params(const std::string& prefix, const nn::ParamVisitor<T>& fn) {
  enc_emb.visit(prefix + ".enc.emb", fn);
  for (size_t i = 0; i < enc_layers.size(); ++i) {
    enc_layers[i].visit(prefix + ".enc.layer" + std::to_string(i), fn);
  }
  dec_emb.visit(prefix + ".dec.emb", fn);
  for (size_t i = 0; i < dec_layers.size(); ++i) {
    dec_layers[i].visit(prefix + ".dec.layer" + std::to_string(i), fn);
  }
  fn(prefix + ".lm_w", lm_w);
  fn(prefix + ".lm_b", lm_b);
}

// ---- classifier head --------------------------------------------------------

template <class T>
ClassifierHead<T> ClassifierHead<T>::init(int64_t input_width, int64_t labels, Rng& rng) {
  ClassifierHead h;
  h.weight = Tensor<T>::randn({input_width, labels}, rng, nn::kInitStd).set_requires_grad(true);
  h.bias = Tensor<T>::zeros({labels}).set_requires_grad(true);
  return h;
}

template <class T>
void ClassifierHead<T>::visit(const std::string& prefix, const nn::ParamVisitor<T>& fn) {
  fn(prefix + ".weight", weight);
  fn(prefix + ".bias", bias);
}

template <class T>
Tensor<T> classify(const ClassifierHead<T>& head, const Tensor<T>& features) {
  if (features.rank() != 1 || features.dim(0) != head.weight.dim(0)) {
    throw ShapeError("classify: features " + shape_str(features.shape()) + " vs head input " +
                     std::to_string(head.weight.dim(0)));
  }
  Tensor<T> r = reshape(features, {1, features.dim(0)});
  return reshape(add_rowvec(matmul(r, head.weight), head.bias), {head.weight.dim(1)});
}

template <class T>
int predict(std::span<const T> logits) {
  if (logits.empty()) throw ShapeError("predict: empty logits");
  int best = 0;
  for (int i = 1; i < static_cast<int>(logits.size()); ++i) {
    if (logits[static_cast<size_t>(i)] > logits[static_cast<size_t>(best)]) best = i;
  }
  return best;
}

#define LASI_LM_INSTANTIATE(T)                  \
  template class EncoderModel<T>;               \
  template class DecoderModel<T>;               \
  template class EncDecModel<T>;                \
  template struct ClassifierHead<T>;            \
  template Tensor<T> classify(const ClassifierHead<T>&, const Tensor<T>&); \
  template int predict(std::span<const T>);

LASI_LM_INSTANTIATE(float)
LASI_LM_INSTANTIATE(double)

#undef LASI_LM_INSTANTIATE

}  // namespace lasi::lm
