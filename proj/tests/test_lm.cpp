#include <cmath>

#include "doctest.h"

#include "lasi/lm.hpp"
#include "lasi/train.hpp"

using namespace lasi;

namespace {

lm::ModelSpec tiny_spec(int64_t vocab, int64_t d = 16, int64_t layers = 1, int64_t heads = 2) {
  lm::ModelSpec spec;
  spec.block.d_model = d;
  spec.block.n_heads = heads;
  spec.block.d_ff = 2 * d;
  spec.block.max_len = 16;
  spec.block.dropout_rate = 0.0;
  spec.vocab_size = vocab;
  spec.n_layers = layers;
  spec.n_labels = 5;
  return spec;
}

std::vector<int> enc_seq(std::initializer_list<int> words, int pad_to = 0) {
  std::vector<int> ids{tok::kCls};
  ids.insert(ids.end(), words.begin(), words.end());
  ids.push_back(tok::kSep);
  if (pad_to > 0) ids.resize(static_cast<size_t>(pad_to), tok::kPad);
  return ids;
}

std::vector<int> dec_seq(std::initializer_list<int> words, int pad_to = 0) {
  std::vector<int> ids{tok::kBos};
  ids.insert(ids.end(), words.begin(), words.end());
  ids.push_back(tok::kEos);
  if (pad_to > 0) ids.resize(static_cast<size_t>(pad_to), tok::kPad);
  return ids;
}

template <class T>
bool same_values(std::span<const T> a, std::span<const T> b) {
  if (a.size() != b.size()) return false;
  for (size_t i = 0; i < a.size(); ++i) {
    if (a[i] != b[i]) return false;
  }
  return true;
}

}  // namespace

TEST_SUITE_BEGIN("lm");

TEST_CASE("bert_encode pooling contract") {
  Rng rng(1);
  auto model = lm::EncoderModel<float>::init(tiny_spec(40), rng);
  const auto ids = enc_seq({9, 10, 11}, 12);
  auto out = model.encode(ids);
  CHECK(out.pooled.source == lm::Pooling::encoder_cls);
  // pooled vector equals states[0] exactly
  auto first_row = row(out.states, 0);
  CHECK(same_values<float>(out.pooled.vector.data(), first_row.data()));
  // deterministic in eval mode
  auto again = model.encode(ids);
  CHECK(same_values<float>(out.pooled.vector.data(), again.pooled.vector.data()));
  // different sentences pool differently
  auto other = model.encode(enc_seq({12, 13, 14}, 12));
  CHECK(!same_values<float>(out.pooled.vector.data(), other.pooled.vector.data()));
}

TEST_CASE("bert_encode validates specials") {
  Rng rng(2);
  auto model = lm::EncoderModel<float>::init(tiny_spec(40), rng);
  std::vector<int> no_cls = {9, 10, tok::kSep};
  CHECK_THROWS_WITH_AS(model.encode(no_cls), doctest::Contains("[CLS]"), DataError);
  std::vector<int> no_sep = {tok::kCls, 9, 10};
  CHECK_THROWS_AS(model.encode(no_sep), DataError);
}

TEST_CASE("bert pooled embedding reacts to late-sentence edits") {
  Rng rng(3);
  auto model = lm::EncoderModel<float>::init(tiny_spec(60), rng);
  Rng edit_rng(4);
  int changed = 0;
  for (int trial = 0; trial < 100; ++trial) {
    std::vector<int> ids{tok::kCls};
    for (int i = 0; i < 6; ++i) {
      ids.push_back(7 + static_cast<int>(edit_rng.uniform_int(50)));
    }
    ids.push_back(tok::kSep);
    auto base = model.encode(ids);
    auto edited = ids;
    int replacement = 7 + static_cast<int>(edit_rng.uniform_int(50));
    if (replacement == edited[6]) replacement = 7 + (replacement - 7 + 1) % 50;
    edited[6] = replacement;  // last word before [SEP]
    auto out = model.encode(edited);
    if (!same_values<float>(base.pooled.vector.data(), out.pooled.vector.data())) ++changed;
  }
  CHECK(changed >= 95);
}

TEST_CASE("gpt_encode pooling contract and pad invariance") {
  Rng rng(5);
  auto model = lm::DecoderModel<float>::init(tiny_spec(40), rng);
  const auto ids = dec_seq({9, 10, 11});
  auto out = model.encode(ids);
  CHECK(out.pooled.source == lm::Pooling::decoder_eos);
  auto last_row = row(out.states, out.states.dim(0) - 1);
  CHECK(same_values<float>(out.pooled.vector.data(), last_row.data()));
  // appending pads after [EOS] leaves the pooled vector unchanged, exactly
  auto padded = model.encode(dec_seq({9, 10, 11}, 14));
  CHECK(same_values<float>(out.pooled.vector.data(), padded.pooled.vector.data()));
  // so do arbitrary tokens after [EOS]
  auto trailing = dec_seq({9, 10, 11});
  trailing.push_back(22);
  trailing.push_back(23);
  auto noisy = model.encode(trailing);
  CHECK(same_values<float>(out.pooled.vector.data(), noisy.pooled.vector.data()));
  // changing the first word changes the pooled vector
  auto other = model.encode(dec_seq({12, 10, 11}));
  CHECK(!same_values<float>(out.pooled.vector.data(), other.pooled.vector.data()));
  std::vector<int> no_eos = {tok::kBos, 9, 10};
  CHECK_THROWS_WITH_AS(model.encode(no_eos), doctest::Contains("[EOS]"), DataError);
}

TEST_CASE("mlm loss at random init is near ln(vocab)") {
  const int64_t vocab = 50;
  Rng rng(7);
  auto model = lm::EncoderModel<float>::init(tiny_spec(vocab), rng);
  std::vector<std::vector<int>> batch;
  Rng data_rng(8);
  for (int i = 0; i < 16; ++i) {
    std::vector<int> ids{tok::kCls};
    for (int w = 0; w < 8; ++w) {
      ids.push_back(7 + static_cast<int>(data_rng.uniform_int(vocab - 7)));
    }
    ids.push_back(tok::kSep);
    batch.push_back(std::move(ids));
  }
  Rng mask_rng(9);
  const double loss = model.mlm_step(batch, 0.15, mask_rng).item();
  const double expect = std::log(static_cast<double>(vocab));
  CHECK(loss > expect * 0.85);
  CHECK(loss < expect * 1.15);
}

TEST_CASE("mlm rejects batches with nothing to mask") {
  Rng rng(10);
  auto model = lm::EncoderModel<float>::init(tiny_spec(40), rng);
  std::vector<std::vector<int>> batch = {{tok::kCls, tok::kSep}, {tok::kCls, tok::kSep}};
  Rng mask_rng(11);
  CHECK_THROWS_AS(model.mlm_step(batch, 0.15, mask_rng), DataError);
  CHECK_THROWS_AS(model.mlm_step(batch, 0.0, mask_rng), ConfigError);
}

TEST_CASE("mlm loss decreases while overfitting a small set") {
  const int64_t vocab = 40;
  Rng rng(12);
  auto model = lm::EncoderModel<float>::init(tiny_spec(vocab, 32, 1), rng);
  std::vector<std::vector<int>> sentences;
  Rng data_rng(13);
  for (int i = 0; i < 100; ++i) {
    std::vector<int> ids{tok::kCls};
    for (int w = 0; w < 6; ++w) {
      ids.push_back(7 + static_cast<int>(data_rng.uniform_int(vocab - 7)));
    }
    ids.push_back(tok::kSep);
    sentences.push_back(std::move(ids));
  }
  nn::ParamList<float> params;
  model.visit_params("enc", [&](const std::string& n, Tensor<float>& t) {
    params.emplace_back(n, t);
  });
  train::TrainConfig cfg;
  cfg.lr = 1e-3;
  cfg.weight_decay = 0.0;
  train::AdamState<float> state;
  double first = 0, last = 0;
  for (int step = 0; step < 50; ++step) {
    for (auto& [n, t] : params) t.zero_grad();
    Rng mask_rng(1000 + static_cast<uint64_t>(step));
    auto loss = model.mlm_step(sentences, 0.15, mask_rng);
    backward(loss);
    train::adam_step(params, state, cfg);
    if (step == 0) first = loss.item();
    last = loss.item();
  }
  CHECK(last < first);
  CHECK(last < first * 0.7);
}

TEST_CASE("clm loss at random init is near ln(vocab)") {
  const int64_t vocab = 50;
  Rng rng(14);
  auto model = lm::DecoderModel<float>::init(tiny_spec(vocab), rng);
  std::vector<std::vector<int>> batch;
  Rng data_rng(15);
  for (int i = 0; i < 16; ++i) {
    std::vector<int> ids{tok::kBos};
    for (int w = 0; w < 8; ++w) {
      ids.push_back(7 + static_cast<int>(data_rng.uniform_int(vocab - 7)));
    }
    ids.push_back(tok::kEos);
    batch.push_back(std::move(ids));
  }
  const double loss = model.clm_step(batch).item();
  const double expect = std::log(static_cast<double>(vocab));
  CHECK(loss > expect * 0.85);
  CHECK(loss < expect * 1.15);
}

TEST_CASE("clm loss is identical across paddings, exactly") {
  Rng rng(16);
  auto model = lm::DecoderModel<float>::init(tiny_spec(40), rng);
  const auto a = dec_seq({9, 10, 11});
  const auto b = dec_seq({9, 10, 11}, 16);
  CHECK(model.clm_example_loss(a).item() == model.clm_example_loss(b).item());
  std::vector<int> one = {tok::kBos};
  CHECK_THROWS_AS(model.clm_example_loss(one), DataError);
}

TEST_CASE("clm overfits a constant sequence to near zero") {
  const int64_t vocab = 20;
  Rng rng(17);
  auto model = lm::DecoderModel<float>::init(tiny_spec(vocab, 32, 1), rng);
  std::vector<std::vector<int>> batch(8, std::vector<int>{tok::kBos, 9, 9, 9, 9, tok::kEos});
  nn::ParamList<float> params;
  model.visit_params("dec", [&](const std::string& n, Tensor<float>& t) {
    params.emplace_back(n, t);
  });
  train::TrainConfig cfg;
  cfg.lr = 5e-3;
  cfg.weight_decay = 0.0;
  train::AdamState<float> state;
  double last = 0;
  for (int step = 0; step < 150; ++step) {
    for (auto& [n, t] : params) t.zero_grad();
    auto loss = model.clm_step(batch);
    backward(loss);
    train::adam_step(params, state, cfg);
    last = loss.item();
  }
  CHECK(last < 0.05);
}

TEST_CASE("generate is deterministic, bounded, and validates the prefix") {
  Rng rng(18);
  auto model = lm::DecoderModel<float>::init(tiny_spec(30), rng);
  std::vector<int> prefix = {tok::kBos, 9, 10};
  auto a = model.generate(prefix, 5);
  auto b = model.generate(prefix, 5);
  CHECK(a == b);
  CHECK(a.size() <= prefix.size() + 5);
  CHECK_THROWS_AS(model.generate(std::span<const int>(), 5), DataError);
  std::vector<int> too_long(20, 9);
  too_long[0] = tok::kBos;
  CHECK_THROWS_AS(model.generate(too_long, 5), DataError);
}

TEST_CASE("generate reproduces an overfit corpus continuation") {
  const int64_t vocab = 16;
  Rng rng(19);
  auto model = lm::DecoderModel<float>::init(tiny_spec(vocab, 32, 1), rng);
  // corpus "a b c [EOS]" with a=9 b=10 c=11
  std::vector<std::vector<int>> batch(8, std::vector<int>{tok::kBos, 9, 10, 11, tok::kEos});
  nn::ParamList<float> params;
  model.visit_params("dec", [&](const std::string& n, Tensor<float>& t) {
    params.emplace_back(n, t);
  });
  train::TrainConfig cfg;
  cfg.lr = 5e-3;
  cfg.weight_decay = 0.0;
  train::AdamState<float> state;
  for (int step = 0; step < 200; ++step) {
    for (auto& [n, t] : params) t.zero_grad();
    auto loss = model.clm_step(batch);
    backward(loss);
    train::adam_step(params, state, cfg);
  }
  const std::vector<int> prefix = {tok::kBos, 9};
  const auto out = model.generate(prefix, 50);
  CHECK(out == std::vector<int>{tok::kBos, 9, 10, 11, tok::kEos});
}

TEST_CASE("classify tie-break and contracts") {
  Rng rng(20);
  auto head = lm::ClassifierHead<float>::init(4, 5, rng);
  std::fill(head.weight.mutable_data().begin(), head.weight.mutable_data().end(), 0.0f);
  auto logits = lm::classify(head, Tensor<float>::from_data({4}, {1, 2, 3, 4}));
  for (float v : logits.data()) CHECK(v == 0.0f);
  CHECK(lm::predict<float>(logits.data()) == 0);

  // identity-like head: weight[i][i]=1 picks the hot label
  Rng rng2(21);
  auto head5 = lm::ClassifierHead<float>::init(5, 5, rng2);
  std::fill(head5.weight.mutable_data().begin(), head5.weight.mutable_data().end(), 0.0f);
  for (int i = 0; i < 5; ++i) head5.weight.mutable_data()[static_cast<size_t>(i * 5 + i)] = 1.0f;
  auto hot = lm::classify(head5, Tensor<float>::from_data({5}, {0, 0, 0, 1, 0}));
  CHECK(lm::predict<float>(hot.data()) == 3);

  CHECK_THROWS_AS(lm::classify(head, Tensor<float>::from_data({3}, {1, 2, 3})), ShapeError);
}

TEST_CASE("classifier head gradient matches finite differences") {
  Rng rng(22);
  auto head = lm::ClassifierHead<double>::init(6, 5, rng);
  auto features = Tensor<double>::randn({6}, rng, 1.0);
  const int target[1] = {2};
  const auto err = grad_check<double>(
      [&](const Tensor<double>& w) {
        lm::ClassifierHead<double> h = head;
        h.weight = w;
        auto logits = lm::classify(h, features);
        return cross_entropy(reshape(logits, {1, 5}), target);
      },
      head.weight, 1e-4);
  CHECK(err <= 1e-5);
}

TEST_CASE("encdec pooled embedding uses live cross-attention") {
  Rng rng(23);
  auto model = lm::EncDecModel<float>::init(tiny_spec(40), rng);
  const auto enc_ids = enc_seq({9, 10, 11}, 12);
  const auto dec_ids = dec_seq({9, 10, 11}, 12);
  auto out = model.encode(enc_ids, dec_ids);
  CHECK(out.pooled.vector.shape() == Shape{16});
  CHECK(out.pooled.source == lm::Pooling::decoder_eos);
  // determinism
  auto again = model.encode(enc_ids, dec_ids);
  CHECK(same_values<float>(out.pooled.vector.data(), again.pooled.vector.data()));
  // zeroed memory changes the pooled vector
  auto zero_memory = Tensor<float>::zeros({5, 16});
  auto dec_trimmed = dec_seq({9, 10, 11});
  auto states = model.decode_states(dec_trimmed, zero_memory);
  auto pooled_zero = row(states, states.dim(0) - 1);
  CHECK(!same_values<float>(out.pooled.vector.data(), pooled_zero.data()));
}

TEST_CASE("encdec denoising loss is finite and positive") {
  Rng rng(24);
  auto model = lm::EncDecModel<float>::init(tiny_spec(40, 16, 1), rng);
  lm::SentencePair pair{enc_seq({9, 10, 11, 12}), dec_seq({9, 10, 11, 12})};
  Rng mask_rng(25);
  const double loss = model.denoise_example_loss(pair, 0.3, mask_rng).item();
  CHECK(std::isfinite(loss));
  CHECK(loss > 0);
}

TEST_SUITE_END();
