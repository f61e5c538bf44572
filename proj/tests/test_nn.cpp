#include <cmath>

#include "doctest.h"

#include "lasi/nn.hpp"

using namespace lasi;

namespace {

template <class T>
Tensor<T> randt(Shape shape, uint64_t seed, double stddev = 1.0) {
  Rng rng(seed);
  return Tensor<T>::randn(std::move(shape), rng, stddev);
}

nn::BlockConfig tiny_cfg(int64_t d = 8, int64_t heads = 2) {
  nn::BlockConfig cfg;
  cfg.d_model = d;
  cfg.n_heads = heads;
  cfg.d_ff = 2 * d;
  cfg.max_len = 16;
  cfg.dropout_rate = 0.0;
  return cfg;
}

template <class T>
bool bit_equal(const Tensor<T>& a, const Tensor<T>& b) {
  if (a.shape() != b.shape()) return false;
  for (size_t i = 0; i < a.data().size(); ++i) {
    if (a.data()[i] != b.data()[i]) return false;
  }
  return true;
}

}  // namespace

TEST_SUITE_BEGIN("nn");

TEST_CASE("block config validates head divisibility") {
  nn::BlockConfig cfg;
  cfg.d_model = 10;
  cfg.n_heads = 4;
  CHECK_THROWS_AS(cfg.head_dim(), ConfigError);
  cfg.n_heads = 2;
  CHECK(cfg.head_dim() == 5);
}

TEST_CASE("causal mask shapes") {
  auto m1 = nn::causal_mask(1);
  CHECK(m1.at(0, 0));
  auto m3 = nn::causal_mask(3);
  for (int i = 0; i < 3; ++i) {
    for (int j = 0; j < 3; ++j) CHECK(m3.at(i, j) == (j <= i));
  }
  CHECK_THROWS_AS(nn::causal_mask(0), ShapeError);
}

TEST_CASE("single-key attention returns the value row exactly") {
  auto q = randt<float>({3, 4}, 1);
  auto k = randt<float>({1, 4}, 2);
  auto v = randt<float>({1, 4}, 3);
  auto out = nn::scaled_dot_attention(q, k, v);
  for (int r = 0; r < 3; ++r) {
    for (int c = 0; c < 4; ++c) {
      CHECK(out.output.data()[static_cast<size_t>(r * 4 + c)] == v.data()[static_cast<size_t>(c)]);
    }
  }
}

TEST_CASE("orthogonal query with identical keys averages the values") {
  auto q = Tensor<double>::from_data({1, 2}, {1, 0});
  auto k = Tensor<double>::from_data({2, 2}, {0, 1, 0, 1});
  auto v = Tensor<double>::from_data({2, 2}, {2, 4, 6, 8});
  auto out = nn::scaled_dot_attention(q, k, v);
  CHECK(out.output.data()[0] == doctest::Approx(4.0).epsilon(1e-12));
  CHECK(out.output.data()[1] == doctest::Approx(6.0).epsilon(1e-12));
}

TEST_CASE("attention matches the direct formula oracle") {
  // frozen from a 40-digit evaluation of softmax(QK^T/sqrt(2))V
  auto q = Tensor<double>::from_data({2, 2}, {1, 0, 0, 2});
  auto k = Tensor<double>::from_data({2, 2}, {1, 2, 3, 4});
  auto v = Tensor<double>::from_data({2, 2}, {1, -1, 2, 0.5});
  auto out = nn::scaled_dot_attention(q, k, v);
  const double expect[4] = {1.804429682506957, 0.20664452376043535, 1.9441927807928303,
                            0.4162891711892454};
  for (int i = 0; i < 4; ++i) {
    CHECK(out.output.data()[static_cast<size_t>(i)] ==
          doctest::Approx(expect[i]).epsilon(1e-6));
  }
}

TEST_CASE("attention rejects key/value length mismatch and dead masks") {
  auto q = randt<double>({2, 3}, 4);
  auto k = randt<double>({4, 3}, 5);
  auto v = randt<double>({5, 3}, 6);
  CHECK_THROWS_AS(nn::scaled_dot_attention(q, k, v), ShapeError);
  BoolMat dead(2, 4, false);
  auto v4 = randt<double>({4, 3}, 7);
  CHECK_THROWS_AS(nn::scaled_dot_attention(q, k, v4, &dead), ShapeError);
}

TEST_CASE("attention weight rows sum to one across random masked configs") {
  Rng rng(101);
  for (int trial = 0; trial < 100; ++trial) {
    const int64_t lq = 1 + static_cast<int64_t>(rng.uniform_int(6));
    const int64_t lk = 1 + static_cast<int64_t>(rng.uniform_int(8));
    const int64_t dk = 2 + static_cast<int64_t>(rng.uniform_int(6));
    auto q = Tensor<float>::randn({lq, dk}, rng, 2.0);
    auto k = Tensor<float>::randn({lk, dk}, rng, 2.0);
    auto v = Tensor<float>::randn({lk, dk}, rng, 1.0);
    // padding-style mask: keep a random prefix of keys
    const int64_t valid = 1 + static_cast<int64_t>(rng.uniform_int(static_cast<uint64_t>(lk)));
    BoolMat mask = nn::key_padding_mask(lq, lk, valid);
    const bool use_mask = trial % 2 == 0;
    auto out = nn::scaled_dot_attention(q, k, v, use_mask ? &mask : nullptr);
    for (int64_t r = 0; r < lq; ++r) {
      double total = 0;
      for (int64_t c = 0; c < lk; ++c) {
        total += out.weights.data()[static_cast<size_t>(r * lk + c)];
      }
      CHECK(std::abs(total - 1.0) <= 1e-6);
    }
  }
}

TEST_CASE("single-head attention equals manually composed projections") {
  auto cfg = tiny_cfg(6, 1);
  Rng rng(11);
  auto params = nn::AttentionParams<float>::init(cfg.d_model, rng);
  auto x = randt<float>({4, 6}, 12);
  auto mha = nn::multi_head_attention(cfg, params, x, x, x);
  auto manual = matmul(
      nn::scaled_dot_attention(matmul(x, params.wq), matmul(x, params.wk), matmul(x, params.wv))
          .output,
      params.wo);
  CHECK(bit_equal(mha, manual));
}

TEST_CASE("multi-head attention output shape") {
  auto cfg = tiny_cfg(8, 4);
  Rng rng(13);
  auto params = nn::AttentionParams<double>::init(cfg.d_model, rng);
  auto q = randt<double>({5, 8}, 14);
  auto kv = randt<double>({7, 8}, 15);
  auto out = nn::multi_head_attention(cfg, params, q, kv, kv);
  CHECK(out.shape() == Shape{5, 8});
}

TEST_CASE("multi-head attention projections pass grad_check") {
  auto cfg = tiny_cfg(6, 3);
  Rng rng(17);
  auto params = nn::AttentionParams<double>::init(cfg.d_model, rng);
  auto x = randt<double>({4, 6}, 18);
  auto probe_matrix = [&](Tensor<double> nn::AttentionParams<double>::* member) {
    return grad_check<double>(
        [&, member](const Tensor<double>& w) {
          nn::AttentionParams<double> p = params;
          p.*member = w;
          return sum(nn::multi_head_attention(cfg, p, x, x, x));
        },
        params.*member, 1e-4);
  };
  CHECK(probe_matrix(&nn::AttentionParams<double>::wq) <= 1e-4);
  CHECK(probe_matrix(&nn::AttentionParams<double>::wk) <= 1e-4);
  CHECK(probe_matrix(&nn::AttentionParams<double>::wv) <= 1e-4);
  CHECK(probe_matrix(&nn::AttentionParams<double>::wo) <= 1e-4);
}

TEST_CASE("full attention block passes grad_check on the input") {
  auto cfg = tiny_cfg(6, 2);
  Rng rng(19);
  auto params = nn::AttentionParams<double>::init(cfg.d_model, rng);
  const auto err = grad_check<double>(
      [&](const Tensor<double>& x) { return sum(nn::multi_head_attention(cfg, params, x, x, x)); },
      randt<double>({3, 6}, 20), 1e-4);
  CHECK(err <= 1e-4);
}

TEST_CASE("encoder layer preserves shape") {
  auto cfg = tiny_cfg();
  Rng rng(21);
  auto params = nn::EncoderLayerParams<float>::init(cfg, rng);
  auto x = randt<float>({10, 8}, 22);
  CHECK(nn::encoder_layer(cfg, params, x).shape() == Shape{10, 8});
}

TEST_CASE("encoder layer is bidirectional") {
  auto cfg = tiny_cfg();
  Rng rng(23);
  auto params = nn::EncoderLayerParams<float>::init(cfg, rng);
  auto x = randt<float>({6, 8}, 24);
  auto y = nn::encoder_layer(cfg, params, x);
  std::vector<float> mutated(x.data().begin(), x.data().end());
  for (int c = 0; c < 8; ++c) mutated[static_cast<size_t>(5 * 8 + c)] += 1.0f;
  auto y2 = nn::encoder_layer(cfg, params, Tensor<float>::from_data({6, 8}, std::move(mutated)));
  bool changed = false;
  for (int c = 0; c < 8; ++c) {
    changed = changed || y.data()[static_cast<size_t>(c)] != y2.data()[static_cast<size_t>(c)];
  }
  CHECK(changed);
}

TEST_CASE("encoder layer passes grad_check") {
  auto cfg = tiny_cfg(6, 2);
  Rng rng(25);
  auto params = nn::EncoderLayerParams<double>::init(cfg, rng);
  const auto err = grad_check<double>(
      [&](const Tensor<double>& x) { return sum(nn::encoder_layer(cfg, params, x)); },
      randt<double>({4, 6}, 26), 1e-4);
  CHECK(err <= 1e-4);
}

TEST_CASE("decoder output is causally invariant, bit-exact") {
  auto cfg = tiny_cfg();
  Rng master(27);
  auto params = nn::DecoderLayerParams<float>::init(cfg, /*with_cross=*/false, master);
  auto x = randt<float>({6, 8}, 28);
  auto y = nn::decoder_layer(cfg, params, x);
  Rng trial_rng(29);
  for (int trial = 0; trial < 20; ++trial) {
    const int t = static_cast<int>(trial_rng.uniform_int(5));  // keep rows 0..t
    std::vector<float> mutated(x.data().begin(), x.data().end());
    for (int r = t + 1; r < 6; ++r) {
      for (int c = 0; c < 8; ++c) {
        mutated[static_cast<size_t>(r * 8 + c)] = static_cast<float>(trial_rng.gauss() * 10.0);
      }
    }
    auto y2 = nn::decoder_layer(cfg, params, Tensor<float>::from_data({6, 8}, std::move(mutated)));
    for (int r = 0; r <= t; ++r) {
      for (int c = 0; c < 8; ++c) {
        CHECK(y.data()[static_cast<size_t>(r * 8 + c)] ==
              y2.data()[static_cast<size_t>(r * 8 + c)]);
      }
    }
  }
}

TEST_CASE("decoder cross-attention is live") {
  auto cfg = tiny_cfg();
  Rng rng(31);
  auto params = nn::DecoderLayerParams<float>::init(cfg, /*with_cross=*/true, rng);
  auto x = randt<float>({4, 8}, 32);
  auto memory = randt<float>({5, 8}, 33);
  auto memory2 = randt<float>({5, 8}, 34);
  auto y1 = nn::decoder_layer(cfg, params, x, nullptr, {&memory, nullptr});
  auto y2 = nn::decoder_layer(cfg, params, x, nullptr, {&memory2, nullptr});
  for (int r = 0; r < 4; ++r) {
    bool row_changed = false;
    for (int c = 0; c < 8; ++c) {
      row_changed = row_changed || y1.data()[static_cast<size_t>(r * 8 + c)] !=
                                       y2.data()[static_cast<size_t>(r * 8 + c)];
    }
    CHECK(row_changed);
  }
  CHECK(y1.shape() == Shape{4, 8});
  // layer without cross parameters rejects cross input
  Rng rng2(35);
  auto plain = nn::DecoderLayerParams<float>::init(cfg, false, rng2);
  CHECK_THROWS_AS(nn::decoder_layer(cfg, plain, x, nullptr, {&memory, nullptr}), ConfigError);
}

TEST_CASE("decoder layer passes grad_check") {
  auto cfg = tiny_cfg(6, 2);
  Rng rng(37);
  auto params = nn::DecoderLayerParams<double>::init(cfg, true, rng);
  auto memory = randt<double>({3, 6}, 38);
  const auto err = grad_check<double>(
      [&](const Tensor<double>& x) {
        return sum(nn::decoder_layer(cfg, params, x, nullptr, {&memory, nullptr}));
      },
      randt<double>({4, 6}, 39), 1e-4);
  CHECK(err <= 1e-4);
}

TEST_CASE("encoder layer is permutation-equivariant without masks") {
  auto cfg = tiny_cfg();
  Rng rng(41);
  auto params = nn::EncoderLayerParams<double>::init(cfg, rng);
  auto x = randt<double>({5, 8}, 42);
  const int perm[5] = {3, 0, 4, 1, 2};
  std::vector<double> px(5 * 8);
  for (int r = 0; r < 5; ++r) {
    for (int c = 0; c < 8; ++c) {
      px[static_cast<size_t>(r * 8 + c)] = x.data()[static_cast<size_t>(perm[r] * 8 + c)];
    }
  }
  auto y = nn::encoder_layer(cfg, params, x);
  auto py = nn::encoder_layer(cfg, params, Tensor<double>::from_data({5, 8}, std::move(px)));
  for (int r = 0; r < 5; ++r) {
    for (int c = 0; c < 8; ++c) {
      CHECK(py.data()[static_cast<size_t>(r * 8 + c)] ==
            doctest::Approx(y.data()[static_cast<size_t>(perm[r] * 8 + c)]).epsilon(1e-12));
    }
  }
}

TEST_CASE("zeroed output projections reduce each sublayer to layer norm") {
  auto cfg = tiny_cfg();
  Rng rng(43);
  auto params = nn::EncoderLayerParams<float>::init(cfg, rng);
  std::fill(params.attn.wo.mutable_data().begin(), params.attn.wo.mutable_data().end(), 0.0f);
  std::fill(params.ffn.w2.mutable_data().begin(), params.ffn.w2.mutable_data().end(), 0.0f);
  std::fill(params.ffn.b2.mutable_data().begin(), params.ffn.b2.mutable_data().end(), 0.0f);
  auto x = randt<float>({4, 8}, 44);
  auto layer_out = nn::encoder_layer(cfg, params, x);
  auto manual = layer_norm(layer_norm(x, params.ln1.gain, params.ln1.bias), params.ln2.gain,
                           params.ln2.bias);
  CHECK(bit_equal(layer_out, manual));
}

TEST_CASE("embedding distinguishes positions") {
  Rng rng(45);
  auto emb = nn::EmbeddingParams<float>::init(20, 8, 6, rng);
  const int ids[2] = {9, 9};
  auto x = nn::embed(emb, ids);
  bool differs = false;
  for (int c = 0; c < 6; ++c) {
    differs = differs || x.data()[static_cast<size_t>(c)] != x.data()[static_cast<size_t>(6 + c)];
  }
  CHECK(differs);
  CHECK_THROWS_AS(nn::embed(emb, std::span<const int>()), DataError);
}

TEST_SUITE_END();
