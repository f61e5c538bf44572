#include <cmath>

#include "doctest.h"

#include "lasi/tensor.hpp"

using namespace lasi;

namespace {

template <class T>
Tensor<T> rand_tensor(Shape shape, uint64_t seed, double stddev = 1.0) {
  Rng rng(seed);
  return Tensor<T>::randn(std::move(shape), rng, stddev);
}

template <class T>
void check_values(const Tensor<T>& t, const std::vector<T>& expect, double tol) {
  REQUIRE(t.numel() == static_cast<int64_t>(expect.size()));
  for (size_t i = 0; i < expect.size(); ++i) {
    CHECK(std::abs(static_cast<double>(t.data()[i]) - static_cast<double>(expect[i])) <= tol);
  }
}

}  // namespace

TEST_SUITE_BEGIN("tensor");

TEST_CASE("matmul identity") {
  auto eye = Tensor<double>::from_data({2, 2}, {1, 0, 0, 1});
  auto m = Tensor<double>::from_data({2, 2}, {1, 2, 3, 4});
  check_values(matmul(eye, m), {1, 2, 3, 4}, 0.0);
}

TEST_CASE("matmul 1x2 times 2x1") {
  auto a = Tensor<double>::from_data({1, 2}, {1, 2});
  auto b = Tensor<double>::from_data({2, 1}, {3, 4});
  check_values(matmul(a, b), {11}, 0.0);
}

TEST_CASE("matmul gradient matches central finite differences") {
  auto b = rand_tensor<double>({4, 2}, 11);
  const auto err = grad_check<double>(
      [&](const Tensor<double>& a) { return sum(matmul(a, b)); }, rand_tensor<double>({3, 4}, 7),
      1e-4);
  CHECK(err <= 1e-5);
}

TEST_CASE("matmul shape mismatch names both shapes") {
  auto a = Tensor<double>::from_data({2, 3}, std::vector<double>(6, 0.0));
  auto b = Tensor<double>::from_data({2, 3}, std::vector<double>(6, 0.0));
  CHECK_THROWS_WITH_AS(matmul(a, b), doctest::Contains("[2,3]"), ShapeError);
}

TEST_CASE("batched matmul equals per-slice products") {
  Rng rng(3);
  auto a = Tensor<double>::randn({2, 3, 4}, rng, 1.0);
  auto b = Tensor<double>::randn({2, 4, 5}, rng, 1.0);
  auto c = matmul(a, b);
  REQUIRE(c.shape() == Shape{2, 3, 5});
  for (int s = 0; s < 2; ++s) {
    std::vector<double> as(a.data().begin() + s * 12, a.data().begin() + (s + 1) * 12);
    std::vector<double> bs(b.data().begin() + s * 20, b.data().begin() + (s + 1) * 20);
    auto ref = matmul(Tensor<double>::from_data({3, 4}, as), Tensor<double>::from_data({4, 5}, bs));
    for (int i = 0; i < 15; ++i) {
      CHECK(c.data()[static_cast<size_t>(s * 15 + i)] ==
            doctest::Approx(ref.data()[static_cast<size_t>(i)]).epsilon(1e-12));
    }
  }
  CHECK_THROWS_AS(matmul(a, Tensor<double>::from_data({3, 4, 5}, std::vector<double>(60, 0.0))),
                  ShapeError);
}

TEST_CASE("elementwise basics") {
  auto z = Tensor<double>::from_data({1}, {0.0});
  CHECK(tanh(z).item() == 0.0);
  auto a = Tensor<double>::from_data({2}, {1, 2});
  auto b = Tensor<double>::from_data({2}, {3, 4});
  check_values(add(a, b), {4, 6}, 0.0);
  CHECK_THROWS_AS(add(a, Tensor<double>::from_data({3}, {1, 2, 3})), ShapeError);
}

TEST_CASE("tanh derivative at 0.5 matches finite differences") {
  const auto err = grad_check<double>(
      [](const Tensor<double>& x) { return sum(tanh(x)); },
      Tensor<double>::from_data({1}, {0.5}), 1e-4);
  CHECK(err <= 1e-5);
}

TEST_CASE("tanh output in open unit interval") {
  auto x = rand_tensor<double>({64}, 5, 3.0);
  auto y = tanh(x);
  for (double v : y.data()) {
    CHECK(v > -1.0);
    CHECK(v < 1.0);
  }
}

TEST_CASE("softmax symmetry and stability") {
  check_values(softmax(Tensor<double>::from_data({2}, {0, 0}), 0), {0.5, 0.5}, 1e-12);
  check_values(softmax(Tensor<double>::from_data({2}, {1000, 1000}), 0), {0.5, 0.5}, 1e-12);
}

TEST_CASE("softmax direct formula oracle") {
  // frozen from a 40-digit evaluation of e^x / sum e^x
  check_values(softmax(Tensor<double>::from_data({3}, {1, 2, 3}), 0),
               {0.09003057317038046, 0.24472847105479764, 0.6652409557748219}, 1e-6);
}

TEST_CASE("softmax slices sum to one for large magnitudes") {
  Rng rng(17);
  for (int trial = 0; trial < 20; ++trial) {
    const int64_t rows = 1 + static_cast<int64_t>(rng.uniform_int(6));
    const int64_t cols = 2 + static_cast<int64_t>(rng.uniform_int(7));
    std::vector<float> vals(static_cast<size_t>(rows * cols));
    for (auto& v : vals) v = static_cast<float>((rng.uniform() * 2 - 1) * 1e3);
    auto t = Tensor<float>::from_data({rows, cols}, std::move(vals));
    const int axis = trial % 2;
    auto y = softmax(t, axis);
    const int64_t n_slices = axis == 0 ? cols : rows;
    for (int64_t s = 0; s < n_slices; ++s) {
      double total = 0;
      for (int64_t k = 0; k < (axis == 0 ? rows : cols); ++k) {
        total += axis == 0 ? y.data()[static_cast<size_t>(k * cols + s)]
                           : y.data()[static_cast<size_t>(s * cols + k)];
      }
      CHECK(std::abs(total - 1.0) <= 1e-6);
    }
  }
}

TEST_CASE("masked softmax zeroes masked entries exactly") {
  auto scores = rand_tensor<double>({3, 4}, 9);
  BoolMat mask(3, 4, true);
  mask.set(0, 1, false);
  mask.set(2, 0, false);
  mask.set(2, 3, false);
  auto w = masked_softmax_rows(scores, mask);
  CHECK(w.data()[1] == 0.0);
  CHECK(w.data()[8] == 0.0);
  CHECK(w.data()[11] == 0.0);
  for (int r = 0; r < 3; ++r) {
    double total = 0;
    for (int c = 0; c < 4; ++c) total += w.data()[static_cast<size_t>(r * 4 + c)];
    CHECK(std::abs(total - 1.0) <= 1e-12);
  }
  BoolMat dead(3, 4, false);
  CHECK_THROWS_AS(masked_softmax_rows(scores, dead), ShapeError);
}

TEST_CASE("cross entropy confident and uniform cases") {
  const int t0[1] = {0};
  CHECK(cross_entropy(Tensor<double>::from_data({1, 2}, {10, -10}), t0).item() < 1e-4);
  CHECK(cross_entropy(Tensor<double>::from_data({1, 2}, {0, 0}), t0).item() ==
        doctest::Approx(0.6931471805599453).epsilon(1e-12));
}

TEST_CASE("cross entropy direct formula oracle") {
  // frozen from a 40-digit evaluation
  auto logits = Tensor<double>::from_data(
      {4, 5}, {0.5, -1.2, 2.0, 0.3, -0.7, 1.5, 1.4, -0.2, 0.0, 2.2,
               -3.0, 0.1, 0.4, 1.9, 0.8, 0.0, 0.0, 0.0, 0.0, 0.0});
  const int targets[4] = {2, 4, 3, 0};
  CHECK(cross_entropy(logits, targets).item() ==
        doctest::Approx(0.8339299147932325).epsilon(1e-6));
}

TEST_CASE("cross entropy uniform-logit identity over k") {
  for (int k = 2; k <= 10; ++k) {
    auto logits = Tensor<double>::zeros({1, k});
    const int t[1] = {k - 1};
    CHECK(cross_entropy(logits, t).item() ==
          doctest::Approx(std::log(static_cast<double>(k))).epsilon(1e-12));
  }
}

TEST_CASE("cross entropy rejects out-of-range target") {
  const int bad[1] = {2};
  CHECK_THROWS_AS(cross_entropy(Tensor<double>::from_data({1, 2}, {0, 0}), bad), DataError);
}

TEST_CASE("mse identities") {
  auto x = rand_tensor<double>({5}, 21);
  CHECK(mse(x, x).item() == 0.0);
  CHECK(mse(Tensor<double>::from_data({2}, {0, 0}), Tensor<double>::from_data({2}, {1, 1})).item() ==
        doctest::Approx(1.0).epsilon(1e-15));
  CHECK_THROWS_AS(mse(x, rand_tensor<double>({4}, 3)), ShapeError);
}

TEST_CASE("mse is symmetric") {
  auto a = rand_tensor<double>({7}, 31);
  auto b = rand_tensor<double>({7}, 32);
  CHECK(mse(a, b).item() == doctest::Approx(mse(b, a).item()).epsilon(1e-15));
}

TEST_CASE("backward of sum gives ones") {
  auto x = rand_tensor<double>({3, 4}, 41);
  x.set_requires_grad(true);
  backward(sum(x));
  for (double g : x.grad()) CHECK(g == 1.0);
}

TEST_CASE("backward of sum of squares") {
  auto x = Tensor<double>::from_data({2}, {1, 2}).set_requires_grad(true);
  backward(sum(mul(x, x)));
  check_values(Tensor<double>::from_data({2}, {x.grad()[0], x.grad()[1]}), {2, 4}, 1e-15);
}

TEST_CASE("backward rejects non-scalar and detached losses") {
  auto x = rand_tensor<double>({3}, 5);
  auto tracked = rand_tensor<double>({3}, 6).set_requires_grad(true);
  CHECK_THROWS_AS(backward(add(tracked, 1.0)), ShapeError);
  CHECK_THROWS_AS(backward(sum(x)), Error);  // nothing tracked anywhere
}

TEST_CASE("composite tanh-matmul chain matches finite differences") {
  auto w = rand_tensor<double>({4, 3}, 51);
  const auto err = grad_check<double>(
      [&](const Tensor<double>& x) { return sum(tanh(matmul(x, w))); },
      rand_tensor<double>({2, 4}, 52), 1e-4);
  CHECK(err <= 1e-5);
}

TEST_CASE("fan-out accumulates both consumers") {
  // y = sum(x*x) + sum(x): dy/dx = 2x + 1
  auto x = Tensor<double>::from_data({3}, {1, -2, 0.5}).set_requires_grad(true);
  backward(add(sum(mul(x, x)), sum(x)));
  CHECK(x.grad()[0] == doctest::Approx(3.0).epsilon(1e-12));
  CHECK(x.grad()[1] == doctest::Approx(-3.0).epsilon(1e-12));
  CHECK(x.grad()[2] == doctest::Approx(2.0).epsilon(1e-12));
  const auto err = grad_check<double>(
      [](const Tensor<double>& t) { return add(sum(mul(t, t)), sum(t)); },
      rand_tensor<double>({5}, 53), 1e-4);
  CHECK(err <= 1e-5);
}

TEST_CASE("graph order is topological") {
  auto x = rand_tensor<double>({2, 2}, 61).set_requires_grad(true);
  auto y = tanh(matmul(x, x));
  auto loss = sum(mul(y, y));
  Graph<double> g = build_graph(loss);
  REQUIRE(!g.order.empty());
  CHECK(g.order.back() == loss.node());
  for (size_t i = 0; i < g.order.size(); ++i) {
    for (const auto& parent : g.order[i]->parents) {
      if (!parent->tracked) continue;
      bool seen = false;
      for (size_t j = 0; j < i; ++j) seen = seen || g.order[j] == parent.get();
      CHECK(seen);
    }
  }
}

TEST_CASE("grad_check on sum is exactly zero") {
  // integer values and a power-of-two step keep the central difference exact
  auto x = Tensor<double>::from_data({4}, {1, 2, 3, 4});
  CHECK(grad_check<double>([](const Tensor<double>& t) { return sum(t); }, x, 0.25) == 0.0);
}

TEST_CASE("grad_check on sum of squares") {
  const auto err = grad_check<double>(
      [](const Tensor<double>& t) { return sum(mul(t, t)); }, rand_tensor<double>({6}, 71), 1e-4);
  CHECK(err <= 1e-6);
}

TEST_CASE("grad_check rejects non-scalar functions") {
  CHECK_THROWS_AS(grad_check<double>([](const Tensor<double>& t) { return add(t, 1.0); },
                                     rand_tensor<double>({3}, 81), 1e-4),
                  ShapeError);
}

TEST_CASE("every differentiable op passes grad_check on random shapes") {
  // eps 1e-4 in the 64-bit mode, tolerance 1e-4, three shapes per op
  const Shape shapes[3] = {{2, 3}, {3, 5}, {4, 4}};
  for (int variant = 0; variant < 3; ++variant) {
    const Shape& s = shapes[variant];
    const uint64_t seed = 100 + static_cast<uint64_t>(variant);
    auto x = rand_tensor<double>(s, seed);
    auto other = rand_tensor<double>(s, seed + 1000);

    auto check = [&](const char* name, std::function<Tensor<double>(const Tensor<double>&)> f,
                     const Tensor<double>& probe) {
      INFO(name << " shape " << shape_str(probe.shape()));
      CHECK(grad_check<double>(f, probe, 1e-4) <= 1e-4);
    };

    check("add", [&](const Tensor<double>& t) { return sum(add(t, other)); }, x);
    check("sub", [&](const Tensor<double>& t) { return sum(sub(other, t)); }, x);
    check("mul", [&](const Tensor<double>& t) { return sum(mul(t, other)); }, x);
    check("scale", [&](const Tensor<double>& t) { return sum(scale(t, 1.7)); }, x);
    check("add_scalar", [&](const Tensor<double>& t) { return sum(add(t, 0.3)); }, x);
    check("tanh", [&](const Tensor<double>& t) { return sum(tanh(t)); }, x);
    check("gelu", [&](const Tensor<double>& t) { return sum(gelu(t)); }, x);
    check("softmax0", [&](const Tensor<double>& t) { return sum(mul(softmax(t, 0), other)); }, x);
    check("softmax1", [&](const Tensor<double>& t) { return sum(mul(softmax(t, 1), other)); }, x);
    check("mse", [&](const Tensor<double>& t) { return mse(t, other); }, x);
    check("sum", [&](const Tensor<double>& t) { return sum(t); }, x);
    check("reshape",
          [&](const Tensor<double>& t) { return sum(mul(reshape(t, {t.numel()}),
                                                        reshape(other, {other.numel()}))); },
          x);
    check("row", [&](const Tensor<double>& t) { return sum(row(t, 1)); }, x);
    check("col_slice", [&](const Tensor<double>& t) { return sum(col_slice(t, 1, 2)); }, x);
    check("rows_range", [&](const Tensor<double>& t) { return sum(rows_range(t, 0, 2)); }, x);
    check("rows_select",
          [&](const Tensor<double>& t) {
            const int idx[3] = {1, 0, 1};
            return sum(rows_select(t, idx));
          },
          x);
    check("matmul_nt",
          [&](const Tensor<double>& t) { return sum(matmul_nt(t, other)); }, x);
    check("concat_cols",
          [&](const Tensor<double>& t) {
            const Tensor<double> parts[2] = {t, other};
            return sum(concat_cols(std::span<const Tensor<double>>(parts)));
          },
          x);
    check("add_rowvec",
          [&](const Tensor<double>& t) {
            auto v = rand_tensor<double>({s[1]}, seed + 2000);
            return sum(mul(add_rowvec(t, v), other));
          },
          x);
    check("cross_entropy",
          [&](const Tensor<double>& t) {
            std::vector<int> targets(static_cast<size_t>(t.dim(0)));
            for (size_t i = 0; i < targets.size(); ++i) {
              targets[i] = static_cast<int>(i % static_cast<size_t>(t.dim(1)));
            }
            return cross_entropy(t, targets);
          },
          x);

    auto vec = rand_tensor<double>({6}, seed + 3000);
    auto vec2 = rand_tensor<double>({6}, seed + 3001);
    check("concat",
          [&](const Tensor<double>& t) {
            const Tensor<double> parts[2] = {t, vec2};
            return sum(mul(concat(std::span<const Tensor<double>>(parts)),
                           rand_tensor<double>({12}, seed + 3002)));
          },
          vec);
    check("cosine", [&](const Tensor<double>& t) { return cosine_loss(t, vec2); }, vec);

    auto gain = rand_tensor<double>({s[1]}, seed + 4000, 0.5);
    auto bias = rand_tensor<double>({s[1]}, seed + 4001, 0.5);
    check("layer_norm_x",
          [&](const Tensor<double>& t) { return sum(mul(layer_norm(t, gain, bias), other)); }, x);
    check("layer_norm_gain",
          [&](const Tensor<double>& g) { return sum(mul(layer_norm(x, g, bias), other)); }, gain);
    check("layer_norm_bias",
          [&](const Tensor<double>& b) { return sum(mul(layer_norm(x, gain, b), other)); }, bias);

    auto tok = rand_tensor<double>({7, 4}, seed + 5000);
    auto pos = rand_tensor<double>({5, 4}, seed + 5001);
    const int ids[3] = {1, 4, 1};
    check("embedding_tok",
          [&](const Tensor<double>& t) {
            return sum(mul(embedding(t, pos, ids), rand_tensor<double>({3, 4}, seed + 5002)));
          },
          tok);
    check("embedding_pos",
          [&](const Tensor<double>& p) {
            return sum(mul(embedding(tok, p, ids), rand_tensor<double>({3, 4}, seed + 5002)));
          },
          pos);

    BoolMat mask(s[0], s[0], true);
    mask.set(0, s[0] - 1, false);
    auto square = rand_tensor<double>({s[0], s[0]}, seed + 6000);
    check("masked_softmax",
          [&](const Tensor<double>& t) {
            return sum(mul(masked_softmax_rows(t, mask),
                           rand_tensor<double>({s[0], s[0]}, seed + 6001)));
          },
          square);
  }
}

TEST_CASE("embedding gradient scatters only into used rows") {
  auto tok = rand_tensor<double>({6, 3}, 301).set_requires_grad(true);
  auto pos = rand_tensor<double>({4, 3}, 302).set_requires_grad(true);
  const int ids[3] = {2, 4, 2};
  backward(sum(embedding(tok, pos, ids)));
  for (int r = 0; r < 6; ++r) {
    const bool used = r == 2 || r == 4;
    for (int c = 0; c < 3; ++c) {
      const double g = tok.grad()[static_cast<size_t>(r * 3 + c)];
      if (used) {
        CHECK(g != 0.0);
      } else {
        CHECK(g == 0.0);
      }
    }
  }
  // row 2 was used twice: its gradient is doubled
  CHECK(tok.grad()[2 * 3] == doctest::Approx(2.0).epsilon(1e-12));
  CHECK(pos.grad()[3 * 3] == 0.0);  // position 3 unused
}

TEST_CASE("embedding input validation") {
  auto tok = rand_tensor<double>({6, 3}, 311);
  auto pos = rand_tensor<double>({4, 3}, 312);
  const int bad_id[1] = {6};
  CHECK_THROWS_AS(embedding(tok, pos, bad_id), DataError);
  const int too_long[5] = {0, 1, 2, 3, 4};
  CHECK_THROWS_AS(embedding(tok, pos, too_long), DataError);
  CHECK_THROWS_AS(embedding(tok, pos, std::span<const int>()), DataError);
}

TEST_CASE("dropout scales kept entries and zeroes the rest") {
  Rng rng(99);
  auto x = Tensor<float>::full({1000}, 1.0f);
  auto y = dropout(x, 0.25, rng);
  int kept = 0;
  for (float v : y.data()) {
    if (v != 0.0f) {
      CHECK(v == doctest::Approx(1.0f / 0.75f));
      ++kept;
    }
  }
  CHECK(kept > 650);
  CHECK(kept < 850);
}

TEST_SUITE_END();
