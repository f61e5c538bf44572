#include "lasi/tensor.hpp"

#include <Eigen/Core>

#include <algorithm>
#include <cmath>
#include <cstring>
#include <sstream>

namespace lasi {

namespace {

template <class T>
using EMat = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <class T>
using Map = Eigen::Map<EMat<T>>;
template <class T>
using CMap = Eigen::Map<const EMat<T>>;

template <class T>
using NodePtr = std::shared_ptr<detail::Node<T>>;

template <class T>
NodePtr<T> new_node(Shape shape, const char* op) {
  auto n = std::make_shared<detail::Node<T>>();
  n->shape = std::move(shape);
  n->value.assign(static_cast<size_t>(shape_numel(n->shape)), T(0));
  n->op = op;
  return n;
}

template <class T, class... Parents>
void connect(const NodePtr<T>& out, std::function<void(detail::Node<T>&, GradStore<T>&)> fn,
             const Parents&... parents) {
  const bool tracked = (parents->tracked || ...);
  if (!tracked) return;
  out->tracked = true;
  (out->parents.push_back(parents), ...);
  out->backprop = std::move(fn);
}

template <class T>
void check_same_shape(const char* op, const Tensor<T>& a, const Tensor<T>& b) {
  if (a.shape() != b.shape()) {
    throw ShapeError(std::string(op) + ": shapes " + shape_str(a.shape()) + " and " +
                     shape_str(b.shape()) + " differ");
  }
}

template <class T>
bool is_finite(T v) {
  return std::isfinite(static_cast<double>(v));
}

}  // namespace

std::string shape_str(const Shape& s) {
  std::ostringstream os;
  os << '[';
  for (size_t i = 0; i < s.size(); ++i) {
    if (i) os << ',';
    os << s[i];
  }
  os << ']';
  return os.str();
}

int64_t shape_numel(const Shape& s) {
  int64_t n = 1;
  for (int64_t e : s) n *= e;
  return n;
}

// ---- Tensor factories ------------------------------------------------------

template <class T>
Tensor<T> Tensor<T>::zeros(Shape shape) {
  for (int64_t e : shape) {
    if (e <= 0) throw ShapeError("non-positive extent in shape " + shape_str(shape));
  }
  return wrap(new_node<T>(std::move(shape), "leaf"));
}

template <class T>
Tensor<T> Tensor<T>::full(Shape shape, T v) {
  auto t = zeros(std::move(shape));
  std::fill(t.mutable_data().begin(), t.mutable_data().end(), v);
  return t;
}

template <class T>
Tensor<T> Tensor<T>::from_data(Shape shape, std::vector<T> data) {
  if (shape_numel(shape) != static_cast<int64_t>(data.size())) {
    throw ShapeError("from_data: shape " + shape_str(shape) + " wants " +
                     std::to_string(shape_numel(shape)) + " values, got " +
                     std::to_string(data.size()));
  }
  auto n = std::make_shared<detail::Node<T>>();
  n->shape = std::move(shape);
  n->value = std::move(data);
  return wrap(std::move(n));
}

template <class T>
Tensor<T> Tensor<T>::randn(Shape shape, Rng& rng, double stddev) {
  auto t = zeros(std::move(shape));
  for (auto& v : t.mutable_data()) v = static_cast<T>(rng.gauss() * stddev);
  return t;
}

template <class T>
void Tensor<T>::accumulate_grad(std::span<const T> g) {
  if (static_cast<int64_t>(g.size()) != numel()) {
    throw ShapeError("accumulate_grad: size mismatch");
  }
  if (n_->grad.empty()) n_->grad.assign(n_->value.size(), T(0));
  for (size_t i = 0; i < g.size(); ++i) n_->grad[i] += g[i];
}

// ---- graph / backward ------------------------------------------------------

template <class T>
Graph<T> build_graph(const Tensor<T>& root) {
  Graph<T> g;
  if (!root.defined()) throw Error("build_graph: undefined tensor");
  std::unordered_map<detail::Node<T>*, int> state;  // 0 new, 1 open, 2 done
  std::vector<detail::Node<T>*> stack{root.node()};
  while (!stack.empty()) {
    auto* n = stack.back();
    int& st = state[n];
    if (st == 0) {
      st = 1;
      for (auto& p : n->parents) {
        if (p->tracked && state[p.get()] == 0) stack.push_back(p.get());
      }
    } else {
      stack.pop_back();
      if (st == 1) {
        st = 2;
        g.order.push_back(n);
      }
    }
  }
  return g;
}

template <class T>
static void backward_impl(const Tensor<T>& loss, GradStore<T>& store, bool flush) {
  if (loss.numel() != 1) {
    throw ShapeError("backward: loss must be scalar, got " + shape_str(loss.shape()));
  }
  if (!loss.tracked()) {
    throw Error("backward: loss is detached from any tracked tensor");
  }
  Graph<T> g = build_graph(loss);
  store.buf(loss.node())[0] += T(1);
  for (auto it = g.order.rbegin(); it != g.order.rend(); ++it) {
    auto* n = *it;
    if (n->backprop && store.find(n)) n->backprop(*n, store);
  }
  if (flush) {
    for (auto* n : g.order) {
      if (const auto* b = store.find(n)) {
        if (n->grad.empty()) n->grad.assign(n->value.size(), T(0));
        for (size_t i = 0; i < b->size(); ++i) n->grad[i] += (*b)[i];
      }
    }
  }
}

template <class T>
void backward(const Tensor<T>& loss) {
  GradStore<T> store;
  backward_impl(loss, store, /*flush=*/true);
}

template <class T>
void backward(const Tensor<T>& loss, GradStore<T>& store) {
  backward_impl(loss, store, /*flush=*/false);
}

// ---- matmul ----------------------------------------------------------------

template <class T>
Tensor<T> matmul(const Tensor<T>& a, const Tensor<T>& b) {
  const auto& sa = a.shape();
  const auto& sb = b.shape();
  const bool batched = sa.size() == 3;
  if (sa.size() != sb.size() || (sa.size() != 2 && sa.size() != 3)) {
    throw ShapeError("matmul: shapes " + shape_str(sa) + " and " + shape_str(sb));
  }
  if (batched && sa[0] != sb[0]) {
    throw ShapeError("matmul: batch extents differ, " + shape_str(sa) + " vs " + shape_str(sb));
  }
  const int64_t B = batched ? sa[0] : 1;
  const int64_t m = sa[batched ? 1 : 0], k = sa[batched ? 2 : 1];
  const int64_t k2 = sb[batched ? 1 : 0], n = sb[batched ? 2 : 1];
  if (k != k2) {
    throw ShapeError("matmul: inner extents differ, " + shape_str(sa) + " vs " + shape_str(sb));
  }

  Shape out_shape = batched ? Shape{B, m, n} : Shape{m, n};
  auto out = new_node<T>(std::move(out_shape), "matmul");
  for (int64_t s = 0; s < B; ++s) {
    CMap<T> A(a.data().data() + s * m * k, m, k);
    CMap<T> Bm(b.data().data() + s * k * n, k, n);
    Map<T> C(out->value.data() + s * m * n, m, n);
    C.noalias() = A * Bm;
  }

  auto an = a.node_ptr();
  auto bn = b.node_ptr();
  connect<T>(
      out,
      [B, m, k, n](detail::Node<T>& o, GradStore<T>& gs) {
        auto& pa = *o.parents[0];
        auto& pb = *o.parents[1];
        const auto& gout = *gs.find(&o);
        for (int64_t s = 0; s < B; ++s) {
          CMap<T> G(gout.data() + s * m * n, m, n);
          CMap<T> A(pa.value.data() + s * m * k, m, k);
          CMap<T> Bm(pb.value.data() + s * k * n, k, n);
          if (pa.tracked) {
            Map<T> GA(gs.buf(&pa).data() + s * m * k, m, k);
            GA.noalias() += G * Bm.transpose();
          }
          if (pb.tracked) {
            Map<T> GB(gs.buf(&pb).data() + s * k * n, k, n);
            GB.noalias() += A.transpose() * G;
          }
        }
      },
      an, bn);
  return Tensor<T>::wrap(out);
}

template <class T>
Tensor<T> matmul_nt(const Tensor<T>& a, const Tensor<T>& b) {
  if (a.rank() != 2 || b.rank() != 2 || a.dim(1) != b.dim(1)) {
    throw ShapeError("matmul_nt: shapes " + shape_str(a.shape()) + " and " +
                     shape_str(b.shape()));
  }
  const int64_t m = a.dim(0), k = a.dim(1), n = b.dim(0);
  auto out = new_node<T>({m, n}, "matmul_nt");
  {
    CMap<T> A(a.data().data(), m, k);
    CMap<T> Bm(b.data().data(), n, k);
    Map<T> C(out->value.data(), m, n);
    C.noalias() = A * Bm.transpose();
  }
  connect<T>(
      out,
      [m, k, n](detail::Node<T>& o, GradStore<T>& gs) {
        auto& pa = *o.parents[0];
        auto& pb = *o.parents[1];
        CMap<T> G(gs.find(&o)->data(), m, n);
        CMap<T> A(pa.value.data(), m, k);
        CMap<T> Bm(pb.value.data(), n, k);
        if (pa.tracked) {
          Map<T> GA(gs.buf(&pa).data(), m, k);
          GA.noalias() += G * Bm;
        }
        if (pb.tracked) {
          Map<T> GB(gs.buf(&pb).data(), n, k);
          GB.noalias() += G.transpose() * A;
        }
      },
      a.node_ptr(), b.node_ptr());
  return Tensor<T>::wrap(out);
}

// ---- elementwise -----------------------------------------------------------

namespace {

template <class T, class Fwd, class Bwd>
Tensor<T> binary_op(const char* name, const Tensor<T>& a, const Tensor<T>& b, Fwd fwd, Bwd bwd) {
  check_same_shape(name, a, b);
  auto out = new_node<T>(a.shape(), name);
  const auto av = a.data();
  const auto bv = b.data();
  for (size_t i = 0; i < av.size(); ++i) out->value[i] = fwd(av[i], bv[i]);
  connect<T>(
      out,
      [bwd](detail::Node<T>& o, GradStore<T>& gs) {
        auto& pa = *o.parents[0];
        auto& pb = *o.parents[1];
        const auto& g = *gs.find(&o);
        std::vector<T>* ga = pa.tracked ? &gs.buf(&pa) : nullptr;
        std::vector<T>* gb = pb.tracked ? &gs.buf(&pb) : nullptr;
        for (size_t i = 0; i < g.size(); ++i) {
          auto [da, db] = bwd(pa.value[i], pb.value[i], g[i]);
          if (ga) (*ga)[i] += da;
          if (gb) (*gb)[i] += db;
        }
      },
      a.node_ptr(), b.node_ptr());
  return Tensor<T>::wrap(out);
}

template <class T, class Fwd, class Bwd>
Tensor<T> unary_op(const char* name, const Tensor<T>& a, Fwd fwd, Bwd bwd) {
  auto out = new_node<T>(a.shape(), name);
  const auto av = a.data();
  for (size_t i = 0; i < av.size(); ++i) out->value[i] = fwd(av[i]);
  connect<T>(
      out,
      [bwd](detail::Node<T>& o, GradStore<T>& gs) {
        auto& pa = *o.parents[0];
        if (!pa.tracked) return;
        const auto& g = *gs.find(&o);
        auto& ga = gs.buf(&pa);
        for (size_t i = 0; i < g.size(); ++i) ga[i] += bwd(pa.value[i], o.value[i], g[i]);
      },
      a.node_ptr());
  return Tensor<T>::wrap(out);
}

}  // namespace

template <class T>
Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b) {
  return binary_op<T>(
      "add", a, b, [](T x, T y) { return x + y; },
      [](T, T, T g) { return std::pair<T, T>(g, g); });
}

template <class T>
Tensor<T> sub(const Tensor<T>& a, const Tensor<T>& b) {
  return binary_op<T>(
      "sub", a, b, [](T x, T y) { return x - y; },
      [](T, T, T g) { return std::pair<T, T>(g, -g); });
}

template <class T>
Tensor<T> mul(const Tensor<T>& a, const Tensor<T>& b) {
  return binary_op<T>(
      "mul", a, b, [](T x, T y) { return x * y; },
      [](T x, T y, T g) { return std::pair<T, T>(g * y, g * x); });
}

template <class T>
Tensor<T> add(const Tensor<T>& a, T s) {
  return unary_op<T>(
      "add_s", a, [s](T x) { return x + s; }, [](T, T, T g) { return g; });
}

template <class T>
Tensor<T> sub(const Tensor<T>& a, T s) {
  return add(a, -s);
}

template <class T>
Tensor<T> scale(const Tensor<T>& a, T s) {
  return unary_op<T>(
      "scale", a, [s](T x) { return x * s; }, [s](T, T, T g) { return g * s; });
}

template <class T>
Tensor<T> tanh(const Tensor<T>& a) {
  return unary_op<T>(
      "tanh", a, [](T x) { return std::tanh(x); },
      [](T, T y, T g) { return g * (T(1) - y * y); });
}

template <class T>
Tensor<T> gelu(const Tensor<T>& a) {
  constexpr double inv_sqrt2 = 0.70710678118654752440;
  constexpr double inv_sqrt2pi = 0.39894228040143267794;
  return unary_op<T>(
      "gelu", a,
      [](T x) {
        const double xd = static_cast<double>(x);
        return static_cast<T>(0.5 * xd * (1.0 + std::erf(xd * inv_sqrt2)));
      },
      [](T x, T, T g) {
        const double xd = static_cast<double>(x);
        const double cdf = 0.5 * (1.0 + std::erf(xd * inv_sqrt2));
        const double pdf = inv_sqrt2pi * std::exp(-0.5 * xd * xd);
        return static_cast<T>(static_cast<double>(g) * (cdf + xd * pdf));
      });
}

// ---- softmax ---------------------------------------------------------------

template <class T>
Tensor<T> softmax(const Tensor<T>& t, int axis) {
  if (axis < 0 || axis >= t.rank()) {
    throw ShapeError("softmax: axis " + std::to_string(axis) + " out of range for " +
                     shape_str(t.shape()));
  }
  const auto& s = t.shape();
  const int64_t K = s[static_cast<size_t>(axis)];
  int64_t outer = 1, inner = 1;
  for (int i = 0; i < axis; ++i) outer *= s[static_cast<size_t>(i)];
  for (int i = axis + 1; i < t.rank(); ++i) inner *= s[static_cast<size_t>(i)];

  auto out = new_node<T>(t.shape(), "softmax");
  const auto x = t.data();
  for (int64_t o = 0; o < outer; ++o) {
    for (int64_t i = 0; i < inner; ++i) {
      const int64_t base = o * K * inner + i;
      T mx = x[static_cast<size_t>(base)];
      for (int64_t k = 1; k < K; ++k) mx = std::max(mx, x[static_cast<size_t>(base + k * inner)]);
      T total = T(0);
      for (int64_t k = 0; k < K; ++k) {
        const T e = std::exp(x[static_cast<size_t>(base + k * inner)] - mx);
        out->value[static_cast<size_t>(base + k * inner)] = e;
        total += e;
      }
      const T inv = T(1) / total;
      for (int64_t k = 0; k < K; ++k) out->value[static_cast<size_t>(base + k * inner)] *= inv;
    }
  }
  connect<T>(
      out,
      [K, outer, inner](detail::Node<T>& o, GradStore<T>& gs) {
        auto& p = *o.parents[0];
        if (!p.tracked) return;
        const auto& g = *gs.find(&o);
        auto& gp = gs.buf(&p);
        for (int64_t ot = 0; ot < outer; ++ot) {
          for (int64_t i = 0; i < inner; ++i) {
            const int64_t base = ot * K * inner + i;
            T dot = T(0);
            for (int64_t k = 0; k < K; ++k) {
              const auto idx = static_cast<size_t>(base + k * inner);
              dot += g[idx] * o.value[idx];
            }
            for (int64_t k = 0; k < K; ++k) {
              const auto idx = static_cast<size_t>(base + k * inner);
              gp[idx] += o.value[idx] * (g[idx] - dot);
            }
          }
        }
      },
      t.node_ptr());
  return Tensor<T>::wrap(out);
}

template <class T>
Tensor<T> masked_softmax_rows(const Tensor<T>& scores, const BoolMat& allowed) {
  if (scores.rank() != 2 || scores.dim(0) != allowed.rows() || scores.dim(1) != allowed.cols()) {
    throw ShapeError("masked_softmax_rows: scores " + shape_str(scores.shape()) +
                     " vs mask [" + std::to_string(allowed.rows()) + "," +
                     std::to_string(allowed.cols()) + "]");
  }
  const int64_t m = scores.dim(0), n = scores.dim(1);
  auto out = new_node<T>(scores.shape(), "masked_softmax");
  const auto x = scores.data();
  for (int64_t r = 0; r < m; ++r) {
    // max over permitted entries only; masked entries stay exactly zero
    T mx = T(0);
    bool any = false;
    for (int64_t c = 0; c < n; ++c) {
      if (!allowed.at(r, c)) continue;
      const T v = x[static_cast<size_t>(r * n + c)];
      mx = any ? std::max(mx, v) : v;
      any = true;
    }
    if (!any) {
      throw ShapeError("masked_softmax_rows: row " + std::to_string(r) + " is fully masked");
    }
    T total = T(0);
    for (int64_t c = 0; c < n; ++c) {
      if (!allowed.at(r, c)) continue;
      const auto idx = static_cast<size_t>(r * n + c);
      const T e = std::exp(x[idx] - mx);
      out->value[idx] = e;
      total += e;
    }
    const T inv = T(1) / total;
    for (int64_t c = 0; c < n; ++c) {
      if (allowed.at(r, c)) out->value[static_cast<size_t>(r * n + c)] *= inv;
    }
  }
  connect<T>(
      out,
      [m, n, allowed](detail::Node<T>& o, GradStore<T>& gs) {
        auto& p = *o.parents[0];
        if (!p.tracked) return;
        const auto& g = *gs.find(&o);
        auto& gp = gs.buf(&p);
        for (int64_t r = 0; r < m; ++r) {
          T dot = T(0);
          for (int64_t c = 0; c < n; ++c) {
            if (!allowed.at(r, c)) continue;
            const auto idx = static_cast<size_t>(r * n + c);
            dot += g[idx] * o.value[idx];
          }
          for (int64_t c = 0; c < n; ++c) {
            if (!allowed.at(r, c)) continue;
            const auto idx = static_cast<size_t>(r * n + c);
            gp[idx] += o.value[idx] * (g[idx] - dot);
          }
        }
      },
      scores.node_ptr());
  return Tensor<T>::wrap(out);
}

// ---- losses ----------------------------------------------------------------

template <class T>
Tensor<T> cross_entropy(const Tensor<T>& logits, std::span<const int> targets) {
  if (logits.rank() != 2) {
    throw ShapeError("cross_entropy: logits must be rank-2, got " + shape_str(logits.shape()));
  }
  const int64_t B = logits.dim(0), C = logits.dim(1);
  if (static_cast<int64_t>(targets.size()) != B) {
    throw ShapeError("cross_entropy: " + std::to_string(B) + " rows vs " +
                     std::to_string(targets.size()) + " targets");
  }
  for (int64_t i = 0; i < B; ++i) {
    if (targets[static_cast<size_t>(i)] < 0 || targets[static_cast<size_t>(i)] >= C) {
      throw DataError("cross_entropy: target index " +
                      std::to_string(targets[static_cast<size_t>(i)]) + " out of range [0," +
                      std::to_string(C) + ") at row " + std::to_string(i));
    }
  }
  auto out = new_node<T>({1}, "cross_entropy");
  const auto x = logits.data();
  std::vector<T> probs(static_cast<size_t>(B * C));
  double total = 0.0;
  for (int64_t i = 0; i < B; ++i) {
    const T* rowp = x.data() + i * C;
    T mx = rowp[0];
    for (int64_t c = 1; c < C; ++c) mx = std::max(mx, rowp[c]);
    double z = 0.0;
    for (int64_t c = 0; c < C; ++c) {
      const double e = std::exp(static_cast<double>(rowp[c] - mx));
      probs[static_cast<size_t>(i * C + c)] = static_cast<T>(e);
      z += e;
    }
    const double inv = 1.0 / z;
    for (int64_t c = 0; c < C; ++c) probs[static_cast<size_t>(i * C + c)] *= static_cast<T>(inv);
    total += std::log(z) - static_cast<double>(rowp[targets[static_cast<size_t>(i)]] - mx);
  }
  out->value[0] = static_cast<T>(total / static_cast<double>(B));
  if (!is_finite(out->value[0])) {
    throw DivergenceError("cross_entropy: non-finite loss");
  }
  std::vector<int> tgt(targets.begin(), targets.end());
  connect<T>(
      out,
      [B, C, probs = std::move(probs), tgt = std::move(tgt)](detail::Node<T>& o, GradStore<T>& gs) {
        auto& p = *o.parents[0];
        if (!p.tracked) return;
        const T g = (*gs.find(&o))[0] / static_cast<T>(B);
        auto& gp = gs.buf(&p);
        for (int64_t i = 0; i < B; ++i) {
          for (int64_t c = 0; c < C; ++c) {
            const auto idx = static_cast<size_t>(i * C + c);
            T d = probs[idx];
            if (c == tgt[static_cast<size_t>(i)]) d -= T(1);
            gp[idx] += g * d;
          }
        }
      },
      logits.node_ptr());
  return Tensor<T>::wrap(out);
}

template <class T>
Tensor<T> mse(const Tensor<T>& a, const Tensor<T>& b) {
  check_same_shape("mse", a, b);
  const auto av = a.data();
  const auto bv = b.data();
  auto out = new_node<T>({1}, "mse");
  double total = 0.0;
  for (size_t i = 0; i < av.size(); ++i) {
    const double d = static_cast<double>(av[i]) - static_cast<double>(bv[i]);
    total += d * d;
  }
  out->value[0] = static_cast<T>(total / static_cast<double>(av.size()));
  if (!is_finite(out->value[0])) throw DivergenceError("mse: non-finite loss");
  connect<T>(
      out,
      [](detail::Node<T>& o, GradStore<T>& gs) {
        auto& pa = *o.parents[0];
        auto& pb = *o.parents[1];
        const T g = (*gs.find(&o))[0];
        const T c = g * T(2) / static_cast<T>(pa.value.size());
        std::vector<T>* ga = pa.tracked ? &gs.buf(&pa) : nullptr;
        std::vector<T>* gb = pb.tracked ? &gs.buf(&pb) : nullptr;
        for (size_t i = 0; i < pa.value.size(); ++i) {
          const T d = c * (pa.value[i] - pb.value[i]);
          if (ga) (*ga)[i] += d;
          if (gb) (*gb)[i] -= d;
        }
      },
      a.node_ptr(), b.node_ptr());
  return Tensor<T>::wrap(out);
}

template <class T>
Tensor<T> cosine_loss(const Tensor<T>& a, const Tensor<T>& b) {
  check_same_shape("cosine_loss", a, b);
  if (a.rank() != 1) {
    throw ShapeError("cosine_loss: rank-1 inputs expected, got " + shape_str(a.shape()));
  }
  const auto av = a.data();
  const auto bv = b.data();
  double dot = 0.0, na = 0.0, nb = 0.0;
  for (size_t i = 0; i < av.size(); ++i) {
    dot += static_cast<double>(av[i]) * bv[i];
    na += static_cast<double>(av[i]) * av[i];
    nb += static_cast<double>(bv[i]) * bv[i];
  }
  na = std::sqrt(na) + 1e-12;
  nb = std::sqrt(nb) + 1e-12;
  auto out = new_node<T>({1}, "cosine_loss");
  out->value[0] = static_cast<T>(1.0 - dot / (na * nb));
  if (!is_finite(out->value[0])) throw DivergenceError("cosine_loss: non-finite loss");
  connect<T>(
      out,
      [dot, na, nb](detail::Node<T>& o, GradStore<T>& gs) {
        auto& pa = *o.parents[0];
        auto& pb = *o.parents[1];
        const double g = static_cast<double>((*gs.find(&o))[0]);
        std::vector<T>* ga = pa.tracked ? &gs.buf(&pa) : nullptr;
        std::vector<T>* gb = pb.tracked ? &gs.buf(&pb) : nullptr;
        for (size_t i = 0; i < pa.value.size(); ++i) {
          const double x = pa.value[i], y = pb.value[i];
          if (ga) (*ga)[i] += static_cast<T>(-g * (y / (na * nb) - dot * x / (na * na * na * nb)));
          if (gb) (*gb)[i] += static_cast<T>(-g * (x / (na * nb) - dot * y / (nb * nb * nb * na)));
        }
      },
      a.node_ptr(), b.node_ptr());
  return Tensor<T>::wrap(out);
}

template <class T>
Tensor<T> sum(const Tensor<T>& a) {
  auto out = new_node<T>({1}, "sum");
  double total = 0.0;
  for (T v : a.data()) total += static_cast<double>(v);
  out->value[0] = static_cast<T>(total);
  connect<T>(
      out,
      [](detail::Node<T>& o, GradStore<T>& gs) {
        auto& p = *o.parents[0];
        if (!p.tracked) return;
        const T g = (*gs.find(&o))[0];
        auto& gp = gs.buf(&p);
        for (auto& v : gp) v += g;
      },
      a.node_ptr());
  return Tensor<T>::wrap(out);
}

// ---- structural ops --------------------------------------------------------

template <class T>
Tensor<T> reshape(const Tensor<T>& a, Shape shape) {
  if (shape_numel(shape) != a.numel()) {
    throw ShapeError("reshape: " + shape_str(a.shape()) + " to " + shape_str(shape));
  }
  auto out = new_node<T>(std::move(shape), "reshape");
  std::copy(a.data().begin(), a.data().end(), out->value.begin());
  connect<T>(
      out,
      [](detail::Node<T>& o, GradStore<T>& gs) {
        auto& p = *o.parents[0];
        if (!p.tracked) return;
        const auto& g = *gs.find(&o);
        auto& gp = gs.buf(&p);
        for (size_t i = 0; i < g.size(); ++i) gp[i] += g[i];
      },
      a.node_ptr());
  return Tensor<T>::wrap(out);
}

template <class T>
Tensor<T> row(const Tensor<T>& a, int64_t i) {
  if (a.rank() != 2 || i < 0 || i >= a.dim(0)) {
    throw ShapeError("row: index " + std::to_string(i) + " for " + shape_str(a.shape()));
  }
  const int64_t n = a.dim(1);
  auto out = new_node<T>({n}, "row");
  std::copy_n(a.data().data() + i * n, n, out->value.begin());
  connect<T>(
      out,
      [i, n](detail::Node<T>& o, GradStore<T>& gs) {
        auto& p = *o.parents[0];
        if (!p.tracked) return;
        const auto& g = *gs.find(&o);
        auto& gp = gs.buf(&p);
        for (int64_t c = 0; c < n; ++c) gp[static_cast<size_t>(i * n + c)] += g[static_cast<size_t>(c)];
      },
      a.node_ptr());
  return Tensor<T>::wrap(out);
}

template <class T>
Tensor<T> col_slice(const Tensor<T>& a, int64_t off, int64_t w) {
  if (a.rank() != 2 || off < 0 || w <= 0 || off + w > a.dim(1)) {
    throw ShapeError("col_slice: [" + std::to_string(off) + "," + std::to_string(off + w) +
                     ") for " + shape_str(a.shape()));
  }
  const int64_t m = a.dim(0), n = a.dim(1);
  auto out = new_node<T>({m, w}, "col_slice");
  for (int64_t r = 0; r < m; ++r) {
    std::copy_n(a.data().data() + r * n + off, w, out->value.data() + r * w);
  }
  connect<T>(
      out,
      [off, w, m, n](detail::Node<T>& o, GradStore<T>& gs) {
        auto& p = *o.parents[0];
        if (!p.tracked) return;
        const auto& g = *gs.find(&o);
        auto& gp = gs.buf(&p);
        for (int64_t r = 0; r < m; ++r) {
          for (int64_t c = 0; c < w; ++c) {
            gp[static_cast<size_t>(r * n + off + c)] += g[static_cast<size_t>(r * w + c)];
          }
        }
      },
      a.node_ptr());
  return Tensor<T>::wrap(out);
}

template <class T>
Tensor<T> rows_range(const Tensor<T>& a, int64_t start, int64_t count) {
  if (a.rank() != 2 || start < 0 || count <= 0 || start + count > a.dim(0)) {
    throw ShapeError("rows_range: [" + std::to_string(start) + "," +
                     std::to_string(start + count) + ") for " + shape_str(a.shape()));
  }
  const int64_t n = a.dim(1);
  auto out = new_node<T>({count, n}, "rows_range");
  std::copy_n(a.data().data() + start * n, count * n, out->value.begin());
  connect<T>(
      out,
      [start, count, n](detail::Node<T>& o, GradStore<T>& gs) {
        auto& p = *o.parents[0];
        if (!p.tracked) return;
        const auto& g = *gs.find(&o);
        auto& gp = gs.buf(&p);
        for (int64_t i = 0; i < count * n; ++i) {
          gp[static_cast<size_t>(start * n + i)] += g[static_cast<size_t>(i)];
        }
      },
      a.node_ptr());
  return Tensor<T>::wrap(out);
}

template <class T>
Tensor<T> rows_select(const Tensor<T>& a, std::span<const int> indices) {
  if (a.rank() != 2) throw ShapeError("rows_select: rank-2 input expected");
  if (indices.empty()) throw ShapeError("rows_select: no indices");
  const int64_t m = a.dim(0), n = a.dim(1);
  for (int i : indices) {
    if (i < 0 || i >= m) {
      throw ShapeError("rows_select: index " + std::to_string(i) + " for " +
                       shape_str(a.shape()));
    }
  }
  const int64_t k = static_cast<int64_t>(indices.size());
  auto out = new_node<T>({k, n}, "rows_select");
  for (int64_t r = 0; r < k; ++r) {
    std::copy_n(a.data().data() + static_cast<int64_t>(indices[static_cast<size_t>(r)]) * n, n,
                out->value.data() + r * n);
  }
  std::vector<int> idx(indices.begin(), indices.end());
  connect<T>(
      out,
      [n, idx = std::move(idx)](detail::Node<T>& o, GradStore<T>& gs) {
        auto& p = *o.parents[0];
        if (!p.tracked) return;
        const auto& g = *gs.find(&o);
        auto& gp = gs.buf(&p);
        for (size_t r = 0; r < idx.size(); ++r) {
          for (int64_t c = 0; c < n; ++c) {
            gp[static_cast<size_t>(idx[r] * n + c)] += g[r * static_cast<size_t>(n) + static_cast<size_t>(c)];
          }
        }
      },
      a.node_ptr());
  return Tensor<T>::wrap(out);
}

template <class T>
Tensor<T> concat_cols(std::span<const Tensor<T>> parts) {
  if (parts.empty()) throw ShapeError("concat_cols: no inputs");
  const int64_t m = parts[0].dim(0);
  int64_t total = 0;
  for (const auto& p : parts) {
    if (p.rank() != 2 || p.dim(0) != m) {
      throw ShapeError("concat_cols: row mismatch at " + shape_str(p.shape()));
    }
    total += p.dim(1);
  }
  auto out = new_node<T>({m, total}, "concat_cols");
  int64_t off = 0;
  for (const auto& p : parts) {
    const int64_t w = p.dim(1);
    for (int64_t r = 0; r < m; ++r) {
      std::copy_n(p.data().data() + r * w, w, out->value.data() + r * total + off);
    }
    off += w;
  }
  std::vector<int64_t> widths;
  bool tracked = false;
  for (const auto& p : parts) {
    widths.push_back(p.dim(1));
    tracked = tracked || p.tracked();
  }
  if (tracked) {
    out->tracked = true;
    for (const auto& p : parts) out->parents.push_back(p.node_ptr());
    out->backprop = [m, total, widths](detail::Node<T>& o, GradStore<T>& gs) {
      const auto& g = *gs.find(&o);
      int64_t off2 = 0;
      for (size_t pi = 0; pi < o.parents.size(); ++pi) {
        auto& p = *o.parents[pi];
        const int64_t w = widths[pi];
        if (p.tracked) {
          auto& gp = gs.buf(&p);
          for (int64_t r = 0; r < m; ++r) {
            for (int64_t c = 0; c < w; ++c) {
              gp[static_cast<size_t>(r * w + c)] += g[static_cast<size_t>(r * total + off2 + c)];
            }
          }
        }
        off2 += w;
      }
    };
  }
  return Tensor<T>::wrap(out);
}

template <class T>
Tensor<T> concat(std::span<const Tensor<T>> parts) {
  if (parts.empty()) throw ShapeError("concat: no inputs");
  int64_t total = 0;
  for (const auto& p : parts) {
    if (p.rank() != 1) throw ShapeError("concat: rank-1 inputs expected");
    total += p.dim(0);
  }
  auto out = new_node<T>({total}, "concat");
  int64_t off = 0;
  std::vector<int64_t> sizes;
  bool tracked = false;
  for (const auto& p : parts) {
    std::copy(p.data().begin(), p.data().end(), out->value.begin() + off);
    off += p.dim(0);
    sizes.push_back(p.dim(0));
    tracked = tracked || p.tracked();
  }
  if (tracked) {
    out->tracked = true;
    for (const auto& p : parts) out->parents.push_back(p.node_ptr());
    out->backprop = [sizes](detail::Node<T>& o, GradStore<T>& gs) {
      const auto& g = *gs.find(&o);
      int64_t off2 = 0;
      for (size_t pi = 0; pi < o.parents.size(); ++pi) {
        auto& p = *o.parents[pi];
        if (p.tracked) {
          auto& gp = gs.buf(&p);
          for (int64_t i = 0; i < sizes[pi]; ++i) gp[static_cast<size_t>(i)] += g[static_cast<size_t>(off2 + i)];
        }
        off2 += sizes[pi];
      }
    };
  }
  return Tensor<T>::wrap(out);
}

template <class T>
Tensor<T> add_rowvec(const Tensor<T>& m, const Tensor<T>& v) {
  if (m.rank() != 2 || v.rank() != 1 || m.dim(1) != v.dim(0)) {
    throw ShapeError("add_rowvec: " + shape_str(m.shape()) + " + " + shape_str(v.shape()));
  }
  const int64_t r = m.dim(0), c = m.dim(1);
  auto out = new_node<T>(m.shape(), "add_rowvec");
  const auto mv = m.data();
  const auto vv = v.data();
  for (int64_t i = 0; i < r; ++i) {
    for (int64_t j = 0; j < c; ++j) {
      out->value[static_cast<size_t>(i * c + j)] = mv[static_cast<size_t>(i * c + j)] + vv[static_cast<size_t>(j)];
    }
  }
  connect<T>(
      out,
      [r, c](detail::Node<T>& o, GradStore<T>& gs) {
        auto& pm = *o.parents[0];
        auto& pv = *o.parents[1];
        const auto& g = *gs.find(&o);
        if (pm.tracked) {
          auto& gm = gs.buf(&pm);
          for (size_t i = 0; i < g.size(); ++i) gm[i] += g[i];
        }
        if (pv.tracked) {
          auto& gv = gs.buf(&pv);
          for (int64_t i = 0; i < r; ++i) {
            for (int64_t j = 0; j < c; ++j) gv[static_cast<size_t>(j)] += g[static_cast<size_t>(i * c + j)];
          }
        }
      },
      m.node_ptr(), v.node_ptr());
  return Tensor<T>::wrap(out);
}

template <class T>
Tensor<T> embedding(const Tensor<T>& tok, const Tensor<T>& pos, std::span<const int> ids) {
  if (tok.rank() != 2 || pos.rank() != 2 || tok.dim(1) != pos.dim(1)) {
    throw ShapeError("embedding: tables " + shape_str(tok.shape()) + " / " + shape_str(pos.shape()));
  }
  if (ids.empty()) throw DataError("embedding: empty token sequence");
  const int64_t L = static_cast<int64_t>(ids.size());
  const int64_t d = tok.dim(1);
  if (L > pos.dim(0)) {
    throw DataError("embedding: sequence length " + std::to_string(L) + " exceeds max " +
                    std::to_string(pos.dim(0)));
  }
  for (int id : ids) {
    if (id < 0 || id >= tok.dim(0)) {
      throw DataError("embedding: token id " + std::to_string(id) + " out of range [0," +
                      std::to_string(tok.dim(0)) + ")");
    }
  }
  auto out = new_node<T>({L, d}, "embedding");
  const auto tv = tok.data();
  const auto pv = pos.data();
  for (int64_t i = 0; i < L; ++i) {
    const int64_t tid = ids[static_cast<size_t>(i)];
    for (int64_t j = 0; j < d; ++j) {
      out->value[static_cast<size_t>(i * d + j)] =
          tv[static_cast<size_t>(tid * d + j)] + pv[static_cast<size_t>(i * d + j)];
    }
  }
  std::vector<int> ids_copy(ids.begin(), ids.end());
  connect<T>(
      out,
      [d, ids_copy = std::move(ids_copy)](detail::Node<T>& o, GradStore<T>& gs) {
        auto& ptok = *o.parents[0];
        auto& ppos = *o.parents[1];
        const auto& g = *gs.find(&o);
        if (ptok.tracked) {
          auto& gt = gs.buf(&ptok);
          for (size_t i = 0; i < ids_copy.size(); ++i) {
            const auto tid = static_cast<int64_t>(ids_copy[i]);
            for (int64_t j = 0; j < d; ++j) {
              gt[static_cast<size_t>(tid * d + j)] += g[i * static_cast<size_t>(d) + static_cast<size_t>(j)];
            }
          }
        }
        if (ppos.tracked) {
          auto& gp = gs.buf(&ppos);
          for (size_t i = 0; i < ids_copy.size(); ++i) {
            for (int64_t j = 0; j < d; ++j) {
              gp[i * static_cast<size_t>(d) + static_cast<size_t>(j)] +=
                  g[i * static_cast<size_t>(d) + static_cast<size_t>(j)];
            }
          }
        }
      },
      tok.node_ptr(), pos.node_ptr());
  return Tensor<T>::wrap(out);
}

template <class T>
Tensor<T> dropout(const Tensor<T>& a, double rate, Rng& rng) {
  if (rate < 0.0 || rate >= 1.0) throw ConfigError("dropout: rate must be in [0,1)");
  if (rate == 0.0) return a;
  const T keep_scale = static_cast<T>(1.0 / (1.0 - rate));
  std::vector<uint8_t> keep(a.data().size());
  for (auto& k : keep) k = rng.uniform() >= rate ? 1 : 0;
  auto out = new_node<T>(a.shape(), "dropout");
  const auto av = a.data();
  for (size_t i = 0; i < av.size(); ++i) out->value[i] = keep[i] ? av[i] * keep_scale : T(0);
  connect<T>(
      out,
      [keep = std::move(keep), keep_scale](detail::Node<T>& o, GradStore<T>& gs) {
        auto& p = *o.parents[0];
        if (!p.tracked) return;
        const auto& g = *gs.find(&o);
        auto& gp = gs.buf(&p);
        for (size_t i = 0; i < g.size(); ++i) {
          if (keep[i]) gp[i] += g[i] * keep_scale;
        }
      },
      a.node_ptr());
  return Tensor<T>::wrap(out);
}

template <class T>
Tensor<T> layer_norm(const Tensor<T>& x, const Tensor<T>& gain, const Tensor<T>& bias, double eps) {
  if (x.rank() != 2 || gain.rank() != 1 || bias.rank() != 1 || gain.dim(0) != x.dim(1) ||
      bias.dim(0) != x.dim(1)) {
    throw ShapeError("layer_norm: x " + shape_str(x.shape()) + ", gain " +
                     shape_str(gain.shape()) + ", bias " + shape_str(bias.shape()));
  }
  const int64_t m = x.dim(0), n = x.dim(1);
  auto out = new_node<T>(x.shape(), "layer_norm");
  const auto xv = x.data();
  const auto gv = gain.data();
  const auto bv = bias.data();
  std::vector<T> inv_std(static_cast<size_t>(m));
  std::vector<T> mean(static_cast<size_t>(m));
  for (int64_t r = 0; r < m; ++r) {
    double mu = 0.0;
    for (int64_t c = 0; c < n; ++c) mu += xv[static_cast<size_t>(r * n + c)];
    mu /= static_cast<double>(n);
    double var = 0.0;
    for (int64_t c = 0; c < n; ++c) {
      const double d = static_cast<double>(xv[static_cast<size_t>(r * n + c)]) - mu;
      var += d * d;
    }
    var /= static_cast<double>(n);
    const double inv = 1.0 / std::sqrt(var + eps);
    mean[static_cast<size_t>(r)] = static_cast<T>(mu);
    inv_std[static_cast<size_t>(r)] = static_cast<T>(inv);
    for (int64_t c = 0; c < n; ++c) {
      const auto idx = static_cast<size_t>(r * n + c);
      const T xh = static_cast<T>((xv[idx] - mu) * inv);
      out->value[idx] = gv[static_cast<size_t>(c)] * xh + bv[static_cast<size_t>(c)];
    }
  }
  connect<T>(
      out,
      [m, n, mean = std::move(mean), inv_std = std::move(inv_std)](detail::Node<T>& o,
                                                                   GradStore<T>& gs) {
        auto& px = *o.parents[0];
        auto& pg = *o.parents[1];
        auto& pb = *o.parents[2];
        const auto& g = *gs.find(&o);
        std::vector<T>* gx = px.tracked ? &gs.buf(&px) : nullptr;
        std::vector<T>* gg = pg.tracked ? &gs.buf(&pg) : nullptr;
        std::vector<T>* gb = pb.tracked ? &gs.buf(&pb) : nullptr;
        for (int64_t r = 0; r < m; ++r) {
          const T mu = mean[static_cast<size_t>(r)];
          const T inv = inv_std[static_cast<size_t>(r)];
          // dxh_c = g_c * gain_c; dx = inv*(dxh - mean(dxh) - xh*mean(dxh*xh))
          T s1 = T(0), s2 = T(0);
          for (int64_t c = 0; c < n; ++c) {
            const auto idx = static_cast<size_t>(r * n + c);
            const T xh = (px.value[idx] - mu) * inv;
            const T dxh = g[idx] * pg.value[static_cast<size_t>(c)];
            s1 += dxh;
            s2 += dxh * xh;
            if (gg) (*gg)[static_cast<size_t>(c)] += g[idx] * xh;
            if (gb) (*gb)[static_cast<size_t>(c)] += g[idx];
          }
          if (gx) {
            s1 /= static_cast<T>(n);
            s2 /= static_cast<T>(n);
            for (int64_t c = 0; c < n; ++c) {
              const auto idx = static_cast<size_t>(r * n + c);
              const T xh = (px.value[idx] - mu) * inv;
              const T dxh = g[idx] * pg.value[static_cast<size_t>(c)];
              (*gx)[idx] += inv * (dxh - s1 - xh * s2);
            }
          }
        }
      },
      x.node_ptr(), gain.node_ptr(), bias.node_ptr());
  return Tensor<T>::wrap(out);
}

// ---- gradient checking -----------------------------------------------------

template <class T>
double grad_check(const std::function<Tensor<T>(const Tensor<T>&)>& f, const Tensor<T>& x,
                  double eps) {
  std::vector<T> base(x.data().begin(), x.data().end());
  auto probe = Tensor<T>::from_data(x.shape(), base).set_requires_grad(true);
  Tensor<T> y = f(probe);
  if (y.numel() != 1) throw ShapeError("grad_check: f must return a scalar");
  backward(y);
  std::vector<T> analytic(probe.grad().begin(), probe.grad().end());

  double worst = 0.0;
  for (size_t i = 0; i < base.size(); ++i) {
    auto eval = [&](double delta) {
      std::vector<T> vals = base;
      vals[i] = static_cast<T>(static_cast<double>(vals[i]) + delta);
      return static_cast<double>(f(Tensor<T>::from_data(x.shape(), std::move(vals))).item());
    };
    const double numeric = (eval(eps) - eval(-eps)) / (2.0 * eps);
    const double a = static_cast<double>(analytic[i]);
    const double denom = std::max(1.0, std::abs(a) + std::abs(numeric));
    worst = std::max(worst, std::abs(a - numeric) / denom);
  }
  return worst;
}

// ---- explicit instantiations ------------------------------------------------

#define LASI_INSTANTIATE(T)                                                                       \
  template class Tensor<T>;                                                                       \
  template Graph<T> build_graph(const Tensor<T>&);                                                \
  template void backward(const Tensor<T>&);                                                       \
  template void backward(const Tensor<T>&, GradStore<T>&);                                        \
  template Tensor<T> matmul(const Tensor<T>&, const Tensor<T>&);                                  \
  template Tensor<T> matmul_nt(const Tensor<T>&, const Tensor<T>&);                               \
  template Tensor<T> add(const Tensor<T>&, const Tensor<T>&);                                     \
  template Tensor<T> sub(const Tensor<T>&, const Tensor<T>&);                                     \
  template Tensor<T> mul(const Tensor<T>&, const Tensor<T>&);                                     \
  template Tensor<T> add(const Tensor<T>&, T);                                                    \
  template Tensor<T> sub(const Tensor<T>&, T);                                                    \
  template Tensor<T> scale(const Tensor<T>&, T);                                                  \
  template Tensor<T> tanh(const Tensor<T>&);                                                      \
  template Tensor<T> gelu(const Tensor<T>&);                                                      \
  template Tensor<T> softmax(const Tensor<T>&, int);                                              \
  template Tensor<T> masked_softmax_rows(const Tensor<T>&, const BoolMat&);                       \
  template Tensor<T> cross_entropy(const Tensor<T>&, std::span<const int>);                       \
  template Tensor<T> mse(const Tensor<T>&, const Tensor<T>&);                                     \
  template Tensor<T> cosine_loss(const Tensor<T>&, const Tensor<T>&);                             \
  template Tensor<T> sum(const Tensor<T>&);                                                       \
  template Tensor<T> reshape(const Tensor<T>&, Shape);                                            \
  template Tensor<T> row(const Tensor<T>&, int64_t);                                              \
  template Tensor<T> col_slice(const Tensor<T>&, int64_t, int64_t);                               \
  template Tensor<T> rows_range(const Tensor<T>&, int64_t, int64_t);                              \
  template Tensor<T> rows_select(const Tensor<T>&, std::span<const int>);                         \
  template Tensor<T> concat_cols(std::span<const Tensor<T>>);                                     \
  template Tensor<T> concat(std::span<const Tensor<T>>);                                          \
  template Tensor<T> add_rowvec(const Tensor<T>&, const Tensor<T>&);                              \
  template Tensor<T> embedding(const Tensor<T>&, const Tensor<T>&, std::span<const int>);         \
  template Tensor<T> dropout(const Tensor<T>&, double, Rng&);                                     \
  template Tensor<T> layer_norm(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&, double);    \
  template double grad_check(const std::function<Tensor<T>(const Tensor<T>&)>&, const Tensor<T>&, \
                             double);

LASI_INSTANTIATE(float)
LASI_INSTANTIATE(double)

#undef LASI_INSTANTIATE

}  // namespace lasi
