#pragma once

#include <cstdint>
#include <functional>
#include <memory>
#include <span>
#include <string>
#include <unordered_map>
#include <vector>

#include "lasi/errors.hpp"
#include "lasi/rng.hpp"

namespace lasi {

using Shape = std::vector<int64_t>;

std::string shape_str(const Shape& s);
int64_t shape_numel(const Shape& s);

/// Dense boolean matrix used for attention masks. Entry true = permitted.
class BoolMat {
 public:
  BoolMat() = default;
  BoolMat(int64_t rows, int64_t cols, bool fill = true)
      : rows_(rows), cols_(cols), v_(static_cast<size_t>(rows * cols), fill ? 1 : 0) {}

  int64_t rows() const { return rows_; }
  int64_t cols() const { return cols_; }
  bool at(int64_t r, int64_t c) const { return v_[static_cast<size_t>(r * cols_ + c)] != 0; }
  void set(int64_t r, int64_t c, bool b) { v_[static_cast<size_t>(r * cols_ + c)] = b ? 1 : 0; }

 private:
  int64_t rows_ = 0, cols_ = 0;
  std::vector<uint8_t> v_;
};

template <class T>
class GradStore;

namespace detail {

/// One recorded differentiable operation (or a leaf value). Nodes form the
/// define-by-run graph; they are created fresh on every forward pass.
template <class T>
struct Node {
  Shape shape;
  std::vector<T> value;
  std::vector<T> grad;  // empty until backward() populates it
  bool requires_grad = false;
  bool tracked = false;
  const char* op = "leaf";
  std::vector<std::shared_ptr<Node>> parents;
  std::function<void(Node&, GradStore<T>&)> backprop;

  int64_t numel() const { return static_cast<int64_t>(value.size()); }
};

}  // namespace detail

/// Scratch gradient buffers keyed by node, used during one backward sweep and
/// by the trainer's per-worker accumulation.
template <class T>
class GradStore {
 public:
  std::vector<T>& buf(detail::Node<T>* n) {
    auto it = map_.find(n);
    if (it == map_.end()) {
      it = map_.emplace(n, std::vector<T>(static_cast<size_t>(n->numel()), T(0))).first;
    }
    return it->second;
  }

  const std::vector<T>* find(detail::Node<T>* n) const {
    auto it = map_.find(n);
    return it == map_.end() ? nullptr : &it->second;
  }

  void clear() { map_.clear(); }

 private:
  std::unordered_map<detail::Node<T>*, std::vector<T>> map_;
};

/// Dense n-dimensional value array with optional gradient tracking.
/// Row-major storage; no views; broadcasting limited to a single leading
/// batch extent in matmul. Values are immutable after construction except
/// for grad population during backward and explicit optimizer updates.
template <class T>
class Tensor {
 public:
  Tensor() = default;

  static Tensor zeros(Shape shape);
  static Tensor full(Shape shape, T v);
  static Tensor from_data(Shape shape, std::vector<T> data);
  static Tensor scalar(T v) { return from_data({1}, {v}); }
  /// Values drawn i.i.d. from normal(0, stddev).
  static Tensor randn(Shape shape, Rng& rng, double stddev);

  bool defined() const { return n_ != nullptr; }
  const Shape& shape() const { return n_->shape; }
  int rank() const { return static_cast<int>(n_->shape.size()); }
  int64_t dim(int i) const { return n_->shape[static_cast<size_t>(i)]; }
  int64_t numel() const { return n_->numel(); }

  std::span<const T> data() const { return n_->value; }
  std::span<T> mutable_data() { return n_->value; }

  T item() const {
    if (numel() != 1) throw ShapeError("item() on non-scalar tensor " + shape_str(shape()));
    return n_->value[0];
  }

  Tensor& set_requires_grad(bool b) {
    n_->requires_grad = b;
    n_->tracked = b || !n_->parents.empty();
    return *this;
  }
  bool requires_grad() const { return n_->requires_grad; }
  bool tracked() const { return n_->tracked; }

  bool has_grad() const { return !n_->grad.empty(); }
  std::span<const T> grad() const { return n_->grad; }
  std::span<T> grad_mut() { return n_->grad; }
  void zero_grad() { n_->grad.assign(n_->value.size(), T(0)); }
  void drop_grad() { n_->grad.clear(); }
  void accumulate_grad(std::span<const T> g);

  detail::Node<T>* node() const { return n_.get(); }
  std::shared_ptr<detail::Node<T>> node_ptr() const { return n_; }

  static Tensor wrap(std::shared_ptr<detail::Node<T>> n) {
    Tensor t;
    t.n_ = std::move(n);
    return t;
  }

 private:
  std::shared_ptr<detail::Node<T>> n_;
};

/// Topologically ordered record of the operations reaching a root: every node
/// appears after all nodes producing its inputs.
template <class T>
struct Graph {
  std::vector<detail::Node<T>*> order;
};

template <class T>
Graph<T> build_graph(const Tensor<T>& root);

/// Populates .grad on every tracked ancestor of a scalar loss. Gradients from
/// multiple uses of a tensor accumulate; each node's grad field receives
/// exactly one += per call.
template <class T>
void backward(const Tensor<T>& loss);

/// Same sweep, but gradients stay in `store` (used by parallel training
/// workers; node .grad fields are untouched).
template <class T>
void backward(const Tensor<T>& loss, GradStore<T>& store);

// ---- differentiable operations -------------------------------------------

/// Matrix product. Rank-2 x rank-2, or rank-3 x rank-3 with an identical
/// leading batch extent on both sides.
template <class T>
Tensor<T> matmul(const Tensor<T>& a, const Tensor<T>& b);

/// a . b^T for rank-2 inputs (attention scores).
template <class T>
Tensor<T> matmul_nt(const Tensor<T>& a, const Tensor<T>& b);

template <class T>
Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b);
template <class T>
Tensor<T> sub(const Tensor<T>& a, const Tensor<T>& b);
template <class T>
Tensor<T> mul(const Tensor<T>& a, const Tensor<T>& b);
template <class T>
Tensor<T> add(const Tensor<T>& a, T s);
template <class T>
Tensor<T> sub(const Tensor<T>& a, T s);
template <class T>
Tensor<T> scale(const Tensor<T>& a, T s);
template <class T>
Tensor<T> tanh(const Tensor<T>& a);
template <class T>
Tensor<T> gelu(const Tensor<T>& a);

/// Softmax along `axis` with max-subtraction for stability.
template <class T>
Tensor<T> softmax(const Tensor<T>& t, int axis);

/// Row-wise softmax over permitted entries only; masked entries are exactly
/// zero in the output. A fully-masked row is an error.
template <class T>
Tensor<T> masked_softmax_rows(const Tensor<T>& scores, const BoolMat& allowed);

/// Mean over the batch of -log softmax(logits)[target].
template <class T>
Tensor<T> cross_entropy(const Tensor<T>& logits, std::span<const int> targets);

/// Mean squared difference.
template <class T>
Tensor<T> mse(const Tensor<T>& a, const Tensor<T>& b);

/// 1 - cos(a, b) for rank-1 inputs.
template <class T>
Tensor<T> cosine_loss(const Tensor<T>& a, const Tensor<T>& b);

template <class T>
Tensor<T> sum(const Tensor<T>& a);

template <class T>
Tensor<T> reshape(const Tensor<T>& a, Shape shape);

/// Select row i of a rank-2 tensor -> rank-1.
template <class T>
Tensor<T> row(const Tensor<T>& a, int64_t i);

/// Columns [off, off+w) of a rank-2 tensor.
template <class T>
Tensor<T> col_slice(const Tensor<T>& a, int64_t off, int64_t w);

/// Rows [start, start+count) of a rank-2 tensor.
template <class T>
Tensor<T> rows_range(const Tensor<T>& a, int64_t start, int64_t count);

/// Gather the given rows of a rank-2 tensor.
template <class T>
Tensor<T> rows_select(const Tensor<T>& a, std::span<const int> indices);

/// Concatenate rank-2 tensors with equal row counts along columns.
template <class T>
Tensor<T> concat_cols(std::span<const Tensor<T>> parts);

/// Concatenate rank-1 tensors.
template <class T>
Tensor<T> concat(std::span<const Tensor<T>> parts);

/// m + v broadcast over rows (bias add).
template <class T>
Tensor<T> add_rowvec(const Tensor<T>& m, const Tensor<T>& v);

/// Token + learned absolute position embedding lookup: out[i] =
/// tok[ids[i]] + pos[i]. Gradients scatter into the used rows only.
template <class T>
Tensor<T> embedding(const Tensor<T>& tok, const Tensor<T>& pos, std::span<const int> ids);

/// Inverted dropout (train-time only; callers skip it in eval mode).
template <class T>
Tensor<T> dropout(const Tensor<T>& a, double rate, Rng& rng);

/// Row-wise layer normalization with learned gain and shift.
template <class T>
Tensor<T> layer_norm(const Tensor<T>& x, const Tensor<T>& gain, const Tensor<T>& bias,
                     double eps = 1e-5);

/// Compares the backward gradient of a scalar-valued function against central
/// finite differences; returns the max relative error over coordinates.
template <class T>
double grad_check(const std::function<Tensor<T>(const Tensor<T>&)>& f, const Tensor<T>& x,
                  double eps);

}  // namespace lasi
