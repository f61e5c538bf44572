#include "lasi/train.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <thread>

namespace lasi::train {

void TrainConfig::validate() const {
  if (epochs < 1) throw ConfigError("epochs must be >= 1");
  if (batch_size < 1) throw ConfigError("batch_size must be >= 1");
  if (lr <= 0) throw ConfigError("lr must be > 0");
  if (weight_decay < 0) throw ConfigError("weight_decay must be >= 0");
  if (threads < 1) throw ConfigError("threads must be >= 1");
}

template <class T>
void AdamState<T>::ensure(const nn::ParamList<T>& params) {
  if (!slots.empty()) {
    if (slots.size() != params.size()) throw ConfigError("AdamState: parameter set changed");
    return;
  }
  slots.resize(params.size());
  for (size_t i = 0; i < params.size(); ++i) {
    const auto n = static_cast<size_t>(params[i].second.numel());
    slots[i].m.assign(n, T(0));
    slots[i].v.assign(n, T(0));
  }
}

template <class T>
void adam_step(nn::ParamList<T>& params, AdamState<T>& state, const TrainConfig& cfg) {
  state.ensure(params);
  ++state.step;
  const T bc1 = T(1) - static_cast<T>(std::pow(cfg.beta1, static_cast<double>(state.step)));
  const T bc2 = T(1) - static_cast<T>(std::pow(cfg.beta2, static_cast<double>(state.step)));
  const T b1 = static_cast<T>(cfg.beta1), b2 = static_cast<T>(cfg.beta2);
  const T lr = static_cast<T>(cfg.lr), eps = static_cast<T>(cfg.adam_eps);
  const T decay = static_cast<T>(cfg.lr * cfg.weight_decay);

  for (size_t p = 0; p < params.size(); ++p) {
    auto& tensor = params[p].second;
    if (!tensor.has_grad()) continue;
    const auto g = tensor.grad();
    for (T v : g) {
      if (!std::isfinite(static_cast<double>(v))) {
        throw DivergenceError("adam_step: non-finite gradient in parameter " + params[p].first);
      }
    }
    auto& mom = state.slots[p];
    auto w = tensor.mutable_data();
    for (size_t i = 0; i < w.size(); ++i) {
      mom.m[i] = b1 * mom.m[i] + (T(1) - b1) * g[i];
      mom.v[i] = b2 * mom.v[i] + (T(1) - b2) * g[i] * g[i];
      if (decay != T(0)) w[i] -= decay * w[i];
      const T mhat = mom.m[i] / bc1;
      const T vhat = mom.v[i] / bc2;
      w[i] -= lr * mhat / (std::sqrt(vhat) + eps);
    }
  }
}

template struct AdamState<float>;
template struct AdamState<double>;
template void adam_step(nn::ParamList<float>&, AdamState<float>&, const TrainConfig&);
template void adam_step(nn::ParamList<double>&, AdamState<double>&, const TrainConfig&);

// ---- batch machinery ---------------------------------------------------------

namespace {

/// Contiguous index ranges across a fixed worker count; exceptions are
/// rethrown in worker order so failures are deterministic.
void parallel_ranges(int n, int workers,
                     const std::function<void(int w, int begin, int end)>& body) {
  if (workers <= 1 || n <= 1) {
    body(0, 0, n);
    return;
  }
  const int w_count = std::min(workers, n);
  std::vector<std::exception_ptr> errors(static_cast<size_t>(w_count));
  std::vector<std::thread> threads;
  for (int w = 0; w < w_count; ++w) {
    const int begin = static_cast<int>(static_cast<int64_t>(n) * w / w_count);
    const int end = static_cast<int>(static_cast<int64_t>(n) * (w + 1) / w_count);
    threads.emplace_back([&, w, begin, end] {
      try {
        body(w, begin, end);
      } catch (...) {
        errors[static_cast<size_t>(w)] = std::current_exception();
      }
    });
  }
  for (auto& t : threads) t.join();
  for (auto& e : errors) {
    if (e) std::rethrow_exception(e);
  }
}

}  // namespace

BatchStats run_batch(nn::ParamList<float>& params, std::span<const int> indices,
                     const BatchItemFn& fn, uint64_t seed_base, int threads) {
  const int n = static_cast<int>(indices.size());
  if (n == 0) throw DataError("run_batch: empty batch");
  for (auto& [name, t] : params) t.zero_grad();

  const int w_count = std::max(1, std::min(threads, n));
  std::vector<std::vector<std::vector<float>>> acc(static_cast<size_t>(w_count));
  std::vector<BatchStats> stats(static_cast<size_t>(w_count));

  parallel_ranges(n, w_count, [&](int w, int begin, int end) {
    auto& mine = acc[static_cast<size_t>(w)];
    mine.resize(params.size());
    for (size_t p = 0; p < params.size(); ++p) {
      mine[p].assign(static_cast<size_t>(params[p].second.numel()), 0.0f);
    }
    auto& st = stats[static_cast<size_t>(w)];
    for (int i = begin; i < end; ++i) {
      const int idx = indices[static_cast<size_t>(i)];
      Rng rng(Rng::hash_combine(seed_base, "ex", static_cast<uint64_t>(idx)));
      BatchItemOut out = fn(idx, rng);
      GradStore<float> store;
      backward(out.loss, store);
      for (size_t p = 0; p < params.size(); ++p) {
        if (const auto* g = store.find(params[p].second.node())) {
          auto& dst = mine[p];
          for (size_t j = 0; j < dst.size(); ++j) dst[j] += (*g)[j];
        }
      }
      st.loss += static_cast<double>(out.loss.item());
      st.loss_cls += out.loss_cls;
      st.loss_aux += out.loss_aux;
      st.has_aux = st.has_aux || out.has_aux;
      ++st.count;
    }
  });

  // fixed reduction order: workers in index order, then the batch-mean scale
  for (int w = 0; w < w_count; ++w) {
    for (size_t p = 0; p < params.size(); ++p) {
      if (!acc[static_cast<size_t>(w)][p].empty()) {
        params[p].second.accumulate_grad(acc[static_cast<size_t>(w)][p]);
      }
    }
  }
  const float inv_n = 1.0f / static_cast<float>(n);
  for (auto& [name, t] : params) {
    for (auto& v : t.grad_mut()) v *= inv_n;
  }

  BatchStats total;
  for (const auto& st : stats) {
    total.loss += st.loss;
    total.loss_cls += st.loss_cls;
    total.loss_aux += st.loss_aux;
    total.has_aux = total.has_aux || st.has_aux;
    total.count += st.count;
  }
  return total;
}

// ---- fine-tuning loop ----------------------------------------------------------

TrainResult train_model(StitchedModel<float>& model, std::span<const data::LasiExample> train_ex,
                        std::span<const data::LasiExample> val_ex, const TrainConfig& cfg) {
  cfg.validate();
  if (train_ex.empty() || val_ex.empty()) throw DataError("train_model: empty split");

  nn::ParamList<float> trainable = model.trainable_params();
  nn::ParamList<float> all = model.all_params();
  AdamState<float> state;

  TrainResult result;
  std::vector<std::vector<float>> best_snapshot;
  double best_acc = -1;

  for (int epoch = 1; epoch <= cfg.epochs; ++epoch) {
    const auto t0 = std::chrono::steady_clock::now();
    std::vector<int> order(train_ex.size());
    for (size_t i = 0; i < order.size(); ++i) order[i] = static_cast<int>(i);
    Rng shuffle_rng(Rng::hash_combine(cfg.seed, "shuffle", static_cast<uint64_t>(epoch)));
    shuffle_rng.shuffle(order);

    const uint64_t epoch_seed = Rng::hash_combine(cfg.seed, "epoch", static_cast<uint64_t>(epoch));
    double ep_loss = 0, ep_cls = 0, ep_aux = 0;
    bool has_aux = false;
    int seen = 0;
    int step = 0;
    for (size_t start = 0; start < order.size(); start += static_cast<size_t>(cfg.batch_size)) {
      const size_t end = std::min(order.size(), start + static_cast<size_t>(cfg.batch_size));
      std::span<const int> batch(order.data() + start, end - start);
      ++step;
      BatchStats stats;
      try {
        stats = run_batch(
            trainable, batch,
            [&](int idx, Rng& rng) {
              auto out = model.forward_train(train_ex[static_cast<size_t>(idx)], rng);
              return BatchItemOut{out.loss_total, out.loss_cls, out.loss_aux, out.has_aux};
            },
            epoch_seed, cfg.threads);
        adam_step(trainable, state, cfg);
      } catch (const DivergenceError& e) {
        throw DivergenceError("epoch " + std::to_string(epoch) + " step " + std::to_string(step) +
                              ": " + e.what());
      }
      ep_loss += stats.loss;
      ep_cls += stats.loss_cls;
      ep_aux += stats.loss_aux;
      has_aux = has_aux || stats.has_aux;
      seen += stats.count;
    }

    Metrics val = evaluate(model, val_ex);
    EpochRecord rec;
    rec.epoch = epoch;
    rec.train_loss = ep_loss / seen;
    rec.loss_cls = ep_cls / seen;
    rec.loss_aux = has_aux ? ep_aux / seen : 0;
    rec.has_aux = has_aux;
    rec.val_accuracy = val.accuracy();
    rec.wall_seconds =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    result.log.push_back(rec);

    if (rec.val_accuracy > best_acc) {
      best_acc = rec.val_accuracy;
      result.best_epoch = epoch;
      best_snapshot.clear();
      for (auto& [name, t] : all) {
        best_snapshot.emplace_back(t.data().begin(), t.data().end());
      }
    }
  }

  result.best_val_accuracy = best_acc;
  for (size_t i = 0; i < all.size(); ++i) {
    auto dst = all[i].second.mutable_data();
    std::copy(best_snapshot[i].begin(), best_snapshot[i].end(), dst.begin());
  }
  return result;
}

// ---- evaluation ------------------------------------------------------------------

std::vector<int> predict_all(const StitchedModel<float>& model,
                             std::span<const data::LasiExample> examples,
                             const std::optional<data::PerturbationSpec>& perturbation) {
  if (examples.empty()) throw DataError("evaluate: empty example set");
  std::vector<int> preds(examples.size());
  for (size_t i = 0; i < examples.size(); ++i) {
    const data::LasiExample* ex = &examples[i];
    data::LasiExample tmp;
    if (perturbation) {
      tmp = data::apply_perturbation(examples[i], *perturbation, *model.vocab);
      ex = &tmp;
    }
    Tensor<float> logits = model.eval_logits(*ex);
    preds[i] = lm::predict<float>(logits.data());
  }
  return preds;
}

Metrics evaluate(const StitchedModel<float>& model, std::span<const data::LasiExample> examples,
                 const std::optional<data::PerturbationSpec>& perturbation) {
  const auto preds = predict_all(model, examples, perturbation);
  Metrics m = Metrics::zero(static_cast<int>(model.enc_spec.n_labels));
  for (size_t i = 0; i < examples.size(); ++i) m.at(examples[i].label, preds[i]) += 1;
  return m;
}

// ---- feature-based baseline ---------------------------------------------------

namespace {

Tensor<float> extract_features(const lm::EncoderModel<float>& encoder,
                               std::span<const data::LasiExample> examples,
                               std::vector<int>& labels) {
  if (examples.empty()) throw DataError("feature_based_fit: empty example set");
  const auto n_ctx = examples[0].ctx_enc.size();
  const int64_t width = static_cast<int64_t>(n_ctx) * encoder.spec.block.d_model;
  std::vector<float> flat;
  flat.reserve(examples.size() * static_cast<size_t>(width));
  labels.clear();
  for (const auto& ex : examples) {
    for (const auto& ids : ex.ctx_enc) {
      auto pooled = encoder.encode(ids).pooled.vector;
      flat.insert(flat.end(), pooled.data().begin(), pooled.data().end());
    }
    labels.push_back(ex.label);
  }
  return Tensor<float>::from_data({static_cast<int64_t>(examples.size()), width},
                                  std::move(flat));
}

}  // namespace

FeatureBasedResult feature_based_fit(const lm::EncoderModel<float>& frozen_encoder,
                                     std::span<const data::LasiExample> train_ex,
                                     std::span<const data::LasiExample> test_ex,
                                     const TrainConfig& cfg) {
  std::vector<int> train_labels, test_labels;
  Tensor<float> x_train = extract_features(frozen_encoder, train_ex, train_labels);
  Tensor<float> x_test = extract_features(frozen_encoder, test_ex, test_labels);
  const int64_t width = x_train.dim(1);
  const int64_t labels = frozen_encoder.spec.n_labels;

  // convex softmax fit; zero init keeps it deterministic without an rng
  FeatureBasedResult result;
  result.weight = Tensor<float>::zeros({width, labels}).set_requires_grad(true);
  result.bias = Tensor<float>::zeros({labels}).set_requires_grad(true);
  nn::ParamList<float> params{{"weight", result.weight}, {"bias", result.bias}};
  TrainConfig head_cfg = cfg;
  head_cfg.lr = 0.1;
  head_cfg.weight_decay = 0.0;
  AdamState<float> state;
  constexpr int kSteps = 300;
  for (int it = 0; it < kSteps; ++it) {
    for (auto& [name, t] : params) t.zero_grad();
    Tensor<float> logits = add_rowvec(matmul(x_train, result.weight), result.bias);
    Tensor<float> loss = cross_entropy(logits, train_labels);
    backward(loss);
    adam_step(params, state, head_cfg);
  }

  auto accuracy_of = [&](const Tensor<float>& x, const std::vector<int>& y, Metrics* out) {
    Tensor<float> logits = add_rowvec(matmul(x, result.weight), result.bias);
    Metrics m = Metrics::zero(static_cast<int>(labels));
    const auto v = logits.data();
    for (size_t i = 0; i < y.size(); ++i) {
      const auto row = v.subspan(i * static_cast<size_t>(labels), static_cast<size_t>(labels));
      m.at(y[i], lm::predict<float>(row)) += 1;
    }
    if (out) *out = m;
    return m.accuracy();
  };
  result.train_accuracy = accuracy_of(x_train, train_labels, nullptr);
  accuracy_of(x_test, test_labels, &result.test_metrics);
  return result;
}

// ---- pretraining loop -----------------------------------------------------------

PretrainResult pretrain_loop(nn::ParamList<float>& params, int n_examples, const BatchItemFn& fn,
                             const TrainConfig& cfg) {
  cfg.validate();
  if (n_examples <= 0) throw DataError("pretrain_loop: no examples");
  AdamState<float> state;
  PretrainResult result;
  for (int epoch = 1; epoch <= cfg.epochs; ++epoch) {
    std::vector<int> order(static_cast<size_t>(n_examples));
    for (size_t i = 0; i < order.size(); ++i) order[i] = static_cast<int>(i);
    Rng shuffle_rng(Rng::hash_combine(cfg.seed, "pre-shuffle", static_cast<uint64_t>(epoch)));
    shuffle_rng.shuffle(order);
    const uint64_t epoch_seed =
        Rng::hash_combine(cfg.seed, "pre-epoch", static_cast<uint64_t>(epoch));
    double ep_loss = 0;
    int seen = 0, step = 0;
    for (size_t start = 0; start < order.size(); start += static_cast<size_t>(cfg.batch_size)) {
      const size_t end = std::min(order.size(), start + static_cast<size_t>(cfg.batch_size));
      std::span<const int> batch(order.data() + start, end - start);
      ++step;
      try {
        BatchStats stats = run_batch(params, batch, fn, epoch_seed, cfg.threads);
        adam_step(params, state, cfg);
        ep_loss += stats.loss;
        seen += stats.count;
      } catch (const DivergenceError& e) {
        throw DivergenceError("pretrain epoch " + std::to_string(epoch) + " step " +
                              std::to_string(step) + ": " + e.what());
      }
    }
    result.epoch_losses.push_back(ep_loss / seen);
  }
  return result;
}

}  // namespace lasi::train
