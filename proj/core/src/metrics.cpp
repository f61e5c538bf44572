#include "lasi/metrics.hpp"

#include <cstdio>

#include "lasi/errors.hpp"

namespace lasi::train {

Metrics Metrics::zero(int n_classes) {
  if (n_classes < 1) throw ConfigError("Metrics: n_classes must be >= 1");
  Metrics m;
  m.n_classes = n_classes;
  m.confusion.assign(static_cast<size_t>(n_classes) * static_cast<size_t>(n_classes), 0);
  return m;
}

Metrics Metrics::from_predictions(std::span<const int> truth, std::span<const int> predicted,
                                  int n_classes) {
  if (truth.size() != predicted.size()) throw DataError("Metrics: size mismatch");
  Metrics m = zero(n_classes);
  for (size_t i = 0; i < truth.size(); ++i) m.at(truth[i], predicted[i]) += 1;
  return m;
}

Metrics Metrics::from_confusion(std::vector<int64_t> confusion, int n_classes) {
  Metrics m = zero(n_classes);
  if (confusion.size() != m.confusion.size()) throw DataError("Metrics: confusion size mismatch");
  m.confusion = std::move(confusion);
  return m;
}

int64_t& Metrics::at(int truth, int pred) {
  if (truth < 0 || truth >= n_classes || pred < 0 || pred >= n_classes) {
    throw DataError("Metrics: label out of range");
  }
  return confusion[static_cast<size_t>(truth) * static_cast<size_t>(n_classes) +
                   static_cast<size_t>(pred)];
}

int64_t Metrics::at(int truth, int pred) const {
  return const_cast<Metrics*>(this)->at(truth, pred);
}

int64_t Metrics::n_examples() const {
  int64_t n = 0;
  for (int64_t v : confusion) n += v;
  return n;
}

double Metrics::accuracy() const {
  const int64_t n = n_examples();
  if (n == 0) return 0;
  int64_t correct = 0;
  for (int c = 0; c < n_classes; ++c) correct += at(c, c);
  return static_cast<double>(correct) / static_cast<double>(n);
}

double Metrics::precision_for(int c) const {
  int64_t predicted = 0;
  for (int t = 0; t < n_classes; ++t) predicted += at(t, c);
  if (predicted == 0) return 0;
  return static_cast<double>(at(c, c)) / static_cast<double>(predicted);
}

double Metrics::recall_for(int c) const {
  int64_t support = 0;
  for (int p = 0; p < n_classes; ++p) support += at(c, p);
  if (support == 0) return 0;
  return static_cast<double>(at(c, c)) / static_cast<double>(support);
}

double Metrics::f1_for(int c) const {
  const double p = precision_for(c), r = recall_for(c);
  if (p + r == 0) return 0;
  return 2 * p * r / (p + r);
}

namespace {

template <class Fn>
double weighted(const Metrics& m, Fn per_class) {
  const int64_t n = m.n_examples();
  if (n == 0) return 0;
  double total = 0;
  for (int c = 0; c < m.n_classes; ++c) {
    int64_t support = 0;
    for (int p = 0; p < m.n_classes; ++p) support += m.at(c, p);
    total += static_cast<double>(support) * per_class(c);
  }
  return total / static_cast<double>(n);
}

}  // namespace

double Metrics::weighted_precision() const {
  return weighted(*this, [&](int c) { return precision_for(c); });
}

double Metrics::weighted_recall() const {
  return weighted(*this, [&](int c) { return recall_for(c); });
}

double Metrics::weighted_f1() const {
  return weighted(*this, [&](int c) { return f1_for(c); });
}

std::string Metrics::summary_line() const {
  char buf[128];
  std::snprintf(buf, sizeof(buf), "acc %.4f  P %.4f  R %.4f  F1 %.4f  (n=%lld)", accuracy(),
                weighted_precision(), weighted_recall(), weighted_f1(),
                static_cast<long long>(n_examples()));
  return buf;
}

}  // namespace lasi::train
