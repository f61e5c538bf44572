#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

namespace lasi::train {

/// Accuracy plus instance-weighted precision/recall/F1 with the confusion
/// matrix that produced them. Row = true label, column = predicted label.
/// Per-class weights are the class instance counts; an undefined per-class
/// precision or recall counts as 0, and per-class F1 is 0 when P and R are
/// both 0.
struct Metrics {
  int n_classes = 0;
  std::vector<int64_t> confusion;

  static Metrics zero(int n_classes);
  static Metrics from_predictions(std::span<const int> truth, std::span<const int> predicted,
                                  int n_classes);
  static Metrics from_confusion(std::vector<int64_t> confusion, int n_classes);

  int64_t& at(int truth, int pred);
  int64_t at(int truth, int pred) const;

  int64_t n_examples() const;
  double accuracy() const;
  double precision_for(int c) const;
  double recall_for(int c) const;
  double f1_for(int c) const;
  double weighted_precision() const;
  double weighted_recall() const;
  double weighted_f1() const;

  std::string summary_line() const;
};

}  // namespace lasi::train
