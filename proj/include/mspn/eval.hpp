#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "mspn/data.hpp"

namespace mspn {

// Counts of (ground truth row, prediction column) pairs.
struct ConfusionMatrix {
  int n_classes = 0;
  std::vector<std::string> class_names;
  std::vector<int64_t> counts;

  ConfusionMatrix() = default;
  explicit ConfusionMatrix(std::vector<std::string> names)
      : n_classes(int(names.size())), class_names(std::move(names)),
        counts(std::size_t(n_classes) * n_classes, 0) {}

  int64_t& at(int truth, int pred) { return counts[std::size_t(truth) * n_classes + pred]; }
  int64_t at(int truth, int pred) const {
    return counts[std::size_t(truth) * n_classes + pred];
  }
  int64_t row_sum(int truth) const {
    int64_t s = 0;
    for (int p = 0; p < n_classes; ++p) s += at(truth, p);
    return s;
  }
  int64_t trace() const {
    int64_t s = 0;
    for (int c = 0; c < n_classes; ++c) s += at(c, c);
    return s;
  }
  int64_t total() const {
    int64_t s = 0;
    for (int64_t v : counts) s += v;
    return s;
  }
};

struct EvalResult {
  double accuracy = 0;   // trace / total
  double avg_error = 0;  // 1 - mean per-class accuracy
  std::vector<double> per_class_accuracy;
  ConfusionMatrix confusion;
};

// The predictor maps (sample, index in the set) to a class id. The index is
// passed through so predictors that sample patches can derive a per-sample
// random stream. Predictions run in parallel over samples.
EvalResult evaluate(const std::function<int(const Sample&, std::size_t)>& predict,
                    const Dataset& test, int workers = 1);

// Writes metrics.json, confusion.csv and per_class_accuracy.csv. Output is
// byte-stable for fixed inputs.
void write_reports(const EvalResult& result, const std::string& out_dir);

}  // namespace mspn
