#include "mspn/eval.hpp"

#include <omp.h>

#include <cstdio>
#include <filesystem>
#include <fstream>

#include "json.hpp"
#include "mspn/errors.hpp"

namespace mspn {

EvalResult evaluate(const std::function<int(const Sample&, std::size_t)>& predict,
                    const Dataset& test, int workers) {
  if (test.empty()) throw ConfigError("evaluate: empty test set");
  const int n = int(test.size());
  std::vector<int> preds(n);
#pragma omp parallel for schedule(static) num_threads(std::max(1, workers))
  for (int i = 0; i < n; ++i) preds[i] = predict(test.samples[i], std::size_t(i));

  EvalResult r;
  r.confusion = ConfusionMatrix(test.class_names);
  for (int i = 0; i < n; ++i) {
    const int truth = test.samples[i].label;
    require(preds[i] >= 0 && preds[i] < r.confusion.n_classes,
            "evaluate: prediction out of range");
    ++r.confusion.at(truth, preds[i]);
  }

  r.accuracy = double(r.confusion.trace()) / double(r.confusion.total());
  r.per_class_accuracy.assign(r.confusion.n_classes, 0.0);
  double acc_sum = 0;
  int present = 0;
  for (int c = 0; c < r.confusion.n_classes; ++c) {
    const int64_t row = r.confusion.row_sum(c);
    if (row > 0) {
      r.per_class_accuracy[c] = double(r.confusion.at(c, c)) / double(row);
      acc_sum += r.per_class_accuracy[c];
      ++present;
    }
  }
  r.avg_error = 1.0 - acc_sum / std::max(1, present);
  return r;
}

void write_reports(const EvalResult& result, const std::string& out_dir) {
  namespace fs = std::filesystem;
  std::error_code ec;
  fs::create_directories(out_dir, ec);
  if (ec) throw IoError("cannot create report directory: " + out_dir);

  const ConfusionMatrix& cm = result.confusion;

  {
    nlohmann::json j;
    j["accuracy"] = result.accuracy;
    j["avg_error"] = result.avg_error;
    for (int c = 0; c < cm.n_classes; ++c)
      j["per_class"][cm.class_names[c]] = result.per_class_accuracy[c];
    std::ofstream out(fs::path(out_dir) / "metrics.json");
    if (!out) throw IoError("cannot write metrics.json under " + out_dir);
    out << j.dump(2) << "\n";
    if (!out) throw IoError("write failed: metrics.json");
  }

  {
    std::ofstream out(fs::path(out_dir) / "confusion.csv");
    if (!out) throw IoError("cannot write confusion.csv under " + out_dir);
    out << "truth\\pred";
    for (const auto& name : cm.class_names) out << "," << name;
    out << "\n";
    for (int t = 0; t < cm.n_classes; ++t) {
      out << cm.class_names[t];
      for (int p = 0; p < cm.n_classes; ++p) out << "," << cm.at(t, p);
      out << "\n";
    }
    if (!out) throw IoError("write failed: confusion.csv");
  }

  {
    std::ofstream out(fs::path(out_dir) / "per_class_accuracy.csv");
    if (!out) throw IoError("cannot write per_class_accuracy.csv under " + out_dir);
    out << "class,accuracy\n";
    char buf[32];
    for (int c = 0; c < cm.n_classes; ++c) {
      std::snprintf(buf, sizeof buf, "%.6f", result.per_class_accuracy[c]);
      out << cm.class_names[c] << "," << buf << "\n";
    }
    if (!out) throw IoError("write failed: per_class_accuracy.csv");
  }
}

}  // namespace mspn
