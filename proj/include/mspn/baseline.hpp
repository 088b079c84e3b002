#pragma once

#include <algorithm>
#include <string>
#include <vector>

#include "mspn/data.hpp"
#include "mspn/errors.hpp"
#include "mspn/graph.hpp"
#include "mspn/optim.hpp"

namespace mspn {

// Per-patch softmax rows for one text image, in patch order.
template <typename T>
struct PatchPrediction {
  std::vector<FlatVector<T>> rows;
};

template <typename T>
PatchPrediction<T> predict_patches(const NetworkGraph<T>& net,
                                   const std::vector<Image>& patches) {
  require(net.kind == GraphKind::kPatchNet, "predict_patches: needs a patch network");
  PatchPrediction<T> pred;
  pred.rows.reserve(patches.size());
  for (const Image& p : patches) {
    require(p.h == 32 && p.w == 32, "predict_patches: patches must be 32x32");
    pred.rows.push_back(predict_probs(net, to_stack<T>(p)));
  }
  return pred;
}

template <typename T>
struct AveragedScore {
  FlatVector<T> score;  // arithmetic mean of the rows
  int label = 0;        // argmax, lowest index on ties
};

// Whole-image score: the mean of the per-patch probability rows.
template <typename T>
AveragedScore<T> average_probs(const PatchPrediction<T>& pred) {
  require(!pred.rows.empty(), "average_probs: no patch predictions");
  const std::size_t dim = pred.rows.front().size();
  AveragedScore<T> out;
  out.score.assign(dim, T(0));
  for (const auto& row : pred.rows) {
    require(row.size() == dim, "average_probs: ragged probability rows");
    for (std::size_t i = 0; i < dim; ++i) out.score[i] += row[i];
  }
  for (T& v : out.score) v /= T(pred.rows.size());
  out.label = int(std::max_element(out.score.begin(), out.score.end()) -
                  out.score.begin());
  return out;
}

// Expands text images into labeled 32x32 patches. Every patch inherits the
// label of the image it was cropped from.
inline Dataset make_patch_dataset(const Dataset& images, uint64_t seed) {
  Dataset out;
  out.class_names = images.class_names;
  for (std::size_t i = 0; i < images.samples.size(); ++i) {
    const Sample& s = images.samples[i];
    Rng rng = Rng(seed).child("patches").child(i);
    std::vector<Image> patches = sample_patches(s.image, rng);
    for (std::size_t j = 0; j < patches.size(); ++j)
      out.samples.push_back(Sample{std::move(patches[j]), s.label,
                                   s.source_id + "#patch" + std::to_string(j)});
  }
  return out;
}

// Trains the patch classifier on pre-sampled patches with the same optimizer
// and schedule as the full network.
template <typename T>
TrainHistory baseline_train(NetworkGraph<T>& net, const Dataset& train_images,
                            const TrainConfig& cfg,
                            const std::function<void(const EpochRecord&)>& on_epoch = {}) {
  require(net.kind == GraphKind::kPatchNet, "baseline_train: needs a patch network");
  const Dataset patches = make_patch_dataset(train_images, cfg.seed);
  SplitResult split = stratified_split(patches, cfg.val_fraction, cfg.seed);
  net.class_names = train_images.class_names;
  return train(net, split.train, split.val, cfg, on_epoch);
}

// Whole-image prediction: sample patches with the evaluation seed, average
// the per-patch probabilities, take the argmax.
template <typename T>
AveragedScore<T> baseline_predict(const NetworkGraph<T>& net, const Image& image,
                                  uint64_t eval_seed, uint64_t sample_index) {
  Rng rng = Rng(eval_seed).child("eval-patches").child(sample_index);
  return average_probs(predict_patches(net, sample_patches(image, rng)));
}

}  // namespace mspn
