#pragma once

#include <omp.h>

#include <algorithm>
#include <charconv>
#include <cmath>
#include <functional>
#include <limits>
#include <set>
#include <span>
#include <string>
#include <vector>

#include "mspn/data.hpp"
#include "mspn/errors.hpp"
#include "mspn/graph.hpp"
#include "mspn/rng.hpp"

namespace mspn {

struct TrainConfig {
  double initial_lr = 0.01;
  double momentum = 0.9;
  double lr_decay_factor = 0.1;
  double lr_floor = 1e-5;
  int batch_size = 64;
  int plateau_patience = 3;  // epochs without val improvement before decay
  int max_epochs = 500;
  double val_fraction = 0.1;  // used by callers that split off validation
  uint64_t seed = 1;
  int workers = 1;

  void validate() const {
    if (!(initial_lr > 0)) throw ConfigError("initial_lr must be positive");
    if (momentum < 0 || momentum >= 1) throw ConfigError("momentum must lie in [0, 1)");
    if (!(lr_decay_factor > 0 && lr_decay_factor < 1))
      throw ConfigError("lr_decay_factor must lie in (0, 1)");
    if (!(lr_floor > 0)) throw ConfigError("lr_floor must be positive");
    if (batch_size < 1) throw ConfigError("batch_size must be >= 1");
    if (plateau_patience < 1) throw ConfigError("plateau_patience must be >= 1");
    if (max_epochs < 0) throw ConfigError("max_epochs must be >= 0");
    if (workers < 1) throw ConfigError("workers must be >= 1");
  }
};

// Plateau bookkeeping. The learning rate is always derived from the decay
// count, never updated multiplicatively, so after k decays it is exactly
// initial_lr * factor^k.
struct ScheduleState {
  double initial_lr = 0.01;
  double decay_factor = 0.1;
  double lr_floor = 1e-5;
  int patience = 3;

  double best_val_error = std::numeric_limits<double>::infinity();
  int epochs_since_improvement = 0;
  int decay_count = 0;

  static ScheduleState from(const TrainConfig& cfg) {
    return {cfg.initial_lr, cfg.lr_decay_factor, cfg.lr_floor, cfg.plateau_patience,
            std::numeric_limits<double>::infinity(), 0, 0};
  }

  double lr() const { return initial_lr * std::pow(decay_factor, decay_count); }
};

enum class ScheduleAction { kContinue, kDecayed, kTerminate };

// Strict improvement resets the patience window; exhausting it decays the
// rate; training stops once the rate falls below the floor. The floor
// comparison carries a relative slack of 1e-9 so a rate that lands on the
// floor up to rounding still counts as at the floor, not below it.
inline ScheduleAction schedule_update(ScheduleState& s, double val_error) {
  require(val_error >= 0, "schedule_update: negative validation error");
  if (val_error < s.best_val_error) {
    s.best_val_error = val_error;
    s.epochs_since_improvement = 0;
    return ScheduleAction::kContinue;
  }
  if (++s.epochs_since_improvement < s.patience) return ScheduleAction::kContinue;
  s.epochs_since_improvement = 0;
  ++s.decay_count;
  if (s.lr() < s.lr_floor * (1.0 - 1e-9)) return ScheduleAction::kTerminate;
  return ScheduleAction::kDecayed;
}

// Classical momentum: v <- momentum*v - lr*g; w <- w + v.
template <typename T>
void sgd_step(std::span<T> params, std::span<const T> grads, std::span<T> velocity, T lr,
              T momentum) {
  require(params.size() == grads.size() && params.size() == velocity.size(),
          "sgd_step: size mismatch");
  for (std::size_t i = 0; i < params.size(); ++i) {
    velocity[i] = momentum * velocity[i] - lr * grads[i];
    params[i] += velocity[i];
  }
}

struct EpochRecord {
  int epoch = 0;
  double train_loss = 0;
  double val_error = 0;
  double lr = 0;
};

struct TrainHistory {
  std::vector<EpochRecord> epochs;
  bool lr_floor_reached = false;
  int best_epoch = -1;
  double best_val_error = std::numeric_limits<double>::infinity();
};

namespace optim_detail {

inline void append_double(std::string& out, double v) {
  char buf[32];
  auto [p, ec] = std::to_chars(buf, buf + sizeof buf, v);
  (void)ec;
  out.append(buf, p);
}

}  // namespace optim_detail

inline std::string epoch_record_jsonl(const EpochRecord& r) {
  std::string s = "{\"epoch\":" + std::to_string(r.epoch) + ",\"train_loss\":";
  optim_detail::append_double(s, r.train_loss);
  s += ",\"val_error\":";
  optim_detail::append_double(s, r.val_error);
  s += ",\"lr\":";
  optim_detail::append_double(s, r.lr);
  s += "}";
  return s;
}

template <typename T>
int predict_label(const NetworkGraph<T>& g, const Sample& s) {
  ForwardTrace<T> trace;
  const FlatVector<T>& logits = forward(g, to_stack<T>(s.image), trace);
  return int(std::max_element(logits.begin(), logits.end()) - logits.begin());
}

// Fraction of samples misclassified. Parallel over samples; the tally is an
// integer sum, so the result does not depend on the thread count.
template <typename T>
double error_rate(const NetworkGraph<T>& g, const Dataset& ds, int workers) {
  require(!ds.empty(), "error_rate: empty dataset");
  const int n = int(ds.size());
  long correct = 0;
#pragma omp parallel for schedule(static) num_threads(workers) reduction(+ : correct)
  for (int i = 0; i < n; ++i)
    if (predict_label(g, ds.samples[i]) == ds.samples[i].label) ++correct;
  return 1.0 - double(correct) / n;
}

namespace optim_detail {

template <typename T>
struct ParamSnapshot {
  std::vector<std::vector<T>> weights, bias;
};

template <typename T>
ParamSnapshot<T> snapshot(const NetworkGraph<T>& g) {
  ParamSnapshot<T> s;
  for (int i : g.parametric_nodes()) {
    auto [w, b] = param_vectors(g.nodes[i]);
    s.weights.push_back(*w);
    s.bias.push_back(*b);
  }
  return s;
}

template <typename T>
void restore(NetworkGraph<T>& g, const ParamSnapshot<T>& s) {
  std::size_t k = 0;
  for (int i : g.parametric_nodes()) {
    auto [w, b] = param_vectors(g.nodes[i]);
    *w = s.weights[k];
    *b = s.bias[k];
    ++k;
  }
}

}  // namespace optim_detail

// SGD with momentum over per-sample forward/backward passes. Minibatch
// gradients are the mean over the batch. Samples inside a batch are split
// into `workers` fixed blocks; each block accumulates its own gradient
// buffer and the buffers are combined in block order, so a given worker
// count always reproduces the same bits.
template <typename T>
TrainHistory train(NetworkGraph<T>& graph, const Dataset& train_set,
                   const Dataset& val_set, const TrainConfig& cfg,
                   const std::function<void(const EpochRecord&)>& on_epoch = {}) {
  cfg.validate();
  if (train_set.empty()) throw ConfigError("train: empty training split");
  if (val_set.empty()) throw ConfigError("train: empty validation split");
  {
    std::set<std::string> ids;
    for (const auto& s : train_set.samples) ids.insert(s.source_id);
    for (const auto& s : val_set.samples)
      if (ids.count(s.source_id))
        throw ConfigError("train: validation sample also in training split: " +
                          s.source_id);
  }

  TrainHistory history;
  if (cfg.max_epochs == 0) return history;

  const int n = int(train_set.size());
  const int workers = std::max(1, std::min(cfg.workers, n));
  ScheduleState sched = ScheduleState::from(cfg);
  Rng shuffle_rng = Rng(cfg.seed).child("epoch-shuffle");

  const std::vector<int> param_nodes = graph.parametric_nodes();
  Gradients<T> velocity = Gradients<T>::like(graph);
  Gradients<T> batch_grad = Gradients<T>::like(graph);
  std::vector<Gradients<T>> block_grad(workers, Gradients<T>::like(graph));

  optim_detail::ParamSnapshot<T> best = optim_detail::snapshot(graph);

  std::vector<int> order(n);
  for (int i = 0; i < n; ++i) order[i] = i;

  for (int epoch = 1; epoch <= cfg.max_epochs; ++epoch) {
    const double lr = sched.lr();
    for (int i = n - 1; i > 0; --i)
      std::swap(order[i], order[shuffle_rng.uniform_int(0, i)]);

    double epoch_loss = 0;
    for (int start = 0; start < n; start += cfg.batch_size) {
      const int bsize = std::min(cfg.batch_size, n - start);
      const int nblocks = std::min(workers, bsize);
      std::vector<double> block_loss(nblocks, 0.0);

#pragma omp parallel for schedule(static) num_threads(workers)
      for (int b = 0; b < nblocks; ++b) {
        block_grad[b].zero();
        const int lo = start + b * bsize / nblocks;
        const int hi = start + (b + 1) * bsize / nblocks;
        ForwardTrace<T> trace;
        for (int k = lo; k < hi; ++k) {
          const Sample& s = train_set.samples[order[k]];
          auto lf = loss_forward(graph, to_stack<T>(s.image), s.label, trace);
          block_loss[b] += double(lf.loss);
          const FlatVector<T> dlogits = softmax_xent_backward(lf.probs, s.label);
          backward(graph, trace, dlogits, block_grad[b]);
        }
      }

      batch_grad.zero();
      for (int b = 0; b < nblocks; ++b) {
        batch_grad.add(block_grad[b]);
        epoch_loss += block_loss[b];
      }
      batch_grad.scale(T(1) / T(bsize));

      for (int i : param_nodes) {
        auto [w, bi] = param_vectors(graph.nodes[i]);
        sgd_step<T>(*w, batch_grad.node[i].weights, velocity.node[i].weights, T(lr),
                    T(cfg.momentum));
        sgd_step<T>(*bi, batch_grad.node[i].bias, velocity.node[i].bias, T(lr),
                    T(cfg.momentum));
      }
    }

    const double val_error = error_rate(graph, val_set, workers);
    EpochRecord rec{epoch, epoch_loss / n, val_error, lr};
    history.epochs.push_back(rec);
    if (on_epoch) on_epoch(rec);

    if (val_error < history.best_val_error) {
      history.best_val_error = val_error;
      history.best_epoch = epoch;
      best = optim_detail::snapshot(graph);
    }

    if (schedule_update(sched, val_error) == ScheduleAction::kTerminate) {
      history.lr_floor_reached = true;
      break;
    }
  }

  optim_detail::restore(graph, best);
  return history;
}

}  // namespace mspn
