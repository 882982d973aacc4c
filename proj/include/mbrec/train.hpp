#pragma once

// BPR training loop: uniform negative sampling with rejection,
// bias-corrected Adam, early stopping on validation recall. Fully
// deterministic under a fixed seed.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <functional>
#include <iostream>
#include <span>
#include <utility>
#include <vector>

#include "mbrec/cascade.hpp"
#include "mbrec/core.hpp"
#include "mbrec/data.hpp"
#include "mbrec/eval.hpp"
#include "mbrec/grad.hpp"
#include "mbrec/graph.hpp"

namespace mbrec {

struct AdamConfig {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
};

struct TrainConfig {
  double learning_rate = 1e-3;
  double lambda = 1e-4;
  Index batch_size = 1024;
  Index max_epochs = 200;
  Index patience = 10;
  Index eval_k = 20;
  std::uint64_t seed = 42;
  AdamConfig adam;

  // learning_rate 0 is allowed: it freezes parameters, which the
  // no-update property relies on.
  void validate() const {
    if (batch_size < 1) throw ConfigError("batch_size must be >= 1");
    if (patience < 1) throw ConfigError("patience must be >= 1");
    if (learning_rate < 0.0) throw ConfigError("learning_rate must be >= 0");
    if (lambda < 0.0) throw ConfigError("lambda must be >= 0");
    if (max_epochs < 1) throw ConfigError("max_epochs must be >= 1");
    if (eval_k < 1) throw ConfigError("eval_k must be >= 1");
  }
};

struct AdamState {
  Gradients m;
  Gradients v;
  std::int64_t step = 0;

  static AdamState zeros_like(const CascadeParams& params) {
    AdamState s;
    s.m = Gradients::zeros_like(params);
    s.v = Gradients::zeros_like(params);
    return s;
  }
};

// Train-set positives in insertion order plus a sorted per-user view
// for membership tests during negative sampling.
struct PositiveIndex {
  std::vector<std::pair<Index, Index>> pairs;
  std::vector<std::vector<Index>> by_user;  // sorted item lists
  Index num_users = 0;
  Index num_items = 0;

  bool has(Index user, Index item) const {
    const auto& v = by_user[static_cast<std::size_t>(user)];
    return std::binary_search(v.begin(), v.end(), item);
  }
  bool saturated(Index user) const {
    return static_cast<Index>(by_user[static_cast<std::size_t>(user)].size()) >= num_items;
  }
};

inline PositiveIndex build_positive_index(const InteractionSet& target, Index num_users,
                                          Index num_items) {
  PositiveIndex index;
  index.num_users = num_users;
  index.num_items = num_items;
  index.by_user.resize(static_cast<std::size_t>(num_users));
  for (const Interaction& x : target.entries) {
    if (x.user < 0 || x.user >= num_users || x.item < 0 || x.item >= num_items)
      throw ContractError("positive index: interaction out of bounds");
    index.pairs.emplace_back(x.user, x.item);
    index.by_user[static_cast<std::size_t>(x.user)].push_back(x.item);
  }
  for (auto& v : index.by_user) std::sort(v.begin(), v.end());
  return index;
}

// Uniform draw over the user's non-interacted items, by rejection.
inline Index sample_negative(const PositiveIndex& index, Index user, Rng& rng) {
  for (;;) {
    const Index j = static_cast<Index>(rng.below(static_cast<std::uint64_t>(index.num_items)));
    if (!index.has(user, j)) return j;
  }
}

// One triplet per listed positive, in the order given. Users whose
// positives cover every item cannot yield a negative; their triplets
// are dropped with a warning.
inline TripletBatch sample_triplets(const PositiveIndex& index,
                                    std::span<const std::size_t> order, Rng& rng) {
  TripletBatch batch;
  batch.reserve(order.size());
  std::vector<char> warned(static_cast<std::size_t>(index.num_users), 0);
  for (std::size_t pos : order) {
    const auto [user, item] = index.pairs[pos];
    if (index.saturated(user)) {
      if (!warned[static_cast<std::size_t>(user)]) {
        warned[static_cast<std::size_t>(user)] = 1;
        std::cerr << "warning: user " << user
                  << " interacted with every item; skipping its triplets\n";
      }
      continue;
    }
    batch.push_back({user, item, sample_negative(index, user, rng)});
  }
  return batch;
}

inline TripletBatch sample_triplets(const InteractionSet& target, Index num_users,
                                    Index num_items, Rng& rng) {
  const PositiveIndex index = build_positive_index(target, num_users, num_items);
  std::vector<std::size_t> order(index.pairs.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  return sample_triplets(index, order, rng);
}

// Bias-corrected Adam update. Rejects non-finite gradients before any
// state is touched, so a failed step leaves params and state intact.
inline void adam_step(CascadeParams& params, const Gradients& grads, AdamState& state,
                      double learning_rate, const AdamConfig& config) {
  const auto param_tensors = tensor_list(params);
  const auto grad_tensors = tensor_list(grads);
  const auto m_tensors = tensor_list(state.m);
  const auto v_tensors = tensor_list(state.v);
  if (grad_tensors.size() != param_tensors.size())
    throw ContractError("adam_step: gradient shape mismatch");
  for (std::size_t t = 0; t < param_tensors.size(); ++t) {
    if (!grad_tensors[t]->same_shape(*param_tensors[t]))
      throw ContractError("adam_step: gradient shape mismatch");
    if (!all_finite(*grad_tensors[t]))
      throw ContractError("adam_step: non-finite gradient entry");
  }

  state.step += 1;
  const double b1 = config.beta1;
  const double b2 = config.beta2;
  const double c1 = 1.0 - std::pow(b1, static_cast<double>(state.step));
  const double c2 = 1.0 - std::pow(b2, static_cast<double>(state.step));
  for (std::size_t t = 0; t < param_tensors.size(); ++t) {
    std::vector<double>& theta = param_tensors[t]->data();
    const std::vector<double>& g = grad_tensors[t]->data();
    std::vector<double>& m = m_tensors[t]->data();
    std::vector<double>& v = v_tensors[t]->data();
    const std::size_t n = param_tensors[t]->size();
    for (std::size_t k = 0; k < n; ++k) {
      m[k] = b1 * m[k] + (1.0 - b1) * g[k];
      v[k] = b2 * v[k] + (1.0 - b2) * g[k] * g[k];
      const double m_hat = m[k] / c1;
      const double v_hat = v[k] / c2;
      theta[k] -= learning_rate * m_hat / (std::sqrt(v_hat) + config.epsilon);
    }
  }
}

struct EpochLog {
  Index epoch = 0;
  double mean_loss = 0.0;
  double val_metric = 0.0;
  double seconds = 0.0;
  Index steps = 0;
};

struct FitResult {
  CascadeParams best_params;
  std::vector<EpochLog> log;
  Index best_epoch = 0;
};

// Full training loop. Per epoch: seeded shuffle of positives, one
// uniformly sampled negative per positive, minibatch Adam steps, then
// a validation pass. Keeps the best-validation params and stops after
// `patience` epochs without improvement. The monitor is Recall@eval_k
// on the validation holdout; with no validation users it falls back to
// negative mean loss. A monitor override is injectable for tests.
inline FitResult fit(const SplitDataset& split, const ModelConfig& model_config,
                     const TrainConfig& train_config,
                     const std::function<double(const CascadeParams&, Index)>&
                         validation_override = nullptr) {
  model_config.validate();
  train_config.validate();
  if (static_cast<Index>(split.train.num_behaviors()) != model_config.num_behaviors())
    throw ContractError("fit: dataset chain does not match model config");
  if (split.train.target().entries.empty()) throw ContractError("fit: training set is empty");

  std::vector<BehaviorGraph> graphs;
  graphs.reserve(split.train.sets.size());
  for (const InteractionSet& set : split.train.sets)
    graphs.push_back(BehaviorGraph::build(set, split.train.num_users, split.train.num_items));

  Rng root(train_config.seed);
  const std::uint64_t init_seed = root.next_seed();
  const std::uint64_t sample_seed = root.next_seed();
  CascadeParams params =
      init_params(model_config, split.train.num_users, split.train.num_items, init_seed);
  AdamState state = AdamState::zeros_like(params);
  Rng sampler(sample_seed);

  const PositiveIndex index =
      build_positive_index(split.train.target(), split.train.num_users, split.train.num_items);
  std::vector<std::size_t> order(index.pairs.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;

  const std::vector<Index> monitor_ks{train_config.eval_k};
  auto monitor = [&](const CascadeParams& p, Index epoch) -> double {
    if (validation_override) return validation_override(p, epoch);
    if (split.validation.empty()) return 0.0;  // caller substitutes -mean_loss
    const MetricsReport report =
        evaluate_validation(p, model_config, graphs, split, monitor_ks);
    return report.recall[0];
  };

  FitResult result;
  double best_metric = -std::numeric_limits<double>::infinity();
  Index epochs_without_improvement = 0;
  const bool loss_monitor = !validation_override && split.validation.empty();

  for (Index epoch = 1; epoch <= train_config.max_epochs; ++epoch) {
    const auto epoch_start = std::chrono::steady_clock::now();
    sampler.shuffle(order);
    const TripletBatch triplets = sample_triplets(index, order, sampler);

    double total_loss = 0.0;
    Index steps = 0;
    const auto batch_size = static_cast<std::size_t>(train_config.batch_size);
    for (std::size_t begin = 0; begin < triplets.size(); begin += batch_size) {
      const std::size_t end = std::min(begin + batch_size, triplets.size());
      const TripletBatch batch(triplets.begin() + static_cast<std::ptrdiff_t>(begin),
                               triplets.begin() + static_cast<std::ptrdiff_t>(end));
      const ForwardTrace trace = cascade_forward(graphs, params, model_config);
      total_loss += bpr_loss(trace, batch, params, train_config.lambda);
      const Gradients grads = backward_batch(graphs, model_config, params, trace, batch,
                                             train_config.lambda);
      adam_step(params, grads, state, train_config.learning_rate, train_config.adam);
      ++steps;
    }
    const double mean_loss =
        triplets.empty() ? 0.0 : total_loss / static_cast<double>(triplets.size());

    const double metric = loss_monitor ? -mean_loss : monitor(params, epoch);
    const double seconds =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - epoch_start).count();
    result.log.push_back({epoch, mean_loss, metric, seconds, steps});

    if (metric > best_metric) {
      best_metric = metric;
      result.best_params = params;
      result.best_epoch = epoch;
      epochs_without_improvement = 0;
    } else {
      ++epochs_without_improvement;
      if (epochs_without_improvement >= train_config.patience) break;
    }
  }
  return result;
}

}  // namespace mbrec
