#pragma once

// BPR pairwise loss and the exact reverse-mode gradient of the full
// cascade. The propagation operator is self-adjoint (the stacked
// bipartite matrix is symmetric), so backpropagating through a block's
// layer sum is the same computation as running the block forward on
// the incoming gradient.

#include <vector>

#include "mbrec/cascade.hpp"
#include "mbrec/core.hpp"
#include "mbrec/graph.hpp"

namespace mbrec {

struct Triplet {
  Index user = 0;
  Index pos_item = 0;
  Index neg_item = 0;

  bool operator==(const Triplet&) const = default;
};

using TripletBatch = std::vector<Triplet>;

// Parameter-shaped gradient accumulator.
struct Gradients {
  Mat user_embed;
  Mat item_embed;
  std::vector<Mat> user_transforms;
  std::vector<Mat> item_transforms;

  static Gradients zeros_like(const CascadeParams& params) {
    Gradients g;
    g.user_embed = Mat(params.user_embed.rows(), params.user_embed.cols());
    g.item_embed = Mat(params.item_embed.rows(), params.item_embed.cols());
    for (const Mat& w : params.user_transforms) g.user_transforms.emplace_back(w.rows(), w.cols());
    for (const Mat& w : params.item_transforms) g.item_transforms.emplace_back(w.rows(), w.cols());
    return g;
  }
};

inline std::vector<Mat*> tensor_list(Gradients& g) {
  std::vector<Mat*> out{&g.user_embed, &g.item_embed};
  for (Mat& w : g.user_transforms) out.push_back(&w);
  for (Mat& w : g.item_transforms) out.push_back(&w);
  return out;
}
inline std::vector<const Mat*> tensor_list(const Gradients& g) {
  std::vector<const Mat*> out{&g.user_embed, &g.item_embed};
  for (const Mat& w : g.user_transforms) out.push_back(&w);
  for (const Mat& w : g.item_transforms) out.push_back(&w);
  return out;
}

inline double sigmoid(double x) {
  if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

// -ln(sigmoid(margin)) computed as softplus(-margin); stable at both
// tails.
inline double neg_log_sigmoid(double margin) {
  if (margin > 0.0) return std::log1p(std::exp(-margin));
  return -margin + std::log1p(std::exp(margin));
}

inline void check_trace_matches(const ForwardTrace& trace, const CascadeParams& params,
                                const ModelConfig& config) {
  if (trace.blocks.size() != static_cast<std::size_t>(config.num_behaviors()))
    throw ContractError("trace does not match model config");
  if (trace.final_user.rows() != params.num_users() ||
      trace.final_item.rows() != params.num_items() ||
      trace.final_user.cols() != config.final_dim())
    throw ContractError("trace does not match parameters");
}

// Sum over the batch of -ln(sigmoid(pos - neg)) plus lambda times the
// squared norm of every trainable parameter.
inline double bpr_loss(const ForwardTrace& trace, const TripletBatch& batch,
                       const CascadeParams& params, double lambda) {
  double loss = 0.0;
  for (const Triplet& t : batch) {
    const double pos = score_pair(trace.final_user.row_span(t.user),
                                  trace.final_item.row_span(t.pos_item));
    const double neg = score_pair(trace.final_user.row_span(t.user),
                                  trace.final_item.row_span(t.neg_item));
    loss += neg_log_sigmoid(pos - neg);
  }
  if (lambda != 0.0) loss += lambda * squared_norm(params);
  return loss;
}

namespace detail {

// Layer sum of depth propagations applied to a gradient pair. Same
// operator as the forward block, layers not retained.
inline std::pair<Mat, Mat> block_backward(const BehaviorGraph& graph, const Mat& grad_user,
                                          const Mat& grad_item, Index depth) {
  Mat sum_user = grad_user;
  Mat sum_item = grad_item;
  Mat cur_user = grad_user;
  Mat cur_item = grad_item;
  for (Index l = 0; l < depth; ++l) {
    std::tie(cur_user, cur_item) = propagate_layer(graph, cur_user, cur_item);
    add_inplace(sum_user, cur_user);
    add_inplace(sum_item, cur_item);
  }
  return {std::move(sum_user), std::move(sum_item)};
}

}  // namespace detail

// Exact gradient of bpr_loss with respect to every parameter.
// Duplicate triplets contribute additively.
inline Gradients backward_batch(const std::vector<BehaviorGraph>& graphs,
                                const ModelConfig& config, const CascadeParams& params,
                                const ForwardTrace& trace, const TripletBatch& batch,
                                double lambda) {
  config.validate();
  check_params_match(config, params);
  check_trace_matches(trace, params, config);
  const auto B = static_cast<std::size_t>(config.num_behaviors());
  if (graphs.size() != B) throw ContractError("backward_batch: graph count mismatch");
  const Index d = config.embed_dim;
  const Index w = config.final_dim();

  Gradients grads = Gradients::zeros_like(params);

  // Seed on the final embeddings: each triplet pushes
  // d(loss)/d(margin) = sigmoid(margin) - 1 through both scores.
  Mat d_final_user(params.num_users(), w);
  Mat d_final_item(params.num_items(), w);
  for (const Triplet& t : batch) {
    const auto eu = trace.final_user.row_span(t.user);
    const auto ei = trace.final_item.row_span(t.pos_item);
    const auto ej = trace.final_item.row_span(t.neg_item);
    const double margin = score_pair(eu, ei) - score_pair(eu, ej);
    const double g = sigmoid(margin) - 1.0;
    double* du = d_final_user.row(t.user);
    double* di = d_final_item.row(t.pos_item);
    double* dj = d_final_item.row(t.neg_item);
    for (Index k = 0; k < w; ++k) {
      du[k] += g * (ei[static_cast<std::size_t>(k)] - ej[static_cast<std::size_t>(k)]);
      di[k] += g * eu[static_cast<std::size_t>(k)];
      dj[k] -= g * eu[static_cast<std::size_t>(k)];
    }
  }

  // Fan the final gradient back to each block sum per the aggregation
  // mode, then walk the chain backwards.
  auto aggregation_share = [&](std::size_t b) -> std::pair<Mat, Mat> {
    switch (config.aggregation) {
      case Aggregation::kSum:
        return {d_final_user, d_final_item};
      case Aggregation::kConcat: {
        Mat du(params.num_users(), d), di(params.num_items(), d);
        const Index off = static_cast<Index>(b) * d;
        for (Index r = 0; r < du.rows(); ++r)
          for (Index c = 0; c < d; ++c) du(r, c) = d_final_user(r, off + c);
        for (Index r = 0; r < di.rows(); ++r)
          for (Index c = 0; c < d; ++c) di(r, c) = d_final_item(r, off + c);
        return {std::move(du), std::move(di)};
      }
      case Aggregation::kLastOnly: {
        if (b + 1 == B) return {d_final_user, d_final_item};
        return {Mat(params.num_users(), d), Mat(params.num_items(), d)};
      }
    }
    throw ContractError("unknown aggregation mode");
  };

  Mat chain_user, chain_item;  // gradient flowing into block b's sums from block b+1
  for (std::size_t b = B; b-- > 0;) {
    auto [d_sum_user, d_sum_item] = aggregation_share(b);
    if (b + 1 < B) {
      add_inplace(d_sum_user, chain_user);
      add_inplace(d_sum_item, chain_item);
    }
    auto [d_input_user, d_input_item] =
        detail::block_backward(graphs[b], d_sum_user, d_sum_item,
                               config.layers[b]);
    if (b > 0) {
      const BlockTrace& prev = trace.blocks[b - 1];
      if (config.transform_enabled) {
        add_inplace(grads.user_transforms[b - 1], matmul_trans_a(prev.user_sum, d_input_user));
        add_inplace(grads.item_transforms[b - 1], matmul_trans_a(prev.item_sum, d_input_item));
        chain_user = matmul_trans_b(d_input_user, params.user_transforms[b - 1]);
        chain_item = matmul_trans_b(d_input_item, params.item_transforms[b - 1]);
      } else {
        chain_user = std::move(d_input_user);
        chain_item = std::move(d_input_item);
      }
    } else {
      add_inplace(grads.user_embed, d_input_user);
      add_inplace(grads.item_embed, d_input_item);
    }
  }

  if (lambda != 0.0) {
    const auto param_tensors = tensor_list(params);
    const auto grad_tensors = tensor_list(grads);
    for (std::size_t t = 0; t < param_tensors.size(); ++t)
      for (std::size_t k = 0; k < param_tensors[t]->size(); ++k)
        grad_tensors[t]->data()[k] += 2.0 * lambda * param_tensors[t]->data()[k];
  }
  return grads;
}

// Central-difference validation of the analytic gradient. Probes every
// parameter entry, or a seeded random subsample above max_entries.
// Returns the maximum relative error, with relative error defined as
// |a - n| / max(|a|, |n|, 1e-8). A precomputed gradient can be passed
// in to test the detector itself.
inline double finite_difference_check(const std::vector<BehaviorGraph>& graphs,
                                      const ModelConfig& config, const CascadeParams& params,
                                      const TripletBatch& batch, double lambda, double epsilon,
                                      std::size_t max_entries = 10000,
                                      std::uint64_t subsample_seed = 0,
                                      const Gradients* analytic_override = nullptr) {
  if (epsilon <= 0.0) throw ContractError("finite_difference_check: epsilon must be positive");
  const ForwardTrace trace = cascade_forward(graphs, params, config);
  Gradients computed;
  const Gradients* analytic = analytic_override;
  if (analytic == nullptr) {
    computed = backward_batch(graphs, config, params, trace, batch, lambda);
    analytic = &computed;
  }

  CascadeParams probe = params;
  const auto probe_tensors = tensor_list(probe);
  const auto analytic_tensors = tensor_list(*analytic);

  std::size_t total = 0;
  for (const Mat* t : probe_tensors) total += t->size();

  std::vector<std::size_t> chosen;
  if (total > max_entries) {
    chosen.resize(total);
    for (std::size_t k = 0; k < total; ++k) chosen[k] = k;
    Rng rng(subsample_seed);
    rng.shuffle(chosen);
    chosen.resize(max_entries);
  } else {
    chosen.resize(total);
    for (std::size_t k = 0; k < total; ++k) chosen[k] = k;
  }

  auto entry = [&](std::size_t flat) -> double& {
    for (Mat* t : probe_tensors) {
      if (flat < t->size()) return t->data()[flat];
      flat -= t->size();
    }
    throw ContractError("finite_difference_check: flat index out of range");
  };
  auto analytic_entry = [&](std::size_t flat) -> double {
    for (const Mat* t : analytic_tensors) {
      if (flat < t->size()) return t->data()[flat];
      flat -= t->size();
    }
    throw ContractError("finite_difference_check: flat index out of range");
  };
  auto loss_at = [&]() {
    return bpr_loss(cascade_forward(graphs, probe, config), batch, probe, lambda);
  };

  double max_rel = 0.0;
  for (std::size_t flat : chosen) {
    double& theta = entry(flat);
    const double saved = theta;
    theta = saved + epsilon;
    const double loss_plus = loss_at();
    theta = saved - epsilon;
    const double loss_minus = loss_at();
    theta = saved;
    const double numeric = (loss_plus - loss_minus) / (2.0 * epsilon);
    const double a = analytic_entry(flat);
    const double rel =
        std::abs(a - numeric) / std::max({std::abs(a), std::abs(numeric), 1e-8});
    max_rel = std::max(max_rel, rel);
  }
  return max_rel;
}

}  // namespace mbrec
