#pragma once

// Cascaded forward pass: per-behavior propagation blocks whose
// layer-sum output seeds the next behavior's block through a learned
// linear map, followed by cross-behavior aggregation and inner-product
// scoring. Everything an exact backward pass needs is kept in the
// trace.

#include <utility>
#include <vector>

#include "mbrec/core.hpp"
#include "mbrec/graph.hpp"

namespace mbrec {

enum class Aggregation { kSum = 0, kConcat = 1, kLastOnly = 2 };

inline const char* to_string(Aggregation a) {
  switch (a) {
    case Aggregation::kSum: return "sum";
    case Aggregation::kConcat: return "concat";
    case Aggregation::kLastOnly: return "last";
  }
  return "?";
}

inline Aggregation aggregation_from_string(const std::string& s) {
  if (s == "sum") return Aggregation::kSum;
  if (s == "concat") return Aggregation::kConcat;
  if (s == "last" || s == "last_only") return Aggregation::kLastOnly;
  throw ConfigError("unknown aggregation mode: " + s);
}

struct ModelConfig {
  Index embed_dim = 64;
  std::vector<Index> layers;  // propagation depth per behavior
  bool transform_enabled = true;
  Aggregation aggregation = Aggregation::kSum;

  Index num_behaviors() const { return static_cast<Index>(layers.size()); }
  Index final_dim() const {
    return aggregation == Aggregation::kConcat ? embed_dim * num_behaviors() : embed_dim;
  }
  bool has_transforms() const { return transform_enabled && num_behaviors() > 1; }

  void validate() const {
    if (embed_dim < 1) throw ConfigError("embedding size must be at least 1");
    if (layers.empty()) throw ConfigError("at least one behavior is required");
    for (Index l : layers)
      if (l < 0) throw ConfigError("layer counts must be non-negative");
  }
};

// All trainable parameters: the two embedding tables plus one d x d
// map per side per behavior boundary. Transform lists are empty when
// the chain has one behavior or transforms are disabled.
struct CascadeParams {
  Mat user_embed;  // M x d
  Mat item_embed;  // N x d
  std::vector<Mat> user_transforms;  // B-1 of d x d
  std::vector<Mat> item_transforms;

  Index num_users() const { return user_embed.rows(); }
  Index num_items() const { return item_embed.rows(); }
  Index embed_dim() const { return user_embed.cols(); }

  bool operator==(const CascadeParams&) const = default;
};

// Parameter tensors in canonical order. The same order is used by the
// optimizer, checkpoints, and gradient flattening.
inline std::vector<Mat*> tensor_list(CascadeParams& p) {
  std::vector<Mat*> out{&p.user_embed, &p.item_embed};
  for (Mat& w : p.user_transforms) out.push_back(&w);
  for (Mat& w : p.item_transforms) out.push_back(&w);
  return out;
}
inline std::vector<const Mat*> tensor_list(const CascadeParams& p) {
  std::vector<const Mat*> out{&p.user_embed, &p.item_embed};
  for (const Mat& w : p.user_transforms) out.push_back(&w);
  for (const Mat& w : p.item_transforms) out.push_back(&w);
  return out;
}

inline double squared_norm(const CascadeParams& p) {
  double s = 0.0;
  for (const Mat* t : tensor_list(p)) s += squared_norm(*t);
  return s;
}

// Xavier-uniform init: every tensor here has fan_in = fan_out = d, so
// the bound is sqrt(6 / 2d) throughout. Draw order is fixed: user
// table, item table, then user transforms, then item transforms.
inline CascadeParams init_params(const ModelConfig& config, Index num_users, Index num_items,
                                 std::uint64_t seed) {
  config.validate();
  const Index d = config.embed_dim;
  const double bound = std::sqrt(6.0 / static_cast<double>(d + d));
  Rng rng(seed);
  CascadeParams params;
  params.user_embed = Mat(num_users, d);
  params.item_embed = Mat(num_items, d);
  for (double& v : params.user_embed.data()) v = rng.uniform(-bound, bound);
  for (double& v : params.item_embed.data()) v = rng.uniform(-bound, bound);
  if (config.has_transforms()) {
    const auto boundaries = static_cast<std::size_t>(config.num_behaviors() - 1);
    params.user_transforms.resize(boundaries);
    params.item_transforms.resize(boundaries);
    for (Mat& w : params.user_transforms) {
      w = Mat(d, d);
      for (double& v : w.data()) v = rng.uniform(-bound, bound);
    }
    for (Mat& w : params.item_transforms) {
      w = Mat(d, d);
      for (double& v : w.data()) v = rng.uniform(-bound, bound);
    }
  }
  return params;
}

// One behavior's propagation record: layer 0 is the block input, and
// the sums accumulate layers 0..L in that order.
struct BlockTrace {
  std::vector<Mat> user_layers;
  std::vector<Mat> item_layers;
  Mat user_sum;
  Mat item_sum;
};

struct ForwardTrace {
  std::vector<BlockTrace> blocks;
  Mat final_user;  // M x d, or M x B*d under concat
  Mat final_item;
};

inline BlockTrace block_forward(const BehaviorGraph& graph, const Mat& input_user,
                                const Mat& input_item, Index depth) {
  BlockTrace block;
  block.user_layers.push_back(input_user);
  block.item_layers.push_back(input_item);
  for (Index l = 0; l < depth; ++l) {
    auto [next_user, next_item] =
        propagate_layer(graph, block.user_layers.back(), block.item_layers.back());
    block.user_layers.push_back(std::move(next_user));
    block.item_layers.push_back(std::move(next_item));
  }
  block.user_sum = block.user_layers[0];
  block.item_sum = block.item_layers[0];
  for (Index l = 1; l <= depth; ++l) {
    add_inplace(block.user_sum, block.user_layers[static_cast<std::size_t>(l)]);
    add_inplace(block.item_sum, block.item_layers[static_cast<std::size_t>(l)]);
  }
  return block;
}

// Linear map applied rowwise on each side of a behavior boundary.
inline std::pair<Mat, Mat> feature_transform(const Mat& block_sum_user, const Mat& block_sum_item,
                                             const Mat& user_transform, const Mat& item_transform) {
  if (user_transform.rows() != user_transform.cols() ||
      item_transform.rows() != item_transform.cols() ||
      block_sum_user.cols() != user_transform.rows() ||
      block_sum_item.cols() != item_transform.rows())
    throw ContractError("feature_transform: shapes do not conform");
  return {matmul(block_sum_user, user_transform), matmul(block_sum_item, item_transform)};
}

// Cross-behavior aggregation of block sums. kSum adds elementwise,
// kConcat stacks along the feature axis (first behavior first), and
// kLastOnly keeps the final block alone.
inline std::pair<Mat, Mat> aggregate(const std::vector<const Mat*>& user_sums,
                                     const std::vector<const Mat*>& item_sums, Aggregation mode) {
  if (user_sums.empty() || user_sums.size() != item_sums.size())
    throw ContractError("aggregate: need matching non-empty block-sum lists");
  for (std::size_t b = 1; b < user_sums.size(); ++b)
    if (!user_sums[b]->same_shape(*user_sums[0]) || !item_sums[b]->same_shape(*item_sums[0]))
      throw ContractError("aggregate: mixed dimensions");
  switch (mode) {
    case Aggregation::kSum: {
      Mat user = *user_sums[0];
      Mat item = *item_sums[0];
      for (std::size_t b = 1; b < user_sums.size(); ++b) {
        add_inplace(user, *user_sums[b]);
        add_inplace(item, *item_sums[b]);
      }
      return {std::move(user), std::move(item)};
    }
    case Aggregation::kConcat: {
      const Index d = user_sums[0]->cols();
      const auto B = static_cast<Index>(user_sums.size());
      Mat user(user_sums[0]->rows(), d * B);
      Mat item(item_sums[0]->rows(), d * B);
      for (Index b = 0; b < B; ++b) {
        const Mat& us = *user_sums[static_cast<std::size_t>(b)];
        const Mat& is = *item_sums[static_cast<std::size_t>(b)];
        for (Index r = 0; r < user.rows(); ++r)
          for (Index c = 0; c < d; ++c) user(r, b * d + c) = us(r, c);
        for (Index r = 0; r < item.rows(); ++r)
          for (Index c = 0; c < d; ++c) item(r, b * d + c) = is(r, c);
      }
      return {std::move(user), std::move(item)};
    }
    case Aggregation::kLastOnly:
      return {*user_sums.back(), *item_sums.back()};
  }
  throw ContractError("aggregate: unknown mode");
}

inline void check_params_match(const ModelConfig& config, const CascadeParams& params) {
  const auto boundaries =
      config.has_transforms() ? static_cast<std::size_t>(config.num_behaviors() - 1) : 0u;
  if (params.user_embed.cols() != config.embed_dim ||
      params.item_embed.cols() != config.embed_dim ||
      params.user_transforms.size() != boundaries || params.item_transforms.size() != boundaries)
    throw ContractError("parameters do not match model config");
  for (const Mat& w : params.user_transforms)
    if (w.rows() != config.embed_dim || w.cols() != config.embed_dim)
      throw ContractError("transform matrix has wrong shape");
  for (const Mat& w : params.item_transforms)
    if (w.rows() != config.embed_dim || w.cols() != config.embed_dim)
      throw ContractError("transform matrix has wrong shape");
}

// Full forward pass. Behavior 1 consumes the embedding tables
// directly; each boundary maps the previous block sums through its
// transforms (or passes them unchanged when disabled).
inline ForwardTrace cascade_forward(const std::vector<BehaviorGraph>& graphs,
                                    const CascadeParams& params, const ModelConfig& config) {
  config.validate();
  check_params_match(config, params);
  const auto B = static_cast<std::size_t>(config.num_behaviors());
  if (graphs.size() != B)
    throw ContractError("cascade_forward: graph count does not match behavior chain");

  ForwardTrace trace;
  trace.blocks.reserve(B);
  const Mat* input_user = &params.user_embed;
  const Mat* input_item = &params.item_embed;
  Mat next_user, next_item;
  for (std::size_t b = 0; b < B; ++b) {
    trace.blocks.push_back(
        block_forward(graphs[b], *input_user, *input_item, config.layers[b]));
    const BlockTrace& block = trace.blocks.back();
    if (b + 1 < B) {
      if (config.transform_enabled) {
        std::tie(next_user, next_item) = feature_transform(
            block.user_sum, block.item_sum, params.user_transforms[b], params.item_transforms[b]);
      } else {
        next_user = block.user_sum;
        next_item = block.item_sum;
      }
      input_user = &next_user;
      input_item = &next_item;
    }
  }

  std::vector<const Mat*> user_sums, item_sums;
  for (const BlockTrace& block : trace.blocks) {
    user_sums.push_back(&block.user_sum);
    item_sums.push_back(&block.item_sum);
  }
  std::tie(trace.final_user, trace.final_item) =
      aggregate(user_sums, item_sums, config.aggregation);
  return trace;
}

inline double score_pair(std::span<const double> final_user_row,
                         std::span<const double> final_item_row) {
  return dot(final_user_row, final_item_row);
}

// Scores one user against every item row.
inline std::vector<double> score_user_all(std::span<const double> final_user_row,
                                          const Mat& final_items) {
  if (static_cast<Index>(final_user_row.size()) != final_items.cols())
    throw ContractError("score_user_all: dimension mismatch");
  std::vector<double> scores(static_cast<std::size_t>(final_items.rows()));
  for (Index n = 0; n < final_items.rows(); ++n)
    scores[static_cast<std::size_t>(n)] = dot(final_user_row, final_items.row_span(n));
  return scores;
}

}  // namespace mbrec
