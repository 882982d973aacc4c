#pragma once

// Symmetric-normalized bipartite adjacency for one behavior, stored as
// CSR in both orientations so forward and transposed products are both
// row-major scans. Edge weight is 1/sqrt(deg(u) * deg(i)) with degrees
// counted within this behavior only.

#include <unordered_set>
#include <vector>

#include "mbrec/core.hpp"
#include "mbrec/data.hpp"

namespace mbrec {

class BehaviorGraph {
 public:
  BehaviorGraph() = default;

  // Duplicate (user, item) pairs collapse to a single edge; edges keep
  // first-occurrence order, which row order inherits on both sides.
  static BehaviorGraph build(const InteractionSet& set, Index num_users, Index num_items) {
    BehaviorGraph g;
    g.num_users_ = num_users;
    g.num_items_ = num_items;

    std::vector<Index> edge_user, edge_item;
    std::unordered_set<std::uint64_t> seen;
    seen.reserve(set.entries.size());
    for (const Interaction& x : set.entries) {
      if (x.user < 0 || x.user >= num_users || x.item < 0 || x.item >= num_items)
        throw ContractError("graph: interaction index out of bounds");
      if (!seen.insert(pack_pair(x.user, x.item)).second) continue;
      edge_user.push_back(x.user);
      edge_item.push_back(x.item);
    }
    const std::size_t nnz = edge_user.size();

    std::vector<Index> user_deg(static_cast<std::size_t>(num_users), 0);
    std::vector<Index> item_deg(static_cast<std::size_t>(num_items), 0);
    for (std::size_t e = 0; e < nnz; ++e) {
      ++user_deg[static_cast<std::size_t>(edge_user[e])];
      ++item_deg[static_cast<std::size_t>(edge_item[e])];
    }

    std::vector<double> weight(nnz);
    for (std::size_t e = 0; e < nnz; ++e) {
      const double du = static_cast<double>(user_deg[static_cast<std::size_t>(edge_user[e])]);
      const double di = static_cast<double>(item_deg[static_cast<std::size_t>(edge_item[e])]);
      weight[e] = 1.0 / std::sqrt(du * di);
    }

    g.user_ptr_.assign(static_cast<std::size_t>(num_users) + 1, 0);
    g.item_ptr_.assign(static_cast<std::size_t>(num_items) + 1, 0);
    for (std::size_t e = 0; e < nnz; ++e) {
      ++g.user_ptr_[static_cast<std::size_t>(edge_user[e]) + 1];
      ++g.item_ptr_[static_cast<std::size_t>(edge_item[e]) + 1];
    }
    for (Index u = 0; u < num_users; ++u)
      g.user_ptr_[static_cast<std::size_t>(u) + 1] += g.user_ptr_[static_cast<std::size_t>(u)];
    for (Index i = 0; i < num_items; ++i)
      g.item_ptr_[static_cast<std::size_t>(i) + 1] += g.item_ptr_[static_cast<std::size_t>(i)];

    g.user_cols_.resize(nnz);
    g.user_weight_.resize(nnz);
    g.item_cols_.resize(nnz);
    g.item_weight_.resize(nnz);
    std::vector<std::size_t> ucur(g.user_ptr_.begin(), g.user_ptr_.end() - 1);
    std::vector<std::size_t> icur(g.item_ptr_.begin(), g.item_ptr_.end() - 1);
    for (std::size_t e = 0; e < nnz; ++e) {
      const auto u = static_cast<std::size_t>(edge_user[e]);
      const auto i = static_cast<std::size_t>(edge_item[e]);
      g.user_cols_[ucur[u]] = edge_item[e];
      g.user_weight_[ucur[u]] = weight[e];
      ++ucur[u];
      g.item_cols_[icur[i]] = edge_user[e];
      g.item_weight_[icur[i]] = weight[e];
      ++icur[i];
    }
    return g;
  }

  Index num_users() const { return num_users_; }
  Index num_items() const { return num_items_; }
  std::size_t num_edges() const { return user_cols_.size(); }

  std::span<const Index> user_row_items(Index u) const {
    return {user_cols_.data() + user_ptr_[static_cast<std::size_t>(u)],
            user_ptr_[static_cast<std::size_t>(u) + 1] - user_ptr_[static_cast<std::size_t>(u)]};
  }
  std::span<const double> user_row_weights(Index u) const {
    return {user_weight_.data() + user_ptr_[static_cast<std::size_t>(u)],
            user_ptr_[static_cast<std::size_t>(u) + 1] - user_ptr_[static_cast<std::size_t>(u)]};
  }
  std::span<const Index> item_row_users(Index i) const {
    return {item_cols_.data() + item_ptr_[static_cast<std::size_t>(i)],
            item_ptr_[static_cast<std::size_t>(i) + 1] - item_ptr_[static_cast<std::size_t>(i)]};
  }
  std::span<const double> item_row_weights(Index i) const {
    return {item_weight_.data() + item_ptr_[static_cast<std::size_t>(i)],
            item_ptr_[static_cast<std::size_t>(i) + 1] - item_ptr_[static_cast<std::size_t>(i)]};
  }

 private:
  Index num_users_ = 0;
  Index num_items_ = 0;
  std::vector<std::size_t> user_ptr_, item_ptr_;
  std::vector<Index> user_cols_, item_cols_;
  std::vector<double> user_weight_, item_weight_;
};

inline BehaviorGraph build_normalized_adjacency(const InteractionSet& set, Index num_users,
                                                Index num_items) {
  return BehaviorGraph::build(set, num_users, num_items);
}

// One propagation layer. Both outputs are computed from the input
// embeddings (simultaneous update); zero-degree rows come out zero.
inline std::pair<Mat, Mat> propagate_layer(const BehaviorGraph& graph, const Mat& user_emb,
                                           const Mat& item_emb) {
  if (user_emb.rows() != graph.num_users() || item_emb.rows() != graph.num_items() ||
      user_emb.cols() != item_emb.cols())
    throw ContractError("propagate_layer: embedding dimensions do not match graph");
  const Index d = user_emb.cols();
  Mat out_user(graph.num_users(), d);
  Mat out_item(graph.num_items(), d);
  for (Index u = 0; u < graph.num_users(); ++u) {
    const auto items = graph.user_row_items(u);
    const auto weights = graph.user_row_weights(u);
    double* out = out_user.row(u);
    for (std::size_t k = 0; k < items.size(); ++k)
      axpy(weights[k], item_emb.row_span(items[k]), {out, static_cast<std::size_t>(d)});
  }
  for (Index i = 0; i < graph.num_items(); ++i) {
    const auto users = graph.item_row_users(i);
    const auto weights = graph.item_row_weights(i);
    double* out = out_item.row(i);
    for (std::size_t k = 0; k < users.size(); ++k)
      axpy(weights[k], user_emb.row_span(users[k]), {out, static_cast<std::size_t>(d)});
  }
  return {std::move(out_user), std::move(out_item)};
}

}  // namespace mbrec
