#pragma once

// Leave-one-out full-ranking evaluation: every non-excluded item is a
// candidate, ties count against the test item, Recall@K and NDCG@K are
// averaged over users in ascending user order.

#include <cmath>
#include <map>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "mbrec/cascade.hpp"
#include "mbrec/core.hpp"
#include "mbrec/data.hpp"
#include "mbrec/graph.hpp"

namespace mbrec {

struct MetricsReport {
  std::vector<Index> ks;
  std::vector<double> recall;  // parallel to ks
  std::vector<double> ndcg;    // parallel to ks
  Index users_evaluated = 0;
  std::string label;

  bool operator==(const MetricsReport&) const = default;
};

inline void check_ks(const std::vector<Index>& ks) {
  if (ks.empty()) throw ContractError("metric cutoffs must be non-empty");
  for (std::size_t i = 0; i < ks.size(); ++i) {
    if (ks[i] < 1) throw ContractError("metric cutoffs must be positive");
    if (i > 0 && ks[i] <= ks[i - 1])
      throw ContractError("metric cutoffs must be strictly ascending");
  }
}

// 1-based rank of the test item among all non-excluded items, with
// equal scores counted above it.
inline Index rank_of_test_item(std::span<const double> scores, Index test_item,
                               std::span<const Index> excluded) {
  const auto n = static_cast<Index>(scores.size());
  if (test_item < 0 || test_item >= n)
    throw ContractError("rank_of_test_item: test item out of range");
  std::vector<char> mask(static_cast<std::size_t>(n), 0);
  for (Index j : excluded) {
    if (j < 0 || j >= n) throw ContractError("rank_of_test_item: excluded item out of range");
    mask[static_cast<std::size_t>(j)] = 1;
  }
  if (mask[static_cast<std::size_t>(test_item)])
    throw ContractError("rank_of_test_item: test item is excluded");
  const double target = scores[static_cast<std::size_t>(test_item)];
  Index rank = 1;
  for (Index j = 0; j < n; ++j) {
    if (j == test_item || mask[static_cast<std::size_t>(j)]) continue;
    if (scores[static_cast<std::size_t>(j)] >= target) ++rank;
  }
  return rank;
}

// Single-held-out-item contributions: recall is a hit indicator,
// ndcg discounts by 1/log2(rank+1).
inline std::pair<double, double> metrics_from_rank(Index rank, Index k) {
  if (rank < 1) throw ContractError("metrics_from_rank: rank must be >= 1");
  if (k < 1) throw ContractError("metrics_from_rank: cutoff must be >= 1");
  if (rank > k) return {0.0, 0.0};
  return {1.0, 1.0 / std::log2(static_cast<double>(rank) + 1.0)};
}

// Per-user target-behavior train positives, for candidate exclusion.
inline std::vector<std::vector<Index>> target_train_positives(const MultiBehaviorDataset& train) {
  std::vector<std::vector<Index>> out(static_cast<std::size_t>(train.num_users));
  for (const Interaction& x : train.target().entries)
    out[static_cast<std::size_t>(x.user)].push_back(x.item);
  return out;
}

// Core ranking loop over a (user -> held-out item) map. Exclusions are
// per-user lists; the map's ascending-user order fixes accumulation.
inline MetricsReport evaluate_ranking(const Mat& final_user, const Mat& final_item,
                                      const std::map<Index, Index>& holdout,
                                      const std::vector<std::vector<Index>>& exclusions,
                                      const std::vector<Index>& ks, std::string label = "") {
  check_ks(ks);
  MetricsReport report;
  report.ks = ks;
  report.recall.assign(ks.size(), 0.0);
  report.ndcg.assign(ks.size(), 0.0);
  report.label = std::move(label);
  for (const auto& [user, item] : holdout) {
    if (user < 0 || user >= final_user.rows())
      throw ContractError("evaluate_ranking: holdout user out of range");
    const std::vector<double> scores = score_user_all(final_user.row_span(user), final_item);
    const auto& excluded = exclusions[static_cast<std::size_t>(user)];
    const Index rank = rank_of_test_item(scores, item, excluded);
    for (std::size_t i = 0; i < ks.size(); ++i) {
      const auto [hit, gain] = metrics_from_rank(rank, ks[i]);
      report.recall[i] += hit;
      report.ndcg[i] += gain;
    }
    ++report.users_evaluated;
  }
  if (report.users_evaluated > 0) {
    const double inv = 1.0 / static_cast<double>(report.users_evaluated);
    for (std::size_t i = 0; i < ks.size(); ++i) {
      report.recall[i] *= inv;
      report.ndcg[i] *= inv;
    }
  }
  return report;
}

// Test-set evaluation: candidates are all items except the user's
// target-behavior train positives and the validation item.
inline MetricsReport evaluate_split(const CascadeParams& params, const ModelConfig& config,
                                    const std::vector<BehaviorGraph>& graphs,
                                    const SplitDataset& split, const std::vector<Index>& ks,
                                    std::string label = "") {
  if (split.test.empty()) throw ContractError("evaluate_split: test map is empty");
  const ForwardTrace trace = cascade_forward(graphs, params, config);
  std::vector<std::vector<Index>> exclusions = target_train_positives(split.train);
  for (const auto& [user, item] : split.validation)
    exclusions[static_cast<std::size_t>(user)].push_back(item);
  return evaluate_ranking(trace.final_user, trace.final_item, split.test, exclusions, ks,
                          std::move(label));
}

// Validation-time evaluation: only train positives are excluded (the
// test item remains an ordinary candidate).
inline MetricsReport evaluate_validation(const CascadeParams& params, const ModelConfig& config,
                                         const std::vector<BehaviorGraph>& graphs,
                                         const SplitDataset& split, const std::vector<Index>& ks,
                                         std::string label = "") {
  const ForwardTrace trace = cascade_forward(graphs, params, config);
  const std::vector<std::vector<Index>> exclusions = target_train_positives(split.train);
  return evaluate_ranking(trace.final_user, trace.final_item, split.validation, exclusions, ks,
                          std::move(label));
}

}  // namespace mbrec
