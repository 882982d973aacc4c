#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <map>
#include <vector>

#include "mbrec/eval.hpp"
#include "oracles.hpp"
#include "test_util.hpp"

using mbrec::BehaviorGraph;
using mbrec::CascadeParams;
using mbrec::Index;
using mbrec::Mat;
using mbrec::MetricsReport;
using mbrec::ModelConfig;

TEST_CASE("ranks count strictly better and tied candidates", "[eval]") {
  const std::vector<double> scores{0.9, 0.5, 0.5, 0.1};
  CHECK(mbrec::rank_of_test_item(scores, 0, {}) == 1);
  // Both the strictly better 0.9 and the tied 0.5 outrank item 1.
  CHECK(mbrec::rank_of_test_item(scores, 1, {}) == 3);
  CHECK(mbrec::rank_of_test_item(scores, 2, {}) == 3);
  CHECK(mbrec::rank_of_test_item(scores, 3, {}) == 4);

  const std::vector<Index> excluded{0};
  CHECK(mbrec::rank_of_test_item(scores, 1, excluded) == 2);
  const std::vector<Index> both{0, 2};
  CHECK(mbrec::rank_of_test_item(scores, 1, both) == 1);
}

TEST_CASE("rank guards reject bad test and exclusion items", "[eval]") {
  const std::vector<double> scores{0.5, 0.4};
  CHECK_THROWS_AS(mbrec::rank_of_test_item(scores, 2, {}), mbrec::ContractError);
  CHECK_THROWS_AS(mbrec::rank_of_test_item(scores, -1, {}), mbrec::ContractError);
  const std::vector<Index> bad{5};
  CHECK_THROWS_AS(mbrec::rank_of_test_item(scores, 0, bad), mbrec::ContractError);
  const std::vector<Index> self{0};
  CHECK_THROWS_AS(mbrec::rank_of_test_item(scores, 0, self), mbrec::ContractError);
}

TEST_CASE("ranks agree with a sort-based oracle under heavy ties", "[eval]") {
  mbrec::Rng rng(5);
  for (int it = 0; it < 200; ++it) {
    const Index n = 2 + static_cast<Index>(rng.below(12));
    std::vector<double> scores(static_cast<std::size_t>(n));
    // Few distinct values force frequent ties.
    for (double& s : scores) s = static_cast<double>(rng.below(4)) * 0.25;
    std::vector<Index> excluded;
    for (Index j = 0; j < n; ++j)
      if (rng.uniform() < 0.25) excluded.push_back(j);
    Index test_item = static_cast<Index>(rng.below(static_cast<std::uint64_t>(n)));
    bool is_excluded = false;
    for (Index j : excluded) is_excluded |= (j == test_item);
    if (is_excluded) continue;
    const Index fast = mbrec::rank_of_test_item(scores, test_item, excluded);
    const Index slow = oracle::sort_rank(scores, test_item, excluded);
    CHECK(fast == slow);
  }
}

TEST_CASE("per-rank metric contributions follow the formulas", "[eval]") {
  auto [r1, n1] = mbrec::metrics_from_rank(1, 10);
  CHECK(r1 == 1.0);
  CHECK(n1 == 1.0);
  auto [r2, n2] = mbrec::metrics_from_rank(2, 10);
  CHECK(r2 == 1.0);
  CHECK(n2 == Catch::Approx(1.0 / std::log2(3.0)).epsilon(1e-9));
  CHECK(n2 == Catch::Approx(0.63093).margin(5e-6));
  auto [r10, n10] = mbrec::metrics_from_rank(10, 10);
  CHECK(r10 == 1.0);
  CHECK(n10 == Catch::Approx(1.0 / std::log2(11.0)).epsilon(1e-9));
  auto [r11, n11] = mbrec::metrics_from_rank(11, 10);
  CHECK(r11 == 0.0);
  CHECK(n11 == 0.0);
  CHECK_THROWS_AS(mbrec::metrics_from_rank(0, 10), mbrec::ContractError);
  CHECK_THROWS_AS(mbrec::metrics_from_rank(1, 0), mbrec::ContractError);
}

TEST_CASE("cutoff lists must be positive and strictly ascending", "[eval]") {
  mbrec::check_ks({1, 5, 10});
  CHECK_THROWS_AS(mbrec::check_ks({}), mbrec::ContractError);
  CHECK_THROWS_AS(mbrec::check_ks({0, 5}), mbrec::ContractError);
  CHECK_THROWS_AS(mbrec::check_ks({5, 5}), mbrec::ContractError);
  CHECK_THROWS_AS(mbrec::check_ks({10, 5}), mbrec::ContractError);
}

TEST_CASE("ranking metrics average over the holdout users", "[eval]") {
  // Two users, twelve items. User 0 ranks its item first; user 1 ranks
  // its item eleventh, outside K=10.
  const Index n = 12;
  Mat fu(2, 1), fi(n, 1);
  fu(0, 0) = 1.0;
  fu(1, 0) = -1.0;
  for (Index i = 0; i < n; ++i) fi(i, 0) = static_cast<double>(n - i);
  // Scores for user 0 descend with i, so item 0 is rank 1. For user 1
  // they ascend, so item 1 is rank 11 of 12.
  const std::map<Index, Index> holdout{{0, 0}, {1, 1}};
  const std::vector<std::vector<Index>> exclusions(2);
  const auto report =
      mbrec::evaluate_ranking(fu, fi, holdout, exclusions, {10}, "check");
  REQUIRE(report.ks == std::vector<Index>{10});
  CHECK(report.users_evaluated == 2);
  CHECK(report.label == "check");
  CHECK(report.recall[0] == Catch::Approx(0.5));
  CHECK(report.ndcg[0] == Catch::Approx(0.5));  // rank 1 contributes 1, rank 11 nothing
}

TEST_CASE("a dominant score always lands recall at one", "[eval]") {
  Mat fu(1, 2), fi(4, 2);
  fu(0, 0) = 1.0;
  fu(0, 1) = 0.0;
  fi(0, 0) = 10.0;
  for (Index i = 1; i < 4; ++i) fi(i, 0) = static_cast<double>(i);
  const auto report = mbrec::evaluate_ranking(fu, fi, {{0, 0}}, {{}}, {1}, "");
  CHECK(report.recall[0] == 1.0);
  CHECK(report.ndcg[0] == 1.0);
}

TEST_CASE("metrics are monotone in k and ndcg never exceeds recall", "[eval]") {
  mbrec::Rng rng(9);
  Mat fu(6, 3), fi(15, 3);
  for (double& v : fu.data()) v = rng.uniform(-1, 1);
  for (double& v : fi.data()) v = rng.uniform(-1, 1);
  std::map<Index, Index> holdout;
  for (Index u = 0; u < 6; ++u)
    holdout[u] = static_cast<Index>(rng.below(15));
  const std::vector<std::vector<Index>> exclusions(6);
  const auto report =
      mbrec::evaluate_ranking(fu, fi, holdout, exclusions, {1, 3, 5, 10, 15}, "");
  for (std::size_t i = 1; i < report.ks.size(); ++i) {
    CHECK(report.recall[i] >= report.recall[i - 1]);
    CHECK(report.ndcg[i] >= report.ndcg[i - 1]);
  }
  for (std::size_t i = 0; i < report.ks.size(); ++i)
    CHECK(report.ndcg[i] <= report.recall[i] + 1e-12);
  CHECK(report.recall.back() == 1.0);  // K covers the whole catalog
}

namespace {

// Brute-force evaluator sharing the model's forward pass: ranks come
// from a full sort, means from a plain loop.
MetricsReport brute_evaluate(const CascadeParams& params, const ModelConfig& config,
                             const std::vector<BehaviorGraph>& graphs,
                             const mbrec::SplitDataset& split, const std::vector<Index>& ks) {
  const auto trace = mbrec::cascade_forward(graphs, params, config);
  auto exclusions = mbrec::target_train_positives(split.train);
  for (const auto& [user, item] : split.validation)
    exclusions[static_cast<std::size_t>(user)].push_back(item);
  MetricsReport report;
  report.ks = ks;
  report.recall.assign(ks.size(), 0.0);
  report.ndcg.assign(ks.size(), 0.0);
  for (const auto& [user, item] : split.test) {
    const auto scores = mbrec::score_user_all(trace.final_user.row_span(user), trace.final_item);
    const Index rank =
        oracle::sort_rank(scores, item, exclusions[static_cast<std::size_t>(user)]);
    for (std::size_t i = 0; i < ks.size(); ++i) {
      const auto [hit, gain] = mbrec::metrics_from_rank(rank, ks[i]);
      report.recall[i] += hit;
      report.ndcg[i] += gain;
    }
    ++report.users_evaluated;
  }
  const double inv = 1.0 / static_cast<double>(report.users_evaluated);
  for (std::size_t i = 0; i < ks.size(); ++i) {
    report.recall[i] *= inv;
    report.ndcg[i] *= inv;
  }
  return report;
}

}  // namespace

TEST_CASE("split evaluation equals a brute-force sorter exactly", "[eval]") {
  mbrec::Rng rng(33);
  for (int it = 0; it < 20; ++it) {
    mbrec::SyntheticConfig synth;
    synth.num_users = 12;
    synth.num_items = 15;
    synth.densities = {0.4, 0.25};
    const auto ds = mbrec::generate_synthetic(synth, 100 + static_cast<std::uint64_t>(it));
    const auto split = mbrec::leave_one_out_split(ds);
    REQUIRE_FALSE(split.test.empty());

    ModelConfig config;
    config.embed_dim = 4;
    config.layers = {1, 2};
    config.transform_enabled = (it % 2 == 0);
    config.aggregation = mbrec::Aggregation::kSum;
    const auto params =
        mbrec::init_params(config, ds.num_users, ds.num_items, 200 + static_cast<std::uint64_t>(it));
    std::vector<BehaviorGraph> graphs;
    for (const auto& set : split.train.sets)
      graphs.push_back(BehaviorGraph::build(set, ds.num_users, ds.num_items));

    const std::vector<Index> ks{1, 5, 10};
    const auto fast = mbrec::evaluate_split(params, config, graphs, split, ks, "x");
    const auto brute = brute_evaluate(params, config, graphs, split, ks);
    CHECK(fast.users_evaluated == brute.users_evaluated);
    for (std::size_t i = 0; i < ks.size(); ++i) {
      CHECK(fast.recall[i] == brute.recall[i]);
      CHECK(fast.ndcg[i] == brute.ndcg[i]);
    }
  }
}

TEST_CASE("test-time exclusions cover train positives and validation items", "[eval]") {
  // One user, four items. Train positive: item 0. Validation: item 1.
  // Test: item 2. Item 2 competes only against item 3.
  mbrec::MultiBehaviorDataset ds;
  ds.num_users = 1;
  ds.num_items = 4;
  ds.chain = {"buy"};
  mbrec::InteractionSet set;
  set.entries = {{0, 0, 1}, {0, 1, 2}, {0, 2, 3}};
  ds.sets.push_back(set);
  const auto split = mbrec::leave_one_out_split(ds);
  REQUIRE(split.test.at(0) == 2);
  REQUIRE(split.validation.at(0) == 1);

  ModelConfig config;
  config.embed_dim = 1;
  config.layers = {0};
  config.transform_enabled = false;
  CascadeParams params;
  params.user_embed = Mat(1, 1);
  params.item_embed = Mat(4, 1);
  params.user_embed(0, 0) = 1.0;
  params.item_embed(0, 0) = 4.0;
  params.item_embed(1, 0) = 3.0;
  params.item_embed(2, 0) = 1.0;
  params.item_embed(3, 0) = 3.5;
  std::vector<BehaviorGraph> graphs{
      BehaviorGraph::build(split.train.sets[0], 1, 4)};

  // With items 0 and 1 excluded the test item ranks second behind 3.
  const auto report = mbrec::evaluate_split(params, config, graphs, split, {1, 2}, "");
  CHECK(report.recall[0] == 0.0);
  CHECK(report.recall[1] == 1.0);
  CHECK(report.ndcg[1] == Catch::Approx(1.0 / std::log2(3.0)));

  // Validation-time evaluation excludes only the train positive; the
  // validation item 1 still trails item 3 but beats item 2.
  const auto val = mbrec::evaluate_validation(params, config, graphs, split, {1, 2}, "");
  CHECK(val.users_evaluated == 1);
  CHECK(val.recall[0] == 0.0);
  CHECK(val.recall[1] == 1.0);
}

TEST_CASE("evaluation leaves parameters untouched and repeats bitwise", "[eval]") {
  mbrec::Rng rng(55);
  mbrec::SyntheticConfig synth;
  synth.num_users = 10;
  synth.num_items = 12;
  synth.densities = {0.3, 0.2};
  const auto ds = mbrec::generate_synthetic(synth, 4);
  const auto split = mbrec::leave_one_out_split(ds);
  ModelConfig config;
  config.embed_dim = 3;
  config.layers = {1, 1};
  const auto params = mbrec::init_params(config, ds.num_users, ds.num_items, 8);
  const auto before = params;
  std::vector<BehaviorGraph> graphs;
  for (const auto& set : split.train.sets)
    graphs.push_back(BehaviorGraph::build(set, ds.num_users, ds.num_items));
  const auto a = mbrec::evaluate_split(params, config, graphs, split, {5, 10}, "same");
  const auto b = mbrec::evaluate_split(params, config, graphs, split, {5, 10}, "same");
  CHECK(a == b);
  CHECK(testutil::bitwise_equal(params, before));
  CHECK(a.users_evaluated == static_cast<Index>(split.test.size()));
}

TEST_CASE("split evaluation refuses an empty test map", "[eval]") {
  mbrec::MultiBehaviorDataset ds;
  ds.num_users = 1;
  ds.num_items = 2;
  ds.chain = {"buy"};
  mbrec::InteractionSet set;
  set.entries = {{0, 0, 1}};
  ds.sets.push_back(set);
  const auto split = mbrec::leave_one_out_split(ds);
  REQUIRE(split.test.empty());
  ModelConfig config;
  config.embed_dim = 1;
  config.layers = {0};
  config.transform_enabled = false;
  CascadeParams params;
  params.user_embed = Mat(1, 1);
  params.item_embed = Mat(2, 1);
  std::vector<BehaviorGraph> graphs{BehaviorGraph::build(split.train.sets[0], 1, 2)};
  CHECK_THROWS_AS(mbrec::evaluate_split(params, config, graphs, split, {1}, ""),
                  mbrec::ContractError);
}
