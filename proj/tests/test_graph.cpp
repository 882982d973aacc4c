#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <cstring>
#include <vector>

#include "mbrec/graph.hpp"
#include "oracles.hpp"
#include "test_util.hpp"

using mbrec::BehaviorGraph;
using mbrec::Index;
using mbrec::Interaction;
using mbrec::InteractionSet;
using mbrec::Mat;

namespace {

Mat random_mat(mbrec::Rng& rng, Index rows, Index cols) {
  Mat m(rows, cols);
  for (double& v : m.data()) v = rng.uniform(-1.0, 1.0);
  return m;
}

bool rows_bitwise_equal(const Mat& a, Index ra, const Mat& b, Index rb) {
  return std::memcmp(a.row(ra), b.row(rb),
                     sizeof(double) * static_cast<std::size_t>(a.cols())) == 0;
}

}  // namespace

TEST_CASE("edge weights follow inverse sqrt degree products", "[graph]") {
  InteractionSet set;
  set.entries = {{0, 0, std::nullopt}, {0, 1, std::nullopt}, {1, 1, std::nullopt}};
  const auto g = BehaviorGraph::build(set, 2, 2);
  CHECK(g.num_edges() == 3);

  const auto w0 = g.user_row_weights(0);
  REQUIRE(w0.size() == 2);
  CHECK(w0[0] == Catch::Approx(1.0 / std::sqrt(2.0)).epsilon(1e-15));
  CHECK(w0[1] == Catch::Approx(0.5).epsilon(1e-15));
  const auto w1 = g.user_row_weights(1);
  REQUIRE(w1.size() == 1);
  CHECK(w1[0] == Catch::Approx(1.0 / std::sqrt(2.0)).epsilon(1e-15));

  InteractionSet lone;
  lone.entries = {{0, 0, std::nullopt}};
  const auto single = BehaviorGraph::build(lone, 1, 1);
  CHECK(single.user_row_weights(0)[0] == 1.0);
}

TEST_CASE("graph weights match the dense oracle adjacency", "[graph]") {
  mbrec::Rng rng(41);
  for (int it = 0; it < 20; ++it) {
    const Index m = 1 + static_cast<Index>(rng.below(6));
    const Index n = 1 + static_cast<Index>(rng.below(6));
    const auto set = oracle::random_interactions(rng, m, n, 0.5);
    const auto g = BehaviorGraph::build(set, m, n);
    const Mat adj = oracle::dense_adjacency(set, m, n);
    for (Index u = 0; u < m; ++u) {
      const auto items = g.user_row_items(u);
      const auto weights = g.user_row_weights(u);
      double row_sum = 0.0;
      for (std::size_t k = 0; k < items.size(); ++k) {
        CHECK(weights[k] == Catch::Approx(adj(u, items[k])).margin(1e-15));
        row_sum += weights[k];
      }
      double dense_sum = 0.0;
      for (Index i = 0; i < n; ++i) dense_sum += adj(u, i);
      CHECK(row_sum == Catch::Approx(dense_sum).margin(1e-12));
    }
  }
}

TEST_CASE("zero degree rows are empty and propagate to zero", "[graph]") {
  InteractionSet set;
  set.entries = {{0, 1, std::nullopt}};
  const auto g = BehaviorGraph::build(set, 3, 2);
  CHECK(g.user_row_items(1).empty());
  CHECK(g.user_row_items(2).empty());
  CHECK(g.item_row_users(0).empty());

  Mat users(3, 2), items(2, 2);
  users.fill(1.0);
  items.fill(1.0);
  const auto [ou, oi] = mbrec::propagate_layer(g, users, items);
  CHECK(ou(1, 0) == 0.0);
  CHECK(ou(2, 1) == 0.0);
  CHECK(oi(0, 0) == 0.0);
  CHECK(ou(0, 0) == 1.0);  // single edge, both degrees 1
}

TEST_CASE("graph rejects out-of-bounds interactions", "[graph]") {
  InteractionSet set;
  set.entries = {{0, 5, std::nullopt}};
  CHECK_THROWS_AS(BehaviorGraph::build(set, 2, 2), mbrec::ContractError);
  set.entries = {{-1, 0, std::nullopt}};
  CHECK_THROWS_AS(BehaviorGraph::build(set, 2, 2), mbrec::ContractError);
}

TEST_CASE("duplicate interactions collapse to one edge", "[graph]") {
  InteractionSet set;
  set.entries = {{0, 0, 1}, {0, 0, 2}, {0, 1, 3}, {0, 0, 4}};
  const auto g = BehaviorGraph::build(set, 1, 2);
  CHECK(g.num_edges() == 2);
  // Degree 2, not 4: duplicates do not distort the normalization.
  CHECK(g.user_row_weights(0)[0] == Catch::Approx(1.0 / std::sqrt(2.0)).epsilon(1e-15));
}

TEST_CASE("both csr orientations hold identical weights", "[graph]") {
  mbrec::Rng rng(77);
  const auto set = oracle::random_interactions(rng, 6, 7, 0.4);
  const auto g = BehaviorGraph::build(set, 6, 7);
  std::size_t checked = 0;
  for (Index u = 0; u < 6; ++u) {
    const auto items = g.user_row_items(u);
    const auto weights = g.user_row_weights(u);
    for (std::size_t k = 0; k < items.size(); ++k) {
      const auto users = g.item_row_users(items[k]);
      const auto iw = g.item_row_weights(items[k]);
      bool found = false;
      for (std::size_t q = 0; q < users.size(); ++q) {
        if (users[q] == u) {
          CHECK(iw[q] == weights[k]);  // exact, same computed value
          found = true;
        }
      }
      CHECK(found);
      ++checked;
    }
  }
  CHECK(checked == g.num_edges());
}

TEST_CASE("propagation matches the dense operator", "[graph]") {
  mbrec::Rng rng(13);
  for (int it = 0; it < 30; ++it) {
    const Index m = 1 + static_cast<Index>(rng.below(8));
    const Index n = 1 + static_cast<Index>(rng.below(8));
    const Index d = 1 + static_cast<Index>(rng.below(4));
    const auto set = oracle::random_interactions(rng, m, n, 0.4);
    const auto g = mbrec::build_normalized_adjacency(set, m, n);
    const Mat adj = oracle::dense_adjacency(set, m, n);
    const Mat eu = random_mat(rng, m, d);
    const Mat ei = random_mat(rng, n, d);
    const auto [ou, oi] = mbrec::propagate_layer(g, eu, ei);
    const auto [du, di] = oracle::dense_propagate(adj, eu, ei);
    CHECK(oracle::max_abs_diff(ou, du) < 1e-12);
    CHECK(oracle::max_abs_diff(oi, di) < 1e-12);
  }
}

TEST_CASE("propagation covers every two-user two-item graph", "[graph]") {
  mbrec::Rng rng(29);
  const Interaction all_edges[] = {
      {0, 0, std::nullopt}, {0, 1, std::nullopt}, {1, 0, std::nullopt}, {1, 1, std::nullopt}};
  for (unsigned mask = 0; mask < 16; ++mask) {
    InteractionSet set;
    for (unsigned bit = 0; bit < 4; ++bit)
      if (mask & (1u << bit)) set.entries.push_back(all_edges[bit]);
    const auto g = BehaviorGraph::build(set, 2, 2);
    const Mat adj = oracle::dense_adjacency(set, 2, 2);
    const Mat eu = random_mat(rng, 2, 3);
    const Mat ei = random_mat(rng, 2, 3);
    const auto [ou, oi] = mbrec::propagate_layer(g, eu, ei);
    const auto [du, di] = oracle::dense_propagate(adj, eu, ei);
    CHECK(oracle::max_abs_diff(ou, du) < 1e-12);
    CHECK(oracle::max_abs_diff(oi, di) < 1e-12);
  }
}

TEST_CASE("propagation is linear in the embeddings", "[graph]") {
  mbrec::Rng rng(31);
  const auto set = oracle::random_interactions(rng, 5, 6, 0.5);
  const auto g = BehaviorGraph::build(set, 5, 6);
  const Mat xu = random_mat(rng, 5, 3), yu = random_mat(rng, 5, 3);
  const Mat xi = random_mat(rng, 6, 3), yi = random_mat(rng, 6, 3);
  const double alpha = 1.7, beta = -0.3;

  Mat mix_u(5, 3), mix_i(6, 3);
  for (std::size_t k = 0; k < mix_u.size(); ++k)
    mix_u.data()[k] = alpha * xu.data()[k] + beta * yu.data()[k];
  for (std::size_t k = 0; k < mix_i.size(); ++k)
    mix_i.data()[k] = alpha * xi.data()[k] + beta * yi.data()[k];

  const auto [mu, mi] = mbrec::propagate_layer(g, mix_u, mix_i);
  const auto [xu_out, xi_out] = mbrec::propagate_layer(g, xu, xi);
  const auto [yu_out, yi_out] = mbrec::propagate_layer(g, yu, yi);
  for (std::size_t k = 0; k < mu.size(); ++k)
    CHECK(mu.data()[k] ==
          Catch::Approx(alpha * xu_out.data()[k] + beta * yu_out.data()[k]).margin(1e-12));
  for (std::size_t k = 0; k < mi.size(); ++k)
    CHECK(mi.data()[k] ==
          Catch::Approx(alpha * xi_out.data()[k] + beta * yi_out.data()[k]).margin(1e-12));
}

TEST_CASE("relabeling ids permutes propagation bitwise", "[graph]") {
  mbrec::Rng rng(53);
  const Index m = 5, n = 4, d = 3;
  const auto set = oracle::random_interactions(rng, m, n, 0.5);
  const Index perm_u[] = {2, 0, 4, 1, 3};
  const Index perm_i[] = {3, 1, 0, 2};

  InteractionSet relabeled;
  relabeled.behavior = set.behavior;
  for (const auto& e : set.entries)
    relabeled.entries.push_back({perm_u[e.user], perm_i[e.item], e.ts});

  const Mat eu = random_mat(rng, m, d);
  const Mat ei = random_mat(rng, n, d);
  Mat eu_perm(m, d), ei_perm(n, d);
  for (Index u = 0; u < m; ++u)
    std::memcpy(eu_perm.row(perm_u[u]), eu.row(u), sizeof(double) * d);
  for (Index i = 0; i < n; ++i)
    std::memcpy(ei_perm.row(perm_i[i]), ei.row(i), sizeof(double) * d);

  const auto g = BehaviorGraph::build(set, m, n);
  const auto gp = BehaviorGraph::build(relabeled, m, n);
  const auto [ou, oi] = mbrec::propagate_layer(g, eu, ei);
  const auto [pu, pi] = mbrec::propagate_layer(gp, eu_perm, ei_perm);
  for (Index u = 0; u < m; ++u) CHECK(rows_bitwise_equal(pu, perm_u[u], ou, u));
  for (Index i = 0; i < n; ++i) CHECK(rows_bitwise_equal(pi, perm_i[i], oi, i));
}

TEST_CASE("propagation rejects mismatched embedding shapes", "[graph]") {
  InteractionSet set;
  set.entries = {{0, 0, std::nullopt}};
  const auto g = BehaviorGraph::build(set, 2, 2);
  Mat good_u(2, 3), good_i(2, 3), bad_rows(3, 3), bad_cols(2, 4);
  CHECK_THROWS_AS(mbrec::propagate_layer(g, bad_rows, good_i), mbrec::ContractError);
  CHECK_THROWS_AS(mbrec::propagate_layer(g, good_u, bad_cols), mbrec::ContractError);
}

TEST_CASE("empty interaction sets build empty graphs", "[graph]") {
  InteractionSet set;
  const auto g = BehaviorGraph::build(set, 3, 2);
  CHECK(g.num_edges() == 0);
  Mat eu(3, 2), ei(2, 2);
  eu.fill(4.0);
  ei.fill(4.0);
  const auto [ou, oi] = mbrec::propagate_layer(g, eu, ei);
  for (double v : ou.data()) CHECK(v == 0.0);
  for (double v : oi.data()) CHECK(v == 0.0);
}
