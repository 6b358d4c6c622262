#include <algorithm>
#include <cmath>
#include <set>
#include <vector>

#include <doctest.h>

#include "helpers.hpp"
#include "ptree/forest.hpp"
#include "ptree/panel.hpp"
#include "ptree/rng.hpp"

namespace {

ptree::RankedPanel sample_panel(std::uint64_t seed, int n, int k, int t) {
  ptree::Rng rng(seed);
  return ptree::rank_normalize(testutil::random_panel(rng, n, k, t));
}

ptree::ForestConfig small_forest(int b, int l) {
  ptree::ForestConfig cfg;
  cfg.num_trees = b;
  cfg.chars_per_tree = l;
  cfg.tree_config.max_leaves = 4;
  cfg.tree_config.min_leaf_size = 2;
  cfg.seed = 99;
  return cfg;
}

}  // namespace

TEST_CASE("bootstrap draws are uniform over periods") {
  ptree::Rng rng(5);
  std::vector<int> freq(100, 0);
  for (int rep = 0; rep < 200; ++rep) {
    const auto draw = ptree::bootstrap_periods(100, rng);
    REQUIRE(draw.size() == 100);
    for (const int t : draw) {
      REQUIRE(t >= 0);
      REQUIRE(t < 100);
      ++freq[static_cast<std::size_t>(t)];
    }
  }
  // 20000 draws over 100 cells: expect 200 per cell, sd ~= 14.
  for (const int f : freq) CHECK(std::abs(f - 200) < 70);
}

TEST_CASE("a one-tree forest with identity bootstrap reduces to plain growth") {
  const auto panel = sample_panel(21, 20, 3, 16);
  auto cfg = small_forest(1, 3);  // all characteristics offered
  cfg.identity_bootstrap = true;

  const auto forest = ptree::grow_forest(panel, cfg);
  const auto direct = ptree::grow_tree(panel, cfg.tree_config);

  REQUIRE(forest.trees.size() == 1);
  CHECK(ptree::tree_to_json(forest.trees[0].tree) == ptree::tree_to_json(direct.tree));
  CHECK(forest.trees[0].offered_chars == std::vector<int>{0, 1, 2});

  // Stacked columns are the tree's leaf portfolios on the original periods.
  const auto lp = ptree::leaf_returns(direct.tree, panel);
  REQUIRE(forest.stacked_leaves.P() == lp.returns.P());
  CHECK((forest.stacked_leaves.values - lp.returns.values).norm() == 0.0);
  CHECK(forest.stacked_leaves.labels[0] == "t0_L0");
  CHECK(forest.column_tree == std::vector<int>(static_cast<std::size_t>(lp.returns.P()), 0));
}

TEST_CASE("forests replay exactly per seed and differ across seeds") {
  const auto panel = sample_panel(22, 18, 4, 14);
  const auto cfg = small_forest(4, 2);

  const auto a = ptree::grow_forest(panel, cfg);
  const auto b = ptree::grow_forest(panel, cfg);
  REQUIRE(a.trees.size() == b.trees.size());
  for (std::size_t i = 0; i < a.trees.size(); ++i) {
    CHECK(ptree::tree_to_json(a.trees[i].tree) == ptree::tree_to_json(b.trees[i].tree));
    CHECK(a.trees[i].offered_chars == b.trees[i].offered_chars);
    CHECK(a.trees[i].bootstrap_periods == b.trees[i].bootstrap_periods);
  }

  auto cfg2 = cfg;
  cfg2.seed = 100;
  const auto c = ptree::grow_forest(panel, cfg2);
  bool any_difference = false;
  for (std::size_t i = 0; i < a.trees.size() && !any_difference; ++i)
    any_difference = a.trees[i].bootstrap_periods != c.trees[i].bootstrap_periods ||
                     a.trees[i].offered_chars != c.trees[i].offered_chars;
  CHECK(any_difference);
}

TEST_CASE("forest growth is independent of the worker count") {
  const auto panel = sample_panel(23, 18, 4, 14);
  auto cfg = small_forest(6, 2);
  cfg.threads = 1;
  const auto a = ptree::grow_forest(panel, cfg);
  cfg.threads = 4;
  const auto b = ptree::grow_forest(panel, cfg);
  for (std::size_t i = 0; i < a.trees.size(); ++i)
    CHECK(ptree::tree_to_json(a.trees[i].tree) == ptree::tree_to_json(b.trees[i].tree));
  CHECK((a.stacked_leaves.values - b.stacked_leaves.values).norm() == 0.0);
}

TEST_CASE("offered characteristics are sorted subsets honored by every split") {
  const auto panel = sample_panel(24, 20, 6, 14);
  const auto cfg = small_forest(8, 3);
  const auto forest = ptree::grow_forest(panel, cfg);

  for (const auto& ft : forest.trees) {
    REQUIRE(ft.offered_chars.size() == 3);
    CHECK(std::is_sorted(ft.offered_chars.begin(), ft.offered_chars.end()));
    const std::set<int> offered(ft.offered_chars.begin(), ft.offered_chars.end());
    CHECK(offered.size() == 3);
    for (const int k : offered) {
      CHECK(k >= 0);
      CHECK(k < 6);
    }
    for (const int node : ft.tree.split_order)
      CHECK(offered.count(ft.tree.nodes[static_cast<std::size_t>(node)].rule.char_index) == 1);
    CHECK(ft.bootstrap_periods.size() == panel.num_periods());
  }
}

TEST_CASE("selection probability counts offers and early selections") {
  const auto panel = sample_panel(25, 20, 5, 14);
  const auto cfg = small_forest(10, 2);
  const auto forest = ptree::grow_forest(panel, cfg);

  const auto sel = ptree::selection_probability(forest, 1);
  REQUIRE(sel.offered.size() == 5);

  std::int64_t total_offered = 0, total_selected = 0;
  for (std::size_t k = 0; k < 5; ++k) {
    total_offered += sel.offered[k];
    total_selected += sel.selected[k];
    CHECK(sel.selected[k] <= sel.offered[k]);
    if (sel.offered[k] == 0)
      CHECK(std::isnan(sel.probability[k]));
    else
      CHECK(sel.probability[k] ==
            doctest::Approx(static_cast<double>(sel.selected[k]) /
                            static_cast<double>(sel.offered[k])));
  }
  CHECK(total_offered == 10 * 2);
  // With J = 1, at most one selection per non-degenerate tree.
  CHECK(total_selected <= 10);

  // Cross-check the J = 1 counts against the trees themselves.
  std::vector<std::int64_t> expect(5, 0);
  for (const auto& ft : forest.trees)
    if (!ft.tree.split_order.empty()) {
      const int root = ft.tree.split_order[0];
      ++expect[static_cast<std::size_t>(
          ft.tree.nodes[static_cast<std::size_t>(root)].rule.char_index)];
    }
  for (std::size_t k = 0; k < 5; ++k) CHECK(sel.selected[k] == expect[k]);

  CHECK_THROWS_AS(ptree::selection_probability(forest, 0), std::invalid_argument);
}

TEST_CASE("random-split forests never read returns") {
  ptree::Rng rng(31);
  const auto base = testutil::random_panel(rng, 22, 4, 12);
  auto other = base;
  ptree::Rng noise(777);
  for (auto& cs : other.sections)
    for (double& r : cs.returns) r = noise.normal(0.0, 0.08);

  auto cfg = small_forest(5, 2);
  cfg.split_mode = ptree::SplitMode::random;

  const auto a = ptree::grow_forest(ptree::rank_normalize(base), cfg);
  const auto b = ptree::grow_forest(ptree::rank_normalize(other), cfg);
  for (std::size_t i = 0; i < a.trees.size(); ++i)
    CHECK(ptree::tree_to_json(a.trees[i].tree) == ptree::tree_to_json(b.trees[i].tree));
}

TEST_CASE("SDF sweep: column counts, ordering, and hand-checked metrics") {
  const auto panel = sample_panel(26, 20, 3, 30);
  auto cfg = small_forest(6, 2);
  cfg.split_mode = ptree::SplitMode::random;
  const auto forest = ptree::grow_forest(panel, cfg);

  ptree::PeriodMask mask;
  mask.included.assign(30, 0);
  for (int t = 0; t < 20; ++t) mask.included[static_cast<std::size_t>(t)] = 1;

  const std::vector<double> gammas{1e-3, 1.0};
  const std::vector<double> complexities{0.1, 0.3};
  const auto cells = ptree::sdf_sweep(forest, panel, mask, gammas, complexities, 12);
  REQUIRE(cells.size() == 4);
  CHECK(cells[0].gamma == 1e-3);
  CHECK(cells[1].complexity == 0.3);
  CHECK(cells[0].num_columns == 2);  // ceil(0.1 * 20)
  CHECK(cells[1].num_columns == 6);  // ceil(0.3 * 20)

  // Recompute one cell through the public pieces.
  Eigen::MatrixXd all(30, 0);
  for (const auto& ft : forest.trees) {
    const auto lp = ptree::leaf_returns(ft.tree, panel);
    const Eigen::Index old = all.cols();
    all.conservativeResize(Eigen::NoChange, old + lp.returns.P());
    all.rightCols(lp.returns.P()) = lp.returns.values;
  }
  ptree::ReturnMatrix train{all.topRows(20).leftCols(6), {}};
  ptree::ReturnMatrix test{all.bottomRows(10).leftCols(6), {}};
  const auto sdf = ptree::sdf_ridge_weights(train, 1e-3);
  CHECK(cells[1].oos_pricing_error == doctest::Approx(ptree::pricing_error(sdf, test)).epsilon(1e-12));
  CHECK(cells[1].oos_sharpe ==
        doctest::Approx(ptree::annualized_sharpe(Eigen::VectorXd(test.values * sdf.weights), 12))
            .epsilon(1e-12));

  // Asking for more columns than the forest stacked is an error that says so.
  CHECK_THROWS_WITH_AS(ptree::sdf_sweep(forest, panel, mask, {1e-3}, {1000.0}, 12),
                       doctest::Contains("grow more trees"), std::invalid_argument);
  ptree::PeriodMask all_train;
  all_train.included.assign(30, 1);
  CHECK_THROWS_AS(ptree::sdf_sweep(forest, panel, all_train, gammas, complexities, 12),
                  std::invalid_argument);
}

TEST_CASE("forest config validation") {
  const auto panel = sample_panel(27, 10, 3, 8);
  auto cfg = small_forest(2, 5);  // more chars per tree than exist
  CHECK_THROWS_AS(ptree::grow_forest(panel, cfg), std::invalid_argument);
  cfg = small_forest(0, 2);
  CHECK_THROWS_AS(ptree::grow_forest(panel, cfg), std::invalid_argument);
}
