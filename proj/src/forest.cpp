#include "ptree/forest.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <limits>
#include <numeric>
#include <set>
#include <stdexcept>
#include <thread>

namespace ptree {

void ForestConfig::validate(std::size_t num_chars) const {
  if (num_trees < 1) throw std::invalid_argument("ForestConfig: num_trees must be >= 1");
  if (chars_per_tree < 1 || chars_per_tree > static_cast<int>(num_chars))
    throw std::invalid_argument("ForestConfig: chars_per_tree must lie in [1, K]");
  if (threads < 1) throw std::invalid_argument("ForestConfig: threads must be >= 1");
  tree_config.validate();
}

std::vector<int> bootstrap_periods(int t, Rng& rng) {
  if (t < 1) throw std::invalid_argument("bootstrap_periods: T must be >= 1");
  std::vector<int> out(static_cast<std::size_t>(t));
  for (int& v : out) v = static_cast<int>(rng.bounded(static_cast<std::uint64_t>(t)));
  return out;
}

namespace {

// Partial Fisher-Yates draw of `l` distinct indices from 0..k-1, then sorted
// so the offered set is canonical.
std::vector<int> draw_chars(std::size_t k, int l, Rng& rng) {
  std::vector<int> pool(k);
  std::iota(pool.begin(), pool.end(), 0);
  for (int j = 0; j < l; ++j) {
    const auto r = static_cast<std::size_t>(j) +
                   static_cast<std::size_t>(rng.bounded(static_cast<std::uint64_t>(k - static_cast<std::size_t>(j))));
    std::swap(pool[static_cast<std::size_t>(j)], pool[r]);
  }
  std::vector<int> out(pool.begin(), pool.begin() + l);
  std::sort(out.begin(), out.end());
  return out;
}

}  // namespace

Forest grow_forest(const RankedPanel& p, const ForestConfig& cfg) {
  cfg.validate(p.num_chars());
  const auto t = static_cast<int>(p.num_periods());
  const auto k = p.num_chars();

  Forest forest;
  forest.seed = cfg.seed;
  forest.num_chars = k;
  forest.trees.resize(static_cast<std::size_t>(cfg.num_trees));
  std::vector<LeafPortfolios> blocks(static_cast<std::size_t>(cfg.num_trees));

  GrowthConfig tree_cfg = cfg.tree_config;
  tree_cfg.threads = 1;  // parallelism lives at the tree level here

  auto grow_one = [&](int b) {
    Rng rng(cfg.seed, static_cast<std::uint64_t>(b));
    GrowRestriction restriction;
    restriction.period_indices = cfg.identity_bootstrap ? std::vector<int>{}
                                                        : bootstrap_periods(t, rng);
    restriction.offered_chars =
        cfg.chars_per_tree == static_cast<int>(k) ? std::vector<int>{} : draw_chars(k, cfg.chars_per_tree, rng);

    GrownTree grown = cfg.split_mode == SplitMode::goal_oriented
                          ? grow_tree_restricted(p, tree_cfg, FactorSet{}, restriction)
                          : grow_random_tree(p, tree_cfg, rng, restriction);

    ForestTree& slot = forest.trees[static_cast<std::size_t>(b)];
    slot.tree = std::move(grown.tree);
    slot.offered_chars = restriction.offered_chars.empty()
                             ? [&] {
                                 std::vector<int> all(k);
                                 std::iota(all.begin(), all.end(), 0);
                                 return all;
                               }()
                             : restriction.offered_chars;
    slot.bootstrap_periods = restriction.period_indices;
    blocks[static_cast<std::size_t>(b)] = std::move(grown.leaves);
  };

  const int nthreads = std::min(cfg.threads, cfg.num_trees);
  if (nthreads <= 1) {
    for (int b = 0; b < cfg.num_trees; ++b) grow_one(b);
  } else {
    std::atomic<int> next{0};
    std::vector<std::thread> pool;
    pool.reserve(static_cast<std::size_t>(nthreads));
    for (int w = 0; w < nthreads; ++w) {
      pool.emplace_back([&] {
        for (int b = next.fetch_add(1); b < cfg.num_trees; b = next.fetch_add(1)) grow_one(b);
      });
    }
    for (std::thread& th : pool) th.join();
  }

  Eigen::Index total_cols = 0;
  for (const LeafPortfolios& lp : blocks) total_cols += lp.returns.P();
  forest.stacked_leaves.values.resize(static_cast<Eigen::Index>(t), total_cols);
  forest.stacked_leaves.labels.reserve(static_cast<std::size_t>(total_cols));
  forest.column_tree.reserve(static_cast<std::size_t>(total_cols));
  Eigen::Index col = 0;
  for (int b = 0; b < cfg.num_trees; ++b) {
    const LeafPortfolios& lp = blocks[static_cast<std::size_t>(b)];
    forest.stacked_leaves.values.middleCols(col, lp.returns.P()) = lp.returns.values;
    for (const std::string& label : lp.returns.labels) {
      forest.stacked_leaves.labels.push_back("t" + std::to_string(b) + "_" + label);
      forest.column_tree.push_back(b);
    }
    col += lp.returns.P();
  }
  return forest;
}

SelectionProbability selection_probability(const Forest& f, int j) {
  if (j < 1) throw std::invalid_argument("selection_probability: J must be >= 1");
  const std::size_t k = f.num_chars;
  SelectionProbability out;
  out.offered.assign(k, 0);
  out.selected.assign(k, 0);
  out.probability.assign(k, std::numeric_limits<double>::quiet_NaN());

  for (const ForestTree& ft : f.trees) {
    for (const int c : ft.offered_chars) out.offered[static_cast<std::size_t>(c)] += 1;
    std::set<int> used;
    const auto first_j = std::min<std::size_t>(static_cast<std::size_t>(j), ft.tree.split_order.size());
    for (std::size_t s = 0; s < first_j; ++s) {
      const int node = ft.tree.split_order[s];
      used.insert(ft.tree.nodes[static_cast<std::size_t>(node)].rule.char_index);
    }
    for (const int c : used) out.selected[static_cast<std::size_t>(c)] += 1;
  }
  for (std::size_t c = 0; c < k; ++c)
    if (out.offered[c] > 0)
      out.probability[c] =
          static_cast<double>(out.selected[c]) / static_cast<double>(out.offered[c]);
  return out;
}

std::vector<SweepCell> sdf_sweep(const Forest& f, const RankedPanel& panel,
                                 const PeriodMask& train_mask, const std::vector<double>& gammas,
                                 const std::vector<double>& complexities, int periods_per_year) {
  if (train_mask.included.size() != panel.num_periods())
    throw std::invalid_argument("sdf_sweep: train mask does not cover the panel");
  Eigen::Index t_train = 0, t_test = 0;
  for (const auto flag : train_mask.included) (flag ? t_train : t_test) += 1;
  if (t_train < 1 || t_test < 1)
    throw std::invalid_argument("sdf_sweep: need at least one train and one test period");

  // Stack every tree's leaf columns over the full panel, tree order.
  Eigen::Index total_cols = 0;
  std::vector<LeafPortfolios> blocks;
  blocks.reserve(f.trees.size());
  for (const ForestTree& ft : f.trees) {
    blocks.push_back(leaf_returns(ft.tree, panel));
    total_cols += blocks.back().returns.P();
  }
  Eigen::MatrixXd all(static_cast<Eigen::Index>(panel.num_periods()), total_cols);
  Eigen::Index col = 0;
  for (const LeafPortfolios& lp : blocks) {
    all.middleCols(col, lp.returns.P()) = lp.returns.values;
    col += lp.returns.P();
  }

  Eigen::MatrixXd train(t_train, total_cols), test(t_test, total_cols);
  Eigen::Index tr = 0, te = 0;
  for (std::size_t s = 0; s < train_mask.included.size(); ++s) {
    if (train_mask.included[s])
      train.row(tr++) = all.row(static_cast<Eigen::Index>(s));
    else
      test.row(te++) = all.row(static_cast<Eigen::Index>(s));
  }

  std::vector<SweepCell> out;
  out.reserve(gammas.size() * complexities.size());
  for (const double gamma : gammas) {
    for (const double c : complexities) {
      const auto p_cols =
          static_cast<Eigen::Index>(std::ceil(c * static_cast<double>(t_train)));
      if (p_cols < 1)
        throw std::invalid_argument("sdf_sweep: complexity yields zero columns");
      if (p_cols > total_cols)
        throw std::invalid_argument(
            "sdf_sweep: complexity " + std::to_string(c) + " needs " + std::to_string(p_cols) +
            " columns but the forest stacked only " + std::to_string(total_cols) +
            "; grow more trees");

      ReturnMatrix rm_train{train.leftCols(p_cols), {}};
      const SdfSolution sdf = sdf_ridge_weights(rm_train, gamma);

      SweepCell cell;
      cell.gamma = gamma;
      cell.complexity = c;
      cell.num_columns = static_cast<int>(p_cols);
      const Eigen::VectorXd oos = test.leftCols(p_cols) * sdf.weights;
      try {
        cell.oos_sharpe = annualized_sharpe(oos, periods_per_year);
      } catch (const std::exception&) {
        cell.oos_sharpe = std::numeric_limits<double>::quiet_NaN();
      }
      ReturnMatrix rm_test{test.leftCols(p_cols), {}};
      cell.oos_pricing_error = pricing_error(sdf, rm_test);
      out.push_back(cell);
    }
  }
  return out;
}

}  // namespace ptree
