#pragma once

#include <cstdint>
#include <vector>

#include "ptree/tree.hpp"

namespace ptree {

enum class SplitMode { goal_oriented, random };

struct ForestConfig {
  int num_trees = 1000;     // B
  int chars_per_tree = 20;  // L, drawn without replacement per tree
  GrowthConfig tree_config;
  std::uint64_t seed = 0;
  SplitMode split_mode = SplitMode::goal_oriented;
  int threads = 1;
  bool identity_bootstrap = false;  // test hook: use the original period order

  void validate(std::size_t num_chars) const;
};

struct ForestTree {
  PTree tree;
  std::vector<int> offered_chars;
  std::vector<int> bootstrap_periods;
};

struct Forest {
  std::vector<ForestTree> trees;
  ReturnMatrix stacked_leaves;  // evaluated on the ORIGINAL training periods
  std::vector<int> column_tree;  // stacked column -> tree index
  std::size_t num_chars = 0;
  std::uint64_t seed = 0;
};

// T draws with replacement from 0..T-1 (whole cross-sections preserved).
std::vector<int> bootstrap_periods(int t, Rng& rng);

// Per tree b: derive stream (seed, b), draw bootstrap periods, draw
// chars_per_tree characteristics without replacement, grow per split_mode;
// then evaluate every frozen tree on the original panel and stack the leaf
// columns in tree order. Trees grow in parallel; per-tree streams keep the
// result independent of scheduling.
Forest grow_forest(const RankedPanel& p, const ForestConfig& cfg);

struct SelectionProbability {
  std::vector<std::int64_t> offered;   // trees offering the characteristic
  std::vector<std::int64_t> selected;  // trees using it in the first J splits
  std::vector<double> probability;     // NaN where never offered
};

SelectionProbability selection_probability(const Forest& f, int j);

struct SweepCell {
  double gamma = 0.0;
  double complexity = 0.0;
  int num_columns = 0;  // P = ceil(c * T_train)
  double oos_sharpe = 0.0;
  double oos_pricing_error = 0.0;
};

// Re-evaluates the forest's stacked leaves on `panel` (train + test periods),
// fits the ridge SDF on the masked training rows for each (gamma, c) pair
// with the first ceil(c * T_train) columns in tree order, and reports
// out-of-sample annualized Sharpe and pricing error on the remaining rows.
std::vector<SweepCell> sdf_sweep(const Forest& f, const RankedPanel& panel,
                                 const PeriodMask& train_mask, const std::vector<double>& gammas,
                                 const std::vector<double>& complexities,
                                 int periods_per_year = 12);

}  // namespace ptree
