#pragma once

#include <vector>

#include "ptree/tree.hpp"

namespace ptree {

struct BoostConfig {
  int num_trees = 5;           // P, fixed stopping rule
  double factor_gamma = 1e-5;  // shrinkage for the all-tree MVE
  GrowthConfig tree_config;
  FactorSet initial_factors;   // e.g. a market benchmark; may be empty

  void validate() const;
};

struct BoostResult {
  std::vector<PTree> trees;
  std::vector<LeafPortfolios> leaf_blocks;
  FactorSet factors;  // initial factors first, then tree factors in order
  MveSolution mve;    // ridge tangency over all factor columns at factor_gamma
  std::vector<int> degenerate_trees;  // indices of root-only trees, flagged
  int num_initial = 0;
  double factor_gamma = 1e-5;
  int periods_per_year = 12;
};

// Sequential boosting: tree k is grown with incumbents = initial factors plus
// the k-1 factors built so far; the all-tree MVE is re-solved after each tree.
BoostResult boost(const RankedPanel& p, const BoostConfig& cfg);

// Entry k (1-based over trees) = annualized Sharpe of the ridge tangency at
// factor_gamma over the initial factors plus tree factors 1..k.
std::vector<double> cumulative_sharpe(const BoostResult& result);

// Same curve at an arbitrary shrinkage level (used to study the gamma -> 0
// span-nesting limit without regrowing trees).
std::vector<double> cumulative_sharpe(const BoostResult& result, double gamma);

}  // namespace ptree
