#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "ptree/mve.hpp"
#include "ptree/panel.hpp"
#include "ptree/rng.hpp"

namespace ptree {

struct SplitRule {
  int char_index = -1;
  double threshold = 0.0;
};

// Node of a P-Tree. Leaves have left/right = -1 and a leaf_id; internal nodes
// carry a rule. Routing goes left iff z <= threshold.
struct TreeNode {
  SplitRule rule;
  int left = -1;
  int right = -1;
  int leaf_id = -1;

  bool is_leaf() const { return left < 0; }
};

// Time-invariant tree over ranked characteristics. Root at index 0. Children
// of a split are appended left-then-right, so node indices record discovery
// order; leaf_ids are assigned in pre-order (left first) once the structure
// is final, making them a pure function of the structure.
struct PTree {
  // A fresh tree is already valid: one root leaf carrying leaf_id 0.
  std::vector<TreeNode> nodes{TreeNode{SplitRule{}, -1, -1, 0}};
  std::vector<int> split_order;  // internal-node indices, in split order

  int num_leaves() const;
  void validate() const;
};

struct GrowthConfig {
  std::vector<double> grid{-0.6, -0.2, 0.2, 0.6};
  int max_leaves = 10;
  int max_depth = -1;     // < 0 means unlimited; leaf-count cap governs
  int min_leaf_size = 20;  // required in EVERY training period, per child
  double leaf_gamma = 1e-4;
  // < 0 selects the per-size default: 0 with no incumbents, 1e-12 otherwise.
  double criterion_epsilon = -1.0;
  bool full_recompute = false;  // bypass cached moments during the search
  int threads = 1;
  int periods_per_year = 12;

  void validate() const;
  double effective_epsilon(Eigen::Index num_factors) const;
};

// Value-weighted leaf portfolio returns; column order follows leaf_id.
struct LeafPortfolios {
  ReturnMatrix returns;  // T x L
  Eigen::Matrix<std::int64_t, Eigen::Dynamic, Eigen::Dynamic> counts;
  PTree tree;
  std::int64_t empty_cells = 0;  // (leaf, period) cells with no members
};

// leaf_id per record: assignment[t][i].
using LeafAssignment = std::vector<std::vector<std::int32_t>>;

LeafAssignment assign_leaves(const PTree& tree, const RankedPanel& p);
LeafPortfolios leaf_returns(const PTree& tree, const RankedPanel& p);

struct SplitCandidate {
  int node = -1;  // leaf node index to split
  SplitRule rule;
};

// Current leaves x offered characteristics x grid thresholds, minus leaves at
// max_depth. Feasibility (min_leaf_size) is left to evaluation.
std::vector<SplitCandidate> enumerate_candidates(const PTree& tree, const RankedPanel& p,
                                                 const GrowthConfig& cfg);

// Reference candidate scorer: materializes the split, rebuilds all leaf
// portfolios, solves the ridge MVE at leaf_gamma, and returns the criterion
// over incumbents plus the new tree factor. Infeasible children or degenerate
// numerics yield -infinity (reason optionally reported).
double evaluate_split(const SplitCandidate& candidate, const PTree& tree, const RankedPanel& p,
                      const GrowthConfig& cfg, const FactorSet& incumbents,
                      std::string* reason = nullptr);

// Returns a copy of `tree` with the given leaf node split.
PTree apply_split(const PTree& tree, int node_index, SplitRule rule);

struct SplitStep {
  int node = -1;
  SplitRule rule;
  double value = 0.0;  // criterion of the chosen candidate
};

struct GrownTree {
  PTree tree;
  LeafPortfolios leaves;   // evaluated on the panel's original periods
  MveSolution mve;         // ridge tangency over the final leaf columns
  Eigen::VectorXd factor;  // leaves.returns * mve.weights
  std::vector<SplitStep> steps;
  bool root_only = false;
};

// Restriction hooks used by ensembles: grow on a bootstrap period multiset
// and/or a characteristic subset. Empty vectors mean "no restriction".
struct GrowRestriction {
  std::vector<int> offered_chars;
  std::vector<int> period_indices;
};

GrownTree grow_tree(const RankedPanel& p, const GrowthConfig& cfg,
                    const FactorSet& incumbents = {});
GrownTree grow_tree_restricted(const RankedPanel& p, const GrowthConfig& cfg,
                               const FactorSet& incumbents, const GrowRestriction& restriction);

// Criterion-free growth: uniformly random feasible (leaf, char, threshold)
// choices; a draw violating min_leaf_size is rejected and redrawn up to
// max_attempts times, after which the tree stops growing.
GrownTree grow_random_tree(const RankedPanel& p, const GrowthConfig& cfg, Rng& rng,
                           const GrowRestriction& restriction = {}, int max_attempts = 1000);

// Fixed-structure baseline trees. path is a string of 'L'/'R' steps from the
// root ("" = root); every split's parent must already exist in the spec.
struct FixedSplit {
  std::string path;
  int char_index = -1;
  double threshold = 0.0;
};

PTree grow_fixed_tree(const std::vector<FixedSplit>& spec);

// Best criterion over all single additional splits on char_index (any leaf,
// any grid threshold) of the base tree; -infinity when none is feasible.
double incremental_char_value(const PTree& base, const RankedPanel& p, int char_index,
                              const GrowthConfig& cfg);

// Canonical JSON serialization (byte-stable for identical trees) and DOT
// export; DOT labels carry char name, threshold, and median leaf count.
std::string tree_to_json(const PTree& tree);
PTree tree_from_json(const std::string& text);
std::string tree_to_dot(const PTree& tree, const std::vector<std::string>& char_names,
                        const LeafPortfolios* leaves = nullptr);

}  // namespace ptree
