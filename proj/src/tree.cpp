#include "ptree/tree.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <limits>
#include <sstream>
#include <stdexcept>
#include <thread>

#include <json.hpp>

#include "ptree/kernels.hpp"

namespace ptree {
namespace {

constexpr double kNegInf = -std::numeric_limits<double>::infinity();

void assign_leaf_ids(PTree& tree) {
  // Pre-order, left first: ids become a pure function of the structure.
  int next = 0;
  std::vector<int> stack{0};
  while (!stack.empty()) {
    const int n = stack.back();
    stack.pop_back();
    TreeNode& node = tree.nodes[static_cast<std::size_t>(n)];
    if (node.is_leaf()) {
      node.leaf_id = next++;
    } else {
      node.leaf_id = -1;
      stack.push_back(node.right);
      stack.push_back(node.left);
    }
  }
}

std::vector<int> node_depths(const PTree& tree) {
  std::vector<int> depth(tree.nodes.size(), 0);
  std::vector<int> stack{0};
  while (!stack.empty()) {
    const int n = stack.back();
    stack.pop_back();
    const TreeNode& node = tree.nodes[static_cast<std::size_t>(n)];
    if (!node.is_leaf()) {
      depth[static_cast<std::size_t>(node.left)] = depth[static_cast<std::size_t>(n)] + 1;
      depth[static_cast<std::size_t>(node.right)] = depth[static_cast<std::size_t>(n)] + 1;
      stack.push_back(node.right);
      stack.push_back(node.left);
    }
  }
  return depth;
}

inline int route_record(const PTree& tree, const CrossSection& cs, std::size_t i) {
  int n = 0;
  while (!tree.nodes[static_cast<std::size_t>(n)].is_leaf()) {
    const TreeNode& node = tree.nodes[static_cast<std::size_t>(n)];
    const double z = cs.chars[static_cast<std::size_t>(node.rule.char_index)][i];
    n = z <= node.rule.threshold ? node.left : node.right;
  }
  return n;
}

int max_rule_char(const PTree& tree) {
  int m = -1;
  for (const TreeNode& n : tree.nodes)
    if (!n.is_leaf()) m = std::max(m, n.rule.char_index);
  return m;
}

}  // namespace

int PTree::num_leaves() const {
  int n = 0;
  for (const TreeNode& node : nodes) n += node.is_leaf() ? 1 : 0;
  return n;
}

void PTree::validate() const {
  if (nodes.empty()) throw std::invalid_argument("PTree: no nodes");
  const auto size = static_cast<int>(nodes.size());
  std::vector<int> parents(nodes.size(), -1);
  int internal = 0;
  for (int i = 0; i < size; ++i) {
    const TreeNode& n = nodes[static_cast<std::size_t>(i)];
    if (n.is_leaf()) {
      if (n.right >= 0) throw std::invalid_argument("PTree: half-leaf node");
      continue;
    }
    ++internal;
    if (n.left <= 0 || n.left >= size || n.right <= 0 || n.right >= size || n.left == n.right)
      throw std::invalid_argument("PTree: child index out of range");
    for (const int c : {n.left, n.right}) {
      if (parents[static_cast<std::size_t>(c)] >= 0)
        throw std::invalid_argument("PTree: node has two parents");
      parents[static_cast<std::size_t>(c)] = i;
    }
    if (n.rule.char_index < 0) throw std::invalid_argument("PTree: internal node without a rule");
  }
  for (int i = 1; i < size; ++i)
    if (parents[static_cast<std::size_t>(i)] < 0)
      throw std::invalid_argument("PTree: unreachable node");
  const int leaves = num_leaves();
  if (leaves != internal + 1) throw std::invalid_argument("PTree: leaf/split count mismatch");
  std::vector<std::uint8_t> seen(static_cast<std::size_t>(leaves), 0);
  for (const TreeNode& n : nodes) {
    if (!n.is_leaf()) continue;
    if (n.leaf_id < 0 || n.leaf_id >= leaves || seen[static_cast<std::size_t>(n.leaf_id)])
      throw std::invalid_argument("PTree: leaf ids are not a permutation of 0..L-1");
    seen[static_cast<std::size_t>(n.leaf_id)] = 1;
  }
  if (static_cast<int>(split_order.size()) != internal)
    throw std::invalid_argument("PTree: split_order does not cover internal nodes");
  std::vector<std::uint8_t> in_order(nodes.size(), 0);
  for (const int n : split_order) {
    if (n < 0 || n >= size || nodes[static_cast<std::size_t>(n)].is_leaf() ||
        in_order[static_cast<std::size_t>(n)])
      throw std::invalid_argument("PTree: split_order entry invalid or repeated");
    in_order[static_cast<std::size_t>(n)] = 1;
  }
}

void GrowthConfig::validate() const {
  if (max_leaves < 2) throw std::invalid_argument("GrowthConfig: max_leaves must be >= 2");
  if (min_leaf_size < 1) throw std::invalid_argument("GrowthConfig: min_leaf_size must be >= 1");
  if (leaf_gamma < 0.0) throw std::invalid_argument("GrowthConfig: leaf_gamma must be >= 0");
  if (threads < 1) throw std::invalid_argument("GrowthConfig: threads must be >= 1");
  for (std::size_t i = 0; i < grid.size(); ++i) {
    if (grid[i] <= -1.0 || grid[i] >= 1.0)
      throw std::invalid_argument("GrowthConfig: grid values must lie in (-1, 1)");
    if (i > 0 && grid[i] <= grid[i - 1])
      throw std::invalid_argument("GrowthConfig: grid must be strictly increasing");
  }
}

double GrowthConfig::effective_epsilon(Eigen::Index num_factors) const {
  return criterion_epsilon >= 0.0 ? criterion_epsilon : default_criterion_epsilon(num_factors);
}

LeafAssignment assign_leaves(const PTree& tree, const RankedPanel& p) {
  tree.validate();
  if (max_rule_char(tree) >= static_cast<int>(p.num_chars()))
    throw std::invalid_argument("assign_leaves: tree references characteristic beyond panel K");
  LeafAssignment out(p.sections.size());
  for (std::size_t t = 0; t < p.sections.size(); ++t) {
    const CrossSection& cs = p.sections[t];
    out[t].resize(cs.size());
    for (std::size_t i = 0; i < cs.size(); ++i) {
      const int node = route_record(tree, cs, i);
      out[t][i] = tree.nodes[static_cast<std::size_t>(node)].leaf_id;
    }
  }
  return out;
}

LeafPortfolios leaf_returns(const PTree& tree, const RankedPanel& p) {
  tree.validate();
  if (max_rule_char(tree) >= static_cast<int>(p.num_chars()))
    throw std::invalid_argument("leaf_returns: tree references characteristic beyond panel K");
  const int leaves = tree.num_leaves();
  const auto T = static_cast<Eigen::Index>(p.num_periods());

  LeafPortfolios lp;
  lp.tree = tree;
  lp.returns.values = Eigen::MatrixXd::Zero(T, leaves);
  lp.counts.setZero(T, leaves);
  lp.returns.labels.reserve(static_cast<std::size_t>(leaves));
  for (int l = 0; l < leaves; ++l) lp.returns.labels.push_back("L" + std::to_string(l));

  std::vector<double> wsum(static_cast<std::size_t>(leaves));
  std::vector<double> wrsum(static_cast<std::size_t>(leaves));
  for (Eigen::Index t = 0; t < T; ++t) {
    const CrossSection& cs = p.sections[static_cast<std::size_t>(t)];
    std::fill(wsum.begin(), wsum.end(), 0.0);
    std::fill(wrsum.begin(), wrsum.end(), 0.0);
    for (std::size_t i = 0; i < cs.size(); ++i) {
      const int node = route_record(tree, cs, i);
      const auto l =
          static_cast<std::size_t>(tree.nodes[static_cast<std::size_t>(node)].leaf_id);
      wsum[l] += cs.weight_base[i];
      wrsum[l] += cs.weight_base[i] * cs.returns[i];
      lp.counts(t, static_cast<Eigen::Index>(l)) += 1;
    }
    for (int l = 0; l < leaves; ++l) {
      if (lp.counts(t, l) > 0)
        lp.returns.values(t, l) = wrsum[static_cast<std::size_t>(l)] / wsum[static_cast<std::size_t>(l)];
      else
        ++lp.empty_cells;
    }
  }
  return lp;
}

std::vector<SplitCandidate> enumerate_candidates(const PTree& tree, const RankedPanel& p,
                                                 const GrowthConfig& cfg) {
  tree.validate();
  cfg.validate();
  const std::vector<int> depth = node_depths(tree);
  std::vector<SplitCandidate> out;
  for (std::size_t n = 0; n < tree.nodes.size(); ++n) {
    if (!tree.nodes[n].is_leaf()) continue;
    if (cfg.max_depth >= 0 && depth[n] >= cfg.max_depth) continue;
    for (int k = 0; k < static_cast<int>(p.num_chars()); ++k)
      for (const double thr : cfg.grid)
        out.push_back(SplitCandidate{static_cast<int>(n), SplitRule{k, thr}});
  }
  return out;
}

PTree apply_split(const PTree& tree, int node_index, SplitRule rule) {
  if (node_index < 0 || node_index >= static_cast<int>(tree.nodes.size()) ||
      !tree.nodes[static_cast<std::size_t>(node_index)].is_leaf())
    throw std::invalid_argument("apply_split: node is not a leaf of the tree");
  PTree out = tree;
  TreeNode& node = out.nodes[static_cast<std::size_t>(node_index)];
  node.rule = rule;
  node.left = static_cast<int>(out.nodes.size());
  node.right = node.left + 1;
  node.leaf_id = -1;
  out.nodes.emplace_back();
  out.nodes.emplace_back();
  out.split_order.push_back(node_index);
  assign_leaf_ids(out);
  return out;
}

double evaluate_split(const SplitCandidate& candidate, const PTree& tree, const RankedPanel& p,
                      const GrowthConfig& cfg, const FactorSet& incumbents, std::string* reason) {
  cfg.validate();
  if (!incumbents.empty() &&
      incumbents.T() != static_cast<Eigen::Index>(p.num_periods()))
    throw std::invalid_argument("evaluate_split: incumbent factor length != panel periods");

  const PTree split = apply_split(tree, candidate.node, candidate.rule);
  const LeafPortfolios lp = leaf_returns(split, p);

  const TreeNode& parent = split.nodes[static_cast<std::size_t>(candidate.node)];
  const int left_leaf = split.nodes[static_cast<std::size_t>(parent.left)].leaf_id;
  const int right_leaf = split.nodes[static_cast<std::size_t>(parent.right)].leaf_id;
  for (const int l : {left_leaf, right_leaf}) {
    if (lp.counts.col(l).minCoeff() < cfg.min_leaf_size) {
      if (reason != nullptr) *reason = "child below min_leaf_size in some period";
      return kNegInf;
    }
  }

  try {
    const MveSolution mve = ridge_mve_weights(lp.returns, cfg.leaf_gamma, cfg.periods_per_year);
    FactorSet f;
    const Eigen::Index m = incumbents.count();
    f.series.resize(lp.returns.T(), m + 1);
    if (m > 0) f.series.leftCols(m) = incumbents.series;
    f.series.col(m) = lp.returns.values * mve.weights;
    f.provenance.resize(static_cast<std::size_t>(m + 1));
    return criterion_value(f, cfg.effective_epsilon(m + 1));
  } catch (const std::exception& e) {
    if (reason != nullptr) *reason = e.what();
    return kNegInf;
  }
}

namespace {

// ---------------------------------------------------------------------------
// Growth engine. Works on a row view (identity or bootstrap multiset of
// periods) and an offered-characteristic subset. The goal-oriented search
// keeps per-leaf columns plus their Gram/mean cross-moments cached, so a
// candidate costs one bucket scan plus O(P) dot products; cfg.full_recompute
// bypasses every cache and re-solves from materialized columns.
// ---------------------------------------------------------------------------
class Grower {
 public:
  Grower(const RankedPanel& p, const GrowthConfig& cfg, const FactorSet& incumbents,
         const GrowRestriction& restriction)
      : p_(p), cfg_(cfg) {
    cfg_.validate();
    if (p.num_periods() == 0) throw std::invalid_argument("grow_tree: empty panel");

    if (restriction.period_indices.empty()) {
      rows_.resize(p.num_periods());
      for (std::size_t s = 0; s < rows_.size(); ++s) rows_[s] = static_cast<int>(s);
    } else {
      rows_ = restriction.period_indices;
      for (const int r : rows_)
        if (r < 0 || r >= static_cast<int>(p.num_periods()))
          throw std::invalid_argument("grow_tree: bootstrap period index out of range");
    }
    t_rows_ = static_cast<Eigen::Index>(rows_.size());

    if (restriction.offered_chars.empty()) {
      chars_.resize(p.num_chars());
      for (std::size_t k = 0; k < chars_.size(); ++k) chars_[k] = static_cast<int>(k);
    } else {
      chars_ = restriction.offered_chars;
      std::sort(chars_.begin(), chars_.end());
      for (const int k : chars_)
        if (k < 0 || k >= static_cast<int>(p.num_chars()))
          throw std::invalid_argument("grow_tree: offered characteristic out of range");
    }

    if (!incumbents.empty()) {
      if (incumbents.T() != static_cast<Eigen::Index>(p.num_periods()))
        throw std::invalid_argument("grow_tree: incumbent factor length != panel periods");
      inc_.resize(t_rows_, incumbents.count());
      for (Eigen::Index s = 0; s < t_rows_; ++s)
        inc_.row(s) = incumbents.series.row(rows_[static_cast<std::size_t>(s)]);
    } else {
      inc_.resize(t_rows_, 0);
    }

    init_root();
  }

  GrownTree run_goal_oriented() {
    const int grid_n = static_cast<int>(cfg_.grid.size());
    while (static_cast<int>(leaves_.size()) < cfg_.max_leaves && grid_n > 0) {
      const Best best = search_round();
      if (!(best.value > kNegInf)) break;
      commit(best, /*with_moments=*/true);
      steps_.push_back(SplitStep{best.node, SplitRule{best.char_index, cfg_.grid[static_cast<std::size_t>(best.thr_index)]}, best.value});
    }
    return finalize();
  }

  GrownTree run_random(Rng& rng, int max_attempts) {
    const auto grid_n = static_cast<std::uint64_t>(cfg_.grid.size());
    const auto char_n = static_cast<std::uint64_t>(chars_.size());
    if (grid_n == 0 || char_n == 0) return finalize();
    while (static_cast<int>(leaves_.size()) < cfg_.max_leaves) {
      std::vector<int> eligible;
      for (std::size_t l = 0; l < leaves_.size(); ++l)
        if (cfg_.max_depth < 0 || leaves_[l].depth < cfg_.max_depth)
          eligible.push_back(static_cast<int>(l));
      if (eligible.empty()) break;

      bool committed = false;
      for (int attempt = 0; attempt < max_attempts; ++attempt) {
        const int pos = eligible[rng.bounded(eligible.size())];
        const int k = chars_[rng.bounded(char_n)];
        const int thr_idx = static_cast<int>(rng.bounded(grid_n));
        if (!random_feasible(pos, k, cfg_.grid[static_cast<std::size_t>(thr_idx)])) continue;
        Best b;
        b.value = 0.0;
        b.node = leaves_[static_cast<std::size_t>(pos)].node;
        b.char_index = k;
        b.thr_index = thr_idx;
        commit(b, /*with_moments=*/false);
        steps_.push_back(SplitStep{b.node, SplitRule{k, cfg_.grid[static_cast<std::size_t>(thr_idx)]}, 0.0});
        committed = true;
        break;
      }
      if (!committed) break;
    }
    return finalize();
  }

 private:
  struct LeafState {
    int node = 0;
    int depth = 0;
    std::vector<std::vector<std::int32_t>> members;  // per row view
    std::int64_t min_count = 0;
  };

  // Candidate outcome; ordered by value desc, then (node, char, threshold)
  // asc so the reduction is a total order independent of evaluation order.
  struct Best {
    double value = kNegInf;
    int node = std::numeric_limits<int>::max();
    int char_index = std::numeric_limits<int>::max();
    int thr_index = std::numeric_limits<int>::max();

    bool better_than(const Best& o) const {
      if (value != o.value) return value > o.value;
      if (node != o.node) return node < o.node;
      if (char_index != o.char_index) return char_index < o.char_index;
      return thr_index < o.thr_index;
    }
  };

  const CrossSection& section(Eigen::Index s) const {
    return p_.sections[static_cast<std::size_t>(rows_[static_cast<std::size_t>(s)])];
  }

  void init_root() {
    LeafState root;
    root.node = 0;
    root.depth = 0;
    root.members.resize(static_cast<std::size_t>(t_rows_));
    std::int64_t min_count = std::numeric_limits<std::int64_t>::max();
    for (Eigen::Index s = 0; s < t_rows_; ++s) {
      const CrossSection& cs = section(s);
      auto& m = root.members[static_cast<std::size_t>(s)];
      m.resize(cs.size());
      for (std::size_t i = 0; i < cs.size(); ++i) m[i] = static_cast<std::int32_t>(i);
      min_count = std::min<std::int64_t>(min_count, static_cast<std::int64_t>(cs.size()));
    }
    root.min_count = min_count;
    leaves_.push_back(std::move(root));

    const int cap = cfg_.max_leaves;
    cols_.resize(t_rows_, cap);
    gram_.resize(cap, cap);
    col_mean_.resize(cap);
    inc_cross_.resize(inc_.cols(), cap);
    if (inc_.cols() > 0) {
      inc_gram_ = (inc_.transpose() * inc_) / static_cast<double>(t_rows_);
      inc_mean_ = inc_.colwise().mean();
    }
    refresh_column(0);
  }

  // Recomputes column `pos` (and its cached moments) from leaf membership.
  void refresh_column(int pos) {
    const auto& members = leaves_[static_cast<std::size_t>(pos)].members;
    for (Eigen::Index s = 0; s < t_rows_; ++s) {
      const CrossSection& cs = section(s);
      double w = 0.0, wr = 0.0;
      for (const std::int32_t i : members[static_cast<std::size_t>(s)]) {
        const auto iu = static_cast<std::size_t>(i);
        w += cs.weight_base[iu];
        wr += cs.weight_base[iu] * cs.returns[iu];
      }
      cols_(s, pos) = w > 0.0 ? wr / w : 0.0;
    }
    update_moments(pos);
  }

  void update_moments(int pos) {
    const auto& k = kernels::ops();
    const double t = static_cast<double>(t_rows_);
    const auto n = static_cast<std::size_t>(t_rows_);
    const double* cp = cols_.col(pos).data();
    for (int q = 0; q < static_cast<int>(leaves_.size()); ++q) {
      const double g = k.dot(cp, cols_.col(q).data(), n) / t;
      gram_(pos, q) = g;
      gram_(q, pos) = g;
    }
    col_mean_(pos) = k.sum(cp, n) / t;
    for (Eigen::Index m = 0; m < inc_.cols(); ++m)
      inc_cross_(m, pos) = k.dot(inc_.col(m).data(), cp, n) / t;
  }

  bool random_feasible(int pos, int char_index, double threshold) const {
    const auto& members = leaves_[static_cast<std::size_t>(pos)].members;
    const auto msz = static_cast<std::int64_t>(cfg_.min_leaf_size);
    for (Eigen::Index s = 0; s < t_rows_; ++s) {
      const CrossSection& cs = section(s);
      const double* z = cs.chars[static_cast<std::size_t>(char_index)].data();
      const auto& m = members[static_cast<std::size_t>(s)];
      std::int64_t left = 0;
      for (const std::int32_t i : m) left += z[i] <= threshold ? 1 : 0;
      if (left < msz || static_cast<std::int64_t>(m.size()) - left < msz) return false;
    }
    return true;
  }

  Best search_round() const {
    struct Task {
      int pos;
      int char_index;
    };
    std::vector<Task> tasks;
    const auto msz2 = static_cast<std::int64_t>(2 * cfg_.min_leaf_size);
    for (std::size_t l = 0; l < leaves_.size(); ++l) {
      const LeafState& leaf = leaves_[l];
      if (cfg_.max_depth >= 0 && leaf.depth >= cfg_.max_depth) continue;
      if (leaf.min_count < msz2) continue;  // no threshold can be feasible
      for (const int k : chars_) tasks.push_back(Task{static_cast<int>(l), k});
    }
    if (tasks.empty()) return Best{};

    std::vector<Best> results(tasks.size());
    auto run_task = [&](std::size_t i) {
      results[i] = cfg_.full_recompute
                       ? evaluate_leaf_char_full(tasks[i].pos, tasks[i].char_index)
                       : evaluate_leaf_char_cached(tasks[i].pos, tasks[i].char_index);
    };
    const int nthreads = std::min<int>(cfg_.threads, static_cast<int>(tasks.size()));
    if (nthreads <= 1) {
      for (std::size_t i = 0; i < tasks.size(); ++i) run_task(i);
    } else {
      std::atomic<std::size_t> next{0};
      std::vector<std::thread> pool;
      pool.reserve(static_cast<std::size_t>(nthreads));
      for (int w = 0; w < nthreads; ++w) {
        pool.emplace_back([&] {
          for (std::size_t i = next.fetch_add(1); i < tasks.size(); i = next.fetch_add(1))
            run_task(i);
        });
      }
      for (std::thread& th : pool) th.join();
    }

    Best best;
    for (const Best& b : results)
      if (b.better_than(best)) best = b;
    return best;
  }

  // Shared bucket scan: fills per-row x per-bucket weight/weighted-return/
  // count tables for one (leaf, characteristic) pair.
  void bucket_scan(int pos, int char_index, std::vector<double>& wsum, std::vector<double>& wrsum,
                   std::vector<std::int64_t>& count) const {
    const auto& k = kernels::ops();
    const std::size_t stride = cfg_.grid.size() + 1;
    wsum.assign(static_cast<std::size_t>(t_rows_) * stride, 0.0);
    wrsum.assign(static_cast<std::size_t>(t_rows_) * stride, 0.0);
    count.assign(static_cast<std::size_t>(t_rows_) * stride, 0);
    const auto& members = leaves_[static_cast<std::size_t>(pos)].members;
    for (Eigen::Index s = 0; s < t_rows_; ++s) {
      const CrossSection& cs = section(s);
      const auto& m = members[static_cast<std::size_t>(s)];
      const auto off = static_cast<std::size_t>(s) * stride;
      k.bucket_accumulate(cs.chars[static_cast<std::size_t>(char_index)].data(),
                          cs.returns.data(), cs.weight_base.data(), m.data(), m.size(),
                          cfg_.grid.data(), cfg_.grid.size(), wsum.data() + off,
                          wrsum.data() + off, count.data() + off);
    }
  }

  // Walks thresholds left-to-right with running prefix sums; for each
  // feasible threshold builds the two child columns and scores them. The
  // evaluator is `scorer(lcol, rcol)`.
  template <typename Scorer>
  Best best_over_thresholds(int pos, int char_index, Scorer&& scorer) const {
    const std::size_t stride = cfg_.grid.size() + 1;
    std::vector<double> wsum, wrsum;
    std::vector<std::int64_t> count;
    bucket_scan(pos, char_index, wsum, wrsum, count);

    const auto n = static_cast<std::size_t>(t_rows_);
    std::vector<double> tot_w(n, 0.0), tot_wr(n, 0.0);
    std::vector<std::int64_t> tot_n(n, 0);
    for (std::size_t s = 0; s < n; ++s) {
      for (std::size_t b = 0; b < stride; ++b) {
        tot_w[s] += wsum[s * stride + b];
        tot_wr[s] += wrsum[s * stride + b];
        tot_n[s] += count[s * stride + b];
      }
    }

    std::vector<double> lw(n, 0.0), lwr(n, 0.0);
    std::vector<std::int64_t> ln(n, 0);
    Eigen::VectorXd lcol(t_rows_), rcol(t_rows_);
    const auto msz = static_cast<std::int64_t>(cfg_.min_leaf_size);

    Best best;
    for (std::size_t m = 0; m < cfg_.grid.size(); ++m) {
      bool feasible = true;
      for (std::size_t s = 0; s < n; ++s) {
        lw[s] += wsum[s * stride + m];
        lwr[s] += wrsum[s * stride + m];
        ln[s] += count[s * stride + m];
        feasible = feasible && ln[s] >= msz && tot_n[s] - ln[s] >= msz;
      }
      if (!feasible) continue;
      for (std::size_t s = 0; s < n; ++s) {
        lcol(static_cast<Eigen::Index>(s)) = lwr[s] / lw[s];
        rcol(static_cast<Eigen::Index>(s)) = (tot_wr[s] - lwr[s]) / (tot_w[s] - lw[s]);
      }
      Best b;
      b.value = scorer(lcol, rcol);
      b.node = leaves_[static_cast<std::size_t>(pos)].node;
      b.char_index = char_index;
      b.thr_index = static_cast<int>(m);
      if (std::isnan(b.value)) b.value = kNegInf;
      if (b.better_than(best)) best = b;
    }
    return best;
  }

  Best evaluate_leaf_char_cached(int pos, int char_index) const {
    return best_over_thresholds(pos, char_index,
                                [&](const Eigen::VectorXd& lcol, const Eigen::VectorXd& rcol) {
                                  return criterion_cached(pos, lcol, rcol);
                                });
  }

  Best evaluate_leaf_char_full(int pos, int char_index) const {
    return best_over_thresholds(pos, char_index,
                                [&](const Eigen::VectorXd& lcol, const Eigen::VectorXd& rcol) {
                                  return criterion_full(pos, lcol, rcol);
                                });
  }

  // Criterion from cached Gram/mean blocks: only the replaced leaf column and
  // the appended one need fresh cross-moments (O(P + M) dots of length T).
  double criterion_cached(int pos, const Eigen::VectorXd& lcol, const Eigen::VectorXd& rcol) const {
    const auto& k = kernels::ops();
    const auto L = static_cast<int>(leaves_.size());
    const int P = L + 1;
    const double t = static_cast<double>(t_rows_);
    const auto n = static_cast<std::size_t>(t_rows_);

    Eigen::MatrixXd m2(P, P);
    m2.topLeftCorner(L, L) = gram_.topLeftCorner(L, L);
    Eigen::VectorXd mu(P);
    mu.head(L) = col_mean_.head(L);
    for (int q = 0; q < L; ++q) {
      if (q == pos) continue;
      const double gl = k.dot(lcol.data(), cols_.col(q).data(), n) / t;
      const double gr = k.dot(rcol.data(), cols_.col(q).data(), n) / t;
      m2(pos, q) = gl;
      m2(q, pos) = gl;
      m2(P - 1, q) = gr;
      m2(q, P - 1) = gr;
    }
    m2(pos, pos) = k.dot(lcol.data(), lcol.data(), n) / t;
    m2(P - 1, P - 1) = k.dot(rcol.data(), rcol.data(), n) / t;
    const double glr = k.dot(lcol.data(), rcol.data(), n) / t;
    m2(pos, P - 1) = glr;
    m2(P - 1, pos) = glr;
    mu(pos) = k.sum(lcol.data(), n) / t;
    mu(P - 1) = k.sum(rcol.data(), n) / t;

    // Unshifted solves must reject rank-deficient systems, matching the
    // public ridge/criterion solvers, so both scorers agree candidate by
    // candidate even on degenerate panels.
    const auto rank_ok = [](const Eigen::LDLT<Eigen::MatrixXd>& ldlt, Eigen::Index dim) {
      const Eigen::ArrayXd d = ldlt.vectorD().array().abs();
      return d.minCoeff() >
             std::numeric_limits<double>::epsilon() * static_cast<double>(dim) * d.maxCoeff();
    };

    Eigen::MatrixXd shifted = m2;
    shifted.diagonal().array() += cfg_.leaf_gamma;
    Eigen::VectorXd w;
    bool solved = false;
    if (cfg_.leaf_gamma > 0.0) {
      Eigen::LLT<Eigen::MatrixXd> llt(shifted);
      if (llt.info() == Eigen::Success) {
        w = llt.solve(mu);
        solved = true;
      }
    }
    if (!solved) {
      Eigen::LDLT<Eigen::MatrixXd> ldlt(shifted);
      if (ldlt.info() != Eigen::Success) return kNegInf;
      if (cfg_.leaf_gamma == 0.0 && !rank_ok(ldlt, P)) return kNegInf;
      w = ldlt.solve(mu);
    }
    if (!w.allFinite()) return kNegInf;
    const double sum_abs = w.cwiseAbs().sum();
    if (!(sum_abs > 0.0)) return kNegInf;
    w /= sum_abs;

    const double mu_f = mu.dot(w);
    const double ef2 = w.dot(m2 * w);
    const Eigen::Index M = inc_.cols();
    if (M == 0) {
      const double var = ef2 - mu_f * mu_f + cfg_.effective_epsilon(1);
      if (!(var > 0.0)) return kNegInf;
      return mu_f / std::sqrt(var);
    }

    Eigen::VectorXd cross(M);
    for (Eigen::Index m = 0; m < M; ++m) {
      double acc = 0.0;
      for (int q = 0; q < L; ++q)
        if (q != pos) acc += inc_cross_(m, q) * w(q);
      acc += (k.dot(inc_.col(m).data(), lcol.data(), n) / t) * w(pos);
      acc += (k.dot(inc_.col(m).data(), rcol.data(), n) / t) * w(P - 1);
      cross(m) = acc;
    }
    Eigen::MatrixXd sm(M + 1, M + 1);
    sm.topLeftCorner(M, M) = inc_gram_;
    sm.block(0, M, M, 1) = cross;
    sm.block(M, 0, 1, M) = cross.transpose();
    sm(M, M) = ef2;
    Eigen::VectorXd mub(M + 1);
    mub.head(M) = inc_mean_;
    mub(M) = mu_f;
    const double epsilon = cfg_.effective_epsilon(M + 1);
    Eigen::MatrixXd cov = sm - mub * mub.transpose();
    cov.diagonal().array() += epsilon;
    Eigen::LDLT<Eigen::MatrixXd> ldlt(cov);
    if (ldlt.info() != Eigen::Success) return kNegInf;
    if (epsilon == 0.0 && !rank_ok(ldlt, M + 1)) return kNegInf;
    const Eigen::VectorXd x = ldlt.solve(mub);
    if (!x.allFinite()) return kNegInf;
    return std::sqrt(std::max(0.0, mub.dot(x)));
  }

  // Cache-free scorer: materializes the post-split columns and runs the
  // public solves, for verifying the cached path.
  double criterion_full(int pos, const Eigen::VectorXd& lcol, const Eigen::VectorXd& rcol) const {
    const auto L = static_cast<int>(leaves_.size());
    ReturnMatrix rm;
    rm.values.resize(t_rows_, L + 1);
    rm.values.leftCols(L) = cols_.leftCols(L);
    rm.values.col(pos) = lcol;
    rm.values.col(L) = rcol;
    try {
      const MveSolution mve = ridge_mve_weights(rm, cfg_.leaf_gamma, cfg_.periods_per_year);
      FactorSet f;
      const Eigen::Index M = inc_.cols();
      f.series.resize(t_rows_, M + 1);
      if (M > 0) f.series.leftCols(M) = inc_;
      f.series.col(M) = rm.values * mve.weights;
      f.provenance.resize(static_cast<std::size_t>(M + 1));
      return criterion_value(f, cfg_.effective_epsilon(M + 1));
    } catch (const std::exception&) {
      return kNegInf;
    }
  }

  void commit(const Best& best, bool with_moments) {
    int pos = -1;
    for (std::size_t l = 0; l < leaves_.size(); ++l)
      if (leaves_[l].node == best.node) pos = static_cast<int>(l);
    if (pos < 0) throw std::logic_error("commit: stale best node");
    const double threshold = cfg_.grid[static_cast<std::size_t>(best.thr_index)];

    const int left_index = static_cast<int>(tree_.nodes.size());
    {
      // Scoped: the emplace_backs below may reallocate and invalidate `node`.
      TreeNode& node = tree_.nodes[static_cast<std::size_t>(best.node)];
      node.rule = SplitRule{best.char_index, threshold};
      node.left = left_index;
      node.right = left_index + 1;
      node.leaf_id = -1;
    }
    tree_.nodes.emplace_back();
    tree_.nodes.emplace_back();
    tree_.split_order.push_back(best.node);

    LeafState& parent = leaves_[static_cast<std::size_t>(pos)];
    LeafState right;
    right.node = left_index + 1;
    right.depth = parent.depth + 1;
    right.members.resize(static_cast<std::size_t>(t_rows_));
    std::int64_t lmin = std::numeric_limits<std::int64_t>::max();
    std::int64_t rmin = std::numeric_limits<std::int64_t>::max();
    for (Eigen::Index s = 0; s < t_rows_; ++s) {
      const CrossSection& cs = section(s);
      const double* z = cs.chars[static_cast<std::size_t>(best.char_index)].data();
      auto& pm = parent.members[static_cast<std::size_t>(s)];
      std::vector<std::int32_t> lm;
      auto& rm = right.members[static_cast<std::size_t>(s)];
      lm.reserve(pm.size());
      for (const std::int32_t i : pm)
        (z[i] <= threshold ? lm : rm).push_back(i);
      lmin = std::min<std::int64_t>(lmin, static_cast<std::int64_t>(lm.size()));
      rmin = std::min<std::int64_t>(rmin, static_cast<std::int64_t>(rm.size()));
      pm = std::move(lm);
    }
    parent.node = left_index;
    parent.depth += 1;
    parent.min_count = lmin;
    right.min_count = rmin;
    leaves_.push_back(std::move(right));

    if (with_moments) {
      refresh_column(pos);
      refresh_column(static_cast<int>(leaves_.size()) - 1);
    }
  }

  GrownTree finalize() {
    assign_leaf_ids(tree_);
    GrownTree out;
    out.tree = tree_;
    out.steps = steps_;
    out.root_only = tree_.nodes.size() == 1;
    out.leaves = leaf_returns(tree_, p_);
    out.mve = ridge_mve_weights(out.leaves.returns, cfg_.leaf_gamma, cfg_.periods_per_year);
    out.factor = out.leaves.returns.values * out.mve.weights;
    return out;
  }

  const RankedPanel& p_;
  GrowthConfig cfg_;
  std::vector<int> rows_;
  std::vector<int> chars_;
  Eigen::Index t_rows_ = 0;

  PTree tree_;
  std::vector<LeafState> leaves_;
  std::vector<SplitStep> steps_;

  Eigen::MatrixXd cols_;
  Eigen::MatrixXd gram_;
  Eigen::VectorXd col_mean_;
  Eigen::MatrixXd inc_;
  Eigen::MatrixXd inc_gram_;
  Eigen::VectorXd inc_mean_;
  Eigen::MatrixXd inc_cross_;
};

}  // namespace

GrownTree grow_tree(const RankedPanel& p, const GrowthConfig& cfg, const FactorSet& incumbents) {
  return Grower(p, cfg, incumbents, GrowRestriction{}).run_goal_oriented();
}

GrownTree grow_tree_restricted(const RankedPanel& p, const GrowthConfig& cfg,
                               const FactorSet& incumbents, const GrowRestriction& restriction) {
  return Grower(p, cfg, incumbents, restriction).run_goal_oriented();
}

GrownTree grow_random_tree(const RankedPanel& p, const GrowthConfig& cfg, Rng& rng,
                           const GrowRestriction& restriction, int max_attempts) {
  return Grower(p, cfg, FactorSet{}, restriction).run_random(rng, max_attempts);
}

PTree grow_fixed_tree(const std::vector<FixedSplit>& spec) {
  PTree tree;
  for (const FixedSplit& fs : spec) {
    if (fs.char_index < 0) throw std::invalid_argument("grow_fixed_tree: negative char_index");
    if (!(fs.threshold > -1.0 && fs.threshold < 1.0))
      throw std::invalid_argument("grow_fixed_tree: threshold outside (-1, 1)");
    int n = 0;
    for (const char step : fs.path) {
      const TreeNode& node = tree.nodes[static_cast<std::size_t>(n)];
      if (node.is_leaf())
        throw std::invalid_argument("grow_fixed_tree: path '" + fs.path +
                                    "' passes through a missing split");
      if (step == 'L')
        n = node.left;
      else if (step == 'R')
        n = node.right;
      else
        throw std::invalid_argument("grow_fixed_tree: path step must be 'L' or 'R'");
    }
    if (!tree.nodes[static_cast<std::size_t>(n)].is_leaf())
      throw std::invalid_argument("grow_fixed_tree: node at '" + fs.path + "' already split");
    tree = apply_split(tree, n, SplitRule{fs.char_index, fs.threshold});
  }
  tree.validate();
  return tree;
}

double incremental_char_value(const PTree& base, const RankedPanel& p, int char_index,
                              const GrowthConfig& cfg) {
  if (char_index < 0 || char_index >= static_cast<int>(p.num_chars()))
    throw std::invalid_argument("incremental_char_value: char_index out of range");
  double best = kNegInf;
  for (const SplitCandidate& c : enumerate_candidates(base, p, cfg)) {
    if (c.rule.char_index != char_index) continue;
    best = std::max(best, evaluate_split(c, base, p, cfg, FactorSet{}));
  }
  return best;
}

std::string tree_to_json(const PTree& tree) {
  tree.validate();
  nlohmann::ordered_json j;
  j["nodes"] = nlohmann::ordered_json::array();
  for (const TreeNode& n : tree.nodes) {
    nlohmann::ordered_json nj;
    if (n.is_leaf()) {
      nj["kind"] = "leaf";
      nj["leaf_id"] = n.leaf_id;
    } else {
      nj["kind"] = "split";
      nj["char"] = n.rule.char_index;
      nj["threshold"] = n.rule.threshold;
      nj["left"] = n.left;
      nj["right"] = n.right;
    }
    j["nodes"].push_back(std::move(nj));
  }
  j["split_order"] = tree.split_order;
  return j.dump(2) + "\n";
}

PTree tree_from_json(const std::string& text) {
  const nlohmann::json j = nlohmann::json::parse(text);
  PTree tree;
  tree.nodes.clear();
  for (const auto& nj : j.at("nodes")) {
    TreeNode n;
    const std::string kind = nj.at("kind").get<std::string>();
    if (kind == "leaf") {
      n.leaf_id = nj.at("leaf_id").get<int>();
    } else if (kind == "split") {
      n.rule.char_index = nj.at("char").get<int>();
      n.rule.threshold = nj.at("threshold").get<double>();
      n.left = nj.at("left").get<int>();
      n.right = nj.at("right").get<int>();
    } else {
      throw std::invalid_argument("tree_from_json: unknown node kind '" + kind + "'");
    }
    tree.nodes.push_back(n);
  }
  tree.split_order = j.at("split_order").get<std::vector<int>>();
  tree.validate();
  return tree;
}

std::string tree_to_dot(const PTree& tree, const std::vector<std::string>& char_names,
                        const LeafPortfolios* leaves) {
  tree.validate();
  std::ostringstream out;
  out << "digraph ptree {\n  node [shape=box, fontname=\"Helvetica\"];\n";
  for (std::size_t i = 0; i < tree.nodes.size(); ++i) {
    const TreeNode& n = tree.nodes[i];
    if (n.is_leaf()) {
      out << "  n" << i << " [label=\"leaf " << n.leaf_id;
      if (leaves != nullptr && leaves->counts.cols() > n.leaf_id) {
        std::vector<std::int64_t> c(static_cast<std::size_t>(leaves->counts.rows()));
        for (Eigen::Index t = 0; t < leaves->counts.rows(); ++t)
          c[static_cast<std::size_t>(t)] = leaves->counts(t, n.leaf_id);
        std::sort(c.begin(), c.end());
        const std::size_t mid = c.size() / 2;
        const double median = c.size() % 2 == 1
                                  ? static_cast<double>(c[mid])
                                  : 0.5 * static_cast<double>(c[mid - 1] + c[mid]);
        out << "\\nmedian n=" << median;
      }
      out << "\", style=filled, fillcolor=lightgray];\n";
    } else {
      const auto k = static_cast<std::size_t>(n.rule.char_index);
      const std::string name = k < char_names.size() ? char_names[k] : "z" + std::to_string(k);
      out << "  n" << i << " [label=\"" << name << " <= " << n.rule.threshold << "\"];\n";
    }
  }
  for (std::size_t i = 0; i < tree.nodes.size(); ++i) {
    const TreeNode& n = tree.nodes[i];
    if (n.is_leaf()) continue;
    out << "  n" << i << " -> n" << n.left << " [label=\"yes\"];\n";
    out << "  n" << i << " -> n" << n.right << " [label=\"no\"];\n";
  }
  out << "}\n";
  return out.str();
}

}  // namespace ptree
