#include "ptree/boosting.hpp"

#include <stdexcept>
#include <string>

namespace ptree {

void BoostConfig::validate() const {
  if (num_trees < 1) throw std::invalid_argument("BoostConfig: num_trees must be >= 1");
  if (factor_gamma < 0.0) throw std::invalid_argument("BoostConfig: factor_gamma must be >= 0");
  tree_config.validate();
}

BoostResult boost(const RankedPanel& p, const BoostConfig& cfg) {
  cfg.validate();
  BoostResult out;
  out.num_initial = static_cast<int>(cfg.initial_factors.count());
  out.factor_gamma = cfg.factor_gamma;
  out.periods_per_year = cfg.tree_config.periods_per_year;
  out.factors = cfg.initial_factors;

  for (int k = 0; k < cfg.num_trees; ++k) {
    GrownTree grown = grow_tree(p, cfg.tree_config, out.factors);
    if (grown.root_only) out.degenerate_trees.push_back(k);
    out.factors.append(grown.factor,
                       FactorProvenance{"tree" + std::to_string(k + 1), grown.mve.weights});
    out.trees.push_back(std::move(grown.tree));
    out.leaf_blocks.push_back(std::move(grown.leaves));
  }

  ReturnMatrix rm{out.factors.series, {}};
  out.mve = ridge_mve_weights(rm, cfg.factor_gamma, cfg.tree_config.periods_per_year);
  return out;
}

std::vector<double> cumulative_sharpe(const BoostResult& result, double gamma) {
  std::vector<double> out;
  const auto num_trees = static_cast<int>(result.trees.size());
  out.reserve(static_cast<std::size_t>(num_trees));
  for (int k = 1; k <= num_trees; ++k) {
    ReturnMatrix rm;
    rm.values = result.factors.series.leftCols(result.num_initial + k);
    out.push_back(ridge_mve_weights(rm, gamma, result.periods_per_year).sharpe_annualized);
  }
  return out;
}

std::vector<double> cumulative_sharpe(const BoostResult& result) {
  return cumulative_sharpe(result, result.factor_gamma);
}

}  // namespace ptree
