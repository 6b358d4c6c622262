#pragma once

#include <array>
#include <cstdint>

#include "ptree/panel.hpp"
#include "ptree/tree.hpp"

namespace ptree {

// Synthetic panel generator. Returns follow
//   r_{i,t} = mkt_t + kappa * (c1 z_ME + c2 z_BM + c3 z_ME z_BM
//                              + c4 z_MOM + c5 z_MOM^2)_{i,t-1} + eps_{i,t}
// where the z's are the cross-sectionally ranked values of three designated
// "true" characteristics, eps ~ N(0, sigma^2) iid. Raw characteristics follow
// per-asset AR(1) dynamics with a common shock component shared across a
// given asset's characteristics, so redundant characteristics correlate with
// the true ones. weight_base = exp(raw ME-role characteristic).
struct SimConfig {
  int n_assets = 1000;
  int t_train = 500;
  int t_test = 500;
  int num_chars = 61;
  double kappa = 1.0;
  std::array<double, 5> coefs{-0.004, 0.003, 0.003, 0.004, -0.002};
  double sigma_eps = 0.05;          // frozen by pilot calibration (see README)
  double var1_persistence = 0.9;    // rho
  double var1_common_loading = 0.5; // b: shock = sqrt(1-b^2) own + b common
  double market_mean = 0.0065;      // per period
  double market_sd = 0.04;
  std::array<int, 3> true_char_indices{0, 1, 2};  // ME, BM, MOM12M roles
  std::uint64_t seed = 0;
  int start_period = 200001;  // YYYYMM

  int total_periods() const { return t_train + t_test; }
  void validate() const;
};

struct SimPanel {
  Panel panel;      // raw characteristics; rank-normalize downstream as usual
  SimConfig truth;  // echo of the generating configuration
};

SimPanel simulate_panel(const SimConfig& cfg);

// Mask selecting the first t_train periods of a simulated panel.
PeriodMask train_mask(const SimConfig& cfg);

// Oracle construct: grow with the characteristic set restricted to the three
// true indices; its OOS Sharpe defines true predictability.
GrownTree oracle_tree(const RankedPanel& p, const SimConfig& truth, const GrowthConfig& cfg);

struct GapReport {
  double in_sample_sr = 0.0;
  double oos_sr = 0.0;
  double true_predictability_sr = 0.0;
  double overfitting = 0.0;         // in_sample - true_predictability
  double limits_to_learning = 0.0;  // true_predictability - oos
};

GapReport gap_decomposition(double in_sample_sr, double oracle_oos_sr, double oos_sr);

// Characteristic-sorted comparison portfolios, rebuilt each period from the
// ranked values: one index -> `bins` quantile portfolios; two indices ->
// independent bins x bins double sort. Value-weighted; empty cells get
// return 0 / count 0 and are flagged, like leaf portfolios.
struct SortedPortfolios {
  ReturnMatrix returns;
  Eigen::Matrix<std::int64_t, Eigen::Dynamic, Eigen::Dynamic> counts;
  std::int64_t empty_cells = 0;
};

SortedPortfolios sorted_portfolio_baselines(const RankedPanel& p, const std::vector<int>& chars,
                                            int bins);

}  // namespace ptree
