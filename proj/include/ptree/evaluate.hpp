#pragma once

#include <vector>

#include "ptree/mve.hpp"

namespace ptree {

struct TsRegressionReport {
  Eigen::VectorXd alpha;       // per-asset intercepts (per-period units)
  Eigen::MatrixXd betas;       // N x M loadings
  Eigen::VectorXd alpha_t;     // homoskedastic t-statistics, divisor T-M-1
  Eigen::VectorXd r_squared;   // centered R^2, in [0, 1]
  Eigen::MatrixXd residuals;   // T x N
};

// Per-asset OLS of returns on [1, factors]. Rank-deficient design -> error
// naming the collinear columns.
TsRegressionReport ts_regress(const ReturnMatrix& assets, const FactorSet& factors);

struct GrsReport {
  double statistic = 0.0;
  double p_value = 0.0;
  int n = 0;
  int t = 0;
  int m = 0;
};

// Joint zero-alpha F-test: ((T-N-M)/N) * (1 + mu' Sigma_F^-1 mu)^-1 *
// alpha' Sigma_eps^-1 alpha with factor covariance divisor T-1 and residual
// covariance divisor T; p-value from the F(N, T-N-M) upper tail.
GrsReport grs(const ReturnMatrix& assets, const FactorSet& factors);

struct CsR2Report {
  Eigen::VectorXd lambda;           // length-M premia, through-origin OLS
  Eigen::VectorXd predicted_means;  // B * lambda
  double r_squared = 0.0;           // 1 - SSE / sum(mean^2); may be negative
};

CsR2Report cross_sectional_r2(const ReturnMatrix& assets, const FactorSet& factors);

struct ExpandingRow {
  bool applicable = false;  // first factor has no incumbents
  double alpha = 0.0;
  double t_stat = 0.0;
  double r_squared = 0.0;
};

// Row k: regression of factor k on factors 1..k-1 with intercept.
std::vector<ExpandingRow> expanding_factor_test(const FactorSet& factors);

}  // namespace ptree
