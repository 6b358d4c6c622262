#pragma once

#include <Eigen/Dense>
#include <optional>
#include <string>
#include <vector>

namespace ptree {

// T x P matrix of per-period excess returns with column labels.
struct ReturnMatrix {
  Eigen::MatrixXd values;
  std::vector<std::string> labels;

  Eigen::Index T() const { return values.rows(); }
  Eigen::Index P() const { return values.cols(); }
  void validate() const;  // finite entries, T >= 1, P >= 1, label count
};

struct Moments {
  Eigen::VectorXd mean;           // (1/T) sum_t R_t
  Eigen::MatrixXd second_moment;  // (1/T) R'R
  Eigen::MatrixXd covariance;     // second_moment - mean mean' (divisor T)
  bool has_covariance = false;
};

// Ridge tangency weights over return columns. weights are raw_weights scaled
// to sum of absolute values one; the Sharpe fields describe w'R_t.
struct MveSolution {
  Eigen::VectorXd raw_weights;
  Eigen::VectorXd weights;
  double gamma = 0.0;
  double sharpe_per_period = 0.0;
  double sharpe_annualized = 0.0;
};

// Ridge SDF weights; deliberately NOT re-normalized (pricing error depends on
// the weight scale).
struct SdfSolution {
  Eigen::VectorXd weights;
  double gamma = 0.0;
  double complexity = 0.0;  // P / T_train
};

struct FactorProvenance {
  std::string source;  // tree id or external label
  std::optional<Eigen::VectorXd> leaf_weights;
};

// Column-stacked factor return series with per-column provenance.
struct FactorSet {
  Eigen::MatrixXd series;  // T x M
  std::vector<FactorProvenance> provenance;

  Eigen::Index T() const { return series.rows(); }
  Eigen::Index count() const { return series.cols(); }
  bool empty() const { return series.cols() == 0; }
  void append(const Eigen::VectorXd& column, FactorProvenance prov);
};

// mean / second moment / covariance, all with divisor T. Covariance needs
// T >= 2 and is omitted (has_covariance = false) when with_covariance is off.
Moments sample_moments(const ReturnMatrix& r, bool with_covariance = true);

// Solves (E[RR'] + gamma I) w = E[R]; normalizes to sum |w| = 1. Sharpe uses
// the T-1 std. gamma = 0 requires an invertible second-moment matrix.
MveSolution ridge_mve_weights(const ReturnMatrix& r, double gamma,
                              int periods_per_year = 12);

// sqrt(mu' (Sigma + eps I)^-1 mu) over factor columns, population covariance.
// At M = 1 this reduces to mean / sqrt(var_pop + eps), kept signed.
double criterion_value(const FactorSet& f, double epsilon);

// Default stabilizer: 0 for a single factor, 1e-12 once incumbents exist.
double default_criterion_epsilon(Eigen::Index num_factors);

// w = (E[RR'] + gamma I)^-1 E[R]; gamma = 0 falls back to the minimum-norm
// solution via a rank-revealing factorization (the ridgeless limit).
SdfSolution sdf_ridge_weights(const ReturnMatrix& r, double gamma);

// E_oos[(1 - w'R_t)^2]
double pricing_error(const SdfSolution& s, const ReturnMatrix& r_oos);

// (mean / std_{T-1}) * sqrt(periods_per_year); errors on T < 2 or zero std.
double annualized_sharpe(const std::vector<double>& series, int periods_per_year);
double annualized_sharpe(const Eigen::VectorXd& series, int periods_per_year);

}  // namespace ptree
