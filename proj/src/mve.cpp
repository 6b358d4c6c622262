#include "ptree/mve.hpp"

#include <cmath>
#include <limits>
#include <stdexcept>

#include "ptree/kernels.hpp"

namespace ptree {
namespace {

// Residual-checked symmetric solve of (A + gamma I) x = b. LLT first (the
// system is SPD for gamma > 0), pivoted LDLT as fallback; nullptr-like empty
// result when both leave a large residual, so callers can pick their policy.
bool solve_shifted_spd(const Eigen::MatrixXd& a, double gamma, const Eigen::VectorXd& b,
                       Eigen::VectorXd& x) {
  Eigen::MatrixXd shifted = a;
  shifted.diagonal().array() += gamma;
  const double scale = 1.0 + b.lpNorm<Eigen::Infinity>();
  const double tol = 1e-10 * scale;

  if (gamma > 0.0) {
    Eigen::LLT<Eigen::MatrixXd> llt(shifted);
    if (llt.info() == Eigen::Success) {
      x = llt.solve(b);
      if (x.allFinite() && (shifted * x - b).lpNorm<Eigen::Infinity>() <= tol) return true;
    }
  }
  Eigen::LDLT<Eigen::MatrixXd> ldlt(shifted);
  if (ldlt.info() != Eigen::Success) return false;
  if (gamma == 0.0) {
    // Residuals alone cannot expose a CONSISTENT rank-deficient system (e.g.
    // duplicated columns), which has many solutions; unshifted solves must
    // also be numerically nonsingular.
    const Eigen::ArrayXd d = ldlt.vectorD().array().abs();
    if (!(d.minCoeff() > std::numeric_limits<double>::epsilon() *
                             static_cast<double>(shifted.rows()) * d.maxCoeff()))
      return false;
  }
  x = ldlt.solve(b);
  return x.allFinite() && (shifted * x - b).lpNorm<Eigen::Infinity>() <= tol;
}

}  // namespace

void ReturnMatrix::validate() const {
  if (values.rows() < 1 || values.cols() < 1)
    throw std::invalid_argument("ReturnMatrix: need T >= 1 and P >= 1");
  if (!values.allFinite()) throw std::invalid_argument("ReturnMatrix: non-finite entries");
  if (!labels.empty() && static_cast<Eigen::Index>(labels.size()) != values.cols())
    throw std::invalid_argument("ReturnMatrix: label count does not match columns");
}

void FactorSet::append(const Eigen::VectorXd& column, FactorProvenance prov) {
  if (series.cols() == 0) {
    series.resize(column.size(), 1);
    series.col(0) = column;
  } else {
    if (series.rows() != column.size())
      throw std::invalid_argument("FactorSet::append: column length mismatch");
    series.conservativeResize(Eigen::NoChange, series.cols() + 1);
    series.col(series.cols() - 1) = column;
  }
  provenance.push_back(std::move(prov));
}

Moments sample_moments(const ReturnMatrix& r, bool with_covariance) {
  r.validate();
  const auto t = static_cast<double>(r.T());
  Moments m;
  m.mean = r.values.colwise().mean();
  m.second_moment = (r.values.transpose() * r.values) / t;
  if (with_covariance) {
    if (r.T() < 2)
      throw std::invalid_argument("sample_moments: covariance requires T >= 2");
    m.covariance = m.second_moment - m.mean * m.mean.transpose();
    m.has_covariance = true;
  }
  return m;
}

MveSolution ridge_mve_weights(const ReturnMatrix& r, double gamma, int periods_per_year) {
  if (gamma < 0.0) throw std::invalid_argument("ridge_mve_weights: gamma must be >= 0");
  const Moments m = sample_moments(r, /*with_covariance=*/false);

  MveSolution sol;
  sol.gamma = gamma;
  if (!solve_shifted_spd(m.second_moment, gamma, m.mean, sol.raw_weights)) {
    throw std::runtime_error(
        "ridge_mve_weights: singular second-moment system; use positive shrinkage gamma");
  }
  const double sum_abs = sol.raw_weights.cwiseAbs().sum();
  if (!(sum_abs > 0.0) || !std::isfinite(sum_abs))
    throw std::runtime_error("ridge_mve_weights: degenerate-portfolio (zero raw weights)");
  sol.weights = sol.raw_weights / sum_abs;

  const Eigen::VectorXd f = r.values * sol.weights;
  if (r.T() >= 2) {
    const double mean = f.mean();
    const double sd = std::sqrt((f.array() - mean).square().sum() /
                                static_cast<double>(r.T() - 1));
    if (sd > 0.0) {
      sol.sharpe_per_period = mean / sd;
      sol.sharpe_annualized =
          sol.sharpe_per_period * std::sqrt(static_cast<double>(periods_per_year));
    } else {
      sol.sharpe_per_period = std::numeric_limits<double>::quiet_NaN();
      sol.sharpe_annualized = std::numeric_limits<double>::quiet_NaN();
    }
  } else {
    sol.sharpe_per_period = std::numeric_limits<double>::quiet_NaN();
    sol.sharpe_annualized = std::numeric_limits<double>::quiet_NaN();
  }
  return sol;
}

double default_criterion_epsilon(Eigen::Index num_factors) {
  return num_factors >= 2 ? 1e-12 : 0.0;
}

double criterion_value(const FactorSet& f, double epsilon) {
  const Eigen::Index t = f.T();
  const Eigen::Index m = f.count();
  if (m < 1) throw std::invalid_argument("criterion_value: need at least one factor");
  if (t < 2) throw std::invalid_argument("criterion_value: need T >= 2");
  if (epsilon < 0.0) throw std::invalid_argument("criterion_value: epsilon must be >= 0");

  if (m == 1) {
    double mean = 0.0, var = 0.0;
    kernels::ops().mean_var(f.series.col(0).data(), static_cast<std::size_t>(t), &mean, &var);
    const double denom2 = var + epsilon;
    if (!(denom2 > 0.0))
      throw std::runtime_error("criterion_value: zero-variance factor with epsilon = 0");
    return mean / std::sqrt(denom2);
  }

  const Eigen::VectorXd mu = f.series.colwise().mean();
  const Eigen::MatrixXd sigma =
      (f.series.transpose() * f.series) / static_cast<double>(t) - mu * mu.transpose();
  Eigen::VectorXd x;
  if (!solve_shifted_spd(sigma, epsilon, mu, x))
    throw std::runtime_error("criterion_value: singular factor covariance with epsilon = 0");
  return std::sqrt(std::max(0.0, mu.dot(x)));
}

SdfSolution sdf_ridge_weights(const ReturnMatrix& r, double gamma) {
  if (gamma < 0.0) throw std::invalid_argument("sdf_ridge_weights: gamma must be >= 0");
  const Moments m = sample_moments(r, /*with_covariance=*/false);

  SdfSolution sol;
  sol.gamma = gamma;
  sol.complexity = static_cast<double>(r.P()) / static_cast<double>(r.T());
  if (gamma == 0.0) {
    // Ridgeless limit: minimum-norm least squares through a rank-revealing
    // factorization; covers both the invertible P <= T case and P > T.
    Eigen::CompleteOrthogonalDecomposition<Eigen::MatrixXd> cod(m.second_moment);
    sol.weights = cod.solve(m.mean);
  } else if (!solve_shifted_spd(m.second_moment, gamma, m.mean, sol.weights)) {
    throw std::runtime_error("sdf_ridge_weights: solve failed");
  }
  if (!sol.weights.allFinite()) throw std::runtime_error("sdf_ridge_weights: non-finite solve");
  return sol;
}

double pricing_error(const SdfSolution& s, const ReturnMatrix& r_oos) {
  r_oos.validate();
  if (r_oos.P() != s.weights.size())
    throw std::invalid_argument("pricing_error: column count does not match SDF weights");
  const Eigen::ArrayXd dev = 1.0 - (r_oos.values * s.weights).array();
  return dev.square().mean();
}

double annualized_sharpe(const Eigen::VectorXd& series, int periods_per_year) {
  const Eigen::Index t = series.size();
  if (t < 2) throw std::invalid_argument("annualized_sharpe: need T >= 2");
  double mean = 0.0, var_pop = 0.0;
  kernels::ops().mean_var(series.data(), static_cast<std::size_t>(t), &mean, &var_pop);
  const double sd =
      std::sqrt(var_pop * static_cast<double>(t) / static_cast<double>(t - 1));
  if (!(sd > 0.0)) throw std::runtime_error("annualized_sharpe: zero standard deviation");
  return mean / sd * std::sqrt(static_cast<double>(periods_per_year));
}

double annualized_sharpe(const std::vector<double>& series, int periods_per_year) {
  return annualized_sharpe(
      Eigen::Map<const Eigen::VectorXd>(series.data(), static_cast<Eigen::Index>(series.size())),
      periods_per_year);
}

}  // namespace ptree
