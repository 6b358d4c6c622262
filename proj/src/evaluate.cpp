#include "ptree/evaluate.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <stdexcept>
#include <string>

#include <boost/math/distributions/fisher_f.hpp>

namespace ptree {
namespace {

Eigen::MatrixXd design_matrix(const FactorSet& factors, Eigen::Index t) {
  Eigen::MatrixXd x(t, factors.count() + 1);
  x.col(0).setOnes();
  if (factors.count() > 0) x.rightCols(factors.count()) = factors.series;
  return x;
}

std::string collinear_column_names(const FactorSet& factors,
                                   const Eigen::ColPivHouseholderQR<Eigen::MatrixXd>& qr) {
  std::string names;
  const auto rank = qr.rank();
  const auto& perm = qr.colsPermutation().indices();
  for (Eigen::Index i = rank; i < perm.size(); ++i) {
    const Eigen::Index col = perm(i);
    if (!names.empty()) names += ", ";
    if (col == 0) {
      names += "intercept";
    } else {
      const auto f = static_cast<std::size_t>(col - 1);
      names += f < factors.provenance.size() && !factors.provenance[f].source.empty()
                   ? factors.provenance[f].source
                   : "factor" + std::to_string(col);
    }
  }
  return names;
}

}  // namespace

TsRegressionReport ts_regress(const ReturnMatrix& assets, const FactorSet& factors) {
  assets.validate();
  const Eigen::Index t = assets.T();
  const Eigen::Index n = assets.P();
  const Eigen::Index m = factors.count();
  if (m > 0 && factors.T() != t)
    throw std::invalid_argument("ts_regress: factor/asset period mismatch");
  if (t <= m + 1) throw std::invalid_argument("ts_regress: need T > M + 1");

  const Eigen::MatrixXd x = design_matrix(factors, t);
  Eigen::ColPivHouseholderQR<Eigen::MatrixXd> qr(x);
  if (qr.rank() < x.cols())
    throw std::runtime_error("ts_regress: rank-deficient design; collinear columns: " +
                             collinear_column_names(factors, qr));

  const Eigen::MatrixXd coef = qr.solve(assets.values);  // (M+1) x N
  const Eigen::MatrixXd fitted = x * coef;
  const Eigen::MatrixXd resid = assets.values - fitted;

  const Eigen::MatrixXd xtx_inv =
      (x.transpose() * x).ldlt().solve(Eigen::MatrixXd::Identity(m + 1, m + 1));
  const double var_scale = xtx_inv(0, 0);
  const double dof = static_cast<double>(t - m - 1);

  TsRegressionReport rep;
  rep.alpha = coef.row(0).transpose();
  rep.betas = coef.bottomRows(m).transpose();
  rep.residuals = resid;
  rep.alpha_t.resize(n);
  rep.r_squared.resize(n);
  for (Eigen::Index i = 0; i < n; ++i) {
    const double rss = resid.col(i).squaredNorm();
    const double s2 = rss / dof;
    const double se = std::sqrt(s2 * var_scale);
    rep.alpha_t(i) = se > 0.0 ? rep.alpha(i) / se
                              : std::numeric_limits<double>::infinity() * (rep.alpha(i) >= 0 ? 1 : -1);
    const double mean = assets.values.col(i).mean();
    const double tss = (assets.values.col(i).array() - mean).square().sum();
    rep.r_squared(i) = tss > 0.0 ? std::clamp(1.0 - rss / tss, 0.0, 1.0) : 1.0;
  }
  return rep;
}

GrsReport grs(const ReturnMatrix& assets, const FactorSet& factors) {
  assets.validate();
  const Eigen::Index t = assets.T();
  const Eigen::Index n = assets.P();
  const Eigen::Index m = factors.count();
  if (m < 1) throw std::invalid_argument("grs: need at least one factor");
  if (factors.T() != t) throw std::invalid_argument("grs: factor/asset period mismatch");
  if (t <= n + m)
    throw std::invalid_argument("grs: not applicable, need T > N + M (T=" + std::to_string(t) +
                                ", N=" + std::to_string(n) + ", M=" + std::to_string(m) + ")");

  const TsRegressionReport ts = ts_regress(assets, factors);

  const Eigen::MatrixXd sigma_eps =
      (ts.residuals.transpose() * ts.residuals) / static_cast<double>(t);
  Eigen::LDLT<Eigen::MatrixXd> ldlt(sigma_eps);
  const Eigen::VectorXd sa = ldlt.solve(ts.alpha);
  if (ldlt.info() != Eigen::Success || !sa.allFinite() ||
      (sigma_eps * sa - ts.alpha).lpNorm<Eigen::Infinity>() >
          1e-8 * (1.0 + ts.alpha.lpNorm<Eigen::Infinity>()))
    throw std::runtime_error("grs: residual covariance is singular");

  const Eigen::VectorXd mu = factors.series.colwise().mean();
  Eigen::MatrixXd centered = factors.series.rowwise() - mu.transpose();
  const Eigen::MatrixXd sigma_f =
      (centered.transpose() * centered) / static_cast<double>(t - 1);
  Eigen::LDLT<Eigen::MatrixXd> ldlt_f(sigma_f);
  const Eigen::VectorXd sf = ldlt_f.solve(mu);
  if (ldlt_f.info() != Eigen::Success || !sf.allFinite())
    throw std::runtime_error("grs: factor covariance is singular");

  GrsReport rep;
  rep.n = static_cast<int>(n);
  rep.t = static_cast<int>(t);
  rep.m = static_cast<int>(m);
  const double quad_alpha = ts.alpha.dot(sa);
  const double quad_mu = mu.dot(sf);
  rep.statistic = (static_cast<double>(t - n - m) / static_cast<double>(n)) * quad_alpha /
                  (1.0 + quad_mu);
  const boost::math::fisher_f dist(static_cast<double>(n), static_cast<double>(t - n - m));
  rep.p_value = boost::math::cdf(boost::math::complement(dist, std::max(0.0, rep.statistic)));
  return rep;
}

CsR2Report cross_sectional_r2(const ReturnMatrix& assets, const FactorSet& factors) {
  const Eigen::Index n = assets.P();
  const Eigen::Index m = factors.count();
  if (n <= m) throw std::invalid_argument("cross_sectional_r2: need N > M");

  const TsRegressionReport ts = ts_regress(assets, factors);
  const Eigen::VectorXd mean_returns = assets.values.colwise().mean();

  Eigen::ColPivHouseholderQR<Eigen::MatrixXd> qr(ts.betas);
  if (qr.rank() < m) throw std::runtime_error("cross_sectional_r2: rank-deficient beta matrix");

  CsR2Report rep;
  rep.lambda = qr.solve(mean_returns);  // through-origin OLS
  rep.predicted_means = ts.betas * rep.lambda;
  const double denom = mean_returns.squaredNorm();
  if (!(denom > 0.0))
    throw std::runtime_error("cross_sectional_r2: all average returns are zero");
  rep.r_squared = 1.0 - (mean_returns - rep.predicted_means).squaredNorm() / denom;
  return rep;
}

std::vector<ExpandingRow> expanding_factor_test(const FactorSet& factors) {
  const Eigen::Index m = factors.count();
  if (m < 1) throw std::invalid_argument("expanding_factor_test: empty factor set");
  std::vector<ExpandingRow> out(static_cast<std::size_t>(m));
  for (Eigen::Index k = 1; k < m; ++k) {
    FactorSet prior;
    prior.series = factors.series.leftCols(k);
    prior.provenance.assign(static_cast<std::size_t>(k), FactorProvenance{});
    ReturnMatrix target{factors.series.col(k), {}};
    const TsRegressionReport ts = ts_regress(target, prior);
    ExpandingRow& row = out[static_cast<std::size_t>(k)];
    row.applicable = true;
    row.alpha = ts.alpha(0);
    row.t_stat = ts.alpha_t(0);
    row.r_squared = ts.r_squared(0);
  }
  return out;
}

}  // namespace ptree
