#include "ptree/sim.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <numeric>
#include <set>
#include <stdexcept>

#include "ptree/rng.hpp"

namespace ptree {
namespace {

// Same rank map as rank_normalize: values -> [-1, 1], average ranks on ties.
std::vector<double> rank_to_unit(const std::vector<double>& x) {
  const std::size_t n = x.size();
  std::vector<double> z(n, 0.0);
  if (n < 2) return z;
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(), [&x](std::size_t a, std::size_t b) { return x[a] < x[b]; });
  std::size_t i = 0;
  while (i < n) {
    std::size_t j = i;
    while (j + 1 < n && x[order[j + 1]] == x[order[i]]) ++j;
    const double avg_rank = 0.5 * static_cast<double>(i + j) + 1.0;
    const double v = 2.0 * (avg_rank - 1.0) / static_cast<double>(n - 1) - 1.0;
    for (std::size_t q = i; q <= j; ++q) z[order[q]] = v;
    i = j + 1;
  }
  return z;
}

int next_yyyymm(int period) {
  const int year = period / 100;
  const int month = period % 100;
  return month >= 12 ? (year + 1) * 100 + 1 : period + 1;
}

}  // namespace

void SimConfig::validate() const {
  if (n_assets < 2) throw std::invalid_argument("SimConfig: need at least two assets");
  if (t_train < 1 || t_test < 0) throw std::invalid_argument("SimConfig: bad period counts");
  if (num_chars < 3) throw std::invalid_argument("SimConfig: need at least three characteristics");
  if (sigma_eps < 0.0) throw std::invalid_argument("SimConfig: sigma_eps must be >= 0");
  if (var1_persistence < 0.0 || var1_persistence >= 1.0)
    throw std::invalid_argument("SimConfig: persistence must lie in [0, 1)");
  if (var1_common_loading < 0.0 || var1_common_loading > 1.0)
    throw std::invalid_argument("SimConfig: common loading must lie in [0, 1]");
  std::set<int> uniq(true_char_indices.begin(), true_char_indices.end());
  if (uniq.size() != 3) throw std::invalid_argument("SimConfig: true_char_indices must be distinct");
  for (const int c : true_char_indices)
    if (c < 0 || c >= num_chars)
      throw std::invalid_argument("SimConfig: true_char_indices out of range");
  if (start_period % 100 < 1 || start_period % 100 > 12)
    throw std::invalid_argument("SimConfig: start_period must be YYYYMM");
}

SimPanel simulate_panel(const SimConfig& cfg) {
  cfg.validate();
  Rng rng(cfg.seed);

  const auto n = static_cast<std::size_t>(cfg.n_assets);
  const auto k = static_cast<std::size_t>(cfg.num_chars);
  const double rho = cfg.var1_persistence;
  const double b = cfg.var1_common_loading;
  const double own = std::sqrt(1.0 - b * b);
  const double shock_scale = std::sqrt(1.0 - rho * rho);

  // Stationary unit-variance start; one common shock per asset couples its
  // characteristics.
  std::vector<std::vector<double>> x(k, std::vector<double>(n));
  for (std::size_t i = 0; i < n; ++i) {
    const double common = rng.normal();
    for (std::size_t c = 0; c < k; ++c) x[c][i] = own * rng.normal() + b * common;
  }

  const auto me = static_cast<std::size_t>(cfg.true_char_indices[0]);
  const auto bm = static_cast<std::size_t>(cfg.true_char_indices[1]);
  const auto mom = static_cast<std::size_t>(cfg.true_char_indices[2]);
  const auto& cs_coef = cfg.coefs;

  SimPanel out;
  out.truth = cfg;
  Panel& panel = out.panel;
  panel.char_names.reserve(k);
  for (std::size_t c = 0; c < k; ++c) {
    if (c == me)
      panel.char_names.push_back("ME");
    else if (c == bm)
      panel.char_names.push_back("BM");
    else if (c == mom)
      panel.char_names.push_back("MOM12M");
    else
      panel.char_names.push_back("X" + std::to_string(c));
  }

  int period = cfg.start_period;
  for (int t = 0; t < cfg.total_periods(); ++t) {
    // Characteristics visible at period t are the pre-period states.
    const std::vector<double> z_me = rank_to_unit(x[me]);
    const std::vector<double> z_bm = rank_to_unit(x[bm]);
    const std::vector<double> z_mom = rank_to_unit(x[mom]);

    const double mkt = rng.normal(cfg.market_mean, cfg.market_sd);

    CrossSection cs;
    cs.asset_ids.reserve(n);
    cs.returns.reserve(n);
    cs.weight_base.reserve(n);
    cs.chars.assign(k, std::vector<double>(n));
    for (std::size_t i = 0; i < n; ++i) {
      const double signal = cs_coef[0] * z_me[i] + cs_coef[1] * z_bm[i] +
                            cs_coef[2] * z_me[i] * z_bm[i] + cs_coef[3] * z_mom[i] +
                            cs_coef[4] * z_mom[i] * z_mom[i];
      const double ret = mkt + cfg.kappa * signal + rng.normal(0.0, cfg.sigma_eps);
      char id[24];
      std::snprintf(id, sizeof id, "a%06lu", static_cast<unsigned long>(i + 1));
      cs.asset_ids.emplace_back(id);
      cs.returns.push_back(ret);
      cs.weight_base.push_back(std::exp(x[me][i]));
      for (std::size_t c = 0; c < k; ++c) cs.chars[c][i] = x[c][i];
    }
    panel.periods.push_back(period);
    panel.sections.push_back(std::move(cs));
    period = next_yyyymm(period);

    // Advance the characteristic states for the next period.
    for (std::size_t i = 0; i < n; ++i) {
      const double common = rng.normal();
      for (std::size_t c = 0; c < k; ++c)
        x[c][i] = rho * x[c][i] + shock_scale * (own * rng.normal() + b * common);
    }
  }
  panel.validate();
  return out;
}

PeriodMask train_mask(const SimConfig& cfg) {
  PeriodMask mask;
  mask.included.assign(static_cast<std::size_t>(cfg.total_periods()), 0);
  for (int t = 0; t < cfg.t_train; ++t) mask.included[static_cast<std::size_t>(t)] = 1;
  return mask;
}

GrownTree oracle_tree(const RankedPanel& p, const SimConfig& truth, const GrowthConfig& cfg) {
  GrowRestriction restriction;
  restriction.offered_chars.assign(truth.true_char_indices.begin(),
                                   truth.true_char_indices.end());
  return grow_tree_restricted(p, cfg, FactorSet{}, restriction);
}

GapReport gap_decomposition(double in_sample_sr, double oracle_oos_sr, double oos_sr) {
  GapReport rep;
  rep.in_sample_sr = in_sample_sr;
  rep.true_predictability_sr = oracle_oos_sr;
  rep.oos_sr = oos_sr;
  rep.overfitting = in_sample_sr - oracle_oos_sr;
  rep.limits_to_learning = oracle_oos_sr - oos_sr;
  return rep;
}

SortedPortfolios sorted_portfolio_baselines(const RankedPanel& p, const std::vector<int>& chars,
                                            int bins) {
  if (bins < 2) throw std::invalid_argument("sorted_portfolio_baselines: bins must be >= 2");
  if (chars.size() != 1 && chars.size() != 2)
    throw std::invalid_argument("sorted_portfolio_baselines: need one or two characteristics");
  for (const int c : chars)
    if (c < 0 || c >= static_cast<int>(p.num_chars()))
      throw std::invalid_argument("sorted_portfolio_baselines: characteristic out of range");

  const bool bivariate = chars.size() == 2;
  const int cells = bivariate ? bins * bins : bins;
  const auto t_total = static_cast<Eigen::Index>(p.num_periods());

  // Ranked values live in [-1, 1]; bucket by equal slices of that range.
  const auto bucket_of = [bins](double z) {
    const int raw = static_cast<int>((z + 1.0) * 0.5 * static_cast<double>(bins));
    return std::clamp(raw, 0, bins - 1);
  };

  SortedPortfolios out;
  out.returns.values = Eigen::MatrixXd::Zero(t_total, cells);
  out.counts.setZero(t_total, cells);
  for (int c = 0; c < cells; ++c) {
    out.returns.labels.push_back(bivariate ? "b" + std::to_string(c / bins) + "x" +
                                                 std::to_string(c % bins)
                                           : "b" + std::to_string(c));
  }

  std::vector<double> wsum(static_cast<std::size_t>(cells));
  std::vector<double> wrsum(static_cast<std::size_t>(cells));
  for (Eigen::Index t = 0; t < t_total; ++t) {
    const CrossSection& cs = p.sections[static_cast<std::size_t>(t)];
    std::fill(wsum.begin(), wsum.end(), 0.0);
    std::fill(wrsum.begin(), wrsum.end(), 0.0);
    const auto& z0 = cs.chars[static_cast<std::size_t>(chars[0])];
    const auto* z1 = bivariate ? &cs.chars[static_cast<std::size_t>(chars[1])] : nullptr;
    for (std::size_t i = 0; i < cs.size(); ++i) {
      int cell = bucket_of(z0[i]);
      if (bivariate) cell = cell * bins + bucket_of((*z1)[i]);
      wsum[static_cast<std::size_t>(cell)] += cs.weight_base[i];
      wrsum[static_cast<std::size_t>(cell)] += cs.weight_base[i] * cs.returns[i];
      out.counts(t, cell) += 1;
    }
    for (int c = 0; c < cells; ++c) {
      if (out.counts(t, c) > 0)
        out.returns.values(t, c) =
            wrsum[static_cast<std::size_t>(c)] / wsum[static_cast<std::size_t>(c)];
      else
        ++out.empty_cells;
    }
  }
  return out;
}

}  // namespace ptree
