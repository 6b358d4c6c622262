// ptree: command-line surface over the panel-tree toolkit. Subcommands map
// one-to-one onto module operations; every run writes its outputs plus a
// manifest.json (the only file allowed to carry a timestamp).

#include <algorithm>
#include <charconv>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "ptree/boosting.hpp"
#include "ptree/evaluate.hpp"
#include "ptree/forest.hpp"
#include "ptree/mve.hpp"
#include "ptree/panel.hpp"
#include "ptree/sim.hpp"
#include "ptree/tree.hpp"

namespace fs = std::filesystem;
using nlohmann::ordered_json;

namespace {

constexpr const char* kVersion = "1.0.0";

std::string fmt(double v) {
  if (std::isnan(v)) return "nan";
  if (std::isinf(v)) return v > 0 ? "inf" : "-inf";
  char buf[40];
  const auto res = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, res.ptr);
}

void write_file(const fs::path& path, const std::string& content) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out << content;
  if (!out) throw std::runtime_error("write failed for " + path.string());
}

std::uint64_t fnv1a(const std::string& s) {
  std::uint64_t h = 1469598103934665603ULL;
  for (const unsigned char c : s) {
    h ^= c;
    h *= 1099511628211ULL;
  }
  return h;
}

std::string iso_timestamp() {
  const auto now = std::chrono::system_clock::now();
  const std::time_t tt = std::chrono::system_clock::to_time_t(now);
  std::tm tm{};
  gmtime_r(&tt, &tm);
  char buf[32];
  std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
  return buf;
}

void write_manifest(const fs::path& out_dir, const std::string& command,
                    const std::string& config_str, std::uint64_t seed) {
  ordered_json j;
  j["command"] = command;
  char hex[24];
  std::snprintf(hex, sizeof hex, "%016llx",
                static_cast<unsigned long long>(fnv1a(config_str)));
  j["config_hash"] = hex;
  j["seed"] = seed;
  j["version"] = kVersion;
  j["timestamp"] = iso_timestamp();
  write_file(out_dir / "manifest.json", j.dump(2) + "\n");
}

// ---------------------------------------------------------------------------
// CSV helpers
// ---------------------------------------------------------------------------

void write_series_csv(const fs::path& path, const std::vector<int>& periods,
                      const Eigen::MatrixXd& values, const std::vector<std::string>& labels) {
  std::ostringstream out;
  out << "period";
  for (const std::string& l : labels) out << "," << l;
  out << "\n";
  for (Eigen::Index t = 0; t < values.rows(); ++t) {
    out << periods[static_cast<std::size_t>(t)];
    for (Eigen::Index c = 0; c < values.cols(); ++c) out << "," << fmt(values(t, c));
    out << "\n";
  }
  write_file(path, out.str());
}

// Wide numeric matrix: header `period,<label...>`, one row per period.
std::pair<std::vector<int>, ptree::ReturnMatrix> load_matrix_csv(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open " + path);
  std::string line;
  if (!std::getline(in, line)) throw std::runtime_error(path + ": empty file");
  while (!line.empty() && (line.back() == '\r' || line.back() == '\n')) line.pop_back();

  std::vector<std::string> labels;
  {
    std::stringstream ss(line);
    std::string field;
    while (std::getline(ss, field, ',')) labels.push_back(field);
  }
  if (labels.size() < 2 || labels[0] != "period")
    throw std::runtime_error(path + ": expected header 'period,<column...>'");
  labels.erase(labels.begin());

  std::vector<int> periods;
  std::vector<std::vector<double>> rows;
  std::size_t line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    while (!line.empty() && (line.back() == '\r' || line.back() == '\n')) line.pop_back();
    if (line.empty()) continue;
    std::stringstream ss(line);
    std::string field;
    std::vector<double> row;
    bool first = true;
    while (std::getline(ss, field, ',')) {
      if (first) {
        periods.push_back(std::stoi(field));
        first = false;
      } else {
        row.push_back(std::stod(field));
      }
    }
    if (row.size() != labels.size())
      throw std::runtime_error(path + ":" + std::to_string(line_no) + ": ragged row");
    rows.push_back(std::move(row));
  }
  if (rows.empty()) throw std::runtime_error(path + ": no data rows");

  ptree::ReturnMatrix rm;
  rm.labels = labels;
  rm.values.resize(static_cast<Eigen::Index>(rows.size()), static_cast<Eigen::Index>(labels.size()));
  for (std::size_t t = 0; t < rows.size(); ++t)
    for (std::size_t c = 0; c < labels.size(); ++c)
      rm.values(static_cast<Eigen::Index>(t), static_cast<Eigen::Index>(c)) = rows[t][c];
  return {periods, rm};
}

void write_panel_csv(const fs::path& path, const ptree::Panel& p) {
  std::ostringstream out;
  out << "period,asset_id,ret,weight_base";
  for (const std::string& name : p.char_names) out << "," << name;
  out << "\n";
  for (std::size_t t = 0; t < p.sections.size(); ++t) {
    const ptree::CrossSection& cs = p.sections[t];
    for (std::size_t i = 0; i < cs.size(); ++i) {
      out << p.periods[t] << "," << cs.asset_ids[i] << "," << fmt(cs.returns[i]) << ","
          << fmt(cs.weight_base[i]);
      for (std::size_t k = 0; k < p.char_names.size(); ++k) {
        out << ",";
        if (!std::isnan(cs.chars[k][i])) out << fmt(cs.chars[k][i]);
      }
      out << "\n";
    }
  }
  write_file(path, out.str());
}

// ---------------------------------------------------------------------------
// Shared option bundles
// ---------------------------------------------------------------------------

struct CommonOpts {
  std::string out_dir;
  std::uint64_t seed = 42;
  int threads = 1;
  int periods_per_year = 12;
};

void add_common(CLI::App* sub, CommonOpts& o) {
  sub->add_option("--out", o.out_dir, "Output directory")->required();
  sub->add_option("--seed", o.seed, "Master seed");
  sub->add_option("--threads", o.threads, "Worker pool cap")->check(CLI::PositiveNumber);
  sub->add_option("--periods-per-year", o.periods_per_year, "Annualization factor")
      ->check(CLI::PositiveNumber);
}

struct PanelOpts {
  std::string input;
  std::string period_col = "period";
  std::string asset_col = "asset_id";
  std::string ret_col = "ret";
  std::string weight_col = "weight_base";
  double neutral = 0.0;
  int train_end = -1;  // keep periods <= train_end when set
};

void add_panel(CLI::App* sub, PanelOpts& o, bool with_train_end = true) {
  sub->add_option("--input", o.input, "Panel CSV path")->required();
  sub->add_option("--period-col", o.period_col, "Period column name");
  sub->add_option("--asset-col", o.asset_col, "Asset id column name");
  sub->add_option("--ret-col", o.ret_col, "Return column name");
  sub->add_option("--weight-col", o.weight_col, "Weight-base column name");
  sub->add_option("--neutral", o.neutral, "Imputed value for missing ranked characteristics")
      ->check(CLI::Range(-1.0, 1.0));
  if (with_train_end)
    sub->add_option("--train-end", o.train_end, "Keep only periods <= this YYYYMM");
}

ptree::Panel load_panel_opts(const PanelOpts& o, ptree::LoadReport* report = nullptr) {
  ptree::CsvSchema schema;
  schema.period = o.period_col;
  schema.asset_id = o.asset_col;
  schema.ret = o.ret_col;
  schema.weight_base = o.weight_col;
  ptree::Panel p = ptree::load_panel(o.input, schema, report);
  if (o.train_end >= 0) {
    ptree::PeriodMask mask;
    mask.included.resize(p.periods.size());
    for (std::size_t t = 0; t < p.periods.size(); ++t)
      mask.included[t] = p.periods[t] <= o.train_end ? 1 : 0;
    p = ptree::subsample(p, mask);
  }
  return p;
}

struct GrowthOpts {
  std::vector<double> grid{-0.6, -0.2, 0.2, 0.6};
  int max_leaves = 10;
  int max_depth = -1;
  int min_leaf_size = 20;
  double leaf_gamma = 1e-4;
  double criterion_epsilon = -1.0;
  bool full_recompute = false;
};

void add_growth(CLI::App* sub, GrowthOpts& o) {
  sub->add_option("--grid", o.grid, "Split threshold grid")->delimiter(',');
  sub->add_option("--max-leaves", o.max_leaves, "Leaf-count cap");
  sub->add_option("--max-depth", o.max_depth, "Depth cap (-1 = unlimited)");
  sub->add_option("--min-leaf-size", o.min_leaf_size, "Per-period minimum child size");
  sub->add_option("--leaf-gamma", o.leaf_gamma, "Ridge shrinkage for leaf MVE weights");
  sub->add_option("--criterion-epsilon", o.criterion_epsilon,
                  "Criterion covariance stabilizer (-1 = per-size default)");
  sub->add_flag("--full-recompute", o.full_recompute,
                "Bypass cached moments during the candidate search");
}

ptree::GrowthConfig growth_config(const GrowthOpts& g, const CommonOpts& c) {
  ptree::GrowthConfig cfg;
  cfg.grid = g.grid;
  cfg.max_leaves = g.max_leaves;
  cfg.max_depth = g.max_depth;
  cfg.min_leaf_size = g.min_leaf_size;
  cfg.leaf_gamma = g.leaf_gamma;
  cfg.criterion_epsilon = g.criterion_epsilon;
  cfg.full_recompute = g.full_recompute;
  cfg.threads = c.threads;
  cfg.periods_per_year = c.periods_per_year;
  return cfg;
}

Eigen::VectorXd market_column(const ptree::RankedPanel& p) {
  const ptree::PTree root;  // single leaf = value-weighted market
  return ptree::leaf_returns(root, p).returns.values.col(0);
}

ordered_json tree_json_object(const ptree::PTree& tree) {
  return ordered_json::parse(ptree::tree_to_json(tree));
}

int find_char(const std::vector<std::string>& names, const std::string& name) {
  for (std::size_t k = 0; k < names.size(); ++k)
    if (names[k] == name) return static_cast<int>(k);
  // Also accept a plain index.
  int idx = -1;
  const auto res = std::from_chars(name.data(), name.data() + name.size(), idx);
  if (res.ec == std::errc() && res.ptr == name.data() + name.size() && idx >= 0 &&
      idx < static_cast<int>(names.size()))
    return idx;
  throw std::runtime_error("unknown characteristic '" + name + "'");
}

double median_of_counts(const Eigen::Matrix<std::int64_t, Eigen::Dynamic, Eigen::Dynamic>& counts,
                        Eigen::Index col) {
  std::vector<std::int64_t> c(static_cast<std::size_t>(counts.rows()));
  for (Eigen::Index t = 0; t < counts.rows(); ++t) c[static_cast<std::size_t>(t)] = counts(t, col);
  std::sort(c.begin(), c.end());
  const std::size_t mid = c.size() / 2;
  return c.size() % 2 == 1 ? static_cast<double>(c[mid])
                           : 0.5 * static_cast<double>(c[mid - 1] + c[mid]);
}

// Per-leaf summary in the layout: id, median count, avg, std, CAPM alpha /
// beta / R^2 against the panel's value-weighted market column.
ordered_json leaf_table(const ptree::LeafPortfolios& lp, const Eigen::VectorXd& market) {
  ptree::FactorSet mkt;
  mkt.series = market;
  mkt.provenance.push_back(ptree::FactorProvenance{"mkt", std::nullopt});
  const ptree::TsRegressionReport capm = ptree::ts_regress(lp.returns, mkt);

  ordered_json rows = ordered_json::array();
  for (Eigen::Index l = 0; l < lp.returns.P(); ++l) {
    const Eigen::VectorXd col = lp.returns.values.col(l);
    const double mean = col.mean();
    const double sd = std::sqrt((col.array() - mean).square().sum() /
                                static_cast<double>(std::max<Eigen::Index>(1, col.size() - 1)));
    ordered_json row;
    row["id"] = lp.returns.labels[static_cast<std::size_t>(l)];
    row["median_count"] = median_of_counts(lp.counts, l);
    row["avg"] = mean;
    row["std"] = sd;
    row["alpha_capm"] = capm.alpha(l);
    row["beta_capm"] = capm.betas(l, 0);
    row["r2_capm"] = capm.r_squared(l);
    rows.push_back(std::move(row));
  }
  return rows;
}

// ---------------------------------------------------------------------------
// Commands
// ---------------------------------------------------------------------------

void run_ingest(const CommonOpts& common, const PanelOpts& panel_opts,
                const std::vector<double>& winsorize, bool emit_ranked) {
  ptree::LoadReport report;
  ptree::Panel p = load_panel_opts(panel_opts, &report);
  if (!winsorize.empty()) {
    if (winsorize.size() != 2)
      throw std::runtime_error("--winsorize takes exactly two quantiles");
    p = ptree::winsorize_returns(p, winsorize[0], winsorize[1]);
  }
  const fs::path out(common.out_dir);

  ordered_json j;
  j["rows_read"] = report.rows_read;
  j["rows_dropped"] = report.rows_dropped;
  j["reasons"] = report.reasons;
  j["periods"] = p.num_periods();
  j["characteristics"] = p.char_names;
  write_file(out / "load_report.json", j.dump(2) + "\n");
  write_panel_csv(out / "panel_clean.csv", p);

  if (emit_ranked) {
    const ptree::RankedPanel ranked = ptree::rank_normalize(p, panel_opts.neutral);
    ptree::Panel flat;
    flat.periods = ranked.periods;
    flat.char_names = ranked.char_names;
    flat.sections = ranked.sections;
    write_panel_csv(out / "ranked_panel.csv", flat);
  }
}

void run_grow(const CommonOpts& common, const PanelOpts& panel_opts, const GrowthOpts& growth) {
  const ptree::Panel p = load_panel_opts(panel_opts);
  const ptree::RankedPanel ranked = ptree::rank_normalize(p, panel_opts.neutral);
  const ptree::GrowthConfig cfg = growth_config(growth, common);
  const ptree::GrownTree grown = ptree::grow_tree(ranked, cfg);
  const fs::path out(common.out_dir);

  write_file(out / "tree.json", ptree::tree_to_json(grown.tree));
  write_file(out / "tree.dot", ptree::tree_to_dot(grown.tree, ranked.char_names, &grown.leaves));
  write_series_csv(out / "leaf_returns.csv", ranked.periods, grown.leaves.returns.values,
                   grown.leaves.returns.labels);
  write_series_csv(out / "factor.csv", ranked.periods, grown.factor, {"factor"});

  ordered_json rep;
  rep["num_leaves"] = grown.tree.num_leaves();
  rep["root_only"] = grown.root_only;
  rep["empty_cells"] = grown.leaves.empty_cells;
  rep["splits"] = ordered_json::array();
  for (const ptree::SplitStep& s : grown.steps) {
    ordered_json sj;
    sj["node"] = s.node;
    sj["char"] = ranked.char_names[static_cast<std::size_t>(s.rule.char_index)];
    sj["threshold"] = s.rule.threshold;
    sj["criterion"] = s.value;
    rep["splits"].push_back(std::move(sj));
  }
  rep["factor"] = {{"gamma", grown.mve.gamma},
                   {"sharpe_per_period", grown.mve.sharpe_per_period},
                   {"sharpe_annualized", grown.mve.sharpe_annualized}};
  rep["mve_weights"] = std::vector<double>(grown.mve.weights.data(),
                                           grown.mve.weights.data() + grown.mve.weights.size());
  rep["leaves"] = leaf_table(grown.leaves, market_column(ranked));
  write_file(out / "report.json", rep.dump(2) + "\n");
}

void run_boost(const CommonOpts& common, const PanelOpts& panel_opts, const GrowthOpts& growth,
               int num_trees, double factor_gamma, bool market_initial) {
  const ptree::Panel p = load_panel_opts(panel_opts);
  const ptree::RankedPanel ranked = ptree::rank_normalize(p, panel_opts.neutral);

  ptree::BoostConfig cfg;
  cfg.num_trees = num_trees;
  cfg.factor_gamma = factor_gamma;
  cfg.tree_config = growth_config(growth, common);
  if (market_initial)
    cfg.initial_factors.append(market_column(ranked), ptree::FactorProvenance{"mkt", std::nullopt});

  const ptree::BoostResult result = ptree::boost(ranked, cfg);
  const fs::path out(common.out_dir);

  std::vector<std::string> labels;
  for (const auto& prov : result.factors.provenance) labels.push_back(prov.source);
  write_series_csv(out / "factors.csv", ranked.periods, result.factors.series, labels);
  for (std::size_t k = 0; k < result.trees.size(); ++k)
    write_file(out / ("tree_" + std::to_string(k + 1) + ".json"),
               ptree::tree_to_json(result.trees[k]));

  const std::vector<double> cumulative = ptree::cumulative_sharpe(result);
  ordered_json rep;
  rep["num_trees"] = static_cast<int>(result.trees.size());
  rep["num_initial_factors"] = result.num_initial;
  rep["factor_gamma"] = result.factor_gamma;
  rep["degenerate_trees"] = result.degenerate_trees;
  rep["factors"] = ordered_json::array();
  for (std::size_t k = 0; k < result.trees.size(); ++k) {
    const Eigen::Index col = result.num_initial + static_cast<Eigen::Index>(k);
    ordered_json fj;
    fj["label"] = labels[static_cast<std::size_t>(col)];
    fj["single_sharpe"] =
        ptree::annualized_sharpe(Eigen::VectorXd(result.factors.series.col(col)),
                                 common.periods_per_year);
    fj["cumulative_sharpe"] = cumulative[k];
    rep["factors"].push_back(std::move(fj));
  }
  rep["mve_weights"] = std::vector<double>(result.mve.weights.data(),
                                           result.mve.weights.data() + result.mve.weights.size());
  rep["mve_sharpe_annualized"] = result.mve.sharpe_annualized;
  write_file(out / "boost_report.json", rep.dump(2) + "\n");
}

ptree::SplitMode parse_split_mode(const std::string& s) {
  if (s == "goal" || s == "goal_oriented") return ptree::SplitMode::goal_oriented;
  if (s == "random") return ptree::SplitMode::random;
  throw std::runtime_error("unknown split mode '" + s + "' (use goal|random)");
}

void run_forest(const CommonOpts& common, const PanelOpts& panel_opts, const GrowthOpts& growth,
                int num_trees, int chars_per_tree, const std::string& split_mode,
                const std::vector<int>& selection_j) {
  const ptree::Panel p = load_panel_opts(panel_opts);
  const ptree::RankedPanel ranked = ptree::rank_normalize(p, panel_opts.neutral);

  ptree::ForestConfig cfg;
  cfg.num_trees = num_trees;
  cfg.chars_per_tree = chars_per_tree;
  cfg.tree_config = growth_config(growth, common);
  cfg.seed = common.seed;
  cfg.split_mode = parse_split_mode(split_mode);
  cfg.threads = common.threads;

  const ptree::Forest forest = ptree::grow_forest(ranked, cfg);
  const fs::path out(common.out_dir);

  write_series_csv(out / "stacked_leaves.csv", ranked.periods, forest.stacked_leaves.values,
                   forest.stacked_leaves.labels);

  ordered_json fj;
  fj["seed"] = forest.seed;
  fj["num_trees"] = num_trees;
  fj["chars_per_tree"] = chars_per_tree;
  fj["split_mode"] = split_mode;
  fj["trees"] = ordered_json::array();
  for (const ptree::ForestTree& ft : forest.trees) {
    ordered_json tj;
    tj["offered_chars"] = ft.offered_chars;
    tj["bootstrap_periods"] = ft.bootstrap_periods;
    tj["tree"] = tree_json_object(ft.tree);
    fj["trees"].push_back(std::move(tj));
  }
  write_file(out / "forest.json", fj.dump(2) + "\n");

  for (const int j : selection_j) {
    const ptree::SelectionProbability sel = ptree::selection_probability(forest, j);
    std::ostringstream csv;
    csv << "char,offered,selected_top" << j << ",probability\n";
    for (std::size_t k = 0; k < sel.probability.size(); ++k) {
      csv << ranked.char_names[k] << "," << sel.offered[k] << "," << sel.selected[k] << ","
          << (sel.offered[k] > 0 ? fmt(sel.probability[k]) : "") << "\n";
    }
    write_file(out / ("importance_j" + std::to_string(j) + ".csv"), csv.str());
  }
}

void run_sdf_sweep(const CommonOpts& common, const PanelOpts& panel_opts, const GrowthOpts& growth,
                   int num_trees, int chars_per_tree, const std::string& split_mode,
                   int train_end, const std::vector<double>& gammas,
                   const std::vector<double>& complexities) {
  PanelOpts full_opts = panel_opts;
  full_opts.train_end = -1;  // the sweep needs train and test periods
  const ptree::Panel p = load_panel_opts(full_opts);
  const ptree::RankedPanel ranked = ptree::rank_normalize(p, panel_opts.neutral);

  ptree::PeriodMask mask;
  mask.included.resize(ranked.periods.size());
  for (std::size_t t = 0; t < ranked.periods.size(); ++t)
    mask.included[t] = ranked.periods[t] <= train_end ? 1 : 0;
  const ptree::RankedPanel train = ptree::subsample(ranked, mask);

  ptree::ForestConfig cfg;
  cfg.num_trees = num_trees;
  cfg.chars_per_tree = chars_per_tree;
  cfg.tree_config = growth_config(growth, common);
  cfg.seed = common.seed;
  cfg.split_mode = parse_split_mode(split_mode);
  cfg.threads = common.threads;
  const ptree::Forest forest = ptree::grow_forest(train, cfg);

  const std::vector<ptree::SweepCell> cells =
      ptree::sdf_sweep(forest, ranked, mask, gammas, complexities, common.periods_per_year);

  std::ostringstream csv;
  csv << "gamma,complexity,P,oos_sharpe,oos_pricing_error\n";
  for (const ptree::SweepCell& c : cells)
    csv << fmt(c.gamma) << "," << fmt(c.complexity) << "," << c.num_columns << ","
        << fmt(c.oos_sharpe) << "," << fmt(c.oos_pricing_error) << "\n";
  write_file(fs::path(common.out_dir) / "sweep.csv", csv.str());
}

void run_evaluate(const CommonOpts& common, const std::string& assets_path,
                  const std::string& factors_path) {
  const auto [asset_periods, assets] = load_matrix_csv(assets_path);
  const auto [factor_periods, factor_matrix] = load_matrix_csv(factors_path);
  if (asset_periods != factor_periods)
    throw std::runtime_error("evaluate: asset and factor files cover different periods");

  ptree::FactorSet factors;
  factors.series = factor_matrix.values;
  for (const std::string& l : factor_matrix.labels)
    factors.provenance.push_back(ptree::FactorProvenance{l, std::nullopt});

  const ptree::TsRegressionReport ts = ptree::ts_regress(assets, factors);
  const ptree::CsR2Report cs = ptree::cross_sectional_r2(assets, factors);
  const std::vector<ptree::ExpandingRow> expanding = ptree::expanding_factor_test(factors);

  ordered_json j;
  j["time_series"] = ordered_json::array();
  for (Eigen::Index i = 0; i < assets.P(); ++i) {
    ordered_json row;
    row["asset"] = assets.labels[static_cast<std::size_t>(i)];
    row["alpha"] = ts.alpha(i);
    row["alpha_t"] = ts.alpha_t(i);
    row["r_squared"] = ts.r_squared(i);
    const Eigen::RowVectorXd beta_row = ts.betas.row(i);
    row["betas"] = std::vector<double>(beta_row.data(), beta_row.data() + beta_row.size());
    j["time_series"].push_back(std::move(row));
  }
  try {
    const ptree::GrsReport g = ptree::grs(assets, factors);
    j["grs"] = {{"statistic", g.statistic}, {"p_value", g.p_value},
                {"N", g.n},                 {"T", g.t},
                {"M", g.m}};
  } catch (const std::exception& e) {
    j["grs"] = {{"error", e.what()}};
  }
  j["cross_section"] = {
      {"lambda", std::vector<double>(cs.lambda.data(), cs.lambda.data() + cs.lambda.size())},
      {"r_squared", cs.r_squared}};
  j["expanding"] = ordered_json::array();
  for (std::size_t k = 0; k < expanding.size(); ++k) {
    ordered_json row;
    row["factor"] = factor_matrix.labels[k];
    if (expanding[k].applicable) {
      row["alpha"] = expanding[k].alpha;
      row["t_stat"] = expanding[k].t_stat;
      row["r_squared"] = expanding[k].r_squared;
    } else {
      row["alpha"] = nullptr;
    }
    j["expanding"].push_back(std::move(row));
  }
  write_file(fs::path(common.out_dir) / "evaluation.json", j.dump(2) + "\n");

  std::ostringstream csv;
  csv << "asset,alpha,alpha_t,r_squared\n";
  for (Eigen::Index i = 0; i < assets.P(); ++i)
    csv << assets.labels[static_cast<std::size_t>(i)] << "," << fmt(ts.alpha(i)) << ","
        << fmt(ts.alpha_t(i)) << "," << fmt(ts.r_squared(i)) << "\n";
  write_file(fs::path(common.out_dir) / "ts_table.csv", csv.str());
}

void run_simulate(const CommonOpts& common, const ptree::SimConfig& cfg) {
  const ptree::SimPanel sim = ptree::simulate_panel(cfg);
  const fs::path out(common.out_dir);
  write_panel_csv(out / "panel.csv", sim.panel);

  ordered_json truth;
  truth["seed"] = cfg.seed;
  truth["n_assets"] = cfg.n_assets;
  truth["t_train"] = cfg.t_train;
  truth["t_test"] = cfg.t_test;
  truth["num_chars"] = cfg.num_chars;
  truth["kappa"] = cfg.kappa;
  truth["coefs"] = cfg.coefs;
  truth["sigma_eps"] = cfg.sigma_eps;
  truth["var1_persistence"] = cfg.var1_persistence;
  truth["var1_common_loading"] = cfg.var1_common_loading;
  truth["market_mean"] = cfg.market_mean;
  truth["market_sd"] = cfg.market_sd;
  truth["true_char_indices"] = cfg.true_char_indices;
  truth["true_char_names"] = {sim.panel.char_names[static_cast<std::size_t>(cfg.true_char_indices[0])],
                              sim.panel.char_names[static_cast<std::size_t>(cfg.true_char_indices[1])],
                              sim.panel.char_names[static_cast<std::size_t>(cfg.true_char_indices[2])]};
  truth["start_period"] = cfg.start_period;
  truth["train_end_period"] =
      sim.panel.periods[static_cast<std::size_t>(cfg.t_train - 1)];
  write_file(out / "truth.json", truth.dump(2) + "\n");
}

void run_char_eval(const CommonOpts& common, const PanelOpts& panel_opts, const GrowthOpts& growth,
                   const std::string& control_char, const std::string& baseline_spec_path) {
  const ptree::Panel p = load_panel_opts(panel_opts);
  const ptree::RankedPanel ranked = ptree::rank_normalize(p, panel_opts.neutral);
  const ptree::GrowthConfig cfg = growth_config(growth, common);

  const int control = find_char(ranked.char_names, control_char);
  std::vector<ptree::FixedSplit> spec;
  if (!baseline_spec_path.empty()) {
    std::ifstream in(baseline_spec_path);
    if (!in) throw std::runtime_error("cannot open " + baseline_spec_path);
    const ordered_json j = ordered_json::parse(in);
    for (const auto& sj : j) {
      ptree::FixedSplit fsplit;
      fsplit.path = sj.at("path").get<std::string>();
      const auto& cj = sj.at("char");
      fsplit.char_index = cj.is_string() ? find_char(ranked.char_names, cj.get<std::string>())
                                         : cj.get<int>();
      fsplit.threshold = sj.at("threshold").get<double>();
      spec.push_back(std::move(fsplit));
    }
  } else {
    // Default three-layer baseline on the control characteristic.
    spec = {{"", control, -0.2}, {"L", control, -0.6}, {"R", control, 0.2}};
  }
  const ptree::PTree base = ptree::grow_fixed_tree(spec);
  write_file(fs::path(common.out_dir) / "baseline_tree.json", ptree::tree_to_json(base));

  struct Row {
    std::string name;
    double value;
    bool is_control;
  };
  std::vector<Row> rows;
  for (int k = 0; k < static_cast<int>(ranked.num_chars()); ++k) {
    const double v = ptree::incremental_char_value(base, ranked, k, cfg);
    rows.push_back(Row{ranked.char_names[static_cast<std::size_t>(k)], v, k == control});
  }
  std::stable_sort(rows.begin(), rows.end(),
                   [](const Row& a, const Row& b) { return a.value > b.value; });

  std::ostringstream csv;
  csv << "char,value,value_annualized,is_control\n";
  const double ann = std::sqrt(static_cast<double>(common.periods_per_year));
  for (const Row& r : rows)
    csv << r.name << "," << fmt(r.value) << "," << fmt(r.value * ann) << ","
        << (r.is_control ? 1 : 0) << "\n";
  write_file(fs::path(common.out_dir) / "char_eval.csv", csv.str());
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"P-Tree panel factor toolkit"};
  app.require_subcommand(1);
  app.set_config("--config", "", "Structured config file; command-line flags win");

  // ingest
  CommonOpts ingest_common;
  PanelOpts ingest_panel;
  std::vector<double> winsorize;
  bool emit_ranked = false;
  CLI::App* ingest = app.add_subcommand("ingest", "Load, validate, and clean a panel CSV");
  add_common(ingest, ingest_common);
  add_panel(ingest, ingest_panel);
  ingest->add_option("--winsorize", winsorize, "Per-period return clipping quantiles (lo hi)")
      ->expected(2);
  ingest->add_flag("--emit-ranked", emit_ranked, "Also write the rank-normalized panel");

  // grow
  CommonOpts grow_common;
  PanelOpts grow_panel;
  GrowthOpts grow_growth;
  CLI::App* grow = app.add_subcommand("grow", "Grow a single P-Tree");
  add_common(grow, grow_common);
  add_panel(grow, grow_panel);
  add_growth(grow, grow_growth);

  // boost
  CommonOpts boost_common;
  PanelOpts boost_panel;
  GrowthOpts boost_growth;
  int boost_trees = 5;
  double factor_gamma = 1e-5;
  bool market_initial = false;
  CLI::App* boost = app.add_subcommand("boost", "Grow sequentially boosted P-Trees");
  add_common(boost, boost_common);
  add_panel(boost, boost_panel);
  add_growth(boost, boost_growth);
  boost->add_option("--num-trees", boost_trees, "Number of boosted trees")
      ->check(CLI::PositiveNumber);
  boost->add_option("--factor-gamma", factor_gamma, "Shrinkage for the all-tree MVE");
  boost->add_flag("--market-initial", market_initial,
                  "Seed the factor set with the value-weighted market");

  // forest
  CommonOpts forest_common;
  PanelOpts forest_panel;
  GrowthOpts forest_growth;
  int forest_trees = 1000;
  int chars_per_tree = 20;
  std::string split_mode = "goal";
  std::vector<int> selection_j{1, 2, 3};
  CLI::App* forest = app.add_subcommand("forest", "Grow a random P-Forest");
  add_common(forest, forest_common);
  add_panel(forest, forest_panel);
  add_growth(forest, forest_growth);
  forest->add_option("--num-trees", forest_trees, "Bootstrap replicates B")
      ->check(CLI::PositiveNumber);
  forest->add_option("--chars-per-tree", chars_per_tree, "Characteristics offered per tree L")
      ->check(CLI::PositiveNumber);
  forest->add_option("--split-mode", split_mode, "goal | random");
  forest->add_option("--selection-j", selection_j, "Top-J split depths for importance")
      ->delimiter(',');

  // sdf-sweep
  CommonOpts sweep_common;
  PanelOpts sweep_panel;
  GrowthOpts sweep_growth;
  int sweep_trees = 100;
  int sweep_chars = 10;
  std::string sweep_mode = "random";
  int sweep_train_end = -1;
  std::vector<double> gammas{1e-5, 1e-1, 1.0, 10.0, 1000.0};
  std::vector<double> complexities{0.1, 0.2, 0.5, 1.0, 2.0, 5.0, 10.0};
  CLI::App* sweep = app.add_subcommand("sdf-sweep", "Forest SDF complexity/shrinkage sweep");
  add_common(sweep, sweep_common);
  add_panel(sweep, sweep_panel, /*with_train_end=*/false);
  add_growth(sweep, sweep_growth);
  sweep->add_option("--num-trees", sweep_trees, "Bootstrap replicates B")
      ->check(CLI::PositiveNumber);
  sweep->add_option("--chars-per-tree", sweep_chars, "Characteristics offered per tree L")
      ->check(CLI::PositiveNumber);
  sweep->add_option("--split-mode", sweep_mode, "goal | random");
  sweep->add_option("--train-end", sweep_train_end, "Last training period YYYYMM")->required();
  sweep->add_option("--gammas", gammas, "Ridge shrinkage grid")->delimiter(',');
  sweep->add_option("--complexities", complexities, "Complexity grid c = P/T")->delimiter(',');

  // evaluate
  CommonOpts eval_common;
  std::string assets_path, factors_path;
  CLI::App* evaluate = app.add_subcommand("evaluate", "Asset-pricing test battery");
  add_common(evaluate, eval_common);
  evaluate->add_option("--assets", assets_path, "Asset return matrix CSV")->required();
  evaluate->add_option("--factors", factors_path, "Factor return matrix CSV")->required();

  // simulate
  CommonOpts sim_common;
  ptree::SimConfig sim_cfg;
  std::vector<int> true_chars{0, 1, 2};
  std::vector<double> coefs{-0.004, 0.003, 0.003, 0.004, -0.002};
  CLI::App* simulate = app.add_subcommand("simulate", "Generate a synthetic panel");
  add_common(simulate, sim_common);
  simulate->add_option("--n-assets", sim_cfg.n_assets, "Assets per period");
  simulate->add_option("--t-train", sim_cfg.t_train, "Training periods");
  simulate->add_option("--t-test", sim_cfg.t_test, "Test periods");
  simulate->add_option("--num-chars", sim_cfg.num_chars, "Total characteristics K");
  simulate->add_option("--kappa", sim_cfg.kappa, "Signal strength");
  simulate->add_option("--coefs", coefs, "c1..c5")->delimiter(',')->expected(1, 5);
  simulate->add_option("--sigma", sim_cfg.sigma_eps, "Idiosyncratic vol per period");
  simulate->add_option("--rho", sim_cfg.var1_persistence, "Characteristic AR(1) persistence");
  simulate->add_option("--common-loading", sim_cfg.var1_common_loading,
                       "Cross-characteristic shock loading");
  simulate->add_option("--market-mean", sim_cfg.market_mean, "Market mean per period");
  simulate->add_option("--market-sd", sim_cfg.market_sd, "Market vol per period");
  simulate->add_option("--true-chars", true_chars, "Indices playing ME, BM, MOM12M")
      ->delimiter(',')
      ->expected(3);
  simulate->add_option("--start-period", sim_cfg.start_period, "First period YYYYMM");

  // char-eval
  CommonOpts char_common;
  PanelOpts char_panel;
  GrowthOpts char_growth;
  std::string control_char;
  std::string baseline_spec;
  CLI::App* char_eval = app.add_subcommand("char-eval", "Incremental characteristic evaluation");
  add_common(char_eval, char_common);
  add_panel(char_eval, char_panel);
  add_growth(char_eval, char_growth);
  char_eval->add_option("--control-char", control_char, "Characteristic controlling the baseline")
      ->required();
  char_eval->add_option("--baseline-spec", baseline_spec,
                        "JSON fixed-tree spec [{path,char,threshold}...]");

  // Lets config-file sections like [grow] populate the matching subcommand,
  // and lets `ptree grow --config f` reach the top-level --config option;
  // explicit command-line flags still take precedence.
  for (CLI::App* sub : app.get_subcommands(nullptr)) {
    sub->configurable();
    sub->fallthrough();
  }

  CLI11_PARSE(app, argc, argv);

  try {
    CLI::App* sub = app.get_subcommands().at(0);
    const std::string name = sub->get_name();
    const CommonOpts& common =
        name == "ingest"     ? ingest_common
        : name == "grow"     ? grow_common
        : name == "boost"    ? boost_common
        : name == "forest"   ? forest_common
        : name == "sdf-sweep" ? sweep_common
        : name == "evaluate" ? eval_common
        : name == "simulate" ? sim_common
                             : char_common;
    fs::create_directories(common.out_dir);

    if (name == "ingest") {
      run_ingest(ingest_common, ingest_panel, winsorize, emit_ranked);
    } else if (name == "grow") {
      run_grow(grow_common, grow_panel, grow_growth);
    } else if (name == "boost") {
      run_boost(boost_common, boost_panel, boost_growth, boost_trees, factor_gamma,
                market_initial);
    } else if (name == "forest") {
      run_forest(forest_common, forest_panel, forest_growth, forest_trees, chars_per_tree,
                 split_mode, selection_j);
    } else if (name == "sdf-sweep") {
      run_sdf_sweep(sweep_common, sweep_panel, sweep_growth, sweep_trees, sweep_chars, sweep_mode,
                    sweep_train_end, gammas, complexities);
    } else if (name == "evaluate") {
      run_evaluate(eval_common, assets_path, factors_path);
    } else if (name == "simulate") {
      if (static_cast<int>(coefs.size()) != 5)
        throw std::runtime_error("--coefs needs exactly five values");
      std::copy(coefs.begin(), coefs.end(), sim_cfg.coefs.begin());
      std::copy(true_chars.begin(), true_chars.end(), sim_cfg.true_char_indices.begin());
      sim_cfg.seed = sim_common.seed;
      run_simulate(sim_common, sim_cfg);
    } else if (name == "char-eval") {
      run_char_eval(char_common, char_panel, char_growth, control_char, baseline_spec);
    }

    write_manifest(common.out_dir, name, app.config_to_str(true, false), common.seed);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
