#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <vector>

namespace ptree {

// One period's cross-section, column-major: chars[k][i] is characteristic k
// of record i. Missing raw characteristics are stored as NaN.
struct CrossSection {
  std::vector<std::string> asset_ids;
  std::vector<double> returns;       // per-period excess returns r_{i,t}
  std::vector<double> weight_base;   // value-weight basis, > 0 after loading
  std::vector<std::vector<double>> chars;  // [K][n]

  std::size_t size() const { return returns.size(); }
};

// Unbalanced raw panel. Periods are strictly increasing integers (YYYYMM by
// file convention). Immutable after construction; share freely across threads.
struct Panel {
  std::vector<int> periods;
  std::vector<CrossSection> sections;
  std::vector<std::string> char_names;

  std::size_t num_periods() const { return periods.size(); }
  std::size_t num_chars() const { return char_names.size(); }
  void validate() const;  // throws std::invalid_argument on invariant breach
};

// Rank-normalized panel: every characteristic lies in [-1, 1], no NaNs.
// missing_mask[t][k][i] is 1 where the value was imputed to the neutral.
struct RankedPanel {
  std::vector<int> periods;
  std::vector<CrossSection> sections;
  std::vector<std::string> char_names;
  std::vector<std::vector<std::vector<std::uint8_t>>> missing_mask;

  std::size_t num_periods() const { return periods.size(); }
  std::size_t num_chars() const { return char_names.size(); }
};

struct PeriodMask {
  std::vector<std::uint8_t> included;  // one flag per panel period
};

struct LoadReport {
  std::int64_t rows_read = 0;
  std::int64_t rows_dropped = 0;
  std::map<std::string, std::int64_t> reasons;
};

// Column-name mapping for load_panel; chars empty means "all other columns".
struct CsvSchema {
  std::string period = "period";
  std::string asset_id = "asset_id";
  std::string ret = "ret";
  std::string weight_base = "weight_base";
  std::vector<std::string> chars;
};

// Reads a delimited panel file. Rows with an empty return or an empty /
// non-positive weight_base are dropped and counted in the report; a
// duplicated (period, asset_id) pair or an unparseable field is an error.
Panel load_panel(const std::string& path, const CsvSchema& schema = {},
                 LoadReport* report = nullptr);

// Cross-sectional rank transform: per period and char, the n non-missing
// values map to 2*(rank-1)/(n-1) - 1 with average ranks for ties; a single
// non-missing value maps to 0; missing values take `neutral` and are flagged.
RankedPanel rank_normalize(const Panel& p, double neutral = 0.0);

// Clips returns per period to the [lo_q, hi_q] empirical quantiles (linear
// interpolation between order statistics).
Panel winsorize_returns(const Panel& p, double lo_q, double hi_q);

Panel subsample(const Panel& p, const PeriodMask& mask);
RankedPanel subsample(const RankedPanel& p, const PeriodMask& mask);

// Quantile by linear interpolation between adjacent order statistics on a
// pre-sorted vector; q in [0, 1]. Exposed for tests.
double interpolated_quantile(const std::vector<double>& sorted, double q);

}  // namespace ptree
