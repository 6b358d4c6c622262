#include "ptree/panel.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <limits>
#include <numeric>
#include <set>
#include <sstream>
#include <stdexcept>
#include <string_view>
#include <unordered_map>

namespace ptree {
namespace {

constexpr double kNaN = std::numeric_limits<double>::quiet_NaN();

std::string_view trim(std::string_view s) {
  while (!s.empty() && (s.front() == ' ' || s.front() == '\t')) s.remove_prefix(1);
  while (!s.empty() && (s.back() == ' ' || s.back() == '\t' || s.back() == '\r')) s.remove_suffix(1);
  return s;
}

std::vector<std::string_view> split_fields(std::string_view line) {
  std::vector<std::string_view> out;
  std::size_t start = 0;
  for (std::size_t i = 0; i <= line.size(); ++i) {
    if (i == line.size() || line[i] == ',') {
      out.push_back(trim(line.substr(start, i - start)));
      start = i + 1;
    }
  }
  return out;
}

bool parse_double(std::string_view s, double& out) {
  const char* first = s.data();
  const char* last = s.data() + s.size();
  auto [ptr, ec] = std::from_chars(first, last, out);
  return ec == std::errc() && ptr == last;
}

bool parse_int(std::string_view s, long& out) {
  const char* first = s.data();
  const char* last = s.data() + s.size();
  auto [ptr, ec] = std::from_chars(first, last, out);
  return ec == std::errc() && ptr == last;
}

[[noreturn]] void malformed(const std::string& path, std::size_t line_no, const std::string& what) {
  throw std::runtime_error(path + ":" + std::to_string(line_no) + ": malformed row: " + what);
}

}  // namespace

void Panel::validate() const {
  if (periods.size() != sections.size())
    throw std::invalid_argument("panel: periods/sections size mismatch");
  for (std::size_t t = 1; t < periods.size(); ++t)
    if (periods[t] <= periods[t - 1])
      throw std::invalid_argument("panel: periods not strictly increasing");
  const std::size_t k = char_names.size();
  for (std::size_t t = 0; t < sections.size(); ++t) {
    const CrossSection& cs = sections[t];
    const std::size_t n = cs.size();
    if (cs.asset_ids.size() != n || cs.weight_base.size() != n)
      throw std::invalid_argument("panel: ragged cross-section at period index " + std::to_string(t));
    if (cs.chars.size() != k)
      throw std::invalid_argument("panel: wrong characteristic count at period index " + std::to_string(t));
    for (const auto& col : cs.chars)
      if (col.size() != n)
        throw std::invalid_argument("panel: ragged characteristic column at period index " + std::to_string(t));
    std::set<std::string> seen;
    bool any_positive = false;
    for (std::size_t i = 0; i < n; ++i) {
      if (!seen.insert(cs.asset_ids[i]).second)
        throw std::invalid_argument("panel: duplicate (period, asset) pair (" +
                                    std::to_string(periods[t]) + ", " + cs.asset_ids[i] + ")");
      if (cs.weight_base[i] < 0.0)
        throw std::invalid_argument("panel: negative weight_base");
      any_positive = any_positive || cs.weight_base[i] > 0.0;
    }
    if (n > 0 && !any_positive)
      throw std::invalid_argument("panel: no positive weight_base in period " + std::to_string(periods[t]));
  }
}

Panel load_panel(const std::string& path, const CsvSchema& schema, LoadReport* report) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("load_panel: cannot open " + path);

  std::string header;
  if (!std::getline(in, header)) throw std::runtime_error("load_panel: empty file " + path);
  const auto cols = split_fields(header);

  auto find_col = [&](const std::string& name) {
    for (std::size_t i = 0; i < cols.size(); ++i)
      if (cols[i] == name) return static_cast<long>(i);
    return -1L;
  };
  const long c_period = find_col(schema.period);
  const long c_asset = find_col(schema.asset_id);
  const long c_ret = find_col(schema.ret);
  const long c_weight = find_col(schema.weight_base);
  if (c_period < 0 || c_asset < 0 || c_ret < 0 || c_weight < 0)
    throw std::runtime_error("load_panel: " + path + " is missing one of the required columns '" +
                             schema.period + "', '" + schema.asset_id + "', '" + schema.ret +
                             "', '" + schema.weight_base + "'");

  std::vector<long> char_cols;
  std::vector<std::string> char_names;
  if (schema.chars.empty()) {
    for (std::size_t i = 0; i < cols.size(); ++i) {
      const long li = static_cast<long>(i);
      if (li == c_period || li == c_asset || li == c_ret || li == c_weight) continue;
      char_cols.push_back(li);
      char_names.emplace_back(cols[i]);
    }
  } else {
    for (const auto& name : schema.chars) {
      const long c = find_col(name);
      if (c < 0) throw std::runtime_error("load_panel: " + path + " has no column '" + name + "'");
      char_cols.push_back(c);
      char_names.push_back(name);
    }
  }
  const std::size_t k = char_cols.size();

  struct Row {
    std::string asset;
    double ret;
    double weight;
    std::vector<double> chars;
  };
  std::map<long, std::vector<Row>> by_period;
  std::map<long, std::set<std::string>> seen_assets;

  LoadReport rep;
  std::string line;
  std::size_t line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    if (trim(line).empty()) continue;
    ++rep.rows_read;
    const auto fields = split_fields(line);
    if (fields.size() != cols.size())
      malformed(path, line_no, "expected " + std::to_string(cols.size()) + " fields, got " +
                                   std::to_string(fields.size()));

    long period = 0;
    if (!parse_int(fields[c_period], period)) malformed(path, line_no, "unparseable period");
    std::string asset(fields[c_asset]);
    if (asset.empty()) malformed(path, line_no, "empty asset_id");
    if (!seen_assets[period].insert(asset).second)
      throw std::runtime_error(path + ":" + std::to_string(line_no) +
                               ": duplicate (period, asset) pair (" + std::to_string(period) +
                               ", " + asset + ")");

    const std::string_view ret_f = fields[c_ret];
    const std::string_view w_f = fields[c_weight];
    double ret = 0.0, weight = 0.0;
    if (ret_f.empty()) {
      ++rep.rows_dropped;
      ++rep.reasons["missing_return"];
      continue;
    }
    if (!parse_double(ret_f, ret)) malformed(path, line_no, "unparseable return");
    if (w_f.empty()) {
      ++rep.rows_dropped;
      ++rep.reasons["missing_weight"];
      continue;
    }
    if (!parse_double(w_f, weight)) malformed(path, line_no, "unparseable weight_base");
    if (!(weight > 0.0)) {
      ++rep.rows_dropped;
      ++rep.reasons["nonpositive_weight"];
      continue;
    }

    Row row;
    row.asset = std::move(asset);
    row.ret = ret;
    row.weight = weight;
    row.chars.resize(k, kNaN);
    for (std::size_t j = 0; j < k; ++j) {
      const std::string_view f = fields[char_cols[j]];
      if (f.empty()) continue;
      if (!parse_double(f, row.chars[j]))
        malformed(path, line_no, "unparseable characteristic '" + char_names[j] + "'");
    }
    by_period[period].push_back(std::move(row));
  }

  Panel p;
  p.char_names = std::move(char_names);
  for (auto& [period, rows] : by_period) {
    if (rows.empty()) continue;
    CrossSection cs;
    const std::size_t n = rows.size();
    cs.asset_ids.reserve(n);
    cs.returns.reserve(n);
    cs.weight_base.reserve(n);
    cs.chars.assign(k, std::vector<double>(n, kNaN));
    for (std::size_t i = 0; i < n; ++i) {
      cs.asset_ids.push_back(std::move(rows[i].asset));
      cs.returns.push_back(rows[i].ret);
      cs.weight_base.push_back(rows[i].weight);
      for (std::size_t j = 0; j < k; ++j) cs.chars[j][i] = rows[i].chars[j];
    }
    p.periods.push_back(static_cast<int>(period));
    p.sections.push_back(std::move(cs));
  }
  if (p.periods.empty()) throw std::runtime_error("load_panel: " + path + " has zero usable periods");
  p.validate();
  if (report != nullptr) *report = rep;
  return p;
}

RankedPanel rank_normalize(const Panel& p, double neutral) {
  if (neutral < -1.0 || neutral > 1.0)
    throw std::invalid_argument("rank_normalize: neutral must lie in [-1, 1]");
  p.validate();

  RankedPanel out;
  out.periods = p.periods;
  out.char_names = p.char_names;
  out.sections.resize(p.sections.size());
  out.missing_mask.resize(p.sections.size());

  const std::size_t k = p.num_chars();
  for (std::size_t t = 0; t < p.sections.size(); ++t) {
    const CrossSection& src = p.sections[t];
    CrossSection& dst = out.sections[t];
    const std::size_t n = src.size();
    dst.asset_ids = src.asset_ids;
    dst.returns = src.returns;
    dst.weight_base = src.weight_base;
    dst.chars.assign(k, std::vector<double>(n, neutral));
    out.missing_mask[t].assign(k, std::vector<std::uint8_t>(n, 0));

    std::vector<std::size_t> order;
    for (std::size_t j = 0; j < k; ++j) {
      const std::vector<double>& raw = src.chars[j];
      order.clear();
      for (std::size_t i = 0; i < n; ++i) {
        if (std::isnan(raw[i]))
          out.missing_mask[t][j][i] = 1;
        else
          order.push_back(i);
      }
      const std::size_t m = order.size();
      if (m == 0) continue;
      if (m == 1) {
        dst.chars[j][order[0]] = 0.0;
        continue;
      }
      std::sort(order.begin(), order.end(),
                [&raw](std::size_t a, std::size_t b) { return raw[a] < raw[b]; });
      // Average ranks over tie groups; rank positions are 1-based.
      std::size_t i = 0;
      while (i < m) {
        std::size_t j2 = i;
        while (j2 + 1 < m && raw[order[j2 + 1]] == raw[order[i]]) ++j2;
        const double avg_rank = 0.5 * static_cast<double>(i + j2) + 1.0;
        const double z = 2.0 * (avg_rank - 1.0) / static_cast<double>(m - 1) - 1.0;
        for (std::size_t q = i; q <= j2; ++q) dst.chars[j][order[q]] = z;
        i = j2 + 1;
      }
    }
  }
  return out;
}

double interpolated_quantile(const std::vector<double>& sorted, double q) {
  if (sorted.empty()) throw std::invalid_argument("interpolated_quantile: empty input");
  if (q < 0.0 || q > 1.0) throw std::invalid_argument("interpolated_quantile: q outside [0, 1]");
  const std::size_t n = sorted.size();
  if (n == 1) return sorted[0];
  const double h = q * static_cast<double>(n - 1);
  const auto lo = static_cast<std::size_t>(h);
  if (lo + 1 >= n) return sorted[n - 1];
  const double frac = h - static_cast<double>(lo);
  return sorted[lo] + frac * (sorted[lo + 1] - sorted[lo]);
}

Panel winsorize_returns(const Panel& p, double lo_q, double hi_q) {
  if (!(lo_q >= 0.0 && lo_q < hi_q && hi_q <= 1.0))
    throw std::invalid_argument("winsorize_returns: need 0 <= lo_q < hi_q <= 1");
  Panel out = p;
  std::vector<double> sorted;
  for (CrossSection& cs : out.sections) {
    if (cs.size() == 0) continue;
    sorted = cs.returns;
    std::sort(sorted.begin(), sorted.end());
    const double lo = interpolated_quantile(sorted, lo_q);
    const double hi = interpolated_quantile(sorted, hi_q);
    for (double& r : cs.returns) r = std::clamp(r, lo, hi);
  }
  return out;
}

namespace {

template <typename PanelT>
PanelT subsample_impl(const PanelT& p, const PeriodMask& mask) {
  if (mask.included.size() != p.periods.size())
    throw std::invalid_argument("subsample: mask length does not cover all panel periods");
  PanelT out;
  out.char_names = p.char_names;
  for (std::size_t t = 0; t < p.periods.size(); ++t) {
    if (!mask.included[t]) continue;
    out.periods.push_back(p.periods[t]);
    out.sections.push_back(p.sections[t]);
    if constexpr (requires { out.missing_mask; }) out.missing_mask.push_back(p.missing_mask[t]);
  }
  if (out.periods.empty()) throw std::runtime_error("subsample: mask excludes every period");
  return out;
}

}  // namespace

Panel subsample(const Panel& p, const PeriodMask& mask) { return subsample_impl(p, mask); }

RankedPanel subsample(const RankedPanel& p, const PeriodMask& mask) {
  return subsample_impl(p, mask);
}

}  // namespace ptree
