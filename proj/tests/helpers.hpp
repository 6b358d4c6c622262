#pragma once

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include "ptree/panel.hpp"
#include "ptree/rng.hpp"

namespace testutil {

// Complete random panel: uniform raw characteristics, mildly noisy returns,
// log-normal weight bases. Deterministic given the rng state.
inline ptree::Panel random_panel(ptree::Rng& rng, int n_assets, int n_chars, int n_periods,
                                 double ret_sd = 0.05) {
  ptree::Panel p;
  for (int k = 0; k < n_chars; ++k) p.char_names.push_back("c" + std::to_string(k));
  for (int t = 0; t < n_periods; ++t) {
    p.periods.push_back(200001 + t);
    ptree::CrossSection cs;
    for (int i = 0; i < n_assets; ++i) {
      cs.asset_ids.push_back("a" + std::to_string(i));
      cs.returns.push_back(rng.normal(0.005, ret_sd));
      cs.weight_base.push_back(std::exp(rng.normal(0.0, 0.5)));
    }
    cs.chars.resize(static_cast<std::size_t>(n_chars));
    for (int k = 0; k < n_chars; ++k)
      for (int i = 0; i < n_assets; ++i) cs.chars[static_cast<std::size_t>(k)].push_back(rng.uniform(-1.0, 1.0));
    p.sections.push_back(std::move(cs));
  }
  return p;
}

// Single-period, single-characteristic builder for hand-sized cases. Missing
// characteristics are NaN, matching the loader's representation.
inline ptree::Panel tiny_panel(const std::vector<double>& returns,
                               const std::vector<double>& weights,
                               const std::vector<std::vector<double>>& char_cols,
                               int first_period = 200001, int n_periods = 1) {
  ptree::Panel p;
  for (std::size_t k = 0; k < char_cols.size(); ++k) p.char_names.push_back("c" + std::to_string(k));
  const std::size_t n = returns.size();
  for (int t = 0; t < n_periods; ++t) {
    p.periods.push_back(first_period + t);
    ptree::CrossSection cs;
    for (std::size_t i = 0; i < n; ++i) {
      cs.asset_ids.push_back("a" + std::to_string(i));
      cs.returns.push_back(returns[i]);
      cs.weight_base.push_back(weights[i]);
    }
    cs.chars = char_cols;
    p.sections.push_back(std::move(cs));
  }
  return p;
}

// Scratch file helper; files land under the system temp dir and are
// overwritten per test run.
inline std::string write_scratch(const std::string& name, const std::string& content) {
  const auto path = std::filesystem::temp_directory_path() / name;
  std::ofstream out(path, std::ios::binary);
  out << content;
  out.close();
  return path.string();
}

}  // namespace testutil
