#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "idsp/error.hpp"

namespace idsp {

struct Metrics {
  double mse = 0.0;
  std::optional<double> pearson;  // empty when either side has zero variance
  std::size_t n = 0;
};

inline void check_lengths(std::span<const double> preds, std::span<const double> targets) {
  if (preds.size() != targets.size())
    throw ShapeError("metrics: " + std::to_string(preds.size()) + " predictions for " +
                     std::to_string(targets.size()) + " targets");
  if (preds.empty()) throw ShapeError("metrics: no samples");
}

inline double mse(std::span<const double> preds, std::span<const double> targets) {
  check_lengths(preds, targets);
  double s = 0.0;
  for (std::size_t i = 0; i < preds.size(); ++i) {
    const double r = preds[i] - targets[i];
    s += r * r;
  }
  return s / static_cast<double>(preds.size());
}

/// Population covariance over the product of population standard deviations.
inline double pearson(std::span<const double> preds, std::span<const double> targets) {
  check_lengths(preds, targets);
  const double n = static_cast<double>(preds.size());
  double mp = 0.0, mt = 0.0;
  for (std::size_t i = 0; i < preds.size(); ++i) {
    mp += preds[i];
    mt += targets[i];
  }
  mp /= n;
  mt /= n;
  double sxy = 0.0, sxx = 0.0, syy = 0.0;
  for (std::size_t i = 0; i < preds.size(); ++i) {
    const double a = preds[i] - mp;
    const double b = targets[i] - mt;
    sxy += a * b;
    sxx += a * a;
    syy += b * b;
  }
  if (sxx <= 0.0 || syy <= 0.0) throw NumericError("pearson: zero variance");
  return std::clamp(sxy / std::sqrt(sxx * syy), -1.0, 1.0);
}

inline Metrics compute_metrics(std::span<const double> preds, std::span<const double> targets) {
  Metrics m;
  m.mse = mse(preds, targets);
  m.n = preds.size();
  try {
    m.pearson = pearson(preds, targets);
  } catch (const NumericError&) {
    m.pearson.reset();
  }
  return m;
}

/// Mean of per-cell-line correlations; cell lines with fewer than two
/// samples or zero variance are skipped.
inline std::optional<double> pearson_per_cell_line(std::span<const double> preds,
                                                   std::span<const double> targets,
                                                   std::span<const std::string> cells) {
  check_lengths(preds, targets);
  std::map<std::string, std::pair<std::vector<double>, std::vector<double>>> by_cell;
  for (std::size_t i = 0; i < preds.size(); ++i) {
    by_cell[cells[i]].first.push_back(preds[i]);
    by_cell[cells[i]].second.push_back(targets[i]);
  }
  double sum = 0.0;
  std::size_t count = 0;
  for (const auto& [_, pt] : by_cell) {
    if (pt.first.size() < 2) continue;
    try {
      sum += pearson(pt.first, pt.second);
      ++count;
    } catch (const NumericError&) {
    }
  }
  if (count == 0) return std::nullopt;
  return sum / static_cast<double>(count);
}

}  // namespace idsp
