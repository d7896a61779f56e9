#pragma once

// Regression metrics: R^2, MSE and mean absolute error binned by the true
// drag coefficient.

#include <cmath>
#include <cstddef>
#include <iomanip>
#include <limits>
#include <optional>
#include <ostream>
#include <span>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "orthorep/error.hpp"

namespace orthorep {

namespace detail {
inline void check_pairs(std::span<const double> preds, std::span<const double> labels, const char* what) {
  if (preds.size() != labels.size())
    throw ConfigError(std::string(what) + ": predictions and labels differ in length");
  if (preds.empty()) throw ConfigError(std::string(what) + ": empty input");
}
}  // namespace detail

inline double mse(std::span<const double> preds, std::span<const double> labels) {
  detail::check_pairs(preds, labels, "mse");
  double s = 0.0;
  for (std::size_t i = 0; i < preds.size(); ++i) s += (preds[i] - labels[i]) * (preds[i] - labels[i]);
  return s / static_cast<double>(preds.size());
}

/// 1 - SS_res / SS_tot, with SS_tot taken about the label mean.
inline double r_squared(std::span<const double> preds, std::span<const double> labels) {
  detail::check_pairs(preds, labels, "r_squared");
  double mean = 0.0;
  for (double y : labels) mean += y;
  mean /= static_cast<double>(labels.size());
  double ss_res = 0.0, ss_tot = 0.0;
  for (std::size_t i = 0; i < labels.size(); ++i) {
    ss_res += (labels[i] - preds[i]) * (labels[i] - preds[i]);
    ss_tot += (labels[i] - mean) * (labels[i] - mean);
  }
  if (!(ss_tot > 0.0)) throw ConfigError("r_squared: labels have zero variance");
  return 1.0 - ss_res / ss_tot;
}

/// Label interval; the lower edge is open unless `closed_lower` is set.
struct DragBin {
  double lo;
  double hi;
  bool closed_lower = false;

  bool contains(double y) const { return (closed_lower ? y >= lo : y > lo) && y <= hi; }
  std::string label() const {
    std::ostringstream s;
    s << (closed_lower ? '[' : '(') << lo << ", " << hi << ']';
    return s.str();
  }
};

/// Drag-coefficient bins of the reference error table.
inline std::vector<DragBin> reference_bins() {
  return {{0.18, 0.3, true}, {0.3, 0.4}, {0.4, 0.5}, {0.5, 0.6}, {0.6, 0.7}, {0.7, 0.8}, {0.8, 0.91}};
}

/// Published mean absolute error per reference bin (same order as
/// reference_bins()). Comparison context only.
inline std::vector<double> reference_bin_errors() { return {0.032, 0.021, 0.023, 0.029, 0.021, 0.092, 0.218}; }

/// Published full-scale test MSE (comparison context only).
inline constexpr double kReferenceMse = 8.2e-4;

struct BinnedError {
  std::string range;  // "overflow" for the catch-all row
  double mean_abs_error = 0.0;
  std::size_t count = 0;
};

/// Mean |pred - label| per bin; labels in no bin go to a trailing overflow row.
inline std::vector<BinnedError> binned_error(std::span<const double> preds, std::span<const double> labels,
                                             const std::vector<DragBin>& bins = reference_bins()) {
  if (preds.size() != labels.size()) throw ConfigError("binned_error: predictions and labels differ in length");
  std::vector<BinnedError> rows(bins.size() + 1);
  std::vector<double> sums(bins.size() + 1, 0.0);
  for (std::size_t b = 0; b < bins.size(); ++b) rows[b].range = bins[b].label();
  rows.back().range = "overflow";
  for (std::size_t i = 0; i < labels.size(); ++i) {
    std::size_t b = 0;
    while (b < bins.size() && !bins[b].contains(labels[i])) ++b;
    sums[b] += std::abs(preds[i] - labels[i]);
    ++rows[b].count;
  }
  for (std::size_t b = 0; b < rows.size(); ++b)
    rows[b].mean_abs_error = rows[b].count ? sums[b] / static_cast<double>(rows[b].count) : 0.0;
  return rows;
}

struct EvalReport {
  std::optional<double> r_squared;  // unset when labels have zero variance
  double mse = 0.0;
  double mean_abs_error = 0.0;
  std::vector<BinnedError> binned_errors;
  std::size_t n = 0;
};

inline EvalReport evaluate(std::span<const double> preds, std::span<const double> labels,
                           const std::vector<DragBin>& bins = reference_bins()) {
  detail::check_pairs(preds, labels, "evaluate");
  EvalReport r;
  r.n = preds.size();
  r.mse = mse(preds, labels);
  try {
    r.r_squared = r_squared(preds, labels);
  } catch (const ConfigError&) {
    r.r_squared.reset();
  }
  double mae = 0.0;
  for (std::size_t i = 0; i < preds.size(); ++i) mae += std::abs(preds[i] - labels[i]);
  r.mean_abs_error = mae / static_cast<double>(r.n);
  r.binned_errors = binned_error(preds, labels, bins);
  return r;
}

inline nlohmann::json to_json(const EvalReport& r) {
  nlohmann::json bins = nlohmann::json::array();
  for (const auto& b : r.binned_errors)
    bins.push_back({{"range", b.range}, {"mean_abs_error", b.mean_abs_error}, {"count", b.count}});
  return {{"n", r.n},
          {"r_squared", r.r_squared ? nlohmann::json(*r.r_squared) : nlohmann::json(nullptr)},
          {"mse", r.mse},
          {"mean_abs_error", r.mean_abs_error},
          {"binned_errors", bins}};
}

/// Aligned text table. Reference errors are printed next to the matching
/// bins when `with_reference` is set.
inline void write_table(const EvalReport& r, std::ostream& out, bool with_reference = false) {
  out << std::fixed;
  out << "n     " << r.n << '\n';
  out << "R^2   ";
  if (r.r_squared)
    out << std::setprecision(4) << *r.r_squared << '\n';
  else
    out << "n/a\n";
  out << "MSE   " << std::scientific << std::setprecision(3) << r.mse << std::fixed << '\n';
  out << "MAE   " << std::setprecision(4) << r.mean_abs_error << "\n\n";
  out << std::left << std::setw(14) << "range" << std::right << std::setw(8) << "count" << std::setw(12) << "mean|err|";
  if (with_reference) out << std::setw(12) << "reference";
  out << '\n';
  const auto ref = reference_bin_errors();
  for (std::size_t b = 0; b < r.binned_errors.size(); ++b) {
    const auto& row = r.binned_errors[b];
    out << std::left << std::setw(14) << row.range << std::right << std::setw(8) << row.count << std::setw(12)
        << std::setprecision(4) << row.mean_abs_error;
    if (with_reference) {
      if (b < ref.size())
        out << std::setw(12) << std::setprecision(3) << ref[b];
      else
        out << std::setw(12) << "-";
    }
    out << '\n';
  }
  out.unsetf(std::ios::floatfield);
}

/// Scatter dump (prediction vs label) for external plotting.
inline void write_scatter_csv(std::span<const double> preds, std::span<const double> labels, std::ostream& out,
                              std::span<const std::string> ids = {}) {
  out << "id,prediction,label\n" << std::setprecision(17);
  for (std::size_t i = 0; i < preds.size(); ++i)
    out << (i < ids.size() ? ids[i] : std::to_string(i)) << ',' << preds[i] << ',' << labels[i] << '\n';
}

/// Mean and sample standard deviation of a metric over repeated runs.
struct Aggregate {
  double mean = 0.0;
  double stddev = 0.0;
  std::size_t runs = 0;
};

inline Aggregate aggregate(std::span<const double> values) {
  Aggregate a;
  a.runs = values.size();
  if (values.empty()) return a;
  for (double v : values) a.mean += v;
  a.mean /= static_cast<double>(values.size());
  if (values.size() > 1) {
    double s = 0.0;
    for (double v : values) s += (v - a.mean) * (v - a.mean);
    a.stddev = std::sqrt(s / static_cast<double>(values.size() - 1));
  }
  return a;
}

}  // namespace orthorep
