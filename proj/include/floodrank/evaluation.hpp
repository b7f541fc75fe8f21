#pragma once

// RMSE in centimetres and level units, fold aggregation, and per-level
// prediction-distribution export (JSON + SVG box plot).

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <map>
#include <optional>
#include <span>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "floodrank/errors.hpp"
#include "floodrank/level_scale.hpp"

namespace floodrank {

inline double rmse(std::span<const double> predictions, std::span<const double> truths) {
  if (predictions.size() != truths.size())
    throw DomainError("rmse: " + std::to_string(predictions.size()) + " predictions vs " +
                      std::to_string(truths.size()) + " truths");
  if (predictions.empty()) throw DomainError("rmse of an empty set");
  double sum = 0.0;
  for (std::size_t i = 0; i < predictions.size(); ++i) {
    const double d = predictions[i] - truths[i];
    sum += d * d;
  }
  return std::sqrt(sum / static_cast<double>(predictions.size()));
}

enum class LevelConversion { continuous, rounded };

// Both sides go through cm_to_level (clamped into the scale) before the RMSE.
inline double rmse_level(std::span<const double> predictions_cm, std::span<const double> truths_cm,
                         LevelConversion conv = LevelConversion::continuous) {
  if (predictions_cm.size() != truths_cm.size()) throw DomainError("rmse_level: size mismatch");
  auto to_level = [conv](double cm) {
    const double l = cm_to_level(clamp_depth(cm)).value();
    return conv == LevelConversion::rounded ? std::round(l) : l;
  };
  std::vector<double> p, t;
  p.reserve(predictions_cm.size());
  t.reserve(truths_cm.size());
  for (double v : predictions_cm) p.push_back(to_level(v));
  for (double v : truths_cm) t.push_back(to_level(v));
  return rmse(p, t);
}

struct FoldReport {
  int fold_id = 0;
  double rmse_cm = 0.0;
  double rmse_level = 0.0;
  std::optional<double> val_rmse_cm;
  std::map<int, std::vector<double>> per_level_predictions;  // truth level -> predicted cm
};

// Test-set report for one fold: clamped predictions against truths.
inline FoldReport make_fold_report(int fold_id, std::span<const double> predictions_cm,
                                   std::span<const double> truths_cm,
                                   LevelConversion conv = LevelConversion::continuous) {
  FoldReport r;
  r.fold_id = fold_id;
  std::vector<double> clamped;
  clamped.reserve(predictions_cm.size());
  for (double p : predictions_cm) clamped.push_back(clamp_depth(p).value());
  r.rmse_cm = rmse(clamped, truths_cm);
  r.rmse_level = rmse_level(clamped, truths_cm, conv);
  for (std::size_t i = 0; i < clamped.size(); ++i)
    r.per_level_predictions[nearest_level(truths_cm[i])].push_back(clamped[i]);
  return r;
}

enum class StdConvention { sample, population };

inline std::string to_string(StdConvention c) {
  return c == StdConvention::sample ? "sample" : "population";
}

struct MeanStd {
  double mean = 0.0;
  double std = 0.0;
};

inline MeanStd mean_std(std::span<const double> xs, StdConvention conv) {
  if (xs.size() < 2) throw DomainError("standard deviation needs at least 2 values");
  double mean = 0.0;
  for (double x : xs) mean += x;
  mean /= static_cast<double>(xs.size());
  double ss = 0.0;
  for (double x : xs) ss += (x - mean) * (x - mean);
  const double denom = conv == StdConvention::sample ? double(xs.size() - 1) : double(xs.size());
  return {mean, std::sqrt(ss / denom)};
}

struct ExperimentReport {
  std::string regime;
  double avg_rmse_cm = 0.0;
  double std_cm = 0.0;
  double avg_rmse_level = 0.0;
  double std_level = 0.0;
  std::optional<double> avg_val_rmse_cm;
  StdConvention convention = StdConvention::sample;
  std::vector<FoldReport> folds;
};

inline ExperimentReport aggregate_folds(std::vector<FoldReport> reports, std::string regime = {},
                                        StdConvention conv = StdConvention::sample) {
  if (reports.size() < 2)
    throw DomainError("fold aggregation needs at least 2 folds, got " + std::to_string(reports.size()));
  std::vector<double> cm, lv, val;
  for (const auto& r : reports) {
    if (!(r.rmse_cm >= 0.0) || !std::isfinite(r.rmse_cm) || !(r.rmse_level >= 0.0) ||
        !std::isfinite(r.rmse_level))
      throw DomainError("fold RMSE values must be finite and non-negative");
    cm.push_back(r.rmse_cm);
    lv.push_back(r.rmse_level);
    if (r.val_rmse_cm) val.push_back(*r.val_rmse_cm);
  }
  ExperimentReport e;
  e.regime = std::move(regime);
  e.convention = conv;
  const auto c = mean_std(cm, conv), l = mean_std(lv, conv);
  e.avg_rmse_cm = c.mean;
  e.std_cm = c.std;
  e.avg_rmse_level = l.mean;
  e.std_level = l.std;
  if (val.size() == reports.size()) {
    double s = 0.0;
    for (double v : val) s += v;
    e.avg_val_rmse_cm = s / static_cast<double>(val.size());
  }
  e.folds = std::move(reports);
  return e;
}

inline nlohmann::ordered_json to_json(const FoldReport& r) {
  nlohmann::ordered_json j;
  j["fold_id"] = r.fold_id;
  j["rmse_cm"] = r.rmse_cm;
  j["rmse_level"] = r.rmse_level;
  j["val_rmse_cm"] = r.val_rmse_cm ? nlohmann::ordered_json(*r.val_rmse_cm) : nullptr;
  auto& per = j["per_level_predictions"] = nlohmann::ordered_json::object();
  for (const auto& [level, preds] : r.per_level_predictions) per[std::to_string(level)] = preds;
  return j;
}

inline nlohmann::ordered_json to_json(const ExperimentReport& e) {
  nlohmann::ordered_json j;
  j["regime"] = e.regime;
  j["std_convention"] = to_string(e.convention);
  j["avg_rmse_cm"] = e.avg_rmse_cm;
  j["std_cm"] = e.std_cm;
  j["avg_rmse_level"] = e.avg_rmse_level;
  j["std_level"] = e.std_level;
  j["avg_val_rmse_cm"] = e.avg_val_rmse_cm ? nlohmann::ordered_json(*e.avg_val_rmse_cm) : nullptr;
  auto& folds = j["folds"] = nlohmann::ordered_json::array();
  for (const auto& f : e.folds) folds.push_back(to_json(f));
  return j;
}

// ---------------------------------------------------------------------------
// Prediction distribution per ground-truth level.

struct BoxStats {
  int level = 0;
  double truth_cm = 0.0;
  std::size_t count = 0;
  double min = 0, q1 = 0, median = 0, q3 = 0, max = 0;
  double whisker_low = 0, whisker_high = 0;  // most extreme points within 1.5 IQR
  double mean = 0;
  std::vector<double> outliers;
};

// Linear-interpolation quantile of sorted data.
inline double quantile_sorted(std::span<const double> sorted, double q) {
  if (sorted.empty()) throw DomainError("quantile of an empty set");
  const double pos = q * static_cast<double>(sorted.size() - 1);
  const auto lo = static_cast<std::size_t>(std::floor(pos));
  const auto hi = std::min(lo + 1, sorted.size() - 1);
  return sorted[lo] + (pos - static_cast<double>(lo)) * (sorted[hi] - sorted[lo]);
}

inline BoxStats box_stats(int level, std::vector<double> values) {
  if (values.empty()) throw DomainError("box statistics of an empty level");
  std::sort(values.begin(), values.end());
  BoxStats b;
  b.level = level;
  b.truth_cm = kLevelAnchorsCm.at(static_cast<std::size_t>(level));
  b.count = values.size();
  b.min = values.front();
  b.max = values.back();
  b.q1 = quantile_sorted(values, 0.25);
  b.median = quantile_sorted(values, 0.5);
  b.q3 = quantile_sorted(values, 0.75);
  const double iqr = b.q3 - b.q1;
  b.whisker_low = b.max;
  b.whisker_high = b.min;
  double sum = 0.0;
  for (double v : values) {
    sum += v;
    if (v >= b.q1 - 1.5 * iqr && v <= b.q3 + 1.5 * iqr) {
      b.whisker_low = std::min(b.whisker_low, v);
      b.whisker_high = std::max(b.whisker_high, v);
    } else {
      b.outliers.push_back(v);
    }
  }
  b.mean = sum / static_cast<double>(values.size());
  return b;
}

struct PredictionDistribution {
  std::vector<BoxStats> levels;
  std::size_t total = 0;
  // Bias diagnostic (informational): medians above truth on levels <= 3 and
  // below truth on levels >= 7.
  bool overestimates_low = false;
  bool underestimates_high = false;
};

inline PredictionDistribution prediction_distribution(const FoldReport& report) {
  PredictionDistribution d;
  bool any_low = false, any_high = false, low_all = true, high_all = true;
  for (const auto& [level, preds] : report.per_level_predictions) {
    if (preds.empty()) continue;
    auto b = box_stats(level, preds);
    d.total += b.count;
    if (level <= 3) {
      any_low = true;
      low_all = low_all && b.median >= b.truth_cm;
    }
    if (level >= 7) {
      any_high = true;
      high_all = high_all && b.median <= b.truth_cm;
    }
    d.levels.push_back(std::move(b));
  }
  if (d.levels.empty()) throw DomainError("no predictions to summarise");
  d.overestimates_low = any_low && low_all;
  d.underestimates_high = any_high && high_all;
  return d;
}

inline nlohmann::ordered_json to_json(const PredictionDistribution& d, int fold_id) {
  nlohmann::ordered_json j;
  j["fold_id"] = fold_id;
  j["total"] = d.total;
  auto& levels = j["levels"] = nlohmann::ordered_json::array();
  for (const auto& b : d.levels) {
    nlohmann::ordered_json l;
    l["level"] = b.level;
    l["truth_cm"] = b.truth_cm;
    l["count"] = b.count;
    l["min"] = b.min;
    l["q1"] = b.q1;
    l["median"] = b.median;
    l["q3"] = b.q3;
    l["max"] = b.max;
    l["whisker_low"] = b.whisker_low;
    l["whisker_high"] = b.whisker_high;
    l["mean"] = b.mean;
    l["outliers"] = b.outliers;
    l["single_point"] = b.count == 1;
    levels.push_back(std::move(l));
  }
  j["bias"] = {{"overestimates_low", d.overestimates_low},
               {"underestimates_high", d.underestimates_high}};
  return j;
}

// Static SVG box plot: one box per level, x = level, y = predicted cm, with the
// truth anchors drawn as short red ticks. Single-sample levels render as a point.
inline std::string render_box_plot_svg(const PredictionDistribution& d, const std::string& title) {
  const double W = 640, H = 400, left = 50, right = 20, top = 30, bottom = 40;
  auto xpos = [&](int level) { return left + (level + 0.5) * (W - left - right) / 11.0; };
  auto ypos = [&](double cm) { return top + (1.0 - cm / kMaxDepthCm) * (H - top - bottom); };
  const double half = 0.3 * (W - left - right) / 11.0;
  std::ostringstream s;
  s.precision(4);
  s << std::fixed;
  s << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << W << "\" height=\"" << H
    << "\" font-family=\"sans-serif\" font-size=\"11\">\n";
  s << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
  s << "<text x=\"" << W / 2 << "\" y=\"18\" text-anchor=\"middle\">" << title << "</text>\n";
  for (int cm = 0; cm <= 170; cm += 34) {
    s << "<line x1=\"" << left << "\" x2=\"" << W - right << "\" y1=\"" << ypos(cm) << "\" y2=\""
      << ypos(cm) << "\" stroke=\"#ddd\"/>\n";
    s << "<text x=\"" << left - 6 << "\" y=\"" << ypos(cm) + 4 << "\" text-anchor=\"end\">" << cm
      << "</text>\n";
  }
  for (int l = 0; l <= kMaxLevel; ++l)
    s << "<text x=\"" << xpos(l) << "\" y=\"" << H - bottom + 16 << "\" text-anchor=\"middle\">" << l
      << "</text>\n";
  s << "<text x=\"" << W / 2 << "\" y=\"" << H - 6 << "\" text-anchor=\"middle\">ground-truth level</text>\n";
  for (const auto& b : d.levels) {
    const double x = xpos(b.level);
    s << "<line x1=\"" << x - half << "\" x2=\"" << x + half << "\" y1=\"" << ypos(b.truth_cm)
      << "\" y2=\"" << ypos(b.truth_cm) << "\" stroke=\"red\" stroke-width=\"2\"/>\n";
    if (b.count == 1) {
      s << "<circle cx=\"" << x << "\" cy=\"" << ypos(b.median) << "\" r=\"3\" fill=\"black\"/>\n";
      continue;
    }
    s << "<line x1=\"" << x << "\" x2=\"" << x << "\" y1=\"" << ypos(b.whisker_low) << "\" y2=\""
      << ypos(b.whisker_high) << "\" stroke=\"black\"/>\n";
    s << "<rect x=\"" << x - half << "\" y=\"" << ypos(b.q3) << "\" width=\"" << 2 * half
      << "\" height=\"" << std::max(0.0, ypos(b.q1) - ypos(b.q3))
      << "\" fill=\"#9cc3e6\" stroke=\"black\"/>\n";
    s << "<line x1=\"" << x - half << "\" x2=\"" << x + half << "\" y1=\"" << ypos(b.median)
      << "\" y2=\"" << ypos(b.median) << "\" stroke=\"black\" stroke-width=\"2\"/>\n";
    for (double o : b.outliers)
      s << "<circle cx=\"" << x << "\" cy=\"" << ypos(o) << "\" r=\"2\" fill=\"none\" stroke=\"black\"/>\n";
  }
  s << "</svg>\n";
  return s.str();
}

// Writes <stem>.json and <stem>.svg; returns the distribution.
inline PredictionDistribution export_prediction_distribution(const FoldReport& report,
                                                             const std::filesystem::path& stem) {
  auto d = prediction_distribution(report);
  std::ofstream js(stem.string() + ".json");
  if (!js) throw IoError("cannot write " + stem.string() + ".json");
  js << to_json(d, report.fold_id).dump(2) << '\n';
  std::ofstream svg(stem.string() + ".svg");
  if (!svg) throw IoError("cannot write " + stem.string() + ".svg");
  svg << render_box_plot_svg(d, "Predictions per level, fold " + std::to_string(report.fold_id));
  return d;
}

}  // namespace floodrank
