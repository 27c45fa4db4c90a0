#pragma once

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <limits>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "chexkit/error.hpp"

namespace chexkit::metrics {

// Decision rule throughout: predict positive iff score >= threshold. With
// that rule a tuned threshold reproduces its own curve's operating point.

struct RocPoint {
  double threshold;  // +inf for the (0,0) sentinel
  double tpr;
  double fpr;
};

struct RocCurve {
  std::vector<RocPoint> points;  // sorted by descending threshold
  std::size_t n_pos = 0;
  std::size_t n_neg = 0;
};

template <typename LabelT>
inline RocCurve roc_curve(const std::vector<double>& scores,
                          const std::vector<LabelT>& labels) {
  if (scores.size() != labels.size()) {
    fail(errc::dimension_mismatch, "scores and labels differ in length");
  }
  RocCurve curve;
  for (auto y : labels) (y ? curve.n_pos : curve.n_neg)++;
  if (curve.n_pos == 0 || curve.n_neg == 0) {
    fail(errc::degenerate_labels, "need at least one positive and one negative");
  }

  std::vector<std::size_t> order(scores.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  std::sort(order.begin(), order.end(),
            [&](std::size_t a, std::size_t b) { return scores[a] > scores[b]; });

  curve.points.push_back({std::numeric_limits<double>::infinity(), 0.0, 0.0});
  std::size_t tp = 0, fp = 0;
  const auto n_pos = static_cast<double>(curve.n_pos);
  const auto n_neg = static_cast<double>(curve.n_neg);
  std::size_t i = 0;
  while (i < order.size()) {
    const double s = scores[order[i]];
    // tied scores collapse into one operating point
    while (i < order.size() && scores[order[i]] == s) {
      (labels[order[i]] ? tp : fp)++;
      ++i;
    }
    curve.points.push_back({s, static_cast<double>(tp) / n_pos,
                            static_cast<double>(fp) / n_neg});
  }
  return curve;
}

// Trapezoidal area over (FPR, TPR); ties earn half credit, matching the
// Mann-Whitney pairwise statistic.
inline double auc(const RocCurve& curve) {
  double area = 0;
  for (std::size_t i = 1; i < curve.points.size(); ++i) {
    const auto& a = curve.points[i - 1];
    const auto& b = curve.points[i];
    area += (b.fpr - a.fpr) * (a.tpr + b.tpr) * 0.5;
  }
  return area;
}

struct YoudenResult {
  double threshold = 0;
  double j = 0;
};

// Maximizes J = TPR - FPR over the distinct-score operating points (the
// sentinel is excluded: a threshold above every score predicts nothing
// positive and is not a usable cut). Ties go to the lowest FPR, then the
// highest threshold.
inline YoudenResult youden_threshold(const RocCurve& curve) {
  YoudenResult best;
  double best_fpr = 2.0;
  bool have = false;
  for (const auto& p : curve.points) {
    if (std::isinf(p.threshold)) continue;
    const double j = p.tpr - p.fpr;
    bool better = false;
    if (!have || j > best.j) {
      better = true;
    } else if (j == best.j &&
               (p.fpr < best_fpr || (p.fpr == best_fpr && p.threshold > best.threshold))) {
      better = true;
    }
    if (better) {
      best.j = j;
      best.threshold = p.threshold;
      best_fpr = p.fpr;
      have = true;
    }
  }
  return best;
}

struct Confusion {
  std::size_t tp = 0, fp = 0, tn = 0, fn = 0;
  std::size_t total() const { return tp + fp + tn + fn; }
};

template <typename LabelT>
inline Confusion confusion(const std::vector<double>& scores,
                           const std::vector<LabelT>& labels, double threshold) {
  if (scores.size() != labels.size()) {
    fail(errc::dimension_mismatch, "scores and labels differ in length");
  }
  Confusion c;
  for (std::size_t i = 0; i < scores.size(); ++i) {
    const bool pred = scores[i] >= threshold;
    if (labels[i]) (pred ? c.tp : c.fn)++;
    else (pred ? c.fp : c.tn)++;
  }
  return c;
}

inline double f1_score(double precision, double recall) {
  const double denom = precision + recall;
  if (denom == 0.0) return 0.0;
  return 2.0 * precision * recall / denom;
}

struct Prf {
  double precision = 0, recall = 0, f1 = 0;
};

// Empty denominators yield 0 by convention.
inline Prf prf1(const Confusion& c) {
  Prf out;
  out.precision = (c.tp + c.fp) ? static_cast<double>(c.tp) / static_cast<double>(c.tp + c.fp) : 0.0;
  out.recall = (c.tp + c.fn) ? static_cast<double>(c.tp) / static_cast<double>(c.tp + c.fn) : 0.0;
  out.f1 = f1_score(out.precision, out.recall);
  return out;
}

struct ThresholdSet {
  std::vector<std::pair<std::string, double>> values;  // label -> threshold

  std::optional<double> find(const std::string& label) const {
    for (const auto& [name, value] : values) {
      if (name == label) return value;
    }
    return std::nullopt;
  }
};

inline nlohmann::ordered_json to_json(const ThresholdSet& set) {
  nlohmann::ordered_json j = nlohmann::ordered_json::object();
  for (const auto& [name, value] : set.values) j[name] = value;
  return j;
}

inline ThresholdSet threshold_set_from_json(const nlohmann::json& j) {
  ThresholdSet set;
  for (auto it = j.begin(); it != j.end(); ++it) {
    set.values.emplace_back(it.key(), it.value().get<double>());
  }
  return set;
}

// One label's evaluation samples; entries with an uncertain ground truth are
// expected to be filtered out before this point.
struct LabelSamples {
  std::string name;
  std::vector<double> scores;
  std::vector<int> labels;
};

enum class ThresholdMode { auto_youden, fixed, from_set };

struct ThresholdSpec {
  ThresholdMode mode = ThresholdMode::auto_youden;
  double fixed_value = 0.5;
  ThresholdSet set;
};

// Per-label Youden tuning; single-class labels fall back to 0.5 with a warning.
inline ThresholdSet tune_thresholds(const std::vector<LabelSamples>& samples,
                                    std::vector<std::string>* warnings = nullptr) {
  ThresholdSet set;
  for (const auto& s : samples) {
    try {
      const auto curve = roc_curve(s.scores, s.labels);
      set.values.emplace_back(s.name, youden_threshold(curve).threshold);
    } catch (const Error& e) {
      if (e.code() != errc::degenerate_labels) throw;
      if (warnings) {
        warnings->push_back("label " + s.name + " is single-class; threshold defaults to 0.5");
      }
      set.values.emplace_back(s.name, 0.5);
    }
  }
  return set;
}

struct LabelMetrics {
  std::string name;
  std::optional<double> auc;  // absent when the label has a single class
  double threshold = 0.5;
  Confusion cm;
  double precision = 0, recall = 0, f1 = 0;
};

struct MetricsReport {
  std::vector<LabelMetrics> rows;
  std::optional<double> mean_auc;
  std::size_t n_auc_labels = 0;
  double mean_precision = 0, mean_recall = 0, mean_f1 = 0;
  std::vector<std::string> warnings;
};

// Unweighted means; labels without an AUC are excluded from the AUC mean only.
inline void compute_means(MetricsReport& report) {
  double auc_sum = 0, p_sum = 0, r_sum = 0, f_sum = 0;
  report.n_auc_labels = 0;
  for (const auto& row : report.rows) {
    if (row.auc) {
      auc_sum += *row.auc;
      ++report.n_auc_labels;
    }
    p_sum += row.precision;
    r_sum += row.recall;
    f_sum += row.f1;
  }
  const auto n = static_cast<double>(report.rows.size());
  report.mean_auc = report.n_auc_labels
                        ? std::optional<double>(auc_sum / static_cast<double>(report.n_auc_labels))
                        : std::nullopt;
  report.mean_precision = n ? p_sum / n : 0.0;
  report.mean_recall = n ? r_sum / n : 0.0;
  report.mean_f1 = n ? f_sum / n : 0.0;
}

inline MetricsReport build_report(const std::vector<LabelSamples>& samples,
                                  const ThresholdSpec& spec) {
  if (samples.empty()) fail(errc::empty_input, "no labels to evaluate");
  MetricsReport report;
  ThresholdSet tuned;
  if (spec.mode == ThresholdMode::auto_youden) {
    tuned = tune_thresholds(samples, &report.warnings);
  }
  for (const auto& s : samples) {
    if (s.scores.empty()) fail(errc::empty_input, "label " + s.name + " has no samples");
    LabelMetrics row;
    row.name = s.name;
    try {
      row.auc = auc(roc_curve(s.scores, s.labels));
    } catch (const Error& e) {
      if (e.code() != errc::degenerate_labels) throw;
      report.warnings.push_back("label " + s.name +
                                " is single-class; AUC excluded from the mean");
    }
    switch (spec.mode) {
      case ThresholdMode::auto_youden:
        row.threshold = *tuned.find(s.name);
        break;
      case ThresholdMode::fixed:
        row.threshold = spec.fixed_value;
        break;
      case ThresholdMode::from_set: {
        const auto t = spec.set.find(s.name);
        if (!t) fail(errc::bad_config, "no threshold supplied for label " + s.name);
        row.threshold = *t;
        break;
      }
    }
    row.cm = confusion(s.scores, s.labels, row.threshold);
    const Prf prf = prf1(row.cm);
    row.precision = prf.precision;
    row.recall = prf.recall;
    row.f1 = prf.f1;
    report.rows.push_back(std::move(row));
  }
  compute_means(report);
  return report;
}

inline ThresholdSet thresholds_of(const MetricsReport& report) {
  ThresholdSet set;
  for (const auto& row : report.rows) set.values.emplace_back(row.name, row.threshold);
  return set;
}

inline nlohmann::ordered_json to_json(const MetricsReport& report) {
  nlohmann::ordered_json j;
  auto& rows = j["labels"] = nlohmann::ordered_json::array();
  for (const auto& row : report.rows) {
    nlohmann::ordered_json r;
    r["name"] = row.name;
    if (row.auc) r["auc"] = *row.auc;
    else r["auc"] = nullptr;
    r["threshold"] = row.threshold;
    r["confusion"] = {{"tp", row.cm.tp}, {"fp", row.cm.fp}, {"tn", row.cm.tn}, {"fn", row.cm.fn}};
    r["precision"] = row.precision;
    r["recall"] = row.recall;
    r["f1"] = row.f1;
    rows.push_back(std::move(r));
  }
  auto& mean = j["mean"];
  if (report.mean_auc) mean["auc"] = *report.mean_auc;
  else mean["auc"] = nullptr;
  mean["n_auc_labels"] = report.n_auc_labels;
  mean["precision"] = report.mean_precision;
  mean["recall"] = report.mean_recall;
  mean["f1"] = report.mean_f1;
  j["warnings"] = report.warnings;
  return j;
}

namespace detail {

// Rendered tables round half away from zero to 3 decimals.
inline std::string fixed3(double v) {
  const double r = std::round(v * 1000.0) / 1000.0;
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.3f", r);
  return buf;
}

}  // namespace detail

inline std::string render_table(const MetricsReport& report) {
  std::size_t name_width = std::string("Mean value").size();
  for (const auto& row : report.rows) name_width = std::max(name_width, row.name.size());

  auto line = [&](const std::string& name, const std::string& auc_s,
                  const std::string& thr, const std::string& p,
                  const std::string& r, const std::string& f1) {
    std::string out = name;
    out.resize(name_width + 2, ' ');
    auto cell = [&](const std::string& v, std::size_t w) {
      std::string c = v;
      c.resize(std::max(w, v.size()) + 2, ' ');
      out += c;
    };
    cell(auc_s, 9);
    cell(thr, 9);
    cell(p, 9);
    cell(r, 9);
    out += f1;
    out += '\n';
    return out;
  };

  std::string out = line("Label", "AUC", "Threshold", "Precision", "Recall", "F1 score");
  for (const auto& row : report.rows) {
    out += line(row.name, row.auc ? detail::fixed3(*row.auc) : "-",
                detail::fixed3(row.threshold), detail::fixed3(row.precision),
                detail::fixed3(row.recall), detail::fixed3(row.f1));
  }
  out += line("Mean value", report.mean_auc ? detail::fixed3(*report.mean_auc) : "-", "-",
              detail::fixed3(report.mean_precision), detail::fixed3(report.mean_recall),
              detail::fixed3(report.mean_f1));
  return out;
}

}  // namespace chexkit::metrics
