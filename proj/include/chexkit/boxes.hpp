#pragma once

#include <algorithm>
#include <cmath>
#include <map>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include <json.hpp>

#include "chexkit/csv.hpp"
#include "chexkit/error.hpp"

namespace chexkit::boxes {

// Axis-aligned box in continuous pixel coordinates, area = (x_max-x_min)*(y_max-y_min).
struct BBox {
  double x_min = 0, y_min = 0, x_max = 0, y_max = 0;

  double width() const { return x_max - x_min; }
  double height() const { return y_max - y_min; }
  double area() const { return width() * height(); }
};

inline bool is_valid(const BBox& b) {
  return std::isfinite(b.x_min) && std::isfinite(b.y_min) &&
         std::isfinite(b.x_max) && std::isfinite(b.y_max) &&
         b.x_min < b.x_max && b.y_min < b.y_max;
}

inline void require_valid(const BBox& b) {
  if (!is_valid(b)) {
    fail(errc::invalid_box, "box must have finite coordinates and positive extent");
  }
}

inline double intersection_area(const BBox& a, const BBox& b) {
  const double w = std::min(a.x_max, b.x_max) - std::max(a.x_min, b.x_min);
  const double h = std::min(a.y_max, b.y_max) - std::max(a.y_min, b.y_min);
  if (w <= 0.0 || h <= 0.0) return 0.0;
  return w * h;
}

inline double union_area(const BBox& a, const BBox& b) {
  return a.area() + b.area() - intersection_area(a, b);
}

inline double iou(const BBox& a, const BBox& b) {
  require_valid(a);
  require_valid(b);
  const double inter = intersection_area(a, b);
  if (inter == 0.0) return 0.0;
  return inter / (a.area() + b.area() - inter);
}

// IoU minus the enclosing-box slack: giou = iou - (C - U)/C with C the area
// of the smallest box covering both and U the union area.
inline double giou(const BBox& a, const BBox& b) {
  require_valid(a);
  require_valid(b);
  const double inter = intersection_area(a, b);
  const double uni = a.area() + b.area() - inter;
  const double x_lo = std::min(a.x_min, b.x_min);
  const double y_lo = std::min(a.y_min, b.y_min);
  const double x_hi = std::max(a.x_max, b.x_max);
  const double y_hi = std::max(a.y_max, b.y_max);
  const double iou_value = (inter == 0.0) ? 0.0 : inter / uni;
  // If one box contains the other, the enclosing box coincides with it and
  // the area penalty is exactly zero. Branching here keeps giou == iou free
  // of the rounding that computing union and enclosing area separately
  // would introduce.
  const bool a_encloses = x_lo == a.x_min && y_lo == a.y_min &&
                          x_hi == a.x_max && y_hi == a.y_max;
  const bool b_encloses = x_lo == b.x_min && y_lo == b.y_min &&
                          x_hi == b.x_max && y_hi == b.y_max;
  if (a_encloses || b_encloses) return iou_value;
  const double enclosing = (x_hi - x_lo) * (y_hi - y_lo);
  return iou_value - (enclosing - uni) / enclosing;
}

inline double giou_loss(const BBox& a, const BBox& b) { return 1.0 - giou(a, b); }

struct Annotation {
  std::string image_id;
  BBox box;
};

struct ScoredBox {
  std::string image_id;
  BBox box;
  double score = 0;
};

struct AgreementReport {
  std::size_t n_pairs = 0;
  double mean_iou = 0;
  double agree_fraction = 0;
  double iou_threshold = 0.5;
  std::vector<std::string> unmatched_first;   // ids present only in the first set
  std::vector<std::string> unmatched_second;  // ids present only in the second set
};

// Agreement between two annotator passes. Boxes are paired by image id; if an
// image carries several boxes the pairing is greedy by descending IoU and
// leftovers are reported as unmatched.
inline AgreementReport annotation_agreement(const std::vector<Annotation>& first,
                                            const std::vector<Annotation>& second,
                                            double iou_threshold) {
  if (!(iou_threshold > 0.0 && iou_threshold < 1.0)) {
    fail(errc::bad_config, "agreement IoU threshold must be in (0,1)");
  }
  std::map<std::string, std::vector<BBox>> by_id_first, by_id_second;
  for (const auto& a : first) by_id_first[a.image_id].push_back(a.box);
  for (const auto& a : second) by_id_second[a.image_id].push_back(a.box);

  AgreementReport report;
  report.iou_threshold = iou_threshold;
  double iou_sum = 0;
  std::size_t agree = 0;
  for (const auto& [id, boxes_a] : by_id_first) {
    auto it = by_id_second.find(id);
    if (it == by_id_second.end()) {
      report.unmatched_first.push_back(id);
      continue;
    }
    const auto& boxes_b = it->second;
    std::vector<char> used_a(boxes_a.size(), 0), used_b(boxes_b.size(), 0);
    for (std::size_t k = 0; k < std::min(boxes_a.size(), boxes_b.size()); ++k) {
      double best = -1;
      std::size_t bi = 0, bj = 0;
      for (std::size_t i = 0; i < boxes_a.size(); ++i) {
        if (used_a[i]) continue;
        for (std::size_t j = 0; j < boxes_b.size(); ++j) {
          if (used_b[j]) continue;
          const double v = iou(boxes_a[i], boxes_b[j]);
          if (v > best) {
            best = v;
            bi = i;
            bj = j;
          }
        }
      }
      used_a[bi] = 1;
      used_b[bj] = 1;
      ++report.n_pairs;
      iou_sum += best;
      if (best >= iou_threshold) ++agree;
    }
    if (boxes_a.size() > boxes_b.size()) report.unmatched_first.push_back(id);
    if (boxes_b.size() > boxes_a.size()) report.unmatched_second.push_back(id);
  }
  for (const auto& [id, boxes_b] : by_id_second) {
    if (!by_id_first.contains(id)) report.unmatched_second.push_back(id);
  }
  if (report.n_pairs == 0) {
    fail(errc::no_common_images, "annotation sets share no image ids");
  }
  report.mean_iou = iou_sum / static_cast<double>(report.n_pairs);
  report.agree_fraction = static_cast<double>(agree) / static_cast<double>(report.n_pairs);
  return report;
}

// Single-class average precision with all-point interpolation. Predictions
// are ranked by descending score (input order breaks ties); each ground-truth
// box can match at most one prediction, and a match needs IoU >= threshold.
inline double average_precision(const std::vector<ScoredBox>& predictions,
                                const std::vector<Annotation>& ground_truth,
                                double iou_threshold) {
  if (ground_truth.empty()) fail(errc::empty_ground_truth, "no ground-truth boxes");
  for (const auto& g : ground_truth) require_valid(g.box);
  for (const auto& p : predictions) {
    require_valid(p.box);
    if (!(p.score >= 0.0 && p.score <= 1.0)) {
      fail(errc::bad_value, "prediction score must be in [0,1]");
    }
  }
  if (predictions.empty()) return 0.0;

  std::unordered_map<std::string, std::vector<std::size_t>> gt_by_id;
  for (std::size_t i = 0; i < ground_truth.size(); ++i) {
    gt_by_id[ground_truth[i].image_id].push_back(i);
  }

  std::vector<std::size_t> order(predictions.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    return predictions[a].score > predictions[b].score;
  });

  std::vector<char> gt_used(ground_truth.size(), 0);
  std::vector<double> precision, recall;
  precision.reserve(order.size());
  recall.reserve(order.size());
  const double n_gt = static_cast<double>(ground_truth.size());
  std::size_t tp = 0;
  for (std::size_t rank = 0; rank < order.size(); ++rank) {
    const auto& pred = predictions[order[rank]];
    double best_iou = 0;
    std::size_t best_gt = ground_truth.size();
    if (auto it = gt_by_id.find(pred.image_id); it != gt_by_id.end()) {
      for (std::size_t gi : it->second) {
        if (gt_used[gi]) continue;
        const double v = iou(pred.box, ground_truth[gi].box);
        if (v > best_iou) {
          best_iou = v;
          best_gt = gi;
        }
      }
    }
    if (best_gt < ground_truth.size() && best_iou >= iou_threshold) {
      gt_used[best_gt] = 1;
      ++tp;
    }
    precision.push_back(static_cast<double>(tp) / static_cast<double>(rank + 1));
    recall.push_back(static_cast<double>(tp) / n_gt);
  }

  // Precision envelope, then sum the recall steps.
  for (std::size_t i = precision.size() - 1; i > 0; --i) {
    precision[i - 1] = std::max(precision[i - 1], precision[i]);
  }
  double ap = 0;
  double prev_recall = 0;
  for (std::size_t i = 0; i < precision.size(); ++i) {
    ap += (recall[i] - prev_recall) * precision[i];
    prev_recall = recall[i];
  }
  return ap;
}

// Box CSV: image_path,x_min,y_min,x_max,y_max[,score].
namespace detail {

inline double parse_number(const std::string& token, std::size_t line) {
  try {
    std::size_t used = 0;
    const double v = std::stod(token, &used);
    if (used != token.size()) throw std::invalid_argument(token);
    return v;
  } catch (const std::exception&) {
    fail(errc::bad_value, "bad number \"" + token + "\" on line " + std::to_string(line));
  }
}

}  // namespace detail

inline std::vector<Annotation> parse_annotations(std::string_view csv_text) {
  const csv::Table raw = csv::parse(csv_text);
  const auto path_col = raw.require_column("image_path");
  const auto x0 = raw.require_column("x_min");
  const auto y0 = raw.require_column("y_min");
  const auto x1 = raw.require_column("x_max");
  const auto y1 = raw.require_column("y_max");
  std::vector<Annotation> out;
  out.reserve(raw.rows.size());
  for (std::size_t r = 0; r < raw.rows.size(); ++r) {
    const auto& row = raw.rows[r];
    BBox box{detail::parse_number(row[x0], r + 2), detail::parse_number(row[y0], r + 2),
             detail::parse_number(row[x1], r + 2), detail::parse_number(row[y1], r + 2)};
    require_valid(box);
    out.push_back({row[path_col], box});
  }
  return out;
}

inline std::vector<ScoredBox> parse_scored_boxes(std::string_view csv_text) {
  const csv::Table raw = csv::parse(csv_text);
  const auto path_col = raw.require_column("image_path");
  const auto x0 = raw.require_column("x_min");
  const auto y0 = raw.require_column("y_min");
  const auto x1 = raw.require_column("x_max");
  const auto y1 = raw.require_column("y_max");
  const auto score_col = raw.require_column("score");
  std::vector<ScoredBox> out;
  out.reserve(raw.rows.size());
  for (std::size_t r = 0; r < raw.rows.size(); ++r) {
    const auto& row = raw.rows[r];
    BBox box{detail::parse_number(row[x0], r + 2), detail::parse_number(row[y0], r + 2),
             detail::parse_number(row[x1], r + 2), detail::parse_number(row[y1], r + 2)};
    require_valid(box);
    const double score = detail::parse_number(row[score_col], r + 2);
    if (!(score >= 0.0 && score <= 1.0)) {
      fail(errc::bad_value, "score out of [0,1] on line " + std::to_string(r + 2));
    }
    out.push_back({row[path_col], box, score});
  }
  return out;
}

inline nlohmann::ordered_json to_json(const AgreementReport& report) {
  nlohmann::ordered_json j;
  j["n_pairs"] = report.n_pairs;
  j["mean_iou"] = report.mean_iou;
  j["agree_fraction"] = report.agree_fraction;
  j["iou_threshold"] = report.iou_threshold;
  j["unmatched_first"] = report.unmatched_first;
  j["unmatched_second"] = report.unmatched_second;
  return j;
}

}  // namespace chexkit::boxes
