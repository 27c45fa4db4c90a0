#pragma once

// Batch orchestration: ingest labels -> crop/normalize/resize images ->
// train the head on feature files -> tune thresholds on the validation
// split and evaluate -> box agreement and average precision. One top-level
// seed fans out per stage; every artifact is written atomically and listed
// in a run manifest.

#include <algorithm>
#include <atomic>
#include <cstdio>
#include <ctime>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <thread>
#include <unordered_map>
#include <vector>

#include <json.hpp>

#include "chexkit/boxes.hpp"
#include "chexkit/error.hpp"
#include "chexkit/head.hpp"
#include "chexkit/image.hpp"
#include "chexkit/io.hpp"
#include "chexkit/labels.hpp"
#include "chexkit/metrics.hpp"
#include "chexkit/png_io.hpp"
#include "chexkit/rng.hpp"

namespace chexkit::pipeline {

namespace fs = std::filesystem;

inline constexpr const char* kToolVersion = "0.1.0";

struct PipelineConfig {
  // Paths are kept as written; relative ones resolve against base_dir.
  std::string labels_csv;
  std::string images_dir;
  std::string boxes_csv;        // one crop box per image
  std::string features_csv;
  std::string scores_csv;       // external probabilities for the validation split
  std::string test_labels_csv;
  std::string test_scores_csv;
  std::string checkpoint;       // explicit checkpoint for eval
  std::string truth_boxes_csv;
  std::string pred_boxes_csv;
  std::string thresholds_json;  // used by threshold_mode = file
  std::string out_dir = "out";

  std::uint64_t seed = 0;
  int threads = 1;
  bool record_timestamps = false;

  std::vector<std::string> observations = labels::submission_observations();

  double split_ratio = 0.8;
  bool group_by_patient = false;

  int resize_to = 476;
  bool augment_train = true;
  image::AugmentConfig augment;

  head::TrainConfig train;

  metrics::ThresholdMode threshold_mode = metrics::ThresholdMode::auto_youden;
  double fixed_threshold = 0.5;

  double iou_threshold = 0.5;
  double agreement_iou = 0.5;

  fs::path base_dir = ".";

  fs::path resolve(const std::string& raw) const {
    fs::path p(raw);
    return p.is_absolute() ? p : base_dir / p;
  }
};

namespace detail {

inline std::string_view trim(std::string_view s) {
  while (!s.empty() && (s.front() == ' ' || s.front() == '\t' || s.front() == '\r')) {
    s.remove_prefix(1);
  }
  while (!s.empty() && (s.back() == ' ' || s.back() == '\t' || s.back() == '\r')) {
    s.remove_suffix(1);
  }
  return s;
}

inline bool parse_bool(std::string_view v, std::size_t line) {
  if (v == "true" || v == "1") return true;
  if (v == "false" || v == "0") return false;
  fail(errc::bad_config, "expected true/false on line " + std::to_string(line));
}

inline double parse_double(std::string_view v, std::size_t line) {
  try {
    std::size_t used = 0;
    const double d = std::stod(std::string(v), &used);
    if (used != v.size()) throw std::invalid_argument("trailing");
    return d;
  } catch (const std::exception&) {
    fail(errc::bad_config, "bad numeric value on line " + std::to_string(line));
  }
}

inline long long parse_int(std::string_view v, std::size_t line) {
  try {
    std::size_t used = 0;
    const long long n = std::stoll(std::string(v), &used);
    if (used != v.size()) throw std::invalid_argument("trailing");
    return n;
  } catch (const std::exception&) {
    fail(errc::bad_config, "bad integer value on line " + std::to_string(line));
  }
}

inline std::string format_double(double v) {
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

}  // namespace detail

inline const char* to_string(metrics::ThresholdMode m) {
  switch (m) {
    case metrics::ThresholdMode::auto_youden: return "youden";
    case metrics::ThresholdMode::fixed: return "fixed";
    case metrics::ThresholdMode::from_set: return "file";
  }
  return "youden";
}

inline const char* to_string(head::Schedule s) {
  return s == head::Schedule::cosine ? "cosine" : "step_halve";
}

// Applies one key=value assignment. Shared by the file parser and CLI
// overrides so both accept exactly the same keys.
inline void set_config_value(PipelineConfig& cfg, std::string_view key,
                             std::string_view value, std::size_t line = 0) {
  using detail::parse_bool;
  using detail::parse_double;
  using detail::parse_int;
  const std::string v(value);
  if (key == "labels_csv") cfg.labels_csv = v;
  else if (key == "images_dir") cfg.images_dir = v;
  else if (key == "boxes_csv") cfg.boxes_csv = v;
  else if (key == "features_csv") cfg.features_csv = v;
  else if (key == "scores_csv") cfg.scores_csv = v;
  else if (key == "test_labels_csv") cfg.test_labels_csv = v;
  else if (key == "test_scores_csv") cfg.test_scores_csv = v;
  else if (key == "checkpoint") cfg.checkpoint = v;
  else if (key == "truth_boxes_csv") cfg.truth_boxes_csv = v;
  else if (key == "pred_boxes_csv") cfg.pred_boxes_csv = v;
  else if (key == "thresholds_json") cfg.thresholds_json = v;
  else if (key == "out_dir") cfg.out_dir = v;
  else if (key == "seed") cfg.seed = static_cast<std::uint64_t>(parse_int(value, line));
  else if (key == "threads") cfg.threads = static_cast<int>(parse_int(value, line));
  else if (key == "record_timestamps") cfg.record_timestamps = parse_bool(value, line);
  else if (key == "split_ratio") cfg.split_ratio = parse_double(value, line);
  else if (key == "group_by_patient") cfg.group_by_patient = parse_bool(value, line);
  else if (key == "resize_to") cfg.resize_to = static_cast<int>(parse_int(value, line));
  else if (key == "augment_train") cfg.augment_train = parse_bool(value, line);
  else if (key == "p_center_crop") cfg.augment.p_center_crop = parse_double(value, line);
  else if (key == "p_rotate") cfg.augment.p_rotate = parse_double(value, line);
  else if (key == "p_hflip") cfg.augment.p_hflip = parse_double(value, line);
  else if (key == "p_vflip") cfg.augment.p_vflip = parse_double(value, line);
  else if (key == "p_resize") cfg.augment.p_resize = parse_double(value, line);
  else if (key == "enable_center_crop") cfg.augment.enable_center_crop = parse_bool(value, line);
  else if (key == "enable_rotate") cfg.augment.enable_rotate = parse_bool(value, line);
  else if (key == "enable_hflip") cfg.augment.enable_hflip = parse_bool(value, line);
  else if (key == "enable_vflip") cfg.augment.enable_vflip = parse_bool(value, line);
  else if (key == "enable_resize") cfg.augment.enable_resize = parse_bool(value, line);
  else if (key == "rotation_min_degrees") cfg.augment.rotation_lo_deg = parse_double(value, line);
  else if (key == "rotation_max_degrees") cfg.augment.rotation_hi_deg = parse_double(value, line);
  else if (key == "crop_fraction") cfg.augment.crop_fraction = parse_double(value, line);
  else if (key == "hidden_dim") cfg.train.hidden_dim = static_cast<int>(parse_int(value, line));
  else if (key == "lr0") cfg.train.lr0 = parse_double(value, line);
  else if (key == "schedule") {
    if (value == "step_halve") cfg.train.schedule = head::Schedule::step_halve;
    else if (value == "cosine") cfg.train.schedule = head::Schedule::cosine;
    else fail(errc::bad_config, "schedule must be step_halve or cosine (line " +
                                    std::to_string(line) + ")");
  } else if (key == "step_period") cfg.train.step_period = static_cast<int>(parse_int(value, line));
  else if (key == "cosine_t_max") cfg.train.cosine_t_max = static_cast<int>(parse_int(value, line));
  else if (key == "cosine_eta_min") cfg.train.cosine_eta_min = parse_double(value, line);
  else if (key == "batch_size") cfg.train.batch_size = static_cast<int>(parse_int(value, line));
  else if (key == "epochs") cfg.train.epochs = static_cast<int>(parse_int(value, line));
  else if (key == "bn_momentum") cfg.train.bn.momentum = parse_double(value, line);
  else if (key == "bn_epsilon") cfg.train.bn.epsilon = parse_double(value, line);
  else if (key == "threshold_mode") {
    if (value == "youden") cfg.threshold_mode = metrics::ThresholdMode::auto_youden;
    else if (value == "fixed") cfg.threshold_mode = metrics::ThresholdMode::fixed;
    else if (value == "file") cfg.threshold_mode = metrics::ThresholdMode::from_set;
    else fail(errc::bad_config, "threshold_mode must be youden, fixed or file (line " +
                                    std::to_string(line) + ")");
  } else if (key == "fixed_threshold") cfg.fixed_threshold = parse_double(value, line);
  else if (key == "iou_threshold") cfg.iou_threshold = parse_double(value, line);
  else if (key == "agreement_iou") cfg.agreement_iou = parse_double(value, line);
  else {
    fail(errc::bad_config, "unknown config key '" + std::string(key) + "'" +
                               (line ? " (line " + std::to_string(line) + ")" : ""));
  }
}

// key = value lines; '#' starts a comment; later assignments win.
inline PipelineConfig parse_config(std::string_view text, const fs::path& base_dir) {
  PipelineConfig cfg;
  cfg.base_dir = base_dir;
  std::size_t line_no = 0;
  std::size_t start = 0;
  while (start <= text.size()) {
    std::size_t end = text.find('\n', start);
    if (end == std::string_view::npos) end = text.size();
    ++line_no;
    std::string_view line = text.substr(start, end - start);
    start = end + 1;
    const auto hash = line.find('#');
    if (hash != std::string_view::npos) line = line.substr(0, hash);
    line = detail::trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string_view::npos) {
      fail(errc::bad_config, "expected key=value on line " + std::to_string(line_no));
    }
    const auto key = detail::trim(line.substr(0, eq));
    const auto value = detail::trim(line.substr(eq + 1));
    if (key.empty()) fail(errc::bad_config, "empty key on line " + std::to_string(line_no));
    set_config_value(cfg, key, value, line_no);
  }
  return cfg;
}

inline PipelineConfig load_config(const fs::path& path) {
  return parse_config(read_file(path), path.has_parent_path() ? path.parent_path()
                                                              : fs::path("."));
}

// Canonical dump of every semantically relevant key, used both as a debug
// artifact and as the hash input. out_dir and threads are excluded: neither
// changes any result.
inline std::string dump_config(const PipelineConfig& cfg) {
  using detail::format_double;
  std::map<std::string, std::string> kv;
  kv["labels_csv"] = cfg.labels_csv;
  kv["images_dir"] = cfg.images_dir;
  kv["boxes_csv"] = cfg.boxes_csv;
  kv["features_csv"] = cfg.features_csv;
  kv["scores_csv"] = cfg.scores_csv;
  kv["test_labels_csv"] = cfg.test_labels_csv;
  kv["test_scores_csv"] = cfg.test_scores_csv;
  kv["checkpoint"] = cfg.checkpoint;
  kv["truth_boxes_csv"] = cfg.truth_boxes_csv;
  kv["pred_boxes_csv"] = cfg.pred_boxes_csv;
  kv["thresholds_json"] = cfg.thresholds_json;
  kv["seed"] = std::to_string(cfg.seed);
  kv["record_timestamps"] = cfg.record_timestamps ? "true" : "false";
  kv["split_ratio"] = format_double(cfg.split_ratio);
  kv["group_by_patient"] = cfg.group_by_patient ? "true" : "false";
  kv["resize_to"] = std::to_string(cfg.resize_to);
  kv["augment_train"] = cfg.augment_train ? "true" : "false";
  kv["p_center_crop"] = format_double(cfg.augment.p_center_crop);
  kv["p_rotate"] = format_double(cfg.augment.p_rotate);
  kv["p_hflip"] = format_double(cfg.augment.p_hflip);
  kv["p_vflip"] = format_double(cfg.augment.p_vflip);
  kv["p_resize"] = format_double(cfg.augment.p_resize);
  kv["enable_center_crop"] = cfg.augment.enable_center_crop ? "true" : "false";
  kv["enable_rotate"] = cfg.augment.enable_rotate ? "true" : "false";
  kv["enable_hflip"] = cfg.augment.enable_hflip ? "true" : "false";
  kv["enable_vflip"] = cfg.augment.enable_vflip ? "true" : "false";
  kv["enable_resize"] = cfg.augment.enable_resize ? "true" : "false";
  kv["rotation_min_degrees"] = format_double(cfg.augment.rotation_lo_deg);
  kv["rotation_max_degrees"] = format_double(cfg.augment.rotation_hi_deg);
  kv["crop_fraction"] = format_double(cfg.augment.crop_fraction);
  kv["hidden_dim"] = std::to_string(cfg.train.hidden_dim);
  kv["lr0"] = format_double(cfg.train.lr0);
  kv["schedule"] = to_string(cfg.train.schedule);
  kv["step_period"] = std::to_string(cfg.train.step_period);
  kv["cosine_t_max"] = std::to_string(cfg.train.cosine_t_max);
  kv["cosine_eta_min"] = format_double(cfg.train.cosine_eta_min);
  kv["batch_size"] = std::to_string(cfg.train.batch_size);
  kv["epochs"] = std::to_string(cfg.train.epochs);
  kv["bn_momentum"] = format_double(cfg.train.bn.momentum);
  kv["bn_epsilon"] = format_double(cfg.train.bn.epsilon);
  kv["threshold_mode"] = to_string(cfg.threshold_mode);
  kv["fixed_threshold"] = format_double(cfg.fixed_threshold);
  kv["iou_threshold"] = format_double(cfg.iou_threshold);
  kv["agreement_iou"] = format_double(cfg.agreement_iou);
  std::string out;
  for (const auto& [k, v] : kv) {
    out += k;
    out += " = ";
    out += v;
    out += '\n';
  }
  return out;
}

inline std::string config_hash(const PipelineConfig& cfg) {
  char buf[24];
  std::snprintf(buf, sizeof(buf), "%016llx",
                static_cast<unsigned long long>(fnv1a64(dump_config(cfg))));
  return buf;
}

struct StageRecord {
  std::string name;
  std::size_t inputs = 0;
  std::size_t outputs = 0;
  std::size_t skipped = 0;
};

struct RunManifest {
  std::string tool_version = kToolVersion;
  std::string config_hash;
  std::vector<StageRecord> stages;
  std::vector<std::string> output_files;  // relative to the output dir, sorted
  std::string started_at;   // empty unless timestamps were requested
  std::string finished_at;
};

inline nlohmann::ordered_json to_json(const RunManifest& m) {
  nlohmann::ordered_json j;
  j["tool_version"] = m.tool_version;
  j["config_hash"] = m.config_hash;
  j["stages"] = nlohmann::ordered_json::array();
  for (const auto& s : m.stages) {
    j["stages"].push_back({{"name", s.name},
                           {"inputs", s.inputs},
                           {"outputs", s.outputs},
                           {"skipped", s.skipped}});
  }
  j["output_files"] = m.output_files;
  if (!m.started_at.empty()) j["started_at"] = m.started_at;
  if (!m.finished_at.empty()) j["finished_at"] = m.finished_at;
  return j;
}

namespace detail {

inline std::string utc_now() {
  const std::time_t now = std::time(nullptr);
  std::tm tm{};
  gmtime_r(&now, &tm);
  char buf[32];
  std::strftime(buf, sizeof(buf), "%Y-%m-%dT%H:%M:%SZ", &tm);
  return buf;
}

}  // namespace detail

// Scores CSV: image_path plus one probability column per observation.
inline head::FeatureFile parse_scores_csv(std::string_view text,
                                          const std::vector<std::string>& observations) {
  const csv::Table raw = csv::parse(text);
  const std::size_t path_col = raw.require_column("image_path");
  std::vector<std::size_t> cols;
  for (const auto& name : observations) cols.push_back(raw.require_column(name));
  head::FeatureFile out;
  out.values.resize(static_cast<Eigen::Index>(raw.rows.size()),
                    static_cast<Eigen::Index>(cols.size()));
  for (std::size_t r = 0; r < raw.rows.size(); ++r) {
    out.paths.push_back(raw.rows[r][path_col]);
    for (std::size_t c = 0; c < cols.size(); ++c) {
      double v = 0;
      try {
        std::size_t used = 0;
        v = std::stod(raw.rows[r][cols[c]], &used);
        if (used != raw.rows[r][cols[c]].size()) throw std::invalid_argument("trailing");
      } catch (const std::exception&) {
        fail(errc::bad_value, "bad score on line " + std::to_string(r + 2));
      }
      if (!(v >= 0.0 && v <= 1.0)) {
        fail(errc::bad_value, "score out of [0,1] on line " + std::to_string(r + 2));
      }
      out.values(static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(c)) = v;
    }
  }
  return out;
}

// Reorders score rows to match the label table and insists on an exact
// path bijection in both directions.
inline Eigen::MatrixXd align_scores(const head::FeatureFile& scores,
                                    const labels::LabelTable& table) {
  std::unordered_map<std::string_view, Eigen::Index> by_path;
  for (std::size_t i = 0; i < scores.paths.size(); ++i) {
    by_path.emplace(scores.paths[i], static_cast<Eigen::Index>(i));
  }
  std::unordered_map<std::string_view, bool> used;
  Eigen::MatrixXd out(static_cast<Eigen::Index>(table.size()), scores.values.cols());
  for (std::size_t i = 0; i < table.size(); ++i) {
    const auto& path = table.records[i].image_path;
    const auto found = by_path.find(path);
    if (found == by_path.end()) {
      fail(errc::missing_scores, "no score row for image " + path);
    }
    out.row(static_cast<Eigen::Index>(i)) = scores.values.row(found->second);
    used.emplace(path, true);
  }
  for (const auto& path : scores.paths) {
    if (!used.count(path)) {
      fail(errc::missing_scores, "score row for unknown image " + path);
    }
  }
  return out;
}

// One evaluation sample per record whose state is definite (positive or
// negative); uncertain and missing states cannot serve as ground truth.
inline std::vector<metrics::LabelSamples> make_samples(const labels::LabelTable& table,
                                                       const Eigen::MatrixXd& scores) {
  if (static_cast<std::size_t>(scores.rows()) != table.size() ||
      static_cast<std::size_t>(scores.cols()) != table.n_observations()) {
    fail(errc::dimension_mismatch, "score matrix shape does not match the label table");
  }
  std::vector<metrics::LabelSamples> samples(table.n_observations());
  for (std::size_t j = 0; j < table.n_observations(); ++j) {
    samples[j].name = table.observations[j];
    for (std::size_t i = 0; i < table.size(); ++i) {
      const auto state = table.records[i].states[j];
      if (state == labels::LabelState::positive) {
        samples[j].scores.push_back(scores(static_cast<Eigen::Index>(i),
                                           static_cast<Eigen::Index>(j)));
        samples[j].labels.push_back(1);
      } else if (state == labels::LabelState::negative) {
        samples[j].scores.push_back(scores(static_cast<Eigen::Index>(i),
                                           static_cast<Eigen::Index>(j)));
        samples[j].labels.push_back(0);
      }
    }
  }
  return samples;
}

class Runner {
 public:
  explicit Runner(PipelineConfig cfg) : cfg_(std::move(cfg)) {
    out_ = cfg_.resolve(cfg_.out_dir);
    manifest_.config_hash = config_hash(cfg_);
    if (cfg_.record_timestamps) manifest_.started_at = detail::utc_now();
  }

  const PipelineConfig& config() const { return cfg_; }
  const fs::path& out_dir() const { return out_; }
  const RunManifest& manifest() const { return manifest_; }

  void ingest() {
    require_path(cfg_.labels_csv, "labels_csv");
    const auto table = labels::parse_labels(read_file(cfg_.resolve(cfg_.labels_csv)),
                                            cfg_.observations);
    write_text("distribution.json",
               labels::to_json(labels::distribution(table)).dump(2) + "\n");

    labels::SplitSpec spec;
    spec.ratio = cfg_.split_ratio;
    spec.group_by_patient = cfg_.group_by_patient;
    spec.seed = stage_seed("ingest");
    const auto [train_part, val_part] = labels::split(table, spec);
    write_text("labels_train.csv", labels::to_csv(train_part));
    write_text("labels_val.csv", labels::to_csv(val_part));
    add_stage("ingest", table.size(), train_part.size() + val_part.size(), 0);
  }

  void prepare() {
    require_path(cfg_.images_dir, "images_dir");
    require_path(cfg_.boxes_csv, "boxes_csv");
    const auto annotations = boxes::parse_annotations(read_file(cfg_.resolve(cfg_.boxes_csv)));
    std::unordered_map<std::string, boxes::BBox> crop_boxes;
    for (const auto& a : annotations) {
      if (!crop_boxes.emplace(a.image_id, a.box).second) {
        fail(errc::duplicate_path, "multiple crop boxes for image " + a.image_id);
      }
    }

    std::size_t inputs = 0, outputs = 0, skipped = 0;
    process_split("train", crop_boxes, cfg_.augment_train, inputs, outputs, skipped);
    process_split("val", crop_boxes, false, inputs, outputs, skipped);
    add_stage("prepare", inputs, outputs, skipped);
  }

  void train() {
    require_path(cfg_.features_csv, "features_csv");
    const auto features = head::parse_features_csv(read_file(cfg_.resolve(cfg_.features_csv)));
    const auto train_table = read_split_table("labels_train.csv");
    const auto val_table = read_split_table("labels_val.csv");
    const auto train_set = head::make_dataset(features, train_table);
    const auto val_set = head::make_dataset(features, val_table);

    head::TrainConfig tc = cfg_.train;
    tc.seed = stage_seed("train");

    std::string log_csv = "epoch,train_loss,val_mean_auc,lr,steps\n";
    char buf[128];
    const auto result = head::train(
        train_set, val_set, tc,
        [&](const head::Checkpoint& ck, const head::EpochLog& log) {
          std::snprintf(buf, sizeof(buf), "checkpoints/epoch_%03d.ckpt", ck.epoch);
          const std::string rel = buf;
          head::save_checkpoint(out_ / rel, ck);
          add_output(rel);
          std::snprintf(buf, sizeof(buf), "%d,%.17g,%.17g,%.17g,%zu\n", log.epoch,
                        log.train_loss, log.val_mean_auc, log.lr, log.steps);
          log_csv += buf;
        });
    write_text("train_log.csv", log_csv);

    const auto& best = head::select_best(result.checkpoints);
    best_ = best;
    nlohmann::ordered_json j;
    j["epoch"] = best.epoch;
    j["val_mean_auc"] = best.val_mean_auc;
    std::snprintf(buf, sizeof(buf), "checkpoints/epoch_%03d.ckpt", best.epoch);
    j["file"] = std::string(buf);
    write_text("best_checkpoint.json", j.dump(2) + "\n");
    add_stage("train", static_cast<std::size_t>(train_set.size() + val_set.size()),
              result.checkpoints.size(), 0);
  }

  void eval() {
    const bool external = !cfg_.scores_csv.empty();
    if (external && !cfg_.checkpoint.empty()) {
      fail(errc::bad_config, "configure either scores_csv or a checkpoint, not both");
    }
    if (!external && cfg_.features_csv.empty()) {
      fail(errc::bad_config, "eval needs scores_csv, or features_csv plus a checkpoint");
    }

    const auto val_table = read_split_table("labels_val.csv");
    const Eigen::MatrixXd val_scores = score_table(val_table, cfg_.scores_csv);
    const auto val_samples = make_samples(val_table, val_scores);

    metrics::ThresholdSpec spec;
    spec.mode = cfg_.threshold_mode;
    spec.fixed_value = cfg_.fixed_threshold;
    if (spec.mode == metrics::ThresholdMode::from_set) {
      if (cfg_.thresholds_json.empty()) {
        fail(errc::bad_config, "threshold_mode = file needs thresholds_json");
      }
      spec.set = metrics::threshold_set_from_json(
          nlohmann::json::parse(read_file(cfg_.resolve(cfg_.thresholds_json))));
    }
    const auto val_report = metrics::build_report(val_samples, spec);
    const auto tuned = metrics::thresholds_of(val_report);
    write_text("thresholds.json", metrics::to_json(tuned).dump(2) + "\n");

    metrics::MetricsReport final_report = val_report;
    std::size_t evaluated = val_table.size();
    if (!cfg_.test_labels_csv.empty()) {
      const auto test_table = labels::parse_labels(
          read_file(cfg_.resolve(cfg_.test_labels_csv)), cfg_.observations);
      const Eigen::MatrixXd test_scores = score_table(test_table, cfg_.test_scores_csv);
      metrics::ThresholdSpec applied;
      applied.mode = metrics::ThresholdMode::from_set;
      applied.set = tuned;
      final_report = metrics::build_report(make_samples(test_table, test_scores), applied);
      evaluated = test_table.size();
    }

    write_text("metrics_report.json", metrics::to_json(final_report).dump(2) + "\n");
    write_text("metrics_report.txt", metrics::render_table(final_report));
    for (const auto& w : final_report.warnings) {
      std::cerr << "warning: " << w << "\n";
    }
    add_stage("eval", evaluated, final_report.rows.size(), 0);
  }

  void detect_eval() {
    require_path(cfg_.truth_boxes_csv, "truth_boxes_csv");
    require_path(cfg_.pred_boxes_csv, "pred_boxes_csv");
    const auto truth = boxes::parse_annotations(read_file(cfg_.resolve(cfg_.truth_boxes_csv)));
    const auto preds = boxes::parse_scored_boxes(read_file(cfg_.resolve(cfg_.pred_boxes_csv)));
    const double ap = boxes::average_precision(preds, truth, cfg_.iou_threshold);

    std::vector<boxes::Annotation> pred_plain;
    pred_plain.reserve(preds.size());
    for (const auto& p : preds) pred_plain.push_back({p.image_id, p.box});

    nlohmann::ordered_json j;
    j["average_precision"] = ap;
    j["iou_threshold"] = cfg_.iou_threshold;
    j["n_predictions"] = preds.size();
    j["n_ground_truth"] = truth.size();
    try {
      j["agreement"] = boxes::to_json(
          boxes::annotation_agreement(truth, pred_plain, cfg_.agreement_iou));
    } catch (const Error& e) {
      if (e.code() != errc::no_common_images) throw;
      j["agreement"] = nullptr;
    }
    write_text("detect_report.json", j.dump(2) + "\n");
    add_stage("detect-eval", truth.size() + preds.size(), 1, 0);
  }

  // All configured stages in order. Presence of the relevant inputs decides
  // whether an optional stage runs.
  void run_all() {
    ingest();
    if (!cfg_.images_dir.empty() && !cfg_.boxes_csv.empty()) prepare();
    if (!cfg_.features_csv.empty()) train();
    if (!cfg_.scores_csv.empty() || !cfg_.features_csv.empty()) eval();
    if (!cfg_.truth_boxes_csv.empty() && !cfg_.pred_boxes_csv.empty()) detect_eval();
  }

  // Writes the resolved config dump and the manifest. Call exactly once,
  // after the requested stages.
  void finish() {
    write_text("config_resolved.txt", dump_config(cfg_));
    if (cfg_.record_timestamps) manifest_.finished_at = detail::utc_now();
    add_output("manifest.json");
    std::sort(manifest_.output_files.begin(), manifest_.output_files.end());
    manifest_.output_files.erase(
        std::unique(manifest_.output_files.begin(), manifest_.output_files.end()),
        manifest_.output_files.end());
    write_file_atomic(out_ / "manifest.json", to_json(manifest_).dump(2) + "\n");
  }

 private:
  std::uint64_t stage_seed(std::string_view stage) const {
    return mix_seed(cfg_.seed, stage);
  }

  void require_path(const std::string& value, const char* key) const {
    if (value.empty()) fail(errc::bad_config, std::string(key) + " is not configured");
    if (!fs::exists(cfg_.resolve(value))) {
      fail(errc::io_error, std::string(key) + " path does not exist: " +
                               cfg_.resolve(value).string());
    }
  }

  labels::LabelTable read_split_table(const std::string& name) const {
    const fs::path p = out_ / name;
    if (!fs::exists(p)) {
      fail(errc::io_error, p.string() + " not found; run the ingest stage first");
    }
    return labels::parse_labels(read_file(p), cfg_.observations);
  }

  // Probability matrix aligned to `table`: external CSV when one is
  // configured for this split, otherwise head inference over the feature
  // file with the resolved checkpoint.
  Eigen::MatrixXd score_table(const labels::LabelTable& table,
                              const std::string& scores_csv) {
    if (!scores_csv.empty()) {
      return align_scores(
          parse_scores_csv(read_file(cfg_.resolve(scores_csv)), cfg_.observations), table);
    }
    require_path(cfg_.features_csv, "features_csv");
    const auto features =
        head::parse_features_csv(read_file(cfg_.resolve(cfg_.features_csv)));
    const auto set = head::make_dataset(features, table);
    return head::forward_infer(resolve_checkpoint().params, set.features, cfg_.train.bn);
  }

  const head::Checkpoint& resolve_checkpoint() {
    if (loaded_checkpoint_) return *loaded_checkpoint_;
    if (!cfg_.checkpoint.empty()) {
      loaded_checkpoint_ = head::load_checkpoint(cfg_.resolve(cfg_.checkpoint));
    } else if (best_) {
      loaded_checkpoint_ = best_;
    } else if (fs::exists(out_ / "best_checkpoint.json")) {
      const auto j = nlohmann::json::parse(read_file(out_ / "best_checkpoint.json"));
      loaded_checkpoint_ = head::load_checkpoint(out_ / j.at("file").get<std::string>());
    } else {
      fail(errc::bad_config, "no checkpoint available; run the train stage or set checkpoint=");
    }
    return *loaded_checkpoint_;
  }

  // Crop -> normalize -> resize (-> augment for the training split) for one
  // split table; one output file per surviving image, named after the input
  // path. Worker threads share nothing but the counters.
  void process_split(const std::string& part,
                     const std::unordered_map<std::string, boxes::BBox>& crop_boxes,
                     bool with_augment, std::size_t& inputs, std::size_t& outputs,
                     std::size_t& skipped) {
    const auto table = read_split_table("labels_" + part + ".csv");
    const fs::path images = cfg_.resolve(cfg_.images_dir);
    const fs::path dest = out_ / "prepared" / part;

    image::AugmentConfig aug = cfg_.augment;
    aug.target_width = cfg_.resize_to;
    aug.target_height = cfg_.resize_to;
    aug.seed = stage_seed("prepare");

    const auto n = table.size();
    inputs += n;
    std::atomic<std::size_t> next{0}, done{0}, skip{0};
    std::vector<std::string> notes(n);
    std::vector<std::string> rel_outputs(n);

    auto work = [&]() {
      for (std::size_t i = next.fetch_add(1); i < n; i = next.fetch_add(1)) {
        const auto& rec = table.records[i];
        const auto box = crop_boxes.find(rec.image_path);
        if (box == crop_boxes.end()) {
          notes[i] = "no crop box for image " + rec.image_path + "; skipped";
          ++skip;
          continue;
        }
        try {
          image::ImageBuffer img = image::read_png(images / rec.image_path);
          img = image::crop_bbox(img, box->second);
          img = image::normalize(img);
          img = image::resize(img, cfg_.resize_to, cfg_.resize_to);
          if (with_augment) {
            img = image::augment(img, aug, i);
            if (static_cast<int>(img.width) != cfg_.resize_to ||
                static_cast<int>(img.height) != cfg_.resize_to) {
              img = image::resize(img, cfg_.resize_to, cfg_.resize_to);
            }
          }
          fs::path rel = fs::path(rec.image_path);
          rel.replace_extension(".bin");
          image::write_buffer(dest / rel, img);
          rel_outputs[i] = (fs::path("prepared") / part / rel).generic_string();
          ++done;
        } catch (const Error& e) {
          if (e.code() != errc::box_outside_image && e.code() != errc::io_error) throw;
          notes[i] = std::string(e.what()) + "; skipped " + rec.image_path;
          ++skip;
        }
      }
    };

    const int n_threads = std::max(1, std::min<int>(cfg_.threads, static_cast<int>(n)));
    if (n_threads == 1) {
      work();
    } else {
      std::vector<std::thread> pool;
      pool.reserve(static_cast<std::size_t>(n_threads));
      for (int t = 0; t < n_threads; ++t) pool.emplace_back(work);
      for (auto& t : pool) t.join();
    }
    for (const auto& note : notes) {
      if (!note.empty()) std::cerr << "warning: " << note << "\n";
    }
    for (const auto& rel : rel_outputs) {
      if (!rel.empty()) add_output(rel);
    }
    outputs += done.load();
    skipped += skip.load();
  }

  void add_stage(std::string name, std::size_t in, std::size_t out, std::size_t skip) {
    manifest_.stages.push_back({std::move(name), in, out, skip});
  }

  void add_output(const std::string& rel) { manifest_.output_files.push_back(rel); }

  void write_text(const std::string& rel, std::string_view text) {
    write_file_atomic(out_ / rel, text);
    add_output(rel);
  }

  PipelineConfig cfg_;
  fs::path out_;
  RunManifest manifest_;
  std::optional<head::Checkpoint> best_;
  std::optional<head::Checkpoint> loaded_checkpoint_;
};

}  // namespace chexkit::pipeline
