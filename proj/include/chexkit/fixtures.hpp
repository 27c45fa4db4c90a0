#pragma once

// Deterministic synthetic data: label tables with prescribed state counts,
// a linearly separable feature set for training smoke tests, procedural
// grayscale images, and a small on-disk corpus for end-to-end runs.

#include <array>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <string>
#include <vector>

#include "chexkit/boxes.hpp"
#include "chexkit/head.hpp"
#include "chexkit/image.hpp"
#include "chexkit/io.hpp"
#include "chexkit/labels.hpp"
#include "chexkit/png_io.hpp"
#include "chexkit/rng.hpp"

namespace chexkit::fixtures {

struct StateCounts {
  std::string name;
  std::size_t positive = 0;
  std::size_t negative = 0;
  std::size_t uncertain = 0;
  std::size_t missing = 0;

  std::size_t total() const { return positive + negative + uncertain + missing; }
};

inline constexpr std::size_t kReferenceRowCount = 10507;

// Per-observation state counts of the reference training-set distribution.
inline std::vector<StateCounts> reference_distribution_counts() {
  return {
      {"Atelectasis", 1577, 7335, 1595, 0},
      {"Cardiomegaly", 1313, 8824, 370, 0},
      {"Consolidation", 671, 8521, 1315, 0},
      {"Edema", 2553, 7320, 634, 0},
      {"Pleural Effusion", 4115, 607, 607, 5178},
  };
}

// Builds a label table with exactly the requested per-observation counts.
// Each observation's states are shuffled independently with a seed derived
// from the observation name, so rows look plausible but the marginal counts
// are exact.
inline labels::LabelTable synthetic_labels(const std::vector<StateCounts>& counts,
                                           std::uint64_t seed) {
  if (counts.empty()) fail(errc::bad_config, "no observations requested");
  const std::size_t n = counts.front().total();
  for (const auto& c : counts) {
    if (c.total() != n) fail(errc::bad_config, "observation row counts disagree");
  }
  if (n == 0) fail(errc::empty_table, "zero rows requested");

  labels::LabelTable table;
  for (const auto& c : counts) table.observations.push_back(c.name);
  table.records.resize(n);
  char buf[64];
  for (std::size_t i = 0; i < n; ++i) {
    std::snprintf(buf, sizeof(buf), "train/patient%05zu/study%zu/view1_frontal.jpg",
                  i % 3000 + 1, i / 3000 + 1);
    table.records[i].image_path = buf;
    table.records[i].states.resize(counts.size(), labels::LabelState::missing);
  }

  for (std::size_t j = 0; j < counts.size(); ++j) {
    const auto& c = counts[j];
    std::vector<labels::LabelState> states;
    states.reserve(n);
    states.insert(states.end(), c.positive, labels::LabelState::positive);
    states.insert(states.end(), c.negative, labels::LabelState::negative);
    states.insert(states.end(), c.uncertain, labels::LabelState::uncertain);
    states.insert(states.end(), c.missing, labels::LabelState::missing);
    Rng rng(mix_seed(seed, c.name));
    rng.shuffle(states);
    for (std::size_t i = 0; i < n; ++i) table.records[i].states[j] = states[i];
  }
  labels::validate(table);
  return table;
}

inline labels::LabelTable reference_distribution_labels(std::uint64_t seed = 41) {
  return synthetic_labels(reference_distribution_counts(), seed);
}

// Linearly separable multi-label feature set. Each label owns a block of
// feature dimensions that is shifted up when the label is positive; noise is
// Gaussian. Easy to fit, so training smoke tests converge quickly.
struct SeparableSpec {
  Eigen::Index n_samples = 2000;
  int feature_dim = head::kDefaultInDim;
  int n_labels = 5;
  int block_size = 16;
  double shift = 1.0;
  double noise_sigma = 0.5;
  std::uint64_t seed = 7;
};

inline head::Dataset separable_features(const SeparableSpec& spec) {
  if (spec.n_samples < 1 || spec.feature_dim < 1 || spec.n_labels < 1 ||
      spec.block_size < 1 || spec.block_size * spec.n_labels > spec.feature_dim) {
    fail(errc::bad_config, "separable spec dimensions are inconsistent");
  }
  Rng rng(mix_seed(spec.seed, "separable"));
  head::Dataset set;
  set.features.resize(spec.n_samples, spec.feature_dim);
  set.targets.resize(spec.n_samples, spec.n_labels);
  set.masks = Eigen::MatrixXd::Ones(spec.n_samples, spec.n_labels);
  set.paths.reserve(static_cast<std::size_t>(spec.n_samples));
  char buf[48];
  for (Eigen::Index i = 0; i < spec.n_samples; ++i) {
    for (Eigen::Index d = 0; d < spec.feature_dim; ++d) {
      set.features(i, d) = spec.noise_sigma * rng.normal();
    }
    for (int j = 0; j < spec.n_labels; ++j) {
      const bool positive = rng.unit() < 0.5;
      set.targets(i, j) = positive ? 1.0 : 0.0;
      if (positive) {
        for (int d = j * spec.block_size; d < (j + 1) * spec.block_size; ++d) {
          set.features(i, d) += spec.shift;
        }
      }
    }
    std::snprintf(buf, sizeof(buf), "synthetic/sample_%05lld",
                  static_cast<long long>(i));
    set.paths.emplace_back(buf);
  }
  return set;
}

struct DatasetSplit {
  head::Dataset train;
  head::Dataset val;
};

// Seeded shuffle, then the first round(ratio * n) samples become the
// training part. Row order within each part follows the shuffled order.
inline DatasetSplit split_dataset(const head::Dataset& set, double ratio,
                                  std::uint64_t seed) {
  head::validate(set);
  if (!(ratio > 0.0) || !(ratio < 1.0)) {
    fail(errc::bad_config, "split ratio must lie strictly between 0 and 1");
  }
  const auto n = set.size();
  if (n < 2) fail(errc::too_few_records, "need at least 2 samples to split");
  std::vector<std::size_t> order(static_cast<std::size_t>(n));
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  Rng rng(mix_seed(seed, "dataset-split"));
  rng.shuffle(order);
  auto n_train = static_cast<Eigen::Index>(
      std::llround(ratio * static_cast<double>(n)));
  if (n_train < 1) n_train = 1;
  if (n_train > n - 1) n_train = n - 1;

  auto take = [&](Eigen::Index begin, Eigen::Index count) {
    head::Dataset part;
    part.features.resize(count, set.features.cols());
    part.targets.resize(count, set.targets.cols());
    part.masks.resize(count, set.masks.cols());
    for (Eigen::Index i = 0; i < count; ++i) {
      const auto row = static_cast<Eigen::Index>(order[static_cast<std::size_t>(begin + i)]);
      part.features.row(i) = set.features.row(row);
      part.targets.row(i) = set.targets.row(row);
      part.masks.row(i) = set.masks.row(row);
      if (!set.paths.empty()) part.paths.push_back(set.paths[static_cast<std::size_t>(row)]);
    }
    return part;
  };
  return {take(0, n_train), take(n_train, n - n_train)};
}

// Procedural grayscale image: a bright elliptical plate on a dark gradient
// background plus a little seeded noise. Values are whole numbers in
// [0, 255] so PNG round-trips are exact.
inline image::ImageBuffer synthetic_radiograph(std::size_t width, std::size_t height,
                                               std::uint64_t seed = 0) {
  if (width == 0 || height == 0) fail(errc::zero_dimension, "image dims must be positive");
  image::ImageBuffer img;
  img.width = width;
  img.height = height;
  img.channels = 1;
  img.range = image::ValueRange::raw8;
  img.data.resize(width * height);
  Rng rng(mix_seed(seed, "radiograph"));
  const double cx = static_cast<double>(width) / 2.0;
  const double cy = static_cast<double>(height) / 2.0;
  const double rx = 0.30 * static_cast<double>(width);
  const double ry = 0.35 * static_cast<double>(height);
  for (std::size_t y = 0; y < height; ++y) {
    for (std::size_t x = 0; x < width; ++x) {
      const double dx = (static_cast<double>(x) - cx) / rx;
      const double dy = (static_cast<double>(y) - cy) / ry;
      double v = 30.0 + 25.0 * static_cast<double>(y) / static_cast<double>(height);
      if (dx * dx + dy * dy <= 1.0) {
        v += 140.0 * (1.0 - 0.5 * (dx * dx + dy * dy));
      }
      v += 12.0 * rng.unit();
      v = std::floor(v);
      if (v < 0.0) v = 0.0;
      if (v > 255.0) v = 255.0;
      img.data[y * width + x] = v;
    }
  }
  return img;
}

// On-disk corpus for end-to-end runs: PNG images of slightly varying sizes,
// a label CSV, a feature CSV whose blocks correlate with the positive
// labels, and ground-truth plus predicted box CSVs around each plate.
struct CorpusSpec {
  std::size_t n_images = 24;
  std::size_t base_width = 96;
  std::size_t base_height = 112;
  int feature_dim = 32;
  std::uint64_t seed = 17;
};

struct CorpusPaths {
  std::filesystem::path root;
  std::filesystem::path images_dir;
  std::filesystem::path labels_csv;
  std::filesystem::path features_csv;
  std::filesystem::path truth_boxes_csv;
  std::filesystem::path predicted_boxes_csv;
  std::vector<std::string> image_paths;  // relative to images_dir
};

inline CorpusPaths write_pipeline_corpus(const std::filesystem::path& root,
                                         const CorpusSpec& spec = {}) {
  if (spec.n_images < 4) fail(errc::bad_config, "corpus needs at least 4 images");
  const auto names = labels::submission_observations();
  const int n_labels = static_cast<int>(names.size());
  const int block = spec.feature_dim / n_labels;
  if (block < 1) fail(errc::bad_config, "feature dim too small for the label count");

  CorpusPaths out;
  out.root = root;
  out.images_dir = root / "images";
  out.labels_csv = root / "labels.csv";
  out.features_csv = root / "features.csv";
  out.truth_boxes_csv = root / "boxes_truth.csv";
  out.predicted_boxes_csv = root / "boxes_pred.csv";

  labels::LabelTable table;
  table.observations.assign(names.begin(), names.end());

  head::FeatureFile features;
  features.values.resize(static_cast<Eigen::Index>(spec.n_images), spec.feature_dim);

  std::string truth_csv = "image_path,x_min,y_min,x_max,y_max\n";
  std::string pred_csv = "image_path,x_min,y_min,x_max,y_max,score\n";
  char buf[256];  // CSV rows with five %.17g fields need the room
  Rng feature_rng(mix_seed(spec.seed, "corpus-features"));

  for (std::size_t i = 0; i < spec.n_images; ++i) {
    const std::size_t w = spec.base_width + (i % 3) * 8;
    const std::size_t h = spec.base_height + (i % 5) * 8;
    std::snprintf(buf, sizeof(buf), "patient%03zu/study%zu/view1_frontal.png",
                  i / 2 + 1, i % 2 + 1);
    const std::string rel = buf;
    out.image_paths.push_back(rel);

    const image::ImageBuffer img = synthetic_radiograph(w, h, mix_seed(spec.seed, i));
    image::write_png(out.images_dir / rel, img);

    labels::LabelRecord record;
    record.image_path = rel;
    record.states.resize(static_cast<std::size_t>(n_labels));
    for (int j = 0; j < n_labels; ++j) {
      auto state = ((i + static_cast<std::size_t>(j)) % 2 == 0)
                       ? labels::LabelState::positive
                       : labels::LabelState::negative;
      if (i % 7 == 3 && j == static_cast<int>(i % 5)) state = labels::LabelState::uncertain;
      if (i % 11 == 5 && j == static_cast<int>((i + 2) % 5)) state = labels::LabelState::missing;
      record.states[static_cast<std::size_t>(j)] = state;
    }
    table.records.push_back(record);

    features.paths.push_back(rel);
    const auto row = static_cast<Eigen::Index>(i);
    for (int d = 0; d < spec.feature_dim; ++d) {
      features.values(row, d) = 0.5 * feature_rng.normal();
    }
    for (int j = 0; j < n_labels; ++j) {
      if (record.states[static_cast<std::size_t>(j)] == labels::LabelState::positive) {
        for (int d = j * block; d < (j + 1) * block; ++d) features.values(row, d) += 1.0;
      }
    }

    // Plate bounding box matches the ellipse drawn by synthetic_radiograph.
    const double wd = static_cast<double>(w);
    const double hd = static_cast<double>(h);
    const boxes::BBox truth{0.2 * wd, 0.15 * hd, 0.8 * wd, 0.85 * hd};
    const double jx = static_cast<double>(i % 5) - 2.0;
    const double jy = static_cast<double>((i + 2) % 5) - 2.0;
    const boxes::BBox pred{truth.x_min + jx, truth.y_min + jy, truth.x_max + jx,
                           truth.y_max + jy};
    const double score = 0.95 - 0.03 * static_cast<double>(i % 7);
    std::snprintf(buf, sizeof(buf), "%s,%.17g,%.17g,%.17g,%.17g\n", rel.c_str(),
                  truth.x_min, truth.y_min, truth.x_max, truth.y_max);
    truth_csv += buf;
    std::snprintf(buf, sizeof(buf), "%s,%.17g,%.17g,%.17g,%.17g,%.17g\n", rel.c_str(),
                  pred.x_min, pred.y_min, pred.x_max, pred.y_max, score);
    pred_csv += buf;
  }

  labels::validate(table);
  write_file_atomic(out.labels_csv, labels::to_csv(table));
  write_file_atomic(out.features_csv, head::to_csv(features));
  write_file_atomic(out.truth_boxes_csv, truth_csv);
  write_file_atomic(out.predicted_boxes_csv, pred_csv);
  return out;
}

}  // namespace chexkit::fixtures
