#pragma once

#include <stdexcept>
#include <string>

namespace chexkit {

enum class errc {
  missing_column,
  bad_value,
  duplicate_path,
  empty_table,
  too_few_records,
  invalid_box,
  no_common_images,
  empty_ground_truth,
  already_normalized,
  zero_dimension,
  crop_too_small,
  box_outside_image,
  dimension_mismatch,
  uninitialized_batch_norm,
  shape_mismatch,
  epoch_out_of_range,
  empty_set,
  empty_list,
  degenerate_labels,
  missing_scores,
  empty_input,
  io_error,
  bad_config,
};

inline const char* errc_name(errc c) {
  switch (c) {
    case errc::missing_column: return "MissingColumn";
    case errc::bad_value: return "BadValue";
    case errc::duplicate_path: return "DuplicatePath";
    case errc::empty_table: return "EmptyTable";
    case errc::too_few_records: return "TooFewRecords";
    case errc::invalid_box: return "InvalidBox";
    case errc::no_common_images: return "NoCommonImages";
    case errc::empty_ground_truth: return "EmptyGroundTruth";
    case errc::already_normalized: return "AlreadyNormalized";
    case errc::zero_dimension: return "ZeroDimension";
    case errc::crop_too_small: return "CropTooSmall";
    case errc::box_outside_image: return "BoxOutsideImage";
    case errc::dimension_mismatch: return "DimensionMismatch";
    case errc::uninitialized_batch_norm: return "UninitializedBatchNorm";
    case errc::shape_mismatch: return "ShapeMismatch";
    case errc::epoch_out_of_range: return "EpochOutOfRange";
    case errc::empty_set: return "EmptySet";
    case errc::empty_list: return "EmptyList";
    case errc::degenerate_labels: return "DegenerateLabels";
    case errc::missing_scores: return "MissingScores";
    case errc::empty_input: return "EmptyInput";
    case errc::io_error: return "IoError";
    case errc::bad_config: return "BadConfig";
  }
  return "UnknownError";
}

class Error : public std::runtime_error {
 public:
  Error(errc code, const std::string& message)
      : std::runtime_error(std::string(errc_name(code)) + ": " + message),
        code_(code) {}

  errc code() const noexcept { return code_; }

 private:
  errc code_;
};

[[noreturn]] inline void fail(errc code, const std::string& message) {
  throw Error(code, message);
}

}  // namespace chexkit
