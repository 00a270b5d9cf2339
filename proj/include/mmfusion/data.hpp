#pragma once

// Corpus ingestion and preprocessing.
//
// On-disk corpus: a manifest CSV with header `id,face_path,pose_path,fps,label,split`
// plus one headerless CSV per sample and modality (rows = frames, columns =
// features). Paths in the manifest are relative to the manifest's directory.

#include <cstddef>
#include <filesystem>
#include <iosfwd>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "mmfusion/fusion.hpp"

namespace mmf {

enum class Split { Train, Validation, Test };

std::string_view split_name(Split s);
Split parse_split(std::string_view s);

inline constexpr std::size_t kFaceFeatures = 674;
inline constexpr std::size_t kPoseFeatures = 76;

struct FeatureDims {
  std::size_t face = kFaceFeatures;
  std::size_t pose = kPoseFeatures;
};

/// Row-major frames x features block of doubles.
struct FrameMatrix {
  std::size_t rows = 0;
  std::size_t cols = 0;
  std::vector<double> values;

  double at(std::size_t r, std::size_t c) const { return values[r * cols + c]; }
  double& at(std::size_t r, std::size_t c) { return values[r * cols + c]; }
  bool operator==(const FrameMatrix&) const = default;
};

struct SampleDescriptor {
  std::string id;
  std::filesystem::path face_path;
  std::filesystem::path pose_path;
  double fps = 30.0;
  double label = 0.0;
  Split split = Split::Train;
};

struct RawSample {
  std::string id;
  FrameMatrix face;  // T_raw x 674
  FrameMatrix pose;  // T_raw x 76
  double fps = 30.0;
  double label = 0.0;
  Split split = Split::Train;

  std::size_t frames() const { return face.rows; }
};

struct ProcessedSample {
  std::string id;
  FrameMatrix face;  // (T-1) x (face features + 1)
  FrameMatrix pose;  // (T-1) x (pose features + 1)
  double label = 0.0;
  Split split = Split::Train;
};

/// Domain check for a label: {0,1} for detection, [-1,1] for agreement.
void validate_label(double label, Task task, const std::string& where);

/// Parses the manifest. With `task` set, labels are validated against it.
std::vector<SampleDescriptor> load_manifest(const std::filesystem::path& path,
                                            std::optional<Task> task = std::nullopt);

/// Writes descriptors with paths made relative to the manifest directory.
void write_manifest(const std::filesystem::path& path, const std::vector<SampleDescriptor>& rows);

FrameMatrix read_feature_csv(const std::filesystem::path& path, std::size_t expected_cols);
void write_feature_csv(const std::filesystem::path& path, const FrameMatrix& m);

/// Loads both modality files. Unequal frame counts are truncated to the
/// shorter with a warning on `warnings` (if given).
RawSample load_sample_features(const SampleDescriptor& desc, const FeatureDims& dims = {},
                               std::ostream* warnings = nullptr);

/// Frames in a window of `window_seconds` at `fps`.
std::size_t window_frames(double window_seconds, double fps);

/// Keeps the last window, replaces frames by |x[t+1] - x[t]| and appends the
/// normalized frame index (t+1)/T as a final column.
ProcessedSample preprocess(const RawSample& raw, double window_seconds);

/// Per-feature standardization fitted on training samples. The frame-index
/// column is left untouched.
struct FeatureStandardizer {
  std::vector<double> face_mean, face_scale;
  std::vector<double> pose_mean, pose_scale;

  bool empty() const { return face_mean.empty(); }
  static FeatureStandardizer fit(const std::vector<ProcessedSample>& samples);
  void apply(ProcessedSample& s) const;
};

/// Manifest -> processed samples in manifest order.
std::vector<ProcessedSample> load_corpus(const std::filesystem::path& manifest, Task task,
                                         const FeatureDims& dims, double window_seconds,
                                         std::ostream* warnings = nullptr);

}  // namespace mmf
