#pragma once

// AlphaPose result ingestion.
//
// An AlphaPose results file is a JSON array of detections:
//   [{"image_id": "12.jpg", "keypoints": [x1, y1, c1, ..., x17, y17, c17],
//     "score": 2.73, ...}, ...]
// Unknown keys are ignored. Frames are identified by image_id and ordered
// naturally (digit runs compare numerically, so "frame_10" > "frame_9").

#include <array>
#include <cstddef>
#include <filesystem>
#include <string>
#include <string_view>
#include <vector>

#include "harlm/dataset.hpp"
#include "harlm/skeleton.hpp"

namespace harlm {

struct Detection {
  std::string image_id;
  std::array<double, 3 * kNumJoints> keypoints{};
  double score = 0.0;

  FramePose pose() const;
};

struct VideoPoses {
  std::string video_id;
  std::vector<FramePose> frames;
};

std::vector<Detection> parse_alphapose(std::string_view document);
std::vector<Detection> parse_alphapose_file(const std::filesystem::path& path);

// Inverse of parse_alphapose for the keys this library reads.
std::string serialize_alphapose(const std::vector<Detection>& detections);

// Highest score wins; ties go to the earliest detection.
FramePose select_person(const std::vector<Detection>& detections_for_frame);

// Index of the detection select_person picks.
std::size_t select_person_index(const std::vector<Detection>& detections_for_frame);

// Natural ordering of frame identifiers.
bool natural_less(std::string_view a, std::string_view b);

// Groups detections by image_id (natural order) and selects one person per frame.
VideoPoses assemble_video(std::string video_id, const std::vector<Detection>& detections);

// Frame indices sample_frames picks out of n available frames.
std::array<std::size_t, kNumFrames> sample_indices(std::size_t n);

PoseSequence sample_frames(const VideoPoses& video);

struct ManifestRow {
  std::string video_id;
  std::string pose_file;
  std::string label;  // canonical
};

// UTF-8 CSV with header `video_id,pose_file,label`. Quoted fields allowed.
std::vector<ManifestRow> read_manifest(const std::filesystem::path& manifest);

struct SkippedVideo {
  std::size_t row = 0;  // 1-based data row
  std::string video_id;
  std::string reason;
};

struct IngestResult {
  std::vector<LabeledSequence> sequences;
  std::vector<SkippedVideo> skipped;

  std::size_t action_count() const;
  // Keypoints with confidence >= threshold over all emitted sequences.
  std::size_t keypoint_count(double tau = kDefaultConfidenceThreshold) const;
};

IngestResult build_dataset(const std::filesystem::path& pose_dir,
                           const std::filesystem::path& manifest,
                           double tau = kDefaultConfidenceThreshold);

std::string skip_report_csv(const IngestResult& result);

}  // namespace harlm
