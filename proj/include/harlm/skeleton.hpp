#pragma once

// Pose domain types and sequence normalization.
//
// Joints are always stored in COCO order:
//   0 nose, 1 left_eye, 2 right_eye, 3 left_ear, 4 right_ear,
//   5 left_shoulder, 6 right_shoulder, 7 left_elbow, 8 right_elbow,
//   9 left_wrist, 10 right_wrist, 11 left_hip, 12 right_hip,
//   13 left_knee, 14 right_knee, 15 left_ankle, 16 right_ankle

#include <array>
#include <cstddef>
#include <string>
#include <vector>

namespace harlm {

inline constexpr std::size_t kNumJoints = 17;
inline constexpr std::size_t kNumFrames = 10;

inline constexpr double kDefaultConfidenceThreshold = 0.05;
inline constexpr double kDefaultMarginFrac = 0.05;

enum Joint : std::size_t {
  kNose = 0,
  kLeftEye,
  kRightEye,
  kLeftEar,
  kRightEar,
  kLeftShoulder,
  kRightShoulder,
  kLeftElbow,
  kRightElbow,
  kLeftWrist,
  kRightWrist,
  kLeftHip,
  kRightHip,
  kLeftKnee,
  kRightKnee,
  kLeftAnkle,
  kRightAnkle,
};

struct Keypoint {
  double x = 0.0;
  double y = 0.0;
  double confidence = 0.0;

  friend bool operator==(const Keypoint&, const Keypoint&) = default;
};

struct FramePose {
  std::array<Keypoint, kNumJoints> joints{};

  friend bool operator==(const FramePose&, const FramePose&) = default;
};

struct PoseSequence {
  std::array<FramePose, kNumFrames> frames{};
  std::string source_id;

  friend bool operator==(const PoseSequence&, const PoseSequence&) = default;
};

struct NormalizedSequence {
  // coords[frame][joint] = {x, y} in [0,1]; {0,0} where missing.
  std::array<std::array<std::array<double, 2>, kNumJoints>, kNumFrames> coords{};
  std::array<std::array<bool, kNumJoints>, kNumFrames> missing{};
  std::string source_id;
};

struct BBox {
  double x_min = 0.0;
  double y_min = 0.0;
  double x_max = 0.0;
  double y_max = 0.0;

  double width() const noexcept { return x_max - x_min; }
  double height() const noexcept { return y_max - y_min; }
};

// Indices of joints with confidence >= tau, ascending.
std::vector<std::size_t> valid_joints(const FramePose& pose, double tau);

// Union box of every valid joint over all frames, with a 1 px minimum extent
// per axis and a margin of margin_frac * max(width, height) on each side.
// Throws Error(NoValidJoints).
BBox sequence_bbox(const PoseSequence& seq, double tau = kDefaultConfidenceThreshold,
                   double margin_frac = kDefaultMarginFrac);

// Maps valid joints into the shared sequence box; others become missing.
NormalizedSequence normalize_sequence(const PoseSequence& seq,
                                      double tau = kDefaultConfidenceThreshold,
                                      double margin_frac = kDefaultMarginFrac);

}  // namespace harlm
