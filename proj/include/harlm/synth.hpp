#pragma once

// Parametric skeleton motion generator: five activity classes rendered in a
// 256x256 pixel frame, ten frames per sequence.

#include <array>
#include <cstdint>
#include <optional>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "harlm/dataset.hpp"
#include "harlm/skeleton.hpp"

namespace harlm {

enum class Activity { Wave, Squat, Jump, Clap, March };

inline constexpr std::array<Activity, 5> kAllActivities = {
    Activity::Wave, Activity::Squat, Activity::Jump, Activity::Clap, Activity::March};

inline constexpr double kFrameSize = 256.0;

std::string_view activity_name(Activity a) noexcept;
std::optional<Activity> parse_activity(std::string_view name) noexcept;

struct MotionParams {
  Activity activity = Activity::Wave;
  double amplitude = 0.1;   // fraction of the frame, [0.05, 0.2]
  double frequency = 1.0;   // cycles per sequence, [0.5, 2]
  double phase = 0.0;       // radians, [0, 2pi)
  double noise_sigma = 0.0; // pixels

  // Ranges a generated dataset draws from.
  static constexpr double kMinAmplitude = 0.05;
  static constexpr double kMaxAmplitude = 0.2;
  static constexpr double kMinFrequency = 0.5;
  static constexpr double kMaxFrequency = 2.0;
};

struct SynthSpec {
  std::vector<Activity> classes{kAllActivities.begin(), kAllActivities.end()};
  std::size_t count = 200;  // training sequences per class
  std::uint64_t seed = 42;
  double noise_sigma = 2.0;
};

// Canonical upright pose, all confidences 1.
const FramePose& base_skeleton();

// Motion-only pose at time t in [0, 1] (no noise).
FramePose pose_at(const MotionParams& params, double t);

LabeledSequence generate_sequence(const MotionParams& params, std::uint64_t rng_seed,
                                  std::string video_id = {});

struct SynthDataset {
  std::vector<LabeledSequence> train;
  std::vector<LabeledSequence> val;
};

// Validation size per class is ceil(count / 4).
SynthDataset generate_dataset(const SynthSpec& spec);

}  // namespace harlm
