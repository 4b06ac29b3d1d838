#include "harlm/synth.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>

#include "harlm/random.hpp"

namespace harlm {

namespace {

constexpr double kTwoPi = 2.0 * std::numbers::pi;
constexpr double kMidlineX = 128.0;

// Pixel coordinates of the canonical pose, front-facing, 256x256 frame.
constexpr std::array<std::array<double, 2>, kNumJoints> kBaseCoords = {{
    {128.0, 40.0},   // nose
    {134.0, 34.0},   // left_eye
    {122.0, 34.0},   // right_eye
    {142.0, 38.0},   // left_ear
    {114.0, 38.0},   // right_ear
    {152.0, 70.0},   // left_shoulder
    {104.0, 70.0},   // right_shoulder
    {160.0, 105.0},  // left_elbow
    {96.0, 105.0},   // right_elbow
    {164.0, 138.0},  // left_wrist
    {92.0, 138.0},   // right_wrist
    {142.0, 140.0},  // left_hip
    {114.0, 140.0},  // right_hip
    {144.0, 185.0},  // left_knee
    {112.0, 185.0},  // right_knee
    {146.0, 228.0},  // left_ankle
    {110.0, 228.0},  // right_ankle
}};

FramePose make_base() {
  FramePose p;
  for (std::size_t j = 0; j < kNumJoints; ++j) {
    p.joints[j] = {kBaseCoords[j][0], kBaseCoords[j][1], 1.0};
  }
  return p;
}

}  // namespace

std::string_view activity_name(Activity a) noexcept {
  switch (a) {
    case Activity::Wave: return "wave";
    case Activity::Squat: return "squat";
    case Activity::Jump: return "jump";
    case Activity::Clap: return "clap";
    case Activity::March: return "march";
  }
  return "";
}

std::optional<Activity> parse_activity(std::string_view name) noexcept {
  for (Activity a : kAllActivities) {
    if (activity_name(a) == name) return a;
  }
  return std::nullopt;
}

const FramePose& base_skeleton() {
  static const FramePose base = make_base();
  return base;
}

FramePose pose_at(const MotionParams& params, double t) {
  FramePose p = base_skeleton();
  const double amp = params.amplitude * kFrameSize;
  const double w = kTwoPi * params.frequency * t + params.phase;
  auto& j = p.joints;

  switch (params.activity) {
    case Activity::Wave: {
      const double dy = -amp * std::sin(w);
      j[kRightWrist].y += dy;
      j[kRightElbow].y += 0.5 * dy;
      break;
    }
    case Activity::Squat: {
      const double s = amp * (1.0 - std::cos(w));
      for (std::size_t k = kNose; k <= kRightHip; ++k) j[k].y += s;
      j[kLeftKnee].y += 0.5 * s;
      j[kRightKnee].y += 0.5 * s;
      j[kLeftKnee].x += 0.5 * s;
      j[kRightKnee].x -= 0.5 * s;
      break;
    }
    case Activity::Jump: {
      const double lift = amp * std::max(0.0, std::sin(kTwoPi * params.frequency * t));
      for (auto& kp : j) kp.y -= lift;
      break;
    }
    case Activity::Clap: {
      const double c = amp * (1.0 + std::sin(w));
      j[kLeftWrist].x += (j[kLeftWrist].x > kMidlineX ? -c : c);
      j[kRightWrist].x += (j[kRightWrist].x > kMidlineX ? -c : c);
      break;
    }
    case Activity::March: {
      const double left = amp * std::max(0.0, std::sin(w));
      const double right = amp * std::max(0.0, -std::sin(w));
      j[kLeftKnee].y -= left;
      j[kLeftAnkle].y -= left;
      j[kRightKnee].y -= right;
      j[kRightAnkle].y -= right;
      break;
    }
  }
  return p;
}

LabeledSequence generate_sequence(const MotionParams& params, std::uint64_t rng_seed,
                                  std::string video_id) {
  Rng rng(rng_seed);
  LabeledSequence out;
  out.label = std::string(activity_name(params.activity));
  out.seq.source_id = std::move(video_id);
  for (std::size_t i = 0; i < kNumFrames; ++i) {
    const double t = static_cast<double>(i) / static_cast<double>(kNumFrames - 1);
    FramePose frame = pose_at(params, t);
    if (params.noise_sigma > 0.0) {
      for (auto& kp : frame.joints) {
        kp.x += rng.normal(0.0, params.noise_sigma);
        kp.y += rng.normal(0.0, params.noise_sigma);
      }
    }
    out.seq.frames[i] = frame;
  }
  return out;
}

SynthDataset generate_dataset(const SynthSpec& spec) {
  SynthDataset out;
  const std::size_t val_count = (spec.count + 3) / 4;

  auto make = [&](Activity activity, std::size_t index, std::uint64_t split_tag) {
    const auto class_tag = static_cast<std::uint64_t>(activity);
    Rng draw(derive_seed(spec.seed, {class_tag, index, split_tag, 0}));
    MotionParams p;
    p.activity = activity;
    p.amplitude = draw.uniform(MotionParams::kMinAmplitude, MotionParams::kMaxAmplitude);
    p.frequency = draw.uniform(MotionParams::kMinFrequency, MotionParams::kMaxFrequency);
    p.phase = draw.uniform(0.0, kTwoPi);
    p.noise_sigma = spec.noise_sigma;
    const std::string id = "synth_" + std::string(activity_name(activity)) +
                           (split_tag == 0 ? "_train_" : "_val_") + std::to_string(index);
    return generate_sequence(p, derive_seed(spec.seed, {class_tag, index, split_tag, 1}), id);
  };

  for (Activity a : spec.classes) {
    for (std::size_t i = 0; i < spec.count; ++i) out.train.push_back(make(a, i, 0));
    for (std::size_t i = 0; i < val_count; ++i) out.val.push_back(make(a, i, 1));
  }
  return out;
}

}  // namespace harlm
