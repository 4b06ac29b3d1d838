#include <doctest.h>

#include <cmath>
#include <numbers>
#include <string>

#include "harlm/synth.hpp"

using namespace harlm;

namespace {

double range_of(const std::array<double, kNumFrames>& v) {
  const auto [lo, hi] = std::minmax_element(v.begin(), v.end());
  return *hi - *lo;
}

template <typename F>
double signal_range(const PoseSequence& s, F f) {
  std::array<double, kNumFrames> v{};
  for (std::size_t i = 0; i < kNumFrames; ++i) v[i] = f(s.frames[i].joints);
  return range_of(v);
}

// Hand-written classifier over raw pixel trajectories; knows nothing of the
// generator beyond which body parts each activity moves.
std::string rule_classify(const PoseSequence& s) {
  using J = std::array<Keypoint, kNumJoints>;
  const double head = signal_range(s, [](const J& j) {
    return (j[0].y + j[1].y + j[2].y + j[3].y + j[4].y) / 5.0;
  });
  const double ankles = signal_range(s, [](const J& j) { return (j[15].y + j[16].y) / 2.0; });
  const double stretch = signal_range(s, [](const J& j) {
    return (j[0].y + j[1].y + j[2].y + j[3].y + j[4].y) / 5.0 - (j[15].y + j[16].y) / 2.0;
  });
  // Head moves vertically: a jump carries the feet along rigidly, a squat leaves them planted.
  if (head > 8.0) return stretch < ankles ? "jump" : "squat";

  // Energies relative to the noise spread of each combination.
  const double wave = signal_range(s, [](const J& j) { return j[10].y - j[6].y; }) / std::sqrt(2.0);
  const double clap = signal_range(s, [](const J& j) { return j[9].x - j[10].x; }) / std::sqrt(2.0);
  const double march = signal_range(s, [](const J& j) {
    return (j[13].y + j[15].y) - (j[14].y + j[16].y);
  }) / 2.0;
  if (wave >= clap && wave >= march) return "wave";
  return clap >= march ? "clap" : "march";
}

}  // namespace

TEST_CASE("base skeleton") {
  const FramePose& b = base_skeleton();
  for (const Keypoint& k : b.joints) CHECK(k.confidence == 1.0);
  CHECK(b.joints[kNose].y < b.joints[kLeftHip].y);
  CHECK(b.joints[kLeftHip].y < b.joints[kLeftAnkle].y);
  CHECK(b.joints[kRightHip].y < b.joints[kRightAnkle].y);
  CHECK(base_skeleton() == b);
  for (const Keypoint& k : b.joints) {
    CHECK(k.x > 0);
    CHECK(k.x < kFrameSize);
    CHECK(k.y > 0);
    CHECK(k.y < kFrameSize);
  }
}

TEST_CASE("zero amplitude and zero noise give the base skeleton in every frame") {
  for (Activity a : kAllActivities) {
    MotionParams p;
    p.activity = a;
    p.amplitude = 0.0;
    p.noise_sigma = 0.0;
    const LabeledSequence s = generate_sequence(p, 5);
    CHECK(s.label == activity_name(a));
    for (const FramePose& f : s.seq.frames) CHECK(f == base_skeleton());
  }
}

TEST_CASE("jump moves the whole body rigidly") {
  MotionParams p;
  p.activity = Activity::Jump;
  p.amplitude = 0.15;
  p.frequency = 1.3;
  p.noise_sigma = 0.0;
  const LabeledSequence s = generate_sequence(p, 1);
  const FramePose& base = base_skeleton();
  double lo = 1e9, hi = -1e9;
  for (std::size_t i = 0; i < kNumFrames; ++i) {
    // Independent offset formula: -A * 256 * max(0, sin(2 pi f t)).
    const double t = double(i) / 9.0;
    const double dy = -p.amplitude * kFrameSize * std::max(0.0, std::sin(2 * std::numbers::pi * p.frequency * t));
    double mean = 0.0;
    for (std::size_t j = 0; j < kNumJoints; ++j) {
      const Keypoint& k = s.seq.frames[i].joints[j];
      CHECK(k.x == doctest::Approx(base.joints[j].x));
      CHECK(k.y - s.seq.frames[i].joints[0].y ==
            doctest::Approx(base.joints[j].y - base.joints[0].y));
      CHECK(k.y == doctest::Approx(base.joints[j].y + dy));
      mean += k.y / kNumJoints;
    }
    lo = std::min(lo, mean);
    hi = std::max(hi, mean);
  }
  CHECK(hi - lo > 1.0);
}

TEST_CASE("generation is deterministic") {
  MotionParams p;
  p.activity = Activity::March;
  p.noise_sigma = 2.0;
  CHECK(generate_sequence(p, 77) == generate_sequence(p, 77));
  CHECK_FALSE(generate_sequence(p, 77) == generate_sequence(p, 78));

  SynthSpec spec;
  spec.count = 6;
  const SynthDataset a = generate_dataset(spec), b = generate_dataset(spec);
  CHECK(a.train == b.train);
  CHECK(a.val == b.val);
}

TEST_CASE("split sizes") {
  SynthSpec spec;
  spec.classes = {Activity::Wave, Activity::Squat};
  spec.count = 8;
  const SynthDataset d = generate_dataset(spec);
  CHECK(d.train.size() == 16);
  CHECK(d.val.size() == 4);
  spec.count = 9;
  CHECK(generate_dataset(spec).val.size() == 6);  // ceil(9 / 4) per class
}

TEST_CASE("train and validation draws differ") {
  SynthSpec spec;
  spec.classes = {Activity::Clap};
  spec.count = 4;
  const SynthDataset d = generate_dataset(spec);
  CHECK_FALSE(d.train[0].seq.frames == d.val[0].seq.frames);
  CHECK(d.train[0].seq.source_id != d.val[0].seq.source_id);
}

TEST_CASE("activity names") {
  for (Activity a : kAllActivities) CHECK(parse_activity(activity_name(a)) == a);
  CHECK_FALSE(parse_activity("dance").has_value());
}

TEST_CASE("a rule classifier separates every generated sequence") {
  for (std::uint64_t seed : {42ull, 7ull, 1234ull}) {
    SynthSpec spec;
    spec.seed = seed;
    spec.noise_sigma = 2.0;
    const SynthDataset d = generate_dataset(spec);
    std::size_t wrong = 0;
    for (const auto* split : {&d.train, &d.val}) {
      for (const LabeledSequence& s : *split) {
        if (rule_classify(s.seq) != s.label) {
          ++wrong;
          MESSAGE("misclassified " << s.seq.source_id << " as " << rule_classify(s.seq));
        }
      }
    }
    INFO("seed " << seed);
    CHECK(wrong == 0);
  }
}
