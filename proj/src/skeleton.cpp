#include "harlm/skeleton.hpp"

#include <algorithm>
#include <limits>

#include "harlm/error.hpp"

namespace harlm {

std::vector<std::size_t> valid_joints(const FramePose& pose, double tau) {
  std::vector<std::size_t> out;
  for (std::size_t j = 0; j < kNumJoints; ++j) {
    if (pose.joints[j].confidence >= tau) out.push_back(j);
  }
  return out;
}

BBox sequence_bbox(const PoseSequence& seq, double tau, double margin_frac) {
  constexpr double inf = std::numeric_limits<double>::infinity();
  BBox box{inf, inf, -inf, -inf};
  bool any = false;
  for (const FramePose& frame : seq.frames) {
    for (const Keypoint& kp : frame.joints) {
      if (kp.confidence < tau) continue;
      any = true;
      box.x_min = std::min(box.x_min, kp.x);
      box.y_min = std::min(box.y_min, kp.y);
      box.x_max = std::max(box.x_max, kp.x);
      box.y_max = std::max(box.y_max, kp.y);
    }
  }
  if (!any) {
    throw Error(ErrorKind::NoValidJoints,
                "no joint with confidence >= threshold in sequence '" + seq.source_id + "'");
  }

  // Degenerate axes grow symmetrically to 1 px.
  if (box.width() < 1.0) {
    const double c = 0.5 * (box.x_min + box.x_max);
    box.x_min = c - 0.5;
    box.x_max = c + 0.5;
  }
  if (box.height() < 1.0) {
    const double c = 0.5 * (box.y_min + box.y_max);
    box.y_min = c - 0.5;
    box.y_max = c + 0.5;
  }

  const double margin = margin_frac * std::max(box.width(), box.height());
  box.x_min -= margin;
  box.y_min -= margin;
  box.x_max += margin;
  box.y_max += margin;
  return box;
}

NormalizedSequence normalize_sequence(const PoseSequence& seq, double tau, double margin_frac) {
  const BBox box = sequence_bbox(seq, tau, margin_frac);
  const double w = box.width();
  const double h = box.height();

  NormalizedSequence out;
  out.source_id = seq.source_id;
  for (std::size_t f = 0; f < kNumFrames; ++f) {
    for (std::size_t j = 0; j < kNumJoints; ++j) {
      const Keypoint& kp = seq.frames[f].joints[j];
      if (kp.confidence < tau) {
        out.missing[f][j] = true;
        out.coords[f][j] = {0.0, 0.0};
        continue;
      }
      out.missing[f][j] = false;
      out.coords[f][j] = {std::clamp((kp.x - box.x_min) / w, 0.0, 1.0),
                          std::clamp((kp.y - box.y_min) / h, 0.0, 1.0)};
    }
  }
  return out;
}

}  // namespace harlm
