#include "harlm/ingest.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <fstream>
#include <map>
#include <set>
#include <sstream>

#include <json.hpp>

#include "harlm/error.hpp"

namespace harlm {

using nlohmann::json;

FramePose Detection::pose() const {
  FramePose p;
  for (std::size_t j = 0; j < kNumJoints; ++j) {
    p.joints[j] = {keypoints[3 * j], keypoints[3 * j + 1], keypoints[3 * j + 2]};
  }
  return p;
}

std::vector<Detection> parse_alphapose(std::string_view document) {
  json doc;
  try {
    doc = json::parse(document);
  } catch (const json::parse_error& e) {
    throw Error(ErrorKind::Parse, "malformed JSON at byte " + std::to_string(e.byte));
  }
  if (!doc.is_array()) throw Error(ErrorKind::Parse, "top-level value must be an array");

  std::vector<Detection> out;
  out.reserve(doc.size());
  for (std::size_t i = 0; i < doc.size(); ++i) {
    const json& entry = doc[i];
    const std::string where = "entry " + std::to_string(i);
    if (!entry.is_object()) throw Error(ErrorKind::Parse, where + ": not an object");

    Detection d;
    const auto id = entry.find("image_id");
    if (id == entry.end()) throw Error(ErrorKind::Parse, where + ": missing \"image_id\"");
    if (id->is_string()) {
      d.image_id = id->get<std::string>();
    } else if (id->is_number_integer()) {
      d.image_id = std::to_string(id->get<long long>());
    } else {
      throw Error(ErrorKind::Parse, where + ": \"image_id\" must be a string");
    }

    const auto kps = entry.find("keypoints");
    if (kps == entry.end() || !kps->is_array()) {
      throw Error(ErrorKind::Parse, where + ": \"keypoints\" must be an array");
    }
    if (kps->size() != d.keypoints.size()) {
      throw Error(ErrorKind::Parse, where + ": \"keypoints\" has " + std::to_string(kps->size()) +
                                        " values, expected 51");
    }
    for (std::size_t k = 0; k < d.keypoints.size(); ++k) {
      const json& v = (*kps)[k];
      if (!v.is_number()) {
        throw Error(ErrorKind::Parse, where + ": keypoint value " + std::to_string(k) +
                                          " is not a number");
      }
      d.keypoints[k] = v.get<double>();
      if (!std::isfinite(d.keypoints[k])) {
        throw Error(ErrorKind::Parse, where + ": non-finite keypoint value");
      }
    }

    const auto score = entry.find("score");
    if (score == entry.end() || !score->is_number()) {
      throw Error(ErrorKind::Parse, where + ": \"score\" must be a number");
    }
    d.score = score->get<double>();
    out.push_back(std::move(d));
  }
  return out;
}

std::vector<Detection> parse_alphapose_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorKind::Io, "cannot open " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  try {
    return parse_alphapose(ss.str());
  } catch (const Error& e) {
    throw Error(e.kind(), path.string() + ": " + e.message());
  }
}

std::string serialize_alphapose(const std::vector<Detection>& detections) {
  json doc = json::array();
  for (const Detection& d : detections) {
    json entry;
    entry["image_id"] = d.image_id;
    entry["keypoints"] = d.keypoints;
    entry["score"] = d.score;
    doc.push_back(std::move(entry));
  }
  return doc.dump();
}

std::size_t select_person_index(const std::vector<Detection>& detections_for_frame) {
  if (detections_for_frame.empty()) throw Error(ErrorKind::EmptyFrame, "frame has no detections");
  std::size_t best = 0;
  for (std::size_t i = 1; i < detections_for_frame.size(); ++i) {
    if (detections_for_frame[i].score > detections_for_frame[best].score) best = i;
  }
  return best;
}

FramePose select_person(const std::vector<Detection>& detections_for_frame) {
  return detections_for_frame[select_person_index(detections_for_frame)].pose();
}

bool natural_less(std::string_view a, std::string_view b) {
  auto is_digit = [](char c) { return std::isdigit(static_cast<unsigned char>(c)) != 0; };
  std::size_t i = 0;
  std::size_t j = 0;
  while (i < a.size() && j < b.size()) {
    if (is_digit(a[i]) && is_digit(b[j])) {
      std::size_t ie = i;
      std::size_t je = j;
      while (ie < a.size() && is_digit(a[ie])) ++ie;
      while (je < b.size() && is_digit(b[je])) ++je;
      // Compare digit runs by value: strip leading zeros, then length, then lexically.
      std::size_t is = i;
      std::size_t js = j;
      while (is + 1 < ie && a[is] == '0') ++is;
      while (js + 1 < je && b[js] == '0') ++js;
      const std::string_view ra = a.substr(is, ie - is);
      const std::string_view rb = b.substr(js, je - js);
      if (ra.size() != rb.size()) return ra.size() < rb.size();
      if (ra != rb) return ra < rb;
      i = ie;
      j = je;
    } else {
      if (a[i] != b[j]) return a[i] < b[j];
      ++i;
      ++j;
    }
  }
  if ((a.size() - i) != (b.size() - j)) return (a.size() - i) < (b.size() - j);
  return a < b;
}

namespace {

struct NaturalLess {
  bool operator()(const std::string& a, const std::string& b) const { return natural_less(a, b); }
};

}  // namespace

VideoPoses assemble_video(std::string video_id, const std::vector<Detection>& detections) {
  std::map<std::string, std::vector<Detection>, NaturalLess> by_frame;
  for (const Detection& d : detections) by_frame[d.image_id].push_back(d);
  VideoPoses video;
  video.video_id = std::move(video_id);
  video.frames.reserve(by_frame.size());
  for (const auto& [image_id, dets] : by_frame) video.frames.push_back(select_person(dets));
  return video;
}

std::array<std::size_t, kNumFrames> sample_indices(std::size_t n) {
  if (n == 0) throw Error(ErrorKind::EmptyVideo, "video has no frames");
  std::array<std::size_t, kNumFrames> idx{};
  if (n >= kNumFrames) {
    // round(i * (n - 1) / 9), half up, in exact integer arithmetic.
    const std::size_t den = kNumFrames - 1;
    for (std::size_t i = 0; i < kNumFrames; ++i) idx[i] = (2 * i * (n - 1) + den) / (2 * den);
  } else {
    for (std::size_t i = 0; i < kNumFrames; ++i) idx[i] = std::min(i, n - 1);
  }
  return idx;
}

PoseSequence sample_frames(const VideoPoses& video) {
  if (video.frames.empty()) {
    throw Error(ErrorKind::EmptyVideo, "video '" + video.video_id + "' has no frames");
  }
  const auto idx = sample_indices(video.frames.size());
  PoseSequence seq;
  seq.source_id = video.video_id;
  for (std::size_t i = 0; i < kNumFrames; ++i) seq.frames[i] = video.frames[idx[i]];
  return seq;
}

namespace {

std::vector<std::string> split_csv_line(const std::string& line, std::size_t line_no) {
  std::vector<std::string> fields;
  std::string cur;
  bool quoted = false;
  for (std::size_t i = 0; i < line.size(); ++i) {
    const char c = line[i];
    if (quoted) {
      if (c == '"') {
        if (i + 1 < line.size() && line[i + 1] == '"') {
          cur.push_back('"');
          ++i;
        } else {
          quoted = false;
        }
      } else {
        cur.push_back(c);
      }
    } else if (c == '"') {
      quoted = true;
    } else if (c == ',') {
      fields.push_back(std::move(cur));
      cur.clear();
    } else if (c != '\r') {
      cur.push_back(c);
    }
  }
  if (quoted) {
    throw Error(ErrorKind::Manifest, "line " + std::to_string(line_no) + ": unterminated quote");
  }
  fields.push_back(std::move(cur));
  return fields;
}

}  // namespace

std::vector<ManifestRow> read_manifest(const std::filesystem::path& manifest) {
  std::ifstream in(manifest, std::ios::binary);
  if (!in) throw Error(ErrorKind::Manifest, "cannot open manifest " + manifest.string());
  std::string line;
  if (!std::getline(in, line)) throw Error(ErrorKind::Manifest, "manifest is empty");
  if (line.size() >= 3 && line.compare(0, 3, "\xEF\xBB\xBF") == 0) line.erase(0, 3);
  const auto header = split_csv_line(line, 1);
  if (header != std::vector<std::string>{"video_id", "pose_file", "label"}) {
    throw Error(ErrorKind::Manifest, "header must be `video_id,pose_file,label`");
  }

  std::vector<ManifestRow> rows;
  std::set<std::string> seen;
  std::size_t line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    const auto fields = split_csv_line(line, line_no);
    const std::string where = "manifest row " + std::to_string(rows.size() + 1) + " (line " +
                              std::to_string(line_no) + ")";
    if (fields.size() != 3) throw Error(ErrorKind::Manifest, where + ": expected 3 fields");
    ManifestRow row{fields[0], fields[1], canonicalize_label(fields[2])};
    if (row.video_id.empty()) throw Error(ErrorKind::Manifest, where + ": empty video_id");
    if (row.label.empty()) throw Error(ErrorKind::Manifest, where + ": empty label");
    if (!seen.insert(row.video_id).second) {
      throw Error(ErrorKind::Manifest, where + ": duplicate video_id '" + row.video_id + "'");
    }
    rows.push_back(std::move(row));
  }
  return rows;
}

std::size_t IngestResult::action_count() const {
  std::set<std::string> labels;
  for (const auto& s : sequences) labels.insert(s.label);
  return labels.size();
}

std::size_t IngestResult::keypoint_count(double tau) const {
  std::size_t n = 0;
  for (const auto& s : sequences) {
    for (const FramePose& f : s.seq.frames) n += valid_joints(f, tau).size();
  }
  return n;
}

IngestResult build_dataset(const std::filesystem::path& pose_dir,
                           const std::filesystem::path& manifest, double tau) {
  const auto rows = read_manifest(manifest);
  for (std::size_t r = 0; r < rows.size(); ++r) {
    const auto path = pose_dir / rows[r].pose_file;
    if (!std::filesystem::is_regular_file(path)) {
      throw Error(ErrorKind::Manifest, "manifest row " + std::to_string(r + 1) + " ('" +
                                           rows[r].video_id + "'): pose file not found: " +
                                           path.string());
    }
  }

  IngestResult result;
  for (std::size_t r = 0; r < rows.size(); ++r) {
    const ManifestRow& row = rows[r];
    const auto detections = parse_alphapose_file(pose_dir / row.pose_file);
    if (detections.empty()) {
      result.skipped.push_back({r + 1, row.video_id, "no detections"});
      continue;
    }
    const PoseSequence seq = sample_frames(assemble_video(row.video_id, detections));
    bool any_valid = false;
    for (const FramePose& f : seq.frames) any_valid = any_valid || !valid_joints(f, tau).empty();
    if (!any_valid) {
      result.skipped.push_back({r + 1, row.video_id, "no valid joints"});
      continue;
    }
    result.sequences.push_back({seq, row.label});
  }
  return result;
}

std::string skip_report_csv(const IngestResult& result) {
  std::string out = "row,video_id,reason\n";
  for (const SkippedVideo& s : result.skipped) {
    out += std::to_string(s.row) + "," + s.video_id + "," + s.reason + "\n";
  }
  return out;
}

}  // namespace harlm
