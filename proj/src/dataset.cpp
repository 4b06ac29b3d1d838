#include "harlm/dataset.hpp"

#include <cctype>
#include <fstream>
#include <sstream>

#include <json.hpp>

#include "harlm/error.hpp"

namespace harlm {

using nlohmann::json;

std::string canonicalize_label(std::string_view raw) {
  std::string out;
  bool pending_space = false;
  for (char ch : raw) {
    const auto c = static_cast<unsigned char>(ch);
    if (std::isalnum(c) != 0 && c < 0x80) {
      if (pending_space && !out.empty()) out.push_back(' ');
      pending_space = false;
      out.push_back(static_cast<char>(std::tolower(c)));
    } else if (std::isspace(c) != 0 || c == '_' || c == '-') {
      pending_space = true;
    }
  }
  return out;
}

std::vector<std::string> label_words(std::string_view canonical) {
  std::vector<std::string> words;
  std::string current;
  for (char c : canonical) {
    if (c == ' ') {
      if (!current.empty()) words.push_back(std::move(current));
      current.clear();
    } else {
      current.push_back(c);
    }
  }
  if (!current.empty()) words.push_back(std::move(current));
  return words;
}

std::string to_json_line(const LabeledSequence& record) {
  json frames = json::array();
  for (const FramePose& frame : record.seq.frames) {
    json joints = json::array();
    for (const Keypoint& kp : frame.joints) joints.push_back({kp.x, kp.y, kp.confidence});
    frames.push_back(std::move(joints));
  }
  json j;
  j["video_id"] = record.seq.source_id;
  j["label"] = record.label;
  j["frames"] = std::move(frames);
  return j.dump();
}

LabeledSequence from_json_line(std::string_view line) {
  json j;
  try {
    j = json::parse(line);
  } catch (const json::parse_error& e) {
    throw Error(ErrorKind::Parse, "invalid JSON at byte " + std::to_string(e.byte));
  }
  if (!j.is_object()) throw Error(ErrorKind::Parse, "record is not an object");
  LabeledSequence rec;
  try {
    rec.seq.source_id = j.at("video_id").get<std::string>();
    rec.label = j.at("label").get<std::string>();
    const json& frames = j.at("frames");
    if (!frames.is_array() || frames.size() != kNumFrames) {
      throw Error(ErrorKind::Parse, "\"frames\" must hold exactly 10 frames");
    }
    for (std::size_t f = 0; f < kNumFrames; ++f) {
      const json& joints = frames[f];
      if (!joints.is_array() || joints.size() != kNumJoints) {
        throw Error(ErrorKind::Parse, "frame " + std::to_string(f) + " must hold 17 joints");
      }
      for (std::size_t k = 0; k < kNumJoints; ++k) {
        const json& t = joints[k];
        if (!t.is_array() || t.size() != 3 || !t[0].is_number() || !t[1].is_number() ||
            !t[2].is_number()) {
          throw Error(ErrorKind::Parse, "frame " + std::to_string(f) + " joint " +
                                            std::to_string(k) + " must be [x, y, c]");
        }
        rec.seq.frames[f].joints[k] = {t[0].get<double>(), t[1].get<double>(), t[2].get<double>()};
      }
    }
  } catch (const json::exception& e) {
    throw Error(ErrorKind::Parse, e.what());
  }
  if (rec.label.empty()) throw Error(ErrorKind::Parse, "empty label");
  return rec;
}

void write_dataset(std::ostream& out, const std::vector<LabeledSequence>& records) {
  for (const LabeledSequence& r : records) out << to_json_line(r) << '\n';
}

void write_dataset(const std::filesystem::path& path, const std::vector<LabeledSequence>& records) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error(ErrorKind::Io, "cannot open " + path.string() + " for writing");
  write_dataset(out, records);
  if (!out) throw Error(ErrorKind::Io, "write failed: " + path.string());
}

std::vector<LabeledSequence> read_dataset(std::istream& in) {
  std::vector<LabeledSequence> out;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    try {
      out.push_back(from_json_line(line));
    } catch (const Error& e) {
      throw Error(ErrorKind::Parse, "line " + std::to_string(line_no) + ": " + e.message());
    }
  }
  return out;
}

std::vector<LabeledSequence> read_dataset(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorKind::Io, "cannot open " + path.string());
  return read_dataset(in);
}

}  // namespace harlm
