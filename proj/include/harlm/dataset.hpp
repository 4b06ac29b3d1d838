#pragma once

// Labeled sequences and the line-delimited JSON dataset file shared by the
// synthetic generator and the AlphaPose ingester.
//
// One record per line:
//   {"video_id": "...", "label": "...", "frames": [[[x, y, c] x 17] x 10]}

#include <filesystem>
#include <iosfwd>
#include <string>
#include <string_view>
#include <vector>

#include "harlm/skeleton.hpp"

namespace harlm {

struct LabeledSequence {
  PoseSequence seq;
  std::string label;

  friend bool operator==(const LabeledSequence&, const LabeledSequence&) = default;
};

// Lowercase, drop everything outside [a-z0-9 ], treat '_' and '-' as spaces,
// collapse whitespace runs, trim.
std::string canonicalize_label(std::string_view raw);

// Splits a canonical label into its words.
std::vector<std::string> label_words(std::string_view canonical);

std::string to_json_line(const LabeledSequence& record);
LabeledSequence from_json_line(std::string_view line);

void write_dataset(std::ostream& out, const std::vector<LabeledSequence>& records);
void write_dataset(const std::filesystem::path& path, const std::vector<LabeledSequence>& records);

// Throws Error(Parse) naming the 1-based line number on malformed records.
std::vector<LabeledSequence> read_dataset(std::istream& in);
std::vector<LabeledSequence> read_dataset(const std::filesystem::path& path);

}  // namespace harlm
