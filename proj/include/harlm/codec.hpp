#pragma once

// Token layout for keypoint sequences.
//
//   [PAD]=0 [BOS]=1 [F]=2 [GEN]=3 [SEP]=4 [MISS]=5
//   X bins 6 .. 6+B-1, Y bins 6+B .. 6+2B-1, label words 6+2B .. (sorted)
//
// An encoded example is
//   [BOS] ([F] (x y | [MISS] [MISS]) x 17) x 10 [GEN] word... [SEP]
// and the target mask covers everything after [GEN] through [SEP].

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <map>
#include <string>
#include <string_view>
#include <vector>

#include "harlm/skeleton.hpp"

namespace harlm {

using TokenId = std::int32_t;

namespace tok {
inline constexpr TokenId kPad = 0;
inline constexpr TokenId kBos = 1;
inline constexpr TokenId kFrame = 2;
inline constexpr TokenId kGen = 3;
inline constexpr TokenId kSep = 4;
inline constexpr TokenId kMiss = 5;
inline constexpr TokenId kNumSpecials = 6;
}  // namespace tok

inline constexpr std::size_t kDefaultBins = 64;
inline constexpr std::size_t kPrefixLength = 1 + kNumFrames * (1 + 2 * kNumJoints) + 1;  // 352

class Vocabulary {
 public:
  Vocabulary() = default;
  Vocabulary(std::size_t num_bins, std::vector<std::string> label_set);

  std::size_t num_bins() const noexcept { return bins_; }
  std::size_t size() const noexcept { return tok::kNumSpecials + 2 * bins_ + words_.size(); }

  const std::vector<std::string>& labels() const noexcept { return labels_; }
  const std::vector<std::string>& words() const noexcept { return words_; }

  TokenId x_token(std::size_t bin) const;
  TokenId y_token(std::size_t bin) const;
  bool is_x_token(TokenId id) const noexcept;
  bool is_y_token(TokenId id) const noexcept;
  std::size_t bin_of(TokenId id) const;

  bool is_word_token(TokenId id) const noexcept;
  TokenId word_token(std::string_view word) const;  // throws UnknownLabelWord
  bool has_word(std::string_view word) const noexcept;
  const std::string& word_of(TokenId id) const;

  bool has_label(std::string_view label) const noexcept;
  std::vector<TokenId> label_tokens(std::string_view label) const;

  std::string token_text(TokenId id) const;

  friend bool operator==(const Vocabulary& a, const Vocabulary& b) {
    return a.bins_ == b.bins_ && a.labels_ == b.labels_;
  }

 private:
  std::size_t bins_ = 0;
  std::vector<std::string> labels_;  // sorted, unique
  std::vector<std::string> words_;   // sorted, unique
  std::map<std::string, TokenId, std::less<>> word_ids_;
};

struct TokenSeq {
  std::vector<TokenId> ids;
  std::vector<bool> target_mask;
};

std::size_t quantize(double c, std::size_t bins);
double dequantize(std::size_t bin, std::size_t bins);

Vocabulary build_vocab(const std::vector<std::string>& labels, std::size_t bins = kDefaultBins);

TokenSeq encode_example(const NormalizedSequence& seq, const std::string* label,
                        const Vocabulary& vocab);
TokenSeq encode_prefix(const NormalizedSequence& seq, const Vocabulary& vocab);
TokenSeq encode_labeled(const NormalizedSequence& seq, std::string_view label,
                        const Vocabulary& vocab);

std::string decode_label(const std::vector<TokenId>& ids, const Vocabulary& vocab);
NormalizedSequence decode_pose(const std::vector<TokenId>& ids, const Vocabulary& vocab);

// `#bins=B` header, then one token per line; line index after the header is the id.
void write_vocab(std::ostream& out, const Vocabulary& vocab);
Vocabulary read_vocab(std::istream& in);
void write_vocab(const std::filesystem::path& path, const Vocabulary& vocab);
Vocabulary read_vocab(const std::filesystem::path& path);

}  // namespace harlm
