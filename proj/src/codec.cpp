#include "harlm/codec.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <set>
#include <sstream>

#include "harlm/dataset.hpp"
#include "harlm/error.hpp"

namespace harlm {

namespace {

constexpr double kDomainSlack = 1e-9;

const std::array<std::string, tok::kNumSpecials> kSpecialNames = {"[PAD]", "[BOS]", "[F]",
                                                                  "[GEN]", "[SEP]", "[MISS]"};

}  // namespace

Vocabulary::Vocabulary(std::size_t num_bins, std::vector<std::string> label_set)
    : bins_(num_bins) {
  if (num_bins == 0) throw Error(ErrorKind::InvalidArgument, "num_bins must be positive");
  std::set<std::string> labels;
  std::set<std::string> words;
  for (const std::string& raw : label_set) {
    const std::string label = canonicalize_label(raw);
    if (label.empty()) throw Error(ErrorKind::EmptyLabelSet, "empty label in label set");
    labels.insert(label);
    for (std::string& w : label_words(label)) words.insert(std::move(w));
  }
  if (labels.empty()) throw Error(ErrorKind::EmptyLabelSet, "label set is empty");
  labels_.assign(labels.begin(), labels.end());
  words_.assign(words.begin(), words.end());
  const auto first_word = static_cast<TokenId>(tok::kNumSpecials + 2 * bins_);
  for (std::size_t i = 0; i < words_.size(); ++i) {
    word_ids_.emplace(words_[i], first_word + static_cast<TokenId>(i));
  }
}

TokenId Vocabulary::x_token(std::size_t bin) const {
  if (bin >= bins_) throw Error(ErrorKind::Domain, "bin out of range");
  return static_cast<TokenId>(tok::kNumSpecials + bin);
}

TokenId Vocabulary::y_token(std::size_t bin) const {
  if (bin >= bins_) throw Error(ErrorKind::Domain, "bin out of range");
  return static_cast<TokenId>(tok::kNumSpecials + bins_ + bin);
}

bool Vocabulary::is_x_token(TokenId id) const noexcept {
  return id >= tok::kNumSpecials && static_cast<std::size_t>(id) < tok::kNumSpecials + bins_;
}

bool Vocabulary::is_y_token(TokenId id) const noexcept {
  return static_cast<std::size_t>(id) >= tok::kNumSpecials + bins_ &&
         static_cast<std::size_t>(id) < tok::kNumSpecials + 2 * bins_ && id >= 0;
}

std::size_t Vocabulary::bin_of(TokenId id) const {
  if (is_x_token(id)) return static_cast<std::size_t>(id) - tok::kNumSpecials;
  if (is_y_token(id)) return static_cast<std::size_t>(id) - tok::kNumSpecials - bins_;
  throw Error(ErrorKind::MalformedSequence, "token " + std::to_string(id) + " is not a bin token");
}

bool Vocabulary::is_word_token(TokenId id) const noexcept {
  return id >= 0 && static_cast<std::size_t>(id) >= tok::kNumSpecials + 2 * bins_ &&
         static_cast<std::size_t>(id) < size();
}

TokenId Vocabulary::word_token(std::string_view word) const {
  const auto it = word_ids_.find(word);
  if (it == word_ids_.end()) {
    throw Error(ErrorKind::UnknownLabelWord, "label word '" + std::string(word) + "' not in vocabulary");
  }
  return it->second;
}

bool Vocabulary::has_word(std::string_view word) const noexcept {
  return word_ids_.find(word) != word_ids_.end();
}

const std::string& Vocabulary::word_of(TokenId id) const {
  if (!is_word_token(id)) {
    throw Error(ErrorKind::MalformedSequence, "token " + std::to_string(id) + " is not a label word");
  }
  return words_[static_cast<std::size_t>(id) - tok::kNumSpecials - 2 * bins_];
}

bool Vocabulary::has_label(std::string_view label) const noexcept {
  return std::binary_search(labels_.begin(), labels_.end(), label);
}

std::vector<TokenId> Vocabulary::label_tokens(std::string_view label) const {
  std::vector<TokenId> out;
  for (const std::string& w : label_words(label)) out.push_back(word_token(w));
  return out;
}

std::string Vocabulary::token_text(TokenId id) const {
  if (id >= 0 && id < tok::kNumSpecials) return kSpecialNames[static_cast<std::size_t>(id)];
  if (is_x_token(id)) return "X_" + std::to_string(bin_of(id));
  if (is_y_token(id)) return "Y_" + std::to_string(bin_of(id));
  if (is_word_token(id)) return word_of(id);
  throw Error(ErrorKind::TokenOutOfRange, "token id " + std::to_string(id));
}

std::size_t quantize(double c, std::size_t bins) {
  if (bins == 0) throw Error(ErrorKind::Domain, "bins must be positive");
  if (!(c >= -kDomainSlack && c <= 1.0 + kDomainSlack)) {
    throw Error(ErrorKind::Domain, "coordinate outside [0,1]");
  }
  const double scaled = std::floor(std::clamp(c, 0.0, 1.0) * static_cast<double>(bins));
  return std::min(static_cast<std::size_t>(scaled), bins - 1);
}

double dequantize(std::size_t bin, std::size_t bins) {
  if (bin >= bins) throw Error(ErrorKind::Domain, "bin index out of range");
  return (static_cast<double>(bin) + 0.5) / static_cast<double>(bins);
}

Vocabulary build_vocab(const std::vector<std::string>& labels, std::size_t bins) {
  if (labels.empty()) throw Error(ErrorKind::EmptyLabelSet, "no labels given");
  return Vocabulary(bins, labels);
}

TokenSeq encode_example(const NormalizedSequence& seq, const std::string* label,
                        const Vocabulary& vocab) {
  std::vector<TokenId> label_ids;
  if (label != nullptr) {
    label_ids = vocab.label_tokens(*label);
    if (label_ids.empty()) throw Error(ErrorKind::UnknownLabelWord, "empty label");
  }

  TokenSeq out;
  out.ids.reserve(kPrefixLength + label_ids.size() + 1);
  out.ids.push_back(tok::kBos);
  const std::size_t bins = vocab.num_bins();
  for (std::size_t f = 0; f < kNumFrames; ++f) {
    out.ids.push_back(tok::kFrame);
    for (std::size_t j = 0; j < kNumJoints; ++j) {
      if (seq.missing[f][j]) {
        out.ids.push_back(tok::kMiss);
        out.ids.push_back(tok::kMiss);
      } else {
        out.ids.push_back(vocab.x_token(quantize(seq.coords[f][j][0], bins)));
        out.ids.push_back(vocab.y_token(quantize(seq.coords[f][j][1], bins)));
      }
    }
  }
  out.ids.push_back(tok::kGen);
  out.target_mask.assign(out.ids.size(), false);

  if (label != nullptr) {
    for (TokenId id : label_ids) out.ids.push_back(id);
    out.ids.push_back(tok::kSep);
    out.target_mask.resize(out.ids.size(), true);
  }
  return out;
}

TokenSeq encode_prefix(const NormalizedSequence& seq, const Vocabulary& vocab) {
  return encode_example(seq, nullptr, vocab);
}

TokenSeq encode_labeled(const NormalizedSequence& seq, std::string_view label,
                        const Vocabulary& vocab) {
  const std::string l(label);
  return encode_example(seq, &l, vocab);
}

std::string decode_label(const std::vector<TokenId>& ids, const Vocabulary& vocab) {
  const auto gen = std::find(ids.begin(), ids.end(), tok::kGen);
  if (gen == ids.end()) throw Error(ErrorKind::MalformedSequence, "no [GEN] token");
  std::string out;
  for (auto it = gen + 1; it != ids.end() && *it != tok::kSep; ++it) {
    if (!vocab.is_word_token(*it)) {
      throw Error(ErrorKind::MalformedSequence,
                  "non-label token " + std::to_string(*it) + " in label region");
    }
    if (!out.empty()) out.push_back(' ');
    out += vocab.word_of(*it);
  }
  if (out.empty()) throw Error(ErrorKind::MalformedSequence, "empty label after [GEN]");
  return out;
}

NormalizedSequence decode_pose(const std::vector<TokenId>& ids, const Vocabulary& vocab) {
  if (ids.size() < kPrefixLength) {
    throw Error(ErrorKind::MalformedSequence, "sequence shorter than the 352-token prefix");
  }
  auto expect = [&](std::size_t pos, TokenId want) {
    if (ids[pos] != want) {
      throw Error(ErrorKind::MalformedSequence, "position " + std::to_string(pos) + ": expected " +
                                                    vocab.token_text(want));
    }
  };
  NormalizedSequence out;
  const std::size_t bins = vocab.num_bins();
  std::size_t pos = 0;
  expect(pos++, tok::kBos);
  for (std::size_t f = 0; f < kNumFrames; ++f) {
    expect(pos++, tok::kFrame);
    for (std::size_t j = 0; j < kNumJoints; ++j) {
      const TokenId xt = ids[pos];
      const TokenId yt = ids[pos + 1];
      if (xt == tok::kMiss && yt == tok::kMiss) {
        out.missing[f][j] = true;
        out.coords[f][j] = {0.0, 0.0};
      } else if (vocab.is_x_token(xt) && vocab.is_y_token(yt)) {
        out.missing[f][j] = false;
        out.coords[f][j] = {dequantize(vocab.bin_of(xt), bins), dequantize(vocab.bin_of(yt), bins)};
      } else {
        throw Error(ErrorKind::MalformedSequence,
                    "position " + std::to_string(pos) + ": expected an (x, y) bin pair or [MISS] pair");
      }
      pos += 2;
    }
  }
  expect(pos, tok::kGen);
  return out;
}

void write_vocab(std::ostream& out, const Vocabulary& vocab) {
  out << "#bins=" << vocab.num_bins() << '\n';
  for (const std::string& label : vocab.labels()) out << "#label=" << label << '\n';
  for (std::size_t id = 0; id < vocab.size(); ++id) {
    out << vocab.token_text(static_cast<TokenId>(id)) << '\n';
  }
}

Vocabulary read_vocab(std::istream& in) {
  std::string line;
  if (!std::getline(in, line) || line.rfind("#bins=", 0) != 0) {
    throw Error(ErrorKind::Parse, "vocabulary file must start with #bins=B");
  }
  std::size_t bins = 0;
  try {
    bins = std::stoul(line.substr(6));
  } catch (const std::exception&) {
    throw Error(ErrorKind::Parse, "bad #bins header");
  }
  std::vector<std::string> labels;
  std::vector<std::string> tokens;
  while (std::getline(in, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.rfind("#label=", 0) == 0) {
      labels.push_back(line.substr(7));
    } else {
      tokens.push_back(line);
    }
  }
  Vocabulary vocab(bins, labels);
  if (tokens.size() != vocab.size()) {
    throw Error(ErrorKind::Parse, "vocabulary lists " + std::to_string(tokens.size()) +
                                      " tokens, layout implies " + std::to_string(vocab.size()));
  }
  for (std::size_t id = 0; id < tokens.size(); ++id) {
    if (tokens[id] != vocab.token_text(static_cast<TokenId>(id))) {
      throw Error(ErrorKind::Parse, "token " + std::to_string(id) + " is '" + tokens[id] +
                                        "', layout implies '" +
                                        vocab.token_text(static_cast<TokenId>(id)) + "'");
    }
  }
  return vocab;
}

void write_vocab(const std::filesystem::path& path, const Vocabulary& vocab) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error(ErrorKind::Io, "cannot open " + path.string());
  write_vocab(out, vocab);
}

Vocabulary read_vocab(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorKind::Io, "cannot open " + path.string());
  return read_vocab(in);
}

}  // namespace harlm
