#pragma once

#include <cstddef>
#include <filesystem>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "harlm/codec.hpp"
#include "harlm/dataset.hpp"
#include "harlm/model.hpp"

namespace harlm {

enum class DecodeMode { Greedy, Constrained };

std::string decode_mode_name(DecodeMode mode);
DecodeMode parse_decode_mode(const std::string& name);

inline constexpr std::size_t kMaxLabelTokens = 8;

// Prefix tree over the word-token sequences of every label in the vocabulary.
class LabelTrie {
 public:
  struct Node {
    std::map<TokenId, std::size_t> children;
    bool terminal = false;  // a complete label ends here
  };

  explicit LabelTrie(const Vocabulary& vocab);

  static constexpr std::size_t kRoot = 0;
  const Node& node(std::size_t i) const { return nodes_.at(i); }
  std::optional<std::size_t> child(std::size_t node, TokenId token) const;
  std::size_t size() const noexcept { return nodes_.size(); }

 private:
  std::vector<Node> nodes_;
};

// Highest-scoring candidate; ties go to the lowest token id.
template <typename T>
TokenId argmax_token(std::span<const T> logits);

// Free-running argmax decode after a prefix ending in [GEN]. Returns the
// generated tokens up to (excluding) [SEP], at most max_tokens of them.
template <typename T>
std::vector<TokenId> greedy_decode(const ModelParams<T>& params, std::span<const TokenId> prefix,
                                   std::size_t max_tokens = kMaxLabelTokens);

// At every step only trie children of the current node (plus [SEP] once a
// complete label is reached) compete. Always returns a label from the trie.
template <typename T>
std::string constrained_decode(const ModelParams<T>& params, std::span<const TokenId> prefix,
                               const LabelTrie& trie, const Vocabulary& vocab);

// Maps greedy output to a label, or nullopt when it is not a known label.
std::optional<std::string> label_from_tokens(std::span<const TokenId> tokens, const Vocabulary& vocab);

// Fraction of exact matches. Throws LengthMismatch, EmptyEvaluation.
double top1_accuracy(const std::vector<std::string>& predicted, const std::vector<std::string>& gold);

inline constexpr const char* kInvalidPrediction = "invalid";

struct ClassCount {
  std::size_t correct = 0;
  std::size_t total = 0;
};

struct Metrics {
  DecodeMode mode = DecodeMode::Greedy;
  double top1 = 0.0;
  std::size_t correct = 0;
  std::size_t total = 0;
  std::size_t invalid = 0;
  std::vector<std::string> labels;                // confusion row order
  std::vector<std::string> columns;               // labels, plus "invalid" in greedy mode
  std::vector<std::vector<std::size_t>> confusion;  // [gold][predicted]
  std::map<std::string, ClassCount> per_class;
  std::vector<std::string> predictions;           // per example, "invalid" if unparseable
};

// Throws UnknownLabel for gold labels outside the vocabulary, EmptyEvaluation.
Metrics evaluate(const ModelParams<float>& params, const Vocabulary& vocab,
                 const std::vector<LabeledSequence>& data, DecodeMode mode);

// `confusion_csv` is recorded as given, normally relative to the JSON file.
std::string metrics_json(const Metrics& m, const std::string& confusion_csv_path);
std::string confusion_csv(const Metrics& m);

// Two-column "Models | Top-1 Accuracy" table.
std::string accuracy_table(const std::vector<std::pair<std::string, double>>& rows);

}  // namespace harlm
