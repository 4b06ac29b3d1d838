#include "harlm/eval.hpp"

#include <algorithm>
#include <cstdio>
#include <sstream>

#include <json.hpp>

#include "harlm/error.hpp"

namespace harlm {

std::string decode_mode_name(DecodeMode mode) {
  return mode == DecodeMode::Greedy ? "greedy" : "constrained";
}

DecodeMode parse_decode_mode(const std::string& name) {
  if (name == "greedy") return DecodeMode::Greedy;
  if (name == "constrained") return DecodeMode::Constrained;
  throw Error(ErrorKind::InvalidArgument, "unknown decode mode '" + name + "'");
}

LabelTrie::LabelTrie(const Vocabulary& vocab) : nodes_(1) {
  for (const std::string& label : vocab.labels()) {
    std::size_t cur = kRoot;
    for (TokenId t : vocab.label_tokens(label)) {
      const auto it = nodes_[cur].children.find(t);
      if (it != nodes_[cur].children.end()) {
        cur = it->second;
      } else {
        nodes_.emplace_back();
        nodes_[cur].children.emplace(t, nodes_.size() - 1);
        cur = nodes_.size() - 1;
      }
    }
    nodes_[cur].terminal = true;
  }
}

std::optional<std::size_t> LabelTrie::child(std::size_t node, TokenId token) const {
  const auto& children = nodes_.at(node).children;
  const auto it = children.find(token);
  if (it == children.end()) return std::nullopt;
  return it->second;
}

template <typename T>
TokenId argmax_token(std::span<const T> logits) {
  if (logits.empty()) throw Error(ErrorKind::Shape, "empty logits");
  std::size_t best = 0;
  for (std::size_t i = 1; i < logits.size(); ++i) {
    if (logits[i] > logits[best]) best = i;
  }
  return static_cast<TokenId>(best);
}

namespace {

void check_prefix(std::span<const TokenId> prefix, const ModelConfig& cfg) {
  if (prefix.empty() || prefix.back() != tok::kGen) {
    throw Error(ErrorKind::InvalidArgument, "decode prefix must end with [GEN]");
  }
  if (prefix.size() > cfg.context_len) {
    throw Error(ErrorKind::Shape, "decode prefix longer than the context window");
  }
}

}  // namespace

template <typename T>
std::vector<TokenId> greedy_decode(const ModelParams<T>& params, std::span<const TokenId> prefix,
                                   std::size_t max_tokens) {
  const ModelConfig& cfg = params.config();
  check_prefix(prefix, cfg);
  Decoder<T> dec(params);
  std::span<const T> logits = dec.prefill(prefix);
  std::vector<TokenId> out;
  while (out.size() < max_tokens) {
    const TokenId next = argmax_token(logits);
    if (next == tok::kSep) break;
    out.push_back(next);
    if (out.size() == max_tokens || dec.length() >= cfg.context_len) break;
    logits = dec.step(next);
  }
  return out;
}

template <typename T>
std::string constrained_decode(const ModelParams<T>& params, std::span<const TokenId> prefix,
                               const LabelTrie& trie, const Vocabulary& vocab) {
  const ModelConfig& cfg = params.config();
  check_prefix(prefix, cfg);
  if (trie.node(LabelTrie::kRoot).children.empty()) {
    throw Error(ErrorKind::EmptyLabelSet, "label trie is empty");
  }
  Decoder<T> dec(params);
  std::span<const T> logits = dec.prefill(prefix);
  std::size_t node = LabelTrie::kRoot;
  std::vector<std::string> words;
  for (;;) {
    const LabelTrie::Node& n = trie.node(node);
    TokenId best = -1;
    auto consider = [&](TokenId t) {
      const auto i = static_cast<std::size_t>(t);
      if (best < 0 || logits[i] > logits[static_cast<std::size_t>(best)] ||
          (logits[i] == logits[static_cast<std::size_t>(best)] && t < best)) {
        best = t;
      }
    };
    if (n.terminal) consider(tok::kSep);
    for (const auto& [t, next] : n.children) consider(t);
    if (best == tok::kSep) break;
    words.push_back(vocab.word_of(best));
    node = n.children.at(best);
    if (dec.length() >= cfg.context_len) {
      // Out of context: finish along the lowest-id path to the nearest label end.
      while (!trie.node(node).terminal) {
        const auto& first = *trie.node(node).children.begin();
        words.push_back(vocab.word_of(first.first));
        node = first.second;
      }
      break;
    }
    logits = dec.step(best);
  }
  std::string label;
  for (const std::string& w : words) {
    if (!label.empty()) label += ' ';
    label += w;
  }
  return label;
}

std::optional<std::string> label_from_tokens(std::span<const TokenId> tokens, const Vocabulary& vocab) {
  if (tokens.empty()) return std::nullopt;
  std::string label;
  for (TokenId t : tokens) {
    if (!vocab.is_word_token(t)) return std::nullopt;
    if (!label.empty()) label += ' ';
    label += vocab.word_of(t);
  }
  if (!vocab.has_label(label)) return std::nullopt;
  return label;
}

double top1_accuracy(const std::vector<std::string>& predicted, const std::vector<std::string>& gold) {
  if (predicted.size() != gold.size()) {
    throw Error(ErrorKind::LengthMismatch, std::to_string(predicted.size()) + " predictions for " +
                                               std::to_string(gold.size()) + " gold labels");
  }
  if (gold.empty()) throw Error(ErrorKind::EmptyEvaluation, "nothing to evaluate");
  std::size_t hits = 0;
  for (std::size_t i = 0; i < gold.size(); ++i) hits += predicted[i] == gold[i] ? 1 : 0;
  return static_cast<double>(hits) / static_cast<double>(gold.size());
}

Metrics evaluate(const ModelParams<float>& params, const Vocabulary& vocab,
                 const std::vector<LabeledSequence>& data, DecodeMode mode) {
  if (data.empty()) throw Error(ErrorKind::EmptyEvaluation, "evaluation set is empty");
  for (const LabeledSequence& ex : data) {
    if (!vocab.has_label(ex.label)) {
      throw Error(ErrorKind::UnknownLabel, "gold label '" + ex.label + "' (" + ex.seq.source_id +
                                               ") is not in the vocabulary");
    }
  }

  Metrics m;
  m.mode = mode;
  m.labels = vocab.labels();
  m.columns = m.labels;
  if (mode == DecodeMode::Greedy) m.columns.push_back(kInvalidPrediction);
  m.confusion.assign(m.labels.size(), std::vector<std::size_t>(m.columns.size(), 0));
  for (const std::string& l : m.labels) m.per_class[l] = {};

  auto index_of = [](const std::vector<std::string>& v, const std::string& s) {
    return static_cast<std::size_t>(std::lower_bound(v.begin(), v.end(), s) - v.begin());
  };

  const LabelTrie trie(vocab);
  std::vector<std::string> gold;
  for (const LabeledSequence& ex : data) {
    const TokenSeq prefix = encode_prefix(normalize_sequence(ex.seq), vocab);
    std::optional<std::string> pred;
    if (mode == DecodeMode::Greedy) {
      pred = label_from_tokens(greedy_decode(params, std::span<const TokenId>(prefix.ids)), vocab);
    } else {
      pred = constrained_decode(params, std::span<const TokenId>(prefix.ids), trie, vocab);
    }
    const std::size_t row = index_of(m.labels, ex.label);
    const std::size_t col = pred ? index_of(m.labels, *pred) : m.labels.size();
    m.confusion[row][col] += 1;
    if (!pred) m.invalid += 1;
    ClassCount& cc = m.per_class[ex.label];
    cc.total += 1;
    if (pred == ex.label) cc.correct += 1;
    m.predictions.push_back(pred.value_or(kInvalidPrediction));
    gold.push_back(ex.label);
  }
  m.total = gold.size();
  for (const auto& [label, cc] : m.per_class) m.correct += cc.correct;
  m.top1 = static_cast<double>(m.correct) / static_cast<double>(m.total);
  return m;
}

std::string metrics_json(const Metrics& m, const std::string& confusion_csv_path) {
  nlohmann::ordered_json j;
  j["mode"] = decode_mode_name(m.mode);
  j["top1"] = m.top1;
  j["correct"] = m.correct;
  j["total"] = m.total;
  j["invalid"] = m.invalid;
  nlohmann::ordered_json per = nlohmann::ordered_json::object();
  for (const auto& [label, cc] : m.per_class) {
    per[label] = {{"correct", cc.correct},
                  {"total", cc.total},
                  {"top1", cc.total ? static_cast<double>(cc.correct) / static_cast<double>(cc.total) : 0.0}};
  }
  j["per_class"] = per;
  j["labels"] = m.labels;
  j["columns"] = m.columns;
  j["confusion"] = m.confusion;
  j["confusion_csv"] = confusion_csv_path;
  return j.dump(2) + "\n";
}

std::string confusion_csv(const Metrics& m) {
  std::ostringstream out;
  out << "gold";
  for (const std::string& c : m.columns) out << ',' << c;
  out << '\n';
  for (std::size_t r = 0; r < m.labels.size(); ++r) {
    out << m.labels[r];
    for (std::size_t v : m.confusion[r]) out << ',' << v;
    out << '\n';
  }
  return out.str();
}

std::string accuracy_table(const std::vector<std::pair<std::string, double>>& rows) {
  const std::string h1 = "Models", h2 = "Top-1 Accuracy";
  std::size_t w = h1.size();
  for (const auto& [name, acc] : rows) w = std::max(w, name.size());
  std::ostringstream out;
  auto line = [&](const std::string& a, const std::string& b) {
    out << "| " << a << std::string(w - a.size(), ' ') << " | " << b
        << std::string(h2.size() > b.size() ? h2.size() - b.size() : 0, ' ') << " |\n";
  };
  line(h1, h2);
  out << "|" << std::string(w + 2, '-') << "|" << std::string(h2.size() + 2, '-') << "|\n";
  for (const auto& [name, acc] : rows) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.4f", acc);
    line(name, buf);
  }
  return out.str();
}

template TokenId argmax_token<float>(std::span<const float>);
template TokenId argmax_token<double>(std::span<const double>);
template std::vector<TokenId> greedy_decode<float>(const ModelParams<float>&, std::span<const TokenId>,
                                                   std::size_t);
template std::vector<TokenId> greedy_decode<double>(const ModelParams<double>&, std::span<const TokenId>,
                                                    std::size_t);
template std::string constrained_decode<float>(const ModelParams<float>&, std::span<const TokenId>,
                                               const LabelTrie&, const Vocabulary&);
template std::string constrained_decode<double>(const ModelParams<double>&, std::span<const TokenId>,
                                                const LabelTrie&, const Vocabulary&);

}  // namespace harlm
