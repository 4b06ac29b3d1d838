#pragma once

// Pre-norm decoder-only transformer with learned positions, GELU MLPs and an
// output projection tied to the token embedding.
//
//   x = tok_emb[id] + pos_emb[t]
//   per layer:  x += Attn(LN1(x)) Wo ;  x += GELU(LN2(x) W1 + b1) W2 + b2
//   logits = LN_f(x) tok_emb^T
//
// All parameters live in one flat buffer described by ParamLayout, which is
// what the optimizer and checkpoint code iterate over.

#include <cstddef>
#include <cstdint>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include "harlm/codec.hpp"

namespace harlm {

struct ModelConfig {
  std::size_t vocab_size = 0;
  std::size_t context_len = 384;
  std::size_t d_model = 128;
  std::size_t n_heads = 4;
  std::size_t n_layers = 4;
  std::size_t d_ff = 512;
  double dropout_rate = 0.0;

  // Throws Error(InvalidArgument). The 354-token floor only applies to
  // models meant for encoded examples, so it is checked separately.
  void validate() const;
  void validate_for_examples() const;
  std::size_t head_dim() const noexcept { return d_model / n_heads; }

  friend bool operator==(const ModelConfig&, const ModelConfig&) = default;
};

// Longest encoded training example the default codec produces for one-word labels.
inline constexpr std::size_t kMinContextForExamples = kPrefixLength + 2;

struct TensorInfo {
  std::string name;
  std::size_t rows = 0;
  std::size_t cols = 0;   // 1 for vectors
  std::size_t rank = 2;   // 1 for gains and biases
  std::size_t offset = 0;
  bool decay = false;     // weight decay applies (matrices and embeddings)

  std::size_t size() const noexcept { return rows * cols; }
};

class ParamLayout {
 public:
  struct Layer {
    std::size_t ln1_gain, ln1_bias, wq, wk, wv, wo, ln2_gain, ln2_bias, w1, b1, w2, b2;
  };

  explicit ParamLayout(const ModelConfig& cfg);

  const ModelConfig& config() const noexcept { return cfg_; }
  const std::vector<TensorInfo>& tensors() const noexcept { return tensors_; }
  const TensorInfo& find(const std::string& name) const;
  std::size_t total() const noexcept { return total_; }

  std::size_t tok_emb() const noexcept { return tok_emb_; }
  std::size_t pos_emb() const noexcept { return pos_emb_; }
  const Layer& layer(std::size_t i) const { return layers_.at(i); }
  std::size_t lnf_gain() const noexcept { return lnf_gain_; }
  std::size_t lnf_bias() const noexcept { return lnf_bias_; }

 private:
  std::size_t add(std::string name, std::size_t rows, std::size_t cols, std::size_t rank, bool decay);

  ModelConfig cfg_;
  std::vector<TensorInfo> tensors_;
  std::vector<Layer> layers_;
  std::size_t tok_emb_ = 0, pos_emb_ = 0, lnf_gain_ = 0, lnf_bias_ = 0;
  std::size_t total_ = 0;
};

template <typename T>
struct ModelParams {
  std::shared_ptr<const ParamLayout> layout;
  std::vector<T> data;

  const ModelConfig& config() const { return layout->config(); }
  std::span<T> tensor(const std::string& name);
  std::span<const T> tensor(const std::string& name) const;
  std::size_t size() const noexcept { return data.size(); }
};

// Embeddings and projections ~ Normal(0, 0.02^2) drawn from std::mt19937_64
// seeded with `seed` (Box-Muller, see Rng), in layout order; biases 0;
// layernorm gains 1.
template <typename T>
ModelParams<T> init_params(const ModelConfig& cfg, std::uint64_t seed);

template <typename To, typename From>
ModelParams<To> convert_params(const ModelParams<From>& params);

struct Batch {
  std::size_t n = 0;
  std::size_t context_len = 0;
  std::vector<TokenId> ids;            // n x context_len, [PAD]-filled on the right
  std::vector<std::uint8_t> target;    // n x context_len
  std::vector<std::uint8_t> pad;       // n x context_len

  TokenId id(std::size_t b, std::size_t t) const { return ids[b * context_len + t]; }
  bool is_target(std::size_t b, std::size_t t) const { return target[b * context_len + t] != 0; }
  bool is_pad(std::size_t b, std::size_t t) const { return pad[b * context_len + t] != 0; }
  std::size_t target_count() const;
};

Batch make_batch(std::span<const TokenSeq> seqs, std::size_t context_len);

// n x context_len x V logits. Pad keys are excluded from attention.
template <typename T>
std::vector<T> forward(const ModelParams<T>& params, const Batch& batch);

// Mean cross-entropy of logits[t-1] against ids[t] over target positions t.
template <typename T>
double loss(std::span<const T> logits, const Batch& batch, std::size_t vocab_size);

template <typename T>
struct LossAndGrad {
  double loss = 0.0;
  std::vector<T> grad;  // same layout as ModelParams::data
};

struct TrainOptions {
  std::uint64_t dropout_seed = 0;  // only used when dropout_rate > 0
};

// Only the rows feeding target predictions are computed past the key/value
// projections of the last layer; positions after the last target are never
// touched, so their gradients are exactly zero.
template <typename T>
LossAndGrad<T> loss_and_grad(const ModelParams<T>& params, const Batch& batch,
                             const TrainOptions& options = {});

struct NllSum {
  double sum = 0.0;
  std::size_t count = 0;
};

// Forward-only summed cross-entropy over target positions.
template <typename T>
NllSum target_nll(const ModelParams<T>& params, const Batch& batch);

// Incremental decoding with a key/value cache.
template <typename T>
class Decoder {
 public:
  explicit Decoder(const ModelParams<T>& params);
  ~Decoder();
  Decoder(Decoder&&) noexcept;
  Decoder& operator=(Decoder&&) noexcept;

  // Runs the prompt and returns next-token logits after its last token.
  std::span<const T> prefill(std::span<const TokenId> prompt);
  // Appends one token and returns the next-token logits.
  std::span<const T> step(TokenId token);
  std::size_t length() const noexcept;

 private:
  struct State;
  std::unique_ptr<State> state_;
};

}  // namespace harlm
