#include "harlm/model.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <optional>

#include "harlm/error.hpp"
#include "harlm/kernels.hpp"
#include "harlm/random.hpp"

namespace harlm {

using kernels::Trans;

void ModelConfig::validate() const {
  auto fail = [](const std::string& what) { throw Error(ErrorKind::InvalidArgument, what); };
  if (vocab_size == 0) fail("vocab_size must be positive");
  if (context_len == 0) fail("context_len must be positive");
  if (d_model == 0 || n_heads == 0 || n_layers == 0 || d_ff == 0) fail("model dimensions must be positive");
  if (d_model % n_heads != 0) fail("d_model must be divisible by n_heads");
  if (!(dropout_rate >= 0.0 && dropout_rate < 1.0)) fail("dropout_rate must be in [0, 1)");
}

void ModelConfig::validate_for_examples() const {
  validate();
  if (context_len < kMinContextForExamples) {
    throw Error(ErrorKind::InvalidArgument,
                "context_len must be at least " + std::to_string(kMinContextForExamples));
  }
}

ParamLayout::ParamLayout(const ModelConfig& cfg) : cfg_(cfg) {
  cfg.validate();
  const std::size_t d = cfg.d_model;
  tok_emb_ = add("tok_emb", cfg.vocab_size, d, 2, true);
  pos_emb_ = add("pos_emb", cfg.context_len, d, 2, true);
  for (std::size_t i = 0; i < cfg.n_layers; ++i) {
    const std::string p = "layer" + std::to_string(i) + ".";
    Layer l{};
    l.ln1_gain = add(p + "ln1.gain", d, 1, 1, false);
    l.ln1_bias = add(p + "ln1.bias", d, 1, 1, false);
    l.wq = add(p + "attn.wq", d, d, 2, true);
    l.wk = add(p + "attn.wk", d, d, 2, true);
    l.wv = add(p + "attn.wv", d, d, 2, true);
    l.wo = add(p + "attn.wo", d, d, 2, true);
    l.ln2_gain = add(p + "ln2.gain", d, 1, 1, false);
    l.ln2_bias = add(p + "ln2.bias", d, 1, 1, false);
    l.w1 = add(p + "mlp.w1", d, cfg.d_ff, 2, true);
    l.b1 = add(p + "mlp.b1", cfg.d_ff, 1, 1, false);
    l.w2 = add(p + "mlp.w2", cfg.d_ff, d, 2, true);
    l.b2 = add(p + "mlp.b2", d, 1, 1, false);
    layers_.push_back(l);
  }
  lnf_gain_ = add("ln_f.gain", d, 1, 1, false);
  lnf_bias_ = add("ln_f.bias", d, 1, 1, false);
}

std::size_t ParamLayout::add(std::string name, std::size_t rows, std::size_t cols, std::size_t rank,
                             bool decay) {
  const std::size_t offset = total_;
  tensors_.push_back({std::move(name), rows, cols, rank, offset, decay});
  total_ += rows * cols;
  return offset;
}

const TensorInfo& ParamLayout::find(const std::string& name) const {
  for (const TensorInfo& t : tensors_) {
    if (t.name == name) return t;
  }
  throw Error(ErrorKind::InvalidArgument, "no tensor named '" + name + "'");
}

template <typename T>
std::span<T> ModelParams<T>::tensor(const std::string& name) {
  const TensorInfo& t = layout->find(name);
  return {data.data() + t.offset, t.size()};
}

template <typename T>
std::span<const T> ModelParams<T>::tensor(const std::string& name) const {
  const TensorInfo& t = layout->find(name);
  return {data.data() + t.offset, t.size()};
}

template <typename T>
ModelParams<T> init_params(const ModelConfig& cfg, std::uint64_t seed) {
  ModelParams<T> p;
  p.layout = std::make_shared<const ParamLayout>(cfg);
  p.data.assign(p.layout->total(), T(0));
  Rng rng(seed);
  for (const TensorInfo& t : p.layout->tensors()) {
    T* dst = p.data.data() + t.offset;
    if (t.rank == 2) {
      for (std::size_t i = 0; i < t.size(); ++i) dst[i] = static_cast<T>(rng.normal(0.0, 0.02));
    } else if (t.name.ends_with(".gain")) {
      std::fill(dst, dst + t.size(), T(1));
    }
  }
  return p;
}

template <typename To, typename From>
ModelParams<To> convert_params(const ModelParams<From>& params) {
  ModelParams<To> out;
  out.layout = params.layout;
  out.data.assign(params.data.begin(), params.data.end());
  return out;
}

std::size_t Batch::target_count() const {
  return static_cast<std::size_t>(std::count_if(target.begin(), target.end(),
                                                [](std::uint8_t m) { return m != 0; }));
}

Batch make_batch(std::span<const TokenSeq> seqs, std::size_t context_len) {
  Batch b;
  b.n = seqs.size();
  b.context_len = context_len;
  b.ids.assign(b.n * context_len, tok::kPad);
  b.target.assign(b.n * context_len, 0);
  b.pad.assign(b.n * context_len, 1);
  for (std::size_t i = 0; i < seqs.size(); ++i) {
    const TokenSeq& s = seqs[i];
    if (s.ids.size() > context_len) {
      throw Error(ErrorKind::Shape, "sequence of " + std::to_string(s.ids.size()) +
                                        " tokens exceeds context_len " + std::to_string(context_len));
    }
    if (s.target_mask.size() != s.ids.size()) {
      throw Error(ErrorKind::Shape, "target_mask length differs from ids length");
    }
    for (std::size_t t = 0; t < s.ids.size(); ++t) {
      b.ids[i * context_len + t] = s.ids[t];
      b.target[i * context_len + t] = s.target_mask[t] ? 1 : 0;
      b.pad[i * context_len + t] = 0;
    }
  }
  return b;
}

namespace {

constexpr double kLnEps = 1e-5;
constexpr std::size_t kQueryBlock = 64;

void check_batch(const Batch& batch, const ModelConfig& cfg) {
  if (batch.context_len != cfg.context_len) {
    throw Error(ErrorKind::Shape, "batch context_len " + std::to_string(batch.context_len) +
                                      " != model context_len " + std::to_string(cfg.context_len));
  }
  const std::size_t cells = batch.n * batch.context_len;
  if (batch.ids.size() != cells || batch.target.size() != cells || batch.pad.size() != cells) {
    throw Error(ErrorKind::Shape, "batch arrays do not match n x context_len");
  }
  for (std::size_t i = 0; i < cells; ++i) {
    if (batch.ids[i] < 0 || static_cast<std::size_t>(batch.ids[i]) >= cfg.vocab_size) {
      throw Error(ErrorKind::TokenOutOfRange, "token id " + std::to_string(batch.ids[i]) +
                                                  " outside vocabulary of " +
                                                  std::to_string(cfg.vocab_size));
    }
    if (batch.target[i] != 0 && batch.pad[i] != 0) {
      throw Error(ErrorKind::Shape, "target position marked as padding");
    }
    if (batch.target[i] != 0 && i % batch.context_len == 0) {
      throw Error(ErrorKind::Shape, "position 0 cannot be a target");
    }
  }
}

template <typename T>
void layernorm_forward(const T* x, std::size_t rows, std::size_t d, const T* gain, const T* bias,
                       T* y, T* mean, T* rstd) {
  for (std::size_t r = 0; r < rows; ++r) {
    const T* xr = x + r * d;
    T* yr = y + r * d;
    double mu = 0.0;
    for (std::size_t i = 0; i < d; ++i) mu += xr[i];
    mu /= static_cast<double>(d);
    double var = 0.0;
    for (std::size_t i = 0; i < d; ++i) {
      const double c = xr[i] - mu;
      var += c * c;
    }
    var /= static_cast<double>(d);
    const T m = static_cast<T>(mu);
    const T rs = static_cast<T>(1.0 / std::sqrt(var + kLnEps));
    mean[r] = m;
    rstd[r] = rs;
    for (std::size_t i = 0; i < d; ++i) yr[i] = (xr[i] - m) * rs * gain[i] + bias[i];
  }
}

// dx += LN'(dy); dgain, dbias accumulate.
template <typename T>
void layernorm_backward(const T* x, std::size_t rows, std::size_t d, const T* gain, const T* mean,
                        const T* rstd, const T* dy, T* dx, T* dgain, T* dbias) {
  for (std::size_t r = 0; r < rows; ++r) {
    const T* xr = x + r * d;
    const T* dyr = dy + r * d;
    T* dxr = dx + r * d;
    const T m = mean[r];
    const T rs = rstd[r];
    T sum_dxhat = 0;
    T sum_dxhat_xhat = 0;
    for (std::size_t i = 0; i < d; ++i) {
      const T xhat = (xr[i] - m) * rs;
      const T dxhat = dyr[i] * gain[i];
      dgain[i] += dyr[i] * xhat;
      dbias[i] += dyr[i];
      sum_dxhat += dxhat;
      sum_dxhat_xhat += dxhat * xhat;
    }
    const T inv_d = T(1) / static_cast<T>(d);
    const T a = sum_dxhat * inv_d;
    const T b = sum_dxhat_xhat * inv_d;
    for (std::size_t i = 0; i < d; ++i) {
      const T xhat = (xr[i] - m) * rs;
      dxr[i] += rs * (dyr[i] * gain[i] - a - xhat * b);
    }
  }
}

template <typename T>
void add_bias(T* y, std::size_t rows, std::size_t cols, const T* bias) {
  for (std::size_t r = 0; r < rows; ++r) {
    T* yr = y + r * cols;
    for (std::size_t c = 0; c < cols; ++c) yr[c] += bias[c];
  }
}

template <typename T>
void col_sum_into(const T* x, std::size_t rows, std::size_t cols, T* out) {
  for (std::size_t r = 0; r < rows; ++r) {
    const T* xr = x + r * cols;
    for (std::size_t c = 0; c < cols; ++c) out[c] += xr[c];
  }
}

// Activations of one layer for one sequence. Input rows are positions
// kv_begin .. kv_begin + n_in - 1; queries are a subset of them.
template <typename T>
struct LayerCache {
  std::size_t n_in = 0;
  std::size_t kv_begin = 0;
  std::size_t kv_len = 0;
  std::vector<std::size_t> q_local;  // indices into x_in rows, ascending
  std::vector<T> k, v;               // capacity >= kv_len rows
  std::vector<T> x_in, ln1, ln1_mean, ln1_rstd;
  std::vector<T> q_in, q, probs, attn, x_mid, ln2, ln2_mean, ln2_rstd, h, g, x_out;
  std::vector<T> drop_attn, drop_mlp;

  std::size_t nq() const noexcept { return q_local.size(); }
  std::size_t q_pos(std::size_t r) const noexcept { return kv_begin + q_local[r]; }
};

template <typename T>
struct SequenceRun {
  std::vector<LayerCache<T>> layers;
  std::vector<T> hf, lnf_mean, lnf_rstd, logits;
};

struct KeyMask {
  const std::uint8_t* excluded = nullptr;  // length >= kv_len; null = all keys valid
  std::size_t first_excluded = std::numeric_limits<std::size_t>::max();
};

template <typename T>
void fill_dropout(std::vector<T>& mask, std::size_t n, double rate, Rng* rng) {
  if (rng == nullptr || rate <= 0.0) {
    mask.clear();
    return;
  }
  mask.resize(n);
  const T keep = static_cast<T>(1.0 / (1.0 - rate));
  for (std::size_t i = 0; i < n; ++i) mask[i] = rng->uniform() < rate ? T(0) : keep;
}

// Softmax over the valid keys of one score row (length `valid`).
template <typename T>
void masked_softmax_row(T* row, std::size_t valid, const KeyMask& mask, std::vector<T>& scratch) {
  if (mask.excluded == nullptr || mask.first_excluded >= valid) {
    kernels::softmax(row, valid);
    return;
  }
  scratch.clear();
  for (std::size_t j = 0; j < valid; ++j) {
    if (mask.excluded[j] == 0) scratch.push_back(row[j]);
  }
  if (scratch.empty()) {
    std::fill(row, row + valid, T(0));
    return;
  }
  kernels::softmax(scratch.data(), scratch.size());
  std::size_t s = 0;
  for (std::size_t j = 0; j < valid; ++j) row[j] = mask.excluded[j] == 0 ? scratch[s++] : T(0);
}

template <typename T>
void layer_forward(const T* w, const ParamLayout::Layer& off, const ModelConfig& cfg,
                   LayerCache<T>& c, const KeyMask& mask, Rng* dropout) {
  const std::size_t d = cfg.d_model;
  const std::size_t dh = cfg.head_dim();
  const std::size_t nq = c.nq();
  const std::size_t kv_len = c.kv_len;
  const T scale = static_cast<T>(1.0 / std::sqrt(static_cast<double>(dh)));

  c.ln1.resize(c.n_in * d);
  c.ln1_mean.resize(c.n_in);
  c.ln1_rstd.resize(c.n_in);
  layernorm_forward(c.x_in.data(), c.n_in, d, w + off.ln1_gain, w + off.ln1_bias, c.ln1.data(),
                    c.ln1_mean.data(), c.ln1_rstd.data());

  if (c.k.size() < kv_len * d) {
    c.k.resize(kv_len * d);
    c.v.resize(kv_len * d);
  }
  T* k_new = c.k.data() + c.kv_begin * d;
  T* v_new = c.v.data() + c.kv_begin * d;
  kernels::gemm(Trans::No, Trans::No, c.n_in, d, d, T(1), c.ln1.data(), d, w + off.wk, d, T(0), k_new, d);
  kernels::gemm(Trans::No, Trans::No, c.n_in, d, d, T(1), c.ln1.data(), d, w + off.wv, d, T(0), v_new, d);

  c.q_in.resize(nq * d);
  for (std::size_t r = 0; r < nq; ++r) {
    std::copy_n(c.ln1.data() + c.q_local[r] * d, d, c.q_in.data() + r * d);
  }
  c.q.resize(nq * d);
  kernels::gemm(Trans::No, Trans::No, nq, d, d, T(1), c.q_in.data(), d, w + off.wq, d, T(0), c.q.data(), d);

  c.probs.assign(cfg.n_heads * nq * kv_len, T(0));
  c.attn.resize(nq * d);
  std::vector<T> scratch;
  for (std::size_t h = 0; h < cfg.n_heads; ++h) {
    T* probs_h = c.probs.data() + h * nq * kv_len;
    for (std::size_t r0 = 0; r0 < nq; r0 += kQueryBlock) {
      const std::size_t rows = std::min(kQueryBlock, nq - r0);
      const std::size_t kmax = c.q_pos(r0 + rows - 1) + 1;
      T* s = probs_h + r0 * kv_len;
      kernels::gemm(Trans::No, Trans::Yes, rows, kmax, dh, scale, c.q.data() + r0 * d + h * dh, d,
                    c.k.data() + h * dh, d, T(0), s, kv_len);
      for (std::size_t r = 0; r < rows; ++r) {
        const std::size_t valid = c.q_pos(r0 + r) + 1;
        T* row = s + r * kv_len;
        masked_softmax_row(row, valid, mask, scratch);
        std::fill(row + valid, row + kmax, T(0));
      }
      kernels::gemm(Trans::No, Trans::No, rows, dh, kmax, T(1), s, kv_len, c.v.data() + h * dh, d,
                    T(0), c.attn.data() + r0 * d + h * dh, d);
    }
  }

  // x_mid = x_in[q] + dropout(attn Wo)
  c.x_mid.resize(nq * d);
  kernels::gemm(Trans::No, Trans::No, nq, d, d, T(1), c.attn.data(), d, w + off.wo, d, T(0),
                c.x_mid.data(), d);
  fill_dropout(c.drop_attn, nq * d, cfg.dropout_rate, dropout);
  for (std::size_t r = 0; r < nq; ++r) {
    const T* xr = c.x_in.data() + c.q_local[r] * d;
    T* mr = c.x_mid.data() + r * d;
    if (!c.drop_attn.empty()) {
      const T* dm = c.drop_attn.data() + r * d;
      for (std::size_t i = 0; i < d; ++i) mr[i] = xr[i] + mr[i] * dm[i];
    } else {
      for (std::size_t i = 0; i < d; ++i) mr[i] += xr[i];
    }
  }

  c.ln2.resize(nq * d);
  c.ln2_mean.resize(nq);
  c.ln2_rstd.resize(nq);
  layernorm_forward(c.x_mid.data(), nq, d, w + off.ln2_gain, w + off.ln2_bias, c.ln2.data(),
                    c.ln2_mean.data(), c.ln2_rstd.data());
  c.h.resize(nq * cfg.d_ff);
  c.g.resize(nq * cfg.d_ff);
  kernels::gemm(Trans::No, Trans::No, nq, cfg.d_ff, d, T(1), c.ln2.data(), d, w + off.w1, cfg.d_ff,
                T(0), c.h.data(), cfg.d_ff);
  add_bias(c.h.data(), nq, cfg.d_ff, w + off.b1);
  kernels::gelu(c.h.data(), c.g.data(), nq * cfg.d_ff);
  c.x_out.resize(nq * d);
  kernels::gemm(Trans::No, Trans::No, nq, d, cfg.d_ff, T(1), c.g.data(), cfg.d_ff, w + off.w2, d,
                T(0), c.x_out.data(), d);
  add_bias(c.x_out.data(), nq, d, w + off.b2);
  fill_dropout(c.drop_mlp, nq * d, cfg.dropout_rate, dropout);
  for (std::size_t i = 0; i < nq * d; ++i) {
    const T mlp = c.drop_mlp.empty() ? c.x_out[i] : c.x_out[i] * c.drop_mlp[i];
    c.x_out[i] = c.x_mid[i] + mlp;
  }
}

// Given d(x_out), writes d(x_in) and accumulates parameter gradients.
// Requires kv_begin == 0 (the whole prefix was computed in this pass).
template <typename T>
void layer_backward(const T* w, T* gw, const ParamLayout::Layer& off, const ModelConfig& cfg,
                    const LayerCache<T>& c, const T* dx_out, std::vector<T>& dx_in) {
  const std::size_t d = cfg.d_model;
  const std::size_t dh = cfg.head_dim();
  const std::size_t dff = cfg.d_ff;
  const std::size_t nq = c.nq();
  const std::size_t kv_len = c.kv_len;
  const T scale = static_cast<T>(1.0 / std::sqrt(static_cast<double>(dh)));

  dx_in.assign(c.n_in * d, T(0));

  // MLP branch.
  std::vector<T> dmlp(dx_out, dx_out + nq * d);
  if (!c.drop_mlp.empty()) {
    for (std::size_t i = 0; i < nq * d; ++i) dmlp[i] *= c.drop_mlp[i];
  }
  std::vector<T> dg(nq * dff);
  kernels::gemm(Trans::No, Trans::Yes, nq, dff, d, T(1), dmlp.data(), d, w + off.w2, d, T(0), dg.data(), dff);
  kernels::gemm(Trans::Yes, Trans::No, dff, d, nq, T(1), c.g.data(), dff, dmlp.data(), d, T(1), gw + off.w2, d);
  col_sum_into(dmlp.data(), nq, d, gw + off.b2);

  std::vector<T> dh_buf(nq * dff);
  kernels::gelu_backward(c.h.data(), dg.data(), dh_buf.data(), nq * dff);
  std::vector<T> dln2(nq * d);
  kernels::gemm(Trans::No, Trans::Yes, nq, d, dff, T(1), dh_buf.data(), dff, w + off.w1, dff, T(0), dln2.data(), d);
  kernels::gemm(Trans::Yes, Trans::No, d, dff, nq, T(1), c.ln2.data(), d, dh_buf.data(), dff, T(1), gw + off.w1, dff);
  col_sum_into(dh_buf.data(), nq, dff, gw + off.b1);

  std::vector<T> dmid(dx_out, dx_out + nq * d);
  layernorm_backward(c.x_mid.data(), nq, d, w + off.ln2_gain, c.ln2_mean.data(), c.ln2_rstd.data(),
                     dln2.data(), dmid.data(), gw + off.ln2_gain, gw + off.ln2_bias);

  // Residual into x_in.
  for (std::size_t r = 0; r < nq; ++r) {
    T* dst = dx_in.data() + c.q_local[r] * d;
    const T* src = dmid.data() + r * d;
    for (std::size_t i = 0; i < d; ++i) dst[i] += src[i];
  }

  // Attention branch.
  std::vector<T> dproj = dmid;
  if (!c.drop_attn.empty()) {
    for (std::size_t i = 0; i < nq * d; ++i) dproj[i] *= c.drop_attn[i];
  }
  std::vector<T> dattn(nq * d);
  kernels::gemm(Trans::No, Trans::Yes, nq, d, d, T(1), dproj.data(), d, w + off.wo, d, T(0), dattn.data(), d);
  kernels::gemm(Trans::Yes, Trans::No, d, d, nq, T(1), c.attn.data(), d, dproj.data(), d, T(1), gw + off.wo, d);

  std::vector<T> dq(nq * d, T(0));
  std::vector<T> dk(kv_len * d, T(0));
  std::vector<T> dv(kv_len * d, T(0));
  std::vector<T> ds(kQueryBlock * kv_len);
  for (std::size_t h = 0; h < cfg.n_heads; ++h) {
    const T* probs_h = c.probs.data() + h * nq * kv_len;
    for (std::size_t r0 = 0; r0 < nq; r0 += kQueryBlock) {
      const std::size_t rows = std::min(kQueryBlock, nq - r0);
      const std::size_t kmax = c.q_pos(r0 + rows - 1) + 1;
      const T* p = probs_h + r0 * kv_len;
      const T* dout = dattn.data() + r0 * d + h * dh;
      // dP = dO V^T
      kernels::gemm(Trans::No, Trans::Yes, rows, kmax, dh, T(1), dout, d, c.v.data() + h * dh, d,
                    T(0), ds.data(), kv_len);
      for (std::size_t r = 0; r < rows; ++r) {
        T* dsr = ds.data() + r * kv_len;
        const T* pr = p + r * kv_len;
        const T dotp = kernels::dot(dsr, pr, kmax);
        for (std::size_t j = 0; j < kmax; ++j) dsr[j] = pr[j] * (dsr[j] - dotp) * scale;
      }
      // dQ = dS K ; dK += dS^T Q ; dV += P^T dO
      kernels::gemm(Trans::No, Trans::No, rows, dh, kmax, T(1), ds.data(), kv_len, c.k.data() + h * dh,
                    d, T(0), dq.data() + r0 * d + h * dh, d);
      kernels::gemm(Trans::Yes, Trans::No, kmax, dh, rows, T(1), ds.data(), kv_len,
                    c.q.data() + r0 * d + h * dh, d, T(1), dk.data() + h * dh, d);
      kernels::gemm(Trans::Yes, Trans::No, kmax, dh, rows, T(1), p, kv_len, dout, d, T(1),
                    dv.data() + h * dh, d);
    }
  }

  std::vector<T> dln1(c.n_in * d, T(0));
  std::vector<T> dq_in(nq * d);
  kernels::gemm(Trans::Yes, Trans::No, d, d, nq, T(1), c.q_in.data(), d, dq.data(), d, T(1), gw + off.wq, d);
  kernels::gemm(Trans::No, Trans::Yes, nq, d, d, T(1), dq.data(), d, w + off.wq, d, T(0), dq_in.data(), d);
  for (std::size_t r = 0; r < nq; ++r) {
    T* dst = dln1.data() + c.q_local[r] * d;
    const T* src = dq_in.data() + r * d;
    for (std::size_t i = 0; i < d; ++i) dst[i] += src[i];
  }
  kernels::gemm(Trans::Yes, Trans::No, d, d, c.n_in, T(1), c.ln1.data(), d, dk.data(), d, T(1), gw + off.wk, d);
  kernels::gemm(Trans::Yes, Trans::No, d, d, c.n_in, T(1), c.ln1.data(), d, dv.data(), d, T(1), gw + off.wv, d);
  kernels::gemm(Trans::No, Trans::Yes, c.n_in, d, d, T(1), dk.data(), d, w + off.wk, d, T(1), dln1.data(), d);
  kernels::gemm(Trans::No, Trans::Yes, c.n_in, d, d, T(1), dv.data(), d, w + off.wv, d, T(1), dln1.data(), d);

  layernorm_backward(c.x_in.data(), c.n_in, d, w + off.ln1_gain, c.ln1_mean.data(), c.ln1_rstd.data(),
                     dln1.data(), dx_in.data(), gw + off.ln1_gain, gw + off.ln1_bias);
}

// Runs tokens [0, n) through the stack. The last layer only evaluates the
// query positions in `last_rows` (ascending); every other layer evaluates
// all positions. Returns final-layernormed hidden rows in run.hf.
template <typename T>
void run_sequence(const ModelParams<T>& params, std::span<const TokenId> ids,
                  std::span<const std::size_t> last_rows, const KeyMask& mask, SequenceRun<T>& run,
                  Rng* dropout) {
  const ModelConfig& cfg = params.config();
  const ParamLayout& layout = *params.layout;
  const std::size_t d = cfg.d_model;
  const std::size_t n = ids.size();
  const T* w = params.data.data();

  run.layers.resize(cfg.n_layers);
  for (std::size_t l = 0; l < cfg.n_layers; ++l) {
    LayerCache<T>& c = run.layers[l];
    c.n_in = n;
    c.kv_begin = 0;
    c.kv_len = n;
    if (l == 0) {
      c.x_in.resize(n * d);
      const T* tok = w + layout.tok_emb();
      const T* pos = w + layout.pos_emb();
      for (std::size_t t = 0; t < n; ++t) {
        const T* e = tok + static_cast<std::size_t>(ids[t]) * d;
        const T* p = pos + t * d;
        T* x = c.x_in.data() + t * d;
        for (std::size_t i = 0; i < d; ++i) x[i] = e[i] + p[i];
      }
    } else {
      c.x_in = run.layers[l - 1].x_out;
    }
    if (l + 1 == cfg.n_layers) {
      c.q_local.assign(last_rows.begin(), last_rows.end());
    } else {
      c.q_local.resize(n);
      for (std::size_t t = 0; t < n; ++t) c.q_local[t] = t;
    }
    layer_forward(w, layout.layer(l), cfg, c, mask, dropout);
  }

  const LayerCache<T>& last = run.layers.back();
  const std::size_t rows = last.nq();
  run.hf.resize(rows * d);
  run.lnf_mean.resize(rows);
  run.lnf_rstd.resize(rows);
  layernorm_forward(last.x_out.data(), rows, d, w + layout.lnf_gain(), w + layout.lnf_bias(),
                    run.hf.data(), run.lnf_mean.data(), run.lnf_rstd.data());
}

template <typename T>
void compute_logits(const ModelParams<T>& params, const SequenceRun<T>& run, std::size_t rows,
                    T* out) {
  const ModelConfig& cfg = params.config();
  kernels::gemm(Trans::No, Trans::Yes, rows, cfg.vocab_size, cfg.d_model, T(1), run.hf.data(),
                cfg.d_model, params.data.data() + params.layout->tok_emb(), cfg.d_model, T(0), out,
                cfg.vocab_size);
}

KeyMask key_mask_for(const Batch& batch, std::size_t b, std::size_t len) {
  KeyMask m;
  const std::uint8_t* pad = batch.pad.data() + b * batch.context_len;
  for (std::size_t t = 0; t < len; ++t) {
    if (pad[t] != 0) {
      m.excluded = pad;
      m.first_excluded = t;
      break;
    }
  }
  return m;
}

}  // namespace

template <typename T>
std::vector<T> forward(const ModelParams<T>& params, const Batch& batch) {
  const ModelConfig& cfg = params.config();
  check_batch(batch, cfg);
  const std::size_t len = batch.context_len;
  const std::size_t vocab = cfg.vocab_size;
  std::vector<T> logits(batch.n * len * vocab);
  std::vector<std::size_t> rows(len);
  for (std::size_t t = 0; t < len; ++t) rows[t] = t;
  SequenceRun<T> run;
  for (std::size_t b = 0; b < batch.n; ++b) {
    std::span<const TokenId> ids(batch.ids.data() + b * len, len);
    run_sequence(params, ids, rows, key_mask_for(batch, b, len), run, nullptr);
    compute_logits(params, run, len, logits.data() + b * len * vocab);
  }
  return logits;
}

template <typename T>
double loss(std::span<const T> logits, const Batch& batch, std::size_t vocab_size) {
  if (logits.size() != batch.n * batch.context_len * vocab_size) {
    throw Error(ErrorKind::Shape, "logits size does not match batch x vocab");
  }
  double total = 0.0;
  std::size_t count = 0;
  for (std::size_t b = 0; b < batch.n; ++b) {
    for (std::size_t t = 1; t < batch.context_len; ++t) {
      if (!batch.is_target(b, t)) continue;
      const T* row = logits.data() + (b * batch.context_len + t - 1) * vocab_size;
      double mx = row[0];
      for (std::size_t v = 1; v < vocab_size; ++v) mx = std::max(mx, static_cast<double>(row[v]));
      double sum = 0.0;
      for (std::size_t v = 0; v < vocab_size; ++v) sum += std::exp(static_cast<double>(row[v]) - mx);
      const auto target = static_cast<std::size_t>(batch.id(b, t));
      total += std::log(sum) + mx - static_cast<double>(row[target]);
      ++count;
    }
  }
  if (count == 0) throw Error(ErrorKind::NoTargets, "batch has no target positions");
  return total / static_cast<double>(count);
}

template <typename T>
LossAndGrad<T> loss_and_grad(const ModelParams<T>& params, const Batch& batch,
                             const TrainOptions& options) {
  const ModelConfig& cfg = params.config();
  check_batch(batch, cfg);
  const std::size_t total_targets = batch.target_count();
  if (total_targets == 0) throw Error(ErrorKind::NoTargets, "batch has no target positions");

  const ParamLayout& layout = *params.layout;
  const std::size_t d = cfg.d_model;
  const std::size_t vocab = cfg.vocab_size;
  const T* w = params.data.data();
  const T inv_total = static_cast<T>(1.0 / static_cast<double>(total_targets));

  LossAndGrad<T> out;
  out.grad.assign(params.size(), T(0));
  T* gw = out.grad.data();
  double loss_sum = 0.0;

  SequenceRun<T> run;
  std::vector<std::size_t> rows;
  std::vector<T> dlogits, dhf, dx, dx_prev;
  for (std::size_t b = 0; b < batch.n; ++b) {
    rows.clear();
    for (std::size_t t = 1; t < batch.context_len; ++t) {
      if (batch.is_target(b, t)) rows.push_back(t - 1);
    }
    if (rows.empty()) continue;
    const std::size_t len = rows.back() + 1;
    std::span<const TokenId> ids(batch.ids.data() + b * batch.context_len, len);

    std::optional<Rng> drop;
    if (cfg.dropout_rate > 0.0) drop.emplace(derive_seed(options.dropout_seed, {b}));
    run_sequence(params, ids, rows, key_mask_for(batch, b, len), run, drop ? &*drop : nullptr);

    const std::size_t nr = rows.size();
    run.logits.resize(nr * vocab);
    compute_logits(params, run, nr, run.logits.data());

    // Softmax cross-entropy; dlogits = (p - onehot) / total_targets.
    dlogits.resize(nr * vocab);
    for (std::size_t r = 0; r < nr; ++r) {
      const T* lr = run.logits.data() + r * vocab;
      T* dr = dlogits.data() + r * vocab;
      const auto target = static_cast<std::size_t>(batch.id(b, rows[r] + 1));
      double mx = lr[0];
      for (std::size_t v = 1; v < vocab; ++v) mx = std::max(mx, static_cast<double>(lr[v]));
      double sum = 0.0;
      for (std::size_t v = 0; v < vocab; ++v) sum += std::exp(static_cast<double>(lr[v]) - mx);
      const double log_z = std::log(sum) + mx;
      loss_sum += log_z - static_cast<double>(lr[target]);
      for (std::size_t v = 0; v < vocab; ++v) {
        dr[v] = static_cast<T>(std::exp(static_cast<double>(lr[v]) - log_z)) * inv_total;
      }
      dr[target] -= inv_total;
    }

    // logits = hf E^T
    dhf.resize(nr * d);
    kernels::gemm(Trans::No, Trans::No, nr, d, vocab, T(1), dlogits.data(), vocab,
                  w + layout.tok_emb(), d, T(0), dhf.data(), d);
    kernels::gemm(Trans::Yes, Trans::No, vocab, d, nr, T(1), dlogits.data(), vocab, run.hf.data(), d,
                  T(1), gw + layout.tok_emb(), d);

    const LayerCache<T>& last = run.layers.back();
    dx.assign(nr * d, T(0));
    layernorm_backward(last.x_out.data(), nr, d, w + layout.lnf_gain(), run.lnf_mean.data(),
                       run.lnf_rstd.data(), dhf.data(), dx.data(), gw + layout.lnf_gain(),
                       gw + layout.lnf_bias());

    for (std::size_t l = cfg.n_layers; l-- > 0;) {
      layer_backward(w, gw, layout.layer(l), cfg, run.layers[l], dx.data(), dx_prev);
      std::swap(dx, dx_prev);
    }

    T* gtok = gw + layout.tok_emb();
    T* gpos = gw + layout.pos_emb();
    for (std::size_t t = 0; t < len; ++t) {
      const T* src = dx.data() + t * d;
      T* te = gtok + static_cast<std::size_t>(ids[t]) * d;
      T* pe = gpos + t * d;
      for (std::size_t i = 0; i < d; ++i) {
        te[i] += src[i];
        pe[i] += src[i];
      }
    }
  }
  out.loss = loss_sum / static_cast<double>(total_targets);
  return out;
}

template <typename T>
NllSum target_nll(const ModelParams<T>& params, const Batch& batch) {
  const ModelConfig& cfg = params.config();
  check_batch(batch, cfg);
  const std::size_t vocab = cfg.vocab_size;
  NllSum out;
  SequenceRun<T> run;
  std::vector<std::size_t> rows;
  for (std::size_t b = 0; b < batch.n; ++b) {
    rows.clear();
    for (std::size_t t = 1; t < batch.context_len; ++t) {
      if (batch.is_target(b, t)) rows.push_back(t - 1);
    }
    if (rows.empty()) continue;
    const std::size_t len = rows.back() + 1;
    std::span<const TokenId> ids(batch.ids.data() + b * batch.context_len, len);
    run_sequence(params, ids, rows, key_mask_for(batch, b, len), run, nullptr);
    const std::size_t nr = rows.size();
    run.logits.resize(nr * vocab);
    compute_logits(params, run, nr, run.logits.data());
    for (std::size_t r = 0; r < nr; ++r) {
      const T* lr = run.logits.data() + r * vocab;
      const auto target = static_cast<std::size_t>(batch.id(b, rows[r] + 1));
      double mx = lr[0];
      for (std::size_t v = 1; v < vocab; ++v) mx = std::max(mx, static_cast<double>(lr[v]));
      double sum = 0.0;
      for (std::size_t v = 0; v < vocab; ++v) sum += std::exp(static_cast<double>(lr[v]) - mx);
      out.sum += std::log(sum) + mx - static_cast<double>(lr[target]);
    }
    out.count += nr;
  }
  return out;
}

template <typename T>
struct Decoder<T>::State {
  const ModelParams<T>* params = nullptr;
  SequenceRun<T> run;
  std::vector<T> logits;
  std::size_t length = 0;
};

template <typename T>
Decoder<T>::Decoder(const ModelParams<T>& params) : state_(std::make_unique<State>()) {
  state_->params = &params;
  state_->logits.resize(params.config().vocab_size);
}

template <typename T>
Decoder<T>::~Decoder() = default;
template <typename T>
Decoder<T>::Decoder(Decoder&&) noexcept = default;
template <typename T>
Decoder<T>& Decoder<T>::operator=(Decoder&&) noexcept = default;

template <typename T>
std::size_t Decoder<T>::length() const noexcept {
  return state_->length;
}

template <typename T>
std::span<const T> Decoder<T>::prefill(std::span<const TokenId> prompt) {
  const ModelParams<T>& params = *state_->params;
  const ModelConfig& cfg = params.config();
  if (prompt.empty()) throw Error(ErrorKind::Shape, "empty prompt");
  if (prompt.size() > cfg.context_len) throw Error(ErrorKind::Shape, "prompt exceeds context_len");
  for (TokenId id : prompt) {
    if (id < 0 || static_cast<std::size_t>(id) >= cfg.vocab_size) {
      throw Error(ErrorKind::TokenOutOfRange, "token id " + std::to_string(id));
    }
  }
  // Reserve the full context so later steps append in place.
  state_->run.layers.resize(cfg.n_layers);
  for (auto& c : state_->run.layers) {
    c.k.resize(cfg.context_len * cfg.d_model);
    c.v.resize(cfg.context_len * cfg.d_model);
  }
  const std::size_t last = prompt.size() - 1;
  run_sequence(params, prompt, std::span<const std::size_t>(&last, 1), KeyMask{}, state_->run, nullptr);
  compute_logits(params, state_->run, 1, state_->logits.data());
  state_->length = prompt.size();
  return state_->logits;
}

template <typename T>
std::span<const T> Decoder<T>::step(TokenId token) {
  const ModelParams<T>& params = *state_->params;
  const ModelConfig& cfg = params.config();
  const ParamLayout& layout = *params.layout;
  const std::size_t pos = state_->length;
  if (pos == 0) throw Error(ErrorKind::Shape, "step() before prefill()");
  if (pos >= cfg.context_len) throw Error(ErrorKind::Shape, "context window exhausted");
  if (token < 0 || static_cast<std::size_t>(token) >= cfg.vocab_size) {
    throw Error(ErrorKind::TokenOutOfRange, "token id " + std::to_string(token));
  }
  const std::size_t d = cfg.d_model;
  const T* w = params.data.data();
  SequenceRun<T>& run = state_->run;

  for (std::size_t l = 0; l < cfg.n_layers; ++l) {
    LayerCache<T>& c = run.layers[l];
    c.n_in = 1;
    c.kv_begin = pos;
    c.kv_len = pos + 1;
    c.q_local.assign(1, 0);
    if (l == 0) {
      c.x_in.resize(d);
      const T* e = w + layout.tok_emb() + static_cast<std::size_t>(token) * d;
      const T* p = w + layout.pos_emb() + pos * d;
      for (std::size_t i = 0; i < d; ++i) c.x_in[i] = e[i] + p[i];
    } else {
      c.x_in = run.layers[l - 1].x_out;
    }
    layer_forward(w, layout.layer(l), cfg, c, KeyMask{}, nullptr);
  }
  run.hf.resize(d);
  run.lnf_mean.resize(1);
  run.lnf_rstd.resize(1);
  layernorm_forward(run.layers.back().x_out.data(), 1, d, w + layout.lnf_gain(),
                    w + layout.lnf_bias(), run.hf.data(), run.lnf_mean.data(), run.lnf_rstd.data());
  compute_logits(params, run, 1, state_->logits.data());
  state_->length = pos + 1;
  return state_->logits;
}

#define HARLM_INSTANTIATE(T)                                                                  \
  template struct ModelParams<T>;                                                             \
  template ModelParams<T> init_params<T>(const ModelConfig&, std::uint64_t);                  \
  template std::vector<T> forward<T>(const ModelParams<T>&, const Batch&);                    \
  template double loss<T>(std::span<const T>, const Batch&, std::size_t);                     \
  template LossAndGrad<T> loss_and_grad<T>(const ModelParams<T>&, const Batch&, const TrainOptions&); \
  template NllSum target_nll<T>(const ModelParams<T>&, const Batch&);                          \
  template class Decoder<T>;

HARLM_INSTANTIATE(float)
HARLM_INSTANTIATE(double)
#undef HARLM_INSTANTIATE

template ModelParams<double> convert_params<double, float>(const ModelParams<float>&);
template ModelParams<float> convert_params<float, double>(const ModelParams<double>&);

}  // namespace harlm
