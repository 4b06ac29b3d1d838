#include "harlm/trainer.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <numeric>

#include "harlm/error.hpp"
#include "harlm/eval.hpp"
#include "harlm/random.hpp"

namespace harlm {

namespace {

constexpr std::uint64_t kShuffleStream = 0x5348;
constexpr std::uint64_t kDropoutStream = 0x4452;
constexpr std::size_t kEvalChunk = 16;

std::vector<TokenSeq> encode_all(const std::vector<LabeledSequence>& data, const Vocabulary& vocab) {
  std::vector<TokenSeq> out;
  out.reserve(data.size());
  for (const LabeledSequence& ex : data) {
    out.push_back(encode_labeled(normalize_sequence(ex.seq), ex.label, vocab));
  }
  return out;
}

}  // namespace

std::vector<std::size_t> epoch_order(std::size_t n, std::uint64_t seed, std::size_t epoch) {
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});
  Rng rng(derive_seed(seed, {kShuffleStream, epoch}));
  for (std::size_t i = n; i > 1; --i) {
    const std::size_t j = static_cast<std::size_t>(rng.below(i));
    std::swap(order[i - 1], order[j]);
  }
  return order;
}

double validation_loss(const ModelParams<float>& params, const std::vector<TokenSeq>& encoded) {
  NllSum total;
  const std::size_t ctx = params.config().context_len;
  for (std::size_t i = 0; i < encoded.size(); i += kEvalChunk) {
    const std::size_t n = std::min(kEvalChunk, encoded.size() - i);
    const Batch batch = make_batch(std::span<const TokenSeq>(encoded.data() + i, n), ctx);
    const NllSum part = target_nll(params, batch);
    total.sum += part.sum;
    total.count += part.count;
  }
  if (total.count == 0) throw Error(ErrorKind::NoTargets, "validation set has no targets");
  return total.sum / static_cast<double>(total.count);
}

TrainOutcome train(const std::vector<LabeledSequence>& train_set,
                   const std::vector<LabeledSequence>& val_set, ModelConfig model_cfg,
                   const TrainConfig& cfg, const TrainHooks& hooks) {
  cfg.validate();
  if (train_set.empty()) throw Error(ErrorKind::InvalidArgument, "training set is empty");

  std::vector<std::string> labels;
  for (const LabeledSequence& ex : train_set) labels.push_back(ex.label);
  const Vocabulary vocab = build_vocab(labels);
  model_cfg.vocab_size = vocab.size();
  model_cfg.validate();
  model_cfg.validate_for_examples();
  for (const LabeledSequence& ex : val_set) {
    if (!vocab.has_label(ex.label)) {
      throw Error(ErrorKind::UnknownLabel, "validation label '" + ex.label + "' never occurs in training");
    }
  }

  const std::vector<TokenSeq> train_enc = encode_all(train_set, vocab);
  const std::vector<TokenSeq> val_enc = encode_all(val_set, vocab);

  ModelParams<float> params = init_params<float>(model_cfg, cfg.seed);
  OptState opt = init_opt_state(params);

  TrainOutcome out;
  auto snapshot = [&](std::size_t step, double top1) {
    Checkpoint& c = out.best;
    c.model = model_cfg;
    c.train = cfg;
    c.vocab = vocab;
    c.params = params;
    c.opt = opt;
    c.step = step;
    c.val_top1 = top1;
    const std::size_t keep = std::min(kLogTailRows, out.log.size());
    c.log_tail.assign(out.log.end() - static_cast<std::ptrdiff_t>(keep), out.log.end());
  };

  auto val_top1 = [&]() {
    return evaluate(params, vocab, val_set, DecodeMode::Greedy).top1;
  };

  if (cfg.max_steps == 0) {
    snapshot(0, val_set.empty() ? 0.0 : val_top1());
    return out;
  }

  double best_top1 = -1.0;
  const std::size_t n = train_enc.size();
  std::size_t cursor = 0;
  std::size_t epoch = 0;
  std::vector<std::size_t> order = epoch_order(n, cfg.seed, epoch);
  std::vector<TokenSeq> batch_seqs;

  for (std::size_t step = 1; step <= cfg.max_steps; ++step) {
    batch_seqs.clear();
    while (batch_seqs.size() < cfg.batch_size) {
      if (cursor == n) {
        cursor = 0;
        order = epoch_order(n, cfg.seed, ++epoch);
      }
      batch_seqs.push_back(train_enc[order[cursor++]]);
    }
    const Batch batch = make_batch(batch_seqs, model_cfg.context_len);
    TrainOptions topts;
    topts.dropout_seed = derive_seed(cfg.seed, {kDropoutStream, step});
    LossAndGrad<float> lg = loss_and_grad(params, batch, topts);
    if (!std::isfinite(lg.loss)) throw Error(ErrorKind::NonFiniteGradient, "training loss is not finite");
    clip_gradients(std::span<float>(lg.grad), cfg.clip_norm);
    const double lr = lr_at(step, cfg);
    adamw_step(params, lg.grad, opt, cfg, lr);

    TrainLogRow row;
    row.step = step;
    row.lr = lr;
    row.train_loss = lg.loss;
    const bool eval_now = step % cfg.eval_every == 0 || step == cfg.max_steps;
    if (eval_now && !val_set.empty()) {
      row.val_loss = validation_loss(params, val_enc);
      row.val_top1 = val_top1();
    }
    out.log.push_back(row);
    out.steps_run = step;
    if (hooks.on_step) hooks.on_step(row);

    if (row.val_top1 && *row.val_top1 > best_top1) {
      best_top1 = *row.val_top1;
      snapshot(step, best_top1);
    }
    if (row.val_top1 && cfg.target_top1 > 0.0 && *row.val_top1 >= cfg.target_top1) {
      out.stopped_early = step < cfg.max_steps;
      break;
    }
  }
  if (val_set.empty()) snapshot(out.steps_run, 0.0);
  return out;
}

std::string train_log_header() { return "step,lr,train_loss,val_loss,val_top1"; }

std::string train_log_line(const TrainLogRow& row) {
  char buf[160];
  std::snprintf(buf, sizeof buf, "%zu,%.9g,%.9g,", row.step, row.lr, row.train_loss);
  std::string line = buf;
  if (row.val_loss) {
    std::snprintf(buf, sizeof buf, "%.9g", *row.val_loss);
    line += buf;
  }
  line += ',';
  if (row.val_top1) {
    std::snprintf(buf, sizeof buf, "%.17g", *row.val_top1);
    line += buf;
  }
  return line;
}

}  // namespace harlm
