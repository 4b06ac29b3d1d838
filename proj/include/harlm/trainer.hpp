#pragma once

#include <functional>
#include <string>
#include <vector>

#include "harlm/checkpoint.hpp"
#include "harlm/dataset.hpp"
#include "harlm/model.hpp"
#include "harlm/optim.hpp"

namespace harlm {

struct TrainHooks {
  // Called once per optimizer step, after any evaluation at that step.
  std::function<void(const TrainLogRow&)> on_step;
};

struct TrainOutcome {
  Checkpoint best;                  // highest validation Top-1 (earliest on ties)
  std::vector<TrainLogRow> log;     // one row per step
  std::size_t steps_run = 0;
  bool stopped_early = false;       // target_top1 reached before max_steps
};

// Log rows kept inside a checkpoint.
inline constexpr std::size_t kLogTailRows = 20;

// Builds the vocabulary from the training labels, initializes the model from
// train_cfg.seed, and runs AdamW with clipping and the warmup-cosine schedule.
// Validation loss and greedy Top-1 are computed every eval_every steps and at
// the last step. With max_steps == 0 the initial parameters are returned.
// A single-threaded run is bitwise reproducible for a fixed seed.
TrainOutcome train(const std::vector<LabeledSequence>& train_set,
                   const std::vector<LabeledSequence>& val_set, ModelConfig model_cfg,
                   const TrainConfig& train_cfg, const TrainHooks& hooks = {});

// Order in which training examples are visited during `epoch`.
std::vector<std::size_t> epoch_order(std::size_t n, std::uint64_t seed, std::size_t epoch);

// Mean validation cross-entropy over label and [SEP] targets.
double validation_loss(const ModelParams<float>& params, const std::vector<TokenSeq>& encoded);

// "step,lr,train_loss,val_loss,val_top1" with empty cells for steps without evaluation.
std::string train_log_header();
std::string train_log_line(const TrainLogRow& row);

}  // namespace harlm
