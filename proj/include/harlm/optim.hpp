#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <vector>

#include "harlm/model.hpp"

namespace harlm {

struct TrainConfig {
  std::size_t batch_size = 32;
  std::size_t max_steps = 5000;
  double peak_lr = 3e-4;
  std::size_t warmup_steps = 100;
  double min_lr = 3e-5;
  double weight_decay = 0.01;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double clip_norm = 1.0;
  std::uint64_t seed = 42;
  std::size_t eval_every = 250;
  // Stop once validation Top-1 reaches this value at an evaluation; 0 disables.
  double target_top1 = 0.0;

  void validate() const;

  friend bool operator==(const TrainConfig&, const TrainConfig&) = default;
};

struct OptState {
  std::size_t step = 0;
  std::vector<float> m;
  std::vector<float> v;
};

// Linear warmup from 0 to peak_lr, cosine decay to min_lr at max_steps, then flat.
double lr_at(std::size_t step, const TrainConfig& cfg);

// Returns the global L2 norm before clipping. Throws NonFiniteGradient.
double clip_gradients(std::span<float> grads, double clip_norm);
double clip_gradients(std::span<double> grads, double clip_norm);

OptState init_opt_state(const ModelParams<float>& params);

// One AdamW step at learning rate `lr`; increments state.step. Decay is
// skipped for tensors whose layout entry has decay == false.
void adamw_step(ModelParams<float>& params, std::span<const float> grads, OptState& state,
                const TrainConfig& cfg, double lr);

}  // namespace harlm
