#include "harlm/optim.hpp"

#include <cmath>
#include <numbers>

#include "harlm/error.hpp"
#include "harlm/kernels.hpp"

namespace harlm {

void TrainConfig::validate() const {
  auto fail = [](const std::string& what) { throw Error(ErrorKind::InvalidArgument, what); };
  if (batch_size == 0) fail("batch_size must be positive");
  if (max_steps > 0 && warmup_steps >= max_steps) fail("warmup_steps must be < max_steps");
  if (!(min_lr > 0.0 && min_lr <= peak_lr)) fail("need 0 < min_lr <= peak_lr");
  if (weight_decay < 0.0) fail("weight_decay must be >= 0");
  if (!(beta1 >= 0.0 && beta1 < 1.0 && beta2 >= 0.0 && beta2 < 1.0)) fail("betas must be in [0, 1)");
  if (!(eps > 0.0)) fail("eps must be positive");
  if (!(clip_norm > 0.0)) fail("clip_norm must be positive");
  if (eval_every == 0) fail("eval_every must be positive");
  if (target_top1 < 0.0 || target_top1 > 1.0) fail("target_top1 must be in [0, 1]");
}

double lr_at(std::size_t step, const TrainConfig& cfg) {
  if (step < cfg.warmup_steps) {
    return cfg.peak_lr * static_cast<double>(step) / static_cast<double>(cfg.warmup_steps);
  }
  if (step >= cfg.max_steps) return cfg.min_lr;
  const double span = static_cast<double>(cfg.max_steps - cfg.warmup_steps);
  const double progress = static_cast<double>(step - cfg.warmup_steps) / span;
  return cfg.min_lr + 0.5 * (cfg.peak_lr - cfg.min_lr) * (1.0 + std::cos(std::numbers::pi * progress));
}

namespace {

template <typename T>
double clip_impl(std::span<T> grads, double clip_norm) {
  const double sq = kernels::sum_squares(grads.data(), grads.size());
  if (!std::isfinite(sq)) throw Error(ErrorKind::NonFiniteGradient, "gradient norm is not finite");
  const double norm = std::sqrt(sq);
  if (norm > clip_norm) {
    const T scale = static_cast<T>(clip_norm / norm);
    for (T& g : grads) g *= scale;
  }
  return norm;
}

}  // namespace

double clip_gradients(std::span<float> grads, double clip_norm) { return clip_impl(grads, clip_norm); }
double clip_gradients(std::span<double> grads, double clip_norm) { return clip_impl(grads, clip_norm); }

OptState init_opt_state(const ModelParams<float>& params) {
  OptState s;
  s.m.assign(params.size(), 0.0f);
  s.v.assign(params.size(), 0.0f);
  return s;
}

void adamw_step(ModelParams<float>& params, std::span<const float> grads, OptState& state,
                const TrainConfig& cfg, double lr) {
  if (grads.size() != params.size() || state.m.size() != params.size() ||
      state.v.size() != params.size()) {
    throw Error(ErrorKind::Shape, "optimizer state does not match parameter count");
  }
  state.step += 1;
  const auto t = static_cast<double>(state.step);
  kernels::ref::AdamWStep s;
  s.lr = lr;
  s.beta1 = cfg.beta1;
  s.beta2 = cfg.beta2;
  s.eps = cfg.eps;
  s.bias_correction1 = 1.0 - std::pow(cfg.beta1, t);
  s.bias_correction2 = 1.0 - std::pow(cfg.beta2, t);
  for (const TensorInfo& info : params.layout->tensors()) {
    s.weight_decay = info.decay ? cfg.weight_decay : 0.0;
    kernels::adamw(params.data.data() + info.offset, grads.data() + info.offset,
                   state.m.data() + info.offset, state.v.data() + info.offset, info.size(), s);
  }
  for (float p : params.data) {
    if (!std::isfinite(p)) throw Error(ErrorKind::NonFiniteUpdate, "parameter became non-finite");
  }
}

}  // namespace harlm
