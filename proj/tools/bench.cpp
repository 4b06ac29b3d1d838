// Times training steps and greedy decoding at a given model size.
#include <chrono>
#include <cstdio>

#include <CLI11.hpp>

#include "harlm/kernels.hpp"
#include "harlm/synth.hpp"
#include "harlm/trainer.hpp"

using namespace harlm;

int main(int argc, char** argv) {
  CLI::App app{"harlm-bench: training step timing"};
  std::size_t steps = 3, batch = 32, layers = 4, d_model = 128, d_ff = 512;
  std::string isa;
  app.add_option("--steps", steps);
  app.add_option("--batch", batch);
  app.add_option("--layers", layers);
  app.add_option("--d-model", d_model);
  app.add_option("--d-ff", d_ff);
  app.add_option("--isa", isa, "scalar or avx2");
  CLI11_PARSE(app, argc, argv);
  if (isa == "scalar") kernels::set_active_isa(kernels::Isa::Scalar);
  if (isa == "avx2") kernels::set_active_isa(kernels::Isa::Avx2);

  SynthSpec spec;
  spec.count = batch;
  const SynthDataset ds = generate_dataset(spec);
  ModelConfig mc;
  mc.n_layers = layers;
  mc.d_model = d_model;
  mc.d_ff = d_ff;
  TrainConfig tc;
  tc.batch_size = batch;
  tc.max_steps = steps;
  tc.warmup_steps = 0;
  tc.eval_every = 1000000;
  auto t0 = std::chrono::steady_clock::now();
  auto last = t0;
  TrainHooks hooks;
  hooks.on_step = [&](const TrainLogRow& r) {
    auto now = std::chrono::steady_clock::now();
    std::printf("step %zu loss %.4f %.3fs\n", r.step, r.train_loss,
                std::chrono::duration<double>(now - last).count());
    last = now;
  };
  std::vector<LabeledSequence> val(ds.val.begin(), ds.val.begin() + static_cast<std::ptrdiff_t>(std::min<std::size_t>(10, ds.val.size())));
  train(ds.train, val, mc, tc, hooks);
  auto t1 = std::chrono::steady_clock::now();
  std::printf("isa=%s total %.3fs (incl. final eval of %zu val)\n",
              std::string(kernels::isa_name(kernels::active_isa())).c_str(),
              std::chrono::duration<double>(t1 - t0).count(), val.size());
}
