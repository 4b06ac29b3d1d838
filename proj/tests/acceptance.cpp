// End-to-end acceptance checks. Prints one PASS/FAIL line per criterion,
// with indented detail lines, and exits non-zero if any criterion fails.
//
// usage: acceptance [work_dir]

#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "cli_app.hpp"
#include "grad_check.hpp"
#include "harlm/checkpoint.hpp"
#include "harlm/codec.hpp"
#include "harlm/error.hpp"
#include "harlm/eval.hpp"
#include "harlm/ingest.hpp"
#include "harlm/kernels.hpp"
#include "harlm/model.hpp"
#include "harlm/random.hpp"
#include "harlm/synth.hpp"

using namespace harlm;
namespace fs = std::filesystem;
using Clock = std::chrono::steady_clock;

namespace {

int g_failures = 0;

struct Verdict {
  bool pass = false;
  std::string detail;
};

void report(const std::string& name, const Verdict& v) {
  std::cout << (v.pass ? "PASS " : "FAIL ") << name << ": " << v.detail << std::endl;
  if (!v.pass) ++g_failures;
}

void run_criterion(const std::string& name, const std::function<Verdict()>& f) {
  try {
    report(name, f());
  } catch (const std::exception& e) {
    report(name, {false, std::string("exception: ") + e.what()});
  }
}

void note(const std::string& text) {
  std::istringstream lines(text);
  std::string line;
  while (std::getline(lines, line)) std::cout << "  " << line << "\n";
  std::cout.flush();
}

double seconds_since(Clock::time_point t0) {
  return std::chrono::duration<double>(Clock::now() - t0).count();
}

std::string fmt(const char* f, double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, f, v);
  return buf;
}

struct CliResult {
  int code = 0;
  std::string out;
  std::string err;
};

CliResult cli(std::vector<std::string> args) {
  args.insert(args.begin(), "harlm");
  std::vector<const char*> argv;
  for (const auto& a : args) argv.push_back(a.c_str());
  std::ostringstream out, err;
  const int code = cli::run(static_cast<int>(argv.size()), argv.data(), out, err);
  return {code, out.str(), err.str()};
}

void require_ok(const CliResult& r, const std::string& what) {
  if (r.code != 0) throw std::runtime_error(what + " exited " + std::to_string(r.code) + ": " + r.err);
}

std::string slurp(const fs::path& p) {
  std::ifstream f(p, std::ios::binary);
  std::stringstream s;
  s << f.rdbuf();
  return s.str();
}

std::vector<TokenSeq> random_batch(Rng& rng, std::size_t n, std::size_t min_len, std::size_t max_len,
                                   std::size_t vocab, std::size_t targets) {
  std::vector<TokenSeq> out;
  for (std::size_t b = 0; b < n; ++b) {
    const std::size_t len = min_len + rng.below(max_len - min_len + 1);
    TokenSeq s;
    for (std::size_t i = 0; i < len; ++i) s.ids.push_back(static_cast<TokenId>(1 + rng.below(vocab - 1)));
    s.target_mask.assign(len, false);
    for (std::size_t i = len - targets; i < len; ++i) s.target_mask[i] = true;
    out.push_back(std::move(s));
  }
  return out;
}

NormalizedSequence random_normalized(Rng& rng) {
  NormalizedSequence s;
  for (std::size_t f = 0; f < kNumFrames; ++f) {
    for (std::size_t j = 0; j < kNumJoints; ++j) {
      s.missing[f][j] = rng.uniform() < 0.15;
      if (s.missing[f][j]) continue;
      auto coord = [&] {
        const double r = rng.uniform();
        if (r < 0.05) return 0.0;
        if (r < 0.10) return 1.0;
        return rng.uniform();
      };
      s.coords[f][j] = {coord(), coord()};
    }
  }
  return s;
}

// ---------------------------------------------------------------------------

Verdict paper_number() {
  note(accuracy_table({{"Model Accuracy (reference only, not reproduced)", 0.52}}));
  return {true, "0.52 Top-1 is documented as a reference value and never asserted"};
}

struct SynthRun {
  fs::path data_dir;
  fs::path ckpt;
  fs::path log;
  std::string train_out;
  bool ok = false;
};

std::vector<std::string> train_args(const SynthRun& r, const fs::path& ckpt, const fs::path& log) {
  return {"train", "--train", (r.data_dir / "train.jsonl").string(), "--val", (r.data_dir / "val.jsonl").string(),
          "--out", ckpt.string(), "--log", log.string(), "--seed", "42", "--target-top1", "0.9"};
}

Verdict synthetic_training(SynthRun& run) {
  const CliResult s = cli({"synth", "--out", run.data_dir.string(), "--seed", "42"});
  require_ok(s, "synth");
  note("synth: " + s.out);
  const auto t0 = Clock::now();
  const CliResult t = cli(train_args(run, run.ckpt, run.log));
  const double secs = seconds_since(t0);
  note(t.err);
  require_ok(t, "train");
  run.train_out = t.out;
  run.ok = true;
  note("train: " + t.out);
  const Checkpoint c = load_checkpoint(run.ckpt);
  const bool pass = c.val_top1 >= 0.90 && c.step <= 5000 && secs <= 15 * 60;
  return {pass, "val Top-1 " + fmt("%.4f", c.val_top1) + " at step " + std::to_string(c.step) +
                    " (max_steps " + std::to_string(c.train.max_steps) + "), " + fmt("%.0f", secs) +
                    " s wall clock, threshold 0.90 within 5000 steps and 900 s"};
}

Verdict gradient_check() {
  const auto t0 = Clock::now();
  ModelConfig c;
  c.vocab_size = 16;
  c.context_len = 12;
  c.d_model = 8;
  c.n_heads = 2;
  c.n_layers = 1;
  c.d_ff = 32;
  Rng rng(42);
  const Batch b = make_batch(random_batch(rng, 3, 6, 12, c.vocab_size, 3), c.context_len);

  const auto at_init = init_params<double>(c, 42);
  auto random_point = init_params<double>(c, 43);
  for (double& v : random_point.data) v = rng.normal(0.0, 0.5);

  double worst = 0.0;
  std::string where;
  const std::vector<std::pair<std::string, const ModelParams<double>*>> points = {{"init", &at_init},
                                                                                 {"random", &random_point}};
  for (const auto& [name, params] : points) {
    const auto r = testing::finite_difference_check(*params, b, 1e-3);
    note(name + ": worst per-tensor " + fmt("%.3g", r.worst_norm_rel) + " (" + r.worst_norm_tensor +
         "), worst single element " + fmt("%.3g", r.worst_elem_rel));
    if (r.worst_norm_rel > worst) {
      worst = r.worst_norm_rel;
      where = name + " " + r.worst_norm_tensor;
    }
  }
  const double secs = seconds_since(t0);
  return {worst <= 1e-4 && secs <= 60,
          "max per-tensor relative error " + fmt("%.3g", worst) + " (" + where + ") at step 1e-3, bound 1e-4; " +
              fmt("%.1f", secs) + " s"};
}

Verdict causality() {
  ModelConfig c;
  c.vocab_size = 139;
  const auto p = init_params<float>(c, 42);
  Rng rng(7);
  std::size_t checked = 0;
  for (int trial = 0; trial < 100; ++trial) {
    auto seqs = random_batch(rng, 2, 20, c.context_len, c.vocab_size, 1);
    const std::size_t t = rng.below(seqs[0].ids.size() - 1);
    const auto before = forward(p, make_batch(seqs, c.context_len));
    TokenId& victim = seqs[0].ids[t + 1];
    victim = static_cast<TokenId>(1 + (victim + rng.below(c.vocab_size - 2)) % (c.vocab_size - 1));
    const auto after = forward(p, make_batch(seqs, c.context_len));
    const std::size_t row = c.context_len * c.vocab_size;
    if (std::memcmp(before.data(), after.data(), (t + 1) * c.vocab_size * sizeof(float)) != 0 ||
        std::memcmp(before.data() + row, after.data() + row, row * sizeof(float)) != 0) {
      return {false, "trial " + std::to_string(trial) + ": logits at or before position " + std::to_string(t) +
                         " changed"};
    }
    ++checked;
  }
  return {true, std::to_string(checked) + " random batches, logits at positions <= t bit-identical (" +
                    std::string(kernels::isa_name(kernels::active_isa())) + " kernels)"};
}

Verdict codec_round_trip() {
  const Vocabulary v = build_vocab({"wave", "squat"}, 64);
  Rng rng(2025);
  double worst = 0.0;
  for (int i = 0; i < 10000; ++i) {
    const NormalizedSequence s = random_normalized(rng);
    const std::string label = "wave";
    const TokenSeq enc = encode_example(s, &label, v);
    if (encode_prefix(s, v).ids.size() != 352) return {false, "prefix length differs from 352"};
    const NormalizedSequence back = decode_pose(enc.ids, v);
    for (std::size_t f = 0; f < kNumFrames; ++f) {
      for (std::size_t j = 0; j < kNumJoints; ++j) {
        if (back.missing[f][j] != s.missing[f][j]) return {false, "missing flag changed"};
        if (s.missing[f][j]) continue;
        for (int k = 0; k < 2; ++k) worst = std::max(worst, std::abs(back.coords[f][j][k] - s.coords[f][j][k]));
      }
    }
  }
  return {worst <= 1.0 / 128.0, "10000 sequences, missing flags exact, max coordinate error " + fmt("%.6g", worst) +
                                    " <= 0.0078125, prefix length 352"};
}

Verdict constrained_validity() {
  std::vector<std::string> names;
  for (Activity a : kAllActivities) names.emplace_back(activity_name(a));
  const Vocabulary v = build_vocab(names);
  const LabelTrie trie(v);
  const std::set<std::string> labels(v.labels().begin(), v.labels().end());
  ModelConfig c;
  c.vocab_size = v.size();
  c.context_len = kMinContextForExamples;
  c.d_model = 8;
  c.n_heads = 2;
  c.n_layers = 1;
  c.d_ff = 16;
  Rng rng(99);
  std::size_t invalid = 0;
  for (int i = 0; i < 1000; ++i) {
    auto p = init_params<float>(c, rng.next_u64());
    const double sd = 0.05 + 2.0 * rng.uniform();
    for (float& w : p.data) w = static_cast<float>(rng.normal(0.0, sd));
    const TokenSeq prefix = encode_prefix(random_normalized(rng), v);
    const std::string got = constrained_decode(p, std::span<const TokenId>(prefix.ids), trie, v);
    if (!labels.count(got)) return {false, "model " + std::to_string(i) + " produced '" + got + "'"};
    if (!label_from_tokens(greedy_decode(p, std::span<const TokenId>(prefix.ids)), v)) ++invalid;
  }
  return {true, "1000 random models: constrained output always a label; greedy invalid " + std::to_string(invalid) +
                    "/1000 counted without error"};
}

Verdict determinism(const SynthRun& run, const fs::path& dir) {
  if (!run.ok) return {false, "first training run did not complete"};
  const fs::path ckpt2 = dir / "model_rerun.klm", log2 = dir / "model_rerun.log.csv";
  require_ok(cli(train_args(run, ckpt2, log2)), "train rerun");
  const bool same_ckpt = slurp(run.ckpt) == slurp(ckpt2);
  const bool same_log = slurp(run.log) == slurp(log2);
  return {same_ckpt && same_log, std::string("rerun with identical flags: checkpoint ") +
                                     (same_ckpt ? "bit-identical" : "DIFFERS") + ", log CSV " +
                                     (same_log ? "bit-identical" : "DIFFERS")};
}

Verdict checkpoint_round_trip(const SynthRun& run, const fs::path& dir) {
  if (!run.ok) return {false, "no checkpoint from the training run"};
  const Checkpoint c = load_checkpoint(run.ckpt);
  const auto val = read_dataset(run.data_dir / "val.jsonl");
  const Metrics m = evaluate(c.params, c.vocab, val, DecodeMode::Greedy);

  // Logged value from the CSV written during training.
  std::optional<double> logged;
  std::istringstream log(slurp(run.log));
  std::string line;
  std::getline(log, line);
  while (std::getline(log, line)) {
    std::vector<std::string> cells;
    std::stringstream ls(line);
    std::string cell;
    while (std::getline(ls, cell, ',')) cells.push_back(cell);
    if (cells.size() == 5 && std::stoull(cells[0]) == c.step) logged = std::stod(cells[4]);
  }
  if (!logged) return {false, "no logged validation Top-1 at step " + std::to_string(c.step)};

  auto kind_after = [&](const std::function<void(std::vector<char>&)>& damage) -> std::string {
    std::string bytes = slurp(run.ckpt);
    std::vector<char> b(bytes.begin(), bytes.end());
    damage(b);
    const fs::path p = dir / "damaged.klm";
    std::ofstream(p, std::ios::binary).write(b.data(), static_cast<std::streamsize>(b.size()));
    try {
      load_checkpoint(p);
    } catch (const Error& e) {
      return std::string(to_string(e.kind()));
    }
    return "accepted";
  };
  const std::string truncated = kind_after([](std::vector<char>& b) { b.resize(b.size() - 100); });
  const std::string magic = kind_after([](std::vector<char>& b) { b[0] = 'X'; });
  const std::string flipped = kind_after([](std::vector<char>& b) { b[b.size() / 2] ^= 1; });

  const bool pass = m.top1 == *logged && m.top1 == c.val_top1 && truncated == "CorruptChecksum" &&
                    magic == "VersionMismatch" && flipped == "CorruptChecksum";
  return {pass, "reloaded Top-1 " + fmt("%.17g", m.top1) + " vs logged " + fmt("%.17g", *logged) +
                    "; truncated -> " + truncated + ", altered magic -> " + magic + ", flipped bit -> " + flipped};
}

Verdict ingestion_fixture() {
  const fs::path fx = HARLM_FIXTURES;
  const auto exp = nlohmann::json::parse(slurp(fx / "expected.json"));
  const IngestResult r = build_dataset(fx / "alphapose", fx / "manifest.csv");

  std::size_t selections = 0;
  for (const auto& [vid, sel] : exp["selections"].items()) {
    const auto dets = parse_alphapose_file(fx / "alphapose" / (vid + ".json"));
    const VideoPoses video = assemble_video(vid, dets);
    const auto idx = sample_indices(video.frames.size());
    const auto want = sel["sampled_frames"].get<std::vector<std::size_t>>();
    const auto want_det = sel["detection_index"].get<std::vector<std::size_t>>();
    for (std::size_t i = 0; i < kNumFrames; ++i) {
      if (idx[i] != want[i] || !(video.frames[idx[i]] == dets[want_det[i]].pose())) {
        return {false, vid + ": frame " + std::to_string(i) + " selection differs"};
      }
      ++selections;
    }
  }
  if (r.sequences.size() != exp["sequences"].size()) return {false, "sequence count differs"};
  for (std::size_t s = 0; s < r.sequences.size(); ++s) {
    const auto& want = exp["sequences"][s];
    const LabeledSequence& got = r.sequences[s];
    if (got.seq.source_id != want["video_id"] || got.label != want["label"]) return {false, "sequence id/label"};
    const NormalizedSequence n = normalize_sequence(got.seq);
    for (std::size_t f = 0; f < kNumFrames; ++f) {
      for (std::size_t j = 0; j < kNumJoints; ++j) {
        const auto& kp = want["frames"][f][j];
        const Keypoint& k = got.seq.frames[f].joints[j];
        if (k.x != kp[0].get<double>() || k.y != kp[1].get<double>() || k.confidence != kp[2].get<double>() ||
            n.missing[f][j] != want["missing"][f][j].get<bool>() ||
            std::abs(n.coords[f][j][0] - want["normalized"][f][j][0].get<double>()) > 1e-12 ||
            std::abs(n.coords[f][j][1] - want["normalized"][f][j][1].get<double>()) > 1e-12) {
          return {false, got.seq.source_id + ": frame " + std::to_string(f) + " joint " + std::to_string(j)};
        }
      }
    }
  }
  std::string csv = "row,video_id,reason\n";
  for (const auto& s : exp["skipped"]) {
    csv += std::to_string(s["row"].get<int>()) + "," + s["video_id"].get<std::string>() + "," +
           s["reason"].get<std::string>() + "\n";
  }
  if (skip_report_csv(r) != csv) return {false, "skip report differs"};
  return {true, std::to_string(r.sequences.size()) + " sequences, " + std::to_string(selections) +
                    " person selections and " + std::to_string(r.skipped.size()) +
                    " skipped video match the independently computed expectation"};
}

Verdict infer_zero_noise(const SynthRun& run, const fs::path& dir) {
  if (!run.ok) return {false, "no checkpoint from the training run"};
  std::string detail;
  bool wave_ok = false;
  for (Activity a : kAllActivities) {
    MotionParams mp;
    mp.activity = a;
    mp.amplitude = 0.12;
    mp.frequency = 1.0;
    mp.phase = 0.0;
    mp.noise_sigma = 0.0;
    const std::string name(activity_name(a));
    const fs::path p = dir / ("zero_noise_" + name + ".jsonl");
    write_dataset(p, {generate_sequence(mp, 1, "zero_noise_" + name)});
    const CliResult r = cli({"infer", "--checkpoint", run.ckpt.string(), "--input", p.string()});
    require_ok(r, "infer");
    std::string got = r.out.substr(0, r.out.find('\n'));
    detail += (detail.empty() ? "" : ", ") + name + " -> " + got;
    if (a == Activity::Wave) wave_ok = got == "wave";
  }
  return {wave_ok, detail};
}

void eval_summary(const SynthRun& run, const fs::path& dir) {
  if (!run.ok) return;
  for (const char* mode : {"greedy", "constrained"}) {
    const CliResult r = cli({"eval", "--checkpoint", run.ckpt.string(), "--data",
                             (run.data_dir / "val.jsonl").string(), "--mode", mode, "--out-dir",
                             (dir / (std::string("eval_") + mode)).string()});
    note(std::string("eval ") + mode + ": " + (r.code == 0 ? r.out : r.err));
  }
}

}  // namespace

int main(int argc, char** argv) {
  const fs::path dir = argc > 1 ? fs::path(argv[1]) : fs::temp_directory_path() / "harlm_acceptance";
  fs::remove_all(dir);
  fs::create_directories(dir);
  std::cout << "work dir " << dir.string() << ", kernels " << kernels::isa_name(kernels::active_isa()) << "\n";

  SynthRun run{dir / "synth", dir / "model.klm", dir / "model.log.csv"};

  run_criterion("paper number is reference only", paper_number);
  run_criterion("gradient check", gradient_check);
  run_criterion("causality", causality);
  run_criterion("codec round trip", codec_round_trip);
  run_criterion("constrained decoding validity", constrained_validity);
  run_criterion("ingestion fixture", ingestion_fixture);
  run_criterion("synthetic end-to-end training", [&] { return synthetic_training(run); });
  run_criterion("checkpoint round trip", [&] { return checkpoint_round_trip(run, dir); });
  run_criterion("infer on a zero-noise wave", [&] { return infer_zero_noise(run, dir); });
  eval_summary(run, dir);
  run_criterion("training determinism", [&] { return determinism(run, dir); });

  std::cout << (g_failures == 0 ? "all criteria passed" : std::to_string(g_failures) + " criteria failed") << "\n";
  return g_failures == 0 ? 0 : 1;
}
