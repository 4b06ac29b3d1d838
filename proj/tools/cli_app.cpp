#include "cli_app.hpp"

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>

#include <CLI11.hpp>

#include "harlm/checkpoint.hpp"
#include "harlm/dataset.hpp"
#include "harlm/error.hpp"
#include "harlm/eval.hpp"
#include "harlm/ingest.hpp"
#include "harlm/synth.hpp"
#include "harlm/trainer.hpp"

namespace fs = std::filesystem;

namespace harlm::cli {

namespace {

struct Shared {
  std::string config;
  std::uint64_t seed = 42;
  bool deterministic = true;
};

struct SynthArgs {
  std::vector<std::string> classes;
  std::size_t count = 200;
  double noise = 2.0;
  std::string out_dir;
};

struct IngestArgs {
  std::string pose_dir;
  std::string manifest;
  std::string out;
  std::string skip_report;
  double tau = kDefaultConfidenceThreshold;
};

struct TrainArgs {
  std::string train;
  std::string val;
  std::string out;
  std::string log;
  ModelConfig model;
  TrainConfig train_cfg;
};

struct EvalArgs {
  std::string checkpoint;
  std::string data;
  std::string mode = "greedy";
  std::string out_dir = ".";
};

struct InferArgs {
  std::string checkpoint;
  std::string input;
  bool constrained = false;
};

void add_shared(CLI::App* sub, Shared& s) {
  sub->add_option("--config", s.config, "Flat key=value file; command-line flags take precedence")
      ->check(CLI::ExistingFile);
  sub->add_option("--seed", s.seed, "Seed for every random stream")->capture_default_str();
  sub->add_option("--deterministic", s.deterministic,
                  "Single-threaded bit-reproducible numerics (the only mode built)")
      ->capture_default_str();
}

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return {};
  return s.substr(b, s.find_last_not_of(" \t\r") - b + 1);
}

// Appends `--key=value` for every config-file entry whose flag is not already
// on the command line, so flags win and CLI11 validates file values too.
// A missing file is left for the option's own ExistingFile check.
std::vector<std::string> expand_config(std::vector<std::string> args) {
  std::string path;
  for (std::size_t i = 1; i < args.size(); ++i) {
    if (args[i] == "--config" && i + 1 < args.size()) path = args[i + 1];
    if (args[i].rfind("--config=", 0) == 0) path = args[i].substr(9);
  }
  if (path.empty() || !fs::is_regular_file(path)) return args;
  std::ifstream in(path);
  if (!in) throw CLI::FileError::Missing(path);
  const std::vector<std::string> given(args.begin(), args.end());
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    line = trim(line);
    if (line.empty() || line[0] == '#' || line[0] == ';') continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) {
      throw CLI::ConversionError(path + ":" + std::to_string(line_no) + ": expected key=value");
    }
    std::string key = trim(line.substr(0, eq));
    std::string value = trim(line.substr(eq + 1));
    if (key.rfind("--", 0) == 0) key = key.substr(2);
    std::replace(key.begin(), key.end(), '_', '-');
    if (value.size() >= 2 && (value.front() == '"' || value.front() == '\'') && value.back() == value.front()) {
      value = value.substr(1, value.size() - 2);
    }
    if (key.empty() || key == "config") {
      throw CLI::ConversionError(path + ":" + std::to_string(line_no) + ": invalid key");
    }
    const std::string flag = "--" + key;
    const bool on_command_line = std::any_of(given.begin(), given.end(), [&](const std::string& a) {
      return a == flag || a.rfind(flag + "=", 0) == 0;
    });
    if (!on_command_line) args.push_back(flag + "=" + value);
  }
  return args;
}

void write_text(const fs::path& path, const std::string& text) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) throw Error(ErrorKind::Io, "cannot write " + path.string());
  f << text;
  if (!f) throw Error(ErrorKind::Io, "write failed: " + path.string());
}

std::string fmt(double v, int digits = 4) {
  std::ostringstream s;
  s.setf(std::ios::fixed);
  s.precision(digits);
  s << v;
  return s.str();
}

int cmd_synth(const SynthArgs& a, const Shared& shared, std::ostream& out) {
  SynthSpec spec;
  spec.classes.clear();
  for (const std::string& name : a.classes) spec.classes.push_back(*parse_activity(name));
  spec.count = a.count;
  spec.noise_sigma = a.noise;
  spec.seed = shared.seed;
  const SynthDataset ds = generate_dataset(spec);
  fs::create_directories(a.out_dir);
  write_dataset(fs::path(a.out_dir) / "train.jsonl", ds.train);
  write_dataset(fs::path(a.out_dir) / "val.jsonl", ds.val);
  out << "train=" << ds.train.size() << " val=" << ds.val.size() << "\n";
  return kExitOk;
}

int cmd_ingest(const IngestArgs& a, std::ostream& out) {
  const IngestResult r = build_dataset(a.pose_dir, a.manifest, a.tau);
  std::vector<LabeledSequence> records = r.sequences;
  write_text(a.out, [&] {
    std::ostringstream s;
    write_dataset(s, records);
    return s.str();
  }());
  const fs::path report = a.skip_report.empty() ? fs::path(a.out).replace_extension(".skipped.csv")
                                                : fs::path(a.skip_report);
  write_text(report, skip_report_csv(r));
  out << "videos=" << r.sequences.size() << " actions=" << r.action_count()
      << " keypoints=" << r.keypoint_count(a.tau) << "\n";
  return kExitOk;
}

int cmd_train(TrainArgs a, const Shared& shared, std::ostream& out, std::ostream& err) {
  a.train_cfg.seed = shared.seed;
  const auto train_set = read_dataset(fs::path(a.train));
  const auto val_set = read_dataset(fs::path(a.val));

  std::ostringstream log;
  log << train_log_header() << "\n";
  TrainHooks hooks;
  hooks.on_step = [&](const TrainLogRow& row) {
    log << train_log_line(row) << "\n";
    if (row.val_top1) {
      err << "step=" << row.step << " val_loss=" << fmt(*row.val_loss)
          << " val_top1=" << fmt(*row.val_top1) << std::endl;
    }
  };
  const TrainOutcome outcome = train(train_set, val_set, a.model, a.train_cfg, hooks);
  save_checkpoint(outcome.best, a.out);
  write_text(a.log.empty() ? fs::path(a.out).replace_extension(".log.csv") : fs::path(a.log), log.str());
  out << "best_val_top1=" << fmt(outcome.best.val_top1) << " step=" << outcome.best.step
      << " steps_run=" << outcome.steps_run << "\n";
  return kExitOk;
}

int cmd_eval(const EvalArgs& a, std::ostream& out) {
  const Checkpoint c = load_checkpoint(a.checkpoint);
  const auto data = read_dataset(fs::path(a.data));
  const Metrics m = evaluate(c.params, c.vocab, data, parse_decode_mode(a.mode));
  write_text(fs::path(a.out_dir) / "metrics.json", metrics_json(m, "confusion.csv"));
  write_text(fs::path(a.out_dir) / "confusion.csv", confusion_csv(m));
  out << "top1=" << fmt(m.top1) << "\n";
  out << accuracy_table({{"micro-lm (" + a.mode + ", " + fs::path(a.checkpoint).filename().string() + ")",
                          m.top1}});
  return kExitOk;
}

// Dataset JSONL (first record) or an AlphaPose results array.
PoseSequence read_infer_input(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorKind::Io, "cannot open " + path);
  std::stringstream buf;
  buf << in.rdbuf();
  const std::string text = buf.str();
  const auto first = text.find_first_not_of(" \t\r\n\xEF\xBB\xBF");
  if (first != std::string::npos && text[first] == '[') {
    const auto detections = parse_alphapose(text);
    return sample_frames(assemble_video(fs::path(path).stem().string(), detections));
  }
  std::istringstream lines(text);
  const auto records = read_dataset(lines);
  if (records.empty()) throw Error(ErrorKind::Parse, path + ": no pose record");
  return records.front().seq;
}

int cmd_infer(const InferArgs& a, std::ostream& out) {
  const Checkpoint c = load_checkpoint(a.checkpoint);
  const TokenSeq prefix = encode_prefix(normalize_sequence(read_infer_input(a.input)), c.vocab);
  if (a.constrained) {
    out << constrained_decode(c.params, std::span<const TokenId>(prefix.ids), LabelTrie(c.vocab), c.vocab)
        << "\n";
    return kExitOk;
  }
  const auto tokens = greedy_decode(c.params, std::span<const TokenId>(prefix.ids));
  if (const auto label = label_from_tokens(tokens, c.vocab)) {
    out << *label << "\n";
  } else {
    std::string raw;
    for (TokenId t : tokens) raw += (raw.empty() ? "" : " ") + c.vocab.token_text(t);
    out << kInvalidPrediction << " (" << raw << ")\n";
  }
  return kExitOk;
}

}  // namespace

int run(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
  CLI::App app{"harlm: activity recognition as label generation over pose-token sequences"};
  app.require_subcommand(1);

  Shared shared;
  SynthArgs sa;
  IngestArgs ia;
  TrainArgs ta;
  EvalArgs ea;
  InferArgs fa;

  auto* synth = app.add_subcommand("synth", "Generate a synthetic activity dataset");
  add_shared(synth, shared);
  sa.classes = {"wave", "squat", "jump", "clap", "march"};
  synth->add_option("--classes", sa.classes, "Comma-separated activity classes")
      ->delimiter(',')
      ->capture_default_str()
      ->check(CLI::Validator(
          [](const std::string& v) {
            return parse_activity(v) ? std::string() : "unknown activity class '" + v + "'";
          },
          "CLASS"));
  synth->add_option("--count", sa.count, "Training sequences per class")->capture_default_str();
  synth->add_option("--noise", sa.noise, "Gaussian keypoint noise sigma in pixels")->capture_default_str();
  synth->add_option("--out", sa.out_dir, "Output directory for train.jsonl and val.jsonl")->required();

  auto* ingest = app.add_subcommand("ingest", "Build a dataset from AlphaPose results and a manifest");
  add_shared(ingest, shared);
  ingest->add_option("--alphapose-dir", ia.pose_dir, "Directory holding pose files")
      ->required()
      ->check(CLI::ExistingDirectory);
  ingest->add_option("--manifest", ia.manifest, "CSV with video_id,pose_file,label")
      ->required()
      ->check(CLI::ExistingFile);
  ingest->add_option("--out", ia.out, "Output dataset JSONL")->required();
  ingest->add_option("--skip-report", ia.skip_report, "Skip report CSV (default: <out>.skipped.csv)");
  ingest->add_option("--tau", ia.tau, "Keypoint confidence threshold")->capture_default_str();

  auto* train_cmd = app.add_subcommand("train", "Train the micro transformer");
  add_shared(train_cmd, shared);
  train_cmd->add_option("--train", ta.train, "Training dataset JSONL")->required()->check(CLI::ExistingFile);
  train_cmd->add_option("--val", ta.val, "Validation dataset JSONL")->required()->check(CLI::ExistingFile);
  train_cmd->add_option("--out", ta.out, "Checkpoint path")->required();
  train_cmd->add_option("--log", ta.log, "Log CSV (default: <out>.log.csv)");
  train_cmd->add_option("--context-len", ta.model.context_len)->capture_default_str();
  train_cmd->add_option("--d-model", ta.model.d_model)->capture_default_str();
  train_cmd->add_option("--n-heads", ta.model.n_heads)->capture_default_str();
  train_cmd->add_option("--n-layers", ta.model.n_layers)->capture_default_str();
  train_cmd->add_option("--d-ff", ta.model.d_ff)->capture_default_str();
  train_cmd->add_option("--dropout", ta.model.dropout_rate)->capture_default_str();
  train_cmd->add_option("--batch-size", ta.train_cfg.batch_size)->capture_default_str();
  train_cmd->add_option("--max-steps", ta.train_cfg.max_steps)->capture_default_str();
  train_cmd->add_option("--peak-lr", ta.train_cfg.peak_lr)->capture_default_str();
  train_cmd->add_option("--warmup-steps", ta.train_cfg.warmup_steps)->capture_default_str();
  train_cmd->add_option("--min-lr", ta.train_cfg.min_lr)->capture_default_str();
  train_cmd->add_option("--weight-decay", ta.train_cfg.weight_decay)->capture_default_str();
  train_cmd->add_option("--beta1", ta.train_cfg.beta1)->capture_default_str();
  train_cmd->add_option("--beta2", ta.train_cfg.beta2)->capture_default_str();
  train_cmd->add_option("--eps", ta.train_cfg.eps)->capture_default_str();
  train_cmd->add_option("--clip-norm", ta.train_cfg.clip_norm)->capture_default_str();
  train_cmd->add_option("--eval-every", ta.train_cfg.eval_every)->capture_default_str();
  train_cmd->add_option("--target-top1", ta.train_cfg.target_top1,
                        "Stop at the first evaluation reaching this validation Top-1 (0 = off)")
      ->capture_default_str();

  auto* eval_cmd = app.add_subcommand("eval", "Evaluate a checkpoint on a dataset");
  add_shared(eval_cmd, shared);
  eval_cmd->add_option("--checkpoint", ea.checkpoint)->required()->check(CLI::ExistingFile);
  eval_cmd->add_option("--data", ea.data, "Dataset JSONL")->required()->check(CLI::ExistingFile);
  eval_cmd->add_option("--mode", ea.mode, "Decoding mode")
      ->capture_default_str()
      ->check(CLI::IsMember({"greedy", "constrained"}));
  eval_cmd->add_option("--out-dir", ea.out_dir, "Directory for metrics.json and confusion.csv")
      ->capture_default_str();

  auto* infer = app.add_subcommand("infer", "Decode the label of one pose sequence");
  add_shared(infer, shared);
  infer->add_option("--checkpoint", fa.checkpoint)->required()->check(CLI::ExistingFile);
  infer->add_option("--input", fa.input, "Dataset JSONL record or AlphaPose results file")
      ->required()
      ->check(CLI::ExistingFile);
  infer->add_flag("--constrained", fa.constrained, "Restrict decoding to known labels");

  try {
    const std::vector<std::string> args = expand_config(std::vector<std::string>(argv, argv + argc));
    std::vector<const char*> expanded;
    for (const std::string& a : args) expanded.push_back(a.c_str());
    app.parse(static_cast<int>(expanded.size()), expanded.data());
  } catch (const CLI::CallForHelp&) {
    // help() delegates to the selected subcommand.
    out << app.help();
    return kExitOk;
  } catch (const CLI::CallForAllHelp&) {
    out << app.help("", CLI::AppFormatMode::All);
    return kExitOk;
  } catch (const CLI::ParseError& e) {
    err << "error: " << e.what() << "\n";
    return kExitUsage;
  }

  try {
    if (*synth) return cmd_synth(sa, shared, out);
    if (*ingest) return cmd_ingest(ia, out);
    if (*train_cmd) return cmd_train(ta, shared, out, err);
    if (*eval_cmd) return cmd_eval(ea, out);
    if (*infer) return cmd_infer(fa, out);
  } catch (const Error& e) {
    err << "error: " << e.what() << "\n";
    return kExitRuntime;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    return kExitRuntime;
  }
  return kExitUsage;
}

}  // namespace harlm::cli
