#include <doctest.h>

#include <cstring>
#include <filesystem>
#include <fstream>

#include <unistd.h>

#include "harlm/checkpoint.hpp"
#include "harlm/error.hpp"
#include "harlm/eval.hpp"
#include "harlm/synth.hpp"
#include "harlm/trainer.hpp"

using namespace harlm;
namespace fs = std::filesystem;

namespace {

ErrorKind kind_of(auto&& f) {
  try {
    f();
  } catch (const Error& e) {
    return e.kind();
  }
  FAIL("no error thrown");
  return ErrorKind::InvalidArgument;
}

// Bitwise reflected CRC-32 (polynomial 0xEDB88320).
std::uint32_t crc32_bitwise(const std::uint8_t* p, std::size_t n) {
  std::uint32_t crc = 0xFFFFFFFFu;
  for (std::size_t i = 0; i < n; ++i) {
    crc ^= p[i];
    for (int b = 0; b < 8; ++b) crc = (crc >> 1) ^ (0xEDB88320u & (0u - (crc & 1u)));
  }
  return ~crc;
}

std::uint32_t read_u32(const std::vector<std::uint8_t>& b, std::size_t at) {
  return std::uint32_t(b[at]) | std::uint32_t(b[at + 1]) << 8 | std::uint32_t(b[at + 2]) << 16 |
         std::uint32_t(b[at + 3]) << 24;
}

void put_u32(std::vector<std::uint8_t>& b, std::size_t at, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) b[at + i] = static_cast<std::uint8_t>(v >> (8 * i));
}

void reseal(std::vector<std::uint8_t>& b) {
  put_u32(b, b.size() - 4, crc32_bitwise(b.data(), b.size() - 4));
}

struct Trained {
  SynthDataset data;
  TrainOutcome out;
};

const Trained& trained() {
  static const Trained t = [] {
    SynthSpec s;
    s.count = 4;
    Trained r{generate_dataset(s), {}};
    ModelConfig mc;
    mc.d_model = 16;
    mc.n_heads = 2;
    mc.n_layers = 1;
    mc.d_ff = 32;
    TrainConfig tc;
    tc.batch_size = 4;
    tc.warmup_steps = 2;
    tc.max_steps = 30;
    tc.eval_every = 10;
    tc.peak_lr = 3e-3;
    r.out = train(r.data.train, r.data.val, mc, tc);
    return r;
  }();
  return t;
}

struct TempDir {
  fs::path path;
  TempDir() : path(fs::temp_directory_path() / ("harlm_ckpt_" + std::to_string(::getpid()))) {
    fs::create_directories(path);
  }
  ~TempDir() { fs::remove_all(path); }
};

}  // namespace

TEST_CASE("checkpoint bytes round trip exactly") {
  const Checkpoint& c = trained().out.best;
  REQUIRE(c.opt.has_value());
  const auto bytes = serialize_checkpoint(c);
  const Checkpoint back = deserialize_checkpoint(bytes);
  CHECK(back.model == c.model);
  CHECK(back.train == c.train);
  CHECK(back.vocab == c.vocab);
  CHECK(back.step == c.step);
  CHECK(back.val_top1 == c.val_top1);
  CHECK(back.log_tail == c.log_tail);
  REQUIRE(back.params.data.size() == c.params.data.size());
  CHECK(std::memcmp(back.params.data.data(), c.params.data.data(), c.params.data.size() * sizeof(float)) == 0);
  REQUIRE(back.opt.has_value());
  CHECK(back.opt->step == c.opt->step);
  CHECK(back.opt->m == c.opt->m);
  CHECK(back.opt->v == c.opt->v);
  CHECK(serialize_checkpoint(back) == bytes);

  Checkpoint no_opt = c;
  no_opt.opt.reset();
  CHECK_FALSE(deserialize_checkpoint(serialize_checkpoint(no_opt)).opt.has_value());
}

TEST_CASE("checkpoint header and checksum layout") {
  const auto bytes = serialize_checkpoint(trained().out.best);
  CHECK(std::memcmp(bytes.data(), "KLM1", 4) == 0);
  CHECK(read_u32(bytes, 4) == 1);
  CHECK(read_u32(bytes, bytes.size() - 4) == crc32_bitwise(bytes.data(), bytes.size() - 4));
}

TEST_CASE("reloaded checkpoint reproduces the logged Top-1") {
  const Trained& t = trained();
  TempDir dir;
  const fs::path p = dir.path / "model.klm";
  save_checkpoint(t.out.best, p);
  const Checkpoint back = load_checkpoint(p);
  const Metrics m = evaluate(back.params, back.vocab, t.data.val, DecodeMode::Greedy);
  CHECK(m.top1 == back.val_top1);
  bool logged = false;
  for (const TrainLogRow& r : t.out.log) {
    if (r.step == back.step) {
      REQUIRE(r.val_top1.has_value());
      CHECK(*r.val_top1 == m.top1);
      logged = true;
    }
  }
  CHECK(logged);
}

TEST_CASE("damaged checkpoints are rejected") {
  const auto good = serialize_checkpoint(trained().out.best);

  SUBCASE("truncation") {
    for (std::size_t keep : {std::size_t{0}, std::size_t{3}, std::size_t{7}, good.size() / 2, good.size() - 1}) {
      std::vector<std::uint8_t> cut(good.begin(), good.begin() + static_cast<std::ptrdiff_t>(keep));
      ErrorKind k = kind_of([&] { deserialize_checkpoint(cut); });
      INFO("kept " << keep);
      CHECK((k == ErrorKind::CorruptChecksum || (keep < 4 && k == ErrorKind::VersionMismatch)));
    }
  }
  SUBCASE("flipped payload bit") {
    auto bad = good;
    bad[good.size() / 2] ^= 0x10;
    CHECK(kind_of([&] { deserialize_checkpoint(bad); }) == ErrorKind::CorruptChecksum);
  }
  SUBCASE("altered magic") {
    auto bad = good;
    bad[0] = 'X';
    CHECK(kind_of([&] { deserialize_checkpoint(bad); }) == ErrorKind::VersionMismatch);
    reseal(bad);
    CHECK(kind_of([&] { deserialize_checkpoint(bad); }) == ErrorKind::VersionMismatch);
  }
  SUBCASE("newer version") {
    auto bad = good;
    put_u32(bad, 4, 2);
    reseal(bad);
    CHECK(kind_of([&] { deserialize_checkpoint(bad); }) == ErrorKind::VersionMismatch);
  }
}

TEST_CASE("checkpoint file errors") {
  TempDir dir;
  CHECK(kind_of([&] { load_checkpoint(dir.path / "missing.klm"); }) == ErrorKind::Io);
  CHECK(kind_of([&] { save_checkpoint(trained().out.best, dir.path / "no" / "such" / "dir.klm"); }) ==
        ErrorKind::Io);
  const fs::path p = dir.path / "cut.klm";
  save_checkpoint(trained().out.best, p);
  fs::resize_file(p, fs::file_size(p) - 10);
  CHECK(kind_of([&] { load_checkpoint(p); }) == ErrorKind::CorruptChecksum);
}
