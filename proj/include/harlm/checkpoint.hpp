#pragma once

// Checkpoint file layout (all integers little-endian):
//
//   "KLM1"                     magic
//   u32                        format version (1)
//   u64 + bytes                UTF-8 JSON config block (model, train, vocab, log tail)
//   u32                        tensor count
//   per tensor:
//     u32 + bytes              UTF-8 name
//     u32                      rank
//     u64 x rank               dims
//     f32 x prod(dims)         row-major values
//   u32                        CRC32 of every preceding byte

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "harlm/codec.hpp"
#include "harlm/model.hpp"
#include "harlm/optim.hpp"

namespace harlm {

inline constexpr std::uint32_t kCheckpointVersion = 1;

struct TrainLogRow {
  std::size_t step = 0;
  double lr = 0.0;
  double train_loss = 0.0;
  std::optional<double> val_loss;
  std::optional<double> val_top1;

  friend bool operator==(const TrainLogRow&, const TrainLogRow&) = default;
};

struct Checkpoint {
  ModelConfig model;
  TrainConfig train;
  Vocabulary vocab;
  ModelParams<float> params;
  std::optional<OptState> opt;
  std::size_t step = 0;        // optimizer steps taken by these parameters
  double val_top1 = 0.0;       // validation Top-1 logged at `step`
  std::vector<TrainLogRow> log_tail;
};

std::vector<std::uint8_t> serialize_checkpoint(const Checkpoint& c);
Checkpoint deserialize_checkpoint(const std::vector<std::uint8_t>& bytes);

// Throws Error(Io), Error(VersionMismatch) for a foreign or newer file,
// Error(CorruptChecksum) for truncation or bit damage.
void save_checkpoint(const Checkpoint& c, const std::filesystem::path& path);
Checkpoint load_checkpoint(const std::filesystem::path& path);

}  // namespace harlm
