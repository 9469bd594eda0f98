#pragma once

// Binary checkpoints. Layout, all integers little-endian:
//   "CHRNNCKP" | u32 version | u64 n + n bytes of config text
//   | u32 tensor count | per tensor: u32 n + name, u32 rank, u64 extents[rank],
//     f32 values | u64 n + n bytes of trainer state text | u32 CRC-32 of all
//     preceding bytes

#include <chrnn/model.hpp>
#include <chrnn/train.hpp>

#include <cstdint>
#include <span>
#include <string>
#include <vector>

namespace chrnn {

inline constexpr std::uint32_t kCheckpointVersion = 1;

struct NamedTensor {
  std::string name;
  Tensor<float> value;
  friend bool operator==(const NamedTensor&, const NamedTensor&) = default;
};

struct Checkpoint {
  std::string config;  // run configuration text
  std::vector<NamedTensor> tensors;
  std::string state;   // trainer state text; empty when not saved

  const Tensor<float>* find(const std::string& name) const;
  friend bool operator==(const Checkpoint&, const Checkpoint&) = default;
};

std::vector<std::uint8_t> encode_checkpoint(const Checkpoint& ckpt);
/// Throws CheckpointError on bad magic, version mismatch, checksum failure or
/// malformed content.
Checkpoint decode_checkpoint(std::span<const std::uint8_t> bytes);

std::uint32_t crc32_of(std::span<const std::uint8_t> bytes);

/// Writes via a temporary file and rename.
void write_checkpoint(const std::string& path, const Checkpoint& ckpt);
Checkpoint read_checkpoint(const std::string& path);

/// Collects parameters ("param.<name>"), optimizer velocities
/// ("opt.velocity.<name>"), the optional data mean ("data.mean") and the
/// trainer state.
Checkpoint capture_checkpoint(Model<float>& model, const Trainer* trainer,
                              const Tensor<float>* data_mean, const std::string& config_text);

/// Copies saved parameters into `model`; throws CheckpointError on mismatch.
void restore_model(const Checkpoint& ckpt, Model<float>& model);
/// Restores velocities and trainer state.
void restore_trainer(const Checkpoint& ckpt, Model<float>& model, Trainer& trainer);

}  // namespace chrnn
