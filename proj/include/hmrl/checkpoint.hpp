#pragma once

// Binary checkpoint files. Layout (all integers little-endian):
//
//   "HMRLCKPT"  u32 version
//   u32 n + n bytes   run config text
//   u32 n + n bytes   metadata text (key = value lines)
//   u32 block count, then per block:
//     u32 n + n bytes name, u32 rank, rank x u64 dims, prod(dims) x f64
//
// Block names are "<group>/<slice>" with group in {policy, potential,
// embedding, inner_lr}. See docs/checkpoint-format.md.

#include <cstdint>
#include <string>
#include <vector>

#include "hmrl/metaloop.hpp"

namespace hmrl {

inline constexpr std::uint32_t kCheckpointVersion = 1;

struct CheckpointBlock {
  std::string name;
  std::vector<std::uint64_t> dims;
  std::vector<double> values;
};

struct CheckpointFile {
  std::uint32_t version = kCheckpointVersion;
  std::string config_text;
  std::string metadata_text;
  std::vector<CheckpointBlock> blocks;

  bool has_group(const std::string& group) const;
};

std::string encode_checkpoint(const CheckpointFile& f);
CheckpointFile decode_checkpoint(const std::string& bytes);

CheckpointFile to_checkpoint(const MetaModel& model, const RunConfig& cfg);

struct LoadedModel {
  MetaModel model;
  RunConfig config;
};

LoadedModel from_checkpoint(const CheckpointFile& f);

void save_checkpoint(const std::string& path, const MetaModel& model, const RunConfig& cfg);
LoadedModel load_checkpoint(const std::string& path);

}  // namespace hmrl
