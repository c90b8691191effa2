#pragma once

// Binary checkpoints, little-endian throughout:
//
//   "SWMP" u32 version
//   u64 model digest, u32 cycle, f64 sparsity, u64 config digest, u64 seed
//   u32 tensor count, then per tensor:
//     u32 name length, name bytes, u32 rank, u32 dims[rank], f32 payload
//   u64 prunable count, packed mask bits (LSB first)
//   u64 FNV-1a checksum of everything before it

#include "swamp/mask.hpp"
#include "swamp/model.hpp"

#include <cstdint>
#include <filesystem>
#include <stdexcept>
#include <string>
#include <vector>

namespace swamp {

inline constexpr std::uint32_t kCheckpointVersion = 1;

class CheckpointError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct NamedTensor {
  std::string name;
  Tensorf value;
};

struct Checkpoint {
  std::uint64_t spec_digest = 0;
  std::uint32_t cycle = 0;
  double sparsity = 0.0;
  std::uint64_t config_digest = 0;
  std::uint64_t seed = 0;
  std::vector<NamedTensor> tensors;
  Mask mask;
};

/// Checkpoint of averaged weights plus optional extra particles stored as "particle{n}.<segment>".
Checkpoint make_checkpoint(const ModelSpec& spec, const ParamVector& params, const Mask& mask, std::uint32_t cycle,
                           std::uint64_t config_digest, std::uint64_t seed,
                           const std::vector<Eigen::VectorXf>& particles = {});

std::vector<std::uint8_t> serialize(const Checkpoint& ckpt);
Checkpoint deserialize(const std::vector<std::uint8_t>& bytes);

void save_checkpoint(const Checkpoint& ckpt, const std::filesystem::path& path);
/// Reads and validates a checkpoint. With `expected` given, refuses a
/// different model-spec digest.
Checkpoint load_checkpoint(const std::filesystem::path& path, const ModelSpec* expected = nullptr);

/// The averaged parameter vector in the model's layout.
ParamVector checkpoint_params(const Checkpoint& ckpt, const ModelSpec& spec);
/// Per-particle parameters stored alongside, in particle order.
std::vector<Eigen::VectorXf> checkpoint_particles(const Checkpoint& ckpt, const ModelSpec& spec);

}  // namespace swamp
