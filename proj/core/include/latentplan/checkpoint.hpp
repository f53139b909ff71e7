#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <stdexcept>
#include <string>
#include <vector>

#include "latentplan/nnet.hpp"

namespace latentplan::checkpoint {

// Unreadable, corrupted, or incompatible checkpoint files.
struct CheckpointError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

inline constexpr uint32_t kFormatVersion = 1;

// Everything needed to resume or evaluate a training run. The
// architecture descriptor is an opaque string (canonical JSON in
// practice); load can verify it against an expected value so weights
// never silently flow into a differently shaped model.
struct Snapshot {
  std::string arch;
  std::vector<double> params;
  nnet::OptimizerState opt;
  std::array<uint64_t, 6> rng_state{};
  uint64_t training_step = 0;
};

// Little-endian binary container: magic, format version, payload,
// FNV-1a hash of the payload. Writing the same snapshot twice produces
// identical bytes.
void save(const std::filesystem::path& path, const Snapshot& snap);

// Rejects wrong magic, unsupported versions, and any payload whose
// hash does not match (truncation included) without returning partial
// state.
Snapshot load(const std::filesystem::path& path);

// As load(), then verifies the stored architecture descriptor equals
// `expected_arch`.
Snapshot load(const std::filesystem::path& path,
              const std::string& expected_arch);

}  // namespace latentplan::checkpoint
