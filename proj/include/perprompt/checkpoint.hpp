#pragma once

// Versioned binary checkpoint: a JSON header followed by raw little-endian
// float64 tensors. Saving and loading round-trips every value bit-exactly.

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <string>

#include "perprompt/dataset.hpp"
#include "perprompt/refiner.hpp"

namespace perprompt {

inline constexpr std::uint32_t kCheckpointVersion = 1;

struct Checkpoint {
  ModelParams params;
  AdamState adam;
  std::string rng_state;         // textual state of the run-level engine
  std::string template_version;
  std::size_t embedding_dim = 0;
  std::size_t target_visits = 0;
  NormalizationStats normalization;
  std::uint64_t epoch = 0;       // epoch whose parameters are stored (0 = initialization)

  friend bool operator==(const Checkpoint&, const Checkpoint&) = default;
};

void save_checkpoint(const Checkpoint& checkpoint, const std::filesystem::path& path);
Checkpoint load_checkpoint(const std::filesystem::path& path);

}  // namespace perprompt
