#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <string_view>
#include <vector>

#include "numblocks/harness/config.hpp"
#include "numblocks/models.hpp"

namespace numblocks::harness {

inline constexpr int kCheckpointFormat = 1;

struct Checkpoint {
  int format_version = kCheckpointFormat;
  TrainConfig config;  // output_dir is not recorded
  std::vector<std::string> vocabulary;
  int max_seq_len = 0;
  models::Model model;
  std::int64_t frames = 0;
  std::int64_t episodes = 0;
  std::uint64_t seed = 0;
  std::string rng_state;  // textual std::mt19937_64 state
};

// Parameters and Adam moments are base64 of little-endian float64 arrays.
std::string checkpoint_to_string(const Checkpoint& ck);
Checkpoint checkpoint_from_string(std::string_view text);

void save_checkpoint(const Checkpoint& ck, const std::filesystem::path& path);
Checkpoint load_checkpoint(const std::filesystem::path& path);

// Throws IncompatibleCheckpoint unless the vocabulary equals this build's vocabulary and the stored
// parameters match the names and shapes this build would create for the architecture.
void check_compatible(const Checkpoint& ck);

}  // namespace numblocks::harness
