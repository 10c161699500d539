#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include <json.hpp>

#include "numblocks/curriculum.hpp"
#include "numblocks/env.hpp"
#include "numblocks/instructions.hpp"
#include "numblocks/models.hpp"
#include "numblocks/nn/params.hpp"
#include "numblocks/ppo.hpp"

namespace numblocks::harness {

using Json = nlohmann::ordered_json;

struct CurriculumConfig {
  curriculum::OrderingStrategy ordering = curriculum::TaskEase{};
  int block_size = 10;
  int episodes_per_number = 500;
  int max_actions = 10;

  bool operator==(const CurriculumConfig&) const;
};

struct AbortRule {
  std::int64_t after_frames = 0;
  double min_avg_reward = 0.0;

  bool operator==(const AbortRule&) const = default;
};

struct TrainConfig {
  models::ModelKind model = models::ModelKind::DenseLanguage;
  models::ModelConfig model_config;
  instr::InstructionMode instructions = instr::InstructionMode::PolicyBased;
  env::RewardMode reward_mode = env::RewardMode::Dense;
  CurriculumConfig curriculum;
  ppo::PpoConfig ppo;
  nn::AdamConfig adam;
  std::vector<std::uint64_t> seeds = {0, 1, 2};
  std::int64_t eval_interval_frames = 50000;
  std::optional<std::int64_t> max_frames;
  std::optional<AbortRule> abort;
  std::optional<std::string> output_dir;

  void validate() const;
  bool operator==(const TrainConfig&) const;
};

// Missing keys keep their defaults; unknown keys and bad values raise ConfigError.
TrainConfig config_from_json(const Json& j);
Json config_to_json(const TrainConfig& cfg);

TrainConfig load_config(const std::filesystem::path& path);

// Flag > config file > NUMBLOCKS_OUT > "runs".
std::filesystem::path resolve_output_dir(const std::optional<std::string>& flag, const TrainConfig& cfg);

}  // namespace numblocks::harness
