#pragma once

#include <array>
#include <span>
#include <vector>

#include "numblocks/env.hpp"
#include "numblocks/harness/checkpoint.hpp"
#include "numblocks/nn/distributions.hpp"
#include "numblocks/ppo.hpp"

namespace numblocks::harness {

struct NumberResult {
  int number = 0;
  double reward = 0.0;  // cumulative over the episode
  bool solved = false;
  int steps = 0;
};

struct RangeStat {
  int start = 0;  // 0, 100, ..., 900
  int end = 0;    // start + 99
  double mean_reward = 0.0;  // NaN when n == 0
  int n = 0;
};

inline constexpr int kNumRanges = 10;

struct EvalReport {
  std::vector<NumberResult> results;
  std::array<RangeStat, kNumRanges> ranges{};
  double mean_reward = 0.0;
  double success_rate = 0.0;
};

EvalReport summarize(std::vector<NumberResult> results);

// One episode per number. Greedy mode takes the argmax action; otherwise actions are sampled from `rng`.
EvalReport evaluate(const ppo::Agent& agent, std::span<const int> numbers, const ppo::ObservationEncoder& encoder,
                    env::RewardMode mode = env::RewardMode::Dense, bool greedy = true, nn::Rng* rng = nullptr);

// Checks compatibility first; never modifies the checkpoint.
EvalReport evaluate(const Checkpoint& ck, std::span<const int> numbers, bool greedy = true, nn::Rng* rng = nullptr);

}  // namespace numblocks::harness
