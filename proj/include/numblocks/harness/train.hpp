#pragma once

#include <cstdint>
#include <ostream>
#include <string_view>
#include <vector>

#include "numblocks/harness/checkpoint.hpp"
#include "numblocks/harness/config.hpp"
#include "numblocks/harness/evaluate.hpp"

namespace numblocks::harness {

enum class RunStatus : std::uint8_t { Completed, Aborted };

std::string_view to_string(RunStatus s);

struct CurvePoint {
  std::int64_t frames = 0;
  std::uint64_t seed = 0;
  double mean_reward = 0.0;  // greedy, over the training set
  double success_rate = 0.0;

  bool operator==(const CurvePoint&) const = default;
};

struct TrainResult {
  Checkpoint checkpoint;
  std::vector<CurvePoint> curve;
  RunStatus status = RunStatus::Completed;
  EvalReport final_eval;  // training set at the last curve point
  int updates = 0;
};

// Runs rollout/update cycles until the schedule is exhausted, max_frames is reached, or the abort
// rule fires. The training set is greedily evaluated whenever another eval_interval_frames have
// passed and once more at the end.
TrainResult train(const TrainConfig& cfg, std::uint64_t seed, std::ostream* log = nullptr,
                  std::ostream* rollout_debug = nullptr);

}  // namespace numblocks::harness
