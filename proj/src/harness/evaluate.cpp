#include "numblocks/harness/evaluate.hpp"

#include <limits>

#include <fmt/format.h>

#include "numblocks/errors.hpp"

namespace numblocks::harness {

EvalReport summarize(std::vector<NumberResult> results) {
  EvalReport rep;
  std::array<double, kNumRanges> sums{};
  for (int i = 0; i < kNumRanges; ++i) rep.ranges[static_cast<std::size_t>(i)] = {100 * i, 100 * i + 99, 0.0, 0};
  double total = 0.0;
  int solved = 0;
  for (const auto& r : results) {
    if (r.number < env::kMinTarget || r.number > env::kMaxTarget) {
      throw DomainError(fmt::format("evaluation number {} outside [1, 999]", r.number));
    }
    const auto bucket = static_cast<std::size_t>(r.number / 100);
    sums[bucket] += r.reward;
    ++rep.ranges[bucket].n;
    total += r.reward;
    solved += r.solved ? 1 : 0;
  }
  for (std::size_t i = 0; i < rep.ranges.size(); ++i) {
    auto& range = rep.ranges[i];
    range.mean_reward = range.n > 0 ? sums[i] / range.n : std::numeric_limits<double>::quiet_NaN();
  }
  const auto n = static_cast<double>(results.size());
  rep.mean_reward = results.empty() ? std::numeric_limits<double>::quiet_NaN() : total / n;
  rep.success_rate = results.empty() ? std::numeric_limits<double>::quiet_NaN() : solved / n;
  rep.results = std::move(results);
  return rep;
}

EvalReport evaluate(const ppo::Agent& agent, std::span<const int> numbers, const ppo::ObservationEncoder& encoder,
                    env::RewardMode mode, bool greedy, nn::Rng* rng) {
  if (!greedy && !rng) throw UsageError("evaluate: sampled evaluation needs an rng");
  std::vector<NumberResult> results;
  results.reserve(numbers.size());
  for (int number : numbers) {
    env::EnvState s = env::new_episode(number, mode);
    NumberResult r{number, 0.0, false, 0};
    while (s.running()) {
      const models::Observation obs = encoder.encode(s);
      const env::Action a = greedy ? agent.greedy(s, obs) : agent.sample(s, obs, *rng).action;
      auto [next, outcome] = env::step(s, a);
      r.reward += outcome.reward;
      s = std::move(next);
    }
    r.solved = s.status == env::Status::Solved;
    r.steps = s.steps_taken;
    results.push_back(r);
  }
  return summarize(std::move(results));
}

EvalReport evaluate(const Checkpoint& ck, std::span<const int> numbers, bool greedy, nn::Rng* rng) {
  check_compatible(ck);
  const ppo::ModelAgent agent(ck.model);
  return evaluate(agent, numbers, ppo::ObservationEncoder{ck.config.instructions, &instr::default_vocabulary()},
                  ck.config.reward_mode, greedy, rng);
}

}  // namespace numblocks::harness
