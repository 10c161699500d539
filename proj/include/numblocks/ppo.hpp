#pragma once

#include <cstdint>
#include <optional>
#include <ostream>
#include <span>
#include <string>
#include <vector>

#include "numblocks/curriculum.hpp"
#include "numblocks/env.hpp"
#include "numblocks/instructions.hpp"
#include "numblocks/models.hpp"
#include "numblocks/nn/distributions.hpp"
#include "numblocks/nn/graph.hpp"
#include "numblocks/nn/params.hpp"

namespace numblocks::ppo {

struct Transition {
  models::Observation observation;
  env::Action action = env::Action::PickHundred;
  double reward = 0.0;
  bool done = false;
  double value = 0.0;
  double log_prob_old = 0.0;

  bool operator==(const Transition&) const = default;
};

struct RolloutBuffer {
  std::vector<Transition> transitions;
  double bootstrap_value = 0.0;  // v of the state after the last transition; 0 when that was terminal
  std::vector<double> advantages;
  std::vector<double> returns;

  std::size_t size() const { return transitions.size(); }
  bool operator==(const RolloutBuffer&) const = default;
};

struct PpoConfig {
  double gamma = 0.99;
  double lam = 0.95;
  double value_coef = 0.5;
  double policy_coef = 1.0;
  double entropy_coef = 0.01;
  std::optional<double> clip_epsilon = 0.2;
  int epochs = 4;
  int minibatch_size = 64;
  int horizon = 512;
  bool normalize_advantages = true;
  std::optional<double> max_grad_norm = 0.5;

  void validate() const;
  bool operator==(const PpoConfig&) const = default;
};

struct UpdateStats {
  double loss = 0.0;
  double actor_loss = 0.0;   // -mean surrogate
  double critic_loss = 0.0;  // mean squared return error
  double entropy = 0.0;
  double mean_ratio = 0.0;
  double clip_fraction = 0.0;
};

// Fills buffer.advantages and buffer.returns. No bootstrapping across a done flag.
void compute_gae(RolloutBuffer& buffer, double gamma, double lam);

struct ActionChoice {
  env::Action action = env::Action::PickHundred;
  double log_prob = 0.0;
  double value = 0.0;
};

class Agent {
 public:
  virtual ~Agent() = default;
  virtual ActionChoice sample(const env::EnvState& state, const models::Observation& obs, nn::Rng& rng) const = 0;
  virtual env::Action greedy(const env::EnvState& state, const models::Observation& obs) const = 0;
  virtual double value(const models::Observation& obs) const = 0;
};

class ModelAgent final : public Agent {
 public:
  explicit ModelAgent(const models::Model& model) : model_(&model) {}
  ActionChoice sample(const env::EnvState& state, const models::Observation& obs, nn::Rng& rng) const override;
  env::Action greedy(const env::EnvState& state, const models::Observation& obs) const override;
  double value(const models::Observation& obs) const override;

 private:
  const models::Model* model_;
};

// Scripted optimal play; reports log_prob 0 and value 0.
class OracleAgent final : public Agent {
 public:
  ActionChoice sample(const env::EnvState& state, const models::Observation& obs, nn::Rng& rng) const override;
  env::Action greedy(const env::EnvState& state, const models::Observation& obs) const override;
  double value(const models::Observation& obs) const override;
};

struct ObservationEncoder {
  instr::InstructionMode mode = instr::InstructionMode::PolicyBased;
  const instr::Vocabulary* vocab = &instr::default_vocabulary();

  std::string text(const env::EnvState& state) const;
  models::Observation encode(const env::EnvState& state) const;
};

// Walks a curriculum schedule one episode after another. Episodes may span rollouts.
class EpisodeStream {
 public:
  EpisodeStream(curriculum::CurriculumSchedule schedule, env::RewardMode mode, ObservationEncoder encoder);

  // True once every scheduled episode has finished.
  bool exhausted() const { return !current_ && next_ >= schedule_.total_episodes(); }
  // Starts the next scheduled episode if none is running.
  const env::EnvState& current();
  void advance(env::EnvState next);

  const ObservationEncoder& encoder() const { return encoder_; }
  const curriculum::CurriculumSchedule& schedule() const { return schedule_; }
  env::RewardMode reward_mode() const { return mode_; }
  std::int64_t frames() const { return frames_; }
  std::int64_t episodes_started() const { return next_; }
  std::int64_t episodes_finished() const { return finished_; }

 private:
  curriculum::CurriculumSchedule schedule_;
  env::RewardMode mode_;
  ObservationEncoder encoder_;
  std::optional<env::EnvState> current_;
  std::int64_t next_ = 0;
  std::int64_t finished_ = 0;
  std::int64_t frames_ = 0;
};

// Up to `horizon` transitions; fewer only when the schedule runs out. Debug lines carry the instruction text.
RolloutBuffer collect_rollout(const Agent& agent, EpisodeStream& stream, int horizon, nn::Rng& rng,
                              std::ostream* debug = nullptr);

struct Minibatch {
  std::vector<const Transition*> transitions;
  std::vector<double> advantages;
  std::vector<double> returns;
};

Minibatch make_minibatch(const RolloutBuffer& buffer, std::span<const std::size_t> indices);

struct LossGraph {
  nn::Var loss;
  nn::Var actor;    // mean surrogate (before the sign and coefficient)
  nn::Var critic;   // mean squared error
  nn::Var entropy;  // mean policy entropy
  nn::Var ratio;    // [B]
};

LossGraph ppo_loss(nn::Tape& tape, const models::Model& model, const Minibatch& batch, const PpoConfig& cfg);

// `epochs` passes of shuffled minibatches with one Adam step each; stats come from the final epoch.
UpdateStats update(models::Model& model, const RolloutBuffer& buffer, const PpoConfig& cfg,
                   const nn::AdamConfig& adam, nn::Rng& rng);

}  // namespace numblocks::ppo
