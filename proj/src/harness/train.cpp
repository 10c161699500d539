#include "numblocks/harness/train.hpp"

#include <algorithm>
#include <sstream>

#include <fmt/format.h>

namespace numblocks::harness {

namespace {

// Rollout sampling and minibatch shuffles use a stream separate from parameter initialization.
constexpr std::uint64_t kTrainStreamOffset = 0x9E3779B97F4A7C15ULL;

std::string rng_text(const nn::Rng& rng) {
  std::ostringstream os;
  os << rng;
  return os.str();
}

}  // namespace

std::string_view to_string(RunStatus s) { return s == RunStatus::Completed ? "completed" : "aborted"; }

TrainResult train(const TrainConfig& cfg, std::uint64_t seed, std::ostream* log, std::ostream* rollout_debug) {
  cfg.validate();
  const auto& vocab = instr::default_vocabulary();
  models::Model model = models::build_model(cfg.model, vocab, cfg.model_config, seed);
  const std::vector<int> train_set = curriculum::build_training_set(cfg.curriculum.max_actions);
  ppo::EpisodeStream stream(
      curriculum::CurriculumSchedule(curriculum::order(train_set, cfg.curriculum.ordering), cfg.curriculum.block_size,
                                     cfg.curriculum.episodes_per_number),
      cfg.reward_mode, ppo::ObservationEncoder{cfg.instructions, &vocab});
  nn::Rng rng(seed + kTrainStreamOffset);
  const ppo::ModelAgent agent(model);

  TrainResult res;
  auto evaluate_now = [&] {
    res.final_eval = evaluate(agent, train_set, stream.encoder(), cfg.reward_mode);
    res.curve.push_back({stream.frames(), seed, res.final_eval.mean_reward, res.final_eval.success_rate});
    if (log) {
      *log << fmt::format("seed {} frames {} episodes {} mean_reward {:.4f} success {:.4f}\n", seed, stream.frames(),
                          stream.episodes_finished(), res.final_eval.mean_reward, res.final_eval.success_rate);
    }
  };

  std::int64_t next_eval = cfg.eval_interval_frames;
  auto budget_left = [&] { return !cfg.max_frames || stream.frames() < *cfg.max_frames; };
  while (!stream.exhausted() && budget_left()) {
    int horizon = cfg.ppo.horizon;
    if (cfg.max_frames) horizon = static_cast<int>(std::min<std::int64_t>(horizon, *cfg.max_frames - stream.frames()));
    ppo::RolloutBuffer buf = ppo::collect_rollout(agent, stream, horizon, rng, rollout_debug);
    ppo::compute_gae(buf, cfg.ppo.gamma, cfg.ppo.lam);
    ppo::update(model, buf, cfg.ppo, cfg.adam, rng);
    ++res.updates;
    if (stream.frames() >= next_eval) {
      evaluate_now();
      while (next_eval <= stream.frames()) next_eval += cfg.eval_interval_frames;
      if (cfg.abort && stream.frames() >= cfg.abort->after_frames &&
          res.final_eval.mean_reward < cfg.abort->min_avg_reward) {
        res.status = RunStatus::Aborted;
        break;
      }
    }
  }
  if (res.curve.empty() || res.curve.back().frames != stream.frames()) evaluate_now();

  Checkpoint& ck = res.checkpoint;
  ck.config = cfg;
  ck.config.output_dir.reset();
  ck.vocabulary = vocab.tokens();
  ck.max_seq_len = vocab.max_seq_len();
  ck.model = std::move(model);
  ck.frames = stream.frames();
  ck.episodes = stream.episodes_finished();
  ck.seed = seed;
  ck.rng_state = rng_text(rng);
  return res;
}

}  // namespace numblocks::harness
