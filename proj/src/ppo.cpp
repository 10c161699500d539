#include "numblocks/ppo.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include <fmt/format.h>

#include "numblocks/errors.hpp"

namespace numblocks::ppo {

void PpoConfig::validate() const {
  auto unit = [](double v, std::string_view what) {
    if (!(v >= 0.0 && v <= 1.0)) throw ConfigError(fmt::format("ppo {} must lie in [0, 1] (got {})", what, v));
  };
  auto nonneg = [](double v, std::string_view what) {
    if (!(v >= 0.0)) throw ConfigError(fmt::format("ppo {} must be >= 0 (got {})", what, v));
  };
  unit(gamma, "gamma");
  unit(lam, "lam");
  nonneg(value_coef, "value_coef");
  nonneg(policy_coef, "policy_coef");
  nonneg(entropy_coef, "entropy_coef");
  if (clip_epsilon && !(*clip_epsilon > 0.0)) throw ConfigError("ppo clip_epsilon must be > 0 when set");
  if (max_grad_norm && !(*max_grad_norm > 0.0)) throw ConfigError("ppo max_grad_norm must be > 0 when set");
  if (epochs < 1) throw ConfigError("ppo epochs must be >= 1");
  if (horizon < 1) throw ConfigError("ppo horizon must be >= 1");
  if (minibatch_size < 1) throw ConfigError("ppo minibatch_size must be >= 1");
  if (minibatch_size > horizon) {
    throw ConfigError(fmt::format("ppo minibatch_size ({}) exceeds horizon ({})", minibatch_size, horizon));
  }
}

void compute_gae(RolloutBuffer& buffer, double gamma, double lam) {
  const auto& tr = buffer.transitions;
  const std::size_t n = tr.size();
  buffer.advantages.assign(n, 0.0);
  buffer.returns.assign(n, 0.0);
  double next_value = buffer.bootstrap_value;
  double next_adv = 0.0;
  for (std::size_t i = n; i-- > 0;) {
    const double live = tr[i].done ? 0.0 : 1.0;
    const double delta = tr[i].reward + gamma * next_value * live - tr[i].value;
    next_adv = delta + gamma * lam * live * next_adv;
    buffer.advantages[i] = next_adv;
    buffer.returns[i] = next_adv + tr[i].value;
    next_value = tr[i].value;
  }
}

ActionChoice ModelAgent::sample(const env::EnvState&, const models::Observation& obs, nn::Rng& rng) const {
  const auto pv = models::policy_value(*model_, obs);
  const auto draw = nn::sample_categorical(pv.probs, rng);
  return {env::action_from_index(draw.index), pv.log_probs[static_cast<std::size_t>(draw.index)], pv.value};
}

env::Action ModelAgent::greedy(const env::EnvState&, const models::Observation& obs) const {
  return env::action_from_index(nn::argmax(models::policy_value(*model_, obs).probs));
}

double ModelAgent::value(const models::Observation& obs) const { return models::policy_value(*model_, obs).value; }

ActionChoice OracleAgent::sample(const env::EnvState& state, const models::Observation&, nn::Rng&) const {
  return {env::oracle_action(state), 0.0, 0.0};
}

env::Action OracleAgent::greedy(const env::EnvState& state, const models::Observation&) const {
  return env::oracle_action(state);
}

double OracleAgent::value(const models::Observation&) const { return 0.0; }

std::string ObservationEncoder::text(const env::EnvState& state) const { return instr::instruction(state, mode); }

models::Observation ObservationEncoder::encode(const env::EnvState& state) const {
  return {env::render_grid(state), instr::tokenize(text(state), *vocab)};
}

EpisodeStream::EpisodeStream(curriculum::CurriculumSchedule schedule, env::RewardMode mode,
                             ObservationEncoder encoder)
    : schedule_(std::move(schedule)), mode_(mode), encoder_(encoder) {}

const env::EnvState& EpisodeStream::current() {
  if (!current_) {
    if (exhausted()) throw UsageError("episode stream: schedule exhausted");
    current_ = env::new_episode(curriculum::schedule_number(schedule_, next_), mode_);
    ++next_;
  }
  return *current_;
}

void EpisodeStream::advance(env::EnvState next) {
  ++frames_;
  if (next.running()) {
    current_ = std::move(next);
  } else {
    current_.reset();
    ++finished_;
  }
}

RolloutBuffer collect_rollout(const Agent& agent, EpisodeStream& stream, int horizon, nn::Rng& rng,
                              std::ostream* debug) {
  RolloutBuffer buf;
  buf.transitions.reserve(static_cast<std::size_t>(horizon));
  for (int t = 0; t < horizon && !stream.exhausted(); ++t) {
    const env::EnvState state = stream.current();
    models::Observation obs = stream.encoder().encode(state);
    const ActionChoice choice = agent.sample(state, obs, rng);
    auto [next, outcome] = env::step(state, choice.action);
    if (debug) {
      *debug << fmt::format("{} target={} action={} reward={} reason={} | {}\n", stream.frames(), state.target,
                            env::to_string(choice.action), outcome.reward, env::to_string(outcome.reason),
                            stream.encoder().text(state));
    }
    buf.transitions.push_back(
        Transition{std::move(obs), choice.action, outcome.reward, outcome.done, choice.value, choice.log_prob});
    stream.advance(std::move(next));
  }
  if (!buf.transitions.empty() && !buf.transitions.back().done) {
    buf.bootstrap_value = agent.value(stream.encoder().encode(stream.current()));
  }
  return buf;
}

Minibatch make_minibatch(const RolloutBuffer& buffer, std::span<const std::size_t> indices) {
  if (buffer.advantages.size() != buffer.size() || buffer.returns.size() != buffer.size()) {
    throw UsageError("make_minibatch: advantages not computed");
  }
  Minibatch mb;
  for (std::size_t i : indices) {
    mb.transitions.push_back(&buffer.transitions.at(i));
    mb.advantages.push_back(buffer.advantages[i]);
    mb.returns.push_back(buffer.returns[i]);
  }
  return mb;
}

LossGraph ppo_loss(nn::Tape& t, const models::Model& model, const Minibatch& batch, const PpoConfig& cfg) {
  const std::size_t b = batch.transitions.size();
  if (b == 0 || batch.advantages.size() != b || batch.returns.size() != b) {
    throw DomainError("ppo_loss: empty or inconsistent minibatch");
  }
  std::vector<const models::Observation*> obs;
  std::vector<int> actions;
  nn::Tensor old_logp({b});
  for (std::size_t i = 0; i < b; ++i) {
    obs.push_back(&batch.transitions[i]->observation);
    actions.push_back(env::action_index(batch.transitions[i]->action));
    old_logp[i] = batch.transitions[i]->log_prob_old;
  }

  nn::Tensor adv({b}, batch.advantages);
  if (cfg.normalize_advantages) {
    const double mean = std::accumulate(batch.advantages.begin(), batch.advantages.end(), 0.0) / double(b);
    double var = 0.0;
    for (double a : batch.advantages) var += (a - mean) * (a - mean);
    const double sd = std::max(std::sqrt(var / double(b)), 1e-8);
    for (std::size_t i = 0; i < b; ++i) adv[i] = (batch.advantages[i] - mean) / sd;
  }

  const models::Heads heads = models::forward(t, model, obs);
  const nn::Var logp = nn::log_softmax_rows(t, heads.logits);
  const nn::Var logp_taken = nn::gather_cols(t, logp, actions);
  const nn::Var ratio = nn::exp(t, nn::sub(t, logp_taken, t.constant(std::move(old_logp))));
  const nn::Var a = t.constant(std::move(adv));
  nn::Var surrogate = nn::mul(t, ratio, a);
  if (cfg.clip_epsilon) {
    const double eps = *cfg.clip_epsilon;
    surrogate = nn::minimum(t, surrogate, nn::mul(t, nn::clamp(t, ratio, 1.0 - eps, 1.0 + eps), a));
  }
  const nn::Var actor = nn::mean(t, surrogate);

  const nn::Var probs = nn::softmax_rows(t, heads.logits);
  const nn::Var entropy = nn::mean(t, nn::scale(t, nn::row_sum(t, nn::mul(t, probs, logp)), -1.0));

  const nn::Var critic =
      nn::mean(t, nn::square(t, nn::sub(t, t.constant(nn::Tensor({b}, batch.returns)), heads.value)));

  const nn::Var loss = nn::add(t, nn::scale(t, critic, cfg.value_coef),
                               nn::add(t, nn::scale(t, actor, -cfg.policy_coef),
                                       nn::scale(t, entropy, -cfg.entropy_coef)));
  return {loss, actor, critic, entropy, ratio};
}

UpdateStats update(models::Model& model, const RolloutBuffer& buffer, const PpoConfig& cfg,
                   const nn::AdamConfig& adam, nn::Rng& rng) {
  cfg.validate();
  adam.validate();
  const std::size_t n = buffer.size();
  if (n == 0) throw UsageError("update: empty rollout buffer");
  if (buffer.advantages.size() != n) throw UsageError("update: advantages not computed");

  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  const auto mb_size = static_cast<std::size_t>(cfg.minibatch_size);
  UpdateStats stats;
  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    std::shuffle(order.begin(), order.end(), rng);
    const bool last = epoch + 1 == cfg.epochs;
    std::size_t batches = 0;
    UpdateStats sum;
    for (std::size_t start = 0; start < n; start += mb_size) {
      const std::size_t stop = std::min(n, start + mb_size);
      const Minibatch mb = make_minibatch(buffer, std::span(order).subspan(start, stop - start));
      nn::Tape t;
      const LossGraph g = ppo_loss(t, model, mb, cfg);
      t.backward(g.loss);
      nn::Gradients grads = t.parameter_gradients(model.params);
      if (cfg.max_grad_norm) nn::clip_by_global_norm(grads, *cfg.max_grad_norm);
      nn::adam_step(model.params, grads, adam);
      if (last) {
        const nn::Tensor& r = t.value(g.ratio);
        double ratio_sum = 0.0;
        std::size_t clipped = 0;
        for (double x : r.data()) {
          ratio_sum += x;
          if (cfg.clip_epsilon && std::abs(x - 1.0) > *cfg.clip_epsilon) ++clipped;
        }
        sum.loss += t.value(g.loss).item();
        sum.actor_loss += -t.value(g.actor).item();
        sum.critic_loss += t.value(g.critic).item();
        sum.entropy += t.value(g.entropy).item();
        sum.mean_ratio += ratio_sum / double(r.size());
        sum.clip_fraction += double(clipped) / double(r.size());
        ++batches;
      }
    }
    if (last) {
      const double k = double(batches);
      stats = {sum.loss / k, sum.actor_loss / k, sum.critic_loss / k,
               sum.entropy / k, sum.mean_ratio / k, sum.clip_fraction / k};
    }
  }
  return stats;
}

}  // namespace numblocks::ppo
