#include <doctest.h>

#include <cmath>
#include <numeric>
#include <sstream>

#include "numblocks/errors.hpp"
#include "numblocks/nn/gradcheck.hpp"
#include "numblocks/ppo.hpp"
#include "oracles.hpp"

using namespace numblocks;
using namespace numblocks::ppo;

namespace {

RolloutBuffer random_episodes(std::size_t n, std::uint64_t seed, bool end_done) {
  nn::Rng rng(seed);
  RolloutBuffer b;
  for (std::size_t i = 0; i < n; ++i) {
    Transition tr;
    tr.reward = 2.0 * nn::uniform01(rng) - 1.0;
    tr.value = 2.0 * nn::uniform01(rng) - 1.0;
    tr.done = nn::uniform01(rng) < 0.25;
    b.transitions.push_back(tr);
  }
  if (end_done) b.transitions.back().done = true;
  b.bootstrap_value = end_done ? 0.0 : 0.37;
  return b;
}

EpisodeStream stream_over(std::vector<int> numbers, int block, int episodes,
                          instr::InstructionMode mode = instr::InstructionMode::PolicyBased) {
  return EpisodeStream(curriculum::CurriculumSchedule(std::move(numbers), block, episodes), env::RewardMode::Dense,
                       ObservationEncoder{mode, &instr::default_vocabulary()});
}

models::Model dense_model(std::uint64_t seed, double jitter) {
  models::Model m = models::build_model(models::ModelKind::DenseLanguage, instr::default_vocabulary(), {}, seed);
  nn::Rng rng(seed + 100);
  for (auto& p : m.params.params()) {
    if (p.name == "tokens.table") continue;
    for (double& x : p.value.data()) x += (2.0 * nn::uniform01(rng) - 1.0) * jitter;
  }
  return m;
}

RolloutBuffer model_rollout(const models::Model& m, int horizon, std::uint64_t seed, const PpoConfig& cfg) {
  EpisodeStream s = stream_over({3, 12, 101, 7}, 2, 40);
  nn::Rng rng(seed);
  RolloutBuffer b = collect_rollout(ModelAgent(m), s, horizon, rng);
  compute_gae(b, cfg.gamma, cfg.lam);
  return b;
}

std::vector<std::size_t> all_indices(const RolloutBuffer& b) {
  std::vector<std::size_t> idx(b.size());
  std::iota(idx.begin(), idx.end(), 0);
  return idx;
}

double kl_to_uniform(const models::Model& m, const RolloutBuffer& b) {
  double kl = 0.0;
  for (const auto& tr : b.transitions) {
    const auto pv = models::policy_value(m, tr.observation);
    for (std::size_t a = 0; a < pv.probs.size(); ++a) kl += pv.probs[a] * (pv.log_probs[a] + std::log(6.0));
  }
  return kl / double(b.size());
}

}  // namespace

TEST_CASE("gae examples") {
  RolloutBuffer one;
  one.transitions.push_back(Transition{{}, env::Action::PlaceUnit, 1.0, true, 0.5, 0.0});
  for (double g : {0.0, 0.5, 0.99})
    for (double l : {0.0, 0.7, 1.0}) {
      compute_gae(one, g, l);
      CHECK(one.advantages[0] == 0.5);
      CHECK(one.returns[0] == 1.0);
    }
}

TEST_CASE("gae reductions") {
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    RolloutBuffer b = random_episodes(40, seed, seed % 2 == 0);
    const double gamma = 0.9 + 0.005 * double(seed);
    compute_gae(b, gamma, 0.0);
    for (std::size_t t = 0; t < b.size(); ++t) {
      const double next = t + 1 < b.size() ? b.transitions[t + 1].value : b.bootstrap_value;
      const double delta = b.transitions[t].reward + gamma * next * (b.transitions[t].done ? 0.0 : 1.0) -
                           b.transitions[t].value;
      CHECK(std::abs(b.advantages[t] - delta) <= 1e-12);
      CHECK(std::abs(b.returns[t] - (delta + b.transitions[t].value)) <= 1e-12);
    }
    if (seed % 2 != 0) continue;
    compute_gae(b, gamma, 1.0);
    std::vector<double> rewards;
    std::vector<bool> done;
    for (const auto& tr : b.transitions) {
      rewards.push_back(tr.reward);
      done.push_back(tr.done);
    }
    for (std::size_t t = 0; t < b.size(); ++t) {
      const double expect = oracles::discounted_return(rewards, done, t, gamma) - b.transitions[t].value;
      CHECK(std::abs(b.advantages[t] - expect) <= 1e-12);
    }
  }
}

TEST_CASE("rollout length and oracle play") {
  EpisodeStream s = stream_over({1}, 1, 3);
  nn::Rng rng(0);
  const RolloutBuffer b = collect_rollout(OracleAgent{}, s, 5, rng);
  REQUIRE(b.size() == 5);
  bool solved = false;
  for (const auto& tr : b.transitions) solved = solved || (tr.done && tr.reward == 1.1);
  CHECK(solved);
  CHECK(b.transitions[0].action == env::Action::PickUnit);
  CHECK(b.transitions[1].done);
  CHECK_FALSE(b.transitions[4].done);
  CHECK(s.frames() == 5);
  CHECK(s.episodes_finished() == 2);

  // Episodes run across rollouts; the stream ends with the final scheduled episode.
  const RolloutBuffer rest = collect_rollout(OracleAgent{}, s, 5, rng);
  CHECK(rest.size() == 1);
  CHECK(rest.transitions[0].done);
  CHECK(s.exhausted());
  CHECK(rest.bootstrap_value == 0.0);
}

TEST_CASE("rollouts are exactly the horizon and reproducible") {
  const models::Model m = dense_model(1, 0.2);
  for (int horizon : {1, 7, 64}) {
    EpisodeStream s1 = stream_over({3, 12, 101, 7}, 2, 40);
    EpisodeStream s2 = stream_over({3, 12, 101, 7}, 2, 40);
    nn::Rng r1(9), r2(9);
    std::ostringstream log;
    const RolloutBuffer a = collect_rollout(ModelAgent(m), s1, horizon, r1, &log);
    const RolloutBuffer b = collect_rollout(ModelAgent(m), s2, horizon, r2);
    CHECK(a.size() == static_cast<std::size_t>(horizon));
    CHECK(a == b);
    for (const auto& tr : a.transitions) CHECK(tr.log_prob_old <= 0.0);
    const std::string text = log.str();
    CHECK(std::count(text.begin(), text.end(), '\n') == horizon);
    CHECK(text.find("| this is three . pick up a unit block") != std::string::npos);
  }
}

TEST_CASE("config validation") {
  PpoConfig c;
  c.minibatch_size = c.horizon + 1;
  CHECK_THROWS_AS(c.validate(), ConfigError);
  c = {};
  c.lam = 1.5;
  CHECK_THROWS_AS(c.validate(), ConfigError);
  c = {};
  c.entropy_coef = -0.1;
  CHECK_THROWS_AS(c.validate(), ConfigError);
  c = {};
  c.clip_epsilon = 0.0;
  CHECK_THROWS_AS(c.validate(), ConfigError);

  const models::Model m = dense_model(1, 0.1);
  PpoConfig small;
  small.horizon = 8;
  small.minibatch_size = 9;
  RolloutBuffer b = model_rollout(m, 8, 1, PpoConfig{});
  models::Model copy = m;
  nn::Rng rng(0);
  CHECK_THROWS_AS(update(copy, b, small, {}, rng), ConfigError);
}

TEST_CASE("loss terms before any update") {
  const models::Model fresh = models::build_model(models::ModelKind::DenseLanguage, instr::default_vocabulary(), {}, 4);
  PpoConfig cfg;
  cfg.normalize_advantages = false;
  const RolloutBuffer b = model_rollout(fresh, 32, 3, cfg);
  const Minibatch mb = make_minibatch(b, all_indices(b));
  nn::Tape t;
  const LossGraph g = ppo_loss(t, fresh, mb, cfg);
  for (double r : t.value(g.ratio).data()) CHECK(std::abs(r - 1.0) <= 1e-12);
  const double mean_adv = std::accumulate(b.advantages.begin(), b.advantages.end(), 0.0) / double(b.size());
  CHECK(std::abs(t.value(g.actor).item() - mean_adv) <= 1e-12);
  CHECK(std::abs(t.value(g.entropy).item() - std::log(6.0)) <= 1e-12);
  double mse = 0.0;
  for (double r : b.returns) mse += r * r;
  CHECK(std::abs(t.value(g.critic).item() - mse / double(b.size())) <= 1e-12);
  const double expect = cfg.value_coef * mse / double(b.size()) - cfg.policy_coef * mean_adv -
                        cfg.entropy_coef * std::log(6.0);
  CHECK(std::abs(t.value(g.loss).item() - expect) <= 1e-12);

  // A value head that reproduces the returns leaves no critic loss.
  RolloutBuffer fitted = b;
  for (std::size_t i = 0; i < fitted.size(); ++i) fitted.returns[i] = 0.0;
  nn::Tape t2;
  CHECK(t2.value(ppo_loss(t2, fresh, make_minibatch(fitted, all_indices(fitted)), cfg).critic).item() == 0.0);

  // Normalized advantages have zero mean, so the actor term vanishes at ratio 1.
  cfg.normalize_advantages = true;
  nn::Tape t3;
  CHECK(std::abs(t3.value(ppo_loss(t3, fresh, mb, cfg).actor).item()) <= 1e-12);
}

TEST_CASE("clipped surrogate is pessimistic") {
  models::Model m = dense_model(2, 0.3);
  PpoConfig cfg;
  cfg.normalize_advantages = false;
  const RolloutBuffer b = model_rollout(m, 48, 5, cfg);
  nn::Rng rng(1);
  PpoConfig push = cfg;
  push.max_grad_norm.reset();
  for (int i = 0; i < 3; ++i) update(m, b, push, nn::AdamConfig{0.05}, rng);

  PpoConfig unclipped = cfg;
  unclipped.clip_epsilon.reset();
  std::size_t moved = 0;
  for (std::size_t i = 0; i < b.size(); ++i) {
    const std::vector<std::size_t> one{i};
    const Minibatch mb = make_minibatch(b, one);
    nn::Tape tc, tu;
    const LossGraph c = ppo_loss(tc, m, mb, cfg);
    const LossGraph u = ppo_loss(tu, m, mb, unclipped);
    CHECK(tc.value(c.actor).item() <= tu.value(u.actor).item());
    const double r = tc.value(c.ratio).item();
    if (std::abs(r - 1.0) > 0.2) {
      ++moved;
      const bool should_clip = (b.advantages[i] > 0) == (r > 1.0);
      const double expect = should_clip ? std::clamp(r, 0.8, 1.2) * b.advantages[i] : r * b.advantages[i];
      CHECK(std::abs(tc.value(c.actor).item() - expect) <= 1e-12);
    }
  }
  CHECK(moved > 0);
}

TEST_CASE("update gradient matches finite differences") {
  PpoConfig cfg;
  cfg.clip_epsilon.reset();
  cfg.max_grad_norm.reset();
  cfg.epochs = 1;
  cfg.horizon = 24;
  cfg.minibatch_size = 24;
  for (double jitter : {0.0, 0.2}) {
    models::Model m = dense_model(6, jitter);
    const RolloutBuffer b = model_rollout(m, cfg.horizon, 8, cfg);
    REQUIRE(b.size() == 24);
    const Minibatch mb = make_minibatch(b, all_indices(b));
    const nn::LossFn loss = [&](nn::Tape& t) { return ppo_loss(t, m, mb, cfg).loss; };
    const nn::GradcheckReport rep = nn::gradcheck(m.params, loss, 1e-5, 40, 1e-6);
    CAPTURE(rep.worst_parameter);
    CHECK(rep.max_rel_error <= 1e-4);

    // With beta1 = beta2 = 0 one Adam step moves each weight by lr * g / (|g| + eps), which is linear
    // enough in g at a huge eps to expose the gradient the update used.
    nn::Tape t;
    t.backward(loss(t));
    const nn::Gradients g = t.parameter_gradients(m.params);
    const nn::AdamConfig adam{1e6, 0.0, 0.0, 1e6};
    models::Model stepped = m;
    nn::Rng rng(3);
    update(stepped, b, cfg, adam, rng);
    double worst = 0.0;
    for (std::size_t p = 0; p < g.size(); ++p)
      for (std::size_t i = 0; i < g[p].size(); ++i) {
        const double moved = m.params.params()[p].value[i] - stepped.params.params()[p].value[i];
        const double expect = adam.lr * g[p][i] / (std::abs(g[p][i]) + adam.eps);
        worst = std::max(worst, std::abs(moved - expect));
      }
    CHECK(worst <= 1e-12);
  }
}

TEST_CASE("critic regression decreases the value loss") {
  models::Model m = dense_model(3, 0.1);
  PpoConfig cfg;
  cfg.policy_coef = 0.0;
  cfg.entropy_coef = 0.0;
  cfg.epochs = 1;
  cfg.horizon = 32;
  cfg.minibatch_size = 32;
  const RolloutBuffer b = model_rollout(m, 32, 2, cfg);
  nn::Rng rng(0);
  double prev = std::numeric_limits<double>::infinity();
  for (int i = 0; i < 30; ++i) {
    const UpdateStats s = update(m, b, cfg, nn::AdamConfig{1e-4}, rng);
    CHECK(s.critic_loss < prev);
    prev = s.critic_loss;
    CHECK(s.entropy >= 0.0);
    CHECK(s.entropy <= std::log(6.0) + 1e-12);
  }
}

TEST_CASE("entropy bonus drives the policy toward uniform") {
  models::Model m = dense_model(4, 0.6);
  PpoConfig cfg;
  cfg.policy_coef = 0.0;
  cfg.value_coef = 0.0;
  cfg.entropy_coef = 1.0;
  cfg.epochs = 1;
  cfg.horizon = 32;
  cfg.minibatch_size = 32;
  const RolloutBuffer b = model_rollout(m, 32, 4, cfg);
  nn::Rng rng(0);
  const double start = kl_to_uniform(m, b);
  REQUIRE(start > 0.05);
  double prev = start;
  for (int i = 0; i < 100; ++i) {
    update(m, b, cfg, nn::AdamConfig{1e-3}, rng);
    if (i % 10 == 9) {
      const double kl = kl_to_uniform(m, b);
      CHECK(kl < prev);
      prev = kl;
    }
  }
  CHECK(prev < 0.5 * start);
}

TEST_CASE("updates are deterministic") {
  const models::Model base = dense_model(5, 0.2);
  PpoConfig cfg;
  cfg.horizon = 40;
  cfg.minibatch_size = 16;
  const RolloutBuffer b = model_rollout(base, 40, 6, cfg);
  models::Model a = base, c = base;
  nn::Rng ra(7), rc(7);
  const UpdateStats sa = update(a, b, cfg, {}, ra);
  const UpdateStats sc = update(c, b, cfg, {}, rc);
  CHECK(a.params == c.params);
  CHECK(sa.loss == sc.loss);
  CHECK(sa.clip_fraction == sc.clip_fraction);
  CHECK(a.params.step() == 4 * 3);
}
