#include <doctest.h>

#include <cmath>
#include <numeric>

#include "numblocks/env.hpp"
#include "numblocks/errors.hpp"
#include "numblocks/models.hpp"
#include "numblocks/nn/gradcheck.hpp"
#include "numblocks/ppo.hpp"

using namespace numblocks;
using namespace numblocks::models;

namespace {

const instr::Vocabulary& vocab() { return instr::default_vocabulary(); }

Observation observe(const env::EnvState& s, instr::InstructionMode mode = instr::InstructionMode::PolicyBased) {
  return ppo::ObservationEncoder{mode, &vocab()}.encode(s);
}

// Independent closed-form counts for the default configuration.
std::size_t dense_count(std::size_t in, std::size_t out) { return in * out + out; }

std::size_t expected_visual() {
  return dense_count(90, 128) + dense_count(128, 128) + dense_count(128, 6) + dense_count(128, 1);
}

std::size_t expected_dense(std::size_t vocab_size, std::size_t h0) {
  return vocab_size * 32 + dense_count(32, h0) + dense_count(h0, 128) + dense_count(128, 6) + dense_count(128, 1);
}

std::size_t expected_attention(std::size_t vocab_size, std::size_t len) {
  const std::size_t d = 32;
  const std::size_t block = 4 * dense_count(d, d) + 2 * (2 * d) + dense_count(d, 64) + dense_count(64, d);
  return vocab_size * d + len * d + 2 * block + dense_count(90, 32) + dense_count(d + 32, 128) +
         dense_count(128, 6) + dense_count(128, 1);
}

// Pushes every head weight away from zero so the trunk influences the outputs.
void train_one_step(Model& m, const std::vector<Observation>& obs) {
  nn::Tape t;
  std::vector<const Observation*> ptrs;
  for (const auto& o : obs) ptrs.push_back(&o);
  const Heads h = forward(t, m, ptrs);
  const nn::Var loss = nn::add(t, nn::sum(t, nn::square(t, nn::add_scalar(t, h.value, -1.0))),
                               nn::scale(t, nn::sum(t, nn::gather_cols(t, nn::log_softmax_rows(t, h.logits),
                                                                        std::vector<int>(obs.size(), 2))),
                                         -1.0));
  t.backward(loss);
  nn::adam_step(m.params, t.parameter_gradients(m.params), nn::AdamConfig{0.05});
}

bool same(const PolicyValue& a, const PolicyValue& b) { return a.probs == b.probs && a.value == b.value; }

void randomize(Model& m, std::uint64_t seed, double scale) {
  nn::Rng rng(seed);
  for (auto& p : m.params.params()) {
    if (p.name == "tokens.table") continue;  // keeps the PAD row at zero
    for (double& x : p.value.data()) {
      const double r = (2.0 * nn::uniform01(rng) - 1.0) * scale;
      x = p.name.ends_with(".gain") ? 1.0 + r : x + r;
    }
  }
}

}  // namespace

TEST_CASE("parameter counts") {
  const auto v = static_cast<std::size_t>(vocab().size());
  const auto len = static_cast<std::size_t>(vocab().max_seq_len());
  const ModelConfig cfg;
  const std::size_t visual = parameter_count(ModelKind::VisualOnly, vocab().size(), vocab().max_seq_len(), cfg);
  const std::size_t dense = parameter_count(ModelKind::DenseLanguage, vocab().size(), vocab().max_seq_len(), cfg);
  const std::size_t attn =
      parameter_count(ModelKind::AttentionVisualLanguage, vocab().size(), vocab().max_seq_len(), cfg);
  CHECK(visual == expected_visual());
  CHECK(attn == expected_attention(v, len));

  // Closest widening of the first dense layer to the attention count, by exhaustive search.
  std::size_t best_h = 128;
  for (std::size_t h = 128; h < 400; ++h) {
    const auto diff = [&](std::size_t w) { return std::llabs(static_cast<long long>(expected_dense(v, w)) -
                                                             static_cast<long long>(attn)); };
    if (diff(h) < diff(best_h)) best_h = h;
  }
  CHECK(dense == expected_dense(v, best_h));
  CHECK(std::abs(static_cast<double>(dense) - static_cast<double>(attn)) <= 0.25 * static_cast<double>(attn));

  ModelConfig raw = cfg;
  raw.parity_target.reset();
  CHECK(parameter_count(ModelKind::DenseLanguage, vocab().size(), vocab().max_seq_len(), raw) ==
        expected_dense(v, 128));
  ModelConfig fixed = cfg;
  fixed.parity_target = static_cast<int>(expected_dense(v, 200));
  CHECK(parameter_count(ModelKind::DenseLanguage, vocab().size(), vocab().max_seq_len(), fixed) ==
        expected_dense(v, 200));

  const Model built = build_model(ModelKind::DenseLanguage, vocab(), cfg, 1);
  CHECK(built.params.scalar_count() == dense);
}

TEST_CASE("deterministic builds") {
  for (ModelKind k : kAllModelKinds) {
    const Model a = build_model(k, vocab(), {}, 42);
    const Model b = build_model(k, vocab(), {}, 42);
    const Model c = build_model(k, vocab(), {}, 43);
    CHECK(a.params == b.params);
    CHECK_FALSE(a.params == c.params);
    const Observation o = observe(env::new_episode(321));
    const auto pa = policy_value(a, o);
    const auto pb = policy_value(b, o);
    CHECK(same(pa, pb));
  }
}

TEST_CASE("fresh models are uniform with zero value") {
  for (ModelKind k : kAllModelKinds) {
    const Model m = build_model(k, vocab(), {}, 7);
    for (int n : {1, 58, 999}) {
      const auto pv = policy_value(m, observe(env::new_episode(n)));
      for (double p : pv.probs) CHECK(std::abs(p - 1.0 / 6.0) <= 1e-15);
      CHECK(pv.value == 0.0);
    }
  }
}

TEST_CASE("policy outputs are valid distributions") {
  for (ModelKind k : kAllModelKinds) {
    Model m = build_model(k, vocab(), {}, 3);
    randomize(m, 9, 0.5);
    for (int n : {7, 250, 999}) {
      const auto pv = policy_value(m, observe(env::new_episode(n)));
      CHECK(std::abs(std::accumulate(pv.probs.begin(), pv.probs.end(), 0.0) - 1.0) <= 1e-12);
      for (std::size_t i = 0; i < pv.probs.size(); ++i) {
        CHECK(pv.probs[i] > 0.0);
        CHECK(std::abs(pv.log_probs[i] - std::log(pv.probs[i])) <= 1e-10);
      }
    }
  }
}

TEST_CASE("information flow") {
  // Same instruction, different grid: the carried block differs but the policy says the same thing.
  const env::EnvState a = env::new_episode(111);
  env::EnvState b = a;
  b.placed = {0, 0, 0};
  env::EnvState c = env::step(env::step(a, env::Action::PickHundred).first, env::Action::PlaceHundred).first;
  // c has a placed hundred; its state text differs from a, and its grid differs too.
  const Observation oa = observe(a);
  Observation grid_only = oa;
  grid_only.grid = env::render_grid(c);
  Observation tokens_only = oa;
  tokens_only.tokens = observe(env::new_episode(222)).tokens;
  Observation pad_changed = oa;
  for (std::size_t i = static_cast<std::size_t>(oa.tokens.true_len); i < oa.tokens.ids.size(); ++i)
    pad_changed.tokens.ids[i] = 5 + static_cast<int>(i % 7);
  REQUIRE(oa.tokens.true_len < vocab().max_seq_len());
  REQUIRE_FALSE(grid_only.grid == oa.grid);
  REQUIRE_FALSE(tokens_only.tokens == oa.tokens);

  const std::vector<Observation> batch{oa, observe(c), observe(env::new_episode(222))};
  for (ModelKind k : kAllModelKinds) {
    Model m = build_model(k, vocab(), {}, 5);
    train_one_step(m, batch);
    const auto base = policy_value(m, oa);
    const bool grid_matters = !same(base, policy_value(m, grid_only));
    const bool tokens_matter = !same(base, policy_value(m, tokens_only));
    CAPTURE(to_string(k));
    switch (k) {
      case ModelKind::VisualOnly:
        CHECK(grid_matters);
        CHECK_FALSE(tokens_matter);
        break;
      case ModelKind::DenseLanguage:
        CHECK_FALSE(grid_matters);
        CHECK(tokens_matter);
        CHECK(same(base, policy_value(m, pad_changed)));
        break;
      case ModelKind::AttentionVisualLanguage:
        CHECK(grid_matters);
        CHECK(tokens_matter);
        CHECK(same(base, policy_value(m, pad_changed)));
        break;
    }
  }
}

TEST_CASE("batch composition does not change outputs") {
  const std::vector<Observation> obs{observe(env::new_episode(7)),
                                     observe(env::new_episode(777), instr::InstructionMode::StateBased),
                                     observe(env::new_episode(40), instr::InstructionMode::NoLanguage)};
  std::vector<const Observation*> ptrs;
  for (const auto& o : obs) ptrs.push_back(&o);
  for (ModelKind k : kAllModelKinds) {
    Model m = build_model(k, vocab(), {}, 21);
    randomize(m, 4, 0.4);
    nn::Tape t;
    const Heads h = forward(t, m, ptrs);
    for (std::size_t i = 0; i < obs.size(); ++i) {
      const auto single = policy_value(m, obs[i]);
      const auto lp = nn::log_softmax(std::span(t.value(h.logits).data()).subspan(6 * i, 6));
      CAPTURE(to_string(k));
      CHECK(t.value(h.value)[i] == single.value);
      for (std::size_t a = 0; a < 6; ++a) CHECK(lp[a] == single.log_probs[a]);
    }
  }
}

TEST_CASE("full-model gradcheck") {
  const std::vector<Observation> batch{observe(env::new_episode(305)),
                                       observe(env::step(env::new_episode(42), env::Action::PickTen).first),
                                       observe(env::new_episode(9), instr::InstructionMode::StateBased)};
  std::vector<const Observation*> ptrs;
  for (const auto& o : batch) ptrs.push_back(&o);
  const std::vector<int> actions{0, 4, 2};
  for (ModelKind k : kAllModelKinds) {
    Model m = build_model(k, vocab(), {}, 13);
    randomize(m, 17, 0.3);
    const nn::LossFn loss = [&](nn::Tape& t) {
      const Heads h = forward(t, m, ptrs);
      const nn::Var lp = nn::gather_cols(t, nn::log_softmax_rows(t, h.logits), actions);
      return nn::add(t, nn::scale(t, nn::mean(t, lp), -1.0),
                     nn::mean(t, nn::square(t, nn::add_scalar(t, h.value, -0.7))));
    };
    // Central differences on a loss of order 1 carry ~1e-11 / h of rounding noise, so gradients that are
    // exactly zero (the key bias shifts every score of a query equally) need a floor above that noise.
    const nn::GradcheckReport rep = nn::gradcheck(m.params, loss, 1e-4, 12, 1e-6);
    CAPTURE(to_string(k));
    CAPTURE(rep.worst_parameter);
    CHECK(rep.max_rel_error <= 1e-4);
    CHECK(rep.checked >= 12 * m.params.size() / 2);

    if (k == ModelKind::AttentionVisualLanguage) {
      nn::Tape t;
      t.backward(loss(t));
      const nn::Gradients g = t.parameter_gradients(m.params);
      const std::size_t kb = m.params.index_of("block.0.key.bias");
      CHECK(nn::global_norm({g[kb]}) <= 1e-12);
      CHECK(nn::global_norm({g[m.params.index_of("block.0.query.bias")]}) > 1e-6);
    }
  }
}

TEST_CASE("shape mismatches") {
  const Model m = build_model(ModelKind::AttentionVisualLanguage, vocab(), {}, 1);
  Observation o = observe(env::new_episode(5));
  o.tokens.ids.pop_back();
  CHECK_THROWS_AS(policy_value(m, o), DomainError);
  Observation bad_id = observe(env::new_episode(5));
  bad_id.tokens.ids[0] = vocab().size();
  CHECK_THROWS_AS(policy_value(m, bad_id), DomainError);
  const Model d = build_model(ModelKind::DenseLanguage, vocab(), {}, 1);
  CHECK_THROWS_AS(policy_value(d, o), DomainError);
}

TEST_CASE("config validation") {
  ModelConfig c;
  c.attention_heads = 3;
  CHECK_THROWS_AS(build_model(ModelKind::AttentionVisualLanguage, vocab(), c, 0), ConfigError);
  c = {};
  c.hidden = {};
  CHECK_THROWS_AS(build_model(ModelKind::VisualOnly, vocab(), c, 0), ConfigError);
  c = {};
  c.embed_dim = 0;
  CHECK_THROWS_AS(c.validate(), ConfigError);
  for (ModelKind k : kAllModelKinds) CHECK(model_kind_from_string(to_string(k)) == k);
  CHECK_THROWS_AS(model_kind_from_string("resnet"), DomainError);
}
