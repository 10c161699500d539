#include "numblocks/models.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include <fmt/format.h>

#include "numblocks/errors.hpp"
#include "numblocks/nn/distributions.hpp"
#include "numblocks/nn/layers.hpp"

namespace numblocks::models {

namespace {

namespace layers = nn::layers;
using nn::Tape;
using nn::Var;

constexpr double kTokenInitScale = 1.0;
constexpr double kPositionInitScale = 0.1;

std::string trunk_name(std::size_t i) { return fmt::format("trunk.{}", i); }
std::string block_name(int i) { return fmt::format("block.{}", i); }

void add_heads(nn::ParamStore& store, std::size_t in, nn::Rng& rng) {
  layers::add_dense(store, "policy", in, env::kNumActions, rng, layers::Init::Zero);
  layers::add_dense(store, "value", in, 1, rng, layers::Init::Zero);
}

std::size_t add_trunk(nn::ParamStore& store, std::size_t in, const std::vector<int>& hidden, nn::Rng& rng) {
  for (std::size_t i = 0; i < hidden.size(); ++i) {
    const auto out = static_cast<std::size_t>(hidden[i]);
    layers::add_dense(store, trunk_name(i), in, out, rng);
    in = out;
  }
  return in;
}

nn::ParamStore make_params(const Architecture& arch, std::uint64_t seed) {
  const ModelConfig& cfg = arch.config;
  nn::Rng rng(seed);
  nn::ParamStore store;
  const auto d = static_cast<std::size_t>(cfg.embed_dim);
  const auto vocab = static_cast<std::size_t>(arch.vocab_size);
  switch (arch.kind) {
    case ModelKind::VisualOnly: {
      add_heads(store, add_trunk(store, static_cast<std::size_t>(arch.grid_size), cfg.hidden, rng), rng);
      break;
    }
    case ModelKind::DenseLanguage: {
      layers::add_embedding(store, "tokens", vocab, d, rng, kTokenInitScale, instr::Vocabulary::kPad);
      add_heads(store, add_trunk(store, d, cfg.hidden, rng), rng);
      break;
    }
    case ModelKind::AttentionVisualLanguage: {
      layers::add_embedding(store, "tokens", vocab, d, rng, kTokenInitScale, instr::Vocabulary::kPad);
      layers::add_embedding(store, "positions", static_cast<std::size_t>(arch.max_seq_len), d, rng,
                            kPositionInitScale);
      const layers::AttentionBlockConfig block{d, static_cast<std::size_t>(cfg.attention_heads),
                                               static_cast<std::size_t>(cfg.ff_dim)};
      for (int i = 0; i < cfg.attention_layers; ++i) layers::add_attention_block(store, block_name(i), block, rng);
      const auto visual = static_cast<std::size_t>(cfg.visual_dim);
      const auto fusion = static_cast<std::size_t>(cfg.fusion_hidden);
      layers::add_dense(store, "grid", static_cast<std::size_t>(arch.grid_size), visual, rng);
      layers::add_dense(store, "fusion", d + visual, fusion, rng);
      add_heads(store, fusion, rng);
      break;
    }
  }
  return store;
}

std::size_t raw_count(const Architecture& arch) { return make_params(arch, 0).scalar_count(); }

ModelConfig resolve_parity(ModelKind kind, int vocab_size, int max_seq_len, ModelConfig cfg) {
  if (kind != ModelKind::DenseLanguage || !cfg.parity_target) return cfg;
  long target = *cfg.parity_target;
  if (target == ModelConfig::kParityAuto) {
    target = static_cast<long>(
        raw_count(Architecture{ModelKind::AttentionVisualLanguage, cfg, vocab_size, max_seq_len}));
  }
  Architecture arch{kind, cfg, vocab_size, max_seq_len};
  const auto base = static_cast<long>(raw_count(arch));
  arch.config.hidden[0] += 1;
  const long slope = static_cast<long>(raw_count(arch)) - base;
  const long extra = std::lround(static_cast<double>(target - base) / static_cast<double>(slope));
  if (extra > 0) cfg.hidden[0] += static_cast<int>(extra);
  return cfg;
}

Var trunk(Tape& t, const nn::ParamStore& store, Var x, std::size_t layers_count) {
  for (std::size_t i = 0; i < layers_count; ++i) x = nn::tanh(t, layers::dense(t, store, trunk_name(i), x));
  return x;
}

Heads heads(Tape& t, const nn::ParamStore& store, Var features, std::size_t batch) {
  const Var logits = layers::dense(t, store, "policy", features);
  const Var value = nn::reshape(t, layers::dense(t, store, "value", features), {batch});
  return {logits, value};
}

}  // namespace

std::string_view to_string(ModelKind kind) {
  switch (kind) {
    case ModelKind::VisualOnly: return "visual";
    case ModelKind::DenseLanguage: return "dense";
    case ModelKind::AttentionVisualLanguage: return "attention";
  }
  return "?";
}

ModelKind model_kind_from_string(std::string_view s) {
  if (s == "visual") return ModelKind::VisualOnly;
  if (s == "dense") return ModelKind::DenseLanguage;
  if (s == "attention") return ModelKind::AttentionVisualLanguage;
  throw DomainError(fmt::format("unknown model kind '{}' (expected visual, dense or attention)", s));
}

void ModelConfig::validate() const {
  auto positive = [](int v, std::string_view what) {
    if (v <= 0) throw ConfigError(fmt::format("model {} must be positive (got {})", what, v));
  };
  positive(embed_dim, "embed_dim");
  positive(attention_layers, "attention_layers");
  positive(attention_heads, "attention_heads");
  positive(ff_dim, "ff_dim");
  positive(visual_dim, "visual_dim");
  positive(fusion_hidden, "fusion_hidden");
  if (hidden.empty()) throw ConfigError("model hidden sizes must not be empty");
  for (int h : hidden) positive(h, "hidden size");
  if (embed_dim % attention_heads != 0) {
    throw ConfigError(fmt::format("attention_heads ({}) must divide embed_dim ({})", attention_heads, embed_dim));
  }
  if (parity_target && *parity_target < 0) throw ConfigError("model parity_target must be >= 0");
}

Model build_model(ModelKind kind, const instr::Vocabulary& vocab, const ModelConfig& cfg, std::uint64_t seed) {
  cfg.validate();
  Architecture arch{kind, resolve_parity(kind, vocab.size(), vocab.max_seq_len(), cfg), vocab.size(),
                    vocab.max_seq_len()};
  return build_model(arch, seed);
}

Model build_model(const Architecture& arch, std::uint64_t seed) {
  arch.config.validate();
  if (arch.vocab_size < 2 || arch.max_seq_len < 1 || arch.grid_size != env::GridTensor::kSize) {
    throw ConfigError(fmt::format("invalid architecture: vocab {}, max_seq_len {}, grid {}", arch.vocab_size,
                                  arch.max_seq_len, arch.grid_size));
  }
  return Model{arch, make_params(arch, seed)};
}

std::size_t parameter_count(ModelKind kind, int vocab_size, int max_seq_len, const ModelConfig& cfg) {
  cfg.validate();
  return raw_count(Architecture{kind, resolve_parity(kind, vocab_size, max_seq_len, cfg), vocab_size, max_seq_len});
}

Heads forward(Tape& t, const Model& model, std::span<const Observation* const> batch) {
  const Architecture& arch = model.arch;
  const nn::ParamStore& store = model.params;
  const std::size_t b = batch.size();
  if (b == 0) throw DomainError("forward: empty batch");
  const auto len = static_cast<std::size_t>(arch.max_seq_len);
  for (const Observation* obs : batch) {
    if (obs->tokens.ids.size() != len || obs->tokens.true_len < 0 ||
        obs->tokens.true_len > arch.max_seq_len) {
      throw DomainError(fmt::format("forward: token sequence of length {} (true_len {}) for a model expecting {}",
                                    obs->tokens.ids.size(), obs->tokens.true_len, len));
    }
  }

  auto grid_input = [&] {
    const auto g = static_cast<std::size_t>(arch.grid_size);
    nn::Tensor x({b, g});
    for (std::size_t i = 0; i < b; ++i) std::copy_n(batch[i]->grid.cells.begin(), g, &x[i * g]);
    return t.constant(std::move(x));
  };
  // Positions past the longest sequence in the batch are padding everywhere; dropping them leaves
  // every output bit-identical because padded keys get zero weight and padded rows are never pooled.
  std::size_t width = 1;
  for (const Observation* obs : batch) width = std::max(width, static_cast<std::size_t>(obs->tokens.true_len));
  std::vector<int> ids;
  std::vector<std::uint8_t> mask;
  auto token_input = [&] {
    ids.reserve(b * width);
    mask.reserve(b * width);
    for (const Observation* obs : batch) {
      for (std::size_t l = 0; l < width; ++l) {
        ids.push_back(obs->tokens.ids[l]);
        mask.push_back(static_cast<int>(l) < obs->tokens.true_len ? 1 : 0);
      }
    }
  };

  switch (arch.kind) {
    case ModelKind::VisualOnly: {
      const Var h = trunk(t, store, grid_input(), arch.config.hidden.size());
      return heads(t, store, h, b);
    }
    case ModelKind::DenseLanguage: {
      token_input();
      const Var emb = layers::embedding(t, store, "tokens", ids, {b, width});
      const Var pooled = nn::masked_mean_rows(t, emb, mask);
      const Var h = trunk(t, store, pooled, arch.config.hidden.size());
      return heads(t, store, h, b);
    }
    case ModelKind::AttentionVisualLanguage: {
      token_input();
      std::vector<int> positions(b * width);
      for (std::size_t i = 0; i < positions.size(); ++i) positions[i] = static_cast<int>(i % width);
      Var x = nn::add(t, layers::embedding(t, store, "tokens", ids, {b, width}),
                      layers::embedding(t, store, "positions", positions, {b, width}));
      for (int i = 0; i < arch.config.attention_layers; ++i) {
        x = layers::attention_block(t, store, block_name(i), x, mask,
                                    static_cast<std::size_t>(arch.config.attention_heads))
                .out;
      }
      const Var text = nn::masked_mean_rows(t, x, mask);
      const Var visual = nn::tanh(t, layers::dense(t, store, "grid", grid_input()));
      const Var fused = nn::tanh(t, layers::dense(t, store, "fusion", nn::concat_cols(t, text, visual)));
      return heads(t, store, fused, b);
    }
  }
  throw DomainError("forward: unknown model kind");
}

PolicyValue policy_value(const Model& model, const Observation& obs) {
  Tape t;
  const Observation* one[] = {&obs};
  const Heads h = forward(t, model, one);
  const nn::Tensor& logits = t.value(h.logits);
  PolicyValue out;
  const auto logp = nn::log_softmax(logits.data());
  for (int a = 0; a < env::kNumActions; ++a) {
    out.log_probs[static_cast<std::size_t>(a)] = logp[static_cast<std::size_t>(a)];
  }
  const auto probs = nn::softmax(logits.data());
  std::copy(probs.begin(), probs.end(), out.probs.begin());
  out.value = t.value(h.value)[0];
  return out;
}

}  // namespace numblocks::models
