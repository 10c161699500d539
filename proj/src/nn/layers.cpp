#include "numblocks/nn/layers.hpp"

#include <cmath>

#include <fmt/format.h>

#include "numblocks/errors.hpp"

namespace numblocks::nn::layers {

namespace {

Tensor uniform_tensor(Shape shape, double limit, Rng& rng) {
  Tensor out(std::move(shape));
  for (double& x : out.data()) x = (2.0 * uniform01(rng) - 1.0) * limit;
  return out;
}

}  // namespace

void add_dense(ParamStore& store, const std::string& name, std::size_t in, std::size_t out, Rng& rng, Init init) {
  if (in == 0 || out == 0) throw ConfigError(fmt::format("dense layer '{}' needs positive sizes", name));
  if (init == Init::Zero) {
    store.add(name + ".weight", Tensor({in, out}));
  } else {
    const double limit = std::sqrt(6.0 / static_cast<double>(in + out));
    store.add(name + ".weight", uniform_tensor({in, out}, limit, rng));
  }
  store.add(name + ".bias", Tensor({out}));
}

Var dense(Tape& t, const ParamStore& store, const std::string& name, Var x) {
  return add_bias(t, matmul(t, x, t.parameter(store, name + ".weight")), t.parameter(store, name + ".bias"));
}

void add_embedding(ParamStore& store, const std::string& name, std::size_t rows, std::size_t dim, Rng& rng,
                   double scale, int zero_row) {
  Tensor table = uniform_tensor({rows, dim}, scale, rng);
  if (zero_row >= 0) {
    for (std::size_t j = 0; j < dim; ++j) table[static_cast<std::size_t>(zero_row) * dim + j] = 0.0;
  }
  store.add(name + ".table", std::move(table));
}

Var embedding(Tape& t, const ParamStore& store, const std::string& name, std::span<const int> ids, Shape prefix) {
  return embedding_lookup(t, t.parameter(store, name + ".table"), ids, std::move(prefix));
}

void add_layer_norm(ParamStore& store, const std::string& name, std::size_t dim) {
  store.add(name + ".gain", Tensor({dim}, 1.0));
  store.add(name + ".bias", Tensor({dim}));
}

Var layer_norm(Tape& t, const ParamStore& store, const std::string& name, Var x) {
  return nn::layer_norm(t, x, t.parameter(store, name + ".gain"), t.parameter(store, name + ".bias"));
}

void add_attention_block(ParamStore& store, const std::string& name, const AttentionBlockConfig& cfg, Rng& rng) {
  if (cfg.heads == 0 || cfg.dim % cfg.heads != 0) {
    throw ConfigError(fmt::format("attention heads ({}) must divide embed dim ({})", cfg.heads, cfg.dim));
  }
  add_dense(store, name + ".query", cfg.dim, cfg.dim, rng);
  add_dense(store, name + ".key", cfg.dim, cfg.dim, rng);
  add_dense(store, name + ".value", cfg.dim, cfg.dim, rng);
  add_dense(store, name + ".out", cfg.dim, cfg.dim, rng);
  add_layer_norm(store, name + ".norm1", cfg.dim);
  add_dense(store, name + ".ff1", cfg.dim, cfg.ff_dim, rng);
  add_dense(store, name + ".ff2", cfg.ff_dim, cfg.dim, rng);
  add_layer_norm(store, name + ".norm2", cfg.dim);
}

AttentionOutput attention_block(Tape& t, const ParamStore& store, const std::string& name, Var x,
                                std::span<const std::uint8_t> key_mask, std::size_t heads) {
  const Shape shape = t.value(x).shape();
  if (shape.size() != 3 || key_mask.size() != shape[0] * shape[1]) {
    throw DomainError(fmt::format("attention_block '{}': input {} with {} mask entries", name, shape_string(shape),
                                  key_mask.size()));
  }
  const std::size_t batch = shape[0], len = shape[1], dim = shape[2];
  if (heads == 0 || dim % heads != 0) {
    throw DomainError(fmt::format("attention_block '{}': {} heads do not divide {}", name, heads, dim));
  }
  const double inv_sqrt = 1.0 / std::sqrt(static_cast<double>(dim / heads));

  const Var q = split_heads(t, dense(t, store, name + ".query", x), heads);
  const Var k = split_heads(t, dense(t, store, name + ".key", x), heads);
  const Var v = split_heads(t, dense(t, store, name + ".value", x), heads);

  std::vector<std::uint8_t> mask(batch * heads * len * len);
  for (std::size_t g = 0; g < batch * heads; ++g) {
    const std::size_t b = g / heads;
    for (std::size_t i = 0; i < len; ++i)
      for (std::size_t j = 0; j < len; ++j) mask[(g * len + i) * len + j] = key_mask[b * len + j];
  }
  const Var weights = masked_softmax_rows(t, scale(t, bmm_nt(t, q, k), inv_sqrt), std::move(mask));
  const Var context = merge_heads(t, bmm(t, weights, v), heads);
  const Var attended = dense(t, store, name + ".out", context);
  const Var x1 = layer_norm(t, store, name + ".norm1", add(t, x, attended));
  const Var ff = dense(t, store, name + ".ff2", tanh(t, dense(t, store, name + ".ff1", x1)));
  const Var out = layer_norm(t, store, name + ".norm2", add(t, x1, ff));
  return {out, weights};
}

}  // namespace numblocks::nn::layers
