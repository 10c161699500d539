#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <string>

#include "numblocks/nn/distributions.hpp"
#include "numblocks/nn/graph.hpp"
#include "numblocks/nn/params.hpp"

// Parameter registration (add_*) and graph construction for the building blocks the models use.
// A layer called "enc" owns parameters named "enc.weight", "enc.bias", and so on.
namespace numblocks::nn::layers {

enum class Init { Glorot, Zero };

void add_dense(ParamStore& store, const std::string& name, std::size_t in, std::size_t out, Rng& rng,
               Init init = Init::Glorot);
// x . W + b over the last dimension.
Var dense(Tape& t, const ParamStore& store, const std::string& name, Var x);

// Uniform(-scale, scale) rows; row `zero_row` (the PAD id) starts at zero when non-negative.
void add_embedding(ParamStore& store, const std::string& name, std::size_t rows, std::size_t dim, Rng& rng,
                   double scale, int zero_row = -1);
Var embedding(Tape& t, const ParamStore& store, const std::string& name, std::span<const int> ids, Shape prefix);

void add_layer_norm(ParamStore& store, const std::string& name, std::size_t dim);
Var layer_norm(Tape& t, const ParamStore& store, const std::string& name, Var x);

struct AttentionBlockConfig {
  std::size_t dim = 32;
  std::size_t heads = 2;
  std::size_t ff_dim = 64;
};

void add_attention_block(ParamStore& store, const std::string& name, const AttentionBlockConfig& cfg, Rng& rng);

struct AttentionOutput {
  Var out;      // [B, L, d]
  Var weights;  // [B*H, L, L], each query row sums to 1 over unmasked keys
};

// Post-norm encoder block: x1 = LN(x + MHA(x)), out = LN(x1 + FF(x1)), with tanh feed-forward.
// key_mask has B*L entries; keys with 0 receive no attention.
AttentionOutput attention_block(Tape& t, const ParamStore& store, const std::string& name, Var x,
                                std::span<const std::uint8_t> key_mask, std::size_t heads);

}  // namespace numblocks::nn::layers
