#pragma once

#include <array>
#include <cstdint>
#include <optional>
#include <span>
#include <string_view>
#include <vector>

#include "numblocks/env.hpp"
#include "numblocks/instructions.hpp"
#include "numblocks/nn/graph.hpp"
#include "numblocks/nn/params.hpp"

namespace numblocks::models {

enum class ModelKind : std::uint8_t { VisualOnly, DenseLanguage, AttentionVisualLanguage };

inline constexpr std::array<ModelKind, 3> kAllModelKinds = {ModelKind::VisualOnly, ModelKind::DenseLanguage,
                                                            ModelKind::AttentionVisualLanguage};

// "visual", "dense", "attention"
std::string_view to_string(ModelKind kind);
ModelKind model_kind_from_string(std::string_view s);

struct ModelConfig {
  int embed_dim = 32;
  int attention_layers = 2;
  int attention_heads = 2;
  int ff_dim = 64;
  std::vector<int> hidden = {128, 128};  // trunk of VisualOnly and DenseLanguage
  int visual_dim = 32;                   // grid encoder of the attention model
  int fusion_hidden = 128;               // layer after concatenating text and grid features
  // DenseLanguage only: widen hidden[0] until the parameter count is closest to this target.
  // kParityAuto targets the attention model built from the same config; nullopt disables.
  std::optional<int> parity_target = kParityAuto;

  static constexpr int kParityAuto = 0;

  void validate() const;
  bool operator==(const ModelConfig&) const = default;
};

struct Architecture {
  ModelKind kind = ModelKind::DenseLanguage;
  ModelConfig config;  // hidden sizes already resolved for parity
  int vocab_size = 0;
  int max_seq_len = 0;
  int grid_size = env::GridTensor::kSize;

  bool operator==(const Architecture&) const = default;
};

struct Observation {
  env::GridTensor grid;
  instr::TokenSeq tokens;

  bool operator==(const Observation&) const = default;
};

struct Model {
  Architecture arch;
  nn::ParamStore params;
};

// Deterministic in `seed`. Policy and value heads start at zero, so the initial policy is uniform.
Model build_model(ModelKind kind, const instr::Vocabulary& vocab, const ModelConfig& cfg, std::uint64_t seed);
Model build_model(const Architecture& arch, std::uint64_t seed);

// Parameter count of a model built with this kind and config (after parity resolution).
std::size_t parameter_count(ModelKind kind, int vocab_size, int max_seq_len, const ModelConfig& cfg);

struct Heads {
  nn::Var logits;  // [B, 6]
  nn::Var value;   // [B]
};

Heads forward(nn::Tape& tape, const Model& model, std::span<const Observation* const> batch);

struct PolicyValue {
  std::array<double, env::kNumActions> probs{};
  std::array<double, env::kNumActions> log_probs{};
  double value = 0.0;
};

PolicyValue policy_value(const Model& model, const Observation& obs);

}  // namespace numblocks::models
