#pragma once

#include <cstdint>
#include <map>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "numblocks/nn/tensor.hpp"

namespace numblocks::nn {

struct Parameter {
  std::string name;
  Tensor value;
  Tensor m;  // Adam first moment
  Tensor v;  // Adam second moment

  bool operator==(const Parameter&) const = default;
};

// Named trainable tensors with their Adam state, kept in insertion order.
class ParamStore {
 public:
  Parameter& add(std::string name, Tensor init);

  bool contains(std::string_view name) const;
  std::size_t index_of(std::string_view name) const;
  const Tensor& value(std::string_view name) const { return params_[index_of(name)].value; }
  Tensor& value(std::string_view name) { return params_[index_of(name)].value; }

  std::span<Parameter> params() { return params_; }
  std::span<const Parameter> params() const { return params_; }
  std::size_t size() const { return params_.size(); }
  std::size_t scalar_count() const;

  std::int64_t step() const { return step_; }
  void set_step(std::int64_t t) { step_ = t; }

  bool operator==(const ParamStore& other) const { return params_ == other.params_ && step_ == other.step_; }

 private:
  std::vector<Parameter> params_;
  std::map<std::string, std::size_t, std::less<>> index_;
  std::int64_t step_ = 0;
};

// One tensor per parameter, aligned with ParamStore order.
using Gradients = std::vector<Tensor>;

Gradients zero_gradients(const ParamStore& store);
double global_norm(const Gradients& grads);
// Rescales in place when the global norm exceeds max_norm; returns the norm before clipping.
double clip_by_global_norm(Gradients& grads, double max_norm);

struct AdamConfig {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;

  void validate() const;
  bool operator==(const AdamConfig&) const = default;
};

// Bias-corrected Adam; increments store.step() once.
void adam_step(ParamStore& store, const Gradients& grads, const AdamConfig& cfg);

}  // namespace numblocks::nn
