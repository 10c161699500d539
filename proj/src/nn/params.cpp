#include "numblocks/nn/params.hpp"

#include <cmath>

#include <fmt/format.h>

#include "numblocks/errors.hpp"

namespace numblocks::nn {

Parameter& ParamStore::add(std::string name, Tensor init) {
  if (index_.contains(name)) throw DomainError(fmt::format("duplicate parameter '{}'", name));
  index_.emplace(name, params_.size());
  Tensor zeros(init.shape());
  params_.push_back(Parameter{std::move(name), std::move(init), zeros, zeros});
  return params_.back();
}

bool ParamStore::contains(std::string_view name) const { return index_.find(name) != index_.end(); }

std::size_t ParamStore::index_of(std::string_view name) const {
  auto it = index_.find(name);
  if (it == index_.end()) throw DomainError(fmt::format("unknown parameter '{}'", name));
  return it->second;
}

std::size_t ParamStore::scalar_count() const {
  std::size_t n = 0;
  for (const auto& p : params_) n += p.value.size();
  return n;
}

Gradients zero_gradients(const ParamStore& store) {
  Gradients g;
  g.reserve(store.size());
  for (const auto& p : store.params()) g.emplace_back(p.value.shape());
  return g;
}

double global_norm(const Gradients& grads) {
  double sq = 0.0;
  for (const auto& g : grads) {
    for (double x : g.data()) sq += x * x;
  }
  return std::sqrt(sq);
}

double clip_by_global_norm(Gradients& grads, double max_norm) {
  const double norm = global_norm(grads);
  if (max_norm > 0.0 && norm > max_norm) {
    const double s = max_norm / norm;
    for (auto& g : grads) {
      for (double& x : g.data()) x *= s;
    }
  }
  return norm;
}

void AdamConfig::validate() const {
  if (!(lr > 0.0)) throw ConfigError(fmt::format("adam lr must be > 0 (got {})", lr));
  if (!(beta1 >= 0.0 && beta1 < 1.0)) throw ConfigError(fmt::format("adam beta1 must be in [0,1) (got {})", beta1));
  if (!(beta2 >= 0.0 && beta2 < 1.0)) throw ConfigError(fmt::format("adam beta2 must be in [0,1) (got {})", beta2));
  if (!(eps > 0.0)) throw ConfigError(fmt::format("adam eps must be > 0 (got {})", eps));
}

void adam_step(ParamStore& store, const Gradients& grads, const AdamConfig& cfg) {
  if (grads.size() != store.size()) {
    throw DomainError(fmt::format("adam_step: {} gradients for {} parameters", grads.size(), store.size()));
  }
  auto params = store.params();
  for (std::size_t i = 0; i < params.size(); ++i) {
    if (grads[i].shape() != params[i].value.shape()) {
      throw DomainError(fmt::format("adam_step: gradient shape {} for parameter '{}' of shape {}",
                                    shape_string(grads[i].shape()), params[i].name,
                                    shape_string(params[i].value.shape())));
    }
  }
  const std::int64_t t = store.step() + 1;
  store.set_step(t);
  const double bc1 = 1.0 - std::pow(cfg.beta1, static_cast<double>(t));
  const double bc2 = 1.0 - std::pow(cfg.beta2, static_cast<double>(t));
  for (std::size_t i = 0; i < params.size(); ++i) {
    auto& p = params[i];
    auto w = p.value.data();
    auto m = p.m.data();
    auto v = p.v.data();
    auto g = grads[i].data();
    for (std::size_t j = 0; j < w.size(); ++j) {
      m[j] = cfg.beta1 * m[j] + (1.0 - cfg.beta1) * g[j];
      v[j] = cfg.beta2 * v[j] + (1.0 - cfg.beta2) * g[j] * g[j];
      const double mhat = m[j] / bc1;
      const double vhat = v[j] / bc2;
      w[j] -= cfg.lr * mhat / (std::sqrt(vhat) + cfg.eps);
    }
  }
}

}  // namespace numblocks::nn
