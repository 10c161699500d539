#include "numblocks/nn/distributions.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include <fmt/format.h>

#include "numblocks/errors.hpp"

namespace numblocks::nn {

double uniform01(Rng& rng) { return static_cast<double>(rng() >> 11) * 0x1.0p-53; }

std::vector<double> softmax(std::span<const double> logits) {
  std::vector<double> out = log_softmax(logits);
  for (double& x : out) x = std::exp(x);
  return out;
}

std::vector<double> log_softmax(std::span<const double> logits) {
  if (logits.empty()) throw DomainError("log_softmax of an empty vector");
  const double mx = *std::max_element(logits.begin(), logits.end());
  double z = 0.0;
  for (double x : logits) z += std::exp(x - mx);
  const double lse = mx + std::log(z);
  std::vector<double> out(logits.begin(), logits.end());
  for (double& x : out) x -= lse;
  return out;
}

void validate_distribution(std::span<const double> dist) {
  if (dist.empty()) throw DomainError("empty distribution");
  double total = 0.0;
  for (double p : dist) {
    if (!(p >= 0.0) || !std::isfinite(p)) throw DomainError(fmt::format("invalid probability {}", p));
    total += p;
  }
  if (std::abs(total - 1.0) > 1e-9) throw DomainError(fmt::format("probabilities sum to {}, not 1", total));
}

double entropy(std::span<const double> dist) {
  validate_distribution(dist);
  double h = 0.0;
  for (double p : dist) {
    if (p > 0.0) h -= p * std::log(p);
  }
  return h;
}

CategoricalSample sample_categorical(std::span<const double> dist, Rng& rng) {
  validate_distribution(dist);
  const double u = uniform01(rng);
  double cdf = 0.0;
  int last_positive = 0;
  for (std::size_t i = 0; i < dist.size(); ++i) {
    if (dist[i] <= 0.0) continue;
    last_positive = static_cast<int>(i);
    cdf += dist[i];
    if (u < cdf) return {static_cast<int>(i), std::log(dist[i])};
  }
  // u landed in the rounding gap above the final cdf
  return {last_positive, std::log(dist[static_cast<std::size_t>(last_positive)])};
}

int argmax(std::span<const double> values) {
  if (values.empty()) throw DomainError("argmax of an empty vector");
  return static_cast<int>(std::max_element(values.begin(), values.end()) - values.begin());
}

}  // namespace numblocks::nn
