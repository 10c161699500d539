#pragma once

#include <random>
#include <span>
#include <vector>

namespace numblocks::nn {

// All stochastic code takes an explicit generator; nothing reads a global RNG.
using Rng = std::mt19937_64;

// Uniform in [0, 1) from the top 53 bits of one draw.
double uniform01(Rng& rng);

std::vector<double> softmax(std::span<const double> logits);
std::vector<double> log_softmax(std::span<const double> logits);

// Throws DomainError unless entries are >= 0 and sum to 1 within 1e-9.
void validate_distribution(std::span<const double> dist);

// -sum p log p with 0 log 0 = 0.
double entropy(std::span<const double> dist);

struct CategoricalSample {
  int index = 0;
  double log_prob = 0.0;
};

CategoricalSample sample_categorical(std::span<const double> dist, Rng& rng);

// First index of the maximum.
int argmax(std::span<const double> values);

}  // namespace numblocks::nn
