#pragma once

#include <cstddef>
#include <functional>
#include <string>

#include "numblocks/nn/graph.hpp"
#include "numblocks/nn/params.hpp"

namespace numblocks::nn {

// Builds a scalar loss on a fresh tape, reading parameters from the store being checked.
using LossFn = std::function<Var(Tape&)>;

struct GradcheckReport {
  double max_rel_error = 0.0;
  double max_abs_error = 0.0;
  std::string worst_parameter;
  std::size_t worst_index = 0;
  std::size_t checked = 0;
};

// |a - n| / max(|a|, |n|, floor). The floor keeps entries whose true gradient is zero
// from dividing rounding noise by rounding noise.
double relative_error(double analytic, double numeric, double floor = 1e-8);

// Compares backward() against central differences (f(w+h) - f(w-h)) / 2h for every parameter
// entry, or for an evenly strided subset of `max_per_param` entries when it is nonzero.
// `floor` is passed to relative_error. The store is restored to its original values before returning.
GradcheckReport gradcheck(ParamStore& store, const LossFn& loss, double h = 1e-5, std::size_t max_per_param = 0,
                          double floor = 1e-8);

}  // namespace numblocks::nn
