#include "numblocks/nn/gradcheck.hpp"

#include <algorithm>
#include <cmath>

namespace numblocks::nn {

namespace {

double evaluate(const LossFn& loss) {
  Tape tape;
  return tape.value(loss(tape)).item();
}

}  // namespace

double relative_error(double analytic, double numeric, double floor) {
  const double denom = std::max({std::abs(analytic), std::abs(numeric), floor});
  return std::abs(analytic - numeric) / denom;
}

GradcheckReport gradcheck(ParamStore& store, const LossFn& loss, double h, std::size_t max_per_param,
                          double floor) {
  Tape tape;
  const Var out = loss(tape);
  tape.backward(out);
  const Gradients analytic = tape.parameter_gradients(store);

  GradcheckReport report;
  auto params = store.params();
  for (std::size_t p = 0; p < params.size(); ++p) {
    const std::size_t n = params[p].value.size();
    const std::size_t stride = (max_per_param == 0 || n <= max_per_param) ? 1 : n / max_per_param;
    for (std::size_t i = 0; i < n; i += stride) {
      double& w = params[p].value[i];
      const double saved = w;
      w = saved + h;
      const double plus = evaluate(loss);
      w = saved - h;
      const double minus = evaluate(loss);
      w = saved;
      const double numeric = (plus - minus) / (2.0 * h);
      const double a = analytic[p][i];
      const double rel = relative_error(a, numeric, floor);
      report.max_abs_error = std::max(report.max_abs_error, std::abs(a - numeric));
      if (rel > report.max_rel_error || report.checked == 0) {
        report.max_rel_error = std::max(rel, report.max_rel_error);
        report.worst_parameter = params[p].name;
        report.worst_index = i;
      }
      ++report.checked;
    }
  }
  return report;
}

}  // namespace numblocks::nn
