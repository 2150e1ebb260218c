#pragma once

#include <functional>
#include <string>
#include <vector>

#include "pisr/autodiff.hpp"

namespace pisr {

// Builds a scalar output from leaves on the given tape.
using ScalarFn = std::function<Var(Tape&, const std::vector<Var>&)>;

struct GradCheckResult {
  double max_rel_err = 0.0;
  bool pass = false;
  std::int64_t checked = 0;
  std::string worst;  // "input i, element j" for the largest error
};

// Compares tape gradients against central finite differences
// (f(x+eps) - f(x-eps)) / (2 eps), elementwise over every input.
// Relative error is |a - b| / max(1, |a|, |b|). Non-finite intermediates
// raise a diagnostic naming the offending op.
GradCheckResult grad_check(const ScalarFn& f, const std::vector<Tensor>& inputs,
                           double epsilon = 1e-5, double tolerance = 1e-4);

// Same check restricted to n_samples randomly chosen (input, element) pairs;
// used where the full Jacobian sweep would be wasteful.
GradCheckResult grad_check_sampled(const ScalarFn& f, const std::vector<Tensor>& inputs,
                                   std::int64_t n_samples, std::uint64_t seed,
                                   double epsilon = 1e-5, double tolerance = 1e-4);

}  // namespace pisr
