#include "pisr/grad_check.hpp"

#include <algorithm>
#include <cmath>

#include "pisr/rng.hpp"

namespace pisr {

namespace {

using i64 = std::int64_t;

double eval_scalar(const ScalarFn& f, const std::vector<Tensor>& inputs) {
  Tape tape;
  tape.set_check_finite(true);
  std::vector<Var> leaves;
  leaves.reserve(inputs.size());
  for (const Tensor& t : inputs) leaves.push_back(tape.leaf(t));
  Var y = f(tape, leaves);
  if (tape.value(y).size() != 1) {
    throw ShapeError("grad_check: function output must be scalar, got " +
                     tape.value(y).shape_str());
  }
  return tape.value(y)[0];
}

std::vector<Tensor> analytic_grads(const ScalarFn& f, const std::vector<Tensor>& inputs) {
  Tape tape;
  tape.set_check_finite(true);
  std::vector<Var> leaves;
  leaves.reserve(inputs.size());
  for (const Tensor& t : inputs) leaves.push_back(tape.leaf(t));
  Var y = f(tape, leaves);
  tape.backward(y);
  std::vector<Tensor> grads;
  grads.reserve(leaves.size());
  for (Var v : leaves) grads.push_back(tape.grad_or_zero(v));
  return grads;
}

GradCheckResult run_check(const ScalarFn& f, const std::vector<Tensor>& inputs,
                          const std::vector<std::pair<i64, i64>>& elements,
                          double epsilon, double tolerance) {
  const std::vector<Tensor> grads = analytic_grads(f, inputs);
  GradCheckResult res;
  std::vector<Tensor> work = inputs;
  for (const auto& [ti, ei] : elements) {
    const double saved = work[static_cast<std::size_t>(ti)][ei];
    work[static_cast<std::size_t>(ti)][ei] = saved + epsilon;
    const double up = eval_scalar(f, work);
    work[static_cast<std::size_t>(ti)][ei] = saved - epsilon;
    const double down = eval_scalar(f, work);
    work[static_cast<std::size_t>(ti)][ei] = saved;

    const double fd = (up - down) / (2.0 * epsilon);
    const double an = grads[static_cast<std::size_t>(ti)][ei];
    const double rel = std::abs(an - fd) / std::max({1.0, std::abs(an), std::abs(fd)});
    ++res.checked;
    if (rel > res.max_rel_err) {
      res.max_rel_err = rel;
      res.worst = "input " + std::to_string(ti) + ", element " + std::to_string(ei);
    }
  }
  res.pass = res.max_rel_err <= tolerance;
  return res;
}

}  // namespace

GradCheckResult grad_check(const ScalarFn& f, const std::vector<Tensor>& inputs,
                           double epsilon, double tolerance) {
  std::vector<std::pair<i64, i64>> elements;
  for (std::size_t ti = 0; ti < inputs.size(); ++ti) {
    for (i64 ei = 0; ei < inputs[ti].size(); ++ei) {
      elements.emplace_back(static_cast<i64>(ti), ei);
    }
  }
  return run_check(f, inputs, elements, epsilon, tolerance);
}

GradCheckResult grad_check_sampled(const ScalarFn& f, const std::vector<Tensor>& inputs,
                                   i64 n_samples, std::uint64_t seed, double epsilon,
                                   double tolerance) {
  i64 total = 0;
  for (const Tensor& t : inputs) total += t.size();
  if (n_samples >= total) return grad_check(f, inputs, epsilon, tolerance);

  Rng rng(seed);
  std::vector<std::pair<i64, i64>> elements;
  // Rejection-free distinct draws over the flattened element space.
  std::vector<i64> flat(static_cast<std::size_t>(total));
  for (i64 i = 0; i < total; ++i) flat[static_cast<std::size_t>(i)] = i;
  for (i64 i = 0; i < n_samples; ++i) {
    const i64 j = i + rng.uniform_int(0, total - 1 - i);
    std::swap(flat[static_cast<std::size_t>(i)], flat[static_cast<std::size_t>(j)]);
    i64 idx = flat[static_cast<std::size_t>(i)];
    i64 ti = 0;
    while (idx >= inputs[static_cast<std::size_t>(ti)].size()) {
      idx -= inputs[static_cast<std::size_t>(ti)].size();
      ++ti;
    }
    elements.emplace_back(ti, idx);
  }
  return run_check(f, inputs, elements, epsilon, tolerance);
}

}  // namespace pisr
