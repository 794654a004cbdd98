#pragma once

#include <cstddef>
#include <functional>
#include <span>
#include <vector>

#include "rls/autodiff.hpp"
#include "rls/tensor.hpp"

namespace rls::ad {

// Builds a scalar from the variable standing in for the checked point.
using ScalarFn = std::function<Var(Graph&, Var)>;

struct GradCheckReport {
  std::vector<std::size_t> coordinates;
  std::vector<double> analytic;
  std::vector<double> numeric;
  std::vector<double> relative_error;
  double max_relative_error = 0.0;
  bool passed = false;
};

// Relative error used by grad_check: |a - n| / max(|a|, |n|, floor). The
// floor keeps coordinates whose true gradient is ~0 from reporting noise
// amplified by a vanishing denominator.
double relative_error(double analytic, double numeric, double floor = 1e-6);

// Compares the backward pass of f at `point` with central differences of
// width 2*step on the listed coordinates (all of them when empty).
GradCheckReport grad_check(const ScalarFn& f, const Tensor& point, double step, double tol,
                           std::span<const std::size_t> coordinates = {});

}  // namespace rls::ad
