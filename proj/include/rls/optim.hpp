#pragma once

#include <cstddef>
#include <vector>

#include "rls/tensor.hpp"

namespace rls::train {

struct AdamSettings {
  double learning_rate = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
};

// First/second moment accumulators for one ordered parameter list.
struct OptimizerState {
  AdamSettings settings;
  std::vector<std::vector<double>> first_moment;
  std::vector<std::vector<double>> second_moment;
  std::size_t step = 0;
};

OptimizerState make_adam(const std::vector<Tensor*>& params, AdamSettings settings = {});

// One bias-corrected Adam step using each parameter's grad() buffer.
void adam_update(const std::vector<Tensor*>& params, OptimizerState& state);

}  // namespace rls::train
