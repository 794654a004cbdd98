#include "rls/optim.hpp"

#include <cmath>
#include <stdexcept>

namespace rls::train {

OptimizerState make_adam(const std::vector<Tensor*>& params, AdamSettings settings) {
  OptimizerState s;
  s.settings = settings;
  for (const Tensor* p : params) {
    s.first_moment.emplace_back(p->size(), 0.0);
    s.second_moment.emplace_back(p->size(), 0.0);
  }
  return s;
}

void adam_update(const std::vector<Tensor*>& params, OptimizerState& state) {
  if (params.size() != state.first_moment.size())
    throw std::invalid_argument("adam_update: parameter list does not match optimizer state");
  const auto& cfg = state.settings;
  ++state.step;
  const double t = static_cast<double>(state.step);
  const double correction1 = 1.0 - std::pow(cfg.beta1, t);
  const double correction2 = 1.0 - std::pow(cfg.beta2, t);
  for (std::size_t i = 0; i < params.size(); ++i) {
    Tensor& p = *params[i];
    auto& m = state.first_moment[i];
    auto& v = state.second_moment[i];
    if (m.size() != p.size()) throw ShapeError("adam_update: moment buffer does not match parameter shape");
    const auto g = p.grad();
    auto x = p.data();
    for (std::size_t j = 0; j < x.size(); ++j) {
      m[j] = cfg.beta1 * m[j] + (1.0 - cfg.beta1) * g[j];
      v[j] = cfg.beta2 * v[j] + (1.0 - cfg.beta2) * g[j] * g[j];
      const double m_hat = m[j] / correction1;
      const double v_hat = v[j] / correction2;
      x[j] -= cfg.learning_rate * m_hat / (std::sqrt(v_hat) + cfg.epsilon);
    }
  }
}

}  // namespace rls::train
