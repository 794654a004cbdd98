#include <cmath>

#include "doctest.h"
#include "rls/optim.hpp"

using namespace rls;

TEST_SUITE("optim") {
  TEST_CASE("zero gradient leaves parameters unchanged") {
    Tensor w({4}, std::vector<double>{1.0, -2.0, 3.0, 0.5});
    w.set_requires_grad(true);
    const Tensor before = w;
    std::vector<Tensor*> ps{&w};
    auto st = train::make_adam(ps);
    for (int i = 0; i < 5; ++i) train::adam_update(ps, st);
    for (std::size_t i = 0; i < 4; ++i) CHECK(w[i] == before[i]);
    CHECK(st.step == 5);
  }

  TEST_CASE("first step moves each coordinate by about the learning rate") {
    Tensor w({3}, std::vector<double>{0.0, 1.0, -1.0});
    w.set_requires_grad(true);
    w.grad()[0] = 1e-3;
    w.grad()[1] = -50.0;
    w.grad()[2] = 7.0;
    std::vector<Tensor*> ps{&w};
    train::AdamSettings s;
    s.learning_rate = 0.01;
    auto st = train::make_adam(ps, s);
    train::adam_update(ps, st);
    // Bias correction makes m_hat = g and v_hat = g^2, so the step is lr * g / (|g| + eps).
    CHECK(w[0] == doctest::Approx(-0.01 * 1e-3 / (1e-3 + 1e-8)).epsilon(1e-12));
    CHECK(w[1] == doctest::Approx(1.0 + 0.01).epsilon(1e-9));
    CHECK(w[2] == doctest::Approx(-1.0 - 0.01).epsilon(1e-9));
  }

  TEST_CASE("minimises a separable quadratic") {
    Tensor w({2}, std::vector<double>{5.0, -3.0});
    w.set_requires_grad(true);
    std::vector<Tensor*> ps{&w};
    train::AdamSettings s;
    s.learning_rate = 0.05;
    auto st = train::make_adam(ps, s);
    for (int i = 0; i < 2000; ++i) {
      w.grad()[0] = 2.0 * (w[0] - 1.0);
      w.grad()[1] = 20.0 * (w[1] + 2.0);
      train::adam_update(ps, st);
    }
    CHECK(w[0] == doctest::Approx(1.0).epsilon(1e-3));
    CHECK(w[1] == doctest::Approx(-2.0).epsilon(1e-3));
  }
}
