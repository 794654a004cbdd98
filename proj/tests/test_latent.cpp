#include <cmath>
#include <vector>

#include "doctest.h"
#include "rls/latent.hpp"
#include "rls/rng.hpp"

using namespace rls;
using latent::LatentCode;

namespace {

LatentCode code(std::vector<double> v, std::size_t k = 1) {
  const std::size_t n = v.size() / k;
  return LatentCode(k, n, std::move(v));
}

std::vector<double> values(const LatentCode& z) { return {z.values().begin(), z.values().end()}; }

LatentCode random_code(Rng& rng, std::size_t k, std::size_t n) {
  LatentCode z(k, n);
  for (auto& v : z.values()) v = rng.normal();
  return z;
}

}  // namespace

TEST_SUITE("latent") {
  TEST_CASE("integer roll shifts toward higher bins") {
    const auto z = code({1, 2, 3, 4});
    CHECK(values(latent::roll_integer(z, 0)) == std::vector<double>{1, 2, 3, 4});
    CHECK(values(latent::roll_integer(z, 1)) == std::vector<double>{4, 1, 2, 3});
    CHECK(values(latent::roll_integer(z, 4)) == std::vector<double>{1, 2, 3, 4});
    CHECK(values(latent::roll_integer(z, -1)) == std::vector<double>{2, 3, 4, 1});
  }

  TEST_CASE("every sub-vector rolls by the same amount") {
    const auto z = code({1, 2, 3, 10, 20, 30}, 2);
    CHECK(values(latent::roll_integer(z, 1)) == std::vector<double>{3, 1, 2, 30, 10, 20});
  }

  TEST_CASE("wrap_shift reduces into [0, N)") {
    CHECK(latent::wrap_shift(0, 5) == 0);
    CHECK(latent::wrap_shift(7, 5) == 2);
    CHECK(latent::wrap_shift(-1, 5) == 4);
    CHECK(latent::wrap_shift(-10, 5) == 0);
  }

  TEST_CASE("interpolative roll") {
    const auto z = code({1, 0, 0, 0});
    CHECK(values(latent::roll_interpolative(z, 0.5)) == std::vector<double>{0.5, 0.5, 0, 0});
    CHECK(values(latent::roll_interpolative(z, 3.5)) == std::vector<double>{0.5, 0, 0, 0.5});
    CHECK(values(latent::roll_interpolative(z, -0.25)) == std::vector<double>{0.75, 0, 0, 0.25});
    Rng rng(1);
    for (int c = 0; c < 200; ++c) {
      const auto r = random_code(rng, 3, 2 + rng.below(20));
      const long s = static_cast<long>(rng.below(100)) - 50;
      REQUIRE(latent::roll_interpolative(r, static_cast<double>(s)) == latent::roll_integer(r, s));
    }
  }

  TEST_CASE("permutation matrix") {
    const Tensor r = latent::permutation_matrix(2, 1);
    CHECK(r == Tensor({2, 2}, std::vector<double>{0, 1, 1, 0}));
    const Tensor id = latent::permutation_matrix(3, 3);
    CHECK(id == Tensor({3, 3}, std::vector<double>{1, 0, 0, 0, 1, 0, 0, 0, 1}));
    CHECK_THROWS(latent::permutation_matrix(1, 0));
  }

  TEST_CASE("property: matrix product equals roll bitwise") {
    Rng rng(2);
    for (int c = 0; c < 500; ++c) {
      const std::size_t n = 2 + rng.below(15);
      const long s = static_cast<long>(rng.below(3 * n)) - static_cast<long>(n);
      const auto z = random_code(rng, 1, n);
      const Tensor r = latent::permutation_matrix(n, s);
      std::vector<double> prod(n, 0.0);
      for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < n; ++j) prod[i] += r[i * n + j] * z.at(0, j);
      REQUIRE(prod == values(latent::roll_integer(z, s)));
    }
  }

  TEST_CASE("property: roll is an isometry and composes additively") {
    Rng rng(3);
    for (int c = 0; c < 500; ++c) {
      const std::size_t k = 1 + rng.below(5), n = 2 + rng.below(30);
      const auto z = random_code(rng, k, n);
      const long a = static_cast<long>(rng.below(200)) - 100, b = static_cast<long>(rng.below(200)) - 100;
      REQUIRE(latent::roll_integer(latent::roll_integer(z, a), b) == latent::roll_integer(z, a + b));
      REQUIRE(latent::roll_integer(latent::roll_integer(z, a), -a) == z);
      REQUIRE(latent::roll_integer(z, a).norm() == doctest::Approx(z.norm()).epsilon(1e-14));
    }
  }

  TEST_CASE("azimuth mapping") {
    const latent::AzimuthMapping m(36);
    CHECK(m.nearest(0.0) == 0);
    CHECK(m.continuous(90.0) == 9.0);
    CHECK(m.nearest(370.0) == 1);
    CHECK(m.nearest(-10.0) == 35);
    CHECK(m.nearest(358.0) == 0);
    CHECK(m.continuous(-1e-18) == 0.0);
    CHECK(m.bin_width_deg() == 10.0);
    CHECK_THROWS(latent::AzimuthMapping(1));
  }

  TEST_CASE("flatten layout") {
    const auto z = code({1, 2, 3, 4, 5, 6}, 2);
    CHECK(z.sub_vectors() == 2);
    CHECK(std::vector<double>(z.sub_vector(1).begin(), z.sub_vector(1).end()) == std::vector<double>{4, 5, 6});
    const Tensor f = latent::flatten(z);
    CHECK(f.shape() == Shape{6});
    CHECK(latent::unflatten(f, 2, 3) == z);
    CHECK_THROWS_AS(latent::unflatten(f, 4, 2), ShapeError);
  }

  TEST_CASE("latent codes need N >= 2") {
    CHECK_THROWS(LatentCode(1, 1));
    CHECK_THROWS(LatentCode(0, 4));
    CHECK_THROWS_AS(LatentCode(2, 3, std::vector<double>(5)), ShapeError);
  }

  TEST_CASE("batched roll matches per-row integer roll, N = 1 is the identity") {
    Rng rng(4);
    const std::size_t k = 3, n = 5;
    Tensor z({4, k * n});
    for (auto& v : z.data()) v = rng.normal();
    const std::vector<long> shifts{0, 1, -2, 13};
    const Tensor out = latent::roll_batch(z, shifts, k, n);
    for (std::size_t r = 0; r < 4; ++r) {
      const LatentCode row(k, n, std::vector<double>(z.data().begin() + r * k * n, z.data().begin() + (r + 1) * k * n));
      const auto rolled = latent::roll_integer(row, shifts[r]);
      for (std::size_t i = 0; i < k * n; ++i) REQUIRE(out[r * k * n + i] == rolled.values()[i]);
    }
    Tensor one({2, 3}, std::vector<double>{1, 2, 3, 4, 5, 6});
    const std::vector<long> s2{5, -7};
    CHECK(latent::roll_batch(one, s2, 3, 1) == one);
    const std::vector<long> wrong{1};
    CHECK_THROWS_AS(latent::roll_batch(z, wrong, k, n), ShapeError);
  }

  TEST_CASE("differentiable roll back-propagates the inverse roll") {
    Rng rng(5);
    Tensor z({2, 8});
    for (auto& v : z.data()) v = rng.normal();
    z.set_requires_grad(true);
    Tensor w({2, 8});
    for (auto& v : w.data()) v = rng.normal();
    const std::vector<long> shifts{3, -1};
    ad::Graph g;
    g.backward(ad::sum(ad::mul(latent::roll_batch(g.leaf(z), shifts, 2, 4), g.constant(w))));
    const std::vector<long> inverse{-3, 1};
    const Tensor expect = latent::roll_batch(w, inverse, 2, 4);
    for (std::size_t i = 0; i < z.size(); ++i) CHECK(z.grad()[i] == expect[i]);
  }
}
