#include <stdexcept>

#include "doctest.h"
#include "rls/tensor.hpp"

using rls::Shape;
using rls::ShapeError;
using rls::Tensor;

TEST_SUITE("tensor") {
  TEST_CASE("construction and element count") {
    Tensor t({2, 3, 4}, 1.5);
    CHECK(t.size() == 24);
    CHECK(t.rank() == 3);
    CHECK(t.extent(1) == 3);
    for (double v : t.data()) CHECK(v == 1.5);
    CHECK(rls::numel({5, 7}) == 35);
    CHECK(rls::to_string({2, 3}) == "[2x3]");
  }

  TEST_CASE("zero extents and mismatched data are rejected") {
    CHECK_THROWS_AS(Tensor({2, 0}), ShapeError);
    CHECK_THROWS_AS(Tensor({2, 2}, std::vector<double>(3)), ShapeError);
  }

  TEST_CASE("item requires a single element") {
    CHECK(Tensor::scalar(4.25).item() == 4.25);
    CHECK_THROWS_AS(Tensor({2}).item(), ShapeError);
  }

  TEST_CASE("reshape keeps row-major order") {
    Tensor t({2, 3}, std::vector<double>{0, 1, 2, 3, 4, 5});
    const Tensor r = t.reshaped({3, 2});
    CHECK(r.shape() == Shape{3, 2});
    for (std::size_t i = 0; i < 6; ++i) CHECK(r[i] == static_cast<double>(i));
    CHECK_THROWS_AS(t.reshaped({4, 2}), ShapeError);
  }

  TEST_CASE("gradient buffer follows requires_grad") {
    Tensor t({3});
    CHECK_THROWS_AS(t.grad(), std::logic_error);
    t.set_requires_grad(true);
    REQUIRE(t.grad().size() == 3);
    t.grad()[1] = 2.0;
    t.zero_grad();
    CHECK(t.grad()[1] == 0.0);
    t.set_requires_grad(false);
    CHECK_FALSE(t.requires_grad());
  }

  TEST_CASE("equality compares shape and data") {
    CHECK(Tensor({2, 2}, 1.0) == Tensor({2, 2}, 1.0));
    CHECK_FALSE(Tensor({4}, 1.0) == Tensor({2, 2}, 1.0));
    CHECK(Tensor::vector({1, 2}).shape() == Shape{2});
  }
}
