#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "hds/tensor.hpp"

using namespace hds;

TEST_CASE("construction and element access") {
  Tensor t({2, 3}, {1, 2, 3, 4, 5, 6});
  CHECK(t.rank() == 2);
  CHECK(t.size() == 6);
  CHECK(t.at({1, 2}) == 6);
  t.at({0, 1}) = 9;
  CHECK(t[1] == 9);
  CHECK_THROWS_AS(Tensor({2, 2}, {1.0}), Error);
  CHECK_THROWS_AS(Tensor(Shape{}), Error);
}

TEST_CASE("broadcast shape rules") {
  CHECK(broadcast_shapes({2, 3}, {3}, "t") == Shape{2, 3});
  CHECK(broadcast_shapes({2, 1}, {2, 5}, "t") == Shape{2, 5});
  CHECK(broadcast_shapes({1}, {4, 2}, "t") == Shape{4, 2});
  CHECK_THROWS_AS(broadcast_shapes({2, 3}, {4}, "t"), Error);
}

TEST_CASE("broadcast strides zero out expanded axes") {
  auto st = broadcast_strides({3}, {2, 3});
  CHECK(st == std::vector<std::size_t>{0, 1});
  auto st2 = broadcast_strides({2, 1}, {2, 5});
  CHECK(st2 == std::vector<std::size_t>{1, 0});
}

TEST_CASE("finiteness scan") {
  Tensor t({3}, {1.0, 2.0, 3.0});
  CHECK(t.all_finite());
  t[1] = std::numeric_limits<double>::quiet_NaN();
  CHECK(t.first_non_finite() == 1);
}
