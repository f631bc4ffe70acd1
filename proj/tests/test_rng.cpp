#include <cmath>
#include <cstdint>
#include <vector>

#include "doctest.h"
#include "rlab/rng.hpp"

using namespace rlab;

TEST_CASE("splitmix64 matches the reference outputs for seed 0") {
  std::uint64_t state = 0;
  CHECK(splitmix64(state) == 0xE220A8397B1DCDAFULL);
  CHECK(splitmix64(state) == 0x6E789E6AA1B965F4ULL);
  CHECK(splitmix64(state) == 0x06C45D188009454FULL);
}

TEST_CASE("same seed and stream give the same sequence") {
  Rng a(42, Stream::Init), b(42, Stream::Init);
  for (int i = 0; i < 100; ++i) CHECK(a.next() == b.next());
}

TEST_CASE("streams of one seed are distinct") {
  Rng a(7, Stream::Init), b(7, Stream::Batch);
  int equal = 0;
  for (int i = 0; i < 100; ++i) equal += a.next() == b.next();
  CHECK(equal == 0);
}

TEST_CASE("uniform stays in [0, 1) and has mean near 1/2") {
  Rng r(3);
  double sum = 0.0;
  const int n = 100000;
  for (int i = 0; i < n; ++i) {
    const double u = r.uniform();
    REQUIRE(u >= 0.0);
    REQUIRE(u < 1.0);
    sum += u;
  }
  const double se = std::sqrt(1.0 / 12.0 / n);
  CHECK(std::abs(sum / n - 0.5) < 4.0 * se);
}

TEST_CASE("below is unbiased over a small range") {
  Rng r(11);
  std::vector<int> counts(7, 0);
  const int n = 70000;
  for (int i = 0; i < n; ++i) {
    const auto k = r.below(7);
    REQUIRE(k < 7);
    ++counts[k];
  }
  for (int c : counts) CHECK(std::abs(c - n / 7) < 400);
}

TEST_CASE("normal draws have zero mean and unit variance") {
  Rng r(5);
  const int n = 200000;
  double s1 = 0.0, s2 = 0.0;
  for (int i = 0; i < n; ++i) {
    const double z = r.normal();
    s1 += z;
    s2 += z * z;
  }
  const double mean = s1 / n;
  CHECK(std::abs(mean) < 4.0 / std::sqrt(n));
  CHECK(std::abs(s2 / n - mean * mean - 1.0) < 0.02);
}
