#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <set>
#include <vector>

#include "oslolab/rng.hpp"

using namespace oslolab;

TEST_CASE("same seed, same stream") {
  Rng a(42), b(42);
  for (int i = 0; i < 100; ++i) CHECK(a.next_u64() == b.next_u64());
  Rng c(42), d(43);
  bool all_equal = true;
  for (int i = 0; i < 10; ++i) all_equal = all_equal && (c.next_u64() == d.next_u64());
  CHECK_FALSE(all_equal);
}

TEST_CASE("uniform ranges") {
  Rng r(7);
  for (int i = 0; i < 1000; ++i) {
    const double u = r.uniform();
    CHECK(u >= 0.0);
    CHECK(u < 1.0);
  }
  for (int i = 0; i < 1000; ++i) {
    const double u = r.uniform(-2.0, 3.0);
    CHECK(u >= -2.0);
    CHECK(u < 3.0);
  }
}

TEST_CASE("uniform_int inclusive bounds") {
  Rng r(9);
  std::set<int64_t> seen;
  for (int i = 0; i < 2000; ++i) {
    const int64_t v = r.uniform_int(2, 5);
    CHECK(v >= 2);
    CHECK(v <= 5);
    seen.insert(v);
  }
  CHECK(seen.size() == 4);  // all four values hit
  CHECK(r.uniform_int(3, 3) == 3);
}

TEST_CASE("normal moments") {
  Rng r(11);
  const int n = 20000;
  double sum = 0, sum2 = 0;
  for (int i = 0; i < n; ++i) {
    const double v = r.normal();
    sum += v;
    sum2 += v * v;
  }
  const double mean = sum / n;
  const double var = sum2 / n - mean * mean;
  CHECK(std::abs(mean) < 0.03);
  CHECK(std::abs(var - 1.0) < 0.05);
  Rng r2(11);
  CHECK(r2.normal(10.0, 0.0) == 10.0);
}

TEST_CASE("permutation is a bijection") {
  Rng r(5);
  const auto p = r.permutation(100);
  REQUIRE(p.size() == 100);
  std::vector<bool> hit(100, false);
  for (int64_t v : p) {
    REQUIRE(v >= 0);
    REQUIRE(v < 100);
    CHECK_FALSE(hit[static_cast<size_t>(v)]);
    hit[static_cast<size_t>(v)] = true;
  }
  // deterministic
  Rng r2(5);
  CHECK(r2.permutation(100) == p);
  CHECK(Rng(5).permutation(0).empty());
}

TEST_CASE("fnv1a64 known values") {
  // reference constants of the FNV-1a spec
  CHECK(fnv1a64("") == 0xcbf29ce484222325ull);
  CHECK(fnv1a64("a") == 0xaf63dc4c8601ec8cull);
  CHECK(fnv1a64("foobar") == 0x85944171f73967e8ull);
}

TEST_CASE("derive_seed separates labels") {
  const uint64_t a = derive_seed(1, "train-target");
  const uint64_t b = derive_seed(1, "train-shadow");
  const uint64_t c = derive_seed(2, "train-target");
  CHECK(a != b);
  CHECK(a != c);
  CHECK(derive_seed(1, "train-target") == a);
  CHECK(splitmix64(0) != 0);
}

TEST_CASE("streams with different labels look independent") {
  Rng a(derive_seed(1, "dataset"));
  Rng b(derive_seed(1, "split"));
  int same = 0;
  for (int i = 0; i < 64; ++i) same += a.next_u64() == b.next_u64();
  CHECK(same == 0);
}
