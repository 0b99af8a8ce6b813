#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <anchorkit/rng.hpp>

#include <cmath>
#include <cstdint>
#include <vector>

using anchorkit::Philox;

TEST_CASE("philox4x64-10 known-answer vectors") {
  // Frozen from an independent implementation of the same algorithm
  // (numpy.random.Philox raw output, key given explicitly, counter = 0).
  {
    Philox g(0, 0);
    const std::uint64_t expect[8] = {
        0x02f4ba6408e4d89bULL, 0x3dd62b0b9ca8c5b2ULL, 0x1c8667a55d902e79ULL,
        0x907d7a052fd5b4dcULL, 0x809bf322883987c3ULL, 0x471128b9e807f7ddULL,
        0xf250ba0dbec065b7ULL, 0xfc6ed66767a457bcULL};
    for (std::uint64_t e : expect) CHECK(g.next_u64() == e);
  }
  {
    Philox g(0x2026, 0);
    const std::uint64_t expect[4] = {0xf06f70fc4db11d1cULL, 0x36dca49c1bb94639ULL,
                                     0xf661db23dc4c4826ULL, 0x9155fb0c404545caULL};
    for (std::uint64_t e : expect) CHECK(g.next_u64() == e);
  }
  {
    Philox g(0xdeadbeefULL, 0xfaceb00cULL);
    const std::uint64_t expect[6] = {0x5346472091524187ULL, 0x904aa6ad56b9f8edULL,
                                     0x9d4977cef936e148ULL, 0xd0617320a02576ceULL,
                                     0x8f752286919c0d3aULL, 0xf7c4961710c69008ULL};
    for (std::uint64_t e : expect) CHECK(g.next_u64() == e);
  }
}

TEST_CASE("substreams are reproducible and disjoint from each other") {
  Philox a(42, 0), a2(42, 0), b(42, 1);
  bool any_diff = false;
  for (int i = 0; i < 64; ++i) {
    const std::uint64_t x = a.next_u64();
    CHECK(x == a2.next_u64());
    if (x != b.next_u64()) any_diff = true;
  }
  CHECK(any_diff);
}

TEST_CASE("uniform doubles live in [0,1) and (0,1]") {
  Philox g(7, 0);
  for (int i = 0; i < 10000; ++i) {
    const double u = g.next_double();
    CHECK(u >= 0.0);
    CHECK(u < 1.0);
    const double v = g.next_double_pos();
    CHECK(v > 0.0);
    CHECK(v <= 1.0);
  }
}

TEST_CASE("gaussian moments") {
  Philox g(123, 0);
  const int n = 400000;
  double s1 = 0, s2 = 0, s4 = 0;
  for (int i = 0; i < n; ++i) {
    const double z = g.next_gaussian();
    s1 += z;
    s2 += z * z;
    s4 += z * z * z * z;
  }
  CHECK(std::abs(s1 / n) < 0.01);
  CHECK(std::abs(s2 / n - 1.0) < 0.02);
  CHECK(std::abs(s4 / n - 3.0) < 0.1);
}

TEST_CASE("geometric failure counts have mean (1-p)/p") {
  Philox g(5, 3);
  const double p = 0.2;
  const int n = 200000;
  double sum = 0;
  for (int i = 0; i < n; ++i) sum += static_cast<double>(g.geometric_failures(p));
  CHECK(std::abs(sum / n - (1.0 - p) / p) < 0.05);
  CHECK(Philox(1, 0).geometric_failures(1.0) == 0);
  CHECK_THROWS_AS((void)Philox(1, 0).geometric_failures(0.0), std::invalid_argument);
}

TEST_CASE("gaussian_vector consumes the stream deterministically") {
  Philox g1(9, 9), g2(9, 9);
  auto v = g1.gaussian_vector(5);
  for (int i = 0; i < 5; ++i) CHECK(v[i] == g2.next_gaussian());
}
