#include <doctest.h>

#include <cmath>
#include <set>
#include <vector>

#include "drpo/rng.hpp"

using drpo::Philox4x32;

TEST_CASE("philox4x32-10 known answers") {
  // Random123 kat_vectors
  CHECK(Philox4x32::encrypt({0, 0, 0, 0}, {0, 0}) ==
        Philox4x32::Block{0x6627e8d5, 0xe169c58d, 0xbc57ac4c, 0x9b00dbd8});
  CHECK(Philox4x32::encrypt({0xffffffff, 0xffffffff, 0xffffffff, 0xffffffff}, {0xffffffff, 0xffffffff}) ==
        Philox4x32::Block{0x408f276d, 0x41c83b0e, 0xa20bc7c6, 0x6d5451fd});
  CHECK(Philox4x32::encrypt({0x243f6a88, 0x85a308d3, 0x13198a2e, 0x03707344}, {0xa4093822, 0x299f31d0}) ==
        Philox4x32::Block{0xd16cfe09, 0x94fdcceb, 0x5001e420, 0x24126ea1});
}

TEST_CASE("streams are reproducible and distinct") {
  Philox4x32 a(42, 0), b(42, 0), c(42, 1), d(43, 0);
  std::vector<std::uint32_t> va, vb, vc, vd;
  for (int i = 0; i < 16; ++i) {
    va.push_back(a());
    vb.push_back(b());
    vc.push_back(c());
    vd.push_back(d());
  }
  CHECK(va == vb);
  CHECK(va != vc);
  CHECK(va != vd);
}

TEST_CASE("uniform and normal moments") {
  Philox4x32 rng(7, 3);
  const int n = 200000;
  double su = 0, sn = 0, sn2 = 0;
  for (int i = 0; i < n; ++i) {
    const double u = rng.uniform();
    REQUIRE(u >= 0.0);
    REQUIRE(u < 1.0);
    su += u;
    const double z = rng.normal();
    sn += z;
    sn2 += z * z;
  }
  CHECK(std::abs(su / n - 0.5) < 4 * std::sqrt(1.0 / 12 / n));
  CHECK(std::abs(sn / n) < 4 / std::sqrt(double(n)));
  CHECK(std::abs(sn2 / n - 1.0) < 4 * std::sqrt(2.0 / n));
}

TEST_CASE("derive_seed separates paths") {
  std::set<std::uint64_t> seen;
  for (std::uint64_t i = 0; i < 50; ++i)
    for (std::uint64_t j = 0; j < 50; ++j) seen.insert(drpo::derive_seed(1, {i, j}));
  CHECK(seen.size() == 2500);
  CHECK(drpo::derive_seed(1, {2, 3}) != drpo::derive_seed(1, {3, 2}));
  CHECK(drpo::derive_seed(1, {2}) == drpo::derive_seed(1, {2}));
}

TEST_CASE("categorical sampling by inverse cdf") {
  const std::vector<double> p{0.2, 0.8};
  CHECK(drpo::sample_categorical(p, 0.0) == 0);
  CHECK(drpo::sample_categorical(p, 0.1999) == 0);
  CHECK(drpo::sample_categorical(p, 0.2) == 1);
  CHECK(drpo::sample_categorical(p, 0.9999999) == 1);
  // zero-mass entries are never returned, even from rounding slack
  const std::vector<double> q{0.0, 0.5, 0.5 - 1e-17, 0.0};
  for (double u : {0.0, 0.3, 0.7, 0.999999999999})
    CHECK((drpo::sample_categorical(q, u) == 1 || drpo::sample_categorical(q, u) == 2));
}
