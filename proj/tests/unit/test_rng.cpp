#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>
#include <stdexcept>

#include "statexp/parallel.hpp"
#include "statexp/rng.hpp"
#include "statexp/statistics.hpp"

using namespace statexp;

TEST_SUITE("rng") {
  TEST_CASE("philox known answers") {
    using A4 = std::array<std::uint32_t, 4>;
    CHECK(philox4x32({0, 0, 0, 0}, {0, 0}) == A4{0x6627e8d5, 0xe169c58d, 0xbc57ac4c, 0x9b00dbd8});
    CHECK(philox4x32({0xffffffff, 0xffffffff, 0xffffffff, 0xffffffff}, {0xffffffff, 0xffffffff}) ==
          A4{0x408f276d, 0x41c83b0e, 0xa20bc7c6, 0x6d5451fd});
    CHECK(philox4x32({0x243f6a88, 0x85a308d3, 0x13198a2e, 0x03707344}, {0xa4093822, 0x299f31d0}) ==
          A4{0xd16cfe09, 0x94fdcceb, 0x5001e420, 0x24126ea1});
  }

  TEST_CASE("streams are reproducible and distinct") {
    StreamRng a(7, 3, 1), b(7, 3, 1), c(7, 4, 1), d(7, 3, 2), e(8, 3, 1);
    for (int i = 0; i < 100; ++i) {
      const std::uint64_t v = a.next_u64();
      CHECK(v == b.next_u64());
      const std::uint64_t others[] = {c.next_u64(), d.next_u64(), e.next_u64()};
      CHECK(std::find(std::begin(others), std::end(others), v) == std::end(others));
    }
  }

  TEST_CASE("uniform and normal moments") {
    StreamRng rng(11, 0);
    RunningStats u, z, z2;
    const int n = 400000;
    for (int i = 0; i < n; ++i) {
      const double x = rng.uniform();
      REQUIRE(x > 0.0);
      REQUIRE(x < 1.0);
      u.add(x);
      const double g = rng.normal();
      z.add(g);
      z2.add(g * g);
    }
    CHECK(std::abs(u.mean - 0.5) < 4.0 * std::sqrt(1.0 / 12.0 / n));
    CHECK(std::abs(u.variance() - 1.0 / 12.0) < 1e-3);
    CHECK(std::abs(z.mean) < 4.0 / std::sqrt(n));
    CHECK(std::abs(z2.mean - 1.0) < 4.0 * std::sqrt(2.0 / n));
  }

  TEST_CASE("block results do not depend on the thread count") {
    auto task = [](int block, std::uint64_t begin, std::uint64_t end) {
      RunningStats s;
      for (std::uint64_t i = begin; i < end; ++i) {
        StreamRng rng(5, i);
        s.add(rng.normal() + block * 0.0);
      }
      return s;
    };
    auto merged = [&](int threads) {
      RunningStats total;
      for (const auto& s : run_blocks(10007, {7, threads}, task)) total.merge(s);
      return total;
    };
    const RunningStats one = merged(1);
    for (int threads : {2, 3, 8}) {
      const RunningStats many = merged(threads);
      CHECK(many.mean == one.mean);
      CHECK(many.m2 == one.m2);
      CHECK(many.count == one.count);
    }
  }

  TEST_CASE("block failures propagate") {
    auto task = [](int block, std::uint64_t, std::uint64_t) -> int {
      if (block == 2) throw std::runtime_error("block failed");
      return block;
    };
    CHECK_THROWS_AS(run_blocks(100, {4, 4}, task), std::runtime_error);
  }

  TEST_CASE("merged statistics equal sequential statistics") {
    StreamRng rng(12, 0);
    std::vector<double> xs(1000);
    for (double& x : xs) x = rng.normal() * 3.0 + 1.0;
    RunningStats all, left, right;
    for (std::size_t i = 0; i < xs.size(); ++i) {
      all.add(xs[i]);
      (i < 377 ? left : right).add(xs[i]);
    }
    left.merge(right);
    CHECK(left.mean == doctest::Approx(all.mean).epsilon(1e-14));
    CHECK(left.variance() == doctest::Approx(all.variance()).epsilon(1e-12));
  }

  TEST_CASE("exact sum is order independent and odd") {
    StreamRng rng(13, 0);
    for (int trial = 0; trial < 50; ++trial) {
      std::vector<double> xs(200);
      for (double& x : xs) x = std::ldexp(rng.normal(), static_cast<int>(rng.uniform() * 80) - 40);
      ExactSum forward, backward, negated;
      for (double x : xs) forward.add(x);
      for (auto it = xs.rbegin(); it != xs.rend(); ++it) backward.add(*it);
      std::shuffle(xs.begin(), xs.end(), std::mt19937_64(trial));
      for (double x : xs) negated.add(-x);
      CHECK(forward.value() == backward.value());
      CHECK(negated.value() == -forward.value());
    }
    ExactSum cancel;
    for (double x : {1e100, 1.0, -1e100}) cancel.add(x);
    CHECK(cancel.value() == 1.0);
  }
}
