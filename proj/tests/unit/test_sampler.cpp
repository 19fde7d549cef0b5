#include <doctest.h>

#include <cmath>

#include "generators.hpp"
#include "statexp/exact.hpp"
#include "statexp/sampler.hpp"

using namespace statexp;

namespace {

SamplingConfig config(std::uint64_t samples, std::uint64_t seed, int workers = 4, int threads = 0) {
  SamplingConfig c;
  c.samples = samples;
  c.seed = seed;
  c.parallelism = {workers, threads};
  return c;
}

bool agrees(const MomentEstimate& e, double exact, double k = 4.0) {
  return std::abs(e.mean - exact) <= k * e.se + 1e-12;
}

}  // namespace

TEST_SUITE("sampler") {
  TEST_CASE("girsanov identity holds on every path") {
    StreamRng rng(301, 0);
    for (int trial = 0; trial < 20; ++trial) {
      const JumpModel m = testing::random_model(rng, 3 + trial % 5, 0.2 + rng.uniform());
      const RateMatrix ref = base_rate_matrix(m);
      for (int p = 0; p < 20; ++p) {
        StreamRng path_rng(302, static_cast<std::uint64_t>(trial * 100 + p));
        const Trajectory path = simulate_path(ref, p % m.size(), 2.0, path_rng);
        const GirsanovPair g = girsanov_check(path, m);
        CHECK(g.lhs == doctest::Approx(g.rhs).epsilon(1e-12).scale(1.0));
      }
    }
  }

  TEST_CASE("time reversal flips the entropy flux and keeps the activity") {
    StreamRng rng(303, 0);
    for (int trial = 0; trial < 20; ++trial) {
      const JumpModel m = testing::random_model(rng, 3 + trial % 5, 0.5);
      StreamRng path_rng(304, static_cast<std::uint64_t>(trial));
      const Trajectory path = simulate_path(base_rate_matrix(m), 0, 3.0, path_rng);
      const Trajectory back = reverse(path);
      CHECK(back.start == path.final_state());
      CHECK(back.final_state() == path.start);
      CHECK(path_entropy_flux(back, m) == -path_entropy_flux(path, m));
      const double t = path_activity(path, m, 3).activity;
      CHECK(path_activity(back, m, 3).activity == doctest::Approx(t).epsilon(1e-12));
      const Trajectory twice = reverse(back);
      CHECK(twice.states == path.states);
    }
  }

  TEST_CASE("streamed summaries equal summaries of recorded paths") {
    const JumpModel ring = make_ring3(0.3);
    const JumpSampler sampler(base_rate_matrix(ring));
    for (std::uint64_t s = 0; s < 50; ++s) {
      StreamRng a(305, s), b(305, s);
      const PathSummary recorded = summarize(sampler.path(s % 3, 1.5, a), 3);
      PathSummary streamed(3);
      sampler.run(s % 3, 1.5, b, streamed);
      CHECK(streamed.final_state == recorded.final_state);
      CHECK((streamed.jumps - recorded.jumps).cwiseAbs().maxCoeff() == 0.0);
      CHECK((streamed.occupation - recorded.occupation).cwiseAbs().maxCoeff() < 1e-14);
      CHECK(recorded.occupation.sum() == doctest::Approx(1.5).epsilon(1e-14));
    }
  }

  TEST_CASE("activity truncation stays within its bound") {
    StreamRng rng(306, 0);
    const JumpModel m = testing::random_model(rng, 5, 1.5);
    const JumpSampler sampler(base_rate_matrix(m));
    for (int j = 1; j <= 4; ++j) {
      const ObservableKernel kernel(m, j);
      for (std::uint64_t s = 0; s < 20; ++s) {
        StreamRng path_rng(307, s);
        PathSummary summary(m.size());
        sampler.run(0, 2.0, path_rng, summary);
        const PathObservables obs = kernel.evaluate(summary);
        double partial = 0.0;
        for (double t : obs.activity_orders) partial += t;
        CHECK(std::abs(obs.activity - partial) <= obs.truncation_bound * (1 + 1e-12) + 1e-15);
      }
    }
  }

  TEST_CASE("sampled moments agree with exact moments") {
    const JumpModel ring = make_ring3(0.3);
    const double t = 1.0;
    const std::vector<MomentSpec> specs = {make_moment_spec({1}), make_moment_spec({1, 1}), make_moment_spec({3}),
                                           make_moment_spec({1, 0, 1})};
    for (Index x = 0; x < 3; ++x) {
      const auto estimates = estimate_moments(ring, x, t, specs, config(200000, 308 + x));
      for (std::size_t i = 0; i < specs.size(); ++i)
        CHECK(agrees(estimates[i], tilted_moment_exact(ring, specs[i], x, t)));
    }
  }

  TEST_CASE("normalization and density reweighting") {
    const JumpModel ring = make_ring3(0.4);
    const Vector rho0 = equilibrium_distribution(ring);
    const Vector p = evolve_distribution(build_driven_rates(ring), rho0, 0.8);
    for (Index x = 0; x < 3; ++x) {
      CHECK(agrees(check_normalization(ring, x, 0.8, config(100000, 310)), 1.0));
      CHECK(agrees(estimate_density_ratio(ring, x, 0.8, config(100000, 311)), p(x) / rho0(x)));
    }
    for (const auto& row : embedding_check(ring, 0.8, config(100000, 312)))
      CHECK(within_standard_errors(row.driven.mean, row.driven.se, row.reweighted.mean, row.reweighted.se, 4.0));
  }

  TEST_CASE("estimates do not depend on the thread count") {
    const JumpModel ring = make_ring3(0.3);
    const MomentSpec spec = make_moment_spec({1, 1});
    const MomentEstimate a = estimate_moment(ring, 1, 1.0, spec, config(20000, 313, 8, 1));
    const MomentEstimate b = estimate_moment(ring, 1, 1.0, spec, config(20000, 313, 8, 8));
    CHECK(a.mean == b.mean);
    CHECK(a.se == b.se);
  }

  TEST_CASE("occupancy fractions sum to one") {
    const auto f = occupancy_fractions(build_driven_rates(make_ring3(0.3)), 0, 2.0, config(5000, 314));
    double total = 0.0;
    for (const auto& e : f) total += e.mean;
    CHECK(total == doctest::Approx(1.0).epsilon(1e-12));
  }

  TEST_CASE("jumps along missing edges are rejected") {
    Matrix rates = Matrix::Zero(3, 3);
    rates(0, 1) = rates(1, 0) = rates(1, 2) = rates(2, 1) = 1.0;
    const JumpModel line({"a", "b", "c"}, Vector::Zero(3), 1.0, rates, Matrix::Zero(3, 3), 0.1);
    Trajectory path;
    path.start = 0;
    path.horizon = 1.0;
    path.times = {0.5};
    path.states = {2};
    CHECK_THROWS_AS(path_entropy_flux(path, line), ValidationError);
  }

  TEST_CASE("categorical draws follow the probabilities") {
    Vector p(3);
    p << 0.2, 0.5, 0.3;
    StreamRng rng(315, 0);
    Vector counts = Vector::Zero(3);
    const int n = 100000;
    for (int i = 0; i < n; ++i) counts(sample_state(p, rng)) += 1.0;
    for (Index x = 0; x < 3; ++x) CHECK(std::abs(counts(x) / n - p(x)) < 4.0 * std::sqrt(p(x) * (1 - p(x)) / n));
  }
}
