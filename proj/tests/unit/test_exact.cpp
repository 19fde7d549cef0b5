#include <doctest.h>

#include <cmath>

#include "generators.hpp"
#include "statexp/exact.hpp"

using namespace statexp;

namespace {

double max_abs(const Vector& v) { return v.cwiseAbs().maxCoeff(); }

}  // namespace

TEST_SUITE("exact") {
  TEST_CASE("ring3 driven stationary distribution") {
    const Vector rho = stationary_solve(build_driven_rates(make_ring3(0.2)));
    CHECK(rho(0) == doctest::Approx(0.650801870809583859).epsilon(1e-13));
    CHECK(rho(1) == doctest::Approx(0.26195838494813518641).epsilon(1e-13));
    CHECK(rho(2) == doctest::Approx(0.087239744242280954587).epsilon(1e-13));
  }

  TEST_CASE("ring3 first and second order profiles") {
    const JumpModel ring = make_ring3(0.1);
    const Vector h = mclennan_h(ring);
    CHECK(h(0) == doctest::Approx(0.10087280316597760024).epsilon(1e-12));
    CHECK(h(1) == doctest::Approx(-0.34015602715647966869).epsilon(1e-12));
    CHECK(h(2) == doctest::Approx(0.17928514601048240902).epsilon(1e-12));
    const Vector H = second_order_parts(ring).H;
    CHECK(H(0) == doctest::Approx(-0.081629263478720672396).epsilon(1e-12));
    CHECK(H(1) == doctest::Approx(0.13529582996051738986).epsilon(1e-12));
    CHECK(H(2) == doctest::Approx(0.23539101111069868577).epsilon(1e-12));
  }

  TEST_CASE("ring3 higher derivatives and spectral gap") {
    const JumpModel ring = make_ring3(0.1);
    const Vector d3 = epsilon_derivative_oracle(ring, 3) / 6.0;
    const Vector d4 = epsilon_derivative_oracle(ring, 4) / 24.0;
    const double e3[] = {0.0111765392232818, -0.0390883637249795, 0.0236691135050812};
    const double e4[] = {0.00830909398233517, -0.0138948461190211, -0.023626253852192};
    for (int x = 0; x < 3; ++x) {
      CHECK(d3(x) == doctest::Approx(e3[x]).epsilon(1e-6));
      CHECK(d4(x) == doctest::Approx(e4[x]).epsilon(1e-5));
    }
    CHECK(spectral_gap(base_rate_matrix(ring)) == doctest::Approx(2.73727370016488).epsilon(1e-12));
  }

  TEST_CASE("ring3 transient distribution") {
    const Vector p0 = Vector::Unit(3, 0);
    const Vector p = evolve_distribution(build_driven_rates(make_ring3(0.2)), p0, 1.0);
    CHECK(p(0) == doctest::Approx(0.672634301817).epsilon(1e-10));
    CHECK(p(1) == doctest::Approx(0.243392377321).epsilon(1e-10));
    CHECK(p(2) == doctest::Approx(0.0839733208619).epsilon(1e-10));
  }

  TEST_CASE("stationary solve annihilates the generator") {
    StreamRng rng(101, 0);
    for (int trial = 0; trial < 25; ++trial) {
      const JumpModel m = testing::random_model(rng, 2 + trial % 8, 0.7);
      const RateMatrix k = build_driven_rates(m);
      const Vector rho = stationary_solve(k);
      CHECK(rho.sum() == doctest::Approx(1.0).epsilon(1e-14));
      CHECK(rho.minCoeff() > 0.0);
      CHECK(max_abs(k.generator().transpose() * rho) < 1e-13 * k.max_escape_rate());
      const Eigen::FullPivLU<Matrix> lu(k.generator().transpose());
      REQUIRE(lu.kernel().cols() == 1);
      const Vector null = lu.kernel().col(0) / lu.kernel().col(0).sum();
      CHECK(max_abs(rho - null) < 1e-12);
      const Vector rho0 = stationary_solve(base_rate_matrix(m));
      CHECK(max_abs(rho0 - equilibrium_distribution(m)) < 1e-13);
    }
  }

  TEST_CASE("evolution is dual to observable evolution and conserves mass") {
    StreamRng rng(102, 0);
    for (int trial = 0; trial < 15; ++trial) {
      const JumpModel m = testing::random_model(rng, 3 + trial % 5, 0.5);
      const RateMatrix k = build_driven_rates(m);
      Vector p0 = testing::random_vector(rng, m.size()).cwiseAbs();
      p0 /= p0.sum();
      const Vector g = testing::random_vector(rng, m.size());
      const double t = 0.1 + 2.0 * rng.uniform();
      const Vector p = evolve_distribution(k, p0, t);
      CHECK(p.sum() == doctest::Approx(1.0).epsilon(1e-13));
      CHECK(p.dot(g) == doctest::Approx(p0.dot(evolve_observable(k, g, t))).epsilon(1e-12));
      const Vector far = evolve_distribution(k, p0, 60.0 / spectral_gap(base_rate_matrix(m.with_epsilon(0.0))));
      CHECK(max_abs(far - stationary_solve(k)) < 1e-6);
    }
  }

  TEST_CASE("first order profile matches the derivative oracle") {
    StreamRng rng(103, 0);
    for (int trial = 0; trial < 15; ++trial) {
      const JumpModel m = testing::random_model(rng, 3 + trial % 6, 0.1);
      const Vector rho0 = equilibrium_distribution(m);
      const Vector h = mclennan_h(m);
      CHECK(std::abs(rho0.dot(h)) < 1e-13);
      CHECK(max_abs(epsilon_derivative_oracle(m, 1) + m.beta() * h) < 1e-8 * (1.0 + max_abs(h)));
      const Vector c2 = second_order_coefficient(m);
      CHECK(std::abs(rho0.dot(c2)) < 1e-12);
      CHECK(max_abs(epsilon_derivative_oracle(m, 2) / 2.0 - c2) < 1e-6 * (1.0 + max_abs(c2)));
    }
  }

  TEST_CASE("poisson solve inverts the reference generator") {
    StreamRng rng(104, 0);
    const JumpModel m = testing::random_model(rng, 6, 0.0);
    const Vector rho0 = equilibrium_distribution(m);
    const Matrix L = base_rate_matrix(m).generator();
    Vector u = testing::random_vector(rng, 6);
    u.array() -= rho0.dot(u);
    const Vector v = solve_poisson(L, rho0, u);
    CHECK(max_abs(L * v + u) < 1e-12);
    CHECK(std::abs(rho0.dot(v)) < 1e-14);
    CHECK_THROWS_AS(solve_poisson(L, rho0, Vector::Ones(6)), NumericalError);
  }

  TEST_CASE("tilted moments: exact jet agrees with finite differences") {
    StreamRng rng(105, 0);
    const std::vector<std::vector<int>> specs = {{1}, {1, 1}, {1, 0, 1}, {3}, {1, 2}};
    for (int trial = 0; trial < 5; ++trial) {
      const JumpModel m = testing::random_model(rng, 3 + trial, 0.3);
      const double t = 0.5 + rng.uniform();
      for (const auto& b : specs) {
        const MomentSpec spec = make_moment_spec(b);
        const Vector exact = tilted_moments_exact(m, spec, t);
        for (Index x = 0; x < m.size(); ++x)
          CHECK(exact(x) == doctest::Approx(tilted_moment_fd(m, spec, x, t)).epsilon(1e-5).scale(1e-2));
      }
    }
  }

  TEST_CASE("equilibrium entropy flux has zero mean from rho0") {
    StreamRng rng(106, 0);
    for (int trial = 0; trial < 10; ++trial) {
      const JumpModel m = testing::random_model(rng, 3 + trial % 5, 0.4);
      const Vector s = tilted_moments_exact(m, make_moment_spec({1}), 1.3);
      CHECK(std::abs(equilibrium_distribution(m).dot(s)) < 1e-13);
    }
  }

  TEST_CASE("richardson derivative of smooth functions") {
    const auto fn = [](double e) {
      Vector v(2);
      v << std::sin(e), std::exp(2.0 * e);
      return v;
    };
    const Vector d1 = richardson_derivative(fn, 1, 1e-2);
    CHECK(d1(0) == doctest::Approx(1.0).epsilon(1e-11));
    CHECK(d1(1) == doctest::Approx(2.0).epsilon(1e-11));
    const Vector d3 = richardson_derivative(fn, 3, 1e-2);
    CHECK(d3(0) == doctest::Approx(-1.0).epsilon(1e-6));
    CHECK(d3(1) == doctest::Approx(8.0).epsilon(1e-6));
  }

  TEST_CASE("reducible chains are rejected by the stationary solver") {
    Matrix rates = Matrix::Zero(3, 3);
    rates(0, 1) = rates(1, 0) = 1.0;
    rates(1, 2) = 1.0;
    CHECK_THROWS_AS(stationary_solve(RateMatrix::from_rates(rates)), ReducibleChainError);
  }
}
