#include <doctest.h>

#include <cmath>

#include "generators.hpp"
#include "statexp/model.hpp"
#include "statexp/model_io.hpp"

using namespace statexp;

TEST_SUITE("model") {
  TEST_CASE("ring3 driven rate is the product of two exponentials") {
    const RateMatrix k = build_driven_rates(make_ring3(0.1));
    CHECK(k.rate(0, 1) == doctest::Approx(0.63762815162177329314).epsilon(1e-15));
    CHECK(k.rate(0, 1) == doctest::Approx(std::exp(-0.5) * std::exp(0.05)).epsilon(1e-15));
  }

  TEST_CASE("ring3 equilibrium distribution") {
    const Vector rho0 = equilibrium_distribution(make_ring3(0.0));
    CHECK(rho0(0) == doctest::Approx(0.66524095577482188953).epsilon(1e-15));
    CHECK(rho0(1) == doctest::Approx(0.24472847105479765247).epsilon(1e-15));
    CHECK(rho0(2) == doctest::Approx(0.090030573170380457998).epsilon(1e-15));
  }

  TEST_CASE("ring3 circulation is 3 and flagged nonconservative") {
    const CirculationReport r = circulation_check(make_ring3(0.1));
    REQUIRE(r.cycles.size() == 1);
    CHECK(std::abs(r.cycles[0].circulation) == doctest::Approx(3.0));
    CHECK_FALSE(r.conservative);
  }

  TEST_CASE("potential forcing is conservative and zero forcing keeps k0") {
    StreamRng rng(17, 0);
    for (int trial = 0; trial < 10; ++trial) {
      const JumpModel m = testing::random_model(rng, 6, 0.3);
      const Vector V = testing::random_vector(rng, 6);
      CHECK(circulation_check(m.with_forcing(potential_forcing(m.base_rates(), V))).conservative);
      const RateMatrix k = build_driven_rates(m.with_epsilon(0.0));
      CHECK((k.rates() - m.base_rates()).cwiseAbs().maxCoeff() == 0.0);
    }
  }

  TEST_CASE("generator rows sum to zero") {
    StreamRng rng(18, 0);
    for (int trial = 0; trial < 20; ++trial) {
      const JumpModel m = testing::random_model(rng, 2 + trial % 7, 0.5);
      const Matrix L = build_driven_rates(m).generator();
      CHECK(L.rowwise().sum().cwiseAbs().maxCoeff() < 1e-13);
    }
  }

  TEST_CASE("invalid models are rejected") {
    const JumpModel ring = make_ring3(0.1);
    Matrix rates = ring.base_rates();
    rates(0, 1) *= 1.1;
    CHECK_THROWS_AS(JumpModel(ring.states(), ring.energy(), 1.0, rates, ring.forcing(), 0.1), ValidationError);

    Matrix forcing = ring.forcing();
    forcing(1, 0) = 0.5;
    CHECK_THROWS_AS(JumpModel(ring.states(), ring.energy(), 1.0, ring.base_rates(), forcing, 0.1), ValidationError);

    Matrix sparse = ring.base_rates();
    sparse(0, 2) = sparse(2, 0) = 0.0;
    CHECK_THROWS_WITH_AS(JumpModel(ring.states(), ring.energy(), 1.0, sparse, ring.forcing(), 0.1),
                         doctest::Contains("(0, 2)"), ValidationError);

    CHECK_THROWS_AS(JumpModel(ring.states(), ring.energy(), -1.0, ring.base_rates(), ring.forcing(), 0.1),
                    ValidationError);
  }

  TEST_CASE("reducible chains report a closed subset") {
    Matrix rates = Matrix::Zero(4, 4);
    rates(0, 1) = rates(1, 0) = 1.0;
    rates(2, 3) = rates(3, 2) = 1.0;
    const auto closed = find_closed_subset(rates);
    REQUIRE(closed.has_value());
    CHECK(closed->size() == 2);
    CHECK_THROWS_AS(JumpModel({"a", "b", "c", "d"}, Vector::Zero(4), 1.0, rates, Matrix::Zero(4, 4), 0.0),
                    ReducibleChainError);
  }

  TEST_CASE("model files parse and round-trip") {
    const ModelFile f = load_model_file(STATEXP_FIXTURES "/ring3.json");
    const JumpModel ring = make_ring3(0.1);
    CHECK(f.model.states() == ring.states());
    CHECK((f.model.base_rates() - ring.base_rates()).cwiseAbs().maxCoeff() < 1e-15);
    CHECK((f.model.forcing() - ring.forcing()).cwiseAbs().maxCoeff() == 0.0);
    CHECK(f.model.epsilon() == 0.1);
    CHECK_FALSE(f.potential.has_value());

    const ModelFile again = parse_model(model_to_json(f.model));
    CHECK((again.model.base_rates() - f.model.base_rates()).cwiseAbs().maxCoeff() == 0.0);

    const ModelFile r = load_model_file(STATEXP_FIXTURES "/ring3_response.json");
    REQUIRE(r.potential.has_value());
    CHECK((*r.potential)(1) == 1.0);
    CHECK((*r.observable)(2) == 1.0);
  }

  TEST_CASE("schema errors carry JSON pointers") {
    nlohmann::json doc = nlohmann::json::parse(read_text_file(STATEXP_FIXTURES "/ring3.json"));
    doc["base_rates"][2]["rate"] = -1.0;
    try {
      parse_model(doc);
      FAIL("expected a schema error");
    } catch (const SchemaError& e) {
      CHECK(e.pointer() == "/base_rates/2/rate");
    }
    doc = nlohmann::json::parse(read_text_file(STATEXP_FIXTURES "/ring3.json"));
    doc["colour"] = "blue";
    CHECK_THROWS_AS(parse_model(doc), SchemaError);
    CHECK_THROWS_WITH_AS(load_model_file(STATEXP_FIXTURES "/ring3_asymmetric.json"), doctest::Contains("(1, 0)"),
                         SchemaError);
    CHECK_THROWS_AS(load_model_file(STATEXP_FIXTURES "/missing.json"), IoError);
  }

  TEST_CASE("content hash is stable") {
    CHECK(content_hash("") == "cbf29ce484222325");
    CHECK(content_hash("a") == "af63dc4c8601ec8c");
  }
}
