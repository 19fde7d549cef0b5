#include <pybind11/eigen.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include "statexp/diffusion.hpp"
#include "statexp/exact.hpp"
#include "statexp/expansion.hpp"
#include "statexp/model_io.hpp"
#include "statexp/response.hpp"
#include "statexp/version.hpp"

namespace py = pybind11;
using namespace statexp;

namespace {

SamplingConfig sampling(std::uint64_t samples, std::uint64_t seed, int workers, int threads) {
  SamplingConfig c;
  c.samples = samples;
  c.seed = seed;
  c.parallelism = {workers, threads};
  return c;
}

py::tuple spec_tuple(const MomentSpec& s) {
  return py::make_tuple(s.exponents, s.order, numerator_of(s.coefficient), denominator_of(s.coefficient));
}

}  // namespace

PYBIND11_MODULE(_statexp, m) {
  m.doc() = "Expansions of nonequilibrium steady states in entropy flux and dynamical activity";
  m.attr("__version__") = kVersion;

  py::register_exception<ValidationError>(m, "ValidationError", PyExc_ValueError);
  py::register_exception<NumericalError>(m, "NumericalError", PyExc_ArithmeticError);
  py::register_exception<IoError>(m, "IoError", PyExc_OSError);

  py::class_<JumpModel>(m, "JumpModel")
      .def(py::init<std::vector<std::string>, Vector, double, Matrix, Matrix, double>(), py::arg("states"),
           py::arg("energy"), py::arg("beta"), py::arg("base_rates"), py::arg("forcing"), py::arg("epsilon"))
      .def_property_readonly("states", &JumpModel::states)
      .def_property_readonly("energy", &JumpModel::energy)
      .def_property_readonly("beta", &JumpModel::beta)
      .def_property_readonly("epsilon", &JumpModel::epsilon)
      .def_property_readonly("base_rates", &JumpModel::base_rates)
      .def_property_readonly("forcing", &JumpModel::forcing)
      .def("with_epsilon", &JumpModel::with_epsilon)
      .def("__len__", &JumpModel::size);

  m.def("ring3", &make_ring3, py::arg("epsilon"));
  m.def(
      "load_model",
      [](const std::string& path) {
        ModelFile f = load_model_file(path);
        py::dict d;
        d["model"] = f.model;
        d["potential"] = f.potential ? py::cast(*f.potential) : py::none();
        d["observable"] = f.observable ? py::cast(*f.observable) : py::none();
        return d;
      },
      py::arg("path"));

  m.def("equilibrium_distribution", &equilibrium_distribution);
  m.def(
      "stationary_distribution",
      [](const JumpModel& model) { return stationary_solve(build_driven_rates(model)); }, py::arg("model"));
  m.def(
      "spectral_gap", [](const JumpModel& model) { return spectral_gap(base_rate_matrix(model)); }, py::arg("model"));
  m.def("mclennan_h", &mclennan_h, py::arg("model"));
  m.def("second_order_coefficient", &second_order_coefficient, py::arg("model"));
  m.def("epsilon_derivative", py::overload_cast<const JumpModel&, int>(&epsilon_derivative_oracle), py::arg("model"),
        py::arg("order"));
  m.def("default_horizon", &default_horizon, py::arg("model"));

  m.def(
      "enumerate_terms",
      [](int order, int cutoff) {
        py::list out;
        for (const auto& s : enumerate_terms(order, cutoff)) out.append(spec_tuple(s));
        return out;
      },
      py::arg("order"), py::arg("activity_cutoff") = kNoActivityCutoff,
      "List of (exponents, order, numerator, denominator).");
  m.def(
      "tilted_moments",
      [](const JumpModel& model, const std::vector<int>& exponents, double horizon) {
        return tilted_moments_exact(model, make_moment_spec(exponents), horizon);
      },
      py::arg("model"), py::arg("exponents"), py::arg("horizon"));
  m.def(
      "estimate_moment",
      [](const JumpModel& model, int x, const std::vector<int>& exponents, double horizon, std::uint64_t samples,
         std::uint64_t seed, int workers, int threads) {
        const MomentEstimate e =
            estimate_moment(model, x, horizon, make_moment_spec(exponents), sampling(samples, seed, workers, threads));
        return py::make_tuple(e.mean, e.se);
      },
      py::arg("model"), py::arg("x"), py::arg("exponents"), py::arg("horizon"), py::arg("samples"),
      py::arg("seed") = 1, py::arg("workers") = 1, py::arg("threads") = 0);
  m.def(
      "partial_sums",
      [](const JumpModel& model, int max_order, double horizon) {
        AssembleOptions o;
        o.max_order = max_order;
        o.horizon = horizon;
        Matrix out(model.size(), max_order + 1);
        const auto all = assemble_all(model, o);
        for (Index x = 0; x < model.size(); ++x)
          for (int k = 0; k <= max_order; ++k) out(x, k) = all[x].partial_sums[k];
        return out;
      },
      py::arg("model"), py::arg("max_order") = 2, py::arg("horizon") = 0.0,
      "Exact partial sums p_0..p_M of rho/rho0, one row per state.");
  m.def(
      "check_normalization",
      [](const JumpModel& model, int x, double horizon, std::uint64_t samples, std::uint64_t seed, int workers,
         int threads) {
        const MomentEstimate e = check_normalization(model, x, horizon, sampling(samples, seed, workers, threads));
        return py::make_tuple(e.mean, e.se);
      },
      py::arg("model"), py::arg("x"), py::arg("horizon"), py::arg("samples"), py::arg("seed") = 1,
      py::arg("workers") = 1, py::arg("threads") = 0);

  m.def(
      "continuum_activity",
      [](double epsilon, double x, double delta) {
        constexpr double w = 2.0 * 3.14159265358979323846;
        const ContinuumActivity r = continuum_activity_limit(
            {[](double y) { return std::cos(w * y); }, [](double y) { return -w * std::sin(w * y); }},
            {[](double) { return 1.0; }, [](double) { return 0.0; }}, 1.0, 1.0, epsilon, x, delta);
        py::dict d;
        d["discrete"] = r.discrete;
        d["continuum"] = r.continuum;
        d["error"] = r.error;
        d["roundoff_bound"] = r.roundoff_bound;
        return d;
      },
      py::arg("epsilon"), py::arg("x"), py::arg("delta"), "Overdamped ring U = cos(2 pi x), f = 1.");
  m.def(
      "ring_chain_density",
      [](double epsilon, int cells) { return ring_chain_density(make_diff_ring(epsilon), cells); },
      py::arg("epsilon"), py::arg("cells"));

  m.def(
      "response",
      [](const JumpModel& base, const Vector& potential, const Vector& observable, double horizon, double epsilon) {
        const PerturbationSetup s = make_perturbation(base, potential, observable, horizon, epsilon);
        const ResponseTerms t = response_expansion(s);
        const FdtReport f = fdt_consistency_check(s);
        py::dict d;
        d["zeroth"] = t.zeroth;
        d["first"] = t.first;
        d["second"] = t.second;
        d["exact"] = exact_driven_expectation(s);
        d["fdt_gap"] = f.gap;
        return d;
      },
      py::arg("model"), py::arg("potential"), py::arg("observable"), py::arg("horizon"), py::arg("epsilon"));
}
