#include "cli.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include "statexp/diffusion.hpp"
#include "statexp/exact.hpp"
#include "statexp/expansion.hpp"
#include "statexp/model_io.hpp"
#include "statexp/response.hpp"
#include "statexp/version.hpp"

namespace statexp::cli {

namespace {

using nlohmann::json;

struct Common {
  std::string model;
  std::uint64_t seed = 1;
  int workers = 1;
  int threads = 0;
  std::string out = "-";
};

struct Loaded {
  ModelFile file;
  std::string hash;
};

Loaded load(const std::string& path) {
  const std::string text = read_text_file(path);
  json doc;
  try {
    doc = json::parse(text);
  } catch (const json::parse_error& e) {
    throw SchemaError("", std::string("invalid JSON: ") + e.what());
  }
  return {parse_model(doc), content_hash(text)};
}

SamplingConfig sampling(const Common& c, std::uint64_t samples) {
  SamplingConfig s;
  s.samples = samples;
  s.seed = c.seed;
  s.parallelism = {c.workers, c.threads};
  return s;
}

json metadata(const std::string& command, const Common& c, const std::string& hash, json params) {
  return {{"tool", "statexp"},
          {"version", kVersion},
          {"command", command},
          {"model_hash", hash},
          {"seed", c.seed},
          {"workers", c.workers},
          {"params", std::move(params)}};
}

void emit(const Common& c, const std::string& text) {
  if (c.out == "-") {
    std::cout << text;
    std::cout.flush();
    return;
  }
  std::ofstream file(c.out, std::ios::binary);
  if (!file) throw IoError("cannot open '" + c.out + "' for writing");
  file << text;
  if (!file) throw IoError("failed writing '" + c.out + "'");
}

void emit_json(const Common& c, const json& document) { emit(c, document.dump(2) + "\n"); }

std::string csv_header(const json& meta) {
  std::ostringstream s;
  for (const auto& [key, value] : meta.items()) s << "# " << key << ": " << value.dump() << "\n";
  return s.str();
}

std::string number(double v) {
  // Shortest round-trip form, the same digits the JSON writer produces.
  return json(v).dump();
}

json label_list(const JumpModel& model, const std::vector<Index>& states) {
  json out = json::array();
  for (Index s : states) out.push_back(model.states()[s]);
  return out;
}

std::vector<double> deduplicate(const std::vector<double>& values) {
  std::vector<double> out;
  for (double v : values)
    if (std::find(out.begin(), out.end(), v) == out.end()) out.push_back(v);
  return out;
}

int cmd_validate(const Common& c) {
  const std::string text = read_text_file(c.model);
  json report = metadata("validate", c, content_hash(text), json::object());
  try {
    json doc;
    try {
      doc = json::parse(text);
    } catch (const json::parse_error& e) {
      throw SchemaError("", std::string("invalid JSON: ") + e.what());
    }
    const ModelFile file = parse_model(doc);
    const JumpModel& m = file.model;
    const Vector rho0 = equilibrium_distribution(m);
    json balance = json::array();
    double worst = 0.0;
    for (Index x = 0; x < m.size(); ++x) {
      for (Index y = x + 1; y < m.size(); ++y) {
        const double a = rho0(x) * m.base_rates()(x, y), b = rho0(y) * m.base_rates()(y, x);
        if (a == 0.0 && b == 0.0) continue;
        const double residual = std::abs(a - b) / std::max(a, b);
        worst = std::max(worst, residual);
        balance.push_back({{"from", m.states()[x]}, {"to", m.states()[y]}, {"residual", residual}});
      }
    }
    const CirculationReport circ = circulation_check(m);
    json cycles = json::array();
    for (const auto& cycle : circ.cycles) {
      std::vector<Index> states(cycle.states.begin(), cycle.states.end());
      cycles.push_back({{"states", label_list(m, states)}, {"circulation", cycle.circulation}});
    }
    report["valid"] = true;
    report["detailed_balance"] = {{"pairs", balance}, {"max_residual", worst}};
    report["irreducible"] = true;
    report["circulation"] = {{"cycles", cycles}, {"conservative", circ.conservative}};
    emit_json(c, report);
    return ok;
  } catch (const SchemaError& e) {
    report["valid"] = false;
    report["error"] = {{"pointer", e.pointer()}, {"message", e.what()}};
  } catch (const ReducibleChainError& e) {
    report["valid"] = false;
    report["irreducible"] = false;
    report["error"] = {{"message", e.what()}, {"closed_subset", e.closed_subset()}};
  } catch (const ValidationError& e) {
    report["valid"] = false;
    report["error"] = {{"message", e.what()}};
  }
  emit_json(c, report);
  return validation_failure;
}

int cmd_solve(const Common& c, const std::vector<double>& epsilons) {
  const Loaded in = load(c.model);
  const JumpModel& m = in.file.model;
  const std::vector<double> list = deduplicate(epsilons);
  const Vector rho0 = equilibrium_distribution(m);
  std::ostringstream s;
  s << csv_header(metadata("solve", c, in.hash, {{"epsilon", list}}));
  s << "state,epsilon,rho,rho_over_rho0\n";
  for (double eps : list) {
    const Vector rho = stationary_solve(build_driven_rates(m.with_epsilon(eps)));
    for (Index x = 0; x < m.size(); ++x)
      s << m.states()[x] << "," << number(eps) << "," << number(rho(x)) << "," << number(rho(x) / rho0(x)) << "\n";
  }
  emit(c, s.str());
  return ok;
}

struct ExpandArgs {
  int order = 2;
  std::string backend = "exact";
  double horizon = 0.0;
  std::uint64_t samples = 100000;
  std::vector<double> epsilon;
};

int cmd_expand(const Common& c, const ExpandArgs& a) {
  const Loaded in = load(c.model);
  JumpModel m = in.file.model;
  if (!a.epsilon.empty()) m = m.with_epsilon(a.epsilon.front());
  AssembleOptions opts;
  opts.max_order = a.order;
  opts.backend = backend_from_string(a.backend);
  opts.horizon = a.horizon;
  opts.sampling = sampling(c, a.samples);
  const double horizon = a.horizon > 0.0 ? a.horizon : default_horizon(m);

  std::vector<Assembly> assemblies;
  if (opts.backend == Backend::exact) {
    assemblies = assemble_all(m, opts);
  } else {
    for (Index x = 0; x < m.size(); ++x) assemblies.push_back(assemble(m, x, opts));
  }

  const Vector rho0 = equilibrium_distribution(m);
  const Vector exact = stationary_solve(build_driven_rates(m)).cwiseQuotient(rho0);
  std::vector<Vector> derivatives;
  for (int k = 1; k <= std::min(a.order, 4); ++k) derivatives.push_back(epsilon_derivative_oracle(m, k));

  json states = json::array();
  std::vector<TermValue> all_terms;
  for (const auto& as : assemblies) {
    json entry = to_json(as, m);
    json taylor = json::array();
    double partial = 1.0, factorial = 1.0, power = 1.0;
    taylor.push_back(partial);
    for (std::size_t k = 0; k < derivatives.size(); ++k) {
      factorial *= static_cast<double>(k + 1);
      power *= m.epsilon();
      partial += derivatives[k](as.x) * power / factorial;
      taylor.push_back(partial);
    }
    entry["oracle"] = {{"taylor_partial_sums", taylor}, {"rho_over_rho0", exact(as.x)},
                       {"residual", exact(as.x) - as.partial_sums.back()}};
    states.push_back(entry);
    all_terms.insert(all_terms.end(), as.terms.begin(), as.terms.end());
  }
  json params = {{"order", a.order}, {"backend", a.backend}, {"T", horizon}, {"epsilon", m.epsilon()}};
  if (opts.backend == Backend::mc) params["samples"] = a.samples;
  json doc = metadata("expand", c, in.hash, params);
  doc["states"] = states;
  doc["convergence"] = to_json(convergence_diagnostic(all_terms, m.epsilon()));
  emit_json(c, doc);
  return ok;
}

struct DiffuseArgs {
  double epsilon = 0.05;
  double modulation = 0.0;
  double dt = 1e-3;
  double horizon = 1.0;
  double x0 = 0.3;
  std::uint64_t samples = 10000;
  int grid = 0;
  int oracle_cells = 1024;
};

DiffusionModel ring_model(double epsilon, double modulation) {
  if (modulation == 0.0) return make_diff_ring(epsilon);
  constexpr double w = 2.0 * 3.14159265358979323846;
  return make_periodic_1d({[](double x) { return std::cos(w * x); }, [](double x) { return -w * std::sin(w * x); }},
                          {[modulation](double x) { return 1.0 + modulation * std::sin(w * x); },
                           [modulation](double x) { return modulation * w * std::cos(w * x); }},
                          1.0, 1.0, epsilon);
}

int cmd_diffuse(const Common& c, const DiffuseArgs& a) {
  const DiffusionModel model = ring_model(a.epsilon, a.modulation);
  const SamplingConfig config = sampling(c, a.samples);
  json params = {{"epsilon", a.epsilon}, {"modulation", a.modulation}, {"dt", a.dt}, {"T", a.horizon},
                 {"x0", a.x0}, {"samples", a.samples}, {"grid", a.grid}};
  json doc = metadata("diffuse", c, "diff-ring", params);

  const double start[1] = {a.x0};
  const NormalizationBias nb = normalization_bias(model, start, a.horizon, a.dt, config);
  json levels = json::array(), diffs = json::array();
  for (std::size_t i = 0; i < nb.levels.size(); ++i)
    levels.push_back({{"dt", a.dt / (1 << i)}, {"mean", nb.levels[i].mean}, {"se", nb.levels[i].se}});
  for (const auto& d : nb.differences) diffs.push_back({{"mean", d.mean}, {"se", d.se}});
  doc["normalization"] = {{"levels", levels},
                          {"differences", diffs},
                          {"bias_ratio", nb.ratio},
                          {"bias", nb.bias},
                          {"stability_threshold", stability_threshold(model)}};

  if (a.grid > 0) {
    const FirstOrderDensity d = mclennan_first_order_diffusion(model, a.grid, a.horizon, {a.dt, 0}, config);
    json density = to_json(d);
    if (a.oracle_cells > 0) {
      const std::vector<double> chain = ring_chain_density(model, a.oracle_cells);
      std::vector<double> oracle;
      const int stride = a.oracle_cells / a.grid;
      if (stride * a.grid != a.oracle_cells) throw ValidationError("oracle cells must be a multiple of the grid size");
      for (int i = 0; i < a.grid; ++i) oracle.push_back(chain[i * stride]);
      density["oracle"] = oracle;
      density["oracle_cells"] = a.oracle_cells;
    }
    doc["density"] = density;
  }
  emit_json(c, doc);
  return ok;
}

struct ContinuumArgs {
  double epsilon = 0.05;
  std::vector<double> deltas{1e-2, 5e-3, 2.5e-3};
  std::vector<double> points{0.1, 0.3, 0.5, 0.7, 0.9};
};

int cmd_continuum(const Common& c, const ContinuumArgs& a) {
  constexpr double w = 2.0 * 3.14159265358979323846;
  const PeriodicField1D potential{[](double x) { return std::cos(w * x); },
                                  [](double x) { return -w * std::sin(w * x); }};
  const PeriodicField1D forcing{[](double) { return 1.0; }, [](double) { return 0.0; }};
  std::ostringstream rows;
  json exponents = json::object();
  for (double x : a.points) {
    std::vector<double> errors;
    for (double d : a.deltas) {
      const ContinuumActivity r = continuum_activity_limit(potential, forcing, 1.0, 1.0, a.epsilon, x, d);
      errors.push_back(r.error);
      rows << number(x) << "," << number(d) << "," << number(r.discrete) << "," << number(r.continuum) << ","
           << number(r.error) << "," << number(r.roundoff_bound) << "\n";
    }
    if (a.deltas.size() >= 2) exponents[number(x)] = scaling_exponent(a.deltas, errors);
  }
  json meta = metadata("continuum", c, "diff-ring", {{"epsilon", a.epsilon}, {"delta", a.deltas}, {"x", a.points}});
  meta["exponents"] = exponents;
  emit(c, csv_header(meta) + "x,delta,discrete,continuum,error,roundoff_bound\n" + rows.str());
  return ok;
}

struct RespondArgs {
  double horizon = 2.0;
  std::vector<double> epsilon;
  std::string backend = "exact";
  std::uint64_t samples = 100000;
  double threshold = 1e-4;
  double step = 0.0;
};

int cmd_respond(const Common& c, const RespondArgs& a) {
  const Loaded in = load(c.model);
  if (!in.file.potential || !in.file.observable)
    throw SchemaError("/observables", "respond needs the potential V and observable Q");
  const double eps = a.epsilon.empty() ? in.file.model.epsilon() : a.epsilon.front();
  const PerturbationSetup setup = make_perturbation(in.file.model, *in.file.potential, *in.file.observable, a.horizon, eps);
  const Backend backend = backend_from_string(a.backend);
  const ResponseTerms terms = response_expansion(setup, backend, sampling(c, a.samples));
  const double oracle = exact_driven_expectation(setup);
  const FdtReport fdt = fdt_consistency_check(setup, a.step);

  json params = {{"T", a.horizon}, {"epsilon", eps}, {"backend", a.backend}, {"fdt_threshold", a.threshold}};
  if (backend == Backend::mc) params["samples"] = a.samples;
  json doc = metadata("respond", c, in.hash, params);
  doc["prediction"] = to_json(terms);
  doc["oracle"] = oracle;
  doc["residuals"] = {{"order0", oracle - terms.zeroth},
                      {"order1", oracle - terms.zeroth - terms.first},
                      {"order2", oracle - terms.total()}};
  doc["second_derivative"] = {{"formula", second_derivative_formula(setup)},
                              {"finite_difference", driven_derivative(setup, 2, a.step)}};
  doc["fdt"] = to_json(fdt);
  doc["fdt"]["passed"] = fdt.gap <= a.threshold;
  emit_json(c, doc);
  return fdt.gap <= a.threshold ? ok : numerical_failure;
}

void add_common(CLI::App* sub, Common& c, bool needs_model, bool sampled) {
  if (needs_model) sub->add_option("--model", c.model, "Model JSON file")->required();
  if (sampled) {
    sub->add_option("--seed", c.seed, "Random seed");
    sub->add_option("--workers", c.workers, "Work partition (fixes results)")->check(CLI::PositiveNumber);
    sub->add_option("--threads", c.threads, "OS threads (0 = all cores; never changes results)")
        ->check(CLI::NonNegativeNumber);
  }
  sub->add_option("--out", c.out, "Output file, - for stdout");
}

}  // namespace

int run(int argc, const char* const* argv) {
  CLI::App app{"Expansions of nonequilibrium steady states in entropy flux and dynamical activity", "statexp"};
  app.set_version_flag("--version", kVersion);
  app.set_config("--config", "", "TOML file with option values; unknown keys are rejected");
  app.allow_config_extras(false);
  app.require_subcommand(1);

  Common common;
  std::vector<double> solve_eps{0.0};
  ExpandArgs expand;
  DiffuseArgs diffuse;
  ContinuumArgs continuum;
  RespondArgs respond;

  auto* validate = app.add_subcommand("validate", "Check a model file: detailed balance, irreducibility, circulations");
  add_common(validate, common, true, false);

  auto* solve = app.add_subcommand("solve", "Exact stationary distributions for a list of eps");
  add_common(solve, common, true, false);
  solve->add_option("--epsilon", solve_eps, "Drive amplitudes")->expected(1, -1);

  auto* exp = app.add_subcommand("expand", "Order-by-order expansion of rho/rho0");
  add_common(exp, common, true, true);
  exp->add_option("--order", expand.order, "Highest order M");
  exp->add_option("--backend", expand.backend, "exact or mc")->check(CLI::IsMember({"exact", "mc"}));
  exp->add_option("--T", expand.horizon, "Horizon (default 30/alpha)");
  exp->add_option("--samples", expand.samples, "Paths per state (mc)");
  exp->add_option("--epsilon", expand.epsilon, "Override the model's eps")->expected(1);

  auto* dif = app.add_subcommand("diffuse", "Overdamped ring: normalization bias and first-order density");
  add_common(dif, common, false, true);
  dif->add_option("--epsilon", diffuse.epsilon, "Drive amplitude");
  dif->add_option("--modulation", diffuse.modulation, "f = 1 + a sin(2 pi x)");
  dif->add_option("--dt", diffuse.dt, "Time step");
  dif->add_option("--T", diffuse.horizon, "Horizon");
  dif->add_option("--x0", diffuse.x0, "Start point of the normalization paths");
  dif->add_option("--samples", diffuse.samples, "Paths (per grid node for the density)");
  dif->add_option("--grid", diffuse.grid, "Grid points of the first-order density (0 skips it)");
  dif->add_option("--oracle-cells", diffuse.oracle_cells, "Cells of the jump-chain oracle (0 skips it)");

  auto* con = app.add_subcommand("continuum", "Discrete vs continuum activity on the overdamped ring");
  add_common(con, common, false, false);
  con->add_option("--epsilon", continuum.epsilon, "Drive amplitude");
  con->add_option("--delta", continuum.deltas, "Mesh sizes")->expected(1, -1);
  con->add_option("--x", continuum.points, "Sample points")->expected(1, -1);

  auto* res = app.add_subcommand("respond", "Second-order response to a potential perturbation");
  add_common(res, common, true, true);
  res->add_option("--T", respond.horizon, "Observation time");
  res->add_option("--epsilon", respond.epsilon, "Perturbation amplitude (default: model eps)")->expected(1);
  res->add_option("--backend", respond.backend, "exact or mc")->check(CLI::IsMember({"exact", "mc"}));
  res->add_option("--samples", respond.samples, "Paths (mc)");
  res->add_option("--fdt-threshold", respond.threshold, "Largest accepted relative FDT gap");
  res->add_option("--step", respond.step, "eps stencil step (default from the model)");

  try {
    app.parse(argc, argv);
  } catch (const CLI::Success& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return validation_failure;
  }

  try {
    if (*validate) return cmd_validate(common);
    if (*solve) return cmd_solve(common, solve_eps);
    if (*exp) return cmd_expand(common, expand);
    if (*dif) return cmd_diffuse(common, diffuse);
    if (*con) return cmd_continuum(common, continuum);
    if (*res) return cmd_respond(common, respond);
  } catch (const IoError& e) {
    std::cerr << "statexp: " << e.what() << "\n";
    return io_failure;
  } catch (const ValidationError& e) {
    std::cerr << "statexp: " << e.what() << "\n";
    return validation_failure;
  } catch (const NumericalError& e) {
    std::cerr << "statexp: " << e.what() << "\n";
    return numerical_failure;
  }
  return validation_failure;
}

}  // namespace statexp::cli
