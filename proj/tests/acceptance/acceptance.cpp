#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <functional>
#include <iostream>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "../../tools/cli.hpp"
#include "../unit/generators.hpp"
#include "statexp/diffusion.hpp"
#include "statexp/exact.hpp"
#include "statexp/expansion.hpp"
#include "statexp/model_io.hpp"
#include "statexp/response.hpp"

using namespace statexp;

namespace {

struct Outcome {
  bool pass = false;
  std::string detail;
};

struct Criterion {
  int id;
  std::string name;
  double budget_seconds;
  std::function<Outcome()> run;
};

std::string fmt(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.4g", v);
  return buf;
}

SamplingConfig sampling(std::uint64_t samples, std::uint64_t seed) {
  SamplingConfig c;
  c.samples = samples;
  c.seed = seed;
  c.parallelism = {16, 0};
  return c;
}

double max_abs(const Vector& v) { return v.cwiseAbs().maxCoeff(); }

Outcome coefficient_golden() {
  const std::map<std::vector<int>, Rational> expected = {
      {{1}, Rational(-1)}, {{1, 1}, Rational(1, 2)}, {{3}, Rational(-1, 24)}, {{1, 2}, Rational(-1, 8)},
      {{1, 0, 1}, Rational(1, 2)}};
  std::size_t seen = 0;
  for (int m = 1; m <= 3; ++m)
    for (const auto& s : enumerate_terms(m)) {
      ++seen;
      const auto it = expected.find(s.exponents);
      if (it == expected.end() || it->second != s.coefficient)
        return {false, "unexpected term " + s.label()};
    }
  return {seen == expected.size(), std::to_string(seen) + " terms, all coefficients exact"};
}

Outcome bell_cross_check() {
  int compared = 0;
  for (int cutoff : {kNoActivityCutoff, kDiffusionActivityCutoff})
    for (int m = 1; m <= 5; ++m) {
      if (bell_form_terms(m, cutoff).terms != enumerate_terms(m, cutoff))
        return {false, "mismatch at m = " + std::to_string(m) + ", cutoff " + std::to_string(cutoff)};
      ++compared;
    }
  return {true, std::to_string(compared) + " (order, cutoff) pairs identical"};
}

Outcome girsanov_identity() {
  const JumpModel ring = make_ring3(0.1);
  const RateMatrix reference = base_rate_matrix(ring);
  const RateMatrix driven = build_driven_rates(ring);
  double worst = 0.0;
  for (std::uint64_t i = 0; i < 10000; ++i) {
    StreamRng rng(3, i);
    const Trajectory path = simulate_path(i % 2 == 0 ? reference : driven, i % 3, 5.0, rng);
    const GirsanovPair g = girsanov_check(path, ring);
    worst = std::max(worst, std::abs(g.lhs - g.rhs));
  }
  return {worst <= 1e-10, "max |log ratio - (S - T)/2| = " + fmt(worst) + " over 10^4 paths"};
}

Outcome normalization_identity() {
  const JumpModel ring = make_ring3(0.1);
  bool ok = true;
  double worst = 0.0;
  for (double t : {1.0, 5.0, 20.0})
    for (Index x = 0; x < 3; ++x) {
      const MomentEstimate e = check_normalization(ring, x, t, sampling(1000000, 4));
      const double z = std::abs(e.mean - 1.0) / e.se;
      worst = std::max(worst, z);
      ok = ok && z <= 3.0;
    }
  return {ok, "largest deviation " + fmt(worst) + " SE over 9 (x, T) cases"};
}

Outcome order_scaling() {
  std::ostringstream detail;
  bool ok = true;
  for (int order = 1; order <= 3; ++order) {
    double residual[2];
    for (int k = 0; k < 2; ++k) {
      const JumpModel ring = make_ring3(k == 0 ? 1e-2 : 5e-3);
      const Vector ratio =
          stationary_solve(build_driven_rates(ring)).cwiseQuotient(equilibrium_distribution(ring));
      AssembleOptions o;
      o.max_order = order;
      const auto all = assemble_all(ring, o);
      residual[k] = 0.0;
      for (Index x = 0; x < 3; ++x) residual[k] = std::max(residual[k], std::abs(ratio(x) - all[x].partial_sums[order]));
    }
    const double target = std::pow(2.0, order + 1);
    const double contraction = residual[0] / residual[1];
    ok = ok && std::abs(contraction / target - 1.0) <= 0.25;
    detail << "M=" << order << ": " << fmt(contraction) << " (target " << target << ") ";
  }
  return {ok, detail.str()};
}

Outcome closed_form_orders() {
  std::vector<JumpModel> models = {make_ring3(0.1)};
  StreamRng rng(6, 0);
  for (int i = 0; i < 10; ++i) models.push_back(testing::random_model(rng, 8, 0.1));
  double worst1 = 0.0, worst2 = 0.0;
  for (const auto& m : models) {
    const Vector first = -m.beta() * mclennan_h(m);
    const Vector second = second_order_coefficient(m);
    worst1 = std::max(worst1, max_abs(first - epsilon_derivative_oracle(m, 1)) / max_abs(first));
    worst2 = std::max(worst2, max_abs(second - epsilon_derivative_oracle(m, 2) / 2.0) / max_abs(second));
  }
  return {worst1 <= 1e-5 && worst2 <= 1e-5,
          "relative gaps: order 1 " + fmt(worst1) + ", order 2 " + fmt(worst2) + " on 11 models"};
}

Outcome mc_exact_agreement() {
  const JumpModel ring = make_ring3(0.1);
  const double t = default_horizon(ring);
  std::vector<MomentSpec> specs;
  for (int m = 1; m <= 3; ++m)
    for (auto& s : enumerate_terms(m)) specs.push_back(s);
  bool ok = true;
  double worst = 0.0;
  for (Index x = 0; x < 3; ++x) {
    const auto estimates = estimate_moments(ring, x, t, specs, sampling(1000000, 7));
    for (std::size_t i = 0; i < specs.size(); ++i) {
      const double exact = tilted_moment_exact(ring, specs[i], x, t);
      const double z = std::abs(estimates[i].mean - exact) / estimates[i].se;
      worst = std::max(worst, z);
      ok = ok && z <= 3.0;
    }
  }
  return {ok, "largest deviation " + fmt(worst) + " SE over " + std::to_string(3 * specs.size()) + " moments"};
}

Outcome continuum_limit() {
  constexpr double w = 2.0 * 3.14159265358979323846;
  const PeriodicField1D u{[](double x) { return std::cos(w * x); }, [](double x) { return -w * std::sin(w * x); }};
  const PeriodicField1D f{[](double) { return 1.0; }, [](double) { return 0.0; }};
  const std::vector<double> deltas = {1e-2, 5e-3, 2.5e-3};
  StreamRng rng(8, 0);
  bool ok = true;
  std::ostringstream detail;
  detail << "exponents:";
  for (int i = 0; i < 5; ++i) {
    const double x = rng.uniform();
    std::vector<double> errors;
    for (double d : deltas) errors.push_back(continuum_activity_limit(u, f, 1.0, 1.0, 0.1, x, d).error);
    const double slope = scaling_exponent(deltas, errors);
    ok = ok && std::abs(slope - 1.0) <= 0.2;
    detail << " " << fmt(slope);
  }
  detail << " (target 1.0 +- 0.2)";
  return {ok, detail.str()};
}

Outcome diffusion_mclennan() {
  const double eps = 0.05;
  const int grid = 64, cells = 1024;
  const DiffusionModel ring = make_diff_ring(eps);
  const double alpha = spectral_gap(base_rate_matrix(ring_chain(ring.with_epsilon(0.0), cells)));
  const double dt = 2.5e-4;
  const double horizon = dt * std::ceil(15.0 / alpha / dt);
  const FirstOrderDensity mc = mclennan_first_order_diffusion(ring, grid, horizon, {dt, 0}, sampling(4000, 9));

  const std::vector<double> fine = ring_chain_density(ring, cells);
  const std::vector<double> coarse = ring_chain_density(ring, cells / 2);
  const std::vector<double> flipped = ring_chain_density(ring.with_epsilon(-eps), cells);
  const std::vector<double> rho0 = ring_chain_density(ring.with_epsilon(0.0), cells);
  const int stride = cells / grid;

  bool ok = true;
  int failures = 0;
  double worst = 0.0;
  std::ostringstream table;
  table << "    bin x density oracle |diff| budget = 3se + mesh + quadratic\n";
  for (int i = 0; i < grid; ++i) {
    const int k = i * stride;
    const double oracle = fine[k];
    const double mesh = std::abs(fine[k] - coarse[k / 2]);
    const double quadratic = std::abs(0.5 * (fine[k] + flipped[k]) - rho0[k]);
    const double budget = 3.0 * mc.density_se[i] + mesh + quadratic;
    const double diff = std::abs(mc.density[i] - oracle);
    worst = std::max(worst, diff / budget);
    if (diff > budget) {
      ok = false;
      ++failures;
    }
    table << "    " << i << " " << fmt(mc.grid[i]) << " " << fmt(mc.density[i]) << " " << fmt(oracle) << " "
          << fmt(diff) << " " << fmt(budget) << " = " << fmt(3.0 * mc.density_se[i]) << " + " << fmt(mesh) << " + "
          << fmt(quadratic) << "\n";
  }
  std::cout << table.str();
  return {ok, std::to_string(grid - failures) + "/" + std::to_string(grid) + " bins within budget, largest diff/budget " +
                  fmt(worst) + " (T = " + fmt(horizon) + ", dt = " + fmt(dt) + ")"};
}

Outcome response_check() {
  const ModelFile file = load_model_file(STATEXP_FIXTURES "/ring3_response.json");
  const Vector& v = *file.potential;
  const Vector& q = *file.observable;
  std::vector<double> residuals;
  for (double eps : {0.1, 0.05, 0.025}) {
    const PerturbationSetup s = make_perturbation(file.model, v, q, 2.0, eps);
    residuals.push_back(std::abs(exact_driven_expectation(s) - response_expansion(s).total()));
  }
  bool ok = true;
  std::ostringstream detail;
  detail << "contractions";
  for (std::size_t i = 1; i < residuals.size(); ++i) {
    const double c = residuals[i - 1] / residuals[i];
    ok = ok && std::abs(c / 8.0 - 1.0) <= 0.25;
    detail << " " << fmt(c);
  }
  const double gap_vq = fdt_consistency_check(make_perturbation(file.model, v, q, 2.0, 0.1)).gap;
  const double gap_vv = fdt_consistency_check(make_perturbation(file.model, v, v, 1.0, 0.1)).gap;
  ok = ok && gap_vq <= 1e-4 && gap_vv <= 1e-4;
  detail << "; fdt gaps " << fmt(gap_vq) << " (Q), " << fmt(gap_vv) << " (Q = V)";
  return {ok, detail.str()};
}

Outcome conservative_resummation() {
  const JumpModel base = make_ring3(0.0);
  Vector v(3);
  v << 0.0, 1.0, 0.0;
  const double eps = 0.1;
  const JumpModel model = base.with_forcing(potential_forcing(base.base_rates(), v)).with_epsilon(eps);
  AssembleOptions o;
  o.max_order = 2;
  const auto all = assemble_all(model, o);
  const TiltedTaylor taylor = tilted_boltzmann_taylor(model, v);
  double worst = 0.0;
  for (Index x = 0; x < 3; ++x) {
    worst = std::max(worst, std::abs(all[x].partial_sums[1] - (1.0 + eps * taylor.first(x))));
    worst = std::max(worst,
                     std::abs(all[x].partial_sums[2] - (1.0 + eps * taylor.first(x) + eps * eps * taylor.second(x))));
  }
  return {worst <= 1e-5, "largest gap to the tilted Boltzmann Taylor sums " + fmt(worst)};
}

Outcome reproducibility() {
  namespace fs = std::filesystem;
  const fs::path dir = fs::temp_directory_path() / "statexp_acceptance";
  fs::create_directories(dir);
  const std::string ring = STATEXP_FIXTURES "/ring3.json";
  const std::string response = STATEXP_FIXTURES "/ring3_response.json";
  const std::vector<std::vector<std::string>> commands = {
      {"expand", "--model", ring, "--backend", "mc", "--order", "3", "--samples", "200000"},
      {"respond", "--model", response, "--backend", "mc", "--samples", "200000"},
      {"diffuse", "--samples", "20000", "--T", "0.2", "--dt", "1e-3", "--modulation", "0.5",
       "--grid", "0", "--oracle-cells", "0"}};
  int identical = 0;
  for (std::size_t c = 0; c < commands.size(); ++c) {
    std::string outputs[2];
    for (int k = 0; k < 2; ++k) {
      std::vector<std::string> args = {"statexp"};
      args.insert(args.end(), commands[c].begin(), commands[c].end());
      const fs::path out = dir / ("run" + std::to_string(c) + "_" + std::to_string(k));
      for (const std::string& a : {std::string("--seed"), std::string("12"), std::string("--workers"),
                                   std::string("4"), std::string("--threads"), std::string(k == 0 ? "1" : "8"),
                                   std::string("--out"), out.string()})
        args.push_back(a);
      std::vector<const char*> argv;
      for (const auto& a : args) argv.push_back(a.c_str());
      const int code = cli::run(static_cast<int>(argv.size()), argv.data());
      if (code != cli::ok && code != cli::numerical_failure)
        return {false, commands[c][0] + " exited with " + std::to_string(code)};
      outputs[k] = read_text_file(out);
    }
    if (outputs[0] == outputs[1]) ++identical;
  }
  return {identical == static_cast<int>(commands.size()),
          std::to_string(identical) + "/" + std::to_string(commands.size()) +
              " commands byte identical with 1 and 8 threads"};
}

const std::vector<Criterion>& criteria() {
  static const std::vector<Criterion> all = {
      {1, "coefficient golden values", 1, coefficient_golden},
      {2, "Bell form cross-check", 5, bell_cross_check},
      {3, "Girsanov identity", 10, girsanov_identity},
      {4, "normalization identity", 120, normalization_identity},
      {5, "order scaling", 60, order_scaling},
      {6, "closed-form orders", 60, closed_form_orders},
      {7, "MC vs exact moments", 300, mc_exact_agreement},
      {8, "continuum limit", 10, continuum_limit},
      {9, "diffusion first-order density", 300, diffusion_mclennan},
      {10, "response expansion", 60, response_check},
      {11, "conservative resummation", 60, conservative_resummation},
      {12, "reproducibility", 120, reproducibility},
  };
  return all;
}

bool report(const Criterion& c) {
  const auto start = std::chrono::steady_clock::now();
  Outcome o;
  try {
    o = c.run();
  } catch (const std::exception& e) {
    o = {false, std::string("error: ") + e.what()};
  }
  const double seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  const bool in_time = seconds < c.budget_seconds;
  const bool pass = o.pass && in_time;
  std::cout << "C" << c.id << " " << (pass ? "PASS" : "FAIL") << " " << c.name << ": " << o.detail << " ["
            << fmt(seconds) << " s of " << c.budget_seconds << " s" << (in_time ? "" : ", over budget") << "]"
            << std::endl;
  return pass;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Acceptance checks"};
  int only = 0;
  app.add_option("--criterion", only, "Run one criterion (1-12)")->check(CLI::Range(1, 12));
  CLI11_PARSE(app, argc, argv);

  bool all_pass = true;
  for (const auto& c : criteria())
    if (only == 0 || only == c.id) all_pass = report(c) && all_pass;
  return all_pass ? 0 : 1;
}
