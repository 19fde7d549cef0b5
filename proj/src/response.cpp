#include "statexp/response.hpp"

#include <algorithm>
#include <cmath>
#include <functional>

#include "statexp/exact.hpp"

namespace statexp {

namespace {

void check_setup(const PerturbationSetup& setup) {
  const Index n = setup.model.size();
  if (setup.potential.size() != n) throw ValidationError("potential has the wrong size");
  if (setup.observable.size() != n) throw ValidationError("observable has the wrong size");
  if (!(setup.horizon > 0.0) || !std::isfinite(setup.horizon)) throw ValidationError("horizon must be positive");
}

// Composite Simpson on [0, T], doubling the intervals from 64 until the
// relative change drops below 1e-6.
double integrate(const std::function<double(double)>& fn, double horizon, int* intervals_used) {
  constexpr int kMaxIntervals = 1 << 16;
  int intervals = 64;
  std::vector<double> values(intervals + 1);
  for (int i = 0; i <= intervals; ++i) values[i] = fn(horizon * i / intervals);
  auto simpson = [&](const std::vector<double>& v) {
    const int n = static_cast<int>(v.size()) - 1;
    double s = v[0] + v[n];
    for (int i = 1; i < n; ++i) s += (i % 2 ? 4.0 : 2.0) * v[i];
    return s * horizon / (3.0 * n);
  };
  double previous = simpson(values);
  while (true) {
    const int refined = 2 * intervals;
    std::vector<double> next(refined + 1);
    for (int i = 0; i <= intervals; ++i) next[2 * i] = values[i];
    for (int i = 0; i < intervals; ++i) next[2 * i + 1] = fn(horizon * (2 * i + 1) / refined);
    const double current = simpson(next);
    double scale = 0.0;
    for (double v : next) scale = std::max(scale, std::abs(v));
    values = std::move(next);
    intervals = refined;
    const double change = std::abs(current - previous);
    if (change <= 1e-6 * std::abs(current) || change <= 1e-15 * scale * horizon) {
      if (intervals_used) *intervals_used = intervals;
      return current;
    }
    if (intervals >= kMaxIntervals) throw NumericalError("time quadrature did not converge");
    previous = current;
  }
}

struct Propagation {
  RateMatrix rates;
  Vector rho0;
  Vector L0V;
};

Propagation propagation(const PerturbationSetup& setup) {
  return {base_rate_matrix(setup.model), equilibrium_distribution(setup.model),
          backward_generator_apply(setup.model, setup.potential)};
}

// <A(x_0) B(x_T) L0V(x_s)> for rank-one pieces, evaluated by propagating the
// left weight to s and the right observable back from T.
double three_point(const Propagation& p, const Vector& left, const Vector& right, double s, double horizon) {
  const Vector mu = evolve_distribution(p.rates, p.rho0.cwiseProduct(left), s);
  const Vector g = evolve_observable(p.rates, right, horizon - s);
  return mu.dot(p.L0V.cwiseProduct(g));
}

// <[Q(x_T)][V(x_T) - V(x_0)] L0V(x_s)>
double forward_integrand(const Propagation& p, const PerturbationSetup& setup, double s) {
  const Vector ones = Vector::Ones(setup.model.size());
  const Vector& Q = setup.observable;
  const Vector& V = setup.potential;
  return three_point(p, ones, Q.cwiseProduct(V), s, setup.horizon) - three_point(p, V, Q, s, setup.horizon);
}

// <[Q(x_0)][V(x_T) - V(x_0)] L0V(x_s)>
double backward_integrand(const Propagation& p, const PerturbationSetup& setup, double s) {
  const Vector& Q = setup.observable;
  const Vector& V = setup.potential;
  return three_point(p, Q, V, s, setup.horizon) -
         three_point(p, Q.cwiseProduct(V), Vector::Ones(setup.model.size()), s, setup.horizon);
}

double default_step(const PerturbationSetup& setup, double step) {
  if (step > 0.0) return step;
  const double d = epsilon_stencil_step(setup.model);
  return d > 0.0 ? d : 1e-2;
}

// Scalar eps-derivative through the vector-valued Richardson routine.
double scalar_derivative(const std::function<double(double)>& fn, int m, double step) {
  return richardson_derivative([&](double eps) { return Vector::Constant(1, fn(eps)); }, m, step)(0);
}

}  // namespace

PerturbationSetup make_perturbation(const JumpModel& base, const Vector& potential, const Vector& observable,
                                    double horizon, double epsilon) {
  if (potential.size() != base.size()) throw ValidationError("potential has the wrong size");
  if (!potential.allFinite()) throw ValidationError("potential must be finite");
  if (!observable.allFinite()) throw ValidationError("observable must be finite");
  JumpModel model = base.with_forcing(potential_forcing(base.base_rates(), potential)).with_epsilon(epsilon);
  if (!circulation_check(model).conservative) throw ValidationError("derived forcing is not conservative");
  PerturbationSetup setup{std::move(model), potential, observable, horizon};
  check_setup(setup);
  return setup;
}

Vector backward_generator_apply(const JumpModel& model, const Vector& potential) {
  if (potential.size() != model.size()) throw ValidationError("potential has the wrong size");
  return base_rate_matrix(model).generator() * potential;
}

std::vector<double> backward_generator_apply(const DiffusionModel& model, const std::vector<double>& potential) {
  if (model.dimension() != 1) throw ValidationError("grid generator is available for 1-D models only");
  const int n = static_cast<int>(potential.size());
  if (n < 3) throw ValidationError("grid needs at least 3 points");
  const double h = model.box()(0) / n;
  const double chi = model.mobility()(0, 0);
  std::vector<double> out(n);
  for (int i = 0; i < n; ++i) {
    const double up = potential[(i + 1) % n], down = potential[(i + n - 1) % n];
    const double x[1] = {h * i};
    double grad[1];
    model.gradient(x, grad);
    const double first = (up - down) / (2 * h);
    const double second = (up - 2 * potential[i] + down) / (h * h);
    out[i] = -chi * grad[0] * first + chi * second / model.beta();
  }
  return out;
}

double activity_identity_gap(const PerturbationSetup& setup, std::uint64_t paths, std::uint64_t seed) {
  check_setup(setup);
  const Propagation p = propagation(setup);
  const double eb = setup.model.epsilon() * setup.model.beta();
  double worst = 0.0;
  for (std::uint64_t i = 0; i < paths; ++i) {
    StreamRng rng(seed, i, static_cast<std::uint32_t>(StreamFamily::response));
    const Trajectory path = simulate_path(p.rates, sample_state(p.rho0, rng), setup.horizon, rng);
    const double t1 = path_activity(path, setup.model, 1).activity_orders.at(0);
    const double integral = eb * summarize(path, setup.model.size()).occupation.dot(p.L0V);
    worst = std::max(worst, std::abs(t1 - integral));
  }
  return worst;
}

ResponseTerms response_expansion(const PerturbationSetup& setup, Backend backend, const SamplingConfig& config) {
  check_setup(setup);
  const Propagation p = propagation(setup);
  const double eb = setup.model.epsilon() * setup.model.beta();
  const Vector& Q = setup.observable;
  const Vector& V = setup.potential;
  const double T = setup.horizon;
  ResponseTerms out;
  out.backend = backend;

  if (backend == Backend::exact) {
    out.zeroth = p.rho0.dot(Q);
    // rho0 is stationary, so <Q(x_T) V(x_T)> = <Q V>.
    const double qv = p.rho0.dot(Q.cwiseProduct(V));
    const double vq = p.rho0.cwiseProduct(V).dot(evolve_observable(p.rates, Q, T));
    out.first = eb * (qv - vq);
    if (eb != 0.0) {
      const double integral =
          integrate([&](double s) { return forward_integrand(p, setup, s); }, T, &out.quadrature_intervals);
      out.second = -0.5 * eb * eb * integral;
    }
    return out;
  }

  const JumpSampler sampler(p.rates);
  const Index n = setup.model.size();
  auto blocks = run_blocks(config.samples, config.parallelism, [&](int, std::uint64_t begin, std::uint64_t end) {
    std::vector<RunningStats> stats(3);
    PathSummary summary(n);
    for (std::uint64_t i = begin; i < end; ++i) {
      StreamRng rng(config.seed, i, static_cast<std::uint32_t>(StreamFamily::response));
      sampler.run(sample_state(p.rho0, rng), T, rng, summary);
      const double q = Q(summary.final_state);
      const double dv = V(summary.final_state) - V(summary.start);
      stats[0].add(q);
      stats[1].add(eb * q * dv);
      stats[2].add(-0.5 * eb * eb * q * dv * summary.occupation.dot(p.L0V));
    }
    return stats;
  });
  std::vector<RunningStats> total(3);
  for (const auto& b : blocks)
    for (int k = 0; k < 3; ++k) total[k].merge(b[k]);
  out.zeroth = total[0].mean;
  out.first = total[1].mean;
  out.second = total[2].mean;
  out.zeroth_se = total[0].standard_error();
  out.first_se = total[1].standard_error();
  out.second_se = total[2].standard_error();
  return out;
}

double exact_driven_expectation(const PerturbationSetup& setup, double epsilon) {
  check_setup(setup);
  const JumpModel driven = setup.model.with_epsilon(epsilon);
  const Vector p = evolve_distribution(build_driven_rates(driven), equilibrium_distribution(driven), setup.horizon);
  return p.dot(setup.observable);
}

double exact_driven_expectation(const PerturbationSetup& setup) {
  return exact_driven_expectation(setup, setup.model.epsilon());
}

double second_derivative_formula(const PerturbationSetup& setup) {
  check_setup(setup);
  const Propagation p = propagation(setup);
  const double integral = integrate(
      [&](double s) { return forward_integrand(p, setup, s) - backward_integrand(p, setup, s); }, setup.horizon,
      nullptr);
  const double beta = setup.model.beta();
  return -0.5 * beta * beta * integral;
}

double driven_derivative(const PerturbationSetup& setup, int m, double step) {
  return scalar_derivative([&](double eps) { return exact_driven_expectation(setup, eps); }, m,
                           default_step(setup, step));
}

FdtReport fdt_consistency_check(const PerturbationSetup& setup, double step) {
  check_setup(setup);
  FdtReport r;
  r.step = default_step(setup, step);
  const Vector& Q = setup.observable;
  const Vector& V = setup.potential;
  const Vector rho0 = equilibrium_distribution(setup.model);
  // <[Q(x_t) - Q(x_0)][V(x_t) - V(x_0)]> under the driven dynamics from rho0.
  auto correlation = [&](double eps) {
    const RateMatrix rates = build_driven_rates(setup.model.with_epsilon(eps));
    const Vector qv = evolve_observable(rates, Q.cwiseProduct(V), setup.horizon);
    const Vector q = evolve_observable(rates, Q, setup.horizon);
    const Vector v = evolve_observable(rates, V, setup.horizon);
    const Vector e = qv - V.cwiseProduct(q) - Q.cwiseProduct(v) + Q.cwiseProduct(V);
    return rho0.dot(e);
  };
  r.lhs = driven_derivative(setup, 2, r.step);
  r.rhs = setup.model.beta() * scalar_derivative(correlation, 1, r.step);
  const double scale = std::max(std::abs(r.lhs), std::abs(r.rhs));
  const double diff = std::abs(r.lhs - r.rhs);
  r.gap = scale > 1e-12 ? diff / scale : diff;
  return r;
}

ReversalCheck time_reversal_check(const PerturbationSetup& setup, const SamplingConfig& config) {
  check_setup(setup);
  const Propagation p = propagation(setup);
  const JumpSampler sampler(p.rates);
  const double eb = setup.model.epsilon() * setup.model.beta();
  const Vector& Q = setup.observable;
  const Vector& V = setup.potential;
  auto blocks = run_blocks(config.samples, config.parallelism, [&](int, std::uint64_t begin, std::uint64_t end) {
    std::vector<RunningStats> stats(3);
    PathSummary summary(setup.model.size());
    for (std::uint64_t i = begin; i < end; ++i) {
      StreamRng rng(config.seed, i, static_cast<std::uint32_t>(StreamFamily::response));
      sampler.run(sample_state(p.rho0, rng), setup.horizon, rng, summary);
      const double s = eb * (V(summary.final_state) - V(summary.start));
      stats[0].add(Q(summary.start) * s);
      stats[1].add(Q(summary.final_state) * s);
      stats[2].add((Q(summary.start) + Q(summary.final_state)) * s);
    }
    return stats;
  });
  std::vector<RunningStats> total(3);
  for (const auto& b : blocks)
    for (int k = 0; k < 3; ++k) total[k].merge(b[k]);
  return {Estimate::from(total[0]), Estimate::from(total[1]), Estimate::from(total[2])};
}

TiltedTaylor tilted_boltzmann_taylor(const JumpModel& model, const Vector& potential) {
  if (potential.size() != model.size()) throw ValidationError("potential has the wrong size");
  const Vector rho0 = equilibrium_distribution(model);
  const double beta = model.beta();
  const Vector centered = potential.array() - rho0.dot(potential);
  const double variance = rho0.dot(centered.cwiseProduct(centered));
  TiltedTaylor t;
  t.first = beta * centered;
  t.second = 0.5 * beta * beta * (centered.cwiseProduct(centered).array() - variance).matrix();
  return t;
}

nlohmann::json to_json(const ResponseTerms& t) {
  nlohmann::json j = {{"backend", to_string(t.backend)},
                      {"zeroth", t.zeroth},
                      {"first", t.first},
                      {"second", t.second},
                      {"total", t.total()}};
  if (t.backend == Backend::mc) {
    j["zeroth_se"] = t.zeroth_se;
    j["first_se"] = t.first_se;
    j["second_se"] = t.second_se;
  } else {
    j["quadrature_intervals"] = t.quadrature_intervals;
  }
  return j;
}

nlohmann::json to_json(const FdtReport& r) {
  return {{"lhs", r.lhs}, {"rhs", r.rhs}, {"gap", r.gap}, {"step", r.step}};
}

}  // namespace statexp
