#include "statexp/sampler.hpp"

#include <cmath>

#include "statexp/exact.hpp"

namespace statexp {

namespace {

double integer_power(double base, int k) {
  double r = 1.0;
  for (int i = 0; i < k; ++i) r *= base;
  return r;
}

void check_state(const JumpModel& model, Index x) {
  if (x < 0 || x >= model.size()) throw ValidationError("state index out of range");
}

void check_config(const SamplingConfig& config, double horizon) {
  if (config.samples < 2) throw ValidationError("at least two samples are required");
  if (config.parallelism.workers < 1) throw ValidationError("workers must be positive");
  if (!(horizon >= 0.0) || !std::isfinite(horizon)) throw ValidationError("horizon must be a finite nonnegative time");
}

MomentEstimate make_estimate(const RunningStats& stats, Index x, double horizon, const SamplingConfig& config,
                             std::string quantity) {
  MomentEstimate e;
  e.quantity = std::move(quantity);
  e.x = x;
  e.horizon = horizon;
  e.samples = stats.count;
  e.mean = stats.mean;
  e.se = stats.standard_error();
  e.seed = config.seed;
  e.workers = config.parallelism.workers;
  return e;
}

// Runs reference paths from x and accumulates fn(observables) into one
// RunningStats per output slot.
template <class Fn>
std::vector<RunningStats> accumulate_paths(const JumpModel& model, Index x, double horizon, int max_order,
                                           std::size_t slots, StreamFamily family, const SamplingConfig& config,
                                           Fn fn) {
  const JumpSampler sampler(base_rate_matrix(model));
  const ObservableKernel kernel(model, max_order);
  auto blocks = run_blocks(config.samples, config.parallelism, [&](int, std::uint64_t begin, std::uint64_t end) {
    std::vector<RunningStats> stats(slots);
    PathSummary summary(model.size());
    std::vector<double> values(slots);
    for (std::uint64_t i = begin; i < end; ++i) {
      StreamRng rng(config.seed, i, static_cast<std::uint32_t>(family));
      sampler.run(x, horizon, rng, summary);
      fn(kernel.evaluate(summary), values);
      for (std::size_t s = 0; s < slots; ++s) stats[s].add(values[s]);
    }
    return stats;
  });
  std::vector<RunningStats> total(slots);
  for (const auto& block : blocks)
    for (std::size_t s = 0; s < slots; ++s) total[s].merge(block[s]);
  return total;
}

}  // namespace

double spec_product(const MomentSpec& spec, const PathObservables& obs) {
  double value = integer_power(obs.entropy_flux, spec.entropy_exponent());
  for (int j = 1; j < static_cast<int>(spec.exponents.size()); ++j)
    if (spec.exponents[j] > 0) value *= integer_power(obs.activity_orders[j - 1], spec.exponents[j]);
  return value;
}

std::vector<RunningStats> accumulate_reference_paths(const JumpModel& model, Index x, double horizon, int max_order,
                                                     std::size_t slots, StreamFamily family,
                                                     const SamplingConfig& config, const PathFunctional& fn) {
  check_state(model, x);
  check_config(config, horizon);
  return accumulate_paths(model, x, horizon, max_order, slots, family, config, fn);
}

Trajectory reverse(const Trajectory& path) {
  Trajectory r;
  r.start = path.final_state();
  r.horizon = path.horizon;
  const std::size_t k = path.times.size();
  r.times.reserve(k);
  r.states.reserve(k);
  for (std::size_t i = k; i-- > 0;) {
    r.times.push_back(path.horizon - path.times[i]);
    r.states.push_back(i == 0 ? path.start : path.states[i - 1]);
  }
  return r;
}

void PathSummary::reset(Index x0) {
  start = x0;
  final_state = x0;
  occupation.setZero();
  jumps.setZero();
}

PathSummary summarize(const Trajectory& path, Index state_count) {
  PathSummary s(state_count);
  s.reset(path.start);
  Index x = path.start;
  double t = 0.0;
  for (std::size_t k = 0; k < path.times.size(); ++k) {
    const Index y = path.states[k];
    if (y < 0 || y >= state_count) throw ValidationError("trajectory visits an unknown state");
    s.occupation(x) += path.times[k] - t;
    s.jumps(x, y) += 1.0;
    t = path.times[k];
    x = y;
  }
  s.occupation(x) += path.horizon - t;
  s.final_state = x;
  return s;
}

JumpSampler::JumpSampler(const RateMatrix& rates) : escape_(rates.size()), table_(rates.size()) {
  for (Index x = 0; x < rates.size(); ++x) {
    double cumulative = 0.0;
    for (Index y = 0; y < rates.size(); ++y) {
      const double k = rates.rate(x, y);
      if (k <= 0.0) continue;
      cumulative += k;
      table_[x].emplace_back(y, cumulative);
    }
    escape_[x] = cumulative;
  }
}

template <class Visit>
Index JumpSampler::simulate(Index x0, double horizon, StreamRng& rng, Visit visit) const {
  Index x = x0;
  double t = 0.0;
  for (;;) {
    const double escape = escape_[x];
    if (escape <= 0.0) break;
    const double next = t + rng.exponential(escape);
    if (next > horizon) break;
    const double u = rng.uniform() * escape;
    const auto& row = table_[x];
    std::size_t k = 0;
    while (k + 1 < row.size() && u >= row[k].second) ++k;
    const Index y = row[k].first;
    visit(x, y, t, next);
    t = next;
    x = y;
  }
  visit(x, -1, t, horizon);
  return x;
}

Trajectory JumpSampler::path(Index x0, double horizon, StreamRng& rng) const {
  Trajectory traj;
  traj.start = x0;
  traj.horizon = horizon;
  simulate(x0, horizon, rng, [&](Index, Index y, double, double t) {
    if (y < 0) return;
    traj.times.push_back(t);
    traj.states.push_back(y);
  });
  return traj;
}

void JumpSampler::run(Index x0, double horizon, StreamRng& rng, PathSummary& out) const {
  out.reset(x0);
  out.final_state = simulate(x0, horizon, rng, [&](Index x, Index y, double from, double to) {
    out.occupation(x) += to - from;
    if (y >= 0) out.jumps(x, y) += 1.0;
  });
}

Trajectory simulate_path(const RateMatrix& rates, Index x0, double horizon, StreamRng& rng) {
  if (!(horizon >= 0.0)) throw ValidationError("horizon must be nonnegative");
  if (x0 < 0 || x0 >= rates.size()) throw ValidationError("start state out of range");
  return JumpSampler(rates).path(x0, horizon, rng);
}

ObservableKernel::ObservableKernel(const JumpModel& model, int max_order)
    : n_(model.size()), max_order_(max_order) {
  if (max_order < 1) throw ValidationError("activity order must be at least 1");
  const double be = model.beta() * model.epsilon();
  forcing_ = be * model.forcing();
  for (int j = 1; j <= max_order; ++j) tau_.push_back(activity_density(model, j));
  tau_total_ = Vector::Zero(n_);
  remainder_ = Vector::Zero(n_);
  double factorial = 1.0;
  for (int j = 2; j <= max_order + 1; ++j) factorial *= j;
  for (Index x = 0; x < n_; ++x) {
    for (Index y = 0; y < n_; ++y) {
      const double k = model.base_rates()(x, y);
      if (x == y || k == 0.0) continue;
      const double a = 0.5 * forcing_(x, y);
      tau_total_(x) += 2.0 * k * std::expm1(a);
      remainder_(x) += 2.0 * k * integer_power(std::abs(a), max_order + 1) / factorial * std::exp(std::abs(a));
    }
  }
}

double ObservableKernel::entropy_flux(const PathSummary& s) const {
  double total = 0.0;
  for (Index x = 0; x < n_; ++x)
    for (Index y = x + 1; y < n_; ++y) total += (s.jumps(x, y) - s.jumps(y, x)) * forcing_(x, y);
  return total;
}

PathObservables ObservableKernel::evaluate(const PathSummary& s) const {
  PathObservables obs;
  obs.entropy_flux = entropy_flux(s);
  obs.activity_orders.resize(max_order_);
  for (int j = 0; j < max_order_; ++j) obs.activity_orders[j] = s.occupation.dot(tau_[j]);
  obs.activity = s.occupation.dot(tau_total_);
  obs.action = 0.5 * (obs.activity - obs.entropy_flux);
  obs.truncation_bound = s.occupation.dot(remainder_);
  return obs;
}

namespace {

void check_edges(const Trajectory& path, const JumpModel& model) {
  Index x = path.start;
  for (std::size_t k = 0; k < path.states.size(); ++k) {
    const Index y = path.states[k];
    if (y < 0 || y >= model.size() || y == x || !(model.base_rates()(x, y) > 0.0))
      throw ValidationError("trajectory jumps along a missing edge (" + model.states()[x] + ", " +
                            (y >= 0 && y < model.size() ? model.states()[y] : std::to_string(y)) + ")");
    x = y;
  }
}

}  // namespace

double path_entropy_flux(const Trajectory& path, const JumpModel& model) {
  check_edges(path, model);
  return ObservableKernel(model, 1).entropy_flux(summarize(path, model.size()));
}

PathObservables path_activity(const Trajectory& path, const JumpModel& model, int max_order) {
  check_edges(path, model);
  return ObservableKernel(model, max_order).evaluate(summarize(path, model.size()));
}

GirsanovPair girsanov_check(const Trajectory& path, const JumpModel& model) {
  check_edges(path, model);
  const RateMatrix k0 = base_rate_matrix(model);
  const RateMatrix ke = build_driven_rates(model);
  GirsanovPair out;
  Index x = path.start;
  double t = 0.0;
  for (std::size_t k = 0; k < path.times.size(); ++k) {
    const Index y = path.states[k];
    out.lhs += std::log(ke.rate(x, y) / k0.rate(x, y));
    out.lhs -= (ke.escape_rate(x) - k0.escape_rate(x)) * (path.times[k] - t);
    t = path.times[k];
    x = y;
  }
  out.lhs -= (ke.escape_rate(x) - k0.escape_rate(x)) * (path.horizon - t);
  const PathObservables obs = path_activity(path, model, 1);
  out.rhs = 0.5 * (obs.entropy_flux - obs.activity);
  return out;
}

nlohmann::json to_json(const MomentEstimate& e, const JumpModel& model) {
  nlohmann::json j;
  j["spec"] = e.spec ? to_json(*e.spec) : nlohmann::json(e.quantity);
  j["x"] = model.states()[e.x];
  j["T"] = e.horizon;
  j["n"] = e.samples;
  j["mean"] = e.mean;
  j["se"] = e.se;
  j["seed"] = e.seed;
  j["workers"] = e.workers;
  j["source"] = e.source;
  return j;
}

std::vector<MomentEstimate> estimate_moments(const JumpModel& model, Index x, double horizon,
                                             const std::vector<MomentSpec>& specs, const SamplingConfig& config) {
  check_state(model, x);
  check_config(config, horizon);
  int max_order = 1;
  for (const auto& s : specs) max_order = std::max(max_order, s.max_activity_order());
  const auto stats = accumulate_paths(model, x, horizon, max_order, specs.size(), StreamFamily::moments, config,
                                      [&](const PathObservables& obs, std::vector<double>& out) {
                                        for (std::size_t i = 0; i < specs.size(); ++i)
                                          out[i] = spec_product(specs[i], obs);
                                      });
  std::vector<MomentEstimate> result;
  for (std::size_t i = 0; i < specs.size(); ++i) {
    auto e = make_estimate(stats[i], x, horizon, config, specs[i].label());
    e.spec = specs[i];
    result.push_back(std::move(e));
  }
  return result;
}

MomentEstimate estimate_moment(const JumpModel& model, Index x, double horizon, const MomentSpec& spec,
                               const SamplingConfig& config) {
  return estimate_moments(model, x, horizon, {spec}, config).front();
}

MomentEstimate check_normalization(const JumpModel& model, Index x, double horizon, const SamplingConfig& config) {
  check_state(model, x);
  check_config(config, horizon);
  const auto stats = accumulate_paths(model, x, horizon, 1, 1, StreamFamily::normalization, config,
                                      [](const PathObservables& obs, std::vector<double>& out) {
                                        out[0] = std::exp(0.5 * (obs.entropy_flux - obs.activity));
                                      });
  return make_estimate(stats[0], x, horizon, config, "exp((S-T)/2)");
}

MomentEstimate estimate_density_ratio(const JumpModel& model, Index x, double horizon, const SamplingConfig& config) {
  check_state(model, x);
  check_config(config, horizon);
  const auto stats = accumulate_paths(model, x, horizon, 1, 1, StreamFamily::density, config,
                                      [](const PathObservables& obs, std::vector<double>& out) {
                                        out[0] = std::exp(-0.5 * (obs.entropy_flux + obs.activity));
                                      });
  return make_estimate(stats[0], x, horizon, config, "exp(-(S+T)/2)");
}

Index sample_state(const Vector& p, StreamRng& rng) {
  const double u = rng.uniform();
  double c = 0.0;
  for (Index i = 0; i < p.size(); ++i) {
    c += p(i);
    if (u < c) return i;
  }
  return p.size() - 1;
}

std::vector<EmbeddingRow> embedding_check(const JumpModel& model, double horizon, const SamplingConfig& config) {
  check_config(config, horizon);
  const Index n = model.size();
  const Vector rho0 = equilibrium_distribution(model);
  const JumpSampler driven(build_driven_rates(model));
  const JumpSampler reference(base_rate_matrix(model));
  const ObservableKernel kernel(model, 1);

  struct Block {
    std::vector<RunningStats> driven, reweighted;
  };
  auto blocks = run_blocks(config.samples, config.parallelism, [&](int, std::uint64_t begin, std::uint64_t end) {
    Block b{std::vector<RunningStats>(n), std::vector<RunningStats>(n)};
    PathSummary summary(n);
    for (std::uint64_t i = begin; i < end; ++i) {
      StreamRng a(config.seed, i, static_cast<std::uint32_t>(StreamFamily::embedding_driven));
      driven.run(sample_state(rho0, a), horizon, a, summary);
      for (Index x = 0; x < n; ++x) b.driven[x].add(summary.final_state == x ? 1.0 : 0.0);

      StreamRng r(config.seed, i, static_cast<std::uint32_t>(StreamFamily::embedding_reference));
      reference.run(sample_state(rho0, r), horizon, r, summary);
      const double weight = std::exp(-kernel.evaluate(summary).action);
      for (Index x = 0; x < n; ++x) b.reweighted[x].add(summary.final_state == x ? weight : 0.0);
    }
    return b;
  });
  std::vector<EmbeddingRow> rows(n);
  for (Index x = 0; x < n; ++x) {
    RunningStats d, w;
    for (const auto& b : blocks) {
      d.merge(b.driven[x]);
      w.merge(b.reweighted[x]);
    }
    rows[x] = {x, Estimate::from(d), Estimate::from(w)};
  }
  return rows;
}

std::vector<Estimate> occupancy_fractions(const RateMatrix& rates, Index x0, double horizon,
                                          const SamplingConfig& config) {
  check_config(config, horizon);
  if (!(horizon > 0.0)) throw ValidationError("horizon must be positive");
  const Index n = rates.size();
  const JumpSampler sampler(rates);
  auto blocks = run_blocks(config.samples, config.parallelism, [&](int, std::uint64_t begin, std::uint64_t end) {
    std::vector<RunningStats> stats(n);
    PathSummary summary(n);
    for (std::uint64_t i = begin; i < end; ++i) {
      StreamRng rng(config.seed, i, static_cast<std::uint32_t>(StreamFamily::occupancy));
      sampler.run(x0, horizon, rng, summary);
      for (Index x = 0; x < n; ++x) stats[x].add(summary.occupation(x) / horizon);
    }
    return stats;
  });
  std::vector<Estimate> out;
  for (Index x = 0; x < n; ++x) {
    RunningStats s;
    for (const auto& b : blocks) s.merge(b[x]);
    out.push_back(Estimate::from(s));
  }
  return out;
}

}  // namespace statexp
