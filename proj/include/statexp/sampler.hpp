#pragma once

#include <cstdint>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "statexp/model.hpp"
#include "statexp/moment_spec.hpp"
#include "statexp/parallel.hpp"
#include "statexp/rng.hpp"
#include "statexp/statistics.hpp"

namespace statexp {

/// Piecewise-constant, right-continuous jump path on [0, horizon].
struct Trajectory {
  Index start = 0;
  double horizon = 0.0;
  std::vector<double> times;   // 0 < t1 < ... < tK <= horizon
  std::vector<Index> states;   // state entered at each jump

  Index final_state() const { return states.empty() ? start : states.back(); }
  std::size_t jump_count() const { return times.size(); }
};

/// Time reversal: jumps in reverse order at times horizon - t.
Trajectory reverse(const Trajectory& path);

/// Sufficient statistics of a path for every observable used here:
/// time spent in each state and the number of x -> y jumps.
struct PathSummary {
  Index start = 0;
  Index final_state = 0;
  Vector occupation;
  Matrix jumps;

  explicit PathSummary(Index n = 0) : occupation(Vector::Zero(n)), jumps(Matrix::Zero(n, n)) {}
  void reset(Index x0);
};

PathSummary summarize(const Trajectory& path, Index state_count);

/// Gillespie sampler with precomputed jump tables.
class JumpSampler {
 public:
  explicit JumpSampler(const RateMatrix& rates);

  Index size() const noexcept { return static_cast<Index>(escape_.size()); }
  Trajectory path(Index x0, double horizon, StreamRng& rng) const;
  /// Same law and the same draws as path(), accumulated straight into `out`.
  void run(Index x0, double horizon, StreamRng& rng, PathSummary& out) const;

 private:
  template <class Visit>
  Index simulate(Index x0, double horizon, StreamRng& rng, Visit visit) const;

  std::vector<double> escape_;
  std::vector<std::vector<std::pair<Index, double>>> table_;  // (target, cumulative rate)
};

Trajectory simulate_path(const RateMatrix& rates, Index x0, double horizon, StreamRng& rng);

struct PathObservables {
  double entropy_flux = 0.0;                  // S
  std::vector<double> activity_orders;        // T1 .. TJ
  double activity = 0.0;                      // T, all orders
  double action = 0.0;                        // (T - S) / 2
  double truncation_bound = 0.0;              // bound on |T - (T1 + ... + TJ)|
};

/// Evaluates path observables of one model from path summaries.
class ObservableKernel {
 public:
  ObservableKernel(const JumpModel& model, int max_order);

  int max_order() const noexcept { return max_order_; }
  PathObservables evaluate(const PathSummary& summary) const;
  double entropy_flux(const PathSummary& summary) const;

 private:
  Index n_;
  int max_order_;
  Matrix forcing_;            // beta eps f
  std::vector<Vector> tau_;   // tau_1 .. tau_J
  Vector tau_total_;
  Vector remainder_;
};

/// S = eps beta sum over jumps of f(x_{t-}, x_t). Throws ValidationError on a
/// jump along an edge the model does not have.
double path_entropy_flux(const Trajectory& path, const JumpModel& model);
PathObservables path_activity(const Trajectory& path, const JumpModel& model, int max_order);

/// lhs: log dP_eps/dP_0 from the rates themselves; rhs: (S - T)/2.
struct GirsanovPair {
  double lhs = 0.0;
  double rhs = 0.0;
};
GirsanovPair girsanov_check(const Trajectory& path, const JumpModel& model);

struct SamplingConfig {
  std::uint64_t samples = 100000;
  std::uint64_t seed = 1;
  Parallelism parallelism;
};

/// Stream families keep unrelated estimators on disjoint random streams.
enum class StreamFamily : std::uint32_t {
  moments = 1,
  normalization = 2,
  embedding_driven = 3,
  embedding_reference = 4,
  density = 5,
  occupancy = 6,
  response = 7,
  diffusion = 8,
  underdamped = 9,
};

struct MomentEstimate {
  std::optional<MomentSpec> spec;
  std::string quantity;  // spec label or the name of the estimated functional
  Index x = 0;
  double horizon = 0.0;
  std::uint64_t samples = 0;
  double mean = 0.0;
  double se = 0.0;
  std::uint64_t seed = 0;
  int workers = 1;
  std::string source = "mc";
};

nlohmann::json to_json(const MomentEstimate& estimate, const JumpModel& model);

/// Runs `config.samples` reference paths from x and accumulates the values
/// written by `fn` (one per slot) into per-slot statistics, merged in block order.
using PathFunctional = std::function<void(const PathObservables&, std::vector<double>&)>;
std::vector<RunningStats> accumulate_reference_paths(const JumpModel& model, Index x, double horizon, int max_order,
                                                     std::size_t slots, StreamFamily family,
                                                     const SamplingConfig& config, const PathFunctional& fn);

/// < S^b0 T1^b1 ... > over reference paths from x, one estimate per spec.
/// All specs are evaluated on the same path set.
std::vector<MomentEstimate> estimate_moments(const JumpModel& model, Index x, double horizon,
                                             const std::vector<MomentSpec>& specs, const SamplingConfig& config);
MomentEstimate estimate_moment(const JumpModel& model, Index x, double horizon, const MomentSpec& spec,
                               const SamplingConfig& config);

/// Mean of exp((S - T)/2) over reference paths from x; should be 1.
MomentEstimate check_normalization(const JumpModel& model, Index x, double horizon, const SamplingConfig& config);

/// Mean of exp(-(S + T)/2) over reference paths from x: p(x, T)/rho0(x) for
/// the driven process started in rho0.
MomentEstimate estimate_density_ratio(const JumpModel& model, Index x, double horizon, const SamplingConfig& config);

/// Driven paths from rho0 vs reweighted reference paths from rho0: the
/// probability of ending in each state both ways.
struct EmbeddingRow {
  Index x = 0;
  Estimate driven;
  Estimate reweighted;
};
std::vector<EmbeddingRow> embedding_check(const JumpModel& model, double horizon, const SamplingConfig& config);

/// Fraction of time spent in each state, averaged over paths from x0.
std::vector<Estimate> occupancy_fractions(const RateMatrix& rates, Index x0, double horizon,
                                          const SamplingConfig& config);

/// Draws a state from a probability vector with one uniform.
Index sample_state(const Vector& probabilities, StreamRng& rng);

/// S^b0 T1^b1 ... evaluated on one path.
double spec_product(const MomentSpec& spec, const PathObservables& observables);

}  // namespace statexp
