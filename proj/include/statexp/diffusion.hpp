#pragma once

#include <functional>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "statexp/model.hpp"
#include "statexp/sampler.hpp"

namespace statexp {

using ScalarField = std::function<double(std::span<const double>)>;
/// Writes a vector (or row-major matrix) value into `out`.
using VectorField = std::function<void(std::span<const double>, std::span<double>)>;

/// Potential and forcing of a diffusion on a periodic box. The forcing
/// Jacobian (row-major, J[i*n + j] = d f_i / d x_j) is optional and replaced
/// by central differences when absent.
struct DiffusionFields {
  ScalarField potential;
  VectorField gradient;
  VectorField forcing;
  VectorField forcing_jacobian;
};

/// Overdamped dx = chi (eps f - grad U) dt + sqrt(2 chi / beta) dW on a torus.
class DiffusionModel {
 public:
  DiffusionModel(Vector box, DiffusionFields fields, Matrix mobility, double beta, double epsilon);

  int dimension() const noexcept { return static_cast<int>(box_.size()); }
  const Vector& box() const noexcept { return box_; }
  const Matrix& mobility() const noexcept { return mobility_; }
  const Matrix& noise_factor() const noexcept { return noise_factor_; }  // chol(chi)
  double beta() const noexcept { return beta_; }
  double epsilon() const noexcept { return epsilon_; }
  const DiffusionFields& fields() const noexcept { return fields_; }
  DiffusionModel with_epsilon(double epsilon) const;

  double potential(std::span<const double> x) const;
  void gradient(std::span<const double> x, std::span<double> out) const;
  void forcing(std::span<const double> x, std::span<double> out) const;
  /// tr(chi grad f) = sum_ij chi_ij d f_i / d x_j.
  double mobility_divergence(std::span<const double> x) const;
  /// w = chi div f / beta - chi f . grad U (constant chi).
  double flux_density(std::span<const double> x) const;

  /// Maps a point into the box [0, L).
  void wrap(std::span<double> x) const;

 private:
  Vector box_;
  DiffusionFields fields_;
  Matrix mobility_;
  Matrix noise_factor_;
  double beta_;
  double epsilon_;
};

/// n = 1, box [0, 1), U = cos(2 pi x), f = 1, chi = 1, beta = 1.
DiffusionModel make_diff_ring(double epsilon);

/// One-dimensional model on [0, length) from scalar callables.
struct PeriodicField1D {
  std::function<double(double)> value;
  std::function<double(double)> derivative;
};
DiffusionModel make_periodic_1d(const PeriodicField1D& potential, const PeriodicField1D& forcing, double mobility,
                                double beta, double epsilon, double length = 1.0);

/// Positions at the grid times k dt on the universal cover (never wrapped).
struct DiffusionPath {
  int dimension = 1;
  double dt = 0.0;
  std::vector<double> positions;  // (steps + 1) * dimension

  std::size_t steps() const { return positions.size() / dimension - 1; }
  std::span<const double> at(std::size_t k) const { return {positions.data() + k * dimension, std::size_t(dimension)}; }
  std::vector<double> wrapped(std::size_t k, const DiffusionModel& model) const;
  /// Number of box lengths crossed per coordinate since time 0.
  std::vector<long> winding(std::size_t k, const DiffusionModel& model) const;
};

DiffusionPath reverse(const DiffusionPath& path);

struct StepOptions {
  double dt = 1e-3;
  /// Each step uses the normalized sum of 2^r standard normals, so a run at
  /// dt and r = 1 shares its noise with a run at dt/2 and r = 0.
  int noise_refinement = 0;
};

/// Steps needed to cover [0, T]; throws unless T is a multiple of dt.
std::size_t step_count(double horizon, double dt);

/// Suggested upper bound on dt: 0.1 / (beta |chi| max |U''|) estimated on a grid.
double stability_threshold(const DiffusionModel& model);

DiffusionPath euler_maruyama(const DiffusionModel& model, std::span<const double> x0, double horizon,
                             const StepOptions& options, StreamRng& rng);

/// S by the midpoint (Stratonovich) rule on unwrapped displacements, with an
/// exact sum; T1 and T2 by left Riemann sums:
///   T1 = sum [-eps beta f.chi grad U + eps tr(chi grad f)] dt,
///   T2 = (eps^2 beta / 2) sum f.chi f dt.
PathObservables diffusion_observables(const DiffusionPath& path, const DiffusionModel& model);

/// Integrates and evaluates observables without storing the path.
PathObservables simulate_observables(const DiffusionModel& model, std::span<const double> x0, double horizon,
                                     const StepOptions& options, StreamRng& rng);

/// Mean of exp((S - T)/2) over reference paths (epsilon = 0 dynamics) from x0.
Estimate diffusion_normalization(const DiffusionModel& model, std::span<const double> x0, double horizon,
                                 const StepOptions& options, const SamplingConfig& config);

/// Normalization means at dt, dt/2 and dt/4 on shared noise. The per-path
/// differences between neighbouring levels have small variance, so the bias
/// ratio (E_dt - E_dt/2) / (E_dt/2 - E_dt/4) resolves the weak order even when
/// each mean alone is noisier than its bias.
struct NormalizationBias {
  double dt = 0.0;
  std::vector<Estimate> levels;       // dt, dt/2, dt/4
  std::vector<Estimate> differences;  // E_dt - E_dt/2, E_dt/2 - E_dt/4
  double ratio = 0.0;
  double bias = 0.0;  // Richardson estimate of E_dt - 1
};
NormalizationBias normalization_bias(const DiffusionModel& model, std::span<const double> x0, double horizon,
                                     double dt, const SamplingConfig& config);

/// End positions of reference paths from x0, binned on [0, L) (1-D only).
struct Histogram {
  std::vector<double> edges;
  std::vector<Estimate> probability;
};
Histogram end_position_histogram(const DiffusionModel& model, double x0, double horizon, const StepOptions& options,
                                 int bins, const SamplingConfig& config);

/// First-order density rho0 (1 - eps beta h) on a grid of a 1-D model, with
/// h(x) = int_0^T <w(x_t)>_x dt estimated by reference paths from each node.
struct FirstOrderDensity {
  std::vector<double> grid;
  std::vector<double> rho0;
  std::vector<Estimate> h;
  std::vector<double> density;
  std::vector<double> density_se;
  double horizon = 0.0;
  double dt = 0.0;
};
FirstOrderDensity mclennan_first_order_diffusion(const DiffusionModel& model, int grid_points, double horizon,
                                                 const StepOptions& options, const SamplingConfig& config);

/// rho0 = exp(-beta U)/Z of a 1-D model at the given points, Z by a periodic
/// trapezoid rule on 4096 nodes.
std::vector<double> diffusion_equilibrium_density(const DiffusionModel& model, const std::vector<double>& points);

/// Ring jump chain of a 1-D model with N cells of width d = L/N:
/// k0(x, x +- d) = (chi / beta d^2) exp(-beta [U(x +- d) - U(x)] / 2) and
/// forcing d f(x) on the edge (x, x + d).
JumpModel ring_chain(const DiffusionModel& model, int cells);

/// Stationary density (probability / d) of the ring chain at the cell nodes.
std::vector<double> ring_chain_density(const DiffusionModel& model, int cells);

struct ContinuumActivity {
  double discrete = 0.0;
  double continuum = 0.0;
  double error = 0.0;          // discrete - continuum
  double roundoff_bound = 0.0; // estimated floating-point error of `discrete`
};

/// (2/d^2) sum_+- [k(x, x +- d) - k0(x, x +- d)] with k0 = D exp(-beta dU/2),
/// D = chi / beta, and edge forcing f(x) forward, -f(x - d) backward, against
/// (chi beta / 2) eps^2 f^2 + chi eps f' - chi beta eps f U'.
ContinuumActivity continuum_activity_limit(const PeriodicField1D& potential, const PeriodicField1D& forcing,
                                           double mobility, double beta, double epsilon, double x, double delta);

/// Least-squares slope of log|error| against log(delta).
double scaling_exponent(const std::vector<double>& deltas, const std::vector<double>& errors);

/// Underdamped dq = v dt, m dv = (eps f - grad U - m gamma v) dt + sqrt(2 m D) dB,
/// gamma = beta D, on a periodic box in q.
class UnderdampedModel {
 public:
  UnderdampedModel(Vector box, DiffusionFields fields, double mass, Matrix friction, Matrix noise, double beta,
                   double epsilon);

  int dimension() const noexcept { return static_cast<int>(box_.size()); }
  const Vector& box() const noexcept { return box_; }
  double mass() const noexcept { return mass_; }
  const Matrix& friction() const noexcept { return friction_; }
  const Matrix& noise() const noexcept { return noise_; }
  const Matrix& noise_inverse() const noexcept { return noise_inverse_; }
  const Matrix& noise_factor() const noexcept { return noise_factor_; }
  double beta() const noexcept { return beta_; }
  double epsilon() const noexcept { return epsilon_; }
  const DiffusionFields& fields() const noexcept { return fields_; }
  UnderdampedModel with_epsilon(double epsilon) const;

 private:
  Vector box_;
  DiffusionFields fields_;
  double mass_;
  Matrix friction_;
  Matrix noise_;
  Matrix noise_inverse_;
  Matrix noise_factor_;
  double beta_;
  double epsilon_;
};

/// 1-D underdamped ring with U = cos(2 pi q), f = 1 on [0, 1).
UnderdampedModel make_underdamped_ring(double mass, double noise, double beta, double epsilon);

struct PhasePath {
  int dimension = 1;
  double dt = 0.0;
  std::vector<double> q;  // (steps + 1) * dimension, unwrapped
  std::vector<double> v;

  std::size_t steps() const { return q.size() / dimension - 1; }
};

/// Kinematic reversal: reversed order with velocities flipped.
PhasePath reverse(const PhasePath& path);

struct UnderdampedObservables {
  PathObservables observables;
  /// Log ratio of the integrator's own Gaussian transition densities,
  /// driven over reference, along the same path.
  double discrete_log_ratio = 0.0;
};

/// S = eps beta int v.f dt (trapezoid, exact sum);
/// T = (eps^2/2m) int f.D^-1 f dt - (eps/m) int f.D^-1 grad U dt - eps int dv o D^-1 f,
/// the last with f at the midpoint of each step.
UnderdampedObservables underdamped_observables(const PhasePath& path, const UnderdampedModel& model);

/// Symplectic Euler: v' = v + (F(q)/m - gamma v) dt + sqrt(2 dt / m) chol(D) xi, then q' = q + v' dt.
PhasePath underdamped_simulate(const UnderdampedModel& model, std::span<const double> q0, std::span<const double> v0,
                               double horizon, double dt, StreamRng& rng);

/// Which path-weight convention makes reference expectations equal to 1.
struct ConventionRow {
  double dt = 0.0;
  Estimate half;      // < exp((S - T)/2) >
  Estimate full;      // < exp(S - T) >
  Estimate discrete;  // < exp(discrete log ratio) >
  double rms_gap_half = 0.0;  // rms of discrete log ratio - (S - T)/2
  double rms_gap_full = 0.0;  // rms of discrete log ratio - (S - T)
};
struct ConventionReport {
  std::vector<ConventionRow> rows;
  bool half_compatible = false;
  bool full_compatible = false;
  std::string convention;  // "(S-T)/2", "S-T" or "undetermined"
};
ConventionReport underdamped_convention_test(const UnderdampedModel& model, std::span<const double> q0,
                                             double horizon, const std::vector<double>& dts,
                                             const SamplingConfig& config);

/// Velocity mean and variance over the final states of reference paths.
struct VelocityMoments {
  Estimate mean;
  Estimate variance;
  double expected_variance = 0.0;  // 1 / (beta m)
};
VelocityMoments underdamped_velocity_check(const UnderdampedModel& model, double horizon, double dt,
                                           const SamplingConfig& config);

nlohmann::json to_json(const FirstOrderDensity& density);
nlohmann::json to_json(const ConventionReport& report);

}  // namespace statexp
