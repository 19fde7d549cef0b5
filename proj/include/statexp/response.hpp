#pragma once

#include <vector>

#include <nlohmann/json.hpp>

#include "statexp/diffusion.hpp"
#include "statexp/expansion.hpp"
#include "statexp/model.hpp"
#include "statexp/sampler.hpp"

namespace statexp {

/// A reference model driven by the gradient of a potential V, an observable Q
/// read at time T, and the drive amplitude (the model's epsilon).
struct PerturbationSetup {
  JumpModel model;  // forcing f(x,y) = V(y) - V(x)
  Vector potential;
  Vector observable;
  double horizon = 1.0;
};

/// Builds the setup from a reference model; the forcing is derived from V on
/// the support of k0 and must be conservative.
PerturbationSetup make_perturbation(const JumpModel& base, const Vector& potential, const Vector& observable,
                                    double horizon, double epsilon);

/// (L0 V)(x) = sum_y k0(x,y) [V(y) - V(x)].
Vector backward_generator_apply(const JumpModel& model, const Vector& potential);

/// -chi U' V' + chi V'' / beta on a uniform periodic grid of a 1-D diffusion,
/// V given at the grid points x_i = i L / N, derivatives by central differences.
std::vector<double> backward_generator_apply(const DiffusionModel& model, const std::vector<double>& potential);

/// Largest |T1 - eps beta int L0V(x_s) ds| over sampled reference paths.
double activity_identity_gap(const PerturbationSetup& setup, std::uint64_t paths, std::uint64_t seed);

/// <Q(x_T)> under the driven dynamics started from rho0, to zeroth, first and
/// second order in eps:
///   <Q>,  beta eps <Q(x_T)[V(x_T) - V(x_0)]>,
///   -(beta eps)^2 / 2 int_0^T ds <Q(x_T)[V(x_T) - V(x_0)] L0V(x_s)>,
/// all under the equilibrium process.
struct ResponseTerms {
  Backend backend = Backend::exact;
  double zeroth = 0.0;
  double first = 0.0;
  double second = 0.0;
  double zeroth_se = 0.0;
  double first_se = 0.0;
  double second_se = 0.0;
  int quadrature_intervals = 0;  // exact backend

  double total() const { return zeroth + first + second; }
};

ResponseTerms response_expansion(const PerturbationSetup& setup, Backend backend = Backend::exact,
                                 const SamplingConfig& config = {});

/// <Q(x_T)> of the driven dynamics from rho0 by exact evolution.
double exact_driven_expectation(const PerturbationSetup& setup);
double exact_driven_expectation(const PerturbationSetup& setup, double epsilon);

/// -(beta^2 / 2) int_0^T ds <[Q(x_T) - Q(x_0)][V(x_T) - V(x_0)] L0V(x_s)>,
/// the second eps-derivative of <Q(x_T)> at eps = 0.
double second_derivative_formula(const PerturbationSetup& setup);

/// m-th eps-derivative at 0 of exact_driven_expectation by Richardson
/// extrapolated central differences; step <= 0 selects the default stencil.
double driven_derivative(const PerturbationSetup& setup, int m, double step = 0.0);

/// Both sides of
///   d^2/d eps^2 <Q(x_t)> = beta d/d eps <[Q(x_t) - Q(x_0)][V(x_t) - V(x_0)]>
/// at eps = 0, each from finite differences of driven evolutions.
struct FdtReport {
  double lhs = 0.0;
  double rhs = 0.0;
  double gap = 0.0;  // relative
  double step = 0.0;
};
FdtReport fdt_consistency_check(const PerturbationSetup& setup, double step = 0.0);

/// Estimates of <Q(x_0) S> and <Q(x_T) S> under the equilibrium process,
/// and of their sum, which vanishes by time reversal.
struct ReversalCheck {
  Estimate initial;
  Estimate final;
  Estimate sum;
};
ReversalCheck time_reversal_check(const PerturbationSetup& setup, const SamplingConfig& config);

/// Taylor coefficients of rho_eps / rho0 for the tilted Boltzmann weight
/// exp(-beta (U - eps V)): beta (V - <V>) and beta^2 [(V - <V>)^2 - Var V] / 2.
struct TiltedTaylor {
  Vector first;
  Vector second;
};
TiltedTaylor tilted_boltzmann_taylor(const JumpModel& model, const Vector& potential);

nlohmann::json to_json(const ResponseTerms& terms);
nlohmann::json to_json(const FdtReport& report);

}  // namespace statexp
