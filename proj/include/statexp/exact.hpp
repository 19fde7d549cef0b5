#pragma once

#include <functional>

#include "statexp/model.hpp"
#include "statexp/moment_spec.hpp"

namespace statexp {

/// Backward generator (Lg)(x) = sum_y k(x,y)[g(y) - g(x)] with a spectral-gap
/// estimate taken from the symmetrized generator.
class Generator {
 public:
  explicit Generator(const RateMatrix& rates);

  const Matrix& matrix() const noexcept { return matrix_; }
  Vector apply(const Vector& g) const { return matrix_ * g; }
  double spectral_gap() const noexcept { return gap_; }
  const Vector& stationary() const noexcept { return stationary_; }

 private:
  Matrix matrix_;
  Vector stationary_;
  double gap_;
};

/// Second-smallest |eigenvalue| of D^(1/2) L D^(-1/2) symmetrized, with D
/// the stationary distribution. Exact for reversible chains.
double spectral_gap(const RateMatrix& rates);

/// Stationary distribution of an irreducible chain (Grassmann-Taksar-Heyman
/// elimination; subtraction free). Throws ReducibleChainError otherwise.
Vector stationary_solve(const RateMatrix& rates);

/// p(T) = p(0)^T exp(T L), by uniformization truncated at 1e-17 Poisson tail mass.
Vector evolve_distribution(const RateMatrix& rates, const Vector& initial, double horizon);

/// (exp(t L) g)(x) = E_x[g(x_t)].
Vector evolve_observable(const RateMatrix& rates, const Vector& g, double horizon);

/// v with L0 v = -u and <v>_rho0 = 0. Requires <u>_rho0 = 0 within
/// 1e-10 |u|_inf (NumericalError otherwise).
Vector solve_poisson(const Matrix& generator, const Vector& rho0, const Vector& u);

/// w(x) = sum_y k0(x,y) f(x,y).
Vector flux_density(const JumpModel& model);

/// Order-j activity density tau_j(x) = 2 sum_y k0(x,y) (beta eps f(x,y)/2)^j / j!.
Vector activity_density(const JumpModel& model, int j);

/// h with L0 h = -w, <h>_rho0 = 0; rho/rho0 = 1 - eps beta h + O(eps^2).
Vector mclennan_h(const JumpModel& model);

/// The chained resolvent solve behind the second order:
/// g = -L0^-1 w, phi(x) = sum_y k0 f g(y) + w(x) g(x), H = -L0^-1 phi.
struct SecondOrderParts {
  Vector g;
  Vector phi;
  Vector H;
};
SecondOrderParts second_order_parts(const JumpModel& model);

/// h2 = (eps beta)^2 H; the order-eps^2 term of rho/rho0 is h2 / 2.
Vector second_order_h2(const JumpModel& model);

/// beta^2 H / 2, the eps^2 Taylor coefficient of rho/rho0.
Vector second_order_coefficient(const JumpModel& model);

/// Largest total degree b0+b1+... accepted by the tilted-moment routines.
inline constexpr int kMaxTiltDepth = 6;

/// < S^b0 T1^b1 ... >_x under the reference dynamics over [0, T], for every
/// start state x. Mixed partial derivatives of exp(T L_lambda) 1 at lambda = 0,
/// where L_lambda tilts jumps by exp(lambda0 beta eps f) and adds
/// sum_j lambda_j tau_j on the diagonal. Derivatives are propagated exactly
/// through a block-triangular jet generator.
Vector tilted_moments_exact(const JumpModel& model, const MomentSpec& spec, double horizon);
double tilted_moment_exact(const JumpModel& model, const MomentSpec& spec, Index x, double horizon);

/// Same moment by central finite differences in the tilts (step 1e-2,
/// two Richardson levels). Independent cross-check, accurate only for
/// low total degree.
double tilted_moment_fd(const JumpModel& model, const MomentSpec& spec, Index x, double horizon);

/// Default horizon 30 / alpha of the reference dynamics.
double default_horizon(const JumpModel& model);

/// m-th derivative in eps of rho_eps(x)/rho0(x) at eps = 0 for all x, by
/// central differences of stationary_solve on the stencil {+-k delta}
/// with three Richardson levels. 1 <= m <= 4.
Vector epsilon_derivative_oracle(const JumpModel& model, int m);
double epsilon_derivative_oracle(const JumpModel& model, Index x, int m);

/// m-th derivative at 0 of a vector-valued function by central differences
/// at steps 8, 4, 2, 1 times delta, combined in a Richardson tableau.
Vector richardson_derivative(const std::function<Vector(double)>& fn, int m, double delta);

/// Base step delta of the eps stencil: 1e-2 min(1, alpha/kappa) / (beta |f|_inf)
/// with kappa the largest escape rate.
double epsilon_stencil_step(const JumpModel& model);

}  // namespace statexp
