#pragma once

#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include <Eigen/Dense>

#include "statexp/errors.hpp"

namespace statexp {

using Vector = Eigen::VectorXd;
using Matrix = Eigen::MatrixXd;
using Index = Eigen::Index;

/// Relative tolerance of the detailed-balance check on the reference rates.
inline constexpr double kDetailedBalanceTolerance = 1e-12;

/// Off-diagonal jump rates k(x,y) >= 0 together with the generator matrix
/// whose diagonal is minus the escape rate. Rows of the generator sum to zero.
class RateMatrix {
 public:
  /// Diagonal entries of `rates` are ignored.
  static RateMatrix from_rates(const Matrix& rates);

  Index size() const noexcept { return generator_.rows(); }
  double rate(Index x, Index y) const { return x == y ? 0.0 : generator_(x, y); }
  double escape_rate(Index x) const { return -generator_(x, x); }
  double max_escape_rate() const;

  /// Backward generator L with (Lg)(x) = sum_y k(x,y)[g(y) - g(x)].
  const Matrix& generator() const noexcept { return generator_; }

  /// Off-diagonal rates with a zero diagonal.
  Matrix rates() const;

 private:
  explicit RateMatrix(Matrix generator) : generator_(std::move(generator)) {}
  Matrix generator_;
};

/// A driven Markov jump model: reference rates k0 in detailed balance with
/// exp(-beta U), antisymmetric forcing f and drive amplitude epsilon.
/// Immutable; every constructor runs the full validation.
class JumpModel {
 public:
  JumpModel(std::vector<std::string> states, Vector energy, double beta,
            Matrix base_rates, Matrix forcing, double epsilon);

  Index size() const noexcept { return energy_.size(); }
  const std::vector<std::string>& states() const noexcept { return states_; }
  const Vector& energy() const noexcept { return energy_; }
  double beta() const noexcept { return beta_; }
  double epsilon() const noexcept { return epsilon_; }
  const Matrix& base_rates() const noexcept { return base_rates_; }
  const Matrix& forcing() const noexcept { return forcing_; }

  /// Largest |f(x,y)| over all pairs.
  double forcing_scale() const;
  bool forcing_is_zero() const;

  std::optional<Index> find_state(std::string_view label) const;
  Index state_index(std::string_view label) const;

  JumpModel with_epsilon(double epsilon) const;
  JumpModel with_forcing(const Matrix& forcing) const;

 private:
  std::vector<std::string> states_;
  Vector energy_;
  double beta_;
  Matrix base_rates_;
  Matrix forcing_;
  double epsilon_;
};

/// Rates k_eps(x,y) = k0(x,y) exp(beta eps f(x,y) / 2).
RateMatrix build_driven_rates(const JumpModel& model);

/// Reference rates k0.
RateMatrix base_rate_matrix(const JumpModel& model);

/// rho0(x) = exp(-beta U(x)) / Z.
Vector equilibrium_distribution(const JumpModel& model);

struct Cycle {
  std::vector<Index> states;  // x1 -> x2 -> ... -> xk -> x1
  double circulation = 0.0;
};

struct CirculationReport {
  std::vector<Cycle> cycles;
  bool conservative = true;
};

/// Fundamental cycles (spanning tree plus chords) of the k0 support graph and
/// the forcing summed around each. Conservative iff every circulation is
/// within 1e-12 of zero.
CirculationReport circulation_check(const JumpModel& model);

/// A closed proper subset of states when the positive-rate graph is not
/// strongly connected; empty optional otherwise.
std::optional<std::vector<int>> find_closed_subset(const Matrix& rates);

/// Three states on a ring, U = (0, 1, 2), beta = 1, k0(x,y) = exp(-(U(y) - U(x))/2)
/// on every ordered pair and f = +1 along 0 -> 1 -> 2 -> 0.
JumpModel make_ring3(double epsilon);

/// Forcing f(x,y) = V(y) - V(x) on the support of `base_rates`.
Matrix potential_forcing(const Matrix& base_rates, const Vector& potential);

}  // namespace statexp
