#include "statexp/exact.hpp"

#include <algorithm>
#include <cmath>
#include <functional>
#include <limits>
#include <map>
#include <string>

#include <Eigen/Eigenvalues>
#include <unsupported/Eigen/MatrixFunctions>

namespace statexp {

namespace {

void require_finite(const Vector& v, const char* what) {
  if (!v.allFinite()) throw NumericalError(std::string(what) + " produced non-finite values");
}

// One uniformization pass: sum_k Pois(k; lambda) P^k applied through `step`.
template <class Step>
Vector uniformized(const Vector& start, double lambda, Step step) {
  double weight = std::exp(-lambda);
  Vector term = start;
  Vector out = weight * term;
  double mass = weight;
  for (int k = 1;; ++k) {
    term = step(term);
    weight *= lambda / k;
    out += weight * term;
    mass += weight;
    if (k > lambda && 1.0 - mass < 1e-17) break;
    if (k > lambda && weight < 1e-300) break;
    if (k > 10000) throw NumericalError("uniformization did not converge");
  }
  return out;
}

template <class Apply>
Vector evolve(const RateMatrix& rates, Vector state, double horizon, Apply apply) {
  if (!(horizon >= 0.0) || !std::isfinite(horizon)) throw ValidationError("horizon must be a finite nonnegative time");
  const double lambda = rates.max_escape_rate();
  if (horizon == 0.0 || lambda == 0.0) return state;
  const int substeps = std::max(1, static_cast<int>(std::ceil(lambda * horizon / 10.0)));
  const double dt = horizon / substeps;
  const Matrix P = Matrix::Identity(rates.size(), rates.size()) + rates.generator() / lambda;
  for (int s = 0; s < substeps; ++s)
    state = uniformized(state, lambda * dt, [&](const Vector& v) { return apply(P, v); });
  return state;
}

// Multi-indices 0 <= a <= b in lexicographic order; a <= c componentwise
// implies a comes first.
std::vector<std::vector<int>> multi_indices(const std::vector<int>& bound) {
  std::vector<std::vector<int>> items;
  std::vector<int> a(bound.size(), 0);
  for (;;) {
    items.push_back(a);
    int i = static_cast<int>(bound.size()) - 1;
    while (i >= 0 && a[i] == bound[i]) a[i--] = 0;
    if (i < 0) break;
    ++a[i];
  }
  return items;
}

double binomial(int n, int k) {
  double r = 1.0;
  for (int i = 1; i <= k; ++i) r = r * (n - k + i) / i;
  return r;
}

void check_tilt_request(const MomentSpec& spec, double horizon) {
  if (spec.total_degree() > kMaxTiltDepth)
    throw ValidationError("tilted moment depth " + std::to_string(spec.total_degree()) + " exceeds " +
                          std::to_string(kMaxTiltDepth));
  if (!(horizon > 0.0) || !std::isfinite(horizon)) throw ValidationError("horizon must be positive");
}

// Tilted generator L_lambda for the given tilts (lambda0, lambda1, ...).
Matrix tilted_generator(const JumpModel& model, const std::vector<double>& lambda) {
  const Index n = model.size();
  const double be = model.beta() * model.epsilon();
  Matrix L = Matrix::Zero(n, n);
  for (Index x = 0; x < n; ++x) {
    double escape = 0.0;
    for (Index y = 0; y < n; ++y) {
      if (x == y) continue;
      const double k = model.base_rates()(x, y);
      escape += k;
      L(x, y) = k * std::exp(lambda[0] * be * model.forcing()(x, y));
    }
    L(x, x) = -escape;
  }
  for (std::size_t j = 1; j < lambda.size(); ++j)
    if (lambda[j] != 0.0) L.diagonal() += lambda[j] * activity_density(model, static_cast<int>(j));
  return L;
}

}  // namespace

Generator::Generator(const RateMatrix& rates)
    : matrix_(rates.generator()), stationary_(stationary_solve(rates)), gap_(statexp::spectral_gap(rates)) {}

Vector stationary_solve(const RateMatrix& rates) {
  const Index n = rates.size();
  Matrix q = rates.rates();
  if (auto closed = find_closed_subset(q)) {
    std::string names;
    for (int s : *closed) names += (names.empty() ? "" : ", ") + std::to_string(s);
    throw ReducibleChainError(*closed, "chain is reducible; closed subset {" + names + "}");
  }
  for (Index k = n - 1; k > 0; --k) {
    const double s = q.row(k).head(k).sum();
    if (!(s > 0.0)) throw NumericalError("stationary elimination hit a zero pivot");
    for (Index i = 0; i < k; ++i) q(i, k) /= s;
    for (Index i = 0; i < k; ++i)
      for (Index j = 0; j < k; ++j)
        if (i != j) q(i, j) += q(i, k) * q(k, j);
  }
  Vector pi = Vector::Zero(n);
  pi(0) = 1.0;
  for (Index k = 1; k < n; ++k)
    for (Index i = 0; i < k; ++i) pi(k) += pi(i) * q(i, k);
  pi /= pi.sum();
  require_finite(pi, "stationary solve");
  return pi;
}

double spectral_gap(const RateMatrix& rates) {
  const Vector rho = stationary_solve(rates);
  const Vector root = rho.cwiseSqrt();
  const Matrix S = root.asDiagonal() * rates.generator() * root.cwiseInverse().asDiagonal();
  const Matrix sym = 0.5 * (S + S.transpose());
  Eigen::SelfAdjointEigenSolver<Matrix> solver(sym, Eigen::EigenvaluesOnly);
  std::vector<double> mags;
  for (Index i = 0; i < solver.eigenvalues().size(); ++i) mags.push_back(std::abs(solver.eigenvalues()(i)));
  std::sort(mags.begin(), mags.end());
  if (mags.size() < 2 || !(mags[1] > 0.0)) throw NumericalError("spectral gap is zero");
  return mags[1];
}

Vector evolve_distribution(const RateMatrix& rates, const Vector& initial, double horizon) {
  if (initial.size() != rates.size()) throw ValidationError("initial distribution has the wrong size");
  return evolve(rates, initial, horizon, [](const Matrix& P, const Vector& v) -> Vector { return P.transpose() * v; });
}

Vector evolve_observable(const RateMatrix& rates, const Vector& g, double horizon) {
  if (g.size() != rates.size()) throw ValidationError("observable has the wrong size");
  return evolve(rates, g, horizon, [](const Matrix& P, const Vector& v) -> Vector { return P * v; });
}

Vector solve_poisson(const Matrix& generator, const Vector& rho0, const Vector& u) {
  const double mean = rho0.dot(u);
  const double scale = u.cwiseAbs().maxCoeff();
  if (std::abs(mean) > 1e-10 * std::max(scale, std::numeric_limits<double>::min()) && scale > 0.0)
    throw NumericalError("source term has nonzero equilibrium mean " + std::to_string(mean));
  if (scale == 0.0) return Vector::Zero(u.size());
  const Matrix A = generator - Vector::Ones(u.size()) * rho0.transpose();
  Vector v = A.partialPivLu().solve(-u);
  v.array() -= rho0.dot(v);
  require_finite(v, "resolvent solve");
  return v;
}

Vector flux_density(const JumpModel& model) {
  return model.base_rates().cwiseProduct(model.forcing()).rowwise().sum();
}

Vector activity_density(const JumpModel& model, int j) {
  if (j < 1) throw ValidationError("activity order must be at least 1");
  const double half = 0.5 * model.beta() * model.epsilon();
  double factorial = 1.0;
  for (int i = 2; i <= j; ++i) factorial *= i;
  const Matrix powers = (half * model.forcing()).array().pow(j).matrix();
  return 2.0 * model.base_rates().cwiseProduct(powers).rowwise().sum() / factorial;
}

Vector mclennan_h(const JumpModel& model) {
  return solve_poisson(base_rate_matrix(model).generator(), equilibrium_distribution(model), flux_density(model));
}

SecondOrderParts second_order_parts(const JumpModel& model) {
  const Matrix L0 = base_rate_matrix(model).generator();
  const Vector rho0 = equilibrium_distribution(model);
  const Vector w = flux_density(model);
  SecondOrderParts parts;
  parts.g = solve_poisson(L0, rho0, w);
  parts.phi = model.base_rates().cwiseProduct(model.forcing()) * parts.g + w.cwiseProduct(parts.g);
  parts.H = solve_poisson(L0, rho0, parts.phi);
  return parts;
}

Vector second_order_h2(const JumpModel& model) {
  const double be = model.beta() * model.epsilon();
  return be * be * second_order_parts(model).H;
}

Vector second_order_coefficient(const JumpModel& model) {
  return 0.5 * model.beta() * model.beta() * second_order_parts(model).H;
}

Vector tilted_moments_exact(const JumpModel& model, const MomentSpec& spec, double horizon) {
  check_tilt_request(spec, horizon);
  const Index n = model.size();
  const auto items = multi_indices(spec.exponents);
  const Index blocks = static_cast<Index>(items.size());

  // Derivative blocks of L_lambda at lambda = 0, indexed by a single-axis multi-index.
  const double be = model.beta() * model.epsilon();
  const Matrix L0 = base_rate_matrix(model).generator();
  auto derivative = [&](const std::vector<int>& d) -> std::optional<Matrix> {
    int axis = -1;
    for (std::size_t i = 0; i < d.size(); ++i) {
      if (d[i] == 0) continue;
      if (axis >= 0) return std::nullopt;
      axis = static_cast<int>(i);
    }
    if (axis < 0) return L0;
    if (axis == 0) {
      Matrix D = model.base_rates().cwiseProduct((be * model.forcing()).array().pow(d[0]).matrix());
      D.diagonal().setZero();
      return D;
    }
    if (d[axis] != 1) return std::nullopt;
    return Matrix(activity_density(model, axis).asDiagonal());
  };

  Matrix K = Matrix::Zero(n * blocks, n * blocks);
  for (Index a = 0; a < blocks; ++a) {
    const auto& alpha = items[a];
    for (Index c = 0; c <= a; ++c) {
      const auto& gamma = items[c];
      std::vector<int> d(alpha.size());
      bool below = true;
      double weight = 1.0;
      for (std::size_t i = 0; i < alpha.size(); ++i) {
        d[i] = alpha[i] - gamma[i];
        if (d[i] < 0) {
          below = false;
          break;
        }
        weight *= binomial(alpha[i], d[i]);
      }
      if (!below) continue;
      if (auto D = derivative(d)) K.block(a * n, c * n, n, n) += weight * *D;
    }
  }

  const Matrix E = (horizon * K).exp();
  const Vector moments = E.block((blocks - 1) * n, 0, n, n) * Vector::Ones(n);
  require_finite(moments, "tilted moment");
  return moments;
}

double tilted_moment_exact(const JumpModel& model, const MomentSpec& spec, Index x, double horizon) {
  if (x < 0 || x >= model.size()) throw ValidationError("state index out of range");
  return tilted_moments_exact(model, spec, horizon)(x);
}

double tilted_moment_fd(const JumpModel& model, const MomentSpec& spec, Index x, double horizon) {
  check_tilt_request(spec, horizon);
  if (x < 0 || x >= model.size()) throw ValidationError("state index out of range");
  const std::vector<int>& b = spec.exponents;

  auto stencil = [&](double h) {
    // Tensor product of one-dimensional central stencils.
    std::vector<std::vector<std::pair<double, double>>> axes;  // (offset, weight)
    for (int order : b) {
      std::vector<std::pair<double, double>> pts;
      for (int k = 0; k <= order; ++k)
        pts.emplace_back((0.5 * order - k) * h, ((k % 2) ? -1.0 : 1.0) * binomial(order, k) / std::pow(h, order));
      axes.push_back(std::move(pts));
    }
    double total = 0.0;
    std::vector<std::size_t> idx(axes.size(), 0);
    for (;;) {
      std::vector<double> lambda(axes.size());
      double weight = 1.0;
      for (std::size_t i = 0; i < axes.size(); ++i) {
        lambda[i] = axes[i][idx[i]].first;
        weight *= axes[i][idx[i]].second;
      }
      const Matrix E = (horizon * tilted_generator(model, lambda)).exp();
      const double value = E.row(x).sum();
      if (!std::isfinite(value)) throw NumericalError("tilted semigroup overflowed");
      total += weight * value;
      std::size_t i = 0;
      while (i < idx.size() && ++idx[i] == axes[i].size()) idx[i++] = 0;
      if (i == idx.size()) break;
    }
    return total;
  };

  const double h = 1e-2;
  const double coarse = stencil(2 * h);
  const double mid = stencil(h);
  const double fine = stencil(h / 2);
  const double r1 = (4 * mid - coarse) / 3;
  const double r2 = (4 * fine - mid) / 3;
  return (16 * r2 - r1) / 15;
}

double default_horizon(const JumpModel& model) { return 30.0 / spectral_gap(base_rate_matrix(model)); }

double epsilon_stencil_step(const JumpModel& model) {
  const RateMatrix k0 = base_rate_matrix(model);
  const double alpha = spectral_gap(k0);
  const double kappa = k0.max_escape_rate();
  const double scale = model.forcing_scale();
  if (scale == 0.0) return 0.0;
  return 1e-2 * std::min(1.0, alpha / kappa) / (model.beta() * scale);
}

Vector richardson_derivative(const std::function<Vector(double)>& fn, int m, double delta) {
  if (m < 1) throw ValidationError("derivative order must be positive");
  if (!(delta > 0.0)) throw ValidationError("stencil step must be positive");
  std::map<double, Vector> cache;
  auto value = [&](double eps) -> const Vector& {
    auto it = cache.find(eps);
    if (it == cache.end()) {
      Vector r = fn(eps);
      require_finite(r, "epsilon stencil");
      it = cache.emplace(eps, std::move(r)).first;
    }
    return it->second;
  };
  auto central = [&](double h) {
    Vector d = Vector::Zero(value(0.5 * m * h).size());
    for (int k = 0; k <= m; ++k)
      d += ((k % 2) ? -1.0 : 1.0) * binomial(m, k) * value((0.5 * m - k) * h);
    return Vector(d / std::pow(h, m));
  };

  constexpr int levels = 4;
  std::vector<std::vector<Vector>> table(levels);
  for (int i = 0; i < levels; ++i) {
    table[i].push_back(central(delta * std::pow(2.0, levels - 1 - i)));
    for (int j = 1; j <= i; ++j) {
      const double f = std::pow(4.0, j);
      table[i].push_back((f * table[i][j - 1] - table[i - 1][j - 1]) / (f - 1));
    }
  }
  return table[levels - 1][levels - 1];
}

Vector epsilon_derivative_oracle(const JumpModel& model, int m) {
  if (m < 1 || m > 4) throw ValidationError("derivative order must be between 1 and 4");
  const Index n = model.size();
  if (model.forcing_is_zero()) return Vector::Zero(n);
  const Vector rho0 = equilibrium_distribution(model);
  return richardson_derivative(
      [&](double eps) -> Vector {
        return stationary_solve(build_driven_rates(model.with_epsilon(eps))).cwiseQuotient(rho0);
      },
      m, epsilon_stencil_step(model));
}

double epsilon_derivative_oracle(const JumpModel& model, Index x, int m) {
  if (x < 0 || x >= model.size()) throw ValidationError("state index out of range");
  return epsilon_derivative_oracle(model, m)(x);
}

}  // namespace statexp
