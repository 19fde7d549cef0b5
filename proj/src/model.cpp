#include "statexp/model.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <queue>
#include <sstream>

namespace statexp {

namespace {

std::string pair_name(const std::vector<std::string>& states, Index x, Index y) {
  return "(" + states[x] + ", " + states[y] + ")";
}

// Kosaraju SCC labelling on the graph with an edge x->y whenever rates(x,y) > 0.
std::vector<int> strongly_connected_components(const Matrix& rates, int& count) {
  const Index n = rates.rows();
  std::vector<int> order;
  order.reserve(n);
  std::vector<char> seen(n, 0);
  for (Index root = 0; root < n; ++root) {
    if (seen[root]) continue;
    std::vector<std::pair<Index, Index>> stack{{root, 0}};
    seen[root] = 1;
    while (!stack.empty()) {
      auto& [v, next] = stack.back();
      if (next < n) {
        const Index w = next++;
        if (w != v && rates(v, w) > 0.0 && !seen[w]) {
          seen[w] = 1;
          stack.emplace_back(w, 0);
        }
      } else {
        order.push_back(static_cast<int>(v));
        stack.pop_back();
      }
    }
  }
  std::vector<int> comp(n, -1);
  count = 0;
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    if (comp[*it] >= 0) continue;
    std::vector<Index> stack{*it};
    comp[*it] = count;
    while (!stack.empty()) {
      const Index v = stack.back();
      stack.pop_back();
      for (Index w = 0; w < n; ++w) {
        if (w != v && rates(w, v) > 0.0 && comp[w] < 0) {
          comp[w] = count;
          stack.push_back(w);
        }
      }
    }
    ++count;
  }
  return comp;
}

}  // namespace

std::optional<std::vector<int>> find_closed_subset(const Matrix& rates) {
  int count = 0;
  const auto comp = strongly_connected_components(rates, count);
  if (count <= 1) return std::nullopt;
  std::vector<char> leaks(count, 0);
  const Index n = rates.rows();
  for (Index x = 0; x < n; ++x)
    for (Index y = 0; y < n; ++y)
      if (x != y && rates(x, y) > 0.0 && comp[x] != comp[y]) leaks[comp[x]] = 1;
  const int closed = static_cast<int>(std::find(leaks.begin(), leaks.end(), 0) - leaks.begin());
  std::vector<int> subset;
  for (Index x = 0; x < n; ++x)
    if (comp[x] == closed) subset.push_back(static_cast<int>(x));
  return subset;
}

RateMatrix RateMatrix::from_rates(const Matrix& rates) {
  if (rates.rows() != rates.cols()) throw ValidationError("rate matrix must be square");
  Matrix q = rates;
  for (Index x = 0; x < q.rows(); ++x) {
    q(x, x) = 0.0;
    double escape = 0.0;
    for (Index y = 0; y < q.cols(); ++y) {
      if (x == y) continue;
      if (!std::isfinite(q(x, y)) || q(x, y) < 0.0) {
        std::ostringstream msg;
        msg << "rate (" << x << ", " << y << ") must be finite and nonnegative";
        throw ValidationError(msg.str());
      }
      escape += q(x, y);
    }
    q(x, x) = -escape;
  }
  return RateMatrix(std::move(q));
}

double RateMatrix::max_escape_rate() const {
  return (-generator_.diagonal()).maxCoeff();
}

Matrix RateMatrix::rates() const {
  Matrix k = generator_;
  k.diagonal().setZero();
  return k;
}

JumpModel::JumpModel(std::vector<std::string> states, Vector energy, double beta,
                     Matrix base_rates, Matrix forcing, double epsilon)
    : states_(std::move(states)),
      energy_(std::move(energy)),
      beta_(beta),
      base_rates_(std::move(base_rates)),
      forcing_(std::move(forcing)),
      epsilon_(epsilon) {
  const Index n = energy_.size();
  if (n < 2) throw ValidationError("a jump model needs at least two states");
  if (static_cast<Index>(states_.size()) != n)
    throw ValidationError("state labels and energies differ in length");
  if (base_rates_.rows() != n || base_rates_.cols() != n || forcing_.rows() != n ||
      forcing_.cols() != n)
    throw ValidationError("rate and forcing matrices must be n x n");
  if (!(beta_ > 0.0) || !std::isfinite(beta_)) throw ValidationError("beta must be positive and finite");
  if (!std::isfinite(epsilon_)) throw ValidationError("epsilon must be finite");
  if (!energy_.allFinite()) throw ValidationError("energies must be finite");

  for (Index x = 0; x < n; ++x) {
    base_rates_(x, x) = 0.0;
    if (forcing_(x, x) != 0.0)
      throw ValidationError("forcing on the diagonal pair " + pair_name(states_, x, x) + " must be zero");
  }

  const double u_min = energy_.minCoeff();
  for (Index x = 0; x < n; ++x) {
    for (Index y = 0; y < n; ++y) {
      if (x == y) continue;
      const double k = base_rates_(x, y);
      if (!std::isfinite(k) || k < 0.0)
        throw ValidationError("base rate on " + pair_name(states_, x, y) + " must be finite and nonnegative");
      if (!std::isfinite(forcing_(x, y)))
        throw ValidationError("forcing on " + pair_name(states_, x, y) + " is not finite");
      if (forcing_(x, y) != -forcing_(y, x))
        throw ValidationError("forcing is not antisymmetric on " + pair_name(states_, x, y));
      if (forcing_(x, y) != 0.0 && k <= 0.0)
        throw ValidationError("forcing is nonzero on " + pair_name(states_, x, y) +
                              " where the base rate vanishes");
      if (y > x) {
        const double lhs = k * std::exp(-beta_ * (energy_(x) - u_min));
        const double rhs = base_rates_(y, x) * std::exp(-beta_ * (energy_(y) - u_min));
        if (std::abs(lhs - rhs) > kDetailedBalanceTolerance * std::max(lhs, rhs))
          throw ValidationError("base rates violate detailed balance on " + pair_name(states_, x, y));
      }
    }
  }

  if (auto closed = find_closed_subset(base_rates_)) {
    std::string names;
    for (int s : *closed) names += (names.empty() ? "" : ", ") + states_[s];
    throw ReducibleChainError(*closed, "base rates are not irreducible; closed subset {" + names + "}");
  }
}

double JumpModel::forcing_scale() const { return forcing_.cwiseAbs().maxCoeff(); }

bool JumpModel::forcing_is_zero() const { return forcing_scale() == 0.0; }

std::optional<Index> JumpModel::find_state(std::string_view label) const {
  const auto it = std::find(states_.begin(), states_.end(), label);
  if (it == states_.end()) return std::nullopt;
  return static_cast<Index>(it - states_.begin());
}

Index JumpModel::state_index(std::string_view label) const {
  if (auto idx = find_state(label)) return *idx;
  throw ValidationError("unknown state '" + std::string(label) + "'");
}

JumpModel JumpModel::with_epsilon(double epsilon) const {
  return JumpModel(states_, energy_, beta_, base_rates_, forcing_, epsilon);
}

JumpModel JumpModel::with_forcing(const Matrix& forcing) const {
  return JumpModel(states_, energy_, beta_, base_rates_, forcing, epsilon_);
}

RateMatrix build_driven_rates(const JumpModel& model) {
  const Index n = model.size();
  Matrix k = model.base_rates();
  const double half = 0.5 * model.beta() * model.epsilon();
  if (half != 0.0) {
    for (Index x = 0; x < n; ++x)
      for (Index y = 0; y < n; ++y)
        if (x != y && k(x, y) > 0.0) k(x, y) *= std::exp(half * model.forcing()(x, y));
  }
  return RateMatrix::from_rates(k);
}

RateMatrix base_rate_matrix(const JumpModel& model) {
  return RateMatrix::from_rates(model.base_rates());
}

Vector equilibrium_distribution(const JumpModel& model) {
  const Vector& u = model.energy();
  Vector rho = (-model.beta() * (u.array() - u.minCoeff())).exp().matrix();
  return rho / rho.sum();
}

CirculationReport circulation_check(const JumpModel& model) {
  const Index n = model.size();
  const Matrix& k = model.base_rates();
  const Matrix& f = model.forcing();
  auto adjacent = [&](Index x, Index y) { return x != y && (k(x, y) > 0.0 || k(y, x) > 0.0); };

  // BFS spanning tree of the undirected support graph.
  std::vector<Index> parent(n, -1), depth(n, 0);
  std::vector<char> in_tree(n, 0);
  std::queue<Index> queue;
  queue.push(0);
  in_tree[0] = 1;
  while (!queue.empty()) {
    const Index v = queue.front();
    queue.pop();
    for (Index w = 0; w < n; ++w) {
      if (adjacent(v, w) && !in_tree[w]) {
        in_tree[w] = 1;
        parent[w] = v;
        depth[w] = depth[v] + 1;
        queue.push(w);
      }
    }
  }

  CirculationReport report;
  for (Index u = 0; u < n; ++u) {
    for (Index v = u + 1; v < n; ++v) {
      if (!adjacent(u, v) || parent[v] == u || parent[u] == v) continue;
      // chord u -> v, closed by the tree path v -> lca -> u
      std::vector<Index> from_v{v}, from_u{u};
      while (depth[from_v.back()] > depth[from_u.back()]) from_v.push_back(parent[from_v.back()]);
      while (depth[from_u.back()] > depth[from_v.back()]) from_u.push_back(parent[from_u.back()]);
      while (from_v.back() != from_u.back()) {
        from_v.push_back(parent[from_v.back()]);
        from_u.push_back(parent[from_u.back()]);
      }
      Cycle cycle;
      cycle.states.push_back(u);
      for (Index s : from_v)
        if (s != u) cycle.states.push_back(s);
      for (std::size_t i = from_u.size() - 1; i-- > 1;) cycle.states.push_back(from_u[i]);
      double circulation = 0.0;
      for (std::size_t i = 0; i < cycle.states.size(); ++i)
        circulation += f(cycle.states[i], cycle.states[(i + 1) % cycle.states.size()]);
      cycle.circulation = circulation;
      if (std::abs(circulation) > 1e-12) report.conservative = false;
      report.cycles.push_back(std::move(cycle));
    }
  }
  return report;
}

Matrix potential_forcing(const Matrix& base_rates, const Vector& potential) {
  const Index n = base_rates.rows();
  if (potential.size() != n) throw ValidationError("potential length does not match the state count");
  Matrix f = Matrix::Zero(n, n);
  for (Index x = 0; x < n; ++x)
    for (Index y = x + 1; y < n; ++y)
      if (base_rates(x, y) > 0.0 || base_rates(y, x) > 0.0) {
        const double d = potential(y) - potential(x);
        f(x, y) = d;
        f(y, x) = -d;
      }
  return f;
}

JumpModel make_ring3(double epsilon) {
  Vector energy(3);
  energy << 0.0, 1.0, 2.0;
  Matrix rates = Matrix::Zero(3, 3), forcing = Matrix::Zero(3, 3);
  for (int x = 0; x < 3; ++x)
    for (int y = 0; y < 3; ++y)
      if (x != y) rates(x, y) = std::exp(-0.5 * (energy(y) - energy(x)));
  for (int x = 0; x < 3; ++x) {
    forcing(x, (x + 1) % 3) = 1.0;
    forcing((x + 1) % 3, x) = -1.0;
  }
  return JumpModel({"0", "1", "2"}, energy, 1.0, rates, forcing, epsilon);
}

}  // namespace statexp
