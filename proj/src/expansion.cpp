#include "statexp/expansion.hpp"

#include <algorithm>
#include <cmath>
#include <map>

#include "statexp/exact.hpp"

namespace statexp {

namespace {

using boost::multiprecision::cpp_int;

cpp_int factorial(int k) {
  cpp_int r = 1;
  for (int i = 2; i <= k; ++i) r *= i;
  return r;
}

Rational power(const Rational& base, int k) {
  Rational r = 1;
  for (int i = 0; i < k; ++i) r *= base;
  return r;
}

std::vector<int> trimmed(std::vector<int> b) {
  while (b.size() > 1 && b.back() == 0) b.pop_back();
  return b;
}

void partitions(int remaining, int part, std::vector<int>& current, std::vector<std::vector<int>>& out) {
  if (part == 0) {
    if (remaining == 0) out.push_back(current);
    return;
  }
  for (int b = remaining / part; b >= 0; --b) {
    current[part - 1] = b;
    partitions(remaining - b * part, part - 1, current, out);
  }
  current[part - 1] = 0;
}

void check_order(int m) {
  if (m < 1) throw ValidationError("expansion order must be at least 1");
}

template <class Fn>
auto with_term_context(const MomentSpec& spec, Fn fn) {
  try {
    return fn();
  } catch (const ValidationError& e) {
    throw ValidationError("term " + spec.label() + ": " + e.what());
  } catch (const NumericalError& e) {
    throw NumericalError("term " + spec.label() + ": " + e.what());
  }
}

void check_options(const AssembleOptions& options) {
  const int limit = options.backend == Backend::exact ? 4 : 3;
  if (options.max_order < 1 || options.max_order > limit)
    throw ValidationError("max order for the " + to_string(options.backend) + " backend must be between 1 and " +
                          std::to_string(limit));
}

std::vector<MomentSpec> all_terms(int max_order) {
  std::vector<MomentSpec> specs;
  for (int m = 1; m <= max_order; ++m)
    for (auto& s : enumerate_terms(m)) specs.push_back(std::move(s));
  return specs;
}

}  // namespace

std::vector<MomentSpec> enumerate_terms(int m, int activity_cutoff) {
  check_order(m);
  if (activity_cutoff < 0) throw ValidationError("activity cutoff must be nonnegative");
  const int top = std::min(m, activity_cutoff);
  std::vector<MomentSpec> out;
  std::vector<int> b(static_cast<std::size_t>(m) + 1, 0);
  // b[1..top] chosen recursively; b0 is whatever order remains.
  auto recurse = [&](auto&& self, int j, int used) -> void {
    if (j > top) {
      const int b0 = m - used;
      if (b0 >= 1 && b0 % 2 == 1) {
        b[0] = b0;
        out.push_back(make_moment_spec(trimmed(b)));
      }
      return;
    }
    for (int k = 0; used + k * j <= m - 1; ++k) {
      b[j] = k;
      self(self, j + 1, used + k * j);
    }
    b[j] = 0;
  };
  recurse(recurse, 1, 0);
  std::sort(out.begin(), out.end(), spec_less);
  return out;
}

std::vector<BellTerm> bell_partitions(int m) {
  check_order(m);
  std::vector<std::vector<int>> raw;
  std::vector<int> current(m, 0);
  partitions(m, m, current, raw);
  std::vector<BellTerm> out;
  for (const auto& b : raw) {
    BellTerm t;
    t.m = m;
    cpp_int denom = 1;
    for (int j = 1; j <= m; ++j) {
      t.k += b[j - 1];
      denom *= factorial(b[j - 1]);
      for (int i = 0; i < b[j - 1]; ++i) denom *= factorial(j);
    }
    t.multiplicities.assign(b.begin(), b.begin() + (m - t.k + 1));
    t.weight = Rational(1) / Rational(denom);
    out.push_back(std::move(t));
  }
  std::sort(out.begin(), out.end(), [](const BellTerm& a, const BellTerm& b) {
    return a.k != b.k ? a.k < b.k : a.multiplicities > b.multiplicities;
  });
  return out;
}

BellForm bell_form_terms(int m, int activity_cutoff) {
  BellForm form;
  form.partitions = bell_partitions(m);
  const Rational half(1, 2);
  std::map<std::vector<int>, Rational> collected;
  for (const auto& p : form.partitions) {
    const auto mult = [&](int j) { return j <= static_cast<int>(p.multiplicities.size()) ? p.multiplicities[j - 1] : 0; };
    // G_j / j! is -T_j / 2 for j >= 2, and (sign S - T1) / 2 for j = 1.
    Rational base = 1;
    std::vector<int> exps(static_cast<std::size_t>(m) + 1, 0);
    bool dropped = false;
    for (int j = 2; j <= m; ++j) {
      exps[j] = mult(j);
      if (mult(j) > 0 && j > activity_cutoff) dropped = true;
      base *= power(-half, mult(j));
      base /= Rational(factorial(mult(j)));
    }
    if (dropped) continue;
    const int b1 = mult(1);
    base /= Rational(factorial(b1));
    for (int a = 0; a <= b1; ++a) {
      if (b1 - a > 0 && activity_cutoff < 1) continue;
      exps[0] = a;
      exps[1] = b1 - a;
      const Rational binom = Rational(factorial(b1)) / Rational(factorial(a) * factorial(b1 - a));
      const Rational common = base * binom * power(-half, b1 - a);
      // minus form has S coefficient -1/2, plus form +1/2
      const Rational diff = common * (power(-half, a) - power(half, a));
      if (diff == 0) continue;
      collected[trimmed(exps)] += diff;
    }
  }
  for (const auto& [exps, coeff] : collected) {
    if (coeff == 0) continue;
    MomentSpec s;
    s.exponents = exps;
    s.order = m;
    s.coefficient = coeff;
    form.terms.push_back(std::move(s));
  }
  std::sort(form.terms.begin(), form.terms.end(), spec_less);
  return form;
}

std::string to_string(Backend backend) { return backend == Backend::exact ? "exact" : "mc"; }

Backend backend_from_string(const std::string& name) {
  if (name == "exact") return Backend::exact;
  if (name == "mc") return Backend::mc;
  throw ValidationError("unknown backend '" + name + "' (expected exact or mc)");
}

std::vector<Assembly> assemble_all(const JumpModel& model, const AssembleOptions& options) {
  check_options(options);
  if (options.backend != Backend::exact) throw ValidationError("assemble_all supports the exact backend only");
  const double horizon = options.horizon > 0.0 ? options.horizon : default_horizon(model);
  const Index n = model.size();
  std::vector<Assembly> out(n);
  for (Index x = 0; x < n; ++x) {
    out[x].x = x;
    out[x].horizon = horizon;
    out[x].backend = Backend::exact;
    out[x].partial_sums.push_back(1.0);
    out[x].partial_se.push_back(0.0);
  }
  for (int m = 1; m <= options.max_order; ++m) {
    Vector order_sum = Vector::Zero(n);
    for (const auto& spec : enumerate_terms(m)) {
      const Vector moments = with_term_context(spec, [&] { return tilted_moments_exact(model, spec, horizon); });
      order_sum += to_double(spec.coefficient) * moments;
      for (Index x = 0; x < n; ++x) out[x].terms.push_back({spec, moments(x), 0.0});
    }
    for (Index x = 0; x < n; ++x) {
      out[x].partial_sums.push_back(out[x].partial_sums.back() + order_sum(x));
      out[x].partial_se.push_back(0.0);
    }
  }
  return out;
}

Assembly assemble(const JumpModel& model, Index x, const AssembleOptions& options) {
  check_options(options);
  if (x < 0 || x >= model.size()) throw ValidationError("state index out of range");
  if (options.backend == Backend::exact) return assemble_all(model, options)[x];

  const double horizon = options.horizon > 0.0 ? options.horizon : default_horizon(model);
  const std::vector<MomentSpec> specs = all_terms(options.max_order);
  std::vector<double> coefficients;
  int max_activity = 1;
  for (const auto& s : specs) {
    coefficients.push_back(to_double(s.coefficient));
    max_activity = std::max(max_activity, s.max_activity_order());
  }
  const std::size_t k = specs.size();
  const int max_order = options.max_order;
  const auto stats = accumulate_reference_paths(
      model, x, horizon, max_activity, k + static_cast<std::size_t>(max_order), StreamFamily::moments,
      options.sampling, [&](const PathObservables& obs, std::vector<double>& out) {
        std::vector<double> order_sum(max_order + 1, 0.0);
        for (std::size_t i = 0; i < k; ++i) {
          out[i] = spec_product(specs[i], obs);
          order_sum[specs[i].order] += coefficients[i] * out[i];
        }
        double partial = 1.0;
        for (int m = 1; m <= max_order; ++m) {
          partial += order_sum[m];
          out[k + m - 1] = partial;
        }
      });

  Assembly a;
  a.x = x;
  a.horizon = horizon;
  a.backend = Backend::mc;
  a.partial_sums.push_back(1.0);
  a.partial_se.push_back(0.0);
  for (std::size_t i = 0; i < k; ++i) a.terms.push_back({specs[i], stats[i].mean, stats[i].standard_error()});
  for (int m = 1; m <= max_order; ++m) {
    a.partial_sums.push_back(stats[k + m - 1].mean);
    a.partial_se.push_back(stats[k + m - 1].standard_error());
  }
  return a;
}

ConvergenceReport convergence_diagnostic(const std::vector<TermValue>& terms, double epsilon) {
  ConvergenceReport r;
  r.epsilon = epsilon;
  for (const auto& t : terms) {
    const int m = t.spec.order;
    if (static_cast<int>(r.per_order.size()) < m) r.per_order.resize(m, 0.0);
    if (t.moment == 0.0) continue;
    double c;
    if (epsilon == 0.0) {
      c = std::numeric_limits<double>::infinity();
    } else {
      c = std::pow(std::abs(t.moment) / std::pow(std::abs(epsilon), m), 1.0 / t.spec.total_degree());
    }
    r.per_order[m - 1] = std::max(r.per_order[m - 1], c);
    r.c = std::max(r.c, c);
  }
  r.radius = std::exp(-0.5 * r.c);
  return r;
}

nlohmann::json to_json(const Assembly& a, const JumpModel& model) {
  nlohmann::json terms = nlohmann::json::array();
  for (const auto& t : a.terms) {
    terms.push_back({{"spec", to_json(t.spec)},
                     {"moment", t.moment},
                     {"se", t.se},
                     {"contribution", to_double(t.spec.coefficient) * t.moment}});
  }
  return {{"x", model.states()[a.x]},
          {"T", a.horizon},
          {"backend", to_string(a.backend)},
          {"partial_sums", a.partial_sums},
          {"partial_se", a.partial_se},
          {"terms", terms}};
}

nlohmann::json to_json(const ConvergenceReport& r) {
  const auto finite = [](double v) { return std::isfinite(v) ? nlohmann::json(v) : nlohmann::json(nullptr); };
  nlohmann::json per = nlohmann::json::array();
  for (double c : r.per_order) per.push_back(finite(c));
  return {{"c", finite(r.c)}, {"per_order", per}, {"radius", r.radius}, {"epsilon", r.epsilon},
          {"within_radius", std::abs(r.epsilon) < r.radius}};
}

}  // namespace statexp
