#pragma once

#include <limits>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "statexp/model.hpp"
#include "statexp/moment_spec.hpp"
#include "statexp/sampler.hpp"

namespace statexp {

/// Activity cutoff for jump processes: every order T_j may appear.
inline constexpr int kNoActivityCutoff = std::numeric_limits<int>::max();
/// Activity cutoff for diffusions, where T_j = 0 for j > 2.
inline constexpr int kDiffusionActivityCutoff = 2;

/// All order-m terms: b0 odd, b0 + sum_j j*bj = m, bj = 0 for j > cutoff.
/// Sorted lexicographically in (b0, b1, ...); trailing zero exponents trimmed.
std::vector<MomentSpec> enumerate_terms(int m, int activity_cutoff = kNoActivityCutoff);

/// One partition in the Bell-polynomial sum: multiplicities (b1, ..., b_{m-k+1})
/// with sum bj = k, sum j*bj = m, and weight 1 / prod_j (bj! (j!)^bj).
struct BellTerm {
  std::vector<int> multiplicities;
  int k = 0;
  int m = 0;
  Rational weight;
};

std::vector<BellTerm> bell_partitions(int m);

/// B_m(-(S+T)/2) - B_m((S-T)/2) expanded in the eps-orders of S and T and
/// collected into monomials S^b0 T1^b1 ... with combined rational
/// coefficients. `partitions` are the Bell terms both forms sum over.
struct BellForm {
  std::vector<BellTerm> partitions;
  std::vector<MomentSpec> terms;
};

BellForm bell_form_terms(int m, int activity_cutoff = kNoActivityCutoff);

enum class Backend { exact, mc };

std::string to_string(Backend backend);
Backend backend_from_string(const std::string& name);

struct TermValue {
  MomentSpec spec;
  double moment = 0.0;  // < S^b0 T1^b1 ... >_x
  double se = 0.0;      // 0 for the exact backend
};

/// Partial sums p_0 = 1, p_1, ..., p_M of rho/rho0 at one state.
struct Assembly {
  Index x = 0;
  double horizon = 0.0;
  Backend backend = Backend::exact;
  std::vector<double> partial_sums;
  std::vector<double> partial_se;
  std::vector<TermValue> terms;  // in order, then lexicographic
};

struct AssembleOptions {
  int max_order = 2;
  Backend backend = Backend::exact;
  double horizon = 0.0;  // <= 0 selects 30 / alpha
  SamplingConfig sampling;
};

Assembly assemble(const JumpModel& model, Index x, const AssembleOptions& options);
/// Exact backend for every state at once.
std::vector<Assembly> assemble_all(const JumpModel& model, const AssembleOptions& options);

/// Smallest c with |moment| <= eps^m c^(b0+b1+...) over the given terms, and
/// the eps radius exp(-c/2) below which the majorizing series converges.
struct ConvergenceReport {
  double c = 0.0;
  std::vector<double> per_order;  // c restricted to order m (index m-1)
  double radius = 1.0;
  double epsilon = 0.0;
};

ConvergenceReport convergence_diagnostic(const std::vector<TermValue>& terms, double epsilon);

nlohmann::json to_json(const Assembly& assembly, const JumpModel& model);
nlohmann::json to_json(const ConvergenceReport& report);

}  // namespace statexp
