#include "statexp/moment_spec.hpp"

#include <algorithm>
#include <limits>

#include "statexp/errors.hpp"

namespace statexp {

namespace {

boost::multiprecision::cpp_int factorial(int k) {
  boost::multiprecision::cpp_int r = 1;
  for (int i = 2; i <= k; ++i) r *= i;
  return r;
}

long long narrow(const boost::multiprecision::cpp_int& v) {
  if (v > std::numeric_limits<long long>::max() || v < std::numeric_limits<long long>::min())
    throw NumericalError("rational component does not fit in 64 bits");
  return v.convert_to<long long>();
}

}  // namespace

int MomentSpec::activity_exponent(int j) const {
  return j >= 0 && j < static_cast<int>(exponents.size()) ? exponents[j] : 0;
}

int MomentSpec::total_degree() const {
  int s = 0;
  for (int b : exponents) s += b;
  return s;
}

int MomentSpec::max_activity_order() const {
  for (int j = static_cast<int>(exponents.size()) - 1; j >= 1; --j)
    if (exponents[j] > 0) return j;
  return 0;
}

std::string MomentSpec::label() const {
  std::string out;
  for (std::size_t j = 0; j < exponents.size(); ++j) {
    if (exponents[j] == 0) continue;
    if (!out.empty()) out += ' ';
    out += j == 0 ? "S" : "T" + std::to_string(j);
    out += "^" + std::to_string(exponents[j]);
  }
  return out.empty() ? "1" : out;
}

bool spec_less(const MomentSpec& a, const MomentSpec& b) {
  const std::size_t n = std::max(a.exponents.size(), b.exponents.size());
  for (std::size_t j = 0; j < n; ++j) {
    const int x = a.activity_exponent(static_cast<int>(j));
    const int y = b.activity_exponent(static_cast<int>(j));
    if (x != y) return x < y;
  }
  return a.order < b.order;
}

Rational expansion_coefficient(const std::vector<int>& exponents) {
  int total = 0;
  boost::multiprecision::cpp_int denom = 1;
  for (int b : exponents) {
    total += b;
    denom *= factorial(b);
  }
  boost::multiprecision::cpp_int pow2 = 1;
  pow2 <<= total;
  Rational c(2, 1);
  c /= Rational(pow2) * Rational(denom);
  return total % 2 == 0 ? c : Rational(-c);
}

MomentSpec make_moment_spec(std::vector<int> exponents) {
  if (exponents.empty() || exponents[0] % 2 == 0)
    throw ValidationError("moment spec needs an odd entropy exponent b0");
  int order = 0;
  for (std::size_t j = 0; j < exponents.size(); ++j) {
    if (exponents[j] < 0) throw ValidationError("moment exponents must be nonnegative");
    order += (j == 0 ? 1 : static_cast<int>(j)) * exponents[j];
  }
  MomentSpec spec;
  spec.coefficient = expansion_coefficient(exponents);
  spec.exponents = std::move(exponents);
  spec.order = order;
  return spec;
}

nlohmann::json to_json(const MomentSpec& spec) {
  return {{"m", spec.order},
          {"b", spec.exponents},
          {"coeff_num", numerator_of(spec.coefficient)},
          {"coeff_den", denominator_of(spec.coefficient)}};
}

MomentSpec moment_spec_from_json(const nlohmann::json& j) {
  MomentSpec spec = make_moment_spec(j.at("b").get<std::vector<int>>());
  if (j.contains("m") && j.at("m").get<int>() != spec.order)
    throw ValidationError("moment spec order does not match its exponents");
  return spec;
}

long long numerator_of(const Rational& r) { return narrow(boost::multiprecision::numerator(r)); }

long long denominator_of(const Rational& r) { return narrow(boost::multiprecision::denominator(r)); }

double to_double(const Rational& r) { return r.convert_to<double>(); }

}  // namespace statexp
