#pragma once

#include <cstddef>

#include <boost/multiprecision/cpp_bin_float.hpp>

namespace reachcal::oracle {

using Real = boost::multiprecision::cpp_bin_float_50;

// Hoeffding-Bentkus p-value for exceedance count m of n at level alpha,
// evaluated in 50-digit arithmetic by direct binomial summation.
inline double hb_pvalue(std::size_t m, std::size_t n, double alpha_d) {
  using boost::multiprecision::exp;
  using boost::multiprecision::log;
  using boost::multiprecision::pow;
  const Real alpha(alpha_d);
  const Real r = Real(m) / Real(n);
  const Real a = r < alpha ? r : alpha;
  Real h1 = 0;
  if (a > 0) h1 += a * log(a / alpha);
  if (a < 1) h1 += (1 - a) * log((1 - a) / (1 - alpha));
  const Real hoeffding = exp(-Real(n) * h1);

  Real term = pow(1 - alpha, static_cast<int>(n));
  Real cdf = term;
  const Real ratio = alpha / (1 - alpha);
  for (std::size_t i = 0; i < m && i < n; ++i) {
    term *= Real(n - i) / Real(i + 1) * ratio;
    cdf += term;
  }
  const Real bentkus = exp(Real(1)) * cdf;
  Real p = hoeffding < bentkus ? hoeffding : bentkus;
  if (p > 1) p = 1;
  return static_cast<double>(p);
}

}  // namespace reachcal::oracle
