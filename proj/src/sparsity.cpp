#include "l1box/sparsity.hpp"

#include "l1box/core.hpp"

#include <boost/multiprecision/cpp_bin_float.hpp>

#include <algorithm>
#include <cmath>
#include <string>
#include <vector>

namespace l1box {
namespace {

// Neumaier-compensated sum in long double.
class CompensatedSum {
 public:
  void add(long double v) {
    const long double t = sum_ + v;
    if (std::fabs(sum_) >= std::fabs(v))
      comp_ += (sum_ - t) + v;
    else
      comp_ += (v - t) + sum_;
    sum_ = t;
  }
  long double value() const { return sum_ + comp_; }

 private:
  long double sum_ = 0.0L;
  long double comp_ = 0.0L;
};

// (eps - k)^n / (k! (n - k)!) evaluated in the log domain.
long double irwin_hall_term(long double eps, std::int64_t n, std::int64_t k) {
  const long double base = eps - static_cast<long double>(k);
  if (base <= 0.0L) return n == 0 ? 1.0L : 0.0L;
  const long double log_mag = static_cast<long double>(n) * std::log(base) -
                              std::lgamma(static_cast<long double>(k + 1)) -
                              std::lgamma(static_cast<long double>(n - k + 1));
  return std::exp(log_mag);
}

// Direct alternating sum, valid for eps < n.
long double irwin_hall_direct(long double eps, std::int64_t n) {
  CompensatedSum acc;
  const auto top = static_cast<std::int64_t>(std::floor(eps));
  for (std::int64_t k = 0; k <= std::min(top, n); ++k) {
    const long double term = irwin_hall_term(eps, n, k);
    acc.add((k % 2 == 0) ? term : -term);
  }
  return acc.value();
}

}  // namespace

double irwin_hall_cdf(double eps, std::int64_t n) {
  if (n < 0) throw ParameterError("irwin_hall_cdf: n must be >= 0");
  if (eps < 0.0) return 0.0;
  if (n == 0 || eps >= static_cast<double>(n)) return 1.0;
  const long double half = static_cast<long double>(n) / 2.0L;
  long double p;
  if (static_cast<long double>(eps) > half)
    p = 1.0L - irwin_hall_direct(static_cast<long double>(n) - eps, n);
  else
    p = irwin_hall_direct(eps, n);
  return static_cast<double>(std::clamp(p, 0.0L, 1.0L));
}

double expected_sparsity_closed_form(double eps, std::int64_t d) {
  if (d < 1 || !(eps > 0.0) || eps > static_cast<double>(d - 1) / 2.0)
    throw ParameterError("expected_sparsity_closed_form: need 0 < eps <= (d-1)/2, got eps=" +
                         std::to_string(eps) + ", d=" + std::to_string(d));
  // Near m = 2 eps the alternating terms exceed the result by ~11 orders of
  // magnitude, beyond long double, so the sum runs in 50 decimal digits.
  // term[k] = (eps - k)^n / (k! (n - k)!) is advanced from n to n + 1 by the
  // factor (eps - k) / (n + 1 - k).
  using Wide = boost::multiprecision::cpp_bin_float_50;
  const auto floor_eps = static_cast<std::int64_t>(std::floor(eps));
  const Wide e(eps);
  std::vector<Wide> term(static_cast<std::size_t>(floor_eps) + 1);
  std::int64_t n = floor_eps + 1;
  for (std::int64_t k = 0; k <= floor_eps; ++k) {
    Wide t = boost::multiprecision::pow(e - k, static_cast<int>(n));
    for (std::int64_t j = 2; j <= k; ++j) t /= j;
    for (std::int64_t j = 2; j <= n - k; ++j) t /= j;
    term[static_cast<std::size_t>(k)] = t;
  }
  Wide total = std::floor(eps + 1.0);
  for (std::int64_t m = floor_eps + 2; m <= d; ++m, ++n) {
    for (std::int64_t k = 0; k <= floor_eps; ++k) {
      const Wide& t = term[static_cast<std::size_t>(k)];
      total += (k % 2 == 0) ? t : Wide(-t);
    }
    for (std::int64_t k = 0; k <= floor_eps; ++k) term[static_cast<std::size_t>(k)] *= (e - k) / (n + 1 - k);
  }
  return total.convert_to<double>();
}

double expected_sparsity_irwin_hall(double eps, std::int64_t d) {
  if (d < 1) throw ParameterError("expected_sparsity_irwin_hall: d must be >= 1");
  CompensatedSum total;
  for (std::int64_t m = 1; m <= d; ++m) total.add(irwin_hall_cdf(eps, m - 1));
  return static_cast<double>(total.value());
}

double expected_sparsity_lower_bound(double eps) {
  return (std::floor(3.0 * eps) + 1.0) / 2.0;
}

}  // namespace l1box
