#ifndef L1BOX_SPARSITY_HPP
#define L1BOX_SPARSITY_HPP

#include <cstdint>

namespace l1box {

/// P(U_1 + ... + U_n <= eps) for i.i.d. U_i ~ U[0,1], clamped to [0,1].
/// Uses the reflection P(S_n <= eps) = 1 - P(S_n <= n - eps) above the median
/// so the alternating sum is always evaluated on the short side.
double irwin_hall_cdf(double eps, std::int64_t n);

/// Expected l0 norm of the box-aware steepest ascent step for
/// x ~ U([0,1]^d) and a gradient with no zero entries, 0 < eps <= (d-1)/2.
/// Evaluates the closed-form double sum directly in 50-digit floating point.
double expected_sparsity_closed_form(double eps, std::int64_t d);

/// The same expectation written as sum_{m=1}^{d} irwin_hall_cdf(eps, m-1).
double expected_sparsity_irwin_hall(double eps, std::int64_t d);

/// Lower bound (floor(3 eps) + 1) / 2 on the expected sparsity.
double expected_sparsity_lower_bound(double eps);

}  // namespace l1box

#endif  // L1BOX_SPARSITY_HPP
