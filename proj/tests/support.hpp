#ifndef L1BOX_TESTS_SUPPORT_HPP
#define L1BOX_TESTS_SUPPORT_HPP

#include "l1box/core.hpp"

#include <random>

namespace l1box::fixtures {

inline Vector uniform_vector(Eigen::Index d, double lo, double hi, Rng& rng) {
  std::uniform_real_distribution<double> dist(lo, hi);
  Vector v(d);
  for (Eigen::Index i = 0; i < d; ++i) v[i] = dist(rng);
  return v;
}

inline Vector normal_vector(Eigen::Index d, Rng& rng) {
  std::normal_distribution<double> dist(0.0, 1.0);
  Vector v(d);
  for (Eigen::Index i = 0; i < d; ++i) v[i] = dist(rng);
  return v;
}

}  // namespace l1box::fixtures

#endif  // L1BOX_TESTS_SUPPORT_HPP
