#ifndef L1BOX_TESTS_QUADRATIC_HPP
#define L1BOX_TESTS_QUADRATIC_HPP

#include "l1box/apgd.hpp"

namespace l1box::fixtures {

/// L(z) = -||z - peak||_2^2; maximized at peak with value 0.
class NegativeSquaredDistance final : public Objective {
 public:
  explicit NegativeSquaredDistance(Vector peak) : peak_(std::move(peak)) {}
  Eigen::Index dim() const override { return peak_.size(); }
  Evaluation evaluate(const Vector& x, bool with_grad) const override {
    Evaluation ev;
    ev.value = -(x - peak_).squaredNorm();
    if (with_grad) ev.grad = -2.0 * (x - peak_);
    return ev;
  }

 private:
  Vector peak_;
};

}  // namespace l1box::fixtures

#endif  // L1BOX_TESTS_QUADRATIC_HPP
