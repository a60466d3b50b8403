#ifndef L1BOX_CORE_HPP
#define L1BOX_CORE_HPP

#include <Eigen/Dense>

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdint>
#include <exception>
#include <mutex>
#include <random>
#include <stdexcept>
#include <string>
#include <thread>
#include <vector>

namespace l1box {

template <typename Scalar>
using Vec = Eigen::Matrix<Scalar, Eigen::Dynamic, 1>;

using Vector = Eigen::VectorXd;
using Matrix = Eigen::MatrixXd;

/// Deterministic generator used everywhere a seed is accepted.
using Rng = std::mt19937_64;

struct DimensionError : std::invalid_argument {
  using std::invalid_argument::invalid_argument;
};

struct ParameterError : std::invalid_argument {
  using std::invalid_argument::invalid_argument;
};

struct InvariantError : std::logic_error {
  using std::logic_error::logic_error;
};

struct UnsupportedError : std::invalid_argument {
  using std::invalid_argument::invalid_argument;
};

template <typename Scalar>
constexpr Scalar sign(Scalar t) {
  return static_cast<Scalar>((Scalar(0) < t) - (t < Scalar(0)));
}

template <typename Derived>
void require_same_size(const Eigen::MatrixBase<Derived>& a, Eigen::Index n,
                       const char* what) {
  if (a.size() != n)
    throw DimensionError(std::string(what) + ": expected length " +
                         std::to_string(n) + ", got " +
                         std::to_string(a.size()));
}

template <typename Derived>
bool all_finite(const Eigen::MatrixBase<Derived>& a) {
  return a.allFinite();
}

/// The feasible set S = B1(anchor, eps) ∩ [0,1]^d.
///
/// eps = 0 is accepted and denotes the degenerate set {anchor}.
template <typename Scalar>
class BasicThreatModel {
 public:
  BasicThreatModel(Vec<Scalar> anchor, Scalar eps)
      : anchor_(std::move(anchor)), eps_(eps) {
    if (anchor_.size() < 1) throw DimensionError("ThreatModel: empty anchor");
    if (!std::isfinite(static_cast<double>(eps_)) || eps_ < Scalar(0))
      throw ParameterError("ThreatModel: eps must be finite and >= 0");
    if (!anchor_.allFinite() || (anchor_.array() < Scalar(0)).any() ||
        (anchor_.array() > Scalar(1)).any())
      throw InvariantError("ThreatModel: anchor outside [0,1]^d");
  }

  const Vec<Scalar>& anchor() const { return anchor_; }
  Scalar eps() const { return eps_; }
  Eigen::Index dim() const { return anchor_.size(); }

  BasicThreatModel with_eps(Scalar eps) const { return {anchor_, eps}; }

  /// Membership test with an absolute slack on the l1 budget.
  template <typename Derived>
  bool contains(const Eigen::MatrixBase<Derived>& z, Scalar slack = Scalar(1e-9)) const {
    if (z.size() != anchor_.size()) return false;
    if ((z.array() < Scalar(0)).any() || (z.array() > Scalar(1)).any()) return false;
    return (z - anchor_).template lpNorm<1>() <= eps_ + slack;
  }

 private:
  Vec<Scalar> anchor_;
  Scalar eps_;
};

using ThreatModel = BasicThreatModel<double>;

/// splitmix64 finalizer; derives independent per-example / per-stage seeds.
inline std::uint64_t mix_seed(std::uint64_t a, std::uint64_t b = 0, std::uint64_t c = 0) {
  auto mix = [](std::uint64_t z) {
    z += 0x9e3779b97f4a7c15ULL;
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
  };
  return mix(mix(mix(a) ^ b) ^ (c * 0x632be59bd9b4e019ULL));
}

template <typename Derived>
Eigen::Index count_nonzero(const Eigen::MatrixBase<Derived>& v) {
  return (v.array() != typename Derived::Scalar(0)).count();
}

/// Calls body(i) for i in [0, n) on up to `threads` workers. Indices are
/// handed out dynamically; the first exception thrown is rethrown.
template <typename Body>
void parallel_for(std::size_t n, int threads, Body body) {
  const auto workers = static_cast<std::size_t>(std::max(1, threads));
  if (workers == 1 || n <= 1) {
    for (std::size_t i = 0; i < n; ++i) body(i);
    return;
  }
  std::atomic<std::size_t> next{0};
  std::exception_ptr error;
  std::mutex error_mutex;
  auto work = [&] {
    for (std::size_t i = next++; i < n; i = next++) {
      try {
        body(i);
      } catch (...) {
        std::lock_guard<std::mutex> lock(error_mutex);
        if (!error) error = std::current_exception();
        next = n;
      }
    }
  };
  std::vector<std::thread> pool;
  for (std::size_t w = 0; w < std::min(workers, n); ++w) pool.emplace_back(work);
  for (auto& t : pool) t.join();
  if (error) std::rethrow_exception(error);
}

}  // namespace l1box

#endif  // L1BOX_CORE_HPP
