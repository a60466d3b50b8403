#ifndef L1BOX_GEOMETRY_HPP
#define L1BOX_GEOMETRY_HPP

// Projections onto S = B1(x, eps) ∩ [0,1]^d and the box-aware steepest
// ascent direction. Everything here is header-only and templated on the
// scalar type of the Eigen expressions passed in.

#include "l1box/core.hpp"

#include <algorithm>
#include <limits>
#include <numeric>
#include <utility>
#include <vector>

namespace l1box {

/// Componentwise clamp to [0, 1].
template <typename Derived>
Vec<typename Derived::Scalar> clip_box(const Eigen::MatrixBase<Derived>& u) {
  using Scalar = typename Derived::Scalar;
  return u.cwiseMax(Scalar(0)).cwiseMin(Scalar(1));
}

namespace detail {

// Shrinks z towards x until the computed ||z - x||_1 is at most eps,
// re-clamping to the box. Only ever triggers on floating-point overshoot of
// a few ulps; the rescaled norm can itself round up, hence the loop.
template <typename Scalar>
void enforce_l1_budget(Vec<Scalar>& z, const Vec<Scalar>& x, Scalar eps, bool box) {
  const Scalar norm = (z - x).template lpNorm<1>();
  if (norm <= eps) return;
  const Vec<Scalar> step = z - x;
  Scalar t = eps / norm;
  for (Scalar shrink = std::numeric_limits<Scalar>::epsilon();; shrink *= Scalar(2)) {
    z = x + t * step;
    if (box) z = z.cwiseMax(Scalar(0)).cwiseMin(Scalar(1));
    if ((z - x).template lpNorm<1>() <= eps) return;
    t *= Scalar(1) - shrink;
  }
}

// Strict weak order on indices: larger magnitude first, lower index on ties.
template <typename Scalar>
struct ByMagnitudeDesc {
  const Scalar* values;
  bool operator()(Eigen::Index a, Eigen::Index b) const {
    const Scalar fa = std::abs(values[a]), fb = std::abs(values[b]);
    return fa > fb || (fa == fb && a < b);
  }
};

template <typename Scalar>
std::vector<Eigen::Index> order_by_magnitude(const Vec<Scalar>& w) {
  std::vector<Eigen::Index> idx(static_cast<std::size_t>(w.size()));
  std::iota(idx.begin(), idx.end(), Eigen::Index{0});
  std::sort(idx.begin(), idx.end(), ByMagnitudeDesc<Scalar>{w.data()});
  return idx;
}

/// Box-aware upper bound gamma_i on |z_i - x_i| along sign(u_i - x_i).
template <typename Scalar>
Scalar box_room(Scalar x, Scalar direction_sign) {
  return std::max(-x * direction_sign, (Scalar(1) - x) * direction_sign);
}

/// Inputs with more breakpoints than this are bracketed before the sweep.
inline constexpr std::size_t kSweepBreakpoints = 4096;

/// Dual variable of the l1 constraint for the projection onto S: the root of
/// the decreasing piecewise-linear budget f(lambda) = sum_i clamp(dist_i -
/// lambda, 0, room_i) at eps, with breakpoints dist_i - room_i and dist_i.
///
/// Large inputs are first bracketed in linear time by pivots taken from a
/// strided sample of the breakpoints; coordinates with no breakpoint inside
/// the bracket are folded into a constant and a slope. The remaining
/// breakpoints are sorted and swept in increasing lambda.
template <typename Scalar>
Scalar box_l1_lambda(const Vec<Scalar>& dist, const Vec<Scalar>& room, Scalar eps) {
  const Eigen::Index d = dist.size();
  Scalar budget = 0;
  for (Eigen::Index i = 0; i < d; ++i) budget += std::min(dist[i], room[i]);
  if (budget <= eps) return Scalar(0);

  struct Coord {
    Scalar dist, room;
  };
  std::vector<Coord> open;
  open.reserve(static_cast<std::size_t>(d));
  for (Eigen::Index i = 0; i < d; ++i)
    if (room[i] > Scalar(0) && dist[i] > Scalar(0)) open.push_back({dist[i], room[i]});

  Scalar lo = 0, hi = std::numeric_limits<Scalar>::infinity();
  Scalar folded_value = 0;
  Eigen::Index folded_slope = 0;
  auto inside = [&](Scalar t) { return t > lo && t < hi; };
  if (2 * open.size() > kSweepBreakpoints) {
    std::vector<Scalar> sample;
    while (2 * open.size() > kSweepBreakpoints) {
      // Every open coordinate has a breakpoint strictly inside (lo, hi), so
      // the pivot is too and each round shrinks the bracket.
      sample.clear();
      const std::size_t stride = std::max<std::size_t>(1, open.size() / 512);
      for (std::size_t j = 0; j < open.size(); j += stride) {
        const Coord& c = open[j];
        if (inside(c.dist - c.room)) sample.push_back(c.dist - c.room);
        if (inside(c.dist)) sample.push_back(c.dist);
      }
      const auto mid = sample.begin() + static_cast<std::ptrdiff_t>(sample.size() / 2);
      std::nth_element(sample.begin(), mid, sample.end());
      const Scalar pivot = *mid;
      Scalar value = folded_value - static_cast<Scalar>(folded_slope) * pivot;
      for (const Coord& c : open) value += std::clamp(c.dist - pivot, Scalar(0), c.room);
      (value > eps ? lo : hi) = pivot;

      std::size_t keep = 0;
      for (const Coord& c : open) {
        const Scalar enter = c.dist - c.room;
        if (inside(enter) || inside(c.dist)) {
          open[keep++] = c;
        } else if (c.dist <= lo) {
          // zero on the whole bracket
        } else if (enter >= hi) {
          folded_value += c.room;
        } else {
          folded_value += c.dist;
          ++folded_slope;
        }
      }
      open.resize(keep);
    }
    budget = folded_value - static_cast<Scalar>(folded_slope) * lo;
    for (const Coord& c : open) budget += std::clamp(c.dist - lo, Scalar(0), c.room);
  }

  // Ties between breakpoints only create zero-length segments, so their
  // order does not affect the result.
  struct Breakpoint {
    Scalar at;
    int slope_change;
  };
  std::vector<Breakpoint> breaks;
  breaks.reserve(2 * open.size());
  Eigen::Index slope = folded_slope;
  for (const Coord& c : open) {
    const Scalar enter = c.dist - c.room;
    if (enter > lo)
      breaks.push_back({enter, +1});
    else
      ++slope;
    breaks.push_back({c.dist, -1});
  }
  std::sort(breaks.begin(), breaks.end(), [](const Breakpoint& a, const Breakpoint& b) {
    return a.at < b.at || (a.at == b.at && a.slope_change > b.slope_change);
  });

  Scalar lambda_prev = lo;
  for (const auto& bp : breaks) {
    const Scalar next_budget = budget - static_cast<Scalar>(slope) * (bp.at - lambda_prev);
    if (next_budget <= eps && slope > 0)
      return lambda_prev + (budget - eps) / static_cast<Scalar>(slope);
    budget = next_budget;
    lambda_prev = bp.at;
    slope += bp.slope_change;
  }
  // Only coordinates folded as active remain beyond the last breakpoint.
  return slope > 0 ? lambda_prev + (budget - eps) / static_cast<Scalar>(slope) : lambda_prev;
}

template <typename Scalar>
Vec<Scalar> project_box_l1_with_offset(const Vec<Scalar>& u, const BasicThreatModel<Scalar>& tm,
                                       Scalar lambda_offset, Scalar* lambda_out) {
  const Vec<Scalar>& x = tm.anchor();
  require_same_size(u, x.size(), "project_box_l1");
  const Eigen::Index d = x.size();
  const Scalar eps = tm.eps();

  Vec<Scalar> dist(d), room(d), dir(d);
  for (Eigen::Index i = 0; i < d; ++i) {
    dir[i] = sign(u[i] - x[i]);
    dist[i] = std::abs(u[i] - x[i]);
    room[i] = box_room(x[i], dir[i]);
  }

  Scalar lambda = eps > Scalar(0) ? box_l1_lambda(dist, room, eps)
                                  : dist.maxCoeff();  // eps = 0 pins every coordinate
  lambda += lambda_offset;
  if (lambda < Scalar(0)) lambda = Scalar(0);
  if (lambda_out) *lambda_out = lambda;

  // Case table of the KKT solution; the saturated cases are written
  // literally so that feasible inputs and box faces are reproduced exactly.
  Vec<Scalar> z(d);
  for (Eigen::Index i = 0; i < d; ++i) {
    const Scalar shrunk = dist[i] - lambda;
    if (dir[i] == Scalar(0) || shrunk <= Scalar(0)) {
      z[i] = x[i];
    } else if (shrunk >= room[i]) {
      z[i] = dir[i] > Scalar(0) ? Scalar(1) : Scalar(0);
    } else if (lambda == Scalar(0)) {
      z[i] = u[i];
    } else {
      z[i] = x[i] + dir[i] * shrunk;
    }
  }
  detail::enforce_l1_budget(z, x, eps, true);
  return z;
}

}  // namespace detail

/// Euclidean projection onto the l1 ball B1(x, eps), O(d log d).
/// Points already inside the ball are returned unchanged.
template <typename DerivedU, typename DerivedX>
Vec<typename DerivedU::Scalar> project_l1_ball(const Eigen::MatrixBase<DerivedU>& u,
                                               const Eigen::MatrixBase<DerivedX>& x,
                                               typename DerivedU::Scalar eps) {
  using Scalar = typename DerivedU::Scalar;
  require_same_size(u, x.size(), "project_l1_ball");
  if (!(eps >= Scalar(0))) throw ParameterError("project_l1_ball: eps must be >= 0");
  const Vec<Scalar> anchor = x;
  const Vec<Scalar> v = u - x;
  if (v.template lpNorm<1>() <= eps) return u;
  if (eps == Scalar(0)) return anchor;

  std::vector<Scalar> mag(static_cast<std::size_t>(v.size()));
  for (Eigen::Index i = 0; i < v.size(); ++i) mag[static_cast<std::size_t>(i)] = std::abs(v[i]);
  std::sort(mag.begin(), mag.end(), std::greater<Scalar>());

  Scalar cumulative = 0, theta = 0;
  for (std::size_t j = 0; j < mag.size(); ++j) {
    cumulative += mag[j];
    const Scalar candidate = (cumulative - eps) / static_cast<Scalar>(j + 1);
    if (mag[j] - candidate > Scalar(0)) theta = candidate;
    else break;
  }

  Vec<Scalar> z(v.size());
  for (Eigen::Index i = 0; i < v.size(); ++i) {
    const Scalar shrunk = std::abs(v[i]) - theta;
    z[i] = shrunk > Scalar(0) ? anchor[i] + sign(v[i]) * shrunk : anchor[i];
  }
  detail::enforce_l1_budget(z, anchor, eps, false);
  return z;
}

/// Exact Euclidean projection onto B1(x, eps) ∩ [0,1]^d in O(d log d).
template <typename Derived>
Vec<typename Derived::Scalar> project_box_l1(
    const Eigen::MatrixBase<Derived>& u,
    const BasicThreatModel<typename Derived::Scalar>& tm) {
  using Scalar = typename Derived::Scalar;
  return detail::project_box_l1_with_offset<Scalar>(u, tm, Scalar(0), nullptr);
}

/// The optimal dual variable of the l1 constraint (0 when the budget is slack).
template <typename Derived>
typename Derived::Scalar box_l1_dual(const Eigen::MatrixBase<Derived>& u,
                                     const BasicThreatModel<typename Derived::Scalar>& tm) {
  using Scalar = typename Derived::Scalar;
  Scalar lambda = 0;
  detail::project_box_l1_with_offset<Scalar>(u, tm, Scalar(0), &lambda);
  return lambda;
}

/// Clip-after-l1-projection. Always lands in S, but generally strictly inside
/// the l1 sphere; kept for ablations against project_box_l1.
template <typename Derived>
Vec<typename Derived::Scalar> approx_project(
    const Eigen::MatrixBase<Derived>& u,
    const BasicThreatModel<typename Derived::Scalar>& tm) {
  require_same_size(u, tm.dim(), "approx_project");
  return clip_box(project_l1_ball(u, tm.anchor(), tm.eps()));
}

template <typename Scalar>
struct BasicSteepestStep {
  Vec<Scalar> delta;
  /// Number of touched coordinates (||delta||_0); 0 when w = 0.
  Eigen::Index k = 0;
  Scalar inner_product = 0;
  bool degenerate = false;
};

using SteepestStep = BasicSteepestStep<double>;

/// Maximizer of <w, delta> over {delta : ||delta||_1 <= eps, x + delta ∈ [0,1]^d}.
///
/// Coordinates are filled greedily by decreasing |w_i| up to their box room
/// z_i until the l1 budget is exhausted; the last touched coordinate receives
/// the remainder. Ties in |w| go to the lower index.
template <typename Derived>
BasicSteepestStep<typename Derived::Scalar> steepest_descent_direction(
    const Eigen::MatrixBase<Derived>& w, const BasicThreatModel<typename Derived::Scalar>& tm) {
  using Scalar = typename Derived::Scalar;
  const Vec<Scalar>& x = tm.anchor();
  require_same_size(w, x.size(), "steepest_descent_direction");
  const Vec<Scalar> g = w;

  BasicSteepestStep<Scalar> step;
  step.delta = Vec<Scalar>::Zero(x.size());
  if ((g.array() == Scalar(0)).all()) {
    step.degenerate = true;
    return step;
  }

  const auto order = detail::order_by_magnitude(g);
  Scalar used = 0;
  const Scalar eps = tm.eps();
  for (Eigen::Index i : order) {
    const Scalar s = sign(g[i]);
    const Scalar room = std::max((Scalar(1) - x[i]) * s, -x[i] * s);
    if (room <= Scalar(0)) continue;
    if (used + room >= eps) {
      const Scalar rest = eps - used;
      if (rest > Scalar(0)) {
        step.delta[i] = rest * s;
        ++step.k;
      }
      used = eps;
      break;
    }
    step.delta[i] = room * s;
    used += room;
    ++step.k;
  }
  step.inner_product = g.dot(step.delta);
  return step;
}

/// Unit-l1 sign step supported on the t largest |g_i| (ties to lower index).
/// Returns the zero vector when every selected g_i is zero.
template <typename Derived>
Vec<typename Derived::Scalar> sparse_sign_step(const Eigen::MatrixBase<Derived>& g, Eigen::Index t) {
  using Scalar = typename Derived::Scalar;
  const Eigen::Index d = g.size();
  if (t < 1 || t > d)
    throw ParameterError("sparse_sign_step: t must lie in [1, d], got " + std::to_string(t));
  const Vec<Scalar> grad = g;
  std::vector<Eigen::Index> idx(static_cast<std::size_t>(d));
  std::iota(idx.begin(), idx.end(), Eigen::Index{0});
  detail::ByMagnitudeDesc<Scalar> cmp{grad.data()};
  if (t < d) std::nth_element(idx.begin(), idx.begin() + (t - 1), idx.end(), cmp);

  Vec<Scalar> h = Vec<Scalar>::Zero(d);
  Eigen::Index support = 0;
  for (Eigen::Index j = 0; j < t; ++j) {
    const Eigen::Index i = idx[static_cast<std::size_t>(j)];
    h[i] = sign(grad[i]);
    if (h[i] != Scalar(0)) ++support;
  }
  if (support == 0) return h;
  return h / static_cast<Scalar>(support);
}

}  // namespace l1box

#endif  // L1BOX_GEOMETRY_HPP
