#ifndef L1BOX_SQUARE_HPP
#define L1BOX_SQUARE_HPP

#include "l1box/apgd.hpp"
#include "l1box/core.hpp"
#include "l1box/models.hpp"

#include <cstdint>
#include <functional>
#include <optional>

namespace l1box {

/// Shape of a square h x h x c image stored flat in HWC order:
/// pixel (r, s) of channel ch sits at index (r * h + s) * c + ch.
struct ImageShape {
  Eigen::Index h = 0;
  Eigen::Index c = 0;

  Eigen::Index size() const { return h * h * c; }
  Eigen::Index index(Eigen::Index r, Eigen::Index s, Eigen::Index ch) const {
    return (r * h + s) * c + ch;
  }
  void validate() const;
};

struct SquareConfig {
  int n_queries = 5000;
  double p_init = 0.8;
  double upscale = 3.0;
  std::uint64_t seed = 0;

  void validate() const;
};

struct SquareState {
  Vector nu;              // current iterate minus the clean point
  double loss_cur = 0.0;  // margin loss at x + nu
  int queries_used = 0;
  Eigen::Index window = 0;
};

/// Fraction of the image covered by the window at a given query: p_init,
/// halved at 5%, 20%, 50% and 80% of the budget.
double window_fraction(double p_init, int query_index, int n_queries);

/// Window side max(1, round(sqrt(p * h * h))), at most h.
Eigen::Index window_schedule(double p_init, int query_index, int n_queries, Eigen::Index h);

/// w x w bump with eta_ij = sum_{k=0}^{m} 1/(k+1)^2, m the distance of (i, j)
/// to the border, scaled to unit l1 mass.
Matrix pyramid_eta(Eigen::Index w);

struct SquareProposal {
  Vector point;  // z, a point of S
  Vector delta;  // z - (x + nu)
};

/// One draw from the sampling distribution. Returns nullopt when the
/// normalized update degenerates for both signs of rho in some channel.
std::optional<SquareProposal> square_proposal(const SquareState& state, const Vector& x,
                                              const ImageShape& shape, double eps,
                                              Eigen::Index w, double upscale, Rng& rng);

/// Called for every queried point: (query index, point, its margin, accepted).
using QueryObserver = std::function<void(int, const Vector&, double, bool)>;

/// Greedy random search on the margin loss starting from nu = 0. A proposal
/// is accepted iff it strictly lowers the margin. Stops on success or once
/// n_queries model evaluations (the initial one included) have been spent.
///
/// loss_best holds the margin at x_adv and loss_trace the accepted margin
/// after each query; iterations_used and forward_evals count queries.
AttackResult square_attack(const LogitsOracle& model, const Vector& x, const ImageShape& shape,
                           int y, double eps, const SquareConfig& cfg, Rng& rng,
                           const QueryObserver& observer = {});

/// Same-budget baseline: query independent sample_feasible points and keep
/// the one with the lowest margin.
AttackResult random_search_attack(const LogitsOracle& model, const Vector& x, int y, double eps,
                                  int n_queries, Rng& rng);

}  // namespace l1box

#endif  // L1BOX_SQUARE_HPP
