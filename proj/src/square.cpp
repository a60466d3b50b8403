#include "l1box/square.hpp"

#include "l1box/geometry.hpp"
#include "l1box/oracles.hpp"

#include <algorithm>
#include <cmath>

namespace l1box {

void ImageShape::validate() const {
  if (h < 1 || c < 1) throw ParameterError("ImageShape: h and c must be >= 1");
}

void SquareConfig::validate() const {
  if (n_queries < 1) throw ParameterError("SquareConfig: n_queries must be >= 1");
  if (!(p_init > 0.0 && p_init <= 1.0)) throw ParameterError("SquareConfig: p_init must lie in (0, 1]");
  if (!(upscale > 0.0) || !std::isfinite(upscale))
    throw ParameterError("SquareConfig: upscale must be finite and > 0");
}

double window_fraction(double p_init, int query_index, int n_queries) {
  static constexpr double kHalvings[] = {0.05, 0.2, 0.5, 0.8};
  double p = p_init;
  for (double f : kHalvings)
    if (query_index >= f * n_queries) p /= 2.0;
  return p;
}

Eigen::Index window_schedule(double p_init, int query_index, int n_queries, Eigen::Index h) {
  const double p = window_fraction(p_init, query_index, n_queries);
  const auto w = static_cast<Eigen::Index>(std::lround(std::sqrt(p * static_cast<double>(h * h))));
  return std::clamp<Eigen::Index>(w, 1, h);
}

Matrix pyramid_eta(Eigen::Index w) {
  if (w < 1) throw ParameterError("pyramid_eta: w must be >= 1");
  Matrix eta(w, w);
  for (Eigen::Index i = 0; i < w; ++i)
    for (Eigen::Index j = 0; j < w; ++j) {
      const Eigen::Index m = std::min({i, j, w - 1 - i, w - 1 - j});
      double v = 0.0;
      for (Eigen::Index k = 0; k <= m; ++k) v += 1.0 / static_cast<double>((k + 1) * (k + 1));
      eta(i, j) = v;
    }
  return eta / eta.sum();
}

std::optional<SquareProposal> square_proposal(const SquareState& state, const Vector& x,
                                              const ImageShape& shape, double eps,
                                              Eigen::Index w, double upscale, Rng& rng) {
  shape.validate();
  require_same_size(x, shape.size(), "square_proposal");
  require_same_size(state.nu, shape.size(), "square_proposal");
  if (w < 1 || w > shape.h) throw ParameterError("square_proposal: window side out of range");

  const Eigen::Index h = shape.h, c = shape.c;
  std::uniform_int_distribution<Eigen::Index> corner(0, h - w);
  const Eigen::Index r1 = corner(rng), s1 = corner(rng), r2 = corner(rng), s2 = corner(rng);
  auto in_w1 = [&](Eigen::Index r, Eigen::Index s) { return r >= r1 && r < r1 + w && s >= s1 && s < s1 + w; };
  auto in_w2 = [&](Eigen::Index r, Eigen::Index s) { return r >= r2 && r < r2 + w && s >= s2 && s < s2 + w; };

  Vector nu = state.nu;
  const double eps_unused = std::max(0.0, eps - nu.lpNorm<1>());
  const Matrix eta = pyramid_eta(w);
  std::bernoulli_distribution coin(0.5);

  for (Eigen::Index ch = 0; ch < c; ++ch) {
    Matrix window(w, w);
    for (Eigen::Index i = 0; i < w; ++i)
      for (Eigen::Index j = 0; j < w; ++j) window(i, j) = nu[shape.index(r1 + i, s1 + j, ch)];
    const double window_mass = window.cwiseAbs().sum();

    double avail = eps_unused / static_cast<double>(c);
    for (Eigen::Index r = 0; r < h; ++r)
      for (Eigen::Index s = 0; s < h; ++s)
        if (in_w1(r, s) || in_w2(r, s)) avail += std::abs(nu[shape.index(r, s, ch)]);

    double rho = coin(rng) ? 1.0 : -1.0;
    Matrix temp;
    double temp_mass = 0.0;
    for (int attempt = 0; attempt < 2; ++attempt, rho = -rho) {
      temp = rho * eta;
      if (window_mass > 0.0) temp += window / window_mass;
      temp_mass = temp.cwiseAbs().sum();
      if (temp_mass > 1e-12) break;
    }
    if (!(temp_mass > 1e-12)) return std::nullopt;

    for (Eigen::Index i = 0; i < w; ++i)
      for (Eigen::Index j = 0; j < w; ++j) nu[shape.index(r2 + i, s2 + j, ch)] = 0.0;
    for (Eigen::Index i = 0; i < w; ++i)
      for (Eigen::Index j = 0; j < w; ++j)
        nu[shape.index(r1 + i, s1 + j, ch)] = temp(i, j) / temp_mass * avail;
  }

  SquareProposal out;
  out.point = project_box_l1(Vector(x + upscale * nu), ThreatModel(x, eps));
  out.delta = out.point - (x + state.nu);
  return out;
}

AttackResult square_attack(const LogitsOracle& model, const Vector& x, const ImageShape& shape,
                           int y, double eps, const SquareConfig& cfg, Rng& rng,
                           const QueryObserver& observer) {
  cfg.validate();
  shape.validate();
  require_same_size(x, shape.size(), "square_attack");
  if (model.input_dim() != x.size()) throw DimensionError("square_attack: model dimension mismatch");
  if (y < 0 || y >= model.num_classes()) throw ParameterError("square_attack: label out of range");
  const ThreatModel tm(x, eps);

  AttackResult result;
  Vector x_cur = x;
  SquareState state;
  state.nu = Vector::Zero(x.size());
  state.loss_cur = margin_loss(model.logits(x), y);
  state.queries_used = 1;
  bool success = state.loss_cur <= 0.0;
  if (observer) observer(0, x_cur, state.loss_cur, true);
  result.loss_trace.push_back(state.loss_cur);
  result.success_trace.push_back(success);

  int skipped = 0;
  while (!success && state.queries_used < cfg.n_queries && skipped <= cfg.n_queries) {
    state.window = window_schedule(cfg.p_init, state.queries_used, cfg.n_queries, shape.h);
    const auto proposal = square_proposal(state, x, shape, eps, state.window, cfg.upscale, rng);
    if (!proposal) {
      ++skipped;
      continue;
    }
    const double margin = margin_loss(model.logits(proposal->point), y);
    const bool accepted = margin < state.loss_cur;
    if (accepted) {
      x_cur = proposal->point;
      state.nu = x_cur - x;
      state.loss_cur = margin;
      success = margin <= 0.0;
    }
    if (observer) observer(state.queries_used, proposal->point, margin, accepted);
    ++state.queries_used;
    result.loss_trace.push_back(state.loss_cur);
    result.success_trace.push_back(success);
  }

  if (!tm.contains(x_cur)) throw InvariantError("square_attack: iterate left the threat set");
  result.x_adv = x_cur;
  result.loss_best = state.loss_cur;
  result.success = success;
  result.iterations_used = state.queries_used;
  result.forward_evals = state.queries_used;
  result.l1_norm = (x_cur - x).lpNorm<1>();
  return result;
}

AttackResult random_search_attack(const LogitsOracle& model, const Vector& x, int y, double eps,
                                  int n_queries, Rng& rng) {
  if (n_queries < 1) throw ParameterError("random_search_attack: n_queries must be >= 1");
  const ThreatModel tm(x, eps);
  AttackResult result;
  result.x_adv = x;
  result.loss_best = margin_loss(model.logits(x), y);
  result.forward_evals = 1;
  result.success = result.loss_best <= 0.0;
  result.loss_trace.push_back(result.loss_best);
  result.success_trace.push_back(result.success);
  while (!result.success && result.forward_evals < n_queries) {
    const Vector z = oracles::sample_feasible(tm, rng);
    const double margin = margin_loss(model.logits(z), y);
    ++result.forward_evals;
    if (margin < result.loss_best) {
      result.loss_best = margin;
      result.x_adv = z;
      result.success = margin <= 0.0;
    }
    result.loss_trace.push_back(result.loss_best);
    result.success_trace.push_back(result.success);
  }
  result.iterations_used = result.forward_evals;
  result.l1_norm = (result.x_adv - x).lpNorm<1>();
  return result;
}

}  // namespace l1box
