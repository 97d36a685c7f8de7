#include "dblogit/optim.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

namespace dblogit {

void PenalizedProblem::validate() const {
  if (design.rows() != response.size())
    fail("PenalizedProblem: design rows and response length differ");
  if (weights.size() != 0 && weights.size() != n())
    fail("PenalizedProblem: bad weights length");
  if (offset.size() != 0 && offset.size() != n())
    fail("PenalizedProblem: bad offset length");
  if (weights.size() != 0 && ((weights.array() < 0.0).any() || !weights.allFinite()))
    fail("PenalizedProblem: weights must be finite and nonnegative");
  if (!(lambda >= 0.0)) fail("PenalizedProblem: lambda must be >= 0");
  if (!penalty_mask.empty() &&
      static_cast<Eigen::Index>(penalty_mask.size()) != p())
    fail("PenalizedProblem: bad penalty_mask length");
  if (loss == LossKind::kLogistic || loss == LossKind::kCalibrationExponential) {
    if (((response.array() != 0.0) && (response.array() != 1.0)).any())
      fail("PenalizedProblem: this loss requires a binary response");
  }
}

namespace {

struct LossEval {
  double value = 0.0;           // mean per-sample loss
  Eigen::ArrayXd d1, d2;        // derivatives of the per-sample loss in u
  int cap_events = 0;
  bool finite = true;
};

// Per-sample losses at linear predictor u (offset handled inside).
// The calibration exponential is extended linearly beyond the exponent
// guard so gradients keep pointing back into the safe region.
void eval_loss(const PenalizedProblem& prob, const Eigen::VectorXd& u,
               const Eigen::VectorXd& w, const Eigen::VectorXd& off,
               LossEval& out, bool need_derivs) {
  const Eigen::Index n = prob.n();
  const double inv_n = 1.0 / static_cast<double>(n);
  if (need_derivs && out.d1.size() != n) {
    out.d1.resize(n);
    out.d2.resize(n);
  }
  double total = 0.0;
  out.cap_events = 0;
  const auto& resp = prob.response;

  switch (prob.loss) {
    case LossKind::kLogistic: {
      for (Eigen::Index i = 0; i < n; ++i) {
        const double eta = u[i] + off[i];
        total += w[i] * (log1pexp(eta) - resp[i] * eta);
        if (need_derivs) {
          const double pr = expit(eta);
          out.d1[i] = w[i] * (pr - resp[i]);
          out.d2[i] = w[i] * pr * (1.0 - pr);
        }
      }
      break;
    }
    case LossKind::kWeightedLinkIntegral: {
      const bool ident = prob.link == Link::kIdentity;
      for (Eigen::Index i = 0; i < n; ++i) {
        const double eta = u[i] + off[i];
        if (ident) {
          total += w[i] * (0.5 * eta * eta - resp[i] * eta);
          if (need_derivs) {
            out.d1[i] = w[i] * (eta - resp[i]);
            out.d2[i] = w[i];
          }
        } else {
          total += w[i] * (log1pexp(eta) - resp[i] * eta);
          if (need_derivs) {
            const double pr = expit(eta);
            out.d1[i] = w[i] * (pr - resp[i]);
            out.d2[i] = w[i] * pr * (1.0 - pr);
          }
        }
      }
      break;
    }
    case LossKind::kCalibrationExponential: {
      const double guard_e = std::exp(kExponentGuard);
      for (Eigen::Index i = 0; i < n; ++i) {
        const double kappa = -off[i] - u[i];
        double e, de;  // e^kappa and its derivative in kappa
        if (kappa > kExponentGuard) {
          ++out.cap_events;
          e = guard_e * (1.0 + (kappa - kExponentGuard));
          de = guard_e;
        } else {
          e = std::exp(kappa);
          de = e;
        }
        total += w[i] * (resp[i] * e + (1.0 - resp[i]) * (off[i] + u[i]));
        if (need_derivs) {
          out.d1[i] = w[i] * (-resp[i] * de + (1.0 - resp[i]));
          out.d2[i] = w[i] * resp[i] * (kappa > kExponentGuard ? 0.0 : e);
        }
      }
      break;
    }
    case LossKind::kSquared: {
      for (Eigen::Index i = 0; i < n; ++i) {
        const double r = resp[i] - off[i] - u[i];
        total += 0.5 * w[i] * r * r;
        if (need_derivs) {
          out.d1[i] = -w[i] * r;
          out.d2[i] = w[i];
        }
      }
      break;
    }
  }
  out.value = total * inv_n;
  out.finite = std::isfinite(out.value) &&
               (!need_derivs || (out.d1.isFinite().all() && out.d2.isFinite().all()));
}

double soft_threshold(double z, double lambda) {
  if (z > lambda) return z - lambda;
  if (z < -lambda) return z + lambda;
  return 0.0;
}

double penalty_value(const PenalizedProblem& prob, const Eigen::VectorXd& coef) {
  double s = 0.0;
  for (Eigen::Index j = 0; j < prob.p(); ++j)
    if (prob.penalized(j)) s += std::abs(coef[j]);
  return prob.lambda * s;
}

double kkt_residual_of(const PenalizedProblem& prob, const Eigen::VectorXd& grad,
                       const Eigen::VectorXd& coef) {
  double worst = 0.0;
  for (Eigen::Index j = 0; j < prob.p(); ++j) {
    double v;
    if (!prob.penalized(j)) {
      v = std::abs(grad[j]);
    } else if (coef[j] != 0.0) {
      v = std::abs(grad[j] + prob.lambda * (coef[j] > 0.0 ? 1.0 : -1.0));
    } else {
      v = std::max(std::abs(grad[j]) - prob.lambda, 0.0);
    }
    worst = std::max(worst, v);
  }
  return worst;
}

}  // namespace

double mean_loss(const PenalizedProblem& prob, const Eigen::VectorXd& coef) {
  const Eigen::VectorXd w =
      prob.weights.size() ? prob.weights : Eigen::VectorXd::Ones(prob.n());
  const Eigen::VectorXd off =
      prob.offset.size() ? prob.offset : Eigen::VectorXd::Zero(prob.n());
  const Eigen::VectorXd u = prob.design * coef;
  LossEval ev;
  eval_loss(prob, u, w, off, ev, /*need_derivs=*/false);
  return ev.value;
}

Eigen::VectorXd loss_gradient(const PenalizedProblem& prob, const Eigen::VectorXd& coef) {
  const Eigen::VectorXd w =
      prob.weights.size() ? prob.weights : Eigen::VectorXd::Ones(prob.n());
  const Eigen::VectorXd off =
      prob.offset.size() ? prob.offset : Eigen::VectorXd::Zero(prob.n());
  const Eigen::VectorXd u = prob.design * coef;
  LossEval ev;
  eval_loss(prob, u, w, off, ev, /*need_derivs=*/true);
  return prob.design.transpose() * ev.d1.matrix() / static_cast<double>(prob.n());
}

Solution solve_penalized(const PenalizedProblem& prob, const SolveOptions& opts) {
  prob.validate();
  if (!(opts.tol > 0.0)) fail("solve_penalized: tol must be > 0");
  const Eigen::Index n = prob.n();
  const Eigen::Index p = prob.p();
  const double inv_n = 1.0 / static_cast<double>(n);

  const Eigen::VectorXd w =
      prob.weights.size() ? prob.weights : Eigen::VectorXd::Ones(n);
  const Eigen::VectorXd off =
      prob.offset.size() ? prob.offset : Eigen::VectorXd::Zero(n);

  Solution sol;
  sol.coef = opts.warm_start.size() ? opts.warm_start : Eigen::VectorXd::Zero(p);
  if (sol.coef.size() != p) fail("solve_penalized: bad warm_start length");

  Eigen::VectorXd u = sol.coef.isZero(0) ? Eigen::VectorXd::Zero(n)
                                         : Eigen::VectorXd(prob.design * sol.coef);
  LossEval ev;
  eval_loss(prob, u, w, off, ev, /*need_derivs=*/true);
  if (!ev.finite) fail("solve_penalized: non-finite objective at iteration 0");
  double objective = ev.value + penalty_value(prob, sol.coef);
  if (opts.record_trace) sol.objective_trace.push_back(objective);

  // Active set: unpenalized and currently nonzero coordinates plus KKT
  // violators from the full-gradient check after each sweep. The first
  // sweep visits every coordinate.
  std::vector<Eigen::Index> active;
  active.reserve(static_cast<std::size_t>(p));
  for (Eigen::Index j = 0; j < p; ++j) active.push_back(j);

  constexpr double kCurvatureFloor = 1e-12;
  constexpr int kMaxDampings = 8;

  Eigen::VectorXd coef_snap, u_snap;
  int iter = 0;
  for (; iter < opts.max_iter; ++iter) {
    coef_snap = sol.coef;
    u_snap = u;
    const double obj_before = objective;

    double damp = 1.0;
    int attempt = 0;
    for (;;) {
      for (const Eigen::Index j : active) {
        const auto col = prob.design.col(j);
        const double g = col.dot(ev.d1.matrix()) * inv_n;
        const double h = std::max(
            (col.array().square() * ev.d2).sum() * inv_n, kCurvatureFloor);
        double target;
        if (prob.penalized(j)) {
          target = soft_threshold(sol.coef[j] * h - g, prob.lambda) / h;
        } else {
          target = sol.coef[j] - g / h;
        }
        const double delta = damp * (target - sol.coef[j]);
        if (delta == 0.0) continue;
        sol.coef[j] += delta;
        u += delta * col;
        eval_loss(prob, u, w, off, ev, /*need_derivs=*/true);
        if (!ev.finite)
          fail("solve_penalized: non-finite objective at iteration " +
               std::to_string(iter + 1) + ", coordinate " + std::to_string(j));
      }
      objective = ev.value + penalty_value(prob, sol.coef);
      if (objective <= obj_before + 1e-12 * (1.0 + std::abs(obj_before))) break;
      if (++attempt > kMaxDampings)
        fail("solve_penalized: sweep failed to decrease the objective at iteration " +
             std::to_string(iter + 1));
      // Undo the sweep and retry with damped steps.
      sol.coef = coef_snap;
      u = u_snap;
      eval_loss(prob, u, w, off, ev, /*need_derivs=*/true);
      damp *= 0.5;
    }
    if (opts.record_trace) sol.objective_trace.push_back(objective);

    const Eigen::VectorXd grad =
        prob.design.transpose() * ev.d1.matrix() * inv_n;
    sol.kkt_residual = kkt_residual_of(prob, grad, sol.coef);
    if (sol.kkt_residual <= opts.tol) {
      sol.converged = true;
      ++iter;
      break;
    }

    // Refresh the active set: keep unpenalized and nonzero coordinates and
    // pull in any zero coordinate violating its KKT bound.
    active.clear();
    for (Eigen::Index j = 0; j < p; ++j) {
      if (!prob.penalized(j) || sol.coef[j] != 0.0 ||
          std::abs(grad[j]) > prob.lambda + opts.tol) {
        active.push_back(j);
      }
    }
    if (active.empty())
      for (Eigen::Index j = 0; j < p; ++j) active.push_back(j);
  }

  sol.iterations = iter;
  sol.objective = objective;
  sol.exponent_cap_events = ev.cap_events;
  return sol;
}

std::vector<double> default_lambda_grid(Eigen::Index n, Eigen::Index p_penalized,
                                        double lo_scale, double hi_scale, int points) {
  if (points < 1) fail("default_lambda_grid: need at least one point");
  if (!(lo_scale > 0.0 && hi_scale >= lo_scale))
    fail("default_lambda_grid: scales must be positive and ordered");
  const double base =
      std::sqrt(std::log(static_cast<double>(p_penalized)) / static_cast<double>(n));
  std::vector<double> grid;
  grid.reserve(static_cast<std::size_t>(points));
  if (points == 1) {
    grid.push_back(hi_scale * base);
    return grid;
  }
  const double ratio = lo_scale / hi_scale;
  for (int t = 0; t < points; ++t)
    grid.push_back(hi_scale * base *
                   std::pow(ratio, static_cast<double>(t) / (points - 1)));
  return grid;
}

namespace {

bool fold_is_degenerate(const PenalizedProblem& prob,
                        const std::vector<Eigen::Index>& rows) {
  double wsum = 0.0;
  bool saw0 = false, saw1 = false;
  for (const Eigen::Index i : rows) {
    wsum += prob.weights.size() ? prob.weights[i] : 1.0;
    if (prob.response[i] == 0.0) saw0 = true;
    if (prob.response[i] == 1.0) saw1 = true;
  }
  if (wsum <= 0.0) return true;
  if (prob.loss == LossKind::kLogistic ||
      prob.loss == LossKind::kCalibrationExponential)
    return !(saw0 && saw1);
  return false;
}

PenalizedProblem subset_problem(const PenalizedProblem& prob,
                                const std::vector<Eigen::Index>& rows) {
  PenalizedProblem sub;
  sub.loss = prob.loss;
  sub.link = prob.link;
  sub.lambda = prob.lambda;
  sub.penalty_mask = prob.penalty_mask;
  const Eigen::Index m = static_cast<Eigen::Index>(rows.size());
  sub.design.resize(m, prob.p());
  sub.response.resize(m);
  if (prob.weights.size()) sub.weights.resize(m);
  if (prob.offset.size()) sub.offset.resize(m);
  for (Eigen::Index r = 0; r < m; ++r) {
    sub.design.row(r) = prob.design.row(rows[r]);
    sub.response[r] = prob.response[rows[r]];
    if (prob.weights.size()) sub.weights[r] = prob.weights[rows[r]];
    if (prob.offset.size()) sub.offset[r] = prob.offset[rows[r]];
  }
  return sub;
}

}  // namespace

CvResult cv_select_lambda(const PenalizedProblem& prob_template,
                          const std::vector<double>& grid,
                          const FoldAssignment& folds,
                          const SolveOptions& opts) {
  if (grid.empty()) fail("cv_select_lambda: empty grid");
  if (!std::is_sorted(grid.begin(), grid.end(), std::greater<double>()))
    fail("cv_select_lambda: grid must be sorted descending");
  if (folds.n() != prob_template.n())
    fail("cv_select_lambda: fold assignment length mismatch");

  const std::size_t g = grid.size();
  std::vector<double> score_sum(g, 0.0);
  int used_folds = 0;
  CvResult out;

  for (int f = 0; f < folds.k; ++f) {
    std::vector<Eigen::Index> train, held;
    for (Eigen::Index i = 0; i < folds.n(); ++i)
      (folds.fold_of[i] == f ? held : train).push_back(i);
    if (train.empty() || held.empty() ||
        fold_is_degenerate(prob_template, train)) {
      ++out.skipped_folds;
      continue;
    }
    PenalizedProblem train_prob = subset_problem(prob_template, train);
    PenalizedProblem held_prob = subset_problem(prob_template, held);

    SolveOptions path_opts = opts;
    for (std::size_t t = 0; t < g; ++t) {
      train_prob.lambda = grid[t];
      const Solution s = solve_penalized(train_prob, path_opts);
      path_opts.warm_start = s.coef;  // warm start down the path
      score_sum[t] += mean_loss(held_prob, s.coef);
    }
    ++used_folds;
  }

  if (used_folds == 0)
    fail("cv_select_lambda: all folds degenerate for this loss");

  out.mean_scores.resize(g);
  std::size_t best = 0;
  for (std::size_t t = 0; t < g; ++t) {
    out.mean_scores[t] = score_sum[t] / used_folds;
    if (out.mean_scores[t] < out.mean_scores[best]) best = t;
  }
  out.lambda = grid[best];
  return out;
}

double solve_scalar_root(const std::function<double(double)>& f, double init,
                         const RootOptions& opts) {
  const double f0 = f(init);
  if (!std::isfinite(f0)) fail("solve_scalar_root: f(init) is not finite");
  if (std::abs(f0) <= opts.tol) return init;

  auto sgn = [](double v) { return v > 0.0 ? 1 : (v < 0.0 ? -1 : 0); };

  double lo = init, hi = init, flo = f0, fhi = f0;
  bool bracketed = false;
  for (double width = 1.0; !bracketed; width *= 2.0) {
    const bool last = width >= opts.max_expand;
    const double wcap = std::min(width, opts.max_expand);
    const double l = init - wcap, h = init + wcap;
    const double fl = f(l), fh = f(h);
    if (sgn(fl) == 0) return l;
    if (sgn(fh) == 0) return h;
    if (sgn(fl) != sgn(f0)) {
      lo = l; flo = fl; hi = init; fhi = f0; bracketed = true;
    } else if (sgn(fh) != sgn(f0)) {
      lo = init; flo = f0; hi = h; fhi = fh; bracketed = true;
    } else if (sgn(fl) != sgn(fh)) {
      lo = l; flo = fl; hi = h; fhi = fh; bracketed = true;
    } else if (last) {
      fail("solve_scalar_root: no sign change within +/-" +
           std::to_string(opts.max_expand) +
           " of init (degenerate estimating equation)");
    }
  }

  double best_x = std::abs(flo) < std::abs(fhi) ? lo : hi;
  double best_f = std::abs(flo) < std::abs(fhi) ? flo : fhi;
  for (int it = 0; it < opts.max_iter; ++it) {
    // Secant candidate when it falls inside the bracket, else bisection.
    double x;
    const double denom = fhi - flo;
    if (denom != 0.0) {
      x = hi - fhi * (hi - lo) / denom;
      const double margin = 0.01 * (hi - lo);
      if (!(x > lo + margin && x < hi - margin)) x = 0.5 * (lo + hi);
    } else {
      x = 0.5 * (lo + hi);
    }
    const double fx = f(x);
    if (!std::isfinite(fx)) fail("solve_scalar_root: f evaluated non-finite");
    if (std::abs(fx) < std::abs(best_f)) {
      best_f = fx;
      best_x = x;
    }
    if (std::abs(fx) <= opts.tol) return x;
    if (sgn(fx) == sgn(flo)) {
      lo = x; flo = fx;
    } else {
      hi = x; fhi = fx;
    }
    if (hi - lo <= 1e-15 * std::max(1.0, std::abs(lo))) break;
  }
  if (std::abs(best_f) <= opts.tol) return best_x;
  fail("solve_scalar_root: tolerance not reached, best |f| = " +
       std::to_string(std::abs(best_f)));
}

}  // namespace dblogit
