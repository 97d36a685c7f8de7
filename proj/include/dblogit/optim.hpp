#pragma once

#include <Eigen/Dense>
#include <functional>
#include <vector>

#include "dblogit/dataset.hpp"

namespace dblogit {

enum class LossKind {
  kLogistic,                // w*{log(1+e^(u+off)) - y*(u+off)}
  kWeightedLinkIntegral,    // w*{-resp*u + G(u)}, G(u) = u^2/2 or log(1+e^u)
  kCalibrationExponential,  // w*{y*e^(-off-u) + (1-y)*(off+u)}
  kSquared                  // w/2*(resp - off - u)^2
};

enum class Link { kIdentity, kExpit };

// Exponent arguments inside e^u are capped at this value; cap events are
// counted on the returned Solution.
inline constexpr double kExponentGuard = 30.0;

struct PenalizedProblem {
  LossKind loss = LossKind::kSquared;
  Link link = Link::kIdentity;  // only used by kWeightedLinkIntegral
  Eigen::MatrixXd design;       // n x p
  Eigen::VectorXd response;     // n
  Eigen::VectorXd weights;      // n; empty means all ones
  Eigen::VectorXd offset;       // n; empty means zeros
  double lambda = 0.0;
  std::vector<bool> penalty_mask;  // per column, false = unpenalized; empty = all penalized

  Eigen::Index n() const { return design.rows(); }
  Eigen::Index p() const { return design.cols(); }
  bool penalized(Eigen::Index j) const {
    return penalty_mask.empty() || penalty_mask[static_cast<std::size_t>(j)];
  }
  void validate() const;
};

struct Solution {
  Eigen::VectorXd coef;
  double objective = 0.0;
  // max over coordinates of the subgradient violation:
  //   penalized, coef_j != 0 : |grad_j + lambda*sign(coef_j)|
  //   penalized, coef_j == 0 : max(|grad_j| - lambda, 0)
  //   unpenalized            : |grad_j|
  double kkt_residual = 0.0;
  int iterations = 0;
  bool converged = false;
  int exponent_cap_events = 0;  // rows at the exponent guard at the solution
  std::vector<double> objective_trace;  // filled when record_trace is set
};

struct SolveOptions {
  double tol = 1e-7;
  int max_iter = 10000;
  Eigen::VectorXd warm_start;  // optional initial coefficients
  bool record_trace = false;
};

// Cyclic coordinate descent with per-coordinate quadratic majorization for
// the non-squared losses; sweeps that fail to decrease the objective are
// redone with damped steps. Throws Error on a non-finite objective.
Solution solve_penalized(const PenalizedProblem& prob, const SolveOptions& opts = {});

// Mean per-sample loss at the given coefficients (no penalty term).
double mean_loss(const PenalizedProblem& prob, const Eigen::VectorXd& coef);

// (1/n) * design^T * dloss/du at the given coefficients.
Eigen::VectorXd loss_gradient(const PenalizedProblem& prob, const Eigen::VectorXd& coef);

struct CvResult {
  double lambda = 0.0;
  int skipped_folds = 0;
  std::vector<double> mean_scores;  // one per grid element, NaN when all folds skipped
};

// Selects the grid element (grid sorted descending) minimizing the mean
// held-out loss; ties break toward larger lambda. A training fold that is
// degenerate for the loss (single response class for the logistic and
// calibration losses, or zero total weight) is skipped with a count; all
// folds degenerate is an error.
CvResult cv_select_lambda(const PenalizedProblem& prob_template,
                          const std::vector<double>& grid,
                          const FoldAssignment& folds,
                          const SolveOptions& opts = {});

// 20 log-spaced values over [lo_scale, hi_scale] * sqrt(log(p)/n), descending.
std::vector<double> default_lambda_grid(Eigen::Index n, Eigen::Index p_penalized,
                                        double lo_scale = 0.2, double hi_scale = 2.0,
                                        int points = 20);

struct RootOptions {
  double tol = 1e-9;
  double max_expand = 50.0;
  int max_iter = 200;
};

// Expands a bracket geometrically around init until a sign change is found
// (endpoints stay within init +/- max_expand), then bisection with a secant
// polish until |f(root)| <= tol. Deterministic. Throws Error when no sign
// change is found within the expansion limit.
double solve_scalar_root(const std::function<double(double)>& f, double init,
                         const RootOptions& opts = {});

}  // namespace dblogit
