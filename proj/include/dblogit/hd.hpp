#pragma once

#include <Eigen/Dense>
#include <cstdint>
#include <string>
#include <vector>

#include "dblogit/dataset.hpp"
#include "dblogit/optim.hpp"
#include "dblogit/score.hpp"

namespace dblogit {

struct HdConfig {
  double lambda_lo_scale = 0.2, lambda_hi_scale = 2.0;  // times sqrt(log p / n)
  int lambda_points = 20;
  int cv_folds = 5;
  Link link = Link::kIdentity;  // m(x) = g(x'alpha)
  std::uint64_t seed = 1;
  int bootstrap_draws = 500;
  double level = 0.95;
  SolveOptions solve;  // tol 1e-7, max_iter 10000
  void validate() const;
};

// Coefficient vectors are length p+1 with the intercept first; the
// intercept is never penalized.
struct HdFit {
  Eigen::VectorXd gamma_tilde, alpha_hat, gamma_hat;
  double beta_init = 0.0;   // A-coefficient of the initial logistic fit
  double beta_tilde = 0.0;
  double beta_hat = 0.0;
  double lambda_gamma_tilde = 0.0, lambda_alpha = 0.0, lambda_gamma_hat = 0.0;
  double kkt_gamma_tilde = 0.0, kkt_alpha = 0.0, kkt_gamma_hat = 0.0;
  double preliminary_equation_residual = 0.0;
  double final_equation_residual = 0.0;
  InferenceResult inference;
  std::uint64_t fold_seed = 0;
  int exponent_cap_events = 0;
  std::vector<std::string> warnings;
};

// Design matrix with a leading intercept column (a copy unless the dataset
// already carries one).
Eigen::MatrixXd design_with_intercept(const Dataset& d);

struct HdStage1 {
  Eigen::VectorXd gamma_tilde;  // intercept + X coefficients
  double beta_init = 0.0;
  double lambda = 0.0;
  double kkt_residual = 0.0;
};

// l1 logistic regression of Y on (A, X); A and the intercept unpenalized.
HdStage1 fit_initial_gamma(const Dataset& d, const HdConfig& cfg,
                           const FoldAssignment& folds);

struct HdStageFit {
  Eigen::VectorXd coef;
  double lambda = 0.0;
  double kkt_residual = 0.0;
  int exponent_cap_events = 0;
};

// Weighted link-integral lasso of A on X with weights (1-Y)*expit(X'gamma_tilde).
HdStageFit fit_alpha(const Dataset& d, const Eigen::VectorXd& gamma_tilde,
                     const HdConfig& cfg, const FoldAssignment& folds);

// Root of the preliminary estimating equation built from gamma_tilde and
// alpha_hat; |equation(root)| <= 1e-8.
double fit_beta_preliminary(const Dataset& d, const Eigen::VectorXd& gamma_tilde,
                            const Eigen::VectorXd& alpha_hat, Link link,
                            double init);

// Calibration regression for gamma with weights expit(X'gamma_tilde)*g'(X'alpha_hat)
// and offset beta_tilde*A.
HdStageFit fit_gamma_calibrated(const Dataset& d, const Eigen::VectorXd& gamma_tilde,
                                const Eigen::VectorXd& alpha_hat, double beta_tilde,
                                const HdConfig& cfg, const FoldAssignment& folds);

HdFit fit_hd(const Dataset& d, const HdConfig& cfg);

}  // namespace dblogit
