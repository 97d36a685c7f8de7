#include "dblogit/hd.hpp"

#include <cmath>

namespace dblogit {

void HdConfig::validate() const {
  if (!(lambda_lo_scale > 0.0 && lambda_hi_scale >= lambda_lo_scale))
    fail("HdConfig: lambda grid scales must be positive and ordered");
  if (lambda_points < 1) fail("HdConfig: lambda_points must be >= 1");
  if (cv_folds < 2) fail("HdConfig: cv_folds must be >= 2");
  if (!(level > 0.0 && level < 1.0)) fail("HdConfig: level must be in (0,1)");
}

Eigen::MatrixXd design_with_intercept(const Dataset& d) {
  if (d.has_intercept) return d.x;
  Eigen::MatrixXd xd(d.n(), d.p() + 1);
  xd.col(0).setOnes();
  xd.rightCols(d.p()) = d.x;
  return xd;
}

namespace {

double link_value(Link link, double u) {
  return link == Link::kIdentity ? u : expit(u);
}

double link_derivative(Link link, double u) {
  if (link == Link::kIdentity) return 1.0;
  const double pr = expit(u);
  return pr * (1.0 - pr);
}

std::string stage_label(const std::string& stage, const std::string& what) {
  return "hd-pipeline[" + stage + "]: " + what;
}

}  // namespace

HdStage1 fit_initial_gamma(const Dataset& d, const HdConfig& cfg,
                           const FoldAssignment& folds) {
  const Eigen::MatrixXd xd = design_with_intercept(d);
  const Eigen::Index p1 = xd.cols();  // intercept + p covariates

  PenalizedProblem prob;
  prob.loss = LossKind::kLogistic;
  prob.design.resize(d.n(), p1 + 1);
  prob.design.col(0) = xd.col(0);  // intercept
  prob.design.col(1) = d.a;
  prob.design.rightCols(p1 - 1) = xd.rightCols(p1 - 1);
  prob.response = d.y;
  prob.penalty_mask.assign(static_cast<std::size_t>(p1 + 1), true);
  prob.penalty_mask[0] = false;  // intercept
  prob.penalty_mask[1] = false;  // exposure

  const auto grid = default_lambda_grid(d.n(), p1 - 1, cfg.lambda_lo_scale,
                                        cfg.lambda_hi_scale, cfg.lambda_points);
  const CvResult cv = cv_select_lambda(prob, grid, folds, cfg.solve);
  prob.lambda = cv.lambda;
  const Solution sol = solve_penalized(prob, cfg.solve);
  if (!sol.converged)
    fail(stage_label("initial-gamma", "solver did not converge"));

  HdStage1 out;
  out.lambda = cv.lambda;
  out.kkt_residual = sol.kkt_residual;
  out.beta_init = sol.coef[1];
  out.gamma_tilde.resize(p1);
  out.gamma_tilde[0] = sol.coef[0];
  out.gamma_tilde.tail(p1 - 1) = sol.coef.tail(p1 - 1);
  return out;
}

HdStageFit fit_alpha(const Dataset& d, const Eigen::VectorXd& gamma_tilde,
                     const HdConfig& cfg, const FoldAssignment& folds) {
  const Eigen::MatrixXd xd = design_with_intercept(d);
  // psi_hat * e^{X gamma_tilde} = expit(X gamma_tilde), numerically stable.
  const Eigen::VectorXd u = xd * gamma_tilde;
  Eigen::VectorXd w(d.n());
  for (Eigen::Index i = 0; i < d.n(); ++i)
    w[i] = (1.0 - d.y[i]) * expit(u[i]);
  if (w.sum() <= 0.0)
    fail(stage_label("alpha", "all weights zero (no controls)"));

  PenalizedProblem prob;
  prob.loss = LossKind::kWeightedLinkIntegral;
  prob.link = cfg.link;
  prob.design = xd;
  prob.response = d.a;
  prob.weights = w;
  prob.penalty_mask.assign(static_cast<std::size_t>(xd.cols()), true);
  prob.penalty_mask[0] = false;

  const auto grid = default_lambda_grid(d.n(), xd.cols() - 1, cfg.lambda_lo_scale,
                                        cfg.lambda_hi_scale, cfg.lambda_points);
  const CvResult cv = cv_select_lambda(prob, grid, folds, cfg.solve);
  prob.lambda = cv.lambda;
  const Solution sol = solve_penalized(prob, cfg.solve);
  if (!sol.converged) fail(stage_label("alpha", "solver did not converge"));

  return {sol.coef, cv.lambda, sol.kkt_residual, sol.exponent_cap_events};
}

namespace {

// Estimating value of the generic beta equation
//   mean_i psi_i * extra_i * {y_i e^{-beta a_i} - (1-y_i) e^{r_i}} * (a_i - m_i)
// with the control part precomputed (it does not depend on beta).
struct BetaEquation {
  Eigen::VectorXd case_coef;  // psi*extra*(a-m) on cases, 0 elsewhere
  double control_part = 0.0;
  const Eigen::VectorXd* a = nullptr;
  double operator()(double beta) const {
    double s = control_part;
    for (Eigen::Index i = 0; i < case_coef.size(); ++i)
      if (case_coef[i] != 0.0) s += case_coef[i] * std::exp(-beta * (*a)[i]);
    return s / static_cast<double>(case_coef.size());
  }
};

}  // namespace

namespace {

BetaEquation preliminary_equation(const Dataset& d, const Eigen::VectorXd& gamma_tilde,
                                  const Eigen::VectorXd& alpha_hat, Link link) {
  const Eigen::MatrixXd xd = design_with_intercept(d);
  const Eigen::VectorXd ug = xd * gamma_tilde;
  const Eigen::VectorXd ua = xd * alpha_hat;

  BetaEquation eq;
  eq.a = &d.a;
  eq.case_coef.setZero(d.n());
  for (Eigen::Index i = 0; i < d.n(); ++i) {
    const double resid_a = d.a[i] - link_value(link, ua[i]);
    if (d.y[i] == 1.0) {
      eq.case_coef[i] = expit(-ug[i]) * resid_a;
    } else {
      // (1-y) psi e^{X gamma_tilde} = expit(X gamma_tilde)
      eq.control_part -= expit(ug[i]) * resid_a;
    }
  }
  return eq;
}

double solve_beta_equation(const BetaEquation& eq, double init,
                           const std::string& stage) {
  RootOptions ropts;
  ropts.tol = 1e-10;
  double root;
  try {
    root = solve_scalar_root(eq, init, ropts);
  } catch (const Error&) {
    // The equation is only monotone with high probability; retry around 0.
    try {
      root = solve_scalar_root(eq, 0.0, ropts);
    } catch (const Error& e) {
      fail(stage_label(stage, e.what()));
    }
  }
  if (std::abs(eq(root)) > 1e-8)
    fail(stage_label(stage, "equation residual above 1e-8"));
  return root;
}

}  // namespace

double fit_beta_preliminary(const Dataset& d, const Eigen::VectorXd& gamma_tilde,
                            const Eigen::VectorXd& alpha_hat, Link link,
                            double init) {
  const BetaEquation eq = preliminary_equation(d, gamma_tilde, alpha_hat, link);
  return solve_beta_equation(eq, init, "beta-preliminary");
}

HdStageFit fit_gamma_calibrated(const Dataset& d, const Eigen::VectorXd& gamma_tilde,
                                const Eigen::VectorXd& alpha_hat, double beta_tilde,
                                const HdConfig& cfg, const FoldAssignment& folds) {
  const Eigen::MatrixXd xd = design_with_intercept(d);
  const Eigen::VectorXd ug = xd * gamma_tilde;
  const Eigen::VectorXd ua = xd * alpha_hat;

  PenalizedProblem prob;
  prob.loss = LossKind::kCalibrationExponential;
  prob.design = xd;
  prob.response = d.y;
  prob.weights.resize(d.n());
  for (Eigen::Index i = 0; i < d.n(); ++i)
    prob.weights[i] = expit(ug[i]) * link_derivative(cfg.link, ua[i]);
  prob.offset = beta_tilde * d.a;
  prob.penalty_mask.assign(static_cast<std::size_t>(xd.cols()), true);
  prob.penalty_mask[0] = false;

  const auto grid = default_lambda_grid(d.n(), xd.cols() - 1, cfg.lambda_lo_scale,
                                        cfg.lambda_hi_scale, cfg.lambda_points);
  const CvResult cv = cv_select_lambda(prob, grid, folds, cfg.solve);
  prob.lambda = cv.lambda;
  const Solution sol = solve_penalized(prob, cfg.solve);
  if (!sol.converged)
    fail(stage_label("gamma-calibrated", "solver did not converge"));
  if (sol.exponent_cap_events * 100 > d.n())
    fail(stage_label("gamma-calibrated",
                     "exponent guard saturated on more than 1% of samples "
                     "(diverging weights)"));

  return {sol.coef, cv.lambda, sol.kkt_residual, sol.exponent_cap_events};
}

HdFit fit_hd(const Dataset& d, const HdConfig& cfg) {
  cfg.validate();
  d.validate();

  HdFit fit;
  fit.fold_seed = mix_seed(cfg.seed, 1);
  const FoldAssignment folds = make_folds(d.n(), cfg.cv_folds, fit.fold_seed);

  const HdStage1 stage1 = fit_initial_gamma(d, cfg, folds);
  fit.gamma_tilde = stage1.gamma_tilde;
  fit.beta_init = stage1.beta_init;
  fit.lambda_gamma_tilde = stage1.lambda;
  fit.kkt_gamma_tilde = stage1.kkt_residual;

  const HdStageFit alpha = fit_alpha(d, fit.gamma_tilde, cfg, folds);
  fit.alpha_hat = alpha.coef;
  fit.lambda_alpha = alpha.lambda;
  fit.kkt_alpha = alpha.kkt_residual;

  {
    const BetaEquation pre_eq =
        preliminary_equation(d, fit.gamma_tilde, fit.alpha_hat, cfg.link);
    fit.beta_tilde = solve_beta_equation(pre_eq, fit.beta_init, "beta-preliminary");
    fit.preliminary_equation_residual = std::abs(pre_eq(fit.beta_tilde));
  }

  const HdStageFit gamma = fit_gamma_calibrated(d, fit.gamma_tilde, fit.alpha_hat,
                                                fit.beta_tilde, cfg, folds);
  fit.gamma_hat = gamma.coef;
  fit.lambda_gamma_hat = gamma.lambda;
  fit.kkt_gamma_hat = gamma.kkt_residual;
  fit.exponent_cap_events = gamma.exponent_cap_events;
  if (gamma.exponent_cap_events > 0)
    fit.warnings.push_back("gamma-calibrated: exponent guard capped " +
                           std::to_string(gamma.exponent_cap_events) + " samples");

  // Final equation with the e^{X(gamma_tilde - gamma_hat)} reweighting.
  const Eigen::MatrixXd xd = design_with_intercept(d);
  const Eigen::VectorXd ug = xd * fit.gamma_tilde;
  const Eigen::VectorXd uh = xd * fit.gamma_hat;
  const Eigen::VectorXd ua = xd * fit.alpha_hat;

  int final_caps = 0;
  Eigen::VectorXd extra_weight(d.n());
  BetaEquation eq;
  eq.a = &d.a;
  eq.case_coef.setZero(d.n());
  for (Eigen::Index i = 0; i < d.n(); ++i) {
    double expo = ug[i] - uh[i];
    if (expo > kExponentGuard) {
      expo = kExponentGuard;
      ++final_caps;
    }
    extra_weight[i] = std::exp(expo);
    const double resid_a = d.a[i] - link_value(cfg.link, ua[i]);
    if (d.y[i] == 1.0) {
      eq.case_coef[i] = expit(-ug[i]) * extra_weight[i] * resid_a;
    } else {
      // psi * e^{X(gt-gh)} * e^{X gh} = expit(X gamma_tilde)
      eq.control_part -= expit(ug[i]) * resid_a;
    }
  }
  if (final_caps > 0) {
    fit.exponent_cap_events += final_caps;
    fit.warnings.push_back("final-equation: exponent guard capped " +
                           std::to_string(final_caps) + " samples");
  }

  fit.beta_hat = solve_beta_equation(eq, fit.beta_tilde, "final");
  fit.final_equation_residual = std::abs(eq(fit.beta_hat));

  NuisanceValues nv;
  nv.r = uh;
  nv.m.resize(d.n());
  for (Eigen::Index i = 0; i < d.n(); ++i) nv.m[i] = link_value(cfg.link, ua[i]);
  nv.psi = (-ug.array()).unaryExpr([](double v) { return expit(v); }).matrix();

  fit.inference = inference_with_bootstrap(d, fit.beta_hat, nv, &extra_weight,
                                           cfg.bootstrap_draws, cfg.level,
                                           mix_seed(cfg.seed, 2));
  return fit;
}

}  // namespace dblogit
