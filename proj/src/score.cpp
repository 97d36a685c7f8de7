#include "dblogit/score.hpp"

#include <algorithm>
#include <cmath>

namespace dblogit {

double score_h(double y, double a, double r, double m, double psi, double beta) {
  if (r > kExponentGuard)
    fail("score_h: pathological nuisance, r(x) = " + std::to_string(r) +
         " exceeds the exponent guard");
  const double core = y * std::exp(-beta * a) - (1.0 - y) * std::exp(r);
  return psi * core * (a - m);
}

double score_h(const Dataset& d, Eigen::Index i, double beta, const NuisanceSet& eta) {
  RowView xi(d.x.row(i));
  return score_h(d.y[i], d.a[i], eta.r(xi), eta.m(xi), eta.psi(xi), beta);
}

NuisanceValues evaluate_nuisances(const Dataset& d, const NuisanceSet& eta) {
  NuisanceValues nv;
  const Eigen::Index n = d.n();
  nv.r.resize(n);
  nv.m.resize(n);
  nv.psi.resize(n);
  for (Eigen::Index i = 0; i < n; ++i) {
    RowView xi(d.x.row(i));
    nv.r[i] = eta.r(xi);
    nv.m[i] = eta.m(xi);
    nv.psi[i] = eta.psi(xi);
  }
  if (!nv.r.allFinite() || !nv.m.allFinite() || !nv.psi.allFinite())
    fail("evaluate_nuisances: non-finite nuisance evaluation");
  return nv;
}

NuisanceValues evaluate_nuisances(const Dataset& d,
                                  const std::vector<NuisanceSet>& per_fold,
                                  const FoldAssignment& folds) {
  if (static_cast<int>(per_fold.size()) != folds.k)
    fail("evaluate_nuisances: need one NuisanceSet per fold");
  if (folds.n() != d.n()) fail("evaluate_nuisances: fold assignment length mismatch");
  NuisanceValues nv;
  const Eigen::Index n = d.n();
  nv.r.resize(n);
  nv.m.resize(n);
  nv.psi.resize(n);
  for (Eigen::Index i = 0; i < n; ++i) {
    const NuisanceSet& eta = per_fold[static_cast<std::size_t>(folds.fold_of[i])];
    RowView xi(d.x.row(i));
    nv.r[i] = eta.r(xi);
    nv.m[i] = eta.m(xi);
    nv.psi[i] = eta.psi(xi);
  }
  if (!nv.r.allFinite() || !nv.m.allFinite() || !nv.psi.allFinite())
    fail("evaluate_nuisances: non-finite nuisance evaluation");
  return nv;
}

Eigen::VectorXd score_vector(const Dataset& d, double beta, const NuisanceValues& nv,
                             const Eigen::VectorXd* extra_a_weight) {
  const Eigen::Index n = d.n();
  if (nv.r.size() != n) fail("score_vector: nuisance values length mismatch");
  if ((nv.r.array() > kExponentGuard).any())
    fail("score_vector: pathological nuisance, r(x) exceeds the exponent guard");
  Eigen::VectorXd h(n);
  for (Eigen::Index i = 0; i < n; ++i) {
    const double core =
        d.y[i] * std::exp(-beta * d.a[i]) - (1.0 - d.y[i]) * std::exp(nv.r[i]);
    h[i] = nv.psi[i] * core * (d.a[i] - nv.m[i]);
    if (extra_a_weight) h[i] *= (*extra_a_weight)[i];
  }
  return h;
}

double estimating_value(const Dataset& d, double beta, const NuisanceValues& nv,
                        const Eigen::VectorXd* extra_a_weight) {
  return score_vector(d, beta, nv, extra_a_weight).mean();
}

double solve_beta(const Dataset& d, const NuisanceValues& nv, double init,
                  const RootOptions& opts, const Eigen::VectorXd* extra_a_weight) {
  // Only the y=1 terms depend on beta; split the sum so the root search does
  // one exp pass per evaluation.
  const Eigen::Index n = d.n();
  Eigen::VectorXd case_coef(n);
  double control_part = 0.0;
  for (Eigen::Index i = 0; i < n; ++i) {
    double c1 = nv.psi[i] * (d.a[i] - nv.m[i]);
    if (extra_a_weight) c1 *= (*extra_a_weight)[i];
    if (d.y[i] == 1.0) {
      case_coef[i] = c1;
    } else {
      case_coef[i] = 0.0;
      if (nv.r[i] > kExponentGuard)
        fail("solve_beta: pathological nuisance, r(x) exceeds the exponent guard");
      control_part -= c1 * std::exp(nv.r[i]);
    }
  }
  const double inv_n = 1.0 / static_cast<double>(n);
  auto value = [&](double beta) {
    double s = control_part;
    for (Eigen::Index i = 0; i < n; ++i)
      if (case_coef[i] != 0.0) s += case_coef[i] * std::exp(-beta * d.a[i]);
    return s * inv_n;
  };
  return solve_scalar_root(value, init, opts);
}

void InferenceResult::validate() const {
  if (!(ci_low <= beta_hat && beta_hat <= ci_high))
    fail("InferenceResult: CI does not contain beta_hat");
  if (!degenerate && !(se > 0.0)) fail("InferenceResult: se must be positive");
  if (!(p_value >= 0.0 && p_value <= 1.0)) fail("InferenceResult: bad p-value");
}

InferenceResult inference_from_scores(double beta_hat, double i_bar,
                                      const Eigen::VectorXd& scores, double level) {
  if (std::abs(i_bar) < 1e-10)
    fail("plug_in_inference: |i_bar| < 1e-10, slope not identified");
  const double n = static_cast<double>(scores.size());
  InferenceResult res;
  res.beta_hat = beta_hat;
  res.i_bar = i_bar;
  const double mean_h2 = scores.squaredNorm() / n;
  res.sigma_hat = std::sqrt(mean_h2) / std::abs(i_bar);
  res.se = res.sigma_hat / std::sqrt(n);
  if (mean_h2 == 0.0) {
    res.degenerate = true;
    res.ci_low = res.normal_ci_low = beta_hat;
    res.ci_high = res.normal_ci_high = beta_hat;
    res.p_value = 1.0;
    return res;
  }
  const double z = std_normal_quantile(0.5 + level / 2.0);
  res.normal_ci_low = beta_hat - z * res.se;
  res.normal_ci_high = beta_hat + z * res.se;
  res.ci_low = res.normal_ci_low;
  res.ci_high = res.normal_ci_high;
  res.p_value = 2.0 * (1.0 - std_normal_cdf(std::abs(beta_hat / res.se)));
  return res;
}

InferenceResult plug_in_inference(const Dataset& d, double beta_hat,
                                  const NuisanceValues& nv,
                                  const Eigen::VectorXd* extra_a_weight,
                                  double level) {
  const Eigen::Index n = d.n();
  double i_bar = 0.0;
  for (Eigen::Index i = 0; i < n; ++i) {
    double t = nv.psi[i] * d.y[i] * std::exp(-beta_hat * d.a[i]) * d.a[i] *
               (d.a[i] - nv.m[i]);
    if (extra_a_weight) t *= (*extra_a_weight)[i];
    i_bar += t;
  }
  i_bar /= static_cast<double>(n);
  const Eigen::VectorXd h = score_vector(d, beta_hat, nv, extra_a_weight);
  return inference_from_scores(beta_hat, i_bar, h, level);
}

namespace {

// Type-7 quantile of an already sorted sample.
double sorted_quantile(const std::vector<double>& v, double prob) {
  const double hpos = (static_cast<double>(v.size()) - 1.0) * prob;
  const std::size_t lo = static_cast<std::size_t>(std::floor(hpos));
  const std::size_t hi = std::min(lo + 1, v.size() - 1);
  return v[lo] + (hpos - static_cast<double>(lo)) * (v[hi] - v[lo]);
}

}  // namespace

std::pair<double, double> multiplier_bootstrap_ci(double beta_hat, double i_bar,
                                                  const Eigen::VectorXd& scores,
                                                  int b, double level,
                                                  std::uint64_t seed) {
  if (b < 100) fail("multiplier_bootstrap_ci: need at least 100 draws");
  if (std::abs(i_bar) < 1e-10)
    fail("multiplier_bootstrap_ci: |i_bar| < 1e-10, slope not identified");
  const Eigen::Index n = scores.size();
  const double scale = 1.0 / (static_cast<double>(n) * i_bar);
  std::vector<double> draws(static_cast<std::size_t>(b));
  for (int d = 0; d < b; ++d) {
    Rng rng = make_rng(seed, static_cast<std::uint64_t>(d));
    std::normal_distribution<double> normal(0.0, 1.0);
    double s = 0.0;
    for (Eigen::Index i = 0; i < n; ++i) s += normal(rng) * scores[i];
    draws[static_cast<std::size_t>(d)] = beta_hat + scale * s;
  }
  std::sort(draws.begin(), draws.end());
  const double alpha = 1.0 - level;
  return {sorted_quantile(draws, alpha / 2.0),
          sorted_quantile(draws, 1.0 - alpha / 2.0)};
}

InferenceResult inference_with_bootstrap(const Dataset& d, double beta_hat,
                                         const NuisanceValues& nv,
                                         const Eigen::VectorXd* extra_a_weight,
                                         int bootstrap_draws, double level,
                                         std::uint64_t seed) {
  InferenceResult res = plug_in_inference(d, beta_hat, nv, extra_a_weight, level);
  if (bootstrap_draws > 0 && !res.degenerate) {
    const Eigen::VectorXd h = score_vector(d, beta_hat, nv, extra_a_weight);
    const auto [lo, hi] =
        multiplier_bootstrap_ci(beta_hat, res.i_bar, h, bootstrap_draws, level, seed);
    res.ci_low = lo;
    res.ci_high = hi;
    res.bootstrap_draws = bootstrap_draws;
  }
  return res;
}

}  // namespace dblogit
