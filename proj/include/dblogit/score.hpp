#pragma once

#include <Eigen/Dense>
#include <cstdint>
#include <functional>
#include <utility>
#include <vector>

#include "dblogit/dataset.hpp"
#include "dblogit/optim.hpp"

namespace dblogit {

// Read-only view of one covariate row (rows of column-major matrices are
// strided, hence the InnerStride).
using RowView = Eigen::Ref<const Eigen::VectorXd, 0, Eigen::InnerStride<>>;
using NuisanceFn = std::function<double(RowView)>;

// Evaluable nuisance triple {r, m, psi}.
struct NuisanceSet {
  NuisanceFn r, m, psi;
};

// The orthogonal score psi(x)*{y*e^(-beta*a) - (1-y)*e^r}*{a - m}.
// r above the exponent guard is a pathological-nuisance error.
double score_h(double y, double a, double r, double m, double psi, double beta);
double score_h(const Dataset& d, Eigen::Index i, double beta, const NuisanceSet& eta);

// Nuisances evaluated once per dataset row; the fast path for root solving
// and inference.
struct NuisanceValues {
  Eigen::VectorXd r, m, psi;
};

NuisanceValues evaluate_nuisances(const Dataset& d, const NuisanceSet& eta);
// Cross-fitted variant: row i is evaluated with per_fold[fold_of[i]].
NuisanceValues evaluate_nuisances(const Dataset& d,
                                  const std::vector<NuisanceSet>& per_fold,
                                  const FoldAssignment& folds);

// Per-row scores at beta; extra_a_weight (when given) multiplies each term.
Eigen::VectorXd score_vector(const Dataset& d, double beta, const NuisanceValues& nv,
                             const Eigen::VectorXd* extra_a_weight = nullptr);

// Sample mean of the scores.
double estimating_value(const Dataset& d, double beta, const NuisanceValues& nv,
                        const Eigen::VectorXd* extra_a_weight = nullptr);

// Root of beta -> estimating_value via solve_scalar_root.
double solve_beta(const Dataset& d, const NuisanceValues& nv, double init = 0.0,
                  const RootOptions& opts = {},
                  const Eigen::VectorXd* extra_a_weight = nullptr);

struct InferenceResult {
  double beta_hat = 0.0;
  double i_bar = 0.0;      // plug-in slope of the estimating equation
  double sigma_hat = 0.0;  // sqrt(mean h^2) / |i_bar|
  double se = 0.0;         // sigma_hat / sqrt(n)
  double ci_low = 0.0, ci_high = 0.0;  // bootstrap CI when draws > 0, else normal
  double normal_ci_low = 0.0, normal_ci_high = 0.0;
  double p_value = 1.0;
  int bootstrap_draws = 0;
  bool degenerate = false;  // all scores zero: zero-width interval
  void validate() const;
};

// Plug-in variance and normal-quantile CI. |i_bar| below 1e-10 is an error
// (non-identified slope); an all-zero score vector sets the degenerate flag
// instead of erroring.
InferenceResult plug_in_inference(const Dataset& d, double beta_hat,
                                  const NuisanceValues& nv,
                                  const Eigen::VectorXd* extra_a_weight = nullptr,
                                  double level = 0.95);

// Same, from precomputed pieces; used by the bootstrap and tests.
InferenceResult inference_from_scores(double beta_hat, double i_bar,
                                      const Eigen::VectorXd& scores, double level);

// Gaussian multiplier bootstrap: per draw d, xi ~ N(0,1) i.i.d. from a
// stream derived from (seed, d); beta* = beta_hat + (1/(n*i_bar)) * sum xi_i h_i.
// Returns the percentile interval at the given level. Requires b >= 100.
std::pair<double, double> multiplier_bootstrap_ci(double beta_hat, double i_bar,
                                                  const Eigen::VectorXd& scores,
                                                  int b, double level,
                                                  std::uint64_t seed);

// plug_in_inference followed by the multiplier bootstrap; the bootstrap
// interval becomes ci_low/ci_high and the normal interval is kept alongside.
InferenceResult inference_with_bootstrap(const Dataset& d, double beta_hat,
                                         const NuisanceValues& nv,
                                         const Eigen::VectorXd* extra_a_weight,
                                         int bootstrap_draws, double level,
                                         std::uint64_t seed);

}  // namespace dblogit
