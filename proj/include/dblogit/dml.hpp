#pragma once

#include <Eigen/Dense>
#include <cstdint>
#include <string>
#include <vector>

#include "dblogit/dataset.hpp"
#include "dblogit/learners.hpp"
#include "dblogit/score.hpp"

namespace dblogit {

enum class RVariant { kDifference, kRatio };

RVariant parse_r_variant(const std::string& name);  // "difference" | "ratio"
std::string r_variant_name(RVariant v);

struct DmlConfig {
  int k_outer = 5;
  int k_inner = 5;
  LearnerSpec learner_m;     // squared objective, A ~ X on controls
  LearnerSpec learner_full;  // logistic objective, Y ~ (A, X)
  LearnerSpec learner_a;     // squared objective, A ~ X
  LearnerSpec learner_t;     // squared objective, pseudo-outcome ~ X
  RVariant r_variant = RVariant::kDifference;
  std::uint64_t seed = 1;
  int bootstrap_draws = 500;
  double level = 0.95;
  int threads = 1;
  void validate() const;
};

// Models fitted on the inner split of one outer training set.
struct FmrInner {
  FoldAssignment inner;                // over positions of train_rows
  std::vector<Eigen::Index> train_rows;
  std::vector<LearnerModel> m_full;    // per inner fold
  std::vector<LearnerModel> a_hat;     // per inner fold
  Eigen::VectorXd w;                   // logit(M_hat) per train row, fold-appropriate
  double breve_beta = 0.0;
};

struct FoldNuisance {
  NuisanceSet eta;
  double breve_beta = 0.0;
  std::vector<Eigen::Index> train_rows;  // provenance of every model behind eta
};

struct DmlFit {
  FoldAssignment folds;
  std::vector<FoldNuisance> per_fold;
  std::vector<double> breve_betas;
  double beta_hat = 0.0;
  double equation_residual = 0.0;
  InferenceResult inference;
  std::uint64_t fold_seed = 0;
  std::vector<std::string> warnings;
};

// Learner of A on X restricted to the control rows of the training subset;
// needs at least 10 controls.
LearnerModel fit_m_hat(const Dataset& d, const std::vector<Eigen::Index>& train_rows,
                       const LearnerSpec& spec);

// Inner cross-fitting plus the closed-form least-squares slope of
// logit(M_hat) on the exposure residual A - a_hat.
FmrInner fmr_breve_beta(const Dataset& d, const std::vector<Eigen::Index>& train_rows,
                        const DmlConfig& cfg, std::uint64_t fold_seed);

// The r estimate from the refitting step: difference variant
// t_hat(x) - breve_beta * mean_j a_hat_j(x); ratio variant
// log of two conditional-mean fits with the denominator clipped at 1e-3.
NuisanceFn fmr_fit_r(const Dataset& d, const FmrInner& inner, const DmlConfig& cfg,
                     std::uint64_t fold_seed);

DmlFit fit_dml(const Dataset& d, const DmlConfig& cfg);

}  // namespace dblogit
