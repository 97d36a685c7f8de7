#pragma once

#include <Eigen/Dense>
#include <cstdint>
#include <map>
#include <memory>
#include <string>
#include <vector>

#include "dblogit/dataset.hpp"
#include "dblogit/score.hpp"

namespace dblogit {

enum class LearnerKind { kBoostedTrees, kRandomForest, kPenalizedLinear, kKNearest };
enum class Objective { kSquared, kLogistic };

LearnerKind parse_learner_kind(const std::string& name);
std::string learner_kind_name(LearnerKind k);

// Probability predictions of logistic learners are clipped to
// [kProbClip, 1 - kProbClip] so logit() stays finite.
inline constexpr double kProbClip = 1e-3;

// Hyperparameter keys (all optional, kind-specific):
//   boosted-trees : rounds(200), depth(3), shrinkage(0.1), min_leaf(10)
//   random-forest : trees(200), min_leaf(5), mtry(0 = round(sqrt(p))),
//                   bootstrap(1)
//   penalized-linear : lambda(-1 = CV over a fixed grid), cv_folds(5)
//   k-nearest : k(0 = CV over {1,2,5,10,20,50}), cv_folds(5)
struct LearnerSpec {
  LearnerKind kind = LearnerKind::kBoostedTrees;
  Objective objective = Objective::kSquared;
  std::map<std::string, double> hyper;
  double dropout_prob = 0.0;  // per-entry N(0,1) replacement on the training copy
  std::uint64_t seed = 1;

  double get(const std::string& key, double fallback) const;
  void validate() const;
};

namespace detail {
struct LearnerImpl;
}

// Immutable fitted conditional-mean predictor; cheap to copy and share.
class LearnerModel {
 public:
  LearnerModel() = default;
  double predict(RowView x) const;
  Eigen::VectorXd predict(const Eigen::MatrixXd& x) const;
  Objective objective() const;
  // Training mean squared error after each boosting round (boosted trees
  // with the squared objective only; empty otherwise).
  const std::vector<double>& training_mse_trace() const;
  const std::vector<std::string>& warnings() const;
  bool fitted() const { return impl_ != nullptr; }

 private:
  friend LearnerModel fit_learner(const LearnerSpec&, const Eigen::MatrixXd&,
                                  const Eigen::VectorXd&);
  std::shared_ptr<const detail::LearnerImpl> impl_;
};

// Deterministic given (spec, data). Requires >= 10 rows; the logistic
// objective requires a binary target.
LearnerModel fit_learner(const LearnerSpec& spec, const Eigen::MatrixXd& c,
                         const Eigen::VectorXd& r);

// Spec minimizing the cross-validated sum of squared prediction errors over
// the shared folds; ties break toward the earlier-listed spec. Needs >= 2 specs.
LearnerSpec select_best(const std::vector<LearnerSpec>& specs,
                        const Eigen::MatrixXd& c, const Eigen::VectorXd& r,
                        const FoldAssignment& folds);

}  // namespace dblogit
