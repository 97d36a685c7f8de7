#include "dblogit/learners.hpp"

#include <algorithm>
#include <cmath>
#include <set>

#include "tree.hpp"

namespace dblogit {

LearnerKind parse_learner_kind(const std::string& name) {
  if (name == "boosted-trees") return LearnerKind::kBoostedTrees;
  if (name == "random-forest") return LearnerKind::kRandomForest;
  if (name == "penalized-linear") return LearnerKind::kPenalizedLinear;
  if (name == "k-nearest") return LearnerKind::kKNearest;
  fail("unknown learner kind '" + name + "'");
}

std::string learner_kind_name(LearnerKind k) {
  switch (k) {
    case LearnerKind::kBoostedTrees: return "boosted-trees";
    case LearnerKind::kRandomForest: return "random-forest";
    case LearnerKind::kPenalizedLinear: return "penalized-linear";
    case LearnerKind::kKNearest: return "k-nearest";
  }
  return "?";
}

double LearnerSpec::get(const std::string& key, double fallback) const {
  const auto it = hyper.find(key);
  return it == hyper.end() ? fallback : it->second;
}

void LearnerSpec::validate() const {
  if (!(dropout_prob >= 0.0 && dropout_prob < 1.0))
    fail("LearnerSpec: dropout_prob must be in [0,1)");
  static const std::map<LearnerKind, std::set<std::string>> known = {
      {LearnerKind::kBoostedTrees, {"rounds", "depth", "shrinkage", "min_leaf"}},
      {LearnerKind::kRandomForest, {"trees", "min_leaf", "mtry", "bootstrap"}},
      {LearnerKind::kPenalizedLinear, {"lambda", "cv_folds"}},
      {LearnerKind::kKNearest, {"k", "cv_folds"}},
  };
  const auto& allowed = known.at(kind);
  for (const auto& [key, value] : hyper) {
    if (!allowed.count(key))
      fail("LearnerSpec: unknown hyperparameter '" + key + "' for " +
           learner_kind_name(kind));
    (void)value;
  }
  if (get("rounds", 200) < 1 || get("rounds", 200) > 100000)
    fail("LearnerSpec: rounds out of range");
  if (get("depth", 3) < 1 || get("depth", 3) > 8)
    fail("LearnerSpec: depth out of range");
  if (!(get("shrinkage", 0.1) > 0.0 && get("shrinkage", 0.1) <= 1.0))
    fail("LearnerSpec: shrinkage out of range");
  if (get("trees", 200) < 1 || get("trees", 200) > 100000)
    fail("LearnerSpec: trees out of range");
  if (get("min_leaf", 5) < 1) fail("LearnerSpec: min_leaf out of range");
  if (get("mtry", 0) < 0) fail("LearnerSpec: mtry out of range");
  if (get("lambda", -1) < 0 && get("lambda", -1) != -1.0)
    fail("LearnerSpec: lambda must be >= 0 or -1 for CV");
  if (get("k", 0) < 0) fail("LearnerSpec: k out of range");
  if (get("cv_folds", 5) < 2) fail("LearnerSpec: cv_folds out of range");
}

namespace detail {

struct LearnerImpl {
  Objective obj = Objective::kSquared;
  std::vector<double> mse_trace;
  std::vector<std::string> warnings;
  virtual ~LearnerImpl() = default;
  virtual double raw(RowView x) const = 0;

  double predict(RowView x) const {
    const double v = raw(x);
    if (obj == Objective::kLogistic)
      return std::clamp(v, kProbClip, 1.0 - kProbClip);
    return v;
  }
};

namespace {

struct BoostImpl final : LearnerImpl {
  double f0 = 0.0;
  double shrinkage = 0.1;
  std::vector<Tree> trees;
  double raw(RowView x) const override {
    double f = f0;
    for (const auto& t : trees) f += shrinkage * t.predict(x);
    return obj == Objective::kLogistic ? expit(f) : f;
  }
};

struct ForestImpl final : LearnerImpl {
  std::vector<Tree> trees;
  double raw(RowView x) const override {
    double s = 0.0;
    for (const auto& t : trees) s += t.predict(x);
    return s / static_cast<double>(trees.size());
  }
};

struct LinearImpl final : LearnerImpl {
  Eigen::VectorXd coef;  // intercept first
  double raw(RowView x) const override {
    const double u = coef[0] + coef.tail(coef.size() - 1).dot(x);
    return obj == Objective::kLogistic ? expit(u) : u;
  }
};

struct KnnImpl final : LearnerImpl {
  Eigen::MatrixXd train_x;
  Eigen::VectorXd train_y;
  int k = 5;
  double raw(RowView x) const override {
    const Eigen::Index n = train_x.rows();
    std::vector<std::pair<double, Eigen::Index>> dist;
    dist.reserve(static_cast<std::size_t>(n));
    for (Eigen::Index i = 0; i < n; ++i) {
      const double d2 = (train_x.row(i).transpose() - x).squaredNorm();
      dist.emplace_back(d2, i);
    }
    const int kk = std::min<int>(k, static_cast<int>(n));
    std::partial_sort(dist.begin(), dist.begin() + kk, dist.end());
    double s = 0.0;
    for (int t = 0; t < kk; ++t) s += train_y[dist[static_cast<std::size_t>(t)].second];
    return s / kk;
  }
};

struct ConstantImpl final : LearnerImpl {
  double value = 0.0;
  double raw(RowView) const override { return value; }
};

bool all_columns_constant(const Eigen::MatrixXd& x) {
  for (Eigen::Index j = 0; j < x.cols(); ++j)
    if (x.col(j).minCoeff() != x.col(j).maxCoeff()) return false;
  return true;
}

std::vector<int> all_rows(Eigen::Index n) {
  std::vector<int> rows(static_cast<std::size_t>(n));
  for (Eigen::Index i = 0; i < n; ++i) rows[static_cast<std::size_t>(i)] = static_cast<int>(i);
  return rows;
}

std::shared_ptr<LearnerImpl> fit_boosted(const LearnerSpec& spec,
                                         const Eigen::MatrixXd& x,
                                         const Eigen::VectorXd& y) {
  const Eigen::Index n = x.rows();
  const int rounds = static_cast<int>(spec.get("rounds", 200));
  const int depth = static_cast<int>(spec.get("depth", 3));
  const int min_leaf = static_cast<int>(spec.get("min_leaf", 10));
  auto impl = std::make_shared<BoostImpl>();
  impl->obj = spec.objective;
  impl->shrinkage = spec.get("shrinkage", 0.1);

  if (all_columns_constant(x)) {
    impl->warnings.push_back("degenerate-split: constant covariates, returning constant predictor");
    impl->f0 = spec.objective == Objective::kLogistic
                   ? logit(std::clamp(y.mean(), kProbClip, 1.0 - kProbClip))
                   : y.mean();
    return impl;
  }

  TreeOptions topt;
  topt.max_depth = depth;
  topt.min_leaf = min_leaf;
  topt.mtry = 0;

  Eigen::VectorXd f(n);
  if (spec.objective == Objective::kLogistic) {
    impl->f0 = logit(std::clamp(y.mean(), kProbClip, 1.0 - kProbClip));
    f.setConstant(impl->f0);
    Eigen::VectorXd grad(n), hess(n);
    for (int round = 0; round < rounds; ++round) {
      for (Eigen::Index i = 0; i < n; ++i) {
        const double pr = expit(f[i]);
        grad[i] = y[i] - pr;
        hess[i] = std::max(pr * (1.0 - pr), 1e-6);
      }
      Tree tree = fit_tree(x, grad, &hess, all_rows(n), topt, nullptr);
      for (Eigen::Index i = 0; i < n; ++i)
        f[i] += impl->shrinkage * tree.predict(RowView(x.row(i)));
      impl->trees.push_back(std::move(tree));
    }
  } else {
    impl->f0 = y.mean();
    f.setConstant(impl->f0);
    Eigen::VectorXd resid = y.array() - impl->f0;
    impl->mse_trace.reserve(static_cast<std::size_t>(rounds) + 1);
    impl->mse_trace.push_back(resid.squaredNorm() / static_cast<double>(n));
    for (int round = 0; round < rounds; ++round) {
      Tree tree = fit_tree(x, resid, nullptr, all_rows(n), topt, nullptr);
      for (Eigen::Index i = 0; i < n; ++i) {
        const double step = impl->shrinkage * tree.predict(RowView(x.row(i)));
        f[i] += step;
        resid[i] -= step;
      }
      impl->trees.push_back(std::move(tree));
      impl->mse_trace.push_back(resid.squaredNorm() / static_cast<double>(n));
    }
  }
  return impl;
}

std::shared_ptr<LearnerImpl> fit_forest(const LearnerSpec& spec,
                                        const Eigen::MatrixXd& x,
                                        const Eigen::VectorXd& y) {
  const Eigen::Index n = x.rows();
  const Eigen::Index p = x.cols();
  const int n_trees = static_cast<int>(spec.get("trees", 200));
  const bool bootstrap = spec.get("bootstrap", 1) != 0.0;
  int mtry = static_cast<int>(spec.get("mtry", 0));
  if (mtry <= 0) mtry = std::max(1, static_cast<int>(std::lround(std::sqrt(static_cast<double>(p)))));
  mtry = std::min<int>(mtry, static_cast<int>(p));

  auto impl = std::make_shared<ForestImpl>();
  impl->obj = spec.objective;

  if (all_columns_constant(x)) {
    auto constant = std::make_shared<ConstantImpl>();
    constant->obj = spec.objective;
    constant->value = y.mean();
    constant->warnings.push_back("degenerate-split: constant covariates, returning constant predictor");
    return constant;
  }

  TreeOptions topt;
  topt.max_depth = 64;
  topt.min_leaf = static_cast<int>(spec.get("min_leaf", 5));
  topt.mtry = mtry;

  impl->trees.reserve(static_cast<std::size_t>(n_trees));
  for (int t = 0; t < n_trees; ++t) {
    Rng rng = make_rng(spec.seed, 7000 + static_cast<std::uint64_t>(t));
    std::vector<int> rows;
    if (bootstrap) {
      rows.resize(static_cast<std::size_t>(n));
      std::uniform_int_distribution<int> pick(0, static_cast<int>(n) - 1);
      for (Eigen::Index i = 0; i < n; ++i) rows[static_cast<std::size_t>(i)] = pick(rng);
    } else {
      rows = all_rows(n);
    }
    impl->trees.push_back(fit_tree(x, y, nullptr, std::move(rows), topt, &rng));
  }
  return impl;
}

Eigen::VectorXd ridge_squared(const Eigen::MatrixXd& x, const Eigen::VectorXd& y,
                              double lambda) {
  const Eigen::Index n = x.rows();
  const Eigen::Index p = x.cols();
  Eigen::MatrixXd z(n, p + 1);
  z.col(0).setOnes();
  z.rightCols(p) = x;
  Eigen::MatrixXd gram = z.transpose() * z / static_cast<double>(n);
  for (Eigen::Index j = 1; j <= p; ++j) gram(j, j) += lambda;
  const Eigen::VectorXd rhs = z.transpose() * y / static_cast<double>(n);
  return gram.ldlt().solve(rhs);
}

Eigen::VectorXd ridge_logistic(const Eigen::MatrixXd& x, const Eigen::VectorXd& y,
                               double lambda) {
  const Eigen::Index n = x.rows();
  const Eigen::Index p = x.cols();
  Eigen::MatrixXd z(n, p + 1);
  z.col(0).setOnes();
  z.rightCols(p) = x;
  Eigen::VectorXd coef = Eigen::VectorXd::Zero(p + 1);
  for (int iter = 0; iter < 50; ++iter) {
    const Eigen::VectorXd u = z * coef;
    Eigen::VectorXd pr(n), wdiag(n);
    for (Eigen::Index i = 0; i < n; ++i) {
      pr[i] = expit(u[i]);
      wdiag[i] = std::max(pr[i] * (1.0 - pr[i]), 1e-8);
    }
    Eigen::VectorXd grad = z.transpose() * (pr - y) / static_cast<double>(n);
    Eigen::MatrixXd hess =
        z.transpose() * wdiag.asDiagonal() * z / static_cast<double>(n);
    for (Eigen::Index j = 1; j <= p; ++j) {
      grad[j] += lambda * coef[j];
      hess(j, j) += lambda;
    }
    const Eigen::VectorXd step = hess.ldlt().solve(grad);
    coef -= step;
    if (step.lpNorm<Eigen::Infinity>() < 1e-10) break;
  }
  return coef;
}

std::shared_ptr<LearnerImpl> fit_linear(const LearnerSpec& spec,
                                        const Eigen::MatrixXd& x,
                                        const Eigen::VectorXd& y) {
  auto impl = std::make_shared<LinearImpl>();
  impl->obj = spec.objective;
  double lambda = spec.get("lambda", -1.0);
  if (lambda < 0.0) {
    // CV over a fixed grid; held-out squared error (deviance for logistic).
    static const std::vector<double> grid = {1e-4, 1e-3, 1e-2, 0.1, 1.0, 10.0};
    const int cv_folds =
        std::min<int>(static_cast<int>(spec.get("cv_folds", 5)), static_cast<int>(x.rows()) / 2);
    const FoldAssignment folds = make_folds(x.rows(), std::max(2, cv_folds),
                                            mix_seed(spec.seed, 0x11));
    double best_score = std::numeric_limits<double>::infinity();
    for (const double cand : grid) {
      double score = 0.0;
      for (int f = 0; f < folds.k; ++f) {
        std::vector<Eigen::Index> train, held;
        for (Eigen::Index i = 0; i < x.rows(); ++i)
          (folds.fold_of[i] == f ? held : train).push_back(i);
        Eigen::MatrixXd xt(train.size(), x.cols());
        Eigen::VectorXd yt(train.size());
        for (std::size_t r = 0; r < train.size(); ++r) {
          xt.row(static_cast<Eigen::Index>(r)) = x.row(train[r]);
          yt[static_cast<Eigen::Index>(r)] = y[train[r]];
        }
        const Eigen::VectorXd coef = spec.objective == Objective::kLogistic
                                         ? ridge_logistic(xt, yt, cand)
                                         : ridge_squared(xt, yt, cand);
        for (const Eigen::Index i : held) {
          const double u = coef[0] + coef.tail(x.cols()).dot(x.row(i));
          if (spec.objective == Objective::kLogistic) {
            score += log1pexp(u) - y[i] * u;
          } else {
            const double e = y[i] - u;
            score += e * e;
          }
        }
      }
      if (score < best_score) {
        best_score = score;
        lambda = cand;
      }
    }
  }
  impl->coef = spec.objective == Objective::kLogistic ? ridge_logistic(x, y, lambda)
                                                      : ridge_squared(x, y, lambda);
  return impl;
}

std::shared_ptr<LearnerImpl> fit_knn(const LearnerSpec& spec,
                                     const Eigen::MatrixXd& x,
                                     const Eigen::VectorXd& y) {
  auto impl = std::make_shared<KnnImpl>();
  impl->obj = spec.objective;
  impl->train_x = x;
  impl->train_y = y;
  int k = static_cast<int>(spec.get("k", 0));
  if (k == 0) {
    static const std::vector<int> grid = {1, 2, 5, 10, 20, 50};
    const int cv_folds =
        std::min<int>(static_cast<int>(spec.get("cv_folds", 5)), static_cast<int>(x.rows()) / 2);
    const FoldAssignment folds = make_folds(x.rows(), std::max(2, cv_folds),
                                            mix_seed(spec.seed, 0x12));
    double best_score = std::numeric_limits<double>::infinity();
    k = grid.front();
    for (const int cand : grid) {
      if (cand >= static_cast<int>(x.rows())) continue;
      double score = 0.0;
      for (Eigen::Index i = 0; i < x.rows(); ++i) {
        // Held-out prediction: nearest neighbours among other folds.
        std::vector<std::pair<double, Eigen::Index>> dist;
        for (Eigen::Index j = 0; j < x.rows(); ++j) {
          if (folds.fold_of[j] == folds.fold_of[i]) continue;
          dist.emplace_back((x.row(j) - x.row(i)).squaredNorm(), j);
        }
        const int kk = std::min<int>(cand, static_cast<int>(dist.size()));
        std::partial_sort(dist.begin(), dist.begin() + kk, dist.end());
        double s = 0.0;
        for (int t = 0; t < kk; ++t) s += y[dist[static_cast<std::size_t>(t)].second];
        const double e = y[i] - s / kk;
        score += e * e;
      }
      if (score < best_score) {
        best_score = score;
        k = cand;
      }
    }
  }
  impl->k = k;
  return impl;
}

}  // namespace
}  // namespace detail

double LearnerModel::predict(RowView x) const {
  if (!impl_) fail("LearnerModel: not fitted");
  return impl_->predict(x);
}

Eigen::VectorXd LearnerModel::predict(const Eigen::MatrixXd& x) const {
  Eigen::VectorXd out(x.rows());
  for (Eigen::Index i = 0; i < x.rows(); ++i) out[i] = predict(RowView(x.row(i)));
  return out;
}

Objective LearnerModel::objective() const {
  if (!impl_) fail("LearnerModel: not fitted");
  return impl_->obj;
}

const std::vector<double>& LearnerModel::training_mse_trace() const {
  if (!impl_) fail("LearnerModel: not fitted");
  return impl_->mse_trace;
}

const std::vector<std::string>& LearnerModel::warnings() const {
  if (!impl_) fail("LearnerModel: not fitted");
  return impl_->warnings;
}

LearnerModel fit_learner(const LearnerSpec& spec, const Eigen::MatrixXd& c,
                         const Eigen::VectorXd& r) {
  spec.validate();
  if (c.rows() != r.size()) fail("fit_learner: covariate/target size mismatch");
  if (c.rows() < 10) fail("fit_learner: need at least 10 rows");
  if (!c.allFinite() || !r.allFinite()) fail("fit_learner: non-finite input");
  if (spec.objective == Objective::kLogistic &&
      ((r.array() != 0.0) && (r.array() != 1.0)).any())
    fail("fit_learner: logistic objective requires a binary target");

  // Dropout perturbs only the training copy.
  Eigen::MatrixXd train = c;
  if (spec.dropout_prob > 0.0) {
    Rng rng = make_rng(spec.seed, 0xD0);
    std::uniform_real_distribution<double> unif(0.0, 1.0);
    std::normal_distribution<double> normal(0.0, 1.0);
    for (Eigen::Index i = 0; i < train.rows(); ++i)
      for (Eigen::Index j = 0; j < train.cols(); ++j)
        if (unif(rng) < spec.dropout_prob) train(i, j) = normal(rng);
  }

  std::shared_ptr<detail::LearnerImpl> impl;
  switch (spec.kind) {
    case LearnerKind::kBoostedTrees:
      impl = detail::fit_boosted(spec, train, r);
      break;
    case LearnerKind::kRandomForest:
      impl = detail::fit_forest(spec, train, r);
      break;
    case LearnerKind::kPenalizedLinear:
      impl = detail::fit_linear(spec, train, r);
      break;
    case LearnerKind::kKNearest:
      impl = detail::fit_knn(spec, train, r);
      break;
  }
  LearnerModel model;
  model.impl_ = std::move(impl);
  return model;
}

LearnerSpec select_best(const std::vector<LearnerSpec>& specs,
                        const Eigen::MatrixXd& c, const Eigen::VectorXd& r,
                        const FoldAssignment& folds) {
  if (specs.size() < 2) fail("select_best: need at least two candidate specs");
  if (folds.n() != c.rows()) fail("select_best: fold assignment length mismatch");

  double best_sse = std::numeric_limits<double>::infinity();
  std::size_t best = 0;
  for (std::size_t s = 0; s < specs.size(); ++s) {
    double sse = 0.0;
    for (int f = 0; f < folds.k; ++f) {
      std::vector<Eigen::Index> train, held;
      for (Eigen::Index i = 0; i < c.rows(); ++i)
        (folds.fold_of[i] == f ? held : train).push_back(i);
      Eigen::MatrixXd ct(train.size(), c.cols());
      Eigen::VectorXd rt(train.size());
      for (std::size_t t = 0; t < train.size(); ++t) {
        ct.row(static_cast<Eigen::Index>(t)) = c.row(train[t]);
        rt[static_cast<Eigen::Index>(t)] = r[train[t]];
      }
      const LearnerModel model = fit_learner(specs[s], ct, rt);
      for (const Eigen::Index i : held) {
        const double e = r[i] - model.predict(RowView(c.row(i)));
        sse += e * e;
      }
    }
    if (sse < best_sse) {
      best_sse = sse;
      best = s;
    }
  }
  return specs[best];
}

}  // namespace dblogit
