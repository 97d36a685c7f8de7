#include "dblogit/dml.hpp"

#include <cmath>

#include "dblogit/optim.hpp"
#include "dblogit/threading.hpp"

namespace dblogit {

RVariant parse_r_variant(const std::string& name) {
  if (name == "difference") return RVariant::kDifference;
  if (name == "ratio") return RVariant::kRatio;
  fail("unknown r variant '" + name + "' (expected difference or ratio)");
}

std::string r_variant_name(RVariant v) {
  return v == RVariant::kDifference ? "difference" : "ratio";
}

void DmlConfig::validate() const {
  if (k_outer < 2 || k_inner < 2) fail("DmlConfig: k_outer and k_inner must be >= 2");
  if (!(level > 0.0 && level < 1.0)) fail("DmlConfig: level must be in (0,1)");
  if (learner_full.objective != Objective::kLogistic)
    fail("DmlConfig: learner_full must use the logistic objective");
  if (learner_m.objective != Objective::kSquared ||
      learner_a.objective != Objective::kSquared ||
      learner_t.objective != Objective::kSquared)
    fail("DmlConfig: learner_m/learner_a/learner_t must use the squared objective");
  learner_m.validate();
  learner_full.validate();
  learner_a.validate();
  learner_t.validate();
}

namespace {

constexpr double kDenominatorClip = 1e-3;

Eigen::MatrixXd rows_of(const Eigen::MatrixXd& x,
                        const std::vector<Eigen::Index>& rows) {
  Eigen::MatrixXd out(static_cast<Eigen::Index>(rows.size()), x.cols());
  for (std::size_t r = 0; r < rows.size(); ++r)
    out.row(static_cast<Eigen::Index>(r)) = x.row(rows[r]);
  return out;
}

Eigen::VectorXd entries_of(const Eigen::VectorXd& v,
                           const std::vector<Eigen::Index>& rows) {
  Eigen::VectorXd out(static_cast<Eigen::Index>(rows.size()));
  for (std::size_t r = 0; r < rows.size(); ++r)
    out[static_cast<Eigen::Index>(r)] = v[rows[r]];
  return out;
}

// Covariates (A, X) for the full-model learner.
Eigen::MatrixXd ax_matrix(const Dataset& d, const std::vector<Eigen::Index>& rows) {
  Eigen::MatrixXd out(static_cast<Eigen::Index>(rows.size()), d.p() + 1);
  for (std::size_t r = 0; r < rows.size(); ++r) {
    out(static_cast<Eigen::Index>(r), 0) = d.a[rows[r]];
    out.row(static_cast<Eigen::Index>(r)).tail(d.p()) = d.x.row(rows[r]);
  }
  return out;
}

LearnerSpec with_seed(LearnerSpec spec, std::uint64_t seed) {
  spec.seed = seed;
  return spec;
}

}  // namespace

LearnerModel fit_m_hat(const Dataset& d, const std::vector<Eigen::Index>& train_rows,
                       const LearnerSpec& spec) {
  std::vector<Eigen::Index> controls;
  for (const Eigen::Index i : train_rows)
    if (d.y[i] == 0.0) controls.push_back(i);
  if (controls.size() < 10)
    fail("dml-pipeline[m-hat]: training subset has fewer than 10 controls");
  return fit_learner(spec, rows_of(d.x, controls), entries_of(d.a, controls));
}

FmrInner fmr_breve_beta(const Dataset& d, const std::vector<Eigen::Index>& train_rows,
                        const DmlConfig& cfg, std::uint64_t fold_seed) {
  FmrInner out;
  out.train_rows = train_rows;
  const Eigen::Index m = static_cast<Eigen::Index>(train_rows.size());
  out.inner = make_folds(m, cfg.k_inner, mix_seed(fold_seed, 21));

  out.m_full.resize(static_cast<std::size_t>(cfg.k_inner));
  out.a_hat.resize(static_cast<std::size_t>(cfg.k_inner));
  out.w.resize(m);

  for (int j = 0; j < cfg.k_inner; ++j) {
    std::vector<Eigen::Index> fit_rows;  // global indices of the inner complement
    for (Eigen::Index t = 0; t < m; ++t)
      if (out.inner.fold_of[t] != j) fit_rows.push_back(train_rows[static_cast<std::size_t>(t)]);

    bool saw0 = false, saw1 = false;
    for (const Eigen::Index i : fit_rows) (d.y[i] == 0.0 ? saw0 : saw1) = true;
    if (!(saw0 && saw1))
      fail("dml-pipeline[fmr]: inner training split " + std::to_string(j) +
           " does not contain both classes");

    out.m_full[static_cast<std::size_t>(j)] =
        fit_learner(with_seed(cfg.learner_full, mix_seed(fold_seed, 100 + j)),
                    ax_matrix(d, fit_rows), entries_of(d.y, fit_rows));
    out.a_hat[static_cast<std::size_t>(j)] =
        fit_learner(with_seed(cfg.learner_a, mix_seed(fold_seed, 200 + j)),
                    rows_of(d.x, fit_rows), entries_of(d.a, fit_rows));
  }

  // Closed-form least-squares slope of logit(M_hat) on A - a_hat across the
  // held-out inner folds.
  double num = 0.0, den = 0.0;
  Eigen::VectorXd ax_row(d.p() + 1);
  for (Eigen::Index t = 0; t < m; ++t) {
    const Eigen::Index i = train_rows[static_cast<std::size_t>(t)];
    const int j = out.inner.fold_of[t];
    ax_row[0] = d.a[i];
    ax_row.tail(d.p()) = d.x.row(i);
    const double mhat = out.m_full[static_cast<std::size_t>(j)].predict(RowView(ax_row));
    const double w = logit(mhat);
    const double res = d.a[i] - out.a_hat[static_cast<std::size_t>(j)].predict(RowView(d.x.row(i)));
    out.w[t] = w;
    num += w * res;
    den += res * res;
  }
  if (den == 0.0)
    fail("dml-pipeline[fmr]: zero residual variance of A - a_hat");
  out.breve_beta = num / den;
  return out;
}

NuisanceFn fmr_fit_r(const Dataset& d, const FmrInner& inner, const DmlConfig& cfg,
                     std::uint64_t fold_seed) {
  if (!std::isfinite(inner.breve_beta)) fail("dml-pipeline[fmr-r]: breve_beta not finite");

  if (cfg.r_variant == RVariant::kDifference) {
    const LearnerModel t_hat =
        fit_learner(with_seed(cfg.learner_t, mix_seed(fold_seed, 300)),
                    rows_of(d.x, inner.train_rows), inner.w);
    const std::vector<LearnerModel> a_models = inner.a_hat;
    const double breve = inner.breve_beta;
    return [t_hat, a_models, breve](RowView x) {
      double abar = 0.0;
      for (const auto& mdl : a_models) abar += mdl.predict(x);
      abar /= static_cast<double>(a_models.size());
      return t_hat.predict(x) - breve * abar;
    };
  }

  // Ratio variant: r = log L(e^{-breve A}, X; Y=1) - log L(1-Y, X).
  std::vector<Eigen::Index> cases;
  for (const Eigen::Index i : inner.train_rows)
    if (d.y[i] == 1.0) cases.push_back(i);
  if (cases.size() < 10)
    fail("dml-pipeline[fmr-r]: ratio variant needs at least 10 cases");

  Eigen::VectorXd num_target(static_cast<Eigen::Index>(cases.size()));
  for (std::size_t t = 0; t < cases.size(); ++t)
    num_target[static_cast<Eigen::Index>(t)] =
        std::exp(-inner.breve_beta * d.a[cases[t]]);
  const LearnerModel num_model =
      fit_learner(with_seed(cfg.learner_t, mix_seed(fold_seed, 301)),
                  rows_of(d.x, cases), num_target);

  Eigen::VectorXd den_target(static_cast<Eigen::Index>(inner.train_rows.size()));
  for (std::size_t t = 0; t < inner.train_rows.size(); ++t)
    den_target[static_cast<Eigen::Index>(t)] = 1.0 - d.y[inner.train_rows[t]];
  const LearnerModel den_model =
      fit_learner(with_seed(cfg.learner_t, mix_seed(fold_seed, 302)),
                  rows_of(d.x, inner.train_rows), den_target);

  // The clipping rate is checked on the training rows at fit time.
  int clipped = 0;
  for (const Eigen::Index i : inner.train_rows)
    if (den_model.predict(RowView(d.x.row(i))) < kDenominatorClip) ++clipped;
  if (clipped * 20 > static_cast<int>(inner.train_rows.size()))
    fail("dml-pipeline[fmr-r]: denominator clipped on more than 5% of points; "
         "use the difference variant");

  return [num_model, den_model](RowView x) {
    const double num = std::max(num_model.predict(x), kDenominatorClip);
    const double den = std::max(den_model.predict(x), kDenominatorClip);
    return std::log(num / den);
  };
}

DmlFit fit_dml(const Dataset& d, const DmlConfig& cfg) {
  cfg.validate();
  d.validate();
  if ((d.y.array() == 1.0).count() == 0 || (d.y.array() == 0.0).count() == 0)
    fail("dml-pipeline: dataset must contain both classes");

  DmlFit fit;
  fit.fold_seed = mix_seed(cfg.seed, 1);
  fit.folds = make_folds(d.n(), cfg.k_outer, fit.fold_seed);
  fit.per_fold.resize(static_cast<std::size_t>(cfg.k_outer));

  parallel_for(static_cast<std::size_t>(cfg.k_outer), cfg.threads, [&](std::size_t k) {
    const std::uint64_t fold_seed = mix_seed(cfg.seed, 1000 + k);
    std::vector<Eigen::Index> train_rows;
    for (Eigen::Index i = 0; i < d.n(); ++i)
      if (fit.folds.fold_of[i] != static_cast<int>(k)) train_rows.push_back(i);

    bool saw0 = false, saw1 = false;
    for (const Eigen::Index i : train_rows) (d.y[i] == 0.0 ? saw0 : saw1) = true;
    if (!(saw0 && saw1))
      fail("dml-pipeline[fold " + std::to_string(k) +
           "]: outer training split does not contain both classes");

    try {
      const LearnerModel m_hat = fit_m_hat(d, train_rows, with_seed(cfg.learner_m, mix_seed(fold_seed, 10)));
      const FmrInner inner = fmr_breve_beta(d, train_rows, cfg, fold_seed);
      const NuisanceFn r_hat = fmr_fit_r(d, inner, cfg, fold_seed);

      FoldNuisance fn;
      fn.breve_beta = inner.breve_beta;
      fn.train_rows = train_rows;
      fn.eta.r = r_hat;
      fn.eta.m = [m_hat](RowView x) { return m_hat.predict(x); };
      fn.eta.psi = [r_hat](RowView x) { return expit(-r_hat(x)); };
      fit.per_fold[k] = std::move(fn);
    } catch (const Error& e) {
      fail("dml-pipeline[fold " + std::to_string(k) + "]: " + e.what());
    }
  });

  std::vector<NuisanceSet> per_fold_eta;
  per_fold_eta.reserve(fit.per_fold.size());
  for (const auto& fn : fit.per_fold) {
    per_fold_eta.push_back(fn.eta);
    fit.breve_betas.push_back(fn.breve_beta);
  }

  const NuisanceValues nv = evaluate_nuisances(d, per_fold_eta, fit.folds);
  RootOptions ropts;
  ropts.tol = 1e-10;
  fit.beta_hat = solve_beta(d, nv, 0.0, ropts);
  fit.equation_residual = std::abs(estimating_value(d, fit.beta_hat, nv));
  if (fit.equation_residual > 1e-8)
    fail("dml-pipeline: estimating equation residual above 1e-8");

  fit.inference = inference_with_bootstrap(d, fit.beta_hat, nv, nullptr,
                                           cfg.bootstrap_draws, cfg.level,
                                           mix_seed(cfg.seed, 2));
  return fit;
}

}  // namespace dblogit
