#include "dblogit/simgen.hpp"

#include <Eigen/Eigenvalues>
#include <chrono>
#include <cmath>

#include "dblogit/threading.hpp"

namespace dblogit {

SimConfig parse_sim_config(const std::string& name) {
  if (name == "hd-i") return SimConfig::kHdI;
  if (name == "hd-ii") return SimConfig::kHdII;
  if (name == "hd-iii") return SimConfig::kHdIII;
  if (name == "ml") return SimConfig::kMl;
  fail("unknown simulation config '" + name + "' (expected hd-i, hd-ii, hd-iii, ml)");
}

std::string sim_config_name(SimConfig c) {
  switch (c) {
    case SimConfig::kHdI: return "hd-i";
    case SimConfig::kHdII: return "hd-ii";
    case SimConfig::kHdIII: return "hd-iii";
    case SimConfig::kMl: return "ml";
  }
  return "?";
}

void GeneratorSpec::validate() const {
  if (n < 50) fail("GeneratorSpec: n must be >= 50");
  if (config == SimConfig::kMl) {
    if (p < 12) fail("GeneratorSpec: ml design needs p >= 12");
  } else {
    if (p < 5) fail("GeneratorSpec: hd designs need p >= 5");
  }
  if (!(case_prevalence > 0.0 && case_prevalence < 1.0))
    fail("GeneratorSpec: case_prevalence must be in (0,1)");
}

Eigen::MatrixXd hd_joint_precision(SimConfig config, int y_class, Eigen::Index p) {
  const Eigen::Index d = p + 1;  // joint (A, X)
  Eigen::MatrixXd omega = Eigen::MatrixXd::Zero(d, d);
  omega(0, 0) = 1.5;
  for (Eigen::Index j = 1; j < d; ++j) omega(j, j) = 1.2;
  for (Eigen::Index j = 1; j <= 4; ++j) {
    omega(0, j) = 0.2;
    omega(j, 0) = 0.2;
  }
  if (config == SimConfig::kHdII && y_class == 0) {
    // Control-class coupling among X1, X2, X3.
    for (Eigen::Index i = 1; i <= 3; ++i)
      for (Eigen::Index j = 1; j <= 3; ++j)
        if (i != j) omega(i, j) = 0.075;
  }
  return omega;
}

namespace {

struct CholPair {
  Eigen::MatrixXd chol;  // lower factor of the covariance
  double logdet_omega = 0.0;
};

CholPair covariance_factor(const Eigen::MatrixXd& omega) {
  Eigen::LLT<Eigen::MatrixXd> llt_omega(omega);
  if (llt_omega.info() != Eigen::Success)
    fail("generate: precision matrix is not positive definite");
  CholPair out;
  out.logdet_omega =
      2.0 * llt_omega.matrixL().toDenseMatrix().diagonal().array().log().sum();
  const Eigen::MatrixXd sigma =
      llt_omega.solve(Eigen::MatrixXd::Identity(omega.rows(), omega.cols()));
  Eigen::LLT<Eigen::MatrixXd> llt_sigma(sigma);
  if (llt_sigma.info() != Eigen::Success)
    fail("generate: covariance factorization failed");
  out.chol = llt_sigma.matrixL();
  return out;
}

// Nodes/weights such that E f(N(mu,1)) ~= sum_i w_i f(mu + sqrt(2) t_i).
struct GaussHermite {
  Eigen::VectorXd nodes, weights;
};

GaussHermite gauss_hermite(int m) {
  Eigen::MatrixXd jac = Eigen::MatrixXd::Zero(m, m);
  for (int k = 1; k < m; ++k) {
    const double off = std::sqrt(k / 2.0);
    jac(k - 1, k) = off;
    jac(k, k - 1) = off;
  }
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(jac);
  GaussHermite gh;
  gh.nodes = es.eigenvalues();
  gh.weights = es.eigenvectors().row(0).array().square();
  return gh;
}

}  // namespace

Eigen::VectorXd ml_basis_a(RowView x) {
  Eigen::VectorXd f(8);
  f << expit(-x[0]), expit(-x[1]), std::sin(x[2]), std::cos(x[3]),
      x[4] > 0.0 ? 1.0 : 0.0, x[5] > 0.0 ? 1.0 : 0.0, x[6] * x[7], x[8] * x[9];
  return f;
}

Eigen::VectorXd ml_basis_r(RowView x) {
  Eigen::VectorXd f(9);
  const double s7 = std::sin(x[6]);
  f << x[0] * x[1] * x[2], x[3] * x[4], x[5] * x[5] * x[5], s7 * s7,
      std::cos(x[7]), 1.0 / (1.0 + x[8] * x[8]), expit(-x[9]),
      x[10] > 0.0 ? 1.0 : 0.0, x[11] > 0.0 ? 1.0 : 0.0;
  return f;
}

const Eigen::VectorXd& ml_zeta_a() {
  static const Eigen::VectorXd z = [] {
    Eigen::VectorXd v(8);
    v << 2.0, -2.0, 1.0, 1.0, 0.5, -0.5, 0.2, 0.2;
    return v;
  }();
  return z;
}

const Eigen::VectorXd& ml_zeta_r() {
  static const Eigen::VectorXd z = [] {
    Eigen::VectorXd v(9);
    v << 0.1, 0.1, 0.1, -0.5, 0.5, 1.0, -1.0, 0.25, -0.25;
    return v;
  }();
  return z;
}

namespace {

GeneratedData generate_hd_gaussian(const GeneratorSpec& spec) {
  const Eigen::Index p = spec.p;
  const Eigen::Index d = p + 1;

  const Eigen::MatrixXd omega1 = hd_joint_precision(spec.config, 1, p);
  const Eigen::MatrixXd omega0 = hd_joint_precision(spec.config, 0, p);
  const CholPair f1 = covariance_factor(omega1);
  const CholPair f0 = covariance_factor(omega0);

  Eigen::VectorXd mu1 = Eigen::VectorXd::Zero(d);
  mu1[0] = 0.4;
  mu1[1] = -0.25;
  mu1[2] = -0.25;

  // Log posterior odds of Y=1 given (A,X) from the two class densities:
  // beta0*A + gamma_lin'X + (1/2) X'Q X + const.
  const Eigen::VectorXd coef = omega1 * mu1;
  const double beta0 = coef[0];
  const Eigen::VectorXd gamma_lin = coef.tail(p);
  Eigen::MatrixXd quad;
  if (spec.config == SimConfig::kHdII)
    quad = (omega0 - omega1).bottomRightCorner(p, p);
  const double r0_const = std::log(spec.case_prevalence / (1.0 - spec.case_prevalence)) -
                          0.5 * mu1.dot(omega1 * mu1) +
                          0.5 * (f1.logdet_omega - f0.logdet_omega);

  // m0(x) = E[A | X=x, Y=0] from the control-class precision.
  const Eigen::VectorXd m0_coef = -omega0.row(0).tail(p) / omega0(0, 0);

  GeneratedData out;
  out.true_beta = beta0;
  out.m0_available = true;
  out.a0_available = false;
  const bool has_quad = quad.size() > 0;
  out.r0 = [gamma_lin, quad, r0_const, has_quad](RowView x) {
    double v = gamma_lin.dot(x) + r0_const;
    if (has_quad) v += 0.5 * x.dot(quad * x);
    return v;
  };
  out.m0 = [m0_coef](RowView x) { return m0_coef.dot(x); };

  Dataset& ds = out.data;
  ds.y.resize(spec.n);
  ds.a.resize(spec.n);
  ds.x.resize(spec.n, p);
  Rng rng = make_rng(spec.seed);
  std::uniform_real_distribution<double> unif(0.0, 1.0);
  std::normal_distribution<double> normal(0.0, 1.0);
  Eigen::VectorXd g(d), z(d);
  for (Eigen::Index i = 0; i < spec.n; ++i) {
    const bool is_case = unif(rng) < spec.case_prevalence;
    for (Eigen::Index j = 0; j < d; ++j) g[j] = normal(rng);
    if (is_case) {
      z.noalias() = f1.chol * g;
      z += mu1;
    } else {
      z.noalias() = f0.chol * g;
    }
    ds.y[i] = is_case ? 1.0 : 0.0;
    ds.a[i] = z[0];
    ds.x.row(i) = z.tail(p);
  }
  return out;
}

GeneratedData generate_hd_iii(const GeneratorSpec& spec) {
  const Eigen::Index p = spec.p;
  Eigen::MatrixXd sigma = Eigen::MatrixXd::Zero(p, p);
  for (Eigen::Index j = 0; j < p; ++j) sigma(j, j) = 0.5;
  for (Eigen::Index i = 0; i < 4; ++i)
    for (Eigen::Index j = 0; j < 4; ++j)
      if (i != j) sigma(i, j) = 0.15;
  Eigen::LLT<Eigen::MatrixXd> llt(sigma);
  if (llt.info() != Eigen::Success)
    fail("generate: hd-iii covariance not positive definite");
  const Eigen::MatrixXd chol = llt.matrixL();

  GeneratedData out;
  out.true_beta = 0.5;
  out.m0_available = false;
  out.a0_available = false;
  out.r0 = [](RowView x) {
    return 0.25 * x[0] + 0.25 * x[1] + 0.1 * x[2] + 0.1 * x[3];
  };

  Dataset& ds = out.data;
  ds.y.resize(spec.n);
  ds.a.resize(spec.n);
  ds.x.resize(spec.n, p);
  Rng rng = make_rng(spec.seed);
  std::uniform_real_distribution<double> unif(0.0, 1.0);
  std::normal_distribution<double> normal(0.0, 1.0);
  Eigen::VectorXd g(p), x(p);
  for (Eigen::Index i = 0; i < spec.n; ++i) {
    for (Eigen::Index j = 0; j < p; ++j) g[j] = normal(rng);
    x.noalias() = chol * g;
    const double a_mean = 0.15 * (x[0] + x[1] + x[2] + x[3]) +
                          0.075 * (x[0] * x[1] + x[0] * x[2] + x[1] * x[2]);
    const double a = a_mean + normal(rng);
    const double pr = expit(0.5 * a + 0.25 * x[0] + 0.25 * x[1] + 0.1 * x[2] + 0.1 * x[3]);
    ds.a[i] = a;
    ds.x.row(i) = x;
    ds.y[i] = unif(rng) < pr ? 1.0 : 0.0;
  }
  return out;
}

GeneratedData generate_ml(const GeneratorSpec& spec) {
  const Eigen::Index p = spec.p;
  Eigen::MatrixXd sigma = Eigen::MatrixXd::Constant(p, p, 0.2);
  sigma.diagonal().setOnes();
  Eigen::LLT<Eigen::MatrixXd> llt(sigma);
  if (llt.info() != Eigen::Success)
    fail("generate: ml covariance not positive definite");
  const Eigen::MatrixXd chol = llt.matrixL();

  const double beta0 = 1.0;
  auto a0 = [](RowView x) { return ml_zeta_a().dot(ml_basis_a(x)); };
  auto r0 = [](RowView x) { return ml_zeta_r().dot(ml_basis_r(x)); };

  GeneratedData out;
  out.true_beta = beta0;
  out.r0 = r0;
  out.a0 = a0;
  out.a0_available = true;
  out.m0_available = true;
  // m0(x) = E[A | Y=0, X=x] by Gauss-Hermite quadrature over A ~ N(a0(x), 1).
  static const GaussHermite gh = gauss_hermite(40);
  out.m0 = [a0, r0, beta0](RowView x) {
    const double mu = a0(x);
    const double rv = r0(x);
    double num = 0.0, den = 0.0;
    for (Eigen::Index q = 0; q < gh.nodes.size(); ++q) {
      const double a = mu + std::sqrt(2.0) * gh.nodes[q];
      const double w = gh.weights[q] * (1.0 - expit(beta0 * a + rv));
      num += w * a;
      den += w;
    }
    return num / den;
  };

  Dataset& ds = out.data;
  ds.y.resize(spec.n);
  ds.a.resize(spec.n);
  ds.x.resize(spec.n, p);
  Rng rng = make_rng(spec.seed);
  std::uniform_real_distribution<double> unif(0.0, 1.0);
  std::normal_distribution<double> normal(0.0, 1.0);
  Eigen::VectorXd g(p), x(p);
  for (Eigen::Index i = 0; i < spec.n; ++i) {
    for (Eigen::Index j = 0; j < p; ++j) g[j] = normal(rng);
    x.noalias() = chol * g;
    x = x.cwiseMax(-2.0).cwiseMin(2.0);
    ds.x.row(i) = x;
    RowView xv(ds.x.row(i));
    const double a = a0(xv) + normal(rng);
    ds.a[i] = a;
    ds.y[i] = unif(rng) < expit(beta0 * a + r0(xv)) ? 1.0 : 0.0;
  }
  return out;
}

}  // namespace

GeneratedData generate(const GeneratorSpec& spec) {
  spec.validate();
  GeneratedData out;
  switch (spec.config) {
    case SimConfig::kHdI:
    case SimConfig::kHdII:
      out = generate_hd_gaussian(spec);
      break;
    case SimConfig::kHdIII:
      out = generate_hd_iii(spec);
      break;
    case SimConfig::kMl:
      out = generate_ml(spec);
      break;
  }
  out.data.validate();
  return out;
}

void aggregate_report(SimReport& report) {
  double sq = 0.0, sum = 0.0, covered = 0.0, seconds = 0.0;
  int ok = 0, failures = 0;
  for (const auto& rec : report.records) {
    seconds += rec.seconds;
    if (!rec.ok) {
      ++failures;
      continue;
    }
    ++ok;
    const double err = rec.beta_hat - report.true_beta;
    sq += err * err;
    sum += rec.beta_hat;
    if (rec.ci_low <= report.true_beta && report.true_beta <= rec.ci_high)
      covered += 1.0;
  }
  report.failures = failures;
  report.total_seconds = seconds;
  if (ok > 0) {
    report.mse = sq / ok;
    report.bias = std::abs(sum / ok - report.true_beta);
    report.cp = covered / ok;
  } else {
    report.mse = report.bias = report.cp = 0.0;
  }
}

SimReport run_replicates(const GeneratorSpec& spec, const Estimator& estimator,
                         int replicates, int threads) {
  if (replicates < 1) fail("run_replicates: need at least one replicate");
  spec.validate();

  SimReport report;
  report.records.resize(static_cast<std::size_t>(replicates));

  parallel_for(static_cast<std::size_t>(replicates), threads, [&](std::size_t r) {
    const auto t0 = std::chrono::steady_clock::now();
    const std::uint64_t rep_seed = mix_seed(spec.seed, r);
    ReplicateRecord rec;
    rec.replicate = static_cast<int>(r);
    try {
      GeneratorSpec rep_spec = spec;
      rep_spec.seed = rep_seed;
      const GeneratedData gen = generate(rep_spec);
      rec = estimator(gen, rep_seed);
      rec.replicate = static_cast<int>(r);
      rec.ok = true;
    } catch (const std::exception& e) {
      rec.ok = false;
      rec.error = e.what();
    }
    rec.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    report.records[r] = rec;
  });

  // The true beta is a pure function of the configuration; probe it once.
  {
    GeneratorSpec probe = spec;
    probe.n = 50;
    report.true_beta = generate(probe).true_beta;
  }
  aggregate_report(report);
  if (report.failures * 20 > replicates)
    fail("run_replicates: " + std::to_string(report.failures) + " of " +
         std::to_string(replicates) + " replicates failed (>5%)");
  return report;
}

}  // namespace dblogit
