#pragma once

#include <Eigen/Dense>
#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "dblogit/dataset.hpp"
#include "dblogit/score.hpp"

namespace dblogit {

enum class SimConfig { kHdI, kHdII, kHdIII, kMl };

SimConfig parse_sim_config(const std::string& name);  // "hd-i" ... "ml"
std::string sim_config_name(SimConfig c);

struct GeneratorSpec {
  SimConfig config = SimConfig::kHdI;
  Eigen::Index n = 1000;
  Eigen::Index p = 200;  // ml defaults to 20 when left at 0
  std::uint64_t seed = 1;
  // Class prior P(Y=1) for the hd-i / hd-ii conditional-Gaussian designs.
  double case_prevalence = 0.5;
  void validate() const;
};

struct GeneratedData {
  Dataset data;
  double true_beta = 0.0;
  NuisanceFn r0;           // always available
  NuisanceFn m0;           // null when m0_available is false
  NuisanceFn a0;           // E[A|X], available for the ml design
  bool m0_available = false;
  bool a0_available = false;
};

// Joint precision of (A, X) for the conditional-Gaussian designs
// (hd-i, and per-class for hd-ii); exposed so tests can assert the
// constructed blocks literally.
Eigen::MatrixXd hd_joint_precision(SimConfig config, int y_class, Eigen::Index p);

// Basis functions and loadings of the nonparametric design.
Eigen::VectorXd ml_basis_a(RowView x);  // 8 components
Eigen::VectorXd ml_basis_r(RowView x);  // 9 components
const Eigen::VectorXd& ml_zeta_a();
const Eigen::VectorXd& ml_zeta_r();

GeneratedData generate(const GeneratorSpec& spec);

struct ReplicateRecord {
  int replicate = -1;
  bool ok = false;
  double beta_hat = 0.0, se = 0.0, ci_low = 0.0, ci_high = 0.0, p_value = 1.0;
  std::string error;
  double seconds = 0.0;  // informational; never serialized into result records
};

struct SimReport {
  std::vector<ReplicateRecord> records;
  double true_beta = 0.0;
  double mse = 0.0;
  double bias = 0.0;  // |mean(beta_hat) - beta0|
  double cp = 0.0;
  int failures = 0;
  double total_seconds = 0.0;
};

// Recomputes mse/bias/cp/failures from the stored records.
void aggregate_report(SimReport& report);

using Estimator =
    std::function<ReplicateRecord(const GeneratedData& gen, std::uint64_t seed)>;

// Replicate r uses the generator and estimator seeds derived from
// (spec.seed, r); the result is independent of the parallelism degree.
// More than 5% failed replicates is an error.
SimReport run_replicates(const GeneratorSpec& spec, const Estimator& estimator,
                         int replicates, int threads);

}  // namespace dblogit
