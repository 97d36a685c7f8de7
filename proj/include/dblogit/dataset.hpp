#pragma once

#include <Eigen/Dense>
#include <cstdint>
#include <string>
#include <vector>

#include "dblogit/common.hpp"

namespace dblogit {

// Binary-response dataset with a real exposure and dense covariates.
// Immutable after construction; validate() asserts the type invariants.
struct Dataset {
  Eigen::VectorXd y;  // entries exactly 0 or 1
  Eigen::VectorXd a;
  Eigen::MatrixXd x;  // n rows, p columns
  bool has_intercept = false;  // column 0 of x is identically 1

  Eigen::Index n() const { return y.size(); }
  Eigen::Index p() const { return x.cols(); }
  void validate() const;
};

struct FoldAssignment {
  Eigen::VectorXi fold_of;  // values in [0, k)
  int k = 0;

  Eigen::Index n() const { return fold_of.size(); }
  std::vector<int> fold_sizes() const;
  void validate() const;  // balanced partition, every sample assigned
};

// Column-role map for delimited input. x_cols lists covariates by name;
// x_rest selects every column that is not the response or exposure.
struct ColumnSchema {
  std::string y_col;
  std::string a_col;
  std::vector<std::string> x_cols;
  bool x_rest = false;
  bool add_intercept = false;
};

// Comma-separated, header row required, '.' decimal point. Parse errors
// name the offending data row and column.
Dataset read_delimited(const std::string& path, const ColumnSchema& schema);

void write_delimited(const std::string& path, const Dataset& d,
                     const std::string& y_name = "y",
                     const std::string& a_name = "a");

// Knot rule for the 3-column natural cubic spline block: boundary knots at
// the column min/max, interior knots at the 1/3 and 2/3 empirical quantiles
// (type-7 interpolation).
struct NaturalSplineKnots {
  double k1, k2, k3, k4;  // strictly increasing
};

NaturalSplineKnots natural_spline_knots(const Eigen::VectorXd& col);

// Evaluates the three natural-spline basis functions at v:
//   N1(v) = v,  N2(v) = d1(v) - d3(v),  N3(v) = d2(v) - d3(v)
// with d_k(v) = [(v - k_k)_+^3 - (v - k4)_+^3] / (k4 - k_k).
Eigen::Vector3d natural_spline_basis(double v, const NaturalSplineKnots& k);

// Output columns: the q originals, all q(q-1)/2 pairwise products in
// lexicographic pair order, then 3 spline columns per continuous variable
// in original column order.
Eigen::MatrixXd basis_expand(const Eigen::MatrixXd& x,
                             const std::vector<bool>& continuous_mask);

// Keeps every case and a uniformly random subset of controls sized so the
// realized prevalence is within one sample of the target. Retained rows are
// unchanged and keep their original relative order.
Dataset downsample_controls(const Dataset& d, double target_prevalence,
                            std::uint64_t seed);

// Uniformly random balanced partition into k folds; sizes differ by at
// most one.
FoldAssignment make_folds(Eigen::Index n, int k, std::uint64_t seed);

}  // namespace dblogit
