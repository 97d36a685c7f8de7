#include "dblogit/dataset.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <numeric>
#include <set>
#include <sstream>

namespace dblogit {

void Dataset::validate() const {
  if (a.size() != n() || x.rows() != n())
    fail("Dataset: lengths of y, a and row count of x differ");
  for (Eigen::Index i = 0; i < n(); ++i) {
    if (y[i] != 0.0 && y[i] != 1.0)
      fail("Dataset: y[" + std::to_string(i) + "] is not 0 or 1");
  }
  if (!y.allFinite() || !a.allFinite() || !x.allFinite())
    fail("Dataset: non-finite entry");
  if (has_intercept) {
    if (x.cols() == 0 || (x.col(0).array() != 1.0).any())
      fail("Dataset: has_intercept set but column 0 is not identically 1");
  }
}

std::vector<int> FoldAssignment::fold_sizes() const {
  std::vector<int> sizes(k, 0);
  for (Eigen::Index i = 0; i < fold_of.size(); ++i) ++sizes[fold_of[i]];
  return sizes;
}

void FoldAssignment::validate() const {
  if (k < 1) fail("FoldAssignment: k < 1");
  for (Eigen::Index i = 0; i < fold_of.size(); ++i) {
    if (fold_of[i] < 0 || fold_of[i] >= k)
      fail("FoldAssignment: fold index out of range at " + std::to_string(i));
  }
  const auto sizes = fold_sizes();
  const auto [lo, hi] = std::minmax_element(sizes.begin(), sizes.end());
  if (*hi - *lo > 1) fail("FoldAssignment: fold sizes differ by more than 1");
}

namespace {

std::vector<std::string> split_csv_line(const std::string& line) {
  std::vector<std::string> cells;
  std::string cell;
  std::stringstream ss(line);
  while (std::getline(ss, cell, ',')) cells.push_back(cell);
  if (!line.empty() && line.back() == ',') cells.push_back("");
  return cells;
}

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r\n");
  if (b == std::string::npos) return "";
  const auto e = s.find_last_not_of(" \t\r\n");
  return s.substr(b, e - b + 1);
}

double parse_cell(const std::string& raw, Eigen::Index data_row,
                  const std::string& col_name) {
  const std::string s = trim(raw);
  double value = 0.0;
  const auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), value);
  if (ec != std::errc() || ptr != s.data() + s.size())
    fail("read_delimited: non-numeric cell '" + s + "' at row " +
         std::to_string(data_row) + ", column '" + col_name + "'");
  return value;
}

}  // namespace

Dataset read_delimited(const std::string& path, const ColumnSchema& schema) {
  std::ifstream in(path);
  if (!in) fail("read_delimited: cannot open '" + path + "'");

  std::string line;
  if (!std::getline(in, line)) fail("read_delimited: empty file '" + path + "'");
  std::vector<std::string> header = split_csv_line(line);
  for (auto& h : header) h = trim(h);

  auto column_index = [&](const std::string& name) -> Eigen::Index {
    const auto it = std::find(header.begin(), header.end(), name);
    if (it == header.end())
      fail("read_delimited: column '" + name + "' not found in header");
    return it - header.begin();
  };

  const Eigen::Index y_idx = column_index(schema.y_col);
  const Eigen::Index a_idx = column_index(schema.a_col);

  std::vector<Eigen::Index> x_idx;
  std::vector<std::string> x_names;
  if (schema.x_rest) {
    for (Eigen::Index j = 0; j < static_cast<Eigen::Index>(header.size()); ++j) {
      if (j != y_idx && j != a_idx) {
        x_idx.push_back(j);
        x_names.push_back(header[j]);
      }
    }
  } else {
    for (const auto& name : schema.x_cols) {
      x_idx.push_back(column_index(name));
      x_names.push_back(name);
    }
  }
  if (x_idx.empty()) fail("read_delimited: schema names no covariate columns");

  std::vector<double> ys, as;
  std::vector<std::vector<double>> xs;
  Eigen::Index data_row = 0;
  while (std::getline(in, line)) {
    if (trim(line).empty()) continue;
    ++data_row;
    const auto cells = split_csv_line(line);
    if (cells.size() != header.size())
      fail("read_delimited: row " + std::to_string(data_row) + " has " +
           std::to_string(cells.size()) + " cells, header has " +
           std::to_string(header.size()));
    const double yv = parse_cell(cells[y_idx], data_row, schema.y_col);
    if (yv != 0.0 && yv != 1.0)
      fail("read_delimited: response value " + std::to_string(yv) +
           " outside {0,1} at row " + std::to_string(data_row));
    ys.push_back(yv);
    as.push_back(parse_cell(cells[a_idx], data_row, schema.a_col));
    std::vector<double> row;
    row.reserve(x_idx.size());
    for (std::size_t j = 0; j < x_idx.size(); ++j)
      row.push_back(parse_cell(cells[x_idx[j]], data_row, x_names[j]));
    xs.push_back(std::move(row));
  }

  const Eigen::Index n = static_cast<Eigen::Index>(ys.size());
  if (n == 0) fail("read_delimited: no data rows in '" + path + "'");
  const Eigen::Index q = static_cast<Eigen::Index>(x_idx.size());
  const Eigen::Index shift = schema.add_intercept ? 1 : 0;

  Dataset d;
  d.y = Eigen::Map<Eigen::VectorXd>(ys.data(), n);
  d.a = Eigen::Map<Eigen::VectorXd>(as.data(), n);
  d.x.resize(n, q + shift);
  if (schema.add_intercept) d.x.col(0).setOnes();
  for (Eigen::Index i = 0; i < n; ++i)
    for (Eigen::Index j = 0; j < q; ++j) d.x(i, j + shift) = xs[i][j];
  d.has_intercept = schema.add_intercept;
  d.validate();
  return d;
}

void write_delimited(const std::string& path, const Dataset& d,
                     const std::string& y_name, const std::string& a_name) {
  std::ofstream out(path);
  if (!out) fail("write_delimited: cannot open '" + path + "' for writing");
  out.precision(17);
  out << y_name << "," << a_name;
  for (Eigen::Index j = 0; j < d.p(); ++j) out << ",x" << (j + 1);
  out << "\n";
  for (Eigen::Index i = 0; i < d.n(); ++i) {
    out << d.y[i] << "," << d.a[i];
    for (Eigen::Index j = 0; j < d.p(); ++j) out << "," << d.x(i, j);
    out << "\n";
  }
}

namespace {

// Type-7 empirical quantile (linear interpolation of order statistics).
double quantile_type7(std::vector<double> v, double prob) {
  std::sort(v.begin(), v.end());
  const double h = (static_cast<double>(v.size()) - 1.0) * prob;
  const std::size_t lo = static_cast<std::size_t>(std::floor(h));
  const std::size_t hi = std::min(lo + 1, v.size() - 1);
  return v[lo] + (h - static_cast<double>(lo)) * (v[hi] - v[lo]);
}

}  // namespace

NaturalSplineKnots natural_spline_knots(const Eigen::VectorXd& col) {
  std::vector<double> v(col.data(), col.data() + col.size());
  std::set<double> distinct(v.begin(), v.end());
  if (distinct.size() < 4)
    fail("basis_expand: continuous column has fewer than 4 distinct values");
  NaturalSplineKnots k;
  k.k1 = *distinct.begin();
  k.k4 = *distinct.rbegin();
  k.k2 = quantile_type7(v, 1.0 / 3.0);
  k.k3 = quantile_type7(v, 2.0 / 3.0);
  if (!(k.k1 < k.k4) || !(k.k2 < k.k4) || !(k.k3 < k.k4))
    fail("basis_expand: spline knots are not distinct enough");
  return k;
}

Eigen::Vector3d natural_spline_basis(double v, const NaturalSplineKnots& k) {
  auto cube_plus = [](double u) { return u > 0.0 ? u * u * u : 0.0; };
  auto d = [&](double knot) {
    return (cube_plus(v - knot) - cube_plus(v - k.k4)) / (k.k4 - knot);
  };
  const double d1 = d(k.k1);
  const double d2 = d(k.k2);
  const double d3 = d(k.k3);
  return {v, d1 - d3, d2 - d3};
}

Eigen::MatrixXd basis_expand(const Eigen::MatrixXd& x,
                             const std::vector<bool>& continuous_mask) {
  const Eigen::Index n = x.rows();
  const Eigen::Index q = x.cols();
  if (q < 1) fail("basis_expand: need at least one column");
  if (static_cast<Eigen::Index>(continuous_mask.size()) != q)
    fail("basis_expand: continuous_mask length does not match column count");

  const Eigen::Index n_cont =
      std::count(continuous_mask.begin(), continuous_mask.end(), true);
  const Eigen::Index out_cols = q + q * (q - 1) / 2 + 3 * n_cont;
  Eigen::MatrixXd out(n, out_cols);

  out.leftCols(q) = x;
  Eigen::Index c = q;
  for (Eigen::Index j = 0; j < q; ++j)
    for (Eigen::Index l = j + 1; l < q; ++l)
      out.col(c++) = x.col(j).cwiseProduct(x.col(l));
  for (Eigen::Index j = 0; j < q; ++j) {
    if (!continuous_mask[j]) continue;
    const NaturalSplineKnots knots = natural_spline_knots(x.col(j));
    for (Eigen::Index i = 0; i < n; ++i)
      out.block<1, 3>(i, c) = natural_spline_basis(x(i, j), knots).transpose();
    c += 3;
  }
  return out;
}

Dataset downsample_controls(const Dataset& d, double target_prevalence,
                            std::uint64_t seed) {
  if (!(target_prevalence > 0.0 && target_prevalence < 1.0))
    fail("downsample_controls: target prevalence must be in (0,1)");
  std::vector<Eigen::Index> cases, controls;
  for (Eigen::Index i = 0; i < d.n(); ++i)
    (d.y[i] == 1.0 ? cases : controls).push_back(i);
  const double current =
      static_cast<double>(cases.size()) / static_cast<double>(d.n());
  if (current >= target_prevalence)
    fail("downsample_controls: target unreachable, prevalence " +
         std::to_string(current) + " is not below target " +
         std::to_string(target_prevalence) + " (would require dropping cases)");

  const auto keep = static_cast<Eigen::Index>(std::llround(
      static_cast<double>(cases.size()) * (1.0 - target_prevalence) /
      target_prevalence));

  Rng rng = make_rng(seed);
  std::shuffle(controls.begin(), controls.end(), rng);
  controls.resize(static_cast<std::size_t>(keep));

  std::vector<Eigen::Index> rows = cases;
  rows.insert(rows.end(), controls.begin(), controls.end());
  std::sort(rows.begin(), rows.end());

  Dataset out;
  const Eigen::Index m = static_cast<Eigen::Index>(rows.size());
  out.y.resize(m);
  out.a.resize(m);
  out.x.resize(m, d.p());
  for (Eigen::Index i = 0; i < m; ++i) {
    out.y[i] = d.y[rows[i]];
    out.a[i] = d.a[rows[i]];
    out.x.row(i) = d.x.row(rows[i]);
  }
  out.has_intercept = d.has_intercept;
  return out;
}

FoldAssignment make_folds(Eigen::Index n, int k, std::uint64_t seed) {
  if (k < 2) fail("make_folds: need k >= 2");
  if (static_cast<Eigen::Index>(k) > n) fail("make_folds: k > n");
  std::vector<Eigen::Index> order(static_cast<std::size_t>(n));
  std::iota(order.begin(), order.end(), 0);
  Rng rng = make_rng(seed);
  std::shuffle(order.begin(), order.end(), rng);

  FoldAssignment fa;
  fa.k = k;
  fa.fold_of.resize(n);
  for (Eigen::Index pos = 0; pos < n; ++pos)
    fa.fold_of[order[pos]] = static_cast<int>(pos % k);
  return fa;
}

}  // namespace dblogit
