#ifndef AUGMATCH_DATA_HPP
#define AUGMATCH_DATA_HPP

#include <Eigen/Dense>
#include <algorithm>
#include <charconv>
#include <cstdio>
#include <fstream>
#include <map>
#include <numeric>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "augmatch/common.hpp"

namespace augmatch {

// Observed units: covariates v (n x p), binary treatment a, outcome y, and
// the design matrix w = (1, v) used by the propensity model. Immutable after
// construction.
struct Dataset {
  Eigen::MatrixXd v;
  Eigen::VectorXi a;
  Eigen::VectorXd y;
  Eigen::MatrixXd w;

  int n() const { return static_cast<int>(y.size()); }
  int p() const { return static_cast<int>(v.cols()); }
  int n_treated() const { return a.sum(); }
  int n_control() const { return n() - n_treated(); }

  static Dataset make(Eigen::MatrixXd v_in, Eigen::VectorXi a_in, Eigen::VectorXd y_in) {
    const auto n = y_in.size();
    if (n < 2) throw validation_error("dataset needs at least 2 rows");
    if (v_in.rows() != n || a_in.size() != n) {
      throw validation_error("dataset column lengths differ");
    }
    if (v_in.cols() < 1) throw validation_error("dataset needs at least one covariate");
    for (Eigen::Index i = 0; i < n; ++i) {
      if (a_in[i] != 0 && a_in[i] != 1) throw validation_error("non-binary treatment");
      if (!std::isfinite(y_in[i])) throw validation_error("non-finite outcome");
    }
    if (!v_in.allFinite()) throw validation_error("non-finite covariate");
    Dataset d;
    d.w.resize(n, v_in.cols() + 1);
    d.w.col(0).setOnes();
    d.w.rightCols(v_in.cols()) = v_in;
    d.v = std::move(v_in);
    d.a = std::move(a_in);
    d.y = std::move(y_in);
    return d;
  }

  Dataset subset(const std::vector<int>& idx) const {
    const int m = static_cast<int>(idx.size());
    Eigen::MatrixXd sv(m, p());
    Eigen::VectorXi sa(m);
    Eigen::VectorXd sy(m);
    for (int r = 0; r < m; ++r) {
      sv.row(r) = v.row(idx[r]);
      sa[r] = a[idx[r]];
      sy[r] = y[idx[r]];
    }
    return Dataset::make(std::move(sv), std::move(sa), std::move(sy));
  }
};

// Column-name map for CSV ingestion. Empty covariate list means "every column
// that is not the treatment or the outcome, in file order".
struct CsvSchema {
  std::string treatment = "a";
  std::string outcome = "y";
  std::vector<std::string> covariates;
};

namespace detail {

inline std::vector<std::string> split_csv_line(const std::string& line) {
  std::vector<std::string> out;
  std::string cell;
  std::stringstream ss(line);
  while (std::getline(ss, cell, ',')) {
    // trim whitespace and CR
    const auto b = cell.find_first_not_of(" \t\r");
    const auto e = cell.find_last_not_of(" \t\r");
    out.push_back(b == std::string::npos ? std::string() : cell.substr(b, e - b + 1));
  }
  if (!line.empty() && line.back() == ',') out.emplace_back();
  return out;
}

inline double parse_number(const std::string& s, int row, const std::string& col) {
  try {
    std::size_t pos = 0;
    double x = std::stod(s, &pos);
    if (pos != s.size()) throw std::invalid_argument(s);
    return x;
  } catch (const std::exception&) {
    throw validation_error("non-numeric cell '" + s + "' in column " + col + ", row " +
                           std::to_string(row));
  }
}

inline int parse_treatment(const std::string& s, int row) {
  if (s == "0" || s == "0.0") return 0;
  if (s == "1" || s == "1.0") return 1;
  throw validation_error("non-binary treatment value '" + s + "' at row " + std::to_string(row));
}

}  // namespace detail

inline Dataset load_csv(const std::string& path, const CsvSchema& schema = {}) {
  std::ifstream in(path);
  if (!in) throw validation_error("cannot open file: " + path);
  std::string header;
  if (!std::getline(in, header)) throw validation_error("empty file: " + path);
  const auto names = detail::split_csv_line(header);
  std::map<std::string, int> col;
  for (int j = 0; j < static_cast<int>(names.size()); ++j) col[names[j]] = j;

  auto require = [&](const std::string& name) {
    auto it = col.find(name);
    if (it == col.end()) throw validation_error("missing column: " + name);
    return it->second;
  };
  const int a_col = require(schema.treatment);
  const int y_col = require(schema.outcome);

  std::vector<int> v_cols;
  if (schema.covariates.empty()) {
    for (int j = 0; j < static_cast<int>(names.size()); ++j) {
      if (j != a_col && j != y_col) v_cols.push_back(j);
    }
  } else {
    for (const auto& name : schema.covariates) v_cols.push_back(require(name));
  }
  if (v_cols.empty()) throw validation_error("no covariate columns resolved");

  std::vector<double> yv;
  std::vector<int> av;
  std::vector<double> vv;
  std::string line;
  int row = 0;
  while (std::getline(in, line)) {
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    ++row;
    const auto cells = detail::split_csv_line(line);
    if (cells.size() != names.size()) {
      throw validation_error("row " + std::to_string(row) + " has " +
                             std::to_string(cells.size()) + " cells, expected " +
                             std::to_string(names.size()));
    }
    av.push_back(detail::parse_treatment(cells[a_col], row));
    yv.push_back(detail::parse_number(cells[y_col], row, schema.outcome));
    for (int j : v_cols) vv.push_back(detail::parse_number(cells[j], row, names[j]));
  }
  if (row == 0) throw validation_error("no data rows in " + path);

  const int n = row;
  const int p = static_cast<int>(v_cols.size());
  Eigen::MatrixXd v(n, p);
  Eigen::VectorXi a(n);
  Eigen::VectorXd y(n);
  for (int i = 0; i < n; ++i) {
    a[i] = av[i];
    y[i] = yv[i];
    for (int j = 0; j < p; ++j) v(i, j) = vv[static_cast<std::size_t>(i) * p + j];
  }
  return Dataset::make(std::move(v), std::move(a), std::move(y));
}

// Writes the dataset back as w1,...,wp,a,y (+ optional derived columns),
// 17 significant digits so a round-trip is bit-exact.
inline void write_csv(const Dataset& d, const std::string& path,
                      const std::vector<std::pair<std::string, Eigen::VectorXd>>& extra = {}) {
  std::ofstream out(path);
  if (!out) throw validation_error("cannot write file: " + path);
  for (int j = 0; j < d.p(); ++j) out << "w" << (j + 1) << ",";
  out << "a,y";
  for (const auto& [name, _] : extra) out << "," << name;
  out << "\n";
  char buf[64];
  auto emit = [&](double x) {
    std::snprintf(buf, sizeof(buf), "%.17g", x);
    out << buf;
  };
  for (int i = 0; i < d.n(); ++i) {
    for (int j = 0; j < d.p(); ++j) {
      emit(d.v(i, j));
      out << ",";
    }
    out << d.a[i] << ",";
    emit(d.y[i]);
    for (const auto& [_, colv] : extra) {
      out << ",";
      emit(colv[i]);
    }
    out << "\n";
  }
}

// Disjoint partition into a nuisance-fitting subset (idx_a, size m_n) and an
// estimation subset (idx_b, size n - m_n).
struct SplitIndex {
  std::vector<int> idx_a;
  std::vector<int> idx_b;
  std::uint64_t seed = 0;

  int m_n() const { return static_cast<int>(idx_a.size()); }
  int n_eff() const { return static_cast<int>(idx_b.size()); }
};

inline SplitIndex split_sample(const Dataset& d, double frac, std::uint64_t seed,
                               int floor = 50) {
  if (!(frac > 0.0 && frac < 1.0)) throw validation_error("split fraction must be in (0,1)");
  const int n = d.n();
  const int m_n = static_cast<int>(std::lround(frac * n));
  if (m_n < floor) {
    throw validation_error("split size m_n=" + std::to_string(m_n) + " below floor " +
                           std::to_string(floor));
  }
  if (m_n >= n) throw validation_error("split leaves no estimation sample");

  std::vector<int> perm(n);
  std::iota(perm.begin(), perm.end(), 0);
  auto rng = make_rng(seed);
  std::shuffle(perm.begin(), perm.end(), rng);

  SplitIndex s;
  s.seed = seed;
  s.idx_a.assign(perm.begin(), perm.begin() + m_n);
  s.idx_b.assign(perm.begin() + m_n, perm.end());
  std::sort(s.idx_a.begin(), s.idx_a.end());
  std::sort(s.idx_b.begin(), s.idx_b.end());

  int n1 = 0;
  for (int i : s.idx_b) n1 += d.a[i];
  if (n1 == 0 || n1 == static_cast<int>(s.idx_b.size())) {
    throw validation_error("split leaves an arm empty in the estimation subset");
  }
  return s;
}

}  // namespace augmatch

#endif  // AUGMATCH_DATA_HPP
