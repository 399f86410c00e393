#ifndef BAYESBOOST_DATASET_HPP
#define BAYESBOOST_DATASET_HPP

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "types.hpp"

namespace bayesboost {

/// Clustered regression data in canonical form: rows of the same cluster are
/// contiguous, clusters ordered by first appearance in the source. The
/// original row order is retained in orig_rows so per-row output can be mapped
/// back to the input file.
struct Dataset {
  Vector y;                             // n
  Matrix X;                             // n x p, covariates as given
  IntVector cluster_ids;                // n, canonical ids 0..m-1
  std::vector<int> n_i;                 // m, rows per cluster
  std::vector<std::string> names;       // p covariate names
  std::vector<long long> cluster_labels;  // m, source labels by first appearance
  std::vector<int> orig_rows;           // canonical row r came from source row orig_rows[r]
  std::string response_name = "y";
  std::string cluster_name = "cluster";

  int n() const { return static_cast<int>(y.size()); }
  int m() const { return static_cast<int>(n_i.size()); }
  int p() const { return static_cast<int>(X.cols()); }
};

struct ClusterConstantMask {
  std::vector<bool> is_constant;  // per covariate
};

struct ValidationReport {
  std::vector<std::string> errors;
  std::vector<std::string> warnings;
  bool ok() const { return errors.empty(); }
};

// Row offsets of each cluster block; offsets[m] == n.
inline std::vector<int> cluster_offsets(const Dataset& d) {
  std::vector<int> off(d.m() + 1, 0);
  for (int i = 0; i < d.m(); ++i) off[i + 1] = off[i] + d.n_i[i];
  return off;
}

namespace detail {

inline std::string trim(const std::string& s) {
  std::size_t a = s.find_first_not_of(" \t\r");
  if (a == std::string::npos) return "";
  std::size_t b = s.find_last_not_of(" \t\r");
  return s.substr(a, b - a + 1);
}

inline std::vector<std::string> split_csv_line(const std::string& line) {
  std::vector<std::string> out;
  std::string cur;
  for (char c : line) {
    if (c == ',') {
      out.push_back(trim(cur));
      cur.clear();
    } else {
      cur += c;
    }
  }
  out.push_back(trim(cur));
  return out;
}

inline bool parse_double(const std::string& tok, double& out) {
  if (tok.empty()) return false;
  const char* b = tok.data();
  const char* e = b + tok.size();
  auto res = std::from_chars(b, e, out);
  if (res.ec != std::errc() || res.ptr != e) return false;
  return std::isfinite(out);
}

// Deterministic shortest-exact formatting: %.17g round-trips every double.
inline std::string fmt_double(double v) {
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

}  // namespace detail

/// Reads a CSV with a header row, one numeric response column, one integer
/// cluster column and numeric covariates in all remaining columns. Rows are
/// reordered to canonical cluster-contiguous form (clusters by first
/// appearance, source order kept within a cluster).
inline Dataset load_dataset(const std::string& path, const std::string& response_col,
                            const std::string& cluster_col) {
  std::ifstream in(path);
  if (!in) throw DataError("load_dataset: cannot open '" + path + "'");
  std::string line;
  if (!std::getline(in, line)) throw DataError("load_dataset: empty file '" + path + "'");
  const std::vector<std::string> header = detail::split_csv_line(line);

  int y_col = -1, c_col = -1;
  for (int j = 0; j < static_cast<int>(header.size()); ++j) {
    if (header[j] == response_col) y_col = j;
    if (header[j] == cluster_col) c_col = j;
  }
  if (y_col < 0)
    throw DataError("load_dataset: response column '" + response_col + "' not found");
  if (c_col < 0)
    throw DataError("load_dataset: cluster column '" + cluster_col + "' not found");
  if (y_col == c_col)
    throw DataError("load_dataset: response and cluster columns must differ");

  std::vector<std::string> names;
  std::vector<int> cov_cols;
  for (int j = 0; j < static_cast<int>(header.size()); ++j) {
    if (j == y_col || j == c_col) continue;
    names.push_back(header[j]);
    cov_cols.push_back(j);
  }
  if (names.empty()) throw DataError("load_dataset: no covariate columns");

  std::vector<double> ys;
  std::vector<long long> labels;
  std::vector<std::vector<double>> rows;
  int data_row = 0;
  while (std::getline(in, line)) {
    if (detail::trim(line).empty()) continue;
    ++data_row;
    const std::vector<std::string> toks = detail::split_csv_line(line);
    if (toks.size() != header.size())
      throw DataError("load_dataset: data row " + std::to_string(data_row) +
                      " has " + std::to_string(toks.size()) + " fields, expected " +
                      std::to_string(header.size()));
    double yv;
    if (!detail::parse_double(toks[y_col], yv))
      throw DataError("load_dataset: non-numeric or missing value at data row " +
                      std::to_string(data_row) + ", column '" + response_col + "'");
    double cv;
    if (!detail::parse_double(toks[c_col], cv) || std::nearbyint(cv) != cv ||
        std::abs(cv) > 9.0e15)
      throw DataError("load_dataset: cluster id at data row " + std::to_string(data_row) +
                      " is not an integer");
    std::vector<double> xr(names.size());
    for (std::size_t k = 0; k < cov_cols.size(); ++k) {
      if (!detail::parse_double(toks[cov_cols[k]], xr[k]))
        throw DataError("load_dataset: non-numeric or missing value at data row " +
                        std::to_string(data_row) + ", column '" + names[k] + "'");
    }
    ys.push_back(yv);
    labels.push_back(static_cast<long long>(cv));
    rows.push_back(std::move(xr));
  }
  const int n = static_cast<int>(ys.size());
  if (n == 0) throw DataError("load_dataset: no data rows in '" + path + "'");

  // Canonical cluster order: by first appearance.
  std::map<long long, int> id_of;
  std::vector<long long> label_order;
  for (long long lb : labels) {
    if (id_of.emplace(lb, static_cast<int>(label_order.size())).second)
      label_order.push_back(lb);
  }
  const int m = static_cast<int>(label_order.size());
  if (m < 2) throw DataError("load_dataset: need at least 2 clusters, found " +
                             std::to_string(m));

  std::vector<int> perm(n);
  for (int r = 0; r < n; ++r) perm[r] = r;
  std::stable_sort(perm.begin(), perm.end(), [&](int a, int b) {
    return id_of[labels[a]] < id_of[labels[b]];
  });

  Dataset d;
  d.response_name = response_col;
  d.cluster_name = cluster_col;
  d.names = names;
  d.cluster_labels = label_order;
  d.y.resize(n);
  d.X.resize(n, static_cast<int>(names.size()));
  d.cluster_ids.resize(n);
  d.n_i.assign(m, 0);
  d.orig_rows.resize(n);
  for (int r = 0; r < n; ++r) {
    const int src = perm[r];
    d.y(r) = ys[src];
    for (int k = 0; k < d.p(); ++k) d.X(r, k) = rows[src][k];
    const int cid = id_of[labels[src]];
    d.cluster_ids(r) = cid;
    d.n_i[cid]++;
    d.orig_rows[r] = src;
  }
  return d;
}

/// Writes the dataset in canonical row order. load(write(d)) reproduces d
/// bitwise on values.
inline void write_dataset_csv(const Dataset& d, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw DataError("write_dataset_csv: cannot open '" + path + "'");
  out << d.response_name << ',' << d.cluster_name;
  for (const auto& nm : d.names) out << ',' << nm;
  out << '\n';
  for (int r = 0; r < d.n(); ++r) {
    out << detail::fmt_double(d.y(r)) << ',' << d.cluster_labels[d.cluster_ids(r)];
    for (int k = 0; k < d.p(); ++k) out << ',' << detail::fmt_double(d.X(r, k));
    out << '\n';
  }
}

/// Structural checks. Empty errors list means all Dataset invariants hold.
inline ValidationReport validate(const Dataset& d) {
  ValidationReport rep;
  const int n = d.n(), m = d.m(), p = d.p();
  if (n == 0) rep.errors.push_back("no rows");
  if (p < 1) rep.errors.push_back("no covariates");
  if (m < 2) rep.errors.push_back("fewer than 2 clusters");
  if (d.X.rows() != n) rep.errors.push_back("X row count does not match y");
  if (d.cluster_ids.size() != n) rep.errors.push_back("cluster_ids length does not match y");
  int total = 0;
  for (int i = 0; i < m; ++i) {
    if (d.n_i[i] < 1) rep.errors.push_back("cluster " + std::to_string(i) + " is empty");
    total += d.n_i[i];
  }
  if (total != n) rep.errors.push_back("sum of cluster sizes does not match row count");
  bool ids_ok = true;
  for (int r = 0; r < static_cast<int>(d.cluster_ids.size()) && r < n; ++r) {
    if (d.cluster_ids(r) < 0 || d.cluster_ids(r) >= m) {
      rep.errors.push_back("cluster id out of range at row " + std::to_string(r));
      ids_ok = false;
      break;
    }
  }
  if (ids_ok && d.cluster_ids.size() == n && n > 0) {
    // Canonical form: each cluster occupies one contiguous ascending block.
    std::vector<bool> seen(m, false);
    std::vector<int> counts(m, 0);
    bool contiguous = true;
    int prev = -1;
    for (int r = 0; r < n; ++r) {
      const int c = d.cluster_ids(r);
      counts[c]++;
      if (c != prev) {
        if (seen[c] || c != prev + 1) {
          rep.errors.push_back("rows are not in canonical cluster-contiguous order");
          contiguous = false;
          break;
        }
        seen[c] = true;
        prev = c;
      }
    }
    if (contiguous) {
      for (int i = 0; i < m; ++i)
        if (counts[i] != d.n_i[i]) {
          rep.errors.push_back("cluster sizes do not match cluster_ids blocks");
          break;
        }
    }
  }
  if (!d.y.allFinite()) rep.errors.push_back("response contains non-finite values");
  if (!d.X.allFinite()) rep.errors.push_back("covariates contain non-finite values");
  if (static_cast<int>(d.names.size()) != p)
    rep.errors.push_back("covariate name count does not match X");

  for (std::size_t a = 0; a < d.names.size(); ++a)
    for (std::size_t b = a + 1; b < d.names.size(); ++b)
      if (d.names[a] == d.names[b]) {
        rep.warnings.push_back("duplicate covariate name '" + d.names[a] + "'");
        b = d.names.size();
      }
  for (int k = 0; k < p && d.X.rows() == n && n > 1; ++k) {
    const double mean = d.X.col(k).mean();
    const double var = (d.X.col(k).array() - mean).square().sum() / n;
    if (var < 1e-10)
      rep.warnings.push_back("covariate '" + d.names[k] + "' is near-constant");
  }
  return rep;
}

/// Flags covariates with zero within-cluster variance (tolerance 1e-12) in
/// every cluster. These are the columns the random-intercept design is
/// corrected against, and they are not random-effect candidates.
inline ClusterConstantMask detect_cluster_constant(const Dataset& d) {
  ClusterConstantMask mask;
  mask.is_constant.assign(d.p(), true);
  const std::vector<int> off = cluster_offsets(d);
  for (int k = 0; k < d.p(); ++k) {
    for (int i = 0; i < d.m() && mask.is_constant[k]; ++i) {
      const auto seg = d.X.col(k).segment(off[i], d.n_i[i]);
      const double mean = seg.mean();
      const double var = (seg.array() - mean).square().sum() / d.n_i[i];
      if (var > 1e-12) mask.is_constant[k] = false;
    }
  }
  return mask;
}

/// Centers and scales each covariate to unit sample standard deviation.
/// Columns with (near) zero spread are left untouched.
inline void standardize_covariates(Dataset& d) {
  const int n = d.n();
  if (n < 2) return;
  for (int k = 0; k < d.p(); ++k) {
    const double mean = d.X.col(k).mean();
    const double sd =
        std::sqrt((d.X.col(k).array() - mean).square().sum() / (n - 1));
    if (sd > 1e-12) d.X.col(k) = (d.X.col(k).array() - mean) / sd;
  }
}

}  // namespace bayesboost

#endif
