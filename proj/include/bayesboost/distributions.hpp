#ifndef BAYESBOOST_DISTRIBUTIONS_HPP
#define BAYESBOOST_DISTRIBUTIONS_HPP

#include <algorithm>
#include <vector>

#include "linalg.hpp"
#include "rng.hpp"
#include "types.hpp"

namespace bayesboost {

struct MvnParams {
  Vector mu;
  Matrix sigma;  // symmetric positive definite
};

struct InvGammaParams {
  double shape;
  double scale;
};

struct InvWishartParams {
  double dof;           // > dim - 1
  Matrix scale_matrix;  // symmetric positive definite
};

/// Multivariate normal draw mu + L z with L from safe_cholesky(sigma).
inline Vector sample_mvn(const MvnParams& p, RngStream& rng) {
  const Eigen::Index d = p.mu.size();
  if (p.sigma.rows() != d || p.sigma.cols() != d)
    throw ConfigError("sample_mvn: sigma dimensions do not match mu");
  for (Eigen::Index i = 0; i < d; ++i)
    if (!(p.sigma(i, i) > 0.0))
      throw ConfigError("sample_mvn: sigma diagonal must be strictly positive");
  const CholeskyResult ch = safe_cholesky(p.sigma);
  Vector z(d);
  rng.fill_normal(z);
  return p.mu + ch.L * z;
}

/// Inverse gamma draw as scale / Gamma(shape, 1).
inline double sample_inverse_gamma(const InvGammaParams& p, RngStream& rng) {
  if (!(p.shape > 0.0) || !(p.scale > 0.0))
    throw ConfigError("sample_inverse_gamma: shape and scale must be positive");
  return p.scale / rng.gamma(p.shape);
}

/// Inverse Wishart draw via the Bartlett factorization of a Wishart(dof,
/// scale^-1) variate. Output is symmetric positive definite; the 1x1 case
/// coincides with an inverse gamma (dof/2, scale/2).
inline Matrix sample_inverse_wishart(const InvWishartParams& p, RngStream& rng) {
  const Eigen::Index d = p.scale_matrix.rows();
  if (p.scale_matrix.cols() != d)
    throw ConfigError("sample_inverse_wishart: scale matrix must be square");
  if (!(p.dof > static_cast<double>(d) - 1.0))
    throw ConfigError("sample_inverse_wishart: dof must exceed dim - 1");
  if (!p.scale_matrix.allFinite())
    throw NumericError("sample_inverse_wishart: non-finite scale matrix");
  Eigen::LLT<Matrix> llt(0.5 * (p.scale_matrix + p.scale_matrix.transpose()));
  if (llt.info() != Eigen::Success)
    throw ConfigError("sample_inverse_wishart: scale matrix must be positive definite");

  // Bartlett factor A: sqrt(chi^2) diagonal, standard normals below.
  Matrix A = Matrix::Zero(d, d);
  for (Eigen::Index i = 0; i < d; ++i) {
    A(i, i) = std::sqrt(rng.chi_squared(p.dof - static_cast<double>(i)));
    for (Eigen::Index j = 0; j < i; ++j) A(i, j) = rng.normal();
  }
  // W = Lw A A' Lw' ~ Wishart(dof, scale^-1) with Lw = chol(scale^-1);
  // the inverse draw is (Lw A)^-T (Lw A)^-1, both factors lower triangular.
  const Matrix Sinv = invert_spd(p.scale_matrix);
  const CholeskyResult chw = safe_cholesky(Sinv);
  Matrix M = chw.L * A;  // lower triangular
  Matrix Minv = M.triangularView<Eigen::Lower>().solve(Matrix::Identity(d, d));
  Matrix out = Minv.transpose() * Minv;
  return 0.5 * (out + out.transpose());
}

/// Half-sample mode: repeatedly shrink to the shortest half of the sorted
/// sample until at most 3 points remain (1 -> the point, 2 -> midpoint,
/// 3 -> the middle one). Robust to outliers and permutation invariant.
inline double posterior_mode_1d(std::vector<double> samples) {
  if (samples.empty()) throw ConfigError("posterior_mode_1d: empty sample set");
  std::sort(samples.begin(), samples.end());
  std::size_t lo = 0;
  std::size_t n = samples.size();
  while (n > 3) {
    const std::size_t h = (n + 1) / 2;  // ceil(n/2)
    std::size_t best = lo;
    double best_w = samples[lo + h - 1] - samples[lo];
    for (std::size_t i = lo + 1; i + h - 1 <= lo + n - 1; ++i) {
      const double w = samples[i + h - 1] - samples[i];
      if (w < best_w) {
        best_w = w;
        best = i;
      }
    }
    lo = best;
    n = h;
  }
  if (n == 1) return samples[lo];
  if (n == 2) return 0.5 * (samples[lo] + samples[lo + 1]);
  return samples[lo + 1];
}

/// Per-coordinate half-sample mode over draws stored as rows.
inline Vector elementwise_mode(const Matrix& samples_as_rows) {
  if (samples_as_rows.rows() < 1)
    throw ConfigError("elementwise_mode: need at least one draw");
  Vector out(samples_as_rows.cols());
  std::vector<double> buf(samples_as_rows.rows());
  for (Eigen::Index j = 0; j < samples_as_rows.cols(); ++j) {
    for (Eigen::Index t = 0; t < samples_as_rows.rows(); ++t)
      buf[t] = samples_as_rows(t, j);
    out(j) = posterior_mode_1d(buf);
  }
  return out;
}

/// Per-entry half-sample mode over a sequence of equally shaped matrices;
/// square output is symmetrized.
inline Matrix elementwise_mode(const std::vector<Matrix>& samples) {
  if (samples.empty()) throw ConfigError("elementwise_mode: need at least one draw");
  const Eigen::Index r = samples.front().rows();
  const Eigen::Index c = samples.front().cols();
  for (const Matrix& s : samples)
    if (s.rows() != r || s.cols() != c)
      throw DataError("elementwise_mode: draws have mismatched shapes");
  Matrix out(r, c);
  std::vector<double> buf(samples.size());
  for (Eigen::Index i = 0; i < r; ++i)
    for (Eigen::Index j = 0; j < c; ++j) {
      for (std::size_t t = 0; t < samples.size(); ++t) buf[t] = samples[t](i, j);
      out(i, j) = posterior_mode_1d(buf);
    }
  if (r == c) out = Matrix(0.5 * (out + out.transpose()));
  return out;
}

}  // namespace bayesboost

#endif
