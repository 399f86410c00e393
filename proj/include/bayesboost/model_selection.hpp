#ifndef BAYESBOOST_MODEL_SELECTION_HPP
#define BAYESBOOST_MODEL_SELECTION_HPP

#include <algorithm>
#include <cmath>
#include <limits>
#include <vector>

#include "linalg.hpp"
#include "types.hpp"

namespace bayesboost {

struct CaicParts {
  double caic;
  double cond_loglik;
  double rho;          // df_fixed + trace of the random-effects hat matrix
  double trace_hat;
  int df_fixed;        // 1 + number of nonzero covariate coefficients
  bool q_repaired;
};

/// Conditional AIC of the current model: -2 * conditional log likelihood plus
/// 2 * (rho + 1). The likelihood is Gaussian at mean X beta + Z gamma with
/// variance sigma2; rho adds the fixed-effect count and the trace of
/// Z Sigma_gamma Z' / sigma2 with Sigma_gamma evaluated at the current modes.
/// The +1 accounts for the variance estimate. Only the shape of the series
/// over iterations matters for stopping.
inline CaicParts conditional_aic(const Vector& y, const Matrix& x_design,
                                 const Vector& beta, const Matrix& Z,
                                 const Vector& gamma, double sigma2,
                                 const Matrix& Q) {
  const int n = static_cast<int>(y.size());
  if (!(sigma2 > 0.0)) throw NumericError("conditional_aic: sigma2 must be positive");
  CaicParts out{};
  Vector fitted = x_design * beta;
  if (Z.cols() > 0) fitted += Z * gamma;
  const double rss = (y - fitted).squaredNorm();
  out.cond_loglik = -0.5 * n * std::log(2.0 * kPi * sigma2) - rss / (2.0 * sigma2);

  out.df_fixed = 1;
  for (Eigen::Index k = 1; k < beta.size(); ++k)
    if (beta(k) != 0.0) out.df_fixed++;

  out.trace_hat = 0.0;
  out.q_repaired = false;
  const Eigen::Index D = Z.cols();
  if (D > 0) {
    const Eigen::Index r = Q.rows();
    const Eigen::Index m = D / r;
    Matrix Qp = Q;
    {
      Eigen::LLT<Matrix> probe(0.5 * (Q + Q.transpose()));
      if (probe.info() != Eigen::Success) {
        Qp = nearest_positive_definite(Q);
        out.q_repaired = true;
      }
    }
    const Matrix Qinv = invert_spd(Qp);
    Matrix ZtZ = Z.transpose() * Z;
    Matrix P = ZtZ / sigma2;
    for (Eigen::Index i = 0; i < m; ++i) P.block(i * r, i * r, r, r) += Qinv;
    Eigen::LLT<Matrix> llt(P);
    if (llt.info() != Eigen::Success) {
      llt.compute(nearest_positive_definite(P));
      if (llt.info() != Eigen::Success)
        throw NumericError("conditional_aic: hat-matrix factorization failed");
    }
    // trace(Z Sigma Z' / sigma2) = trace(P^-1 Z'Z) / sigma2
    out.trace_hat = llt.solve(ZtZ).trace() / sigma2;
  }
  out.rho = out.df_fixed + out.trace_hat;
  out.caic = -2.0 * out.cond_loglik + 2.0 * (out.rho + 1.0);
  return out;
}

namespace detail {

inline double median_of(std::vector<double> v) {
  std::sort(v.begin(), v.end());
  const std::size_t n = v.size();
  if (n % 2 == 1) return v[n / 2];
  return 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

}  // namespace detail

/// Hampel outlier filter with window half-width w (clipped at the series
/// bounds) and threshold k. An entry farther than k * 1.4826 * MAD from the
/// window median is replaced by that median; a zero-spread window replaces
/// every entry that differs from its median.
inline std::vector<double> hampel_filter(const std::vector<double>& series, int w,
                                         double k) {
  if (w < 1) throw ConfigError("hampel_filter: window half-width must be >= 1");
  if (!(k > 0.0)) throw ConfigError("hampel_filter: threshold must be positive");
  const int n = static_cast<int>(series.size());
  std::vector<double> out = series;
  std::vector<double> win, dev;
  for (int i = 0; i < n; ++i) {
    const int lo = std::max(0, i - w);
    const int hi = std::min(n - 1, i + w);
    win.assign(series.begin() + lo, series.begin() + hi + 1);
    const double med = detail::median_of(win);
    dev.resize(win.size());
    for (std::size_t j = 0; j < win.size(); ++j) dev[j] = std::abs(win[j] - med);
    const double s = 1.4826 * detail::median_of(dev);
    if (s == 0.0) {
      if (series[i] != med) out[i] = med;
    } else if (std::abs(series[i] - med) > k * s) {
      out[i] = med;
    }
  }
  return out;
}

struct StoppingResult {
  int stop_iteration;   // 1-based index into the series
  double caic_at_stop;
  int alpha;
  int zeta;
  bool stabilized;  // false when the patience run never completed in-series
};

/// Patience search over a (filtered) criterion series, 1-based. Starting after
/// a burn-in of zeta + alpha entries, tracks the running minimum and stops
/// after alpha consecutive non-improvements; the first compared element is
/// index zeta + alpha + 1. Running off the end returns the best index seen
/// with stabilized = false.
inline StoppingResult patience_stop(const std::vector<double>& filtered, int alpha,
                                    int zeta) {
  if (alpha < 1) throw ConfigError("patience_stop: alpha must be >= 1");
  if (zeta < 0) throw ConfigError("patience_stop: zeta must be >= 0");
  const int len = static_cast<int>(filtered.size());
  if (len < zeta + alpha + 2)
    throw ConfigError("patience_stop: series length must be at least zeta + alpha + 2");
  int j = 0;
  int i = alpha + zeta;
  int s = std::max(1, i);
  double v = std::numeric_limits<double>::infinity();
  bool stabilized = true;
  while (j < alpha) {
    ++i;
    if (i > len) {
      stabilized = false;
      break;
    }
    if (filtered[i - 1] < v) {
      j = 0;
      s = i;
      v = filtered[i - 1];
    } else {
      ++j;
    }
  }
  return {s, filtered[s - 1], alpha, zeta, stabilized};
}

}  // namespace bayesboost

#endif
