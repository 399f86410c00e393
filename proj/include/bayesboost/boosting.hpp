#ifndef BAYESBOOST_BOOSTING_HPP
#define BAYESBOOST_BOOSTING_HPP

#include <algorithm>
#include <cmath>
#include <limits>
#include <string>
#include <vector>

#include "dataset.hpp"
#include "distributions.hpp"
#include "linalg.hpp"
#include "model_selection.hpp"
#include "rng.hpp"
#include "types.hpp"

namespace bayesboost {

enum class ReMode { auto_select, fixed_structure };

// per_block corrects the random intercept against the cluster-constant
// covariates and each slope block against its own covariate; full_x projects
// every block against the whole fixed design [1 | X].
enum class CorrectionMode { per_block, full_x };

struct Hyperparams {
  double nu = 0.3;          // learning rate
  int T = 30;               // Gibbs sweeps per boosting iteration
  int m_stop = 250;         // boosting iterations
  double a = 0.001;         // error-variance prior shape
  double b = 0.001;         // error-variance prior scale
  double v0 = 1.0;          // covariance prior degrees of freedom
  double lambda0_init = 1.0;  // covariance prior scale (diagonal entries)
  int alpha = 3;            // patience
  int zeta = 10;            // stopping burn-in
  int hampel_window = 7;    // filter half-width
  double hampel_k = 2.0;    // filter threshold
  std::uint64_t seed = 1;
  ReMode re_mode = ReMode::auto_select;
  std::vector<int> fixed_effects;  // 1-based covariate ids, fixed_structure only
  CorrectionMode correction = CorrectionMode::per_block;

  void validate() const {
    if (!(nu > 0.0) || nu > 1.0) throw ConfigError("hyperparams: nu must be in (0, 1]");
    if (T < 1) throw ConfigError("hyperparams: T must be >= 1");
    if (m_stop < 1) throw ConfigError("hyperparams: m_stop must be >= 1");
    if (!(a > 0.0) || !(b > 0.0))
      throw ConfigError("hyperparams: prior shape and scale must be positive");
    if (!(v0 >= 1.0)) throw ConfigError("hyperparams: v0 must be >= 1");
    if (!(lambda0_init > 0.0))
      throw ConfigError("hyperparams: lambda0 must be positive");
    if (alpha < 1) throw ConfigError("hyperparams: alpha must be >= 1");
    if (zeta < 0) throw ConfigError("hyperparams: zeta must be >= 0");
    if (hampel_window < 1)
      throw ConfigError("hyperparams: hampel window must be >= 1");
    if (!(hampel_k > 0.0))
      throw ConfigError("hyperparams: hampel threshold must be positive");
  }
};

// Effect ids: 0 is the random intercept, k >= 1 the slope of covariate k.
inline constexpr int kInterceptEffect = 0;

inline std::string effect_name(int effect, const std::vector<std::string>& names) {
  if (effect == kInterceptEffect) return "ranInt";
  return names[effect - 1];
}

/// Model state after a boosting iteration. gamma is cluster-major: cluster i
/// owns the |E| consecutive coordinates starting at i * |E|, ordered like E.
/// Z columns follow the same layout.
struct ModelState {
  Vector beta;                      // p + 1, [0] is the intercept
  std::vector<int> E;               // selected effects, E[0] == 0 always
  Matrix Z;                         // n x m|E|, corrected
  Matrix Z_tilde;                   // n x m|E|, raw
  std::vector<Matrix> block_basis;  // per effect, may have 0 columns
  Matrix Q_mode;                    // |E| x |E|, positive definite
  double sigma2_mode = 1.0;
  Vector gamma_mode;                // m|E|
  Vector lambda0_diag;              // |E|
  Vector fitted;                    // n
  int iteration = 0;
};

/// Candidate structure with one extra effect appended to every cluster block.
struct PotentialState {
  bool expanded = false;
  std::vector<int> E;
  Matrix Z, Z_tilde;
  std::vector<Matrix> block_basis;
  Vector lambda0_diag;
  Matrix Q_init;      // diag(Q_mode, 1) warm start
  Vector gamma_init;  // previous modes, new coordinates 0
  bool used_pseudoinverse = false;
};

struct GibbsSummary {
  Matrix gamma_samples;   // T x D, one sweep per row
  Vector sigma2_samples;  // T
  std::vector<Matrix> Q_samples;
  Vector gamma_mode;
  double sigma2_mode = 1.0;
  Matrix Q_mode_raw;  // elementwise modes before any repair
};

struct ComponentwiseFit {
  int k_star;        // 1-based covariate id
  double intercept;  // base-learner intercept of the winner
  double slope;      // base-learner slope of the winner
  Vector mse_fixed;  // per covariate
};

enum class ReDecisionKind { none = 0, accepted = 1, rejected = 2 };

struct IterationRecord {
  Vector beta;
  int k_star = 0;
  ReDecisionKind decision = ReDecisionKind::none;
  double caic_raw = 0.0;
  double sigma2_mode = 1.0;
  Matrix Q_mode;
  std::vector<int> E;
  Vector gamma_mode;
  double max_ortho = 0.0;         // scaled orthogonality violation of Z
  bool q_repaired = false;        // raw Q mode needed a repair
  double mse_fixed_kstar = 0.0;
  double mse_random_kstar = std::numeric_limits<double>::quiet_NaN();
};

struct CaicSeries {
  std::vector<double> raw;
  std::vector<double> filtered;
  int window = 0;
  double k_sigma = 0.0;
};

struct FitTrace {
  std::vector<IterationRecord> iterations;
  CaicSeries caic;
  StoppingResult stopping{0, 0.0, 0, 0, true};
  ModelState final_state;            // at the stopping iteration
  GibbsSummary final_summary;        // Gibbs record of that iteration
  Matrix final_gamma_quantiles;      // rows: 2.5/25/50/75/97.5%, cols like gamma
  std::vector<std::string> warnings;
};

// ---------------------------------------------------------------------------
// design helpers

inline Matrix fixed_design(const Dataset& d) {
  Matrix Xd(d.n(), d.p() + 1);
  Xd.col(0).setOnes();
  Xd.rightCols(d.p()) = d.X;
  return Xd;
}

/// Raw block for one effect: column i carries the effect's covariate values
/// (ones for the intercept) on cluster i's rows and zeros elsewhere.
inline Matrix raw_effect_block(const Dataset& d, int effect) {
  Matrix B = Matrix::Zero(d.n(), d.m());
  const std::vector<int> off = cluster_offsets(d);
  for (int i = 0; i < d.m(); ++i) {
    if (effect == kInterceptEffect)
      B.col(i).segment(off[i], d.n_i[i]).setOnes();
    else
      B.col(i).segment(off[i], d.n_i[i]) = d.X.col(effect - 1).segment(off[i], d.n_i[i]);
  }
  return B;
}

/// Basis the block of `effect` is corrected against. Every basis carries the
/// ones column: without it the block still spans the global mean direction and
/// the sampled effects can silently absorb intercept error, which stalls the
/// fixed-effects updates. The intercept block is corrected against the ones
/// column plus every cluster-constant covariate; with no cluster-constant
/// covariates it is left raw. A slope block is corrected against the ones
/// column plus its own covariate.
inline Matrix effect_basis(const Dataset& d, int effect, const ClusterConstantMask& mask,
                           CorrectionMode mode) {
  if (mode == CorrectionMode::full_x) return fixed_design(d);
  if (effect == kInterceptEffect) {
    int c = 0;
    for (bool b : mask.is_constant) c += b ? 1 : 0;
    if (c == 0) return Matrix(d.n(), 0);
    Matrix B(d.n(), c + 1);
    B.col(0).setOnes();
    int j = 1;
    for (int k = 0; k < d.p(); ++k)
      if (mask.is_constant[k]) B.col(j++) = d.X.col(k);
    return B;
  }
  Matrix B(d.n(), 2);
  B.col(0).setOnes();
  B.col(1) = d.X.col(effect - 1);
  return B;
}

namespace detail {

// Appends one block to a cluster-major design: every cluster group gains the
// block's column for that cluster as a new last column.
inline Matrix interleave_append(const Matrix& Z, int m, const Matrix& block) {
  const int n = static_cast<int>(Z.rows());
  const int r = static_cast<int>(Z.cols()) / m;
  Matrix out(n, static_cast<Eigen::Index>(m) * (r + 1));
  for (int i = 0; i < m; ++i) {
    out.middleCols(static_cast<Eigen::Index>(i) * (r + 1), r) =
        Z.middleCols(static_cast<Eigen::Index>(i) * r, r);
    out.col(static_cast<Eigen::Index>(i) * (r + 1) + r) = block.col(i);
  }
  return out;
}

// First r_keep effects of every cluster group.
inline Matrix prefix_columns(const Matrix& Z, int m, int r_full, int r_keep) {
  Matrix out(Z.rows(), static_cast<Eigen::Index>(m) * r_keep);
  for (int i = 0; i < m; ++i)
    out.middleCols(static_cast<Eigen::Index>(i) * r_keep, r_keep) =
        Z.middleCols(static_cast<Eigen::Index>(i) * r_full, r_keep);
  return out;
}

inline Vector expand_gamma(const Vector& g, int m) {
  const int r = static_cast<int>(g.size()) / m;
  Vector out = Vector::Zero(static_cast<Eigen::Index>(m) * (r + 1));
  for (int i = 0; i < m; ++i)
    out.segment(static_cast<Eigen::Index>(i) * (r + 1), r) =
        g.segment(static_cast<Eigen::Index>(i) * r, r);
  return out;
}

inline Vector drop_last_effect(const Vector& g, int m) {
  const int r = static_cast<int>(g.size()) / m;
  Vector out(static_cast<Eigen::Index>(m) * (r - 1));
  for (int i = 0; i < m; ++i)
    out.segment(static_cast<Eigen::Index>(i) * (r - 1), r - 1) =
        g.segment(static_cast<Eigen::Index>(i) * r, r - 1);
  return out;
}

inline Matrix drop_last_effect_samples(const Matrix& G, int m) {
  const int r = static_cast<int>(G.cols()) / m;
  Matrix out(G.rows(), static_cast<Eigen::Index>(m) * (r - 1));
  for (int i = 0; i < m; ++i)
    out.middleCols(static_cast<Eigen::Index>(i) * (r - 1), r - 1) =
        G.middleCols(static_cast<Eigen::Index>(i) * r, r - 1);
  return out;
}

inline bool contains_effect(const std::vector<int>& E, int effect) {
  return std::find(E.begin(), E.end(), effect) != E.end();
}

}  // namespace detail

/// Largest |basis' Z| over all blocks, scaled by the largest |Z| entry.
inline double orthogonality_violation(const ModelState& st, int m) {
  const int r = static_cast<int>(st.E.size());
  const double zmax = st.Z.cwiseAbs().maxCoeff();
  if (zmax == 0.0) return 0.0;
  double worst = 0.0;
  for (int e = 0; e < r; ++e) {
    const Matrix& B = st.block_basis[e];
    if (B.cols() == 0) continue;
    for (int i = 0; i < m; ++i) {
      const Vector prods = B.transpose() * st.Z.col(static_cast<Eigen::Index>(i) * r + e);
      worst = std::max(worst, prods.cwiseAbs().maxCoeff());
    }
  }
  return worst / zmax;
}

// ---------------------------------------------------------------------------
// engine operations

/// Starting state: grand-mean intercept, random intercept as the only effect,
/// unit variances, cluster means as the fitted values that seed the first
/// residual. fixed_structure mode installs the declared slope blocks as well.
inline ModelState init_state(const Dataset& d, const Hyperparams& h,
                             std::vector<std::string>* warnings = nullptr) {
  h.validate();
  const ValidationReport rep = validate(d);
  if (!rep.ok()) throw DataError("init_state: invalid dataset: " + rep.errors.front());
  const ClusterConstantMask mask = detect_cluster_constant(d);

  ModelState st;
  st.beta = Vector::Zero(d.p() + 1);
  st.beta(0) = d.y.mean();
  st.E = {kInterceptEffect};
  if (h.re_mode == ReMode::fixed_structure) {
    for (int k : h.fixed_effects) {
      if (k < 1 || k > d.p())
        throw ConfigError("init_state: declared random effect " + std::to_string(k) +
                          " out of range");
      if (detail::contains_effect(st.E, k))
        throw ConfigError("init_state: duplicate declared random effect " +
                          std::to_string(k));
      st.E.push_back(k);
    }
  }
  const int r = static_cast<int>(st.E.size());
  st.Z.resize(d.n(), 0);
  st.Z_tilde.resize(d.n(), 0);
  for (int e = 0; e < r; ++e) {
    const Matrix raw = raw_effect_block(d, st.E[e]);
    const CorrectedDesign cd =
        residual_maker_correct(effect_basis(d, st.E[e], mask, h.correction), raw);
    if (cd.used_pseudoinverse && warnings)
      warnings->push_back("rank-deficient correction basis for effect " +
                          effect_name(st.E[e], d.names) +
                          "; pseudoinverse projection used");
    st.block_basis.push_back(cd.projector_basis);
    if (e == 0) {
      st.Z = cd.Z;
      st.Z_tilde = cd.Z_tilde;
    } else {
      st.Z = detail::interleave_append(st.Z, d.m(), cd.Z);
      st.Z_tilde = detail::interleave_append(st.Z_tilde, d.m(), cd.Z_tilde);
    }
  }
  st.Q_mode = Matrix::Identity(r, r);
  st.sigma2_mode = 1.0;
  st.gamma_mode = Vector::Zero(static_cast<Eigen::Index>(d.m()) * r);
  st.lambda0_diag = Vector::Constant(r, h.lambda0_init);
  st.fitted.resize(d.n());
  const std::vector<int> off = cluster_offsets(d);
  for (int i = 0; i < d.m(); ++i)
    st.fitted.segment(off[i], d.n_i[i]).setConstant(
        d.y.segment(off[i], d.n_i[i]).mean());
  st.iteration = 0;
  return st;
}

inline Vector negative_gradient(const Vector& y, const ModelState& st) {
  return y - st.fitted;
}

/// Componentwise base learners: a simple linear regression of u on every
/// covariate. Winner is the smallest mean squared error, ties broken by the
/// lowest covariate index. Zero-variance covariates degrade to the
/// intercept-only fit.
inline ComponentwiseFit fit_componentwise(const Vector& u, const Dataset& d) {
  const int n = d.n(), p = d.p();
  if (static_cast<int>(u.size()) != n)
    throw DataError("fit_componentwise: residual length does not match data");
  ComponentwiseFit out;
  out.mse_fixed.resize(p);
  const double ubar = u.mean();
  double best = std::numeric_limits<double>::infinity();
  int best_k = 0;
  double best_i = 0.0, best_s = 0.0;
  for (int k = 0; k < p; ++k) {
    const auto x = d.X.col(k);
    const double xbar = x.mean();
    const Vector xc = x.array() - xbar;
    const double sxx = xc.squaredNorm();
    double slope, intc;
    if (sxx <= 1e-20 * n * (1.0 + xbar * xbar)) {
      slope = 0.0;
      intc = ubar;
    } else {
      slope = xc.dot(u) / sxx;
      intc = ubar - slope * xbar;
    }
    const double mse =
        (u.array() - intc - slope * x.array()).square().sum() / n;
    out.mse_fixed(k) = mse;
    if (mse < best) {
      best = mse;
      best_k = k;
      best_i = intc;
      best_s = slope;
    }
  }
  out.k_star = best_k + 1;
  out.intercept = best_i;
  out.slope = best_s;
  return out;
}

/// Learning-rate-damped update of the intercept and the winning coefficient.
/// Coefficients of never-selected covariates stay exactly zero.
inline void update_fixed(ModelState& st, const ComponentwiseFit& cf, double nu) {
  st.beta(0) += nu * cf.intercept;
  st.beta(cf.k_star) += nu * cf.slope;
}

/// Candidate expansion for a winner not yet in E: append its corrected block
/// to every cluster group, grow the prior scale and warm-start covariance by
/// one unit diagonal entry, and zero-init the new gamma coordinates.
inline PotentialState expand_potential_structure(const ModelState& st, int k_star,
                                                 const Dataset& d,
                                                 const ClusterConstantMask& mask,
                                                 CorrectionMode mode) {
  PotentialState pot;
  if (detail::contains_effect(st.E, k_star)) return pot;
  pot.expanded = true;
  pot.E = st.E;
  pot.E.push_back(k_star);
  const Matrix raw = raw_effect_block(d, k_star);
  const CorrectedDesign cd =
      residual_maker_correct(effect_basis(d, k_star, mask, mode), raw);
  pot.used_pseudoinverse = cd.used_pseudoinverse;
  pot.Z = detail::interleave_append(st.Z, d.m(), cd.Z);
  pot.Z_tilde = detail::interleave_append(st.Z_tilde, d.m(), cd.Z_tilde);
  pot.block_basis = st.block_basis;
  pot.block_basis.push_back(cd.projector_basis);
  const int r = static_cast<int>(st.E.size());
  pot.lambda0_diag = Vector::Zero(r + 1);
  pot.lambda0_diag.head(r) = st.lambda0_diag;
  pot.lambda0_diag(r) = 1.0;
  pot.Q_init = Matrix::Zero(r + 1, r + 1);
  pot.Q_init.topLeftCorner(r, r) = st.Q_mode;
  pot.Q_init(r, r) = 1.0;
  pot.gamma_init = detail::expand_gamma(st.gamma_mode, d.m());
  return pot;
}

/// Parameters of the gamma full conditional: precision factor of
/// Z'Z / sigma2 + blockdiag(Q^-1) and mean Sigma Z' ytilde / sigma2.
struct GammaConditional {
  Eigen::LLT<Matrix> prec_llt;
  Vector mu;
  bool repaired = false;
};

inline GammaConditional gamma_full_conditional(const Matrix& ZtZ, const Vector& Zty,
                                               double sigma2, const Matrix& Q, int m) {
  const Eigen::Index r = Q.rows();
  const Matrix Qinv = invert_spd(Q);
  Matrix P = ZtZ / sigma2;
  for (int i = 0; i < m; ++i) P.block(i * r, i * r, r, r) += Qinv;
  GammaConditional gc;
  gc.prec_llt.compute(P);
  if (gc.prec_llt.info() != Eigen::Success) {
    gc.prec_llt.compute(nearest_positive_definite(P));
    gc.repaired = true;
    if (gc.prec_llt.info() != Eigen::Success)
      throw NumericError(
          "gamma_full_conditional: precision factorization failed after repair");
  }
  gc.mu = gc.prec_llt.solve(Zty / sigma2);
  return gc;
}

inline InvGammaParams error_variance_posterior(double a, double b, const Vector& resid) {
  return {a + 0.5 * static_cast<double>(resid.size()), b + 0.5 * resid.squaredNorm()};
}

inline InvWishartParams covariance_posterior(double v0, const Vector& lambda0_diag,
                                             const Vector& gamma, int m) {
  const Eigen::Index r = lambda0_diag.size();
  Matrix Lam = Matrix(lambda0_diag.asDiagonal());
  for (int i = 0; i < m; ++i) {
    const auto gi = gamma.segment(static_cast<Eigen::Index>(i) * r, r);
    Lam += gi * gi.transpose();
  }
  return {v0 + static_cast<double>(m), Lam};
}

/// T sweeps of the blocked Gibbs sampler for (gamma, sigma2, Q) given beta,
/// warm started at the previous iteration's modes. No burn-in is discarded;
/// the elementwise posterior modes summarize all T sweeps.
inline GibbsSummary gibbs_sweep(const Vector& y, const Matrix& x_design,
                                const Vector& beta, const Matrix& Z, int m,
                                const Vector& lambda0_diag, Matrix Q, double sigma2,
                                const Hyperparams& h, RngStream& rng) {
  const Eigen::Index D = Z.cols();
  const Vector ytil = y - x_design * beta;
  const Matrix ZtZ = Z.transpose() * Z;
  const Vector Zty = Z.transpose() * ytil;

  GibbsSummary out;
  out.gamma_samples.resize(h.T, D);
  out.sigma2_samples.resize(h.T);
  out.Q_samples.reserve(h.T);
  Vector z(D);
  for (int t = 0; t < h.T; ++t) {
    GammaConditional gc = gamma_full_conditional(ZtZ, Zty, sigma2, Q, m);
    rng.fill_normal(z);
    const Vector gamma = gc.mu + gc.prec_llt.matrixU().solve(z);

    const InvGammaParams igp = error_variance_posterior(h.a, h.b, ytil - Z * gamma);
    sigma2 = sample_inverse_gamma(igp, rng);

    const InvWishartParams iwp = covariance_posterior(h.v0, lambda0_diag, gamma, m);
    Q = sample_inverse_wishart(iwp, rng);

    out.gamma_samples.row(t) = gamma;
    out.sigma2_samples(t) = sigma2;
    out.Q_samples.push_back(Q);
  }
  out.gamma_mode = elementwise_mode(out.gamma_samples);
  out.sigma2_mode = posterior_mode_1d(
      std::vector<double>(out.sigma2_samples.data(), out.sigma2_samples.data() + h.T));
  out.Q_mode_raw = elementwise_mode(out.Q_samples);
  return out;
}

struct ReDecision {
  bool accepted = false;
  double mse_random = 0.0;
};

/// Accept/reject of a candidate random effect: compare the winner's fixed-only
/// fit against fixed plus its candidate block at the posterior modes; accept
/// only on strict improvement, ties reject. On accept the state adopts the
/// expanded structure and whole modes; on reject the structure resets and the
/// modes are subset by dropping the candidate's coordinates. The sigma2 mode
/// is kept either way.
inline ReDecision random_effect_decision(double mse_fixed_kstar, const Vector& u,
                                         const Dataset& d, const ComponentwiseFit& cf,
                                         const PotentialState& pot,
                                         const GibbsSummary& summary, ModelState& st) {
  const int m = d.m();
  const int r_pot = static_cast<int>(pot.E.size());
  // Candidate-block contribution at the modes: the new effect occupies the
  // last coordinate of every cluster group.
  Vector contrib = Vector::Zero(d.n());
  for (int i = 0; i < m; ++i) {
    const Eigen::Index c = static_cast<Eigen::Index>(i) * r_pot + (r_pot - 1);
    contrib += pot.Z.col(c) * summary.gamma_mode(c);
  }
  const auto xk = d.X.col(cf.k_star - 1);
  const double mse_random =
      (u.array() - cf.intercept - cf.slope * xk.array() - contrib.array())
          .square()
          .sum() /
      d.n();

  ReDecision dec;
  dec.mse_random = mse_random;
  dec.accepted = mse_fixed_kstar > mse_random;
  if (dec.accepted) {
    st.E = pot.E;
    st.Z = pot.Z;
    st.Z_tilde = pot.Z_tilde;
    st.block_basis = pot.block_basis;
    st.lambda0_diag = pot.lambda0_diag;
    st.gamma_mode = summary.gamma_mode;
    st.Q_mode = nearest_positive_definite(summary.Q_mode_raw);
  } else {
    st.gamma_mode = detail::drop_last_effect(summary.gamma_mode, m);
    st.Q_mode = nearest_positive_definite(
        summary.Q_mode_raw.topLeftCorner(r_pot - 1, r_pot - 1));
  }
  st.sigma2_mode = summary.sigma2_mode;
  return dec;
}

namespace detail {

inline Matrix sample_quantiles(const Matrix& samples_as_rows) {
  static const double levels[5] = {0.025, 0.25, 0.5, 0.75, 0.975};
  const Eigen::Index T = samples_as_rows.rows();
  Matrix out(5, samples_as_rows.cols());
  std::vector<double> buf(T);
  for (Eigen::Index j = 0; j < samples_as_rows.cols(); ++j) {
    for (Eigen::Index t = 0; t < T; ++t) buf[t] = samples_as_rows(t, j);
    std::sort(buf.begin(), buf.end());
    for (int q = 0; q < 5; ++q) {
      const double pos = levels[q] * (T - 1);
      const auto lo = static_cast<std::size_t>(pos);
      const double frac = pos - static_cast<double>(lo);
      out(q, j) = (lo + 1 < buf.size()) ? buf[lo] + frac * (buf[lo + 1] - buf[lo])
                                        : buf[lo];
    }
  }
  return out;
}

}  // namespace detail

/// Full estimation run: componentwise boosting of the fixed effects with one
/// Gibbs block per iteration for the random effects, automatic effect
/// selection (auto mode), Hampel-filtered cAIC patience stopping, and a trace
/// of every iteration. The returned final state is the model at the stopping
/// iteration.
inline FitTrace boost_fit(const Dataset& d, const Hyperparams& h) {
  h.validate();
  if (h.m_stop < h.zeta + h.alpha + 2)
    throw ConfigError("boost_fit: m_stop must be >= zeta + alpha + 2 so the "
                      "stopping rule has a series to search");
  const ValidationReport rep = validate(d);
  if (!rep.ok()) throw DataError("boost_fit: invalid dataset: " + rep.errors.front());

  const ClusterConstantMask mask = detect_cluster_constant(d);
  const Matrix Xd = fixed_design(d);
  const int m = d.m();
  RngStream rng(h.seed, 0);

  FitTrace trace;
  ModelState st = init_state(d, h, &trace.warnings);
  std::vector<GibbsSummary> summaries;
  std::vector<bool> needs_subset;
  summaries.reserve(h.m_stop);

  for (int s = 1; s <= h.m_stop; ++s) {
    const Vector u = negative_gradient(d.y, st);
    const ComponentwiseFit cf = fit_componentwise(u, d);
    update_fixed(st, cf, h.nu);

    PotentialState pot;
    const bool candidate = h.re_mode == ReMode::auto_select &&
                           !detail::contains_effect(st.E, cf.k_star) &&
                           !mask.is_constant[cf.k_star - 1];
    if (candidate)
      pot = expand_potential_structure(st, cf.k_star, d, mask, h.correction);
    if (pot.expanded && pot.used_pseudoinverse)
      trace.warnings.push_back("rank-deficient correction basis for effect " +
                               effect_name(cf.k_star, d.names) +
                               " at iteration " + std::to_string(s));

    const Matrix& Z_use = pot.expanded ? pot.Z : st.Z;
    const Vector& l0_use = pot.expanded ? pot.lambda0_diag : st.lambda0_diag;
    const Matrix& Q_warm = pot.expanded ? pot.Q_init : st.Q_mode;
    GibbsSummary summary = gibbs_sweep(d.y, Xd, st.beta, Z_use, m, l0_use, Q_warm,
                                       st.sigma2_mode, h, rng);

    IterationRecord rec;
    rec.k_star = cf.k_star;
    rec.mse_fixed_kstar = cf.mse_fixed(cf.k_star - 1);
    if (pot.expanded) {
      const ReDecision dec = random_effect_decision(rec.mse_fixed_kstar, u, d, cf, pot,
                                                    summary, st);
      rec.decision = dec.accepted ? ReDecisionKind::accepted : ReDecisionKind::rejected;
      rec.mse_random_kstar = dec.mse_random;
      needs_subset.push_back(!dec.accepted);
    } else {
      st.gamma_mode = summary.gamma_mode;
      st.sigma2_mode = summary.sigma2_mode;
      {
        Eigen::LLT<Matrix> probe(0.5 * (summary.Q_mode_raw + summary.Q_mode_raw.transpose()));
        rec.q_repaired = probe.info() != Eigen::Success;
      }
      st.Q_mode = nearest_positive_definite(summary.Q_mode_raw);
      needs_subset.push_back(false);
    }
    st.fitted = Xd * st.beta + st.Z * st.gamma_mode;
    st.iteration = s;

    const CaicParts cp = conditional_aic(d.y, Xd, st.beta, st.Z, st.gamma_mode,
                                         st.sigma2_mode, st.Q_mode);
    rec.caic_raw = cp.caic;
    rec.q_repaired = rec.q_repaired || cp.q_repaired;
    rec.beta = st.beta;
    rec.sigma2_mode = st.sigma2_mode;
    rec.Q_mode = st.Q_mode;
    rec.E = st.E;
    rec.gamma_mode = st.gamma_mode;
    rec.max_ortho = orthogonality_violation(st, m);
    trace.caic.raw.push_back(cp.caic);
    trace.iterations.push_back(std::move(rec));
    summaries.push_back(std::move(summary));
  }

  trace.caic.window = h.hampel_window;
  trace.caic.k_sigma = h.hampel_k;
  trace.caic.filtered = hampel_filter(trace.caic.raw, h.hampel_window, h.hampel_k);
  trace.stopping = patience_stop(trace.caic.filtered, h.alpha, h.zeta);
  if (!trace.stopping.stabilized)
    trace.warnings.push_back(
        "no stabilized region found before m_stop; returning the best iteration seen");

  // Reconstruct the state at the stopping iteration. E only ever grows by
  // appending and blocks are immutable once built, so the stopped structure is
  // a per-cluster column prefix of the final one.
  const int s_stop = trace.stopping.stop_iteration;
  const IterationRecord& stop_rec = trace.iterations[s_stop - 1];
  const int r_stop = static_cast<int>(stop_rec.E.size());
  const int r_fin = static_cast<int>(st.E.size());
  ModelState fin;
  fin.beta = stop_rec.beta;
  fin.E = stop_rec.E;
  fin.Z = detail::prefix_columns(st.Z, m, r_fin, r_stop);
  fin.Z_tilde = detail::prefix_columns(st.Z_tilde, m, r_fin, r_stop);
  fin.block_basis.assign(st.block_basis.begin(), st.block_basis.begin() + r_stop);
  fin.Q_mode = stop_rec.Q_mode;
  fin.sigma2_mode = stop_rec.sigma2_mode;
  fin.gamma_mode = stop_rec.gamma_mode;
  fin.lambda0_diag = st.lambda0_diag.head(r_stop);
  fin.fitted = Xd * fin.beta + fin.Z * fin.gamma_mode;
  fin.iteration = s_stop;
  trace.final_state = std::move(fin);

  GibbsSummary& fs = summaries[s_stop - 1];
  if (needs_subset[s_stop - 1]) {
    fs.gamma_samples = detail::drop_last_effect_samples(fs.gamma_samples, m);
    fs.gamma_mode = detail::drop_last_effect(fs.gamma_mode, m);
    const Eigen::Index rr = fs.Q_mode_raw.rows() - 1;
    fs.Q_mode_raw = Matrix(fs.Q_mode_raw.topLeftCorner(rr, rr));
    for (Matrix& Qs : fs.Q_samples) Qs = Matrix(Qs.topLeftCorner(rr, rr));
  }
  trace.final_gamma_quantiles = detail::sample_quantiles(fs.gamma_samples);
  trace.final_summary = std::move(fs);
  return trace;
}

}  // namespace bayesboost

#endif
