#ifndef BAYESBOOST_SIMULATION_HPP
#define BAYESBOOST_SIMULATION_HPP

#include <cmath>
#include <string>
#include <thread>
#include <utility>
#include <vector>

#include "boosting.hpp"
#include "dataset.hpp"
#include "distributions.hpp"
#include "rng.hpp"
#include "types.hpp"

namespace bayesboost {

enum class SimDesign { random_intercept, random_slope };

/// Benchmark cell configuration. Defaults mirror the study design: 50
/// clusters of 10 observations, noise sd 0.4, intercept 1 with coefficients
/// (2, 4, 3, 5) on the first four covariates of which x1, x2 are
/// cluster-constant, and random slopes on x3, x4 with correlation 0.6.
struct SimConfig {
  SimDesign design = SimDesign::random_intercept;
  int m = 50;
  int n_i = 10;
  int p = 10;
  double tau = 0.4;    // random-effect scale, variance tau^2
  double sigma = 0.4;  // error sd
  double corr = 0.6;   // off-diagonal correlation of the slope design
  int n_replications = 100;
  std::uint64_t seed = 1;
  Hyperparams hyper;
  ReMode re_mode = ReMode::auto_select;

  void validate() const {
    hyper.validate();
    if (m < 2) throw ConfigError("sim config: need at least 2 clusters");
    if (n_i < 1) throw ConfigError("sim config: need at least 1 row per cluster");
    if (p < 4) throw ConfigError("sim config: need at least 4 covariates");
    if (!(tau > 0.0)) throw ConfigError("sim config: tau must be positive");
    if (!(sigma > 0.0)) throw ConfigError("sim config: sigma must be positive");
    if (!(corr > -0.5) || !(corr < 1.0))
      throw ConfigError("sim config: corr must keep the 3x3 covariance positive definite");
    if (n_replications < 1)
      throw ConfigError("sim config: need at least 1 replication");
  }
};

struct SimTruth {
  Vector beta_true;                  // p + 1 including the intercept
  std::vector<int> informative_fixed;   // covariate ids with nonzero beta
  std::vector<int> informative_random;  // covariate ids with true random slopes
  Matrix Q_true;                     // (1 + q) x (1 + q)
  double sigma2_true = 0.0;
  Matrix gamma_true;                 // m x (1 + q), realized effects
};

namespace detail {

// Intercept 1 and coefficients (2, 4, 3, 5) on the first four covariates.
inline Vector informative_beta(int p) {
  Vector beta = Vector::Zero(p + 1);
  beta(0) = 1.0;
  beta(1) = 2.0;
  beta(2) = 4.0;
  beta(3) = 3.0;
  beta(4) = 5.0;
  return beta;
}

inline Dataset sim_covariates(const SimConfig& cfg, RngStream& rng) {
  const int n = cfg.m * cfg.n_i;
  Dataset d;
  d.y = Vector::Zero(n);
  d.X.resize(n, cfg.p);
  d.cluster_ids.resize(n);
  d.n_i.assign(cfg.m, cfg.n_i);
  d.orig_rows.resize(n);
  for (int r = 0; r < n; ++r) {
    d.cluster_ids(r) = r / cfg.n_i;
    d.orig_rows[r] = r;
  }
  for (int i = 0; i < cfg.m; ++i) d.cluster_labels.push_back(i + 1);
  for (int k = 0; k < cfg.p; ++k) {
    d.names.push_back("x" + std::to_string(k + 1));
    if (k < 2) {
      // cluster-constant: one draw per cluster, replicated down its rows
      for (int i = 0; i < cfg.m; ++i) {
        const double v = rng.normal();
        for (int j = 0; j < cfg.n_i; ++j) d.X(i * cfg.n_i + j, k) = v;
      }
    } else {
      for (int r = 0; r < n; ++r) d.X(r, k) = rng.normal();
    }
  }
  return d;
}

}  // namespace detail

/// Clustered data with informative fixed effects and a random intercept
/// gamma_0i ~ N(0, tau^2).
inline std::pair<Dataset, SimTruth> gen_random_intercept(const SimConfig& cfg,
                                                         RngStream& rng) {
  cfg.validate();
  Dataset d = detail::sim_covariates(cfg, rng);
  SimTruth truth;
  truth.beta_true = detail::informative_beta(cfg.p);
  truth.informative_fixed = {1, 2, 3, 4};
  truth.informative_random = {};
  truth.Q_true = Matrix::Constant(1, 1, cfg.tau * cfg.tau);
  truth.sigma2_true = cfg.sigma * cfg.sigma;
  truth.gamma_true.resize(cfg.m, 1);
  for (int i = 0; i < cfg.m; ++i) truth.gamma_true(i, 0) = cfg.tau * rng.normal();
  for (int r = 0; r < d.n(); ++r) {
    const int i = d.cluster_ids(r);
    double mean = truth.beta_true(0);
    for (int k = 0; k < cfg.p; ++k) mean += truth.beta_true(k + 1) * d.X(r, k);
    d.y(r) = mean + truth.gamma_true(i, 0) + cfg.sigma * rng.normal();
  }
  return {std::move(d), std::move(truth)};
}

/// Clustered data with the same fixed effects plus correlated random slopes on
/// x3 and x4: (gamma_0, gamma_1, gamma_2) ~ N(0, Q) with diagonal tau^2 and
/// off-diagonal corr * tau^2.
inline std::pair<Dataset, SimTruth> gen_random_slope(const SimConfig& cfg,
                                                     RngStream& rng) {
  cfg.validate();
  Dataset d = detail::sim_covariates(cfg, rng);
  SimTruth truth;
  truth.beta_true = detail::informative_beta(cfg.p);
  truth.informative_fixed = {1, 2, 3, 4};
  truth.informative_random = {3, 4};
  const double t2 = cfg.tau * cfg.tau;
  truth.Q_true = Matrix::Constant(3, 3, cfg.corr * t2);
  truth.Q_true.diagonal().setConstant(t2);
  truth.sigma2_true = cfg.sigma * cfg.sigma;
  const CholeskyResult ch = safe_cholesky(truth.Q_true);
  truth.gamma_true.resize(cfg.m, 3);
  Vector z(3);
  for (int i = 0; i < cfg.m; ++i) {
    rng.fill_normal(z);
    truth.gamma_true.row(i) = (ch.L * z).transpose();
  }
  for (int r = 0; r < d.n(); ++r) {
    const int i = d.cluster_ids(r);
    double mean = truth.beta_true(0);
    for (int k = 0; k < cfg.p; ++k) mean += truth.beta_true(k + 1) * d.X(r, k);
    mean += truth.gamma_true(i, 0) + truth.gamma_true(i, 1) * d.X(r, 2) +
            truth.gamma_true(i, 2) * d.X(r, 3);
    d.y(r) = mean + cfg.sigma * rng.normal();
  }
  return {std::move(d), std::move(truth)};
}

/// Per-replication evaluation. Squared-norm errors for beta and gamma,
/// squared error for the variances, Frobenius distance for Q. Selection rates
/// use the noise covariates as denominator; a random effect missing from the
/// fit contributes its full true values as error, an extra one contributes
/// its estimate.
struct Metrics {
  double mse_beta = 0.0;
  double mse_gamma = 0.0;
  double mse_sigma2 = 0.0;
  double mse_tau2_or_q = 0.0;  // tau^2 squared error or Frobenius Q distance
  double fp_beta = 0.0;
  double fn_beta = 0.0;
  double fp_gamma = 0.0;
  double fn_gamma = 0.0;
  double stopping_iteration = 0.0;
};

inline Metrics evaluate_fit(const FitTrace& trace, const SimTruth& truth,
                            const SimConfig& cfg) {
  const ModelState& st = trace.final_state;
  const int m = cfg.m;
  Metrics mt;
  mt.mse_beta = (truth.beta_true - st.beta).squaredNorm();
  mt.mse_sigma2 = std::pow(truth.sigma2_true - st.sigma2_mode, 2);
  mt.stopping_iteration = trace.stopping.stop_iteration;

  const auto& IF = truth.informative_fixed;
  std::vector<int> selected_fixed;
  for (int k = 1; k <= cfg.p; ++k)
    if (st.beta(k) != 0.0) selected_fixed.push_back(k);
  const int n_noise = cfg.p - static_cast<int>(IF.size());
  int fp = 0, fn = 0;
  for (int k : selected_fixed)
    if (std::find(IF.begin(), IF.end(), k) == IF.end()) ++fp;
  for (int k : IF)
    if (std::find(selected_fixed.begin(), selected_fixed.end(), k) ==
        selected_fixed.end())
      ++fn;
  mt.fp_beta = n_noise > 0 ? static_cast<double>(fp) / n_noise : 0.0;
  mt.fn_beta = IF.empty() ? 0.0 : static_cast<double>(fn) / IF.size();

  // Random-effect selection. The intercept is always present on both sides.
  const auto& TR = truth.informative_random;
  std::vector<int> RE;
  for (int e : st.E)
    if (e != kInterceptEffect) RE.push_back(e);
  // A random effect counts as a false positive only when its covariate is
  // noise. Random effects sit on selected fixed effects, so on the same
  // denominator fp_gamma can never exceed fp_beta.
  int fpg = 0, fng = 0;
  for (int e : RE)
    if (std::find(IF.begin(), IF.end(), e) == IF.end()) ++fpg;
  for (int e : TR)
    if (std::find(RE.begin(), RE.end(), e) == RE.end()) ++fng;
  mt.fp_gamma = n_noise > 0 ? static_cast<double>(fpg) / n_noise : 0.0;
  mt.fn_gamma = TR.empty() ? 0.0 : static_cast<double>(fng) / TR.size();

  // gamma error over the union of true and selected effects, cluster by
  // cluster. True effect columns: intercept, then informative_random order.
  const int r_est = static_cast<int>(st.E.size());
  std::vector<int> union_effects = {kInterceptEffect};
  for (int e : TR) union_effects.push_back(e);
  for (int e : RE)
    if (std::find(union_effects.begin(), union_effects.end(), e) ==
        union_effects.end())
      union_effects.push_back(e);
  double gerr = 0.0;
  for (int e : union_effects) {
    int true_col = -1;
    if (e == kInterceptEffect) true_col = 0;
    else {
      const auto it = std::find(TR.begin(), TR.end(), e);
      if (it != TR.end()) true_col = 1 + static_cast<int>(it - TR.begin());
    }
    int est_pos = -1;
    const auto jt = std::find(st.E.begin(), st.E.end(), e);
    if (jt != st.E.end()) est_pos = static_cast<int>(jt - st.E.begin());
    for (int i = 0; i < m; ++i) {
      const double gt = true_col >= 0 ? truth.gamma_true(i, true_col) : 0.0;
      const double ge =
          est_pos >= 0 ? st.gamma_mode(static_cast<Eigen::Index>(i) * r_est + est_pos)
                       : 0.0;
      gerr += (gt - ge) * (gt - ge);
    }
  }
  mt.mse_gamma = gerr;

  if (cfg.design == SimDesign::random_intercept) {
    mt.mse_tau2_or_q = std::pow(truth.Q_true(0, 0) - st.Q_mode(0, 0), 2);
  } else {
    // Truth-aligned covariance: rows/cols ordered intercept, then the true
    // slope effects; entries of unselected effects are zero.
    const int dq = static_cast<int>(TR.size()) + 1;
    Matrix Qe = Matrix::Zero(dq, dq);
    std::vector<int> pos(dq, -1);
    pos[0] = 0;
    for (int t = 0; t < static_cast<int>(TR.size()); ++t) {
      const auto it = std::find(st.E.begin(), st.E.end(), TR[t]);
      if (it != st.E.end()) pos[t + 1] = static_cast<int>(it - st.E.begin());
    }
    for (int a = 0; a < dq; ++a)
      for (int b = 0; b < dq; ++b)
        if (pos[a] >= 0 && pos[b] >= 0) Qe(a, b) = st.Q_mode(pos[a], pos[b]);
    mt.mse_tau2_or_q = (truth.Q_true - Qe).norm();
  }
  return mt;
}

struct BenchmarkResult {
  SimConfig config;
  std::vector<Metrics> per_run;   // successful replications, in order
  std::vector<int> run_index;     // 1-based replication of each per_run row
  std::vector<int> failed_runs;   // 1-based indices of failed replications
  std::vector<std::string> failure_messages;
  Metrics mean;                   // over successful replications
};

/// Runs n_replications independent generate/fit/evaluate cycles. Every
/// replication owns its own generation stream and fit seed derived from the
/// config seed, so results do not depend on the worker count and repeat runs
/// are identical. Failed replications are recorded and excluded from means.
inline BenchmarkResult run_benchmark(const SimConfig& cfg, int workers = 1) {
  cfg.validate();
  if (workers < 1) throw ConfigError("run_benchmark: workers must be >= 1");
  const int R = cfg.n_replications;
  std::vector<Metrics> results(R);
  std::vector<bool> failed(R, false);
  std::vector<std::string> messages(R);

  auto run_one = [&](int rep) {
    try {
      RngStream gen(cfg.seed, static_cast<std::uint64_t>(rep) + 1);
      auto [d, truth] = cfg.design == SimDesign::random_intercept
                            ? gen_random_intercept(cfg, gen)
                            : gen_random_slope(cfg, gen);
      Hyperparams h = cfg.hyper;
      h.re_mode = cfg.re_mode;
      if (cfg.re_mode == ReMode::fixed_structure && h.fixed_effects.empty() &&
          cfg.design == SimDesign::random_slope)
        h.fixed_effects = {3, 4};
      h.seed = mix_seed(cfg.seed, static_cast<std::uint64_t>(rep) + 1);
      const FitTrace trace = boost_fit(d, h);
      results[rep] = evaluate_fit(trace, truth, cfg);
    } catch (const std::exception& e) {
      failed[rep] = true;
      messages[rep] = e.what();
    }
  };

  if (workers == 1) {
    for (int rep = 0; rep < R; ++rep) run_one(rep);
  } else {
    std::vector<std::thread> pool;
    for (int w = 0; w < workers; ++w) {
      pool.emplace_back([&, w]() {
        for (int rep = w; rep < R; rep += workers) run_one(rep);
      });
    }
    for (auto& t : pool) t.join();
  }

  BenchmarkResult out;
  out.config = cfg;
  for (int rep = 0; rep < R; ++rep) {
    if (failed[rep]) {
      out.failed_runs.push_back(rep + 1);
      out.failure_messages.push_back(messages[rep]);
    } else {
      out.per_run.push_back(results[rep]);
      out.run_index.push_back(rep + 1);
    }
  }
  const int S = static_cast<int>(out.per_run.size());
  if (S > 0) {
    for (const Metrics& mt : out.per_run) {
      out.mean.mse_beta += mt.mse_beta;
      out.mean.mse_gamma += mt.mse_gamma;
      out.mean.mse_sigma2 += mt.mse_sigma2;
      out.mean.mse_tau2_or_q += mt.mse_tau2_or_q;
      out.mean.fp_beta += mt.fp_beta;
      out.mean.fn_beta += mt.fn_beta;
      out.mean.fp_gamma += mt.fp_gamma;
      out.mean.fn_gamma += mt.fn_gamma;
      out.mean.stopping_iteration += mt.stopping_iteration;
    }
    out.mean.mse_beta /= S;
    out.mean.mse_gamma /= S;
    out.mean.mse_sigma2 /= S;
    out.mean.mse_tau2_or_q /= S;
    out.mean.fp_beta /= S;
    out.mean.fn_beta /= S;
    out.mean.fp_gamma /= S;
    out.mean.fn_gamma /= S;
    out.mean.stopping_iteration /= S;
  }
  return out;
}

}  // namespace bayesboost

#endif
