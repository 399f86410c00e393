#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <vector>

#include <bayesboost/boosting.hpp>
#include <bayesboost/simulation.hpp>

using namespace bayesboost;

namespace {

// Two clusters of three rows, one within-cluster covariate and one
// cluster-constant covariate.
Dataset tiny_dataset() {
  Dataset d;
  d.y.resize(6);
  d.y << 1.0, 2.0, 3.0, 7.0, 8.0, 9.0;
  d.X.resize(6, 2);
  d.X << 0.5, 1.0,
         1.5, 1.0,
         2.5, 1.0,
         0.2, 2.0,
         1.2, 2.0,
         2.2, 2.0;
  d.cluster_ids.resize(6);
  d.cluster_ids << 0, 0, 0, 1, 1, 1;
  d.n_i = {3, 3};
  d.names = {"v", "c"};
  d.cluster_labels = {1, 2};
  d.orig_rows = {0, 1, 2, 3, 4, 5};
  return d;
}

Dataset sim_intercept_data(std::uint64_t seed, int m, int n_i, int p, double tau) {
  SimConfig cfg;
  cfg.design = SimDesign::random_intercept;
  cfg.m = m;
  cfg.n_i = n_i;
  cfg.p = p;
  cfg.tau = tau;
  RngStream rng(seed, 1);
  return gen_random_intercept(cfg, rng).first;
}

}  // namespace

TEST_CASE("raw effect blocks carry covariate values on their own cluster only",
          "[design]") {
  const Dataset d = tiny_dataset();
  const Matrix B0 = raw_effect_block(d, kInterceptEffect);
  REQUIRE(B0.rows() == 6);
  REQUIRE(B0.cols() == 2);
  CHECK(B0.col(0).head(3) == Vector::Ones(3));
  CHECK(B0.col(0).tail(3) == Vector::Zero(3));
  CHECK(B0.col(1).tail(3) == Vector::Ones(3));

  const Matrix B1 = raw_effect_block(d, 1);
  CHECK(B1(0, 0) == 0.5);
  CHECK(B1(3, 0) == 0.0);
  CHECK(B1(3, 1) == 0.2);
}

TEST_CASE("initial state starts from cluster means and the grand mean", "[init]") {
  const Dataset d = tiny_dataset();
  Hyperparams h;
  h.m_stop = 20;
  const ModelState st = init_state(d, h);

  CHECK(st.beta(0) == Catch::Approx(5.0));
  CHECK(st.beta(1) == 0.0);
  CHECK(st.beta(2) == 0.0);
  CHECK(st.E == std::vector<int>{kInterceptEffect});
  CHECK(st.Q_mode == Matrix::Identity(1, 1));
  CHECK(st.sigma2_mode == 1.0);
  CHECK(st.gamma_mode == Vector::Zero(2));
  CHECK(st.lambda0_diag == Vector::Constant(1, 1.0));
  CHECK(st.fitted.head(3) == Vector::Constant(3, 2.0));
  CHECK(st.fitted.tail(3) == Vector::Constant(3, 8.0));

  // per-block correction: the intercept block is orthogonal to the
  // cluster-constant covariate and to the ones column
  CHECK(std::abs(d.X.col(1).dot(st.Z.col(0))) < 1e-10);
  CHECK(std::abs(d.X.col(1).dot(st.Z.col(1))) < 1e-10);
  CHECK(std::abs(st.Z.col(0).sum()) < 1e-10);
  CHECK(std::abs(st.Z.col(1).sum()) < 1e-10);
}

TEST_CASE("without cluster-constant covariates the intercept block stays raw",
          "[init]") {
  Dataset d = tiny_dataset();
  // perturb the cluster-constant column so nothing is constant anymore
  d.X(0, 1) += 0.5;
  REQUIRE(detect_cluster_constant(d).is_constant == std::vector<bool>{false, false});
  Hyperparams h;
  const ModelState st = init_state(d, h);
  CHECK(st.Z == raw_effect_block(d, kInterceptEffect));
  CHECK(st.block_basis[0].cols() == 0);
}

TEST_CASE("declared random-effect structures are validated and installed",
          "[init]") {
  const Dataset d = tiny_dataset();
  Hyperparams h;
  h.re_mode = ReMode::fixed_structure;

  SECTION("valid declaration installs the slope block") {
    h.fixed_effects = {1};
    const ModelState st = init_state(d, h);
    CHECK(st.E == std::vector<int>{kInterceptEffect, 1});
    CHECK(st.Z.cols() == 4);
    CHECK(st.Q_mode == Matrix::Identity(2, 2));
    // slope block corrected against the ones column and its own covariate
    CHECK(std::abs(d.X.col(0).dot(st.Z.col(1))) < 1e-10);
    CHECK(std::abs(d.X.col(0).dot(st.Z.col(3))) < 1e-10);
    CHECK(std::abs(st.Z.col(1).sum()) < 1e-10);
    CHECK(std::abs(st.Z.col(3).sum()) < 1e-10);
  }
  SECTION("out-of-range declaration") {
    h.fixed_effects = {3};
    CHECK_THROWS_AS(init_state(d, h), ConfigError);
  }
  SECTION("duplicate declaration") {
    h.fixed_effects = {1, 1};
    CHECK_THROWS_AS(init_state(d, h), ConfigError);
  }
}

TEST_CASE("componentwise learner finds the exact simple regression", "[boost]") {
  Dataset d;
  d.y.resize(3);
  d.y << 0, 0, 0;
  d.X.resize(3, 1);
  d.X << 1, 2, 3;
  d.cluster_ids.resize(3);
  d.cluster_ids << 0, 0, 1;
  d.n_i = {2, 1};
  d.names = {"x"};
  d.cluster_labels = {1, 2};
  d.orig_rows = {0, 1, 2};

  Vector u(3);
  u << 1, 2, 3;
  const ComponentwiseFit cf = fit_componentwise(u, d);
  CHECK(cf.k_star == 1);
  CHECK(cf.intercept == Catch::Approx(0.0).margin(1e-12));
  CHECK(cf.slope == Catch::Approx(1.0));
  CHECK(cf.mse_fixed(0) == Catch::Approx(0.0).margin(1e-20));
}

TEST_CASE("exact ties go to the lowest covariate index", "[boost]") {
  Dataset d;
  d.y = Vector::Zero(4);
  d.X.resize(4, 2);
  // both columns explain u perfectly, so both mse are exactly zero
  d.X << 1, 2, 1, 2, -1, -2, -1, -2;
  d.cluster_ids.resize(4);
  d.cluster_ids << 0, 0, 1, 1;
  d.n_i = {2, 2};
  d.names = {"x1", "x2"};
  d.cluster_labels = {1, 2};
  d.orig_rows = {0, 1, 2, 3};

  Vector u(4);
  u << 1, 1, -1, -1;
  const ComponentwiseFit cf = fit_componentwise(u, d);
  CHECK(cf.mse_fixed(0) == cf.mse_fixed(1));
  CHECK(cf.k_star == 1);
}

TEST_CASE("zero-variance covariates degrade to the intercept fit", "[boost]") {
  Dataset d = tiny_dataset();
  d.X.col(0).setConstant(2.0);
  Vector u(6);
  u << 1, 2, 3, 4, 5, 6;
  const ComponentwiseFit cf = fit_componentwise(u, d);
  // column 2 (cluster labels 1/2) still carries signal; column 1 none
  CHECK(cf.mse_fixed(0) >= cf.mse_fixed(1));
  CHECK(cf.k_star == 2);
}

TEST_CASE("fixed-effect update touches the intercept and the winner only",
          "[boost]") {
  const Dataset d = tiny_dataset();
  Hyperparams h;
  ModelState st = init_state(d, h);
  st.beta.setZero();
  ComponentwiseFit cf;
  cf.k_star = 2;
  cf.intercept = 1.0;
  cf.slope = 2.0;
  update_fixed(st, cf, 0.3);
  CHECK(st.beta(0) == Catch::Approx(0.3));
  CHECK(st.beta(1) == 0.0);
  CHECK(st.beta(2) == Catch::Approx(0.6));
}

TEST_CASE("potential structure appends one effect everywhere", "[expand]") {
  const Dataset d = tiny_dataset();
  Hyperparams h;
  ModelState st = init_state(d, h);
  st.Q_mode(0, 0) = 0.7;
  st.gamma_mode << 0.1, -0.2;
  const ClusterConstantMask mask = detect_cluster_constant(d);

  const PotentialState pot =
      expand_potential_structure(st, 1, d, mask, CorrectionMode::per_block);
  REQUIRE(pot.expanded);
  CHECK(pot.E == std::vector<int>{kInterceptEffect, 1});
  CHECK(pot.Z.cols() == 4);
  // warm start grows by a unit diagonal entry
  Matrix Qexp(2, 2);
  Qexp << 0.7, 0, 0, 1.0;
  CHECK(pot.Q_init == Qexp);
  CHECK(pot.lambda0_diag == Vector::Ones(2));
  Vector gexp(4);
  gexp << 0.1, 0, -0.2, 0;
  CHECK(pot.gamma_init == gexp);
  // cluster-major layout: old block first within each cluster group
  CHECK(pot.Z.col(0) == st.Z.col(0));
  CHECK(pot.Z.col(2) == st.Z.col(1));

  // an effect already present is not expanded again
  ModelState st2 = st;
  st2.E = {kInterceptEffect, 1};
  CHECK_FALSE(expand_potential_structure(st2, 1, d, mask, CorrectionMode::per_block)
                  .expanded);
}

TEST_CASE("two-step expansion stacks unit entries on the warm start", "[expand]") {
  const Dataset d = tiny_dataset();
  Hyperparams h;
  ModelState st = init_state(d, h);
  const ClusterConstantMask mask = detect_cluster_constant(d);
  PotentialState pot1 =
      expand_potential_structure(st, 1, d, mask, CorrectionMode::per_block);
  st.E = pot1.E;
  st.Z = pot1.Z;
  st.Z_tilde = pot1.Z_tilde;
  st.block_basis = pot1.block_basis;
  st.lambda0_diag = pot1.lambda0_diag;
  st.Q_mode = pot1.Q_init;
  st.gamma_mode = pot1.gamma_init;
  const PotentialState pot2 =
      expand_potential_structure(st, 2, d, mask, CorrectionMode::per_block);
  REQUIRE(pot2.expanded);
  CHECK(pot2.Q_init.rows() == 3);
  CHECK(pot2.Q_init.trace() == Catch::Approx(3.0));
  CHECK(pot2.lambda0_diag == Vector::Ones(3));
  CHECK(pot2.E == std::vector<int>{0, 1, 2});
}

TEST_CASE("gamma full conditional matches the identity-design closed form",
          "[gibbs]") {
  const Matrix ZtZ = Matrix::Identity(2, 2);
  Vector Zty(2);
  Zty << 2.0, 4.0;
  const GammaConditional gc =
      gamma_full_conditional(ZtZ, Zty, 1.0, Matrix::Identity(1, 1), 2);
  CHECK_FALSE(gc.repaired);
  CHECK(gc.mu(0) == Catch::Approx(1.0));
  CHECK(gc.mu(1) == Catch::Approx(2.0));
  const Matrix Sigma = gc.prec_llt.solve(Matrix::Identity(2, 2));
  CHECK(Sigma(0, 0) == Catch::Approx(0.5));
  CHECK(Sigma(1, 1) == Catch::Approx(0.5));
  CHECK(Sigma(0, 1) == Catch::Approx(0.0).margin(1e-14));
}

TEST_CASE("upper-triangular solve sampling has the conditional covariance",
          "[gibbs]") {
  // correlated precision so the U^-1 z transform is actually exercised
  Matrix ZtZ(2, 2);
  ZtZ << 2.0, 0.8, 0.8, 1.5;
  Vector Zty(2);
  Zty << 1.0, -1.0;
  const double sigma2 = 0.5;
  const GammaConditional gc =
      gamma_full_conditional(ZtZ, Zty, sigma2, Matrix::Identity(2, 2), 1);
  const Matrix Sigma_ref = gc.prec_llt.solve(Matrix::Identity(2, 2));

  RngStream rng(2024);
  const int N = 200000;
  Vector z(2), s = Vector::Zero(2);
  Matrix s2 = Matrix::Zero(2, 2);
  for (int i = 0; i < N; ++i) {
    rng.fill_normal(z);
    const Vector g = gc.mu + gc.prec_llt.matrixU().solve(z);
    s += g;
    s2 += g * g.transpose();
  }
  const Vector mean = s / N;
  const Matrix cov = s2 / N - mean * mean.transpose();
  CHECK((mean - gc.mu).lpNorm<Eigen::Infinity>() < 0.01);
  CHECK((cov - Sigma_ref).lpNorm<Eigen::Infinity>() < 0.01);
}

TEST_CASE("variance posterior adds half the residual energy", "[gibbs]") {
  Vector resid(4);
  resid << 1, -1, 1, -1;
  const InvGammaParams p = error_variance_posterior(0.001, 0.001, resid);
  CHECK(p.shape == Catch::Approx(2.001));
  CHECK(p.scale == Catch::Approx(2.001));
}

TEST_CASE("covariance posterior accumulates cluster outer products", "[gibbs]") {
  Vector g(4);
  g << 1, 2, 3, 4;  // two clusters, r = 2
  Vector l0(2);
  l0 << 0.5, 0.25;
  const InvWishartParams p = covariance_posterior(1.0, l0, g, 2);
  CHECK(p.dof == Catch::Approx(3.0));
  Matrix expect(2, 2);
  expect << 0.5 + 1 + 9, 2 + 12, 2 + 12, 0.25 + 4 + 16;
  CHECK((p.scale_matrix - expect).lpNorm<Eigen::Infinity>() < 1e-12);
}

TEST_CASE("gibbs block is reproducible and reports every sweep", "[gibbs]") {
  const Dataset d = sim_intercept_data(3, 8, 5, 4, 0.8);
  Hyperparams h;
  h.T = 12;
  const ModelState st = init_state(d, h);
  const Matrix Xd = fixed_design(d);

  RngStream r1(99, 0), r2(99, 0);
  const GibbsSummary a = gibbs_sweep(d.y, Xd, st.beta, st.Z, d.m(), st.lambda0_diag,
                                     st.Q_mode, st.sigma2_mode, h, r1);
  const GibbsSummary b = gibbs_sweep(d.y, Xd, st.beta, st.Z, d.m(), st.lambda0_diag,
                                     st.Q_mode, st.sigma2_mode, h, r2);
  REQUIRE(a.gamma_samples.rows() == 12);
  REQUIRE(a.gamma_samples.cols() == d.m());
  CHECK(a.gamma_samples == b.gamma_samples);
  CHECK(a.sigma2_samples == b.sigma2_samples);
  CHECK(a.sigma2_mode == b.sigma2_mode);
  CHECK((a.sigma2_samples.array() > 0.0).all());
  for (const Matrix& Q : a.Q_samples) CHECK(Q(0, 0) > 0.0);
}

TEST_CASE("candidate effects are accepted only on strict improvement",
          "[decision]") {
  const Dataset d = tiny_dataset();
  Hyperparams h;
  const ClusterConstantMask mask = detect_cluster_constant(d);

  Vector u(6);
  u << 0.4, -0.1, 0.3, -0.2, 0.1, -0.3;
  ComponentwiseFit cf;
  cf.k_star = 1;
  cf.intercept = 0.0;
  cf.slope = 0.0;
  cf.mse_fixed = Vector::Constant(2, u.squaredNorm() / 6);
  const double mse_fixed = cf.mse_fixed(0);

  SECTION("zero candidate contribution is a tie and rejects") {
    ModelState st = init_state(d, h);
    st.Q_mode(0, 0) = 0.6;
    const PotentialState pot =
        expand_potential_structure(st, 1, d, mask, CorrectionMode::per_block);
    GibbsSummary summary;
    summary.gamma_mode = Vector::Zero(4);
    summary.sigma2_mode = 0.33;
    summary.Q_mode_raw = Matrix::Identity(2, 2);
    const ReDecision dec =
        random_effect_decision(mse_fixed, u, d, cf, pot, summary, st);
    CHECK(dec.mse_random == Catch::Approx(mse_fixed));
    CHECK_FALSE(dec.accepted);
    CHECK(st.E == std::vector<int>{kInterceptEffect});
    CHECK(st.gamma_mode.size() == 2);
    CHECK(st.Q_mode.rows() == 1);
    CHECK(st.sigma2_mode == Catch::Approx(0.33));
  }
  SECTION("a contribution that explains the residual is accepted") {
    ModelState st = init_state(d, h);
    const PotentialState pot =
        expand_potential_structure(st, 1, d, mask, CorrectionMode::per_block);
    // choose the new-block coefficients by least squares on u so the candidate
    // genuinely reduces the in-sample error
    Matrix Znew(6, 2);
    Znew.col(0) = pot.Z.col(1);
    Znew.col(1) = pot.Z.col(3);
    const Vector coef =
        (Znew.transpose() * Znew).ldlt().solve(Znew.transpose() * u);
    GibbsSummary summary;
    summary.gamma_mode = Vector::Zero(4);
    summary.gamma_mode(1) = coef(0);
    summary.gamma_mode(3) = coef(1);
    summary.sigma2_mode = 0.2;
    summary.Q_mode_raw = Matrix::Identity(2, 2);
    const ReDecision dec =
        random_effect_decision(mse_fixed, u, d, cf, pot, summary, st);
    CHECK(dec.mse_random < mse_fixed);
    CHECK(dec.accepted);
    CHECK(st.E == std::vector<int>{kInterceptEffect, 1});
    CHECK(st.gamma_mode.size() == 4);
    CHECK(st.Q_mode.rows() == 2);
    Eigen::SelfAdjointEigenSolver<Matrix> es(st.Q_mode);
    CHECK(es.eigenvalues().minCoeff() > 0.0);
  }
}

TEST_CASE("full fits are bitwise reproducible", "[fit]") {
  const Dataset d = sim_intercept_data(11, 12, 6, 5, 0.8);
  Hyperparams h;
  h.m_stop = 30;
  h.zeta = 8;
  h.alpha = 3;
  h.seed = 5;
  const FitTrace t1 = boost_fit(d, h);
  const FitTrace t2 = boost_fit(d, h);
  REQUIRE(t1.caic.raw.size() == 30);
  CHECK(t1.caic.raw == t2.caic.raw);
  CHECK(t1.stopping.stop_iteration == t2.stopping.stop_iteration);
  CHECK(t1.final_state.beta == t2.final_state.beta);
  CHECK(t1.final_state.gamma_mode == t2.final_state.gamma_mode);
  CHECK(t1.final_state.Q_mode == t2.final_state.Q_mode);

  Hyperparams h2 = h;
  h2.seed = 6;
  const FitTrace t3 = boost_fit(d, h2);
  CHECK(t1.caic.raw != t3.caic.raw);
}

TEST_CASE("fit trace keeps the structural invariants", "[fit]") {
  const Dataset d = sim_intercept_data(21, 15, 6, 6, 0.8);
  Hyperparams h;
  h.m_stop = 40;
  h.zeta = 10;
  h.alpha = 3;
  h.seed = 17;
  const FitTrace tr = boost_fit(d, h);
  REQUIRE(tr.iterations.size() == 40);
  const int s = tr.stopping.stop_iteration;
  REQUIRE(s >= 1);
  REQUIRE(s <= 40);

  const ClusterConstantMask mask = detect_cluster_constant(d);
  for (std::size_t i = 0; i < tr.iterations.size(); ++i) {
    const IterationRecord& rec = tr.iterations[i];
    // intercept effect always first, E grows by appending only
    REQUIRE_FALSE(rec.E.empty());
    CHECK(rec.E.front() == kInterceptEffect);
    if (i > 0) {
      const auto& prev = tr.iterations[i - 1].E;
      REQUIRE(rec.E.size() >= prev.size());
      CHECK(std::equal(prev.begin(), prev.end(), rec.E.begin()));
    }
    // every selected random effect has a nonzero fixed coefficient
    for (int e : rec.E)
      if (e != kInterceptEffect) {
        CHECK(rec.beta(e) != 0.0);
        CHECK_FALSE(mask.is_constant[e - 1]);
      }
    CHECK(rec.max_ortho < 1e-8);
    CHECK(rec.sigma2_mode > 0.0);
  }

  const ModelState& fin = tr.final_state;
  CHECK(fin.iteration == s);
  CHECK(fin.E == tr.iterations[s - 1].E);
  CHECK(fin.Z.cols() == static_cast<Eigen::Index>(d.m()) * fin.E.size());
  const Matrix Xd = fixed_design(d);
  const Vector refit = Xd * fin.beta + fin.Z * fin.gamma_mode;
  CHECK((refit - fin.fitted).lpNorm<Eigen::Infinity>() < 1e-12);

  // gibbs record of the stopping iteration matches the stopped structure
  CHECK(tr.final_summary.gamma_samples.cols() == fin.gamma_mode.size());
  REQUIRE(tr.final_gamma_quantiles.rows() == 5);
  REQUIRE(tr.final_gamma_quantiles.cols() == fin.gamma_mode.size());
  for (Eigen::Index c = 0; c < tr.final_gamma_quantiles.cols(); ++c)
    for (int q = 1; q < 5; ++q)
      CHECK(tr.final_gamma_quantiles(q, c) >= tr.final_gamma_quantiles(q - 1, c));
}

TEST_CASE("declared structures never grow during a fit", "[fit]") {
  const Dataset d = sim_intercept_data(31, 10, 6, 5, 0.4);
  Hyperparams h;
  h.m_stop = 24;
  h.zeta = 6;
  h.alpha = 3;
  h.re_mode = ReMode::fixed_structure;
  h.fixed_effects = {3};
  const FitTrace tr = boost_fit(d, h);
  for (const IterationRecord& rec : tr.iterations) {
    CHECK(rec.E == std::vector<int>{kInterceptEffect, 3});
    CHECK(rec.decision == ReDecisionKind::none);
  }
}

TEST_CASE("too small an iteration budget is rejected up front", "[fit]") {
  const Dataset d = tiny_dataset();
  Hyperparams h;
  h.m_stop = 10;
  h.zeta = 10;
  h.alpha = 3;
  try {
    boost_fit(d, h);
    FAIL("expected ConfigError");
  } catch (const ConfigError& e) {
    CHECK(std::string(e.what()).find("m_stop must be >=") != std::string::npos);
  }
}
