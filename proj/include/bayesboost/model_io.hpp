#ifndef BAYESBOOST_MODEL_IO_HPP
#define BAYESBOOST_MODEL_IO_HPP

#include <fstream>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "boosting.hpp"
#include "dataset.hpp"
#include "simulation.hpp"
#include "types.hpp"

namespace bayesboost {

inline constexpr int kModelFormatVersion = 1;

namespace detail {

inline void write_hyper_header(std::ostream& out, const Hyperparams& h) {
  out << "# nu=" << fmt_double(h.nu) << " T=" << h.T << " m_stop=" << h.m_stop
      << " a=" << fmt_double(h.a) << " b=" << fmt_double(h.b)
      << " v0=" << fmt_double(h.v0) << " lambda0=" << fmt_double(h.lambda0_init)
      << " alpha=" << h.alpha << " zeta=" << h.zeta
      << " hampel_window=" << h.hampel_window
      << " hampel_k=" << fmt_double(h.hampel_k) << " seed=" << h.seed
      << " re_mode=" << (h.re_mode == ReMode::auto_select ? "auto" : "fixed")
      << " correction="
      << (h.correction == CorrectionMode::per_block ? "per_block" : "full_x")
      << "\n";
}

inline std::vector<std::string> tokenize(const std::string& line) {
  std::istringstream ss(line);
  std::vector<std::string> toks;
  std::string t;
  while (ss >> t) toks.push_back(t);
  return toks;
}

}  // namespace detail

/// Fitted-model artifact written by the fit command and re-read by
/// read_model_file.
struct ModelFile {
  int format_version = 0;
  int stopping_iteration = 0;
  bool stabilized = true;
  double sigma2 = 0.0;
  std::vector<std::string> beta_names;  // _intercept first
  Vector beta;
  std::vector<std::string> effect_names;  // ranInt first
  Matrix Q;
  Matrix gamma;            // m x |E|
  std::vector<long long> cluster_labels;
  Matrix gamma_quantiles;  // 5 x m|E|, rows 2.5/25/50/75/97.5%
};

inline void write_model_file(const std::string& path, const FitTrace& trace,
                             const Dataset& d, const Hyperparams& h) {
  std::ofstream out(path);
  if (!out) throw DataError("write_model_file: cannot open '" + path + "'");
  const ModelState& st = trace.final_state;
  const int r = static_cast<int>(st.E.size());
  const int m = d.m();
  out << "bayesboost_model\n";
  out << "format_version " << kModelFormatVersion << "\n";
  detail::write_hyper_header(out, h);
  out << "stopping_iteration " << trace.stopping.stop_iteration << "\n";
  out << "stabilized " << (trace.stopping.stabilized ? 1 : 0) << "\n";
  out << "caic_at_stop " << detail::fmt_double(trace.stopping.caic_at_stop) << "\n";
  out << "sigma2 " << detail::fmt_double(st.sigma2_mode) << "\n";
  out << "beta " << st.beta.size() << "\n";
  out << "_intercept " << detail::fmt_double(st.beta(0)) << "\n";
  for (int k = 0; k < d.p(); ++k)
    out << d.names[k] << " " << detail::fmt_double(st.beta(k + 1)) << "\n";
  out << "random_effects";
  for (int e : st.E) out << " " << effect_name(e, d.names);
  out << "\n";
  out << "Q " << r << "\n";
  for (int i = 0; i < r; ++i) {
    for (int j = 0; j < r; ++j)
      out << (j ? " " : "") << detail::fmt_double(st.Q_mode(i, j));
    out << "\n";
  }
  out << "gamma " << m << " " << r << "\n";
  for (int i = 0; i < m; ++i) {
    out << d.cluster_labels[i];
    for (int e = 0; e < r; ++e)
      out << " "
          << detail::fmt_double(st.gamma_mode(static_cast<Eigen::Index>(i) * r + e));
    out << "\n";
  }
  out << "gamma_quantiles 2.5 25 50 75 97.5\n";
  for (int i = 0; i < m; ++i)
    for (int e = 0; e < r; ++e) {
      out << effect_name(st.E[e], d.names) << " " << d.cluster_labels[i];
      for (int q = 0; q < 5; ++q)
        out << " "
            << detail::fmt_double(
                   trace.final_gamma_quantiles(q, static_cast<Eigen::Index>(i) * r + e));
      out << "\n";
    }
}

inline ModelFile read_model_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw DataError("read_model_file: cannot open '" + path + "'");
  std::string line;
  if (!std::getline(in, line) || line != "bayesboost_model")
    throw DataError("read_model_file: '" + path + "' is not a model file");
  ModelFile mf;
  int m = 0, r = 0;
  while (std::getline(in, line)) {
    if (line.empty() || line[0] == '#') continue;
    const auto toks = detail::tokenize(line);
    if (toks.empty()) continue;
    const std::string& key = toks[0];
    if (key == "format_version") {
      mf.format_version = std::stoi(toks.at(1));
    } else if (key == "stopping_iteration") {
      mf.stopping_iteration = std::stoi(toks.at(1));
    } else if (key == "stabilized") {
      mf.stabilized = toks.at(1) != "0";
    } else if (key == "caic_at_stop") {
      // informational
    } else if (key == "sigma2") {
      mf.sigma2 = std::stod(toks.at(1));
    } else if (key == "beta") {
      const int pb = std::stoi(toks.at(1));
      mf.beta.resize(pb);
      mf.beta_names.resize(pb);
      for (int i = 0; i < pb; ++i) {
        if (!std::getline(in, line))
          throw DataError("read_model_file: truncated beta block");
        const auto bt = detail::tokenize(line);
        mf.beta_names[i] = bt.at(0);
        mf.beta(i) = std::stod(bt.at(1));
      }
    } else if (key == "random_effects") {
      mf.effect_names.assign(toks.begin() + 1, toks.end());
    } else if (key == "Q") {
      r = std::stoi(toks.at(1));
      mf.Q.resize(r, r);
      for (int i = 0; i < r; ++i) {
        if (!std::getline(in, line))
          throw DataError("read_model_file: truncated Q block");
        const auto qt = detail::tokenize(line);
        for (int j = 0; j < r; ++j) mf.Q(i, j) = std::stod(qt.at(j));
      }
    } else if (key == "gamma") {
      m = std::stoi(toks.at(1));
      const int rr = std::stoi(toks.at(2));
      mf.gamma.resize(m, rr);
      mf.cluster_labels.resize(m);
      for (int i = 0; i < m; ++i) {
        if (!std::getline(in, line))
          throw DataError("read_model_file: truncated gamma block");
        const auto gt = detail::tokenize(line);
        mf.cluster_labels[i] = std::stoll(gt.at(0));
        for (int e = 0; e < rr; ++e) mf.gamma(i, e) = std::stod(gt.at(e + 1));
      }
    } else if (key == "gamma_quantiles") {
      mf.gamma_quantiles.resize(5, static_cast<Eigen::Index>(m) * r);
      for (Eigen::Index c = 0; c < mf.gamma_quantiles.cols(); ++c) {
        if (!std::getline(in, line))
          throw DataError("read_model_file: truncated quantile block");
        const auto qt = detail::tokenize(line);
        for (int q = 0; q < 5; ++q)
          mf.gamma_quantiles(q, c) = std::stod(qt.at(q + 2));
      }
    } else {
      throw DataError("read_model_file: unknown key '" + key + "'");
    }
  }
  if (mf.format_version != kModelFormatVersion)
    throw DataError("read_model_file: unsupported format version");
  return mf;
}

/// Per-iteration trace: cAIC series, winner, decision, variance and
/// covariance path, and the full coefficient path.
inline void write_trace_csv(const std::string& path, const FitTrace& trace,
                            const Dataset& d, const Hyperparams& h) {
  std::ofstream out(path);
  if (!out) throw DataError("write_trace_csv: cannot open '" + path + "'");
  detail::write_hyper_header(out, h);
  out << "iteration,caic_raw,caic_filtered,k_star,decision,sigma2,max_ortho,"
         "n_effects,effects,q_entries";
  out << ",beta_intercept";
  for (const auto& nm : d.names) out << ",beta_" << nm;
  out << "\n";
  for (std::size_t i = 0; i < trace.iterations.size(); ++i) {
    const IterationRecord& rec = trace.iterations[i];
    out << (i + 1) << ',' << detail::fmt_double(rec.caic_raw) << ','
        << detail::fmt_double(trace.caic.filtered[i]) << ',' << rec.k_star << ',';
    switch (rec.decision) {
      case ReDecisionKind::none: out << "none"; break;
      case ReDecisionKind::accepted: out << "accepted"; break;
      case ReDecisionKind::rejected: out << "rejected"; break;
    }
    out << ',' << detail::fmt_double(rec.sigma2_mode) << ','
        << detail::fmt_double(rec.max_ortho) << ',' << rec.E.size() << ',';
    for (std::size_t e = 0; e < rec.E.size(); ++e)
      out << (e ? ";" : "") << effect_name(rec.E[e], d.names);
    out << ',';
    // upper triangle of Q, row-major
    bool first = true;
    for (int a = 0; a < rec.Q_mode.rows(); ++a)
      for (int b = a; b < rec.Q_mode.cols(); ++b) {
        out << (first ? "" : ";") << detail::fmt_double(rec.Q_mode(a, b));
        first = false;
      }
    for (Eigen::Index k = 0; k < rec.beta.size(); ++k)
      out << ',' << detail::fmt_double(rec.beta(k));
    out << "\n";
  }
}

/// Simulation ground truth, written next to generated datasets.
inline void write_truth_file(const std::string& path, const SimTruth& truth,
                             const SimConfig& cfg) {
  std::ofstream out(path);
  if (!out) throw DataError("write_truth_file: cannot open '" + path + "'");
  out << "bayesboost_truth\n";
  out << "format_version " << kModelFormatVersion << "\n";
  out << "design "
      << (cfg.design == SimDesign::random_intercept ? "random_intercept"
                                                    : "random_slope")
      << "\n";
  out << "m " << cfg.m << "\n";
  out << "n_i " << cfg.n_i << "\n";
  out << "p " << cfg.p << "\n";
  out << "tau " << detail::fmt_double(cfg.tau) << "\n";
  out << "sigma2 " << detail::fmt_double(truth.sigma2_true) << "\n";
  out << "beta_true " << truth.beta_true.size() << "\n";
  for (Eigen::Index k = 0; k < truth.beta_true.size(); ++k)
    out << (k ? " " : "") << detail::fmt_double(truth.beta_true(k));
  out << "\n";
  out << "informative_fixed";
  for (int k : truth.informative_fixed) out << " " << k;
  out << "\n";
  out << "informative_random";
  for (int k : truth.informative_random) out << " " << k;
  out << "\n";
  out << "Q_true " << truth.Q_true.rows() << "\n";
  for (int i = 0; i < truth.Q_true.rows(); ++i) {
    for (int j = 0; j < truth.Q_true.cols(); ++j)
      out << (j ? " " : "") << detail::fmt_double(truth.Q_true(i, j));
    out << "\n";
  }
  out << "gamma_true " << truth.gamma_true.rows() << " " << truth.gamma_true.cols()
      << "\n";
  for (int i = 0; i < truth.gamma_true.rows(); ++i) {
    for (int j = 0; j < truth.gamma_true.cols(); ++j)
      out << (j ? " " : "") << detail::fmt_double(truth.gamma_true(i, j));
    out << "\n";
  }
}

inline SimTruth read_truth_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw DataError("read_truth_file: cannot open '" + path + "'");
  std::string line;
  if (!std::getline(in, line) || line != "bayesboost_truth")
    throw DataError("read_truth_file: '" + path + "' is not a truth file");
  SimTruth truth;
  while (std::getline(in, line)) {
    if (line.empty() || line[0] == '#') continue;
    const auto toks = detail::tokenize(line);
    if (toks.empty()) continue;
    const std::string& key = toks[0];
    if (key == "format_version" || key == "design" || key == "m" || key == "n_i" ||
        key == "p" || key == "tau") {
      // layout metadata, carried for humans
    } else if (key == "sigma2") {
      truth.sigma2_true = std::stod(toks.at(1));
    } else if (key == "beta_true") {
      const int pb = std::stoi(toks.at(1));
      if (!std::getline(in, line))
        throw DataError("read_truth_file: truncated beta block");
      const auto bt = detail::tokenize(line);
      truth.beta_true.resize(pb);
      for (int k = 0; k < pb; ++k) truth.beta_true(k) = std::stod(bt.at(k));
    } else if (key == "informative_fixed") {
      for (std::size_t i = 1; i < toks.size(); ++i)
        truth.informative_fixed.push_back(std::stoi(toks[i]));
    } else if (key == "informative_random") {
      for (std::size_t i = 1; i < toks.size(); ++i)
        truth.informative_random.push_back(std::stoi(toks[i]));
    } else if (key == "Q_true") {
      const int r = std::stoi(toks.at(1));
      truth.Q_true.resize(r, r);
      for (int i = 0; i < r; ++i) {
        if (!std::getline(in, line))
          throw DataError("read_truth_file: truncated Q block");
        const auto qt = detail::tokenize(line);
        for (int j = 0; j < r; ++j) truth.Q_true(i, j) = std::stod(qt.at(j));
      }
    } else if (key == "gamma_true") {
      const int rows = std::stoi(toks.at(1));
      const int cols = std::stoi(toks.at(2));
      truth.gamma_true.resize(rows, cols);
      for (int i = 0; i < rows; ++i) {
        if (!std::getline(in, line))
          throw DataError("read_truth_file: truncated gamma block");
        const auto gt = detail::tokenize(line);
        for (int j = 0; j < cols; ++j) truth.gamma_true(i, j) = std::stod(gt.at(j));
      }
    } else {
      throw DataError("read_truth_file: unknown key '" + key + "'");
    }
  }
  return truth;
}

inline const char* kBenchHeader =
    "design,tau,p,replications,failures,mse_beta,mse_tau2_or_q,mse_sigma2,"
    "mse_gamma,fp_beta,fn_beta,fp_gamma,fn_gamma,stopping_iteration";

namespace detail {

inline void write_metrics_row(std::ostream& out, const SimConfig& cfg,
                              const Metrics& mt, int replications, int failures) {
  out << (cfg.design == SimDesign::random_intercept ? "random_intercept"
                                                    : "random_slope")
      << ',' << fmt_double(cfg.tau) << ',' << cfg.p << ',' << replications << ','
      << failures << ',' << fmt_double(mt.mse_beta) << ','
      << fmt_double(mt.mse_tau2_or_q) << ',' << fmt_double(mt.mse_sigma2) << ','
      << fmt_double(mt.mse_gamma) << ',' << fmt_double(mt.fp_beta) << ','
      << fmt_double(mt.fn_beta) << ',' << fmt_double(mt.fp_gamma) << ','
      << fmt_double(mt.fn_gamma) << ',' << fmt_double(mt.stopping_iteration)
      << "\n";
}

}  // namespace detail

/// Aggregate CSV: one row of per-cell means (the table layout of the study).
inline void write_benchmark_summary(const std::string& path,
                                    const BenchmarkResult& res) {
  std::ofstream out(path);
  if (!out) throw DataError("write_benchmark_summary: cannot open '" + path + "'");
  detail::write_hyper_header(out, res.config.hyper);
  out << kBenchHeader << "\n";
  detail::write_metrics_row(out, res.config, res.mean,
                            static_cast<int>(res.per_run.size()),
                            static_cast<int>(res.failed_runs.size()));
}

/// Per-run CSV: one row per successful replication plus failure records.
inline void write_benchmark_runs(const std::string& path, const BenchmarkResult& res) {
  std::ofstream out(path);
  if (!out) throw DataError("write_benchmark_runs: cannot open '" + path + "'");
  detail::write_hyper_header(out, res.config.hyper);
  out << "run," << kBenchHeader << "\n";
  for (std::size_t i = 0; i < res.per_run.size(); ++i) {
    out << res.run_index[i] << ',';
    detail::write_metrics_row(out, res.config, res.per_run[i], 1, 0);
  }
  for (std::size_t i = 0; i < res.failed_runs.size(); ++i)
    out << "# failed run " << res.failed_runs[i] << ": "
        << res.failure_messages[i] << "\n";
}

}  // namespace bayesboost

#endif
