// Command line front end: fit a model from CSV, generate benchmark data, or
// run the simulation study end to end.

#include <cstdlib>
#include <filesystem>
#include <iostream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include <bayesboost/bayesboost.hpp>

namespace fs = std::filesystem;
using namespace bayesboost;

namespace {

struct CommonOpts {
  Hyperparams hyper;
  std::string re_mode = "auto";
  std::string out_dir = ".";
  bool seed_given = false;
};

void add_hyper_flags(CLI::App* cmd, CommonOpts& o) {
  cmd->add_option("--nu", o.hyper.nu, "Boosting step length");
  cmd->add_option("--mcmc-samples", o.hyper.T, "Gibbs sweeps per iteration");
  cmd->add_option("--max-iter", o.hyper.m_stop, "Boosting iterations to run");
  cmd->add_option("--patience", o.hyper.alpha, "Stopping patience");
  cmd->add_option("--zeta", o.hyper.zeta, "Burn-in skipped by the stopping rule");
  cmd->add_option("--hampel-window", o.hyper.hampel_window,
                  "Half width of the outlier filter window");
  cmd->add_option("--hampel-k", o.hyper.hampel_k, "Outlier filter threshold");
  cmd->add_option("--prior-a", o.hyper.a, "Error variance prior shape");
  cmd->add_option("--prior-b", o.hyper.b, "Error variance prior scale");
  cmd->add_option("--prior-v0", o.hyper.v0, "Covariance prior degrees of freedom");
  cmd->add_option("--prior-lambda0", o.hyper.lambda0_init,
                  "Covariance prior scale per effect");
  cmd->add_option("--re-mode", o.re_mode,
                  "Random effect structure: auto or fixed[:k1,k2,...]");
  cmd->add_option("--out-dir", o.out_dir, "Directory for output files");
  auto* seed = cmd->add_option("--seed", o.hyper.seed, "RNG seed");
  cmd->callback([&o, seed] {
    o.seed_given = seed->count() > 0;
    if (!o.seed_given) {
      if (const char* env = std::getenv("BAYESBOOST_SEED")) {
        o.hyper.seed = std::stoull(env);
        o.seed_given = true;
      }
    }
  });
}

// "auto" or "fixed" or "fixed:3,4" (1-based covariate indices)
void apply_re_mode(const std::string& s, Hyperparams& h) {
  if (s == "auto") {
    h.re_mode = ReMode::auto_select;
    return;
  }
  if (s == "fixed") {
    h.re_mode = ReMode::fixed_structure;
    return;
  }
  if (s.rfind("fixed:", 0) == 0) {
    h.re_mode = ReMode::fixed_structure;
    std::string rest = s.substr(6);
    std::size_t pos = 0;
    while (pos < rest.size()) {
      std::size_t comma = rest.find(',', pos);
      if (comma == std::string::npos) comma = rest.size();
      const std::string tok = rest.substr(pos, comma - pos);
      try {
        h.fixed_effects.push_back(std::stoi(tok));
      } catch (const std::exception&) {
        throw ConfigError("--re-mode: bad covariate index '" + tok + "'");
      }
      pos = comma + 1;
    }
    return;
  }
  throw ConfigError("--re-mode must be auto, fixed, or fixed:k1,k2,...");
}

void add_sim_flags(CLI::App* cmd, SimConfig& cfg, std::string& design) {
  cmd->add_option("--design", design, "random_intercept or random_slope");
  cmd->add_option("--clusters", cfg.m, "Number of clusters");
  cmd->add_option("--cluster-size", cfg.n_i, "Observations per cluster");
  cmd->add_option("--p", cfg.p, "Number of covariates");
  cmd->add_option("--tau", cfg.tau, "Random effect standard deviation");
  cmd->add_option("--sigma", cfg.sigma, "Error standard deviation");
  cmd->add_option("--corr", cfg.corr, "Random effect correlation factor");
  cmd->add_option("--replications", cfg.n_replications, "Benchmark replications");
}

SimDesign parse_design(const std::string& s) {
  if (s == "random_intercept") return SimDesign::random_intercept;
  if (s == "random_slope") return SimDesign::random_slope;
  throw ConfigError("--design must be random_intercept or random_slope");
}

void print_fit_summary(const FitTrace& trace, const Dataset& d) {
  const ModelState& st = trace.final_state;
  std::cout << "stopped at iteration " << trace.stopping.stop_iteration
            << (trace.stopping.stabilized ? "" : " (not stabilized)") << "\n";
  std::cout << "sigma2 " << detail::fmt_double(st.sigma2_mode) << "\n";
  std::cout << "selected fixed effects:";
  for (int k = 1; k <= d.p(); ++k)
    if (st.beta(k) != 0.0) std::cout << " " << d.names[k - 1];
  std::cout << "\nrandom effects:";
  for (int e : st.E) std::cout << " " << effect_name(e, d.names);
  std::cout << "\n";
  for (const auto& w : trace.warnings) std::cerr << "warning: " << w << "\n";
}

int run_fit(const std::string& input, const std::string& response,
            const std::string& cluster, bool standardize, CommonOpts& o) {
  apply_re_mode(o.re_mode, o.hyper);
  o.hyper.validate();
  Dataset d = load_dataset(input, response, cluster);
  const ValidationReport rep = validate(d);
  for (const auto& w : rep.warnings) std::cerr << "warning: " << w << "\n";
  if (!rep.ok()) {
    for (const auto& e : rep.errors) std::cerr << "error: " << e << "\n";
    throw DataError("dataset failed validation");
  }
  if (standardize) standardize_covariates(d);
  const FitTrace trace = boost_fit(d, o.hyper);
  fs::create_directories(o.out_dir);
  write_model_file((fs::path(o.out_dir) / "model.txt").string(), trace, d, o.hyper);
  write_trace_csv((fs::path(o.out_dir) / "trace.csv").string(), trace, d, o.hyper);
  print_fit_summary(trace, d);
  return 0;
}

int run_simulate(SimConfig& cfg, const std::string& design, CommonOpts& o) {
  cfg.design = parse_design(design);
  cfg.seed = o.hyper.seed;
  cfg.hyper = o.hyper;
  cfg.validate();
  // stream 1 matches replication 0 of the benchmark command
  RngStream rng(cfg.seed, 1);
  auto [d, truth] = cfg.design == SimDesign::random_intercept
                        ? gen_random_intercept(cfg, rng)
                        : gen_random_slope(cfg, rng);
  fs::create_directories(o.out_dir);
  write_dataset_csv(d, (fs::path(o.out_dir) / "data.csv").string());
  write_truth_file((fs::path(o.out_dir) / "truth.txt").string(), truth, cfg);
  std::cout << "wrote " << d.n() << " rows, " << cfg.m << " clusters, p=" << cfg.p
            << "\n";
  return 0;
}

int run_bench(SimConfig& cfg, const std::string& design, int workers,
              CommonOpts& o) {
  cfg.design = parse_design(design);
  apply_re_mode(o.re_mode, o.hyper);
  cfg.seed = o.hyper.seed;
  cfg.hyper = o.hyper;
  cfg.re_mode = o.hyper.re_mode;
  cfg.validate();
  const BenchmarkResult res = run_benchmark(cfg, workers);
  fs::create_directories(o.out_dir);
  write_benchmark_summary((fs::path(o.out_dir) / "benchmark_summary.csv").string(),
                          res);
  write_benchmark_runs((fs::path(o.out_dir) / "benchmark_runs.csv").string(), res);
  std::cout << "replications " << res.per_run.size() << " ok, "
            << res.failed_runs.size() << " failed\n";
  std::cout << "mean mse_beta " << detail::fmt_double(res.mean.mse_beta)
            << " mse_q " << detail::fmt_double(res.mean.mse_tau2_or_q)
            << " fp_beta " << detail::fmt_double(res.mean.fp_beta) << " fp_gamma "
            << detail::fmt_double(res.mean.fp_gamma) << "\n";
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Boosted estimation for linear mixed models"};
  app.require_subcommand(1);

  CommonOpts fit_o, sim_o, bench_o;
  std::string input, response = "y", cluster = "cluster";
  bool standardize = false;
  std::string sim_design = "random_intercept", bench_design = "random_intercept";
  SimConfig sim_cfg, bench_cfg;
  int workers = 1;

  CLI::App* fit = app.add_subcommand("fit", "Fit a model to a CSV dataset");
  fit->add_option("--input", input, "Input CSV path")->required();
  fit->add_option("--response", response, "Response column name");
  fit->add_option("--cluster", cluster, "Cluster id column name");
  fit->add_flag("--standardize", standardize, "Standardize covariates first");
  add_hyper_flags(fit, fit_o);

  CLI::App* sim = app.add_subcommand("simulate", "Generate one synthetic dataset");
  add_sim_flags(sim, sim_cfg, sim_design);
  add_hyper_flags(sim, sim_o);

  CLI::App* bench = app.add_subcommand("bench", "Run the simulation benchmark");
  add_sim_flags(bench, bench_cfg, bench_design);
  add_hyper_flags(bench, bench_o);
  bench->add_option("--workers", workers, "Worker threads");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return 2;
  }

  try {
    if (fit->parsed()) return run_fit(input, response, cluster, standardize, fit_o);
    if (sim->parsed()) return run_simulate(sim_cfg, sim_design, sim_o);
    if (bench->parsed()) return run_bench(bench_cfg, bench_design, workers, bench_o);
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return 2;
  } catch (const DataError& e) {
    std::cerr << "data error: " << e.what() << "\n";
    return 3;
  } catch (const NumericError& e) {
    std::cerr << "numeric error: " << e.what() << "\n";
    return 4;
  }
  return 0;
}
