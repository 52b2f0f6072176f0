// Command-line front end: estimation on CSV data, Monte Carlo simulation of
// the built-in scenarios, and the closed-form relative-efficiency calculator.
// Exit codes: 0 success, 2 validation error, 3 numerical failure.

#include <CLI11.hpp>
#include <json.hpp>

#include <cstdlib>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>

#include "augmatch/analytic.hpp"
#include "augmatch/data.hpp"
#include "augmatch/pipeline.hpp"
#include "augmatch/simulate.hpp"

using nlohmann::json;

namespace {

constexpr int kSchemaVersion = 1;

void write_output(const json& j, const std::string& path) {
  if (path.empty()) {
    std::cout << j.dump(2) << "\n";
  } else {
    std::ofstream out(path);
    if (!out) throw augmatch::validation_error("cannot write file: " + path);
    out << j.dump(2) << "\n";
  }
}

json variance_json(const augmatch::VarianceReport& v) {
  return json{{"sigma2_1", v.sigma2_1},
              {"sigma2_2M", v.sigma2_2M},
              {"sigma2_M", v.sigma2_M},
              {"gain", v.gain},
              {"sigma2_adj", v.sigma2_adj},
              {"sigma2_np", v.sigma2_np},
              {"delta_M", v.delta_M},
              {"delta_M_negative_flag", v.delta_M_negative_flag},
              {"skipped_strata", v.skipped_strata}};
}

int resolve_threads(int flag_value) {
  if (flag_value > 0) return flag_value;
  if (const char* env = std::getenv("AUGMATCH_THREADS")) {
    const int t = std::atoi(env);
    if (t > 0) return t;
  }
  return 1;
}

struct EstimateArgs {
  std::string input, output, format = "json";
  std::string treatment_col = "a", outcome_col = "y";
  int matches = 1;
  bool augment = true;
  double split = 0.05;
  double disc_k = 0.0;
  double level = 0.95;
  std::uint64_t seed = 0;
};

int run_estimate(const EstimateArgs& args) {
  augmatch::CsvSchema schema;
  schema.treatment = args.treatment_col;
  schema.outcome = args.outcome_col;
  const augmatch::Dataset d = augmatch::load_csv(args.input, schema);

  augmatch::EstimatorConfig cfg;
  cfg.m = args.matches;
  cfg.split_frac = args.augment ? args.split : 0.0;
  cfg.level = args.level;
  cfg.seed = args.seed;
  if (args.disc_k > 0.0) cfg.disc_k = args.disc_k;

  const augmatch::EstimateResult res =
      args.augment ? augmatch::estimate_augmented(d, cfg) : augmatch::estimate_unaugmented(d, cfg);

  json j{{"schema_version", kSchemaVersion},
         {"psi", res.psi},
         {"se", res.variance.se},
         {"ci_lo", res.variance.ci.first},
         {"ci_hi", res.variance.ci.second},
         {"level", res.variance.level},
         {"n", d.n()},
         {"n_eff", res.n_eff},
         {"matches", cfg.m},
         {"augmented", res.augmented},
         {"aug_dropped", res.aug_dropped},
         {"variance", variance_json(res.variance)}};
  j["diagnostics"] = {{"base_converged", res.fit_base.converged},
                      {"base_iterations", res.fit_base.n_iter},
                      {"base_grad_norm", res.fit_base.grad_norm}};
  if (res.fit_aug) {
    j["diagnostics"]["aug_converged"] = res.fit_aug->converged;
    j["diagnostics"]["aug_gamma"] = res.fit_aug->vartheta[res.fit_aug->vartheta.size() - 1];
  }
  if (res.h_diag) {
    j["diagnostics"]["h_mean"] = res.h_diag->mean;
    j["diagnostics"]["h_variance"] = res.h_diag->variance;
  }
  if (res.split) {
    j["split"] = {{"m_n", res.split->m_n()}, {"n_eff", res.split->n_eff()}};
  }
  write_output(j, args.output);
  return 0;
}

struct SimulateArgs {
  int scenario = 2;
  int n = 2000;
  int reps = 500;
  std::uint64_t seed = 1;
  int matches = 1;
  double split = 0.0;
  double disc_k = 0.0;
  double level = 0.95;
  int threads = 0;
  std::string output, per_rep_csv;
  bool no_augment = false, no_unaugment = false;
  // analytic-design overrides (scenario 0)
  double theta0 = 0.0, theta1 = 1.0, beta2 = 1.0, beta1 = 1.0, gamma1 = 1.0, sigma = 1.0;
};

json estimator_summary_json(const augmatch::EstimatorSummary& s, int reps) {
  return json{{"reps", reps},
              {"mean_psi", s.mean_psi},
              {"bias", s.bias},
              {"emp_var_scaled", s.emp_var_scaled},
              {"mean_theor_var", s.mean_theor_var},
              {"coverage", s.coverage},
              {"mc_se", s.mc_se}};
}

int run_simulate(const SimulateArgs& args) {
  augmatch::Scenario s;
  if (args.scenario == 0) {
    augmatch::AnalyticDesign dz;
    dz.theta0 = args.theta0;
    dz.theta1 = args.theta1;
    dz.beta << 2.0, args.beta1, args.beta2;
    dz.gamma << 1.0, args.gamma1, args.beta2;
    dz.sigma = args.sigma;
    dz.m = args.matches;
    s = augmatch::Scenario::analytic_design(dz);
  } else {
    s = augmatch::Scenario::table(args.scenario);
  }

  augmatch::EstimatorConfig cfg;
  cfg.m = args.matches;
  cfg.split_frac = args.split;
  cfg.level = args.level;
  if (args.disc_k > 0.0) cfg.disc_k = args.disc_k;

  augmatch::McOptions opt;
  opt.run_augmented = !args.no_augment;
  opt.run_unaugmented = !args.no_unaugment;
  opt.threads = resolve_threads(args.threads);
  opt.per_rep_csv = args.per_rep_csv;

  const augmatch::McSummary sum = augmatch::run_mc(s, args.n, args.reps, cfg, args.seed, opt);

  const augmatch::EstimatorSummary& primary = sum.aug ? *sum.aug : *sum.unaug;
  json j = estimator_summary_json(primary, sum.reps);
  j["schema_version"] = kSchemaVersion;
  j["scenario"] = args.scenario;
  j["n"] = args.n;
  j["psi0"] = sum.psi0;
  j["failures"] = sum.failures;
  j["nonnegativity_ok"] = sum.nonnegativity_ok;
  if (sum.aug && sum.unaug) {
    j["unaug"] = estimator_summary_json(*sum.unaug, sum.reps);
    j["emp_var_reduction"] = sum.emp_var_reduction;
  }
  write_output(j, args.output);
  return 0;
}

struct ReleffArgs {
  double theta1 = 1.0, beta2 = 1.0, beta1 = 1.0, gamma1 = 1.0, theta0 = 0.0;
  int matches = 1;
  std::string theta1_grid, beta2_grid;
  std::string output, format = "json";
};

// "lo:hi:step"
std::vector<double> parse_grid(const std::string& spec) {
  double lo, hi, step;
  if (std::sscanf(spec.c_str(), "%lf:%lf:%lf", &lo, &hi, &step) != 3 || step <= 0.0 || hi < lo) {
    throw augmatch::validation_error("bad grid spec '" + spec + "', expected lo:hi:step");
  }
  std::vector<double> out;
  for (double x = lo; x <= hi + 1e-12; x += step) out.push_back(x);
  return out;
}

int run_releff(const ReleffArgs& args) {
  if (!args.theta1_grid.empty() || !args.beta2_grid.empty()) {
    const bool over_theta1 = !args.theta1_grid.empty();
    const auto grid = parse_grid(over_theta1 ? args.theta1_grid : args.beta2_grid);
    json rows = json::array();
    for (double x : grid) {
      const double re = over_theta1
                            ? augmatch::relative_efficiency(x, args.beta2, args.beta1,
                                                            args.gamma1, args.theta0, args.matches)
                            : augmatch::relative_efficiency(args.theta1, x, args.beta1,
                                                            args.gamma1, args.theta0, args.matches);
      rows.push_back({{over_theta1 ? "theta1" : "beta2", x}, {"re", re}});
    }
    if (args.format == "csv") {
      std::ostream* os = &std::cout;
      std::ofstream file;
      if (!args.output.empty()) {
        file.open(args.output);
        if (!file) throw augmatch::validation_error("cannot write file: " + args.output);
        os = &file;
      }
      *os << (over_theta1 ? "theta1" : "beta2") << ",re\n";
      for (const auto& r : rows) {
        *os << r[over_theta1 ? "theta1" : "beta2"].get<double>() << ","
            << r["re"].get<double>() << "\n";
      }
    } else {
      write_output(json{{"schema_version", kSchemaVersion}, {"rows", rows}}, args.output);
    }
    return 0;
  }
  const double re = augmatch::relative_efficiency(args.theta1, args.beta2, args.beta1,
                                                  args.gamma1, args.theta0, args.matches);
  write_output(json{{"schema_version", kSchemaVersion}, {"re", re}}, args.output);
  return 0;
}

json error_json(const std::string& kind, const std::string& what) {
  return json{{"schema_version", kSchemaVersion}, {"error", kind}, {"message", what}};
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"augmented propensity-score 1:M matching"};
  app.require_subcommand(1);

  EstimateArgs est;
  auto* cmd_est = app.add_subcommand("estimate", "estimate the ATE from a CSV file");
  cmd_est->add_option("--input", est.input, "input CSV")->required();
  cmd_est->add_option("--output", est.output, "output JSON path (default stdout)");
  cmd_est->add_option("--treatment-col", est.treatment_col, "treatment column name");
  cmd_est->add_option("--outcome-col", est.outcome_col, "outcome column name");
  cmd_est->add_option("--matches", est.matches, "matches per unit M")
      ->check(CLI::PositiveNumber);
  cmd_est->add_flag("--augment,!--no-augment", est.augment, "use propensity augmentation");
  cmd_est->add_option("--split", est.split, "sample-split fraction (0 disables)")
      ->check(CLI::Range(0.0, 0.5));
  cmd_est->add_option("--disc-k", est.disc_k, "discretization constant (0 = raw MLE)");
  cmd_est->add_option("--level", est.level, "CI level")->check(CLI::Range(1e-6, 1.0 - 1e-6));
  cmd_est->add_option("--seed", est.seed, "RNG seed");

  SimulateArgs sim;
  auto* cmd_sim = app.add_subcommand("simulate", "Monte Carlo study of a built-in scenario");
  cmd_sim->add_option("--scenario", sim.scenario, "scenario id (1-4, 0 = analytic design)")
      ->check(CLI::Range(0, 4));
  cmd_sim->add_option("--n", sim.n, "sample size per replication")->check(CLI::PositiveNumber);
  cmd_sim->add_option("--reps", sim.reps, "number of replications")->check(CLI::PositiveNumber);
  cmd_sim->add_option("--seed", sim.seed, "base RNG seed");
  cmd_sim->add_option("--matches", sim.matches, "matches per unit M")->check(CLI::PositiveNumber);
  cmd_sim->add_option("--split", sim.split, "sample-split fraction")->check(CLI::Range(0.0, 0.5));
  cmd_sim->add_option("--disc-k", sim.disc_k, "discretization constant (0 = raw MLE)");
  cmd_sim->add_option("--level", sim.level, "CI level");
  cmd_sim->add_option("--threads", sim.threads, "worker threads (0 = AUGMATCH_THREADS or 1)");
  cmd_sim->add_option("--output", sim.output, "summary JSON path (default stdout)");
  cmd_sim->add_option("--per-rep-csv", sim.per_rep_csv, "per-replication CSV path");
  cmd_sim->add_flag("--no-augment", sim.no_augment, "skip the augmented estimator");
  cmd_sim->add_flag("--no-unaugment", sim.no_unaugment, "skip the unaugmented estimator");
  cmd_sim->add_option("--theta0", sim.theta0, "analytic design: propensity intercept");
  cmd_sim->add_option("--theta1", sim.theta1, "analytic design: instrument strength");
  cmd_sim->add_option("--beta1", sim.beta1, "analytic design: beta1");
  cmd_sim->add_option("--beta2", sim.beta2, "analytic design: precision coefficient");
  cmd_sim->add_option("--gamma1", sim.gamma1, "analytic design: gamma1");
  cmd_sim->add_option("--sigma", sim.sigma, "analytic design: outcome noise SD");

  ReleffArgs rel;
  auto* cmd_rel = app.add_subcommand("releff", "closed-form relative efficiency");
  cmd_rel->add_option("--theta1", rel.theta1, "instrument strength");
  cmd_rel->add_option("--beta2", rel.beta2, "standardized precision coefficient");
  cmd_rel->add_option("--beta1", rel.beta1, "standardized beta1");
  cmd_rel->add_option("--gamma1", rel.gamma1, "standardized gamma1");
  cmd_rel->add_option("--theta0", rel.theta0, "propensity intercept");
  cmd_rel->add_option("--m,--matches", rel.matches, "matches per unit M")
      ->check(CLI::PositiveNumber);
  cmd_rel->add_option("--theta1-grid", rel.theta1_grid, "sweep theta1 over lo:hi:step");
  cmd_rel->add_option("--beta2-grid", rel.beta2_grid, "sweep beta2 over lo:hi:step");
  cmd_rel->add_option("--output", rel.output, "output path (default stdout)");
  cmd_rel->add_option("--format", rel.format, "output format: json or csv")
      ->check(CLI::IsMember({"json", "csv"}));

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    if (e.get_exit_code() == 0) return app.exit(e);  // --help
    std::cerr << error_json("validation", e.what()).dump() << "\n";
    return 2;
  }

  try {
    if (cmd_est->parsed()) return run_estimate(est);
    if (cmd_sim->parsed()) return run_simulate(sim);
    return run_releff(rel);
  } catch (const augmatch::validation_error& e) {
    std::cerr << error_json("validation", e.what()).dump() << "\n";
    return 2;
  } catch (const augmatch::numerical_error& e) {
    std::cerr << error_json("numerical", e.what()).dump() << "\n";
    return 3;
  } catch (const std::exception& e) {
    std::cerr << error_json("numerical", e.what()).dump() << "\n";
    return 3;
  }
}
