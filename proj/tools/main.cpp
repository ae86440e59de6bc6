// Command-line front end: batch analysis, simulation studies, and oracle
// constants, with a run manifest written for every invocation.

#include <CLI11.hpp>
#include <json.hpp>

#include <chrono>
#include <filesystem>
#include <fstream>
#include <iostream>

#include "blipmsm/cate.hpp"
#include "blipmsm/marginal_effects.hpp"
#include "blipmsm/msm_tmle.hpp"
#include "blipmsm/simulation.hpp"
#include "blipmsm/stats.hpp"
#include "blipmsm/trial_data.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace blipmsm;

namespace {

constexpr const char* kVersion = "0.1.0";

std::string iso_now() {
  const auto now = std::chrono::system_clock::now();
  const std::time_t t = std::chrono::system_clock::to_time_t(now);
  char buf[32];
  std::strftime(buf, sizeof(buf), "%FT%TZ", std::gmtime(&t));
  return buf;
}

int exit_code_for(errc code) {
  switch (code) {
    case errc::missing_column:
    case errc::non_binary_value:
    case errc::empty_dataset:
    case errc::empty_subset:
    case errc::invalid_fold_count:
    case errc::invalid_config:
    case errc::unknown_dgp:
    case errc::dimension_mismatch:
    case errc::empty_library:
    case errc::duplicate_learner:
      return 2;
    case errc::io_error:
      return 4;
    default:
      return 3;  // estimation failure
  }
}

struct manifest {
  std::string command;
  json settings;
  std::uint64_t seed = 0;
  std::string started_at = iso_now();
  std::vector<std::string> outputs;

  void write(const std::string& out_dir, const std::string& status,
             const std::string& error_text = "", const std::string& stage = "") const {
    std::error_code ec;
    fs::create_directories(out_dir, ec);
    json j;
    j["command"] = command;
    j["settings"] = settings;
    j["seed"] = seed;
    j["version"] = kVersion;
    j["started_at"] = started_at;
    j["finished_at"] = iso_now();
    j["outputs"] = outputs;
    j["status"] = status;
    if (!error_text.empty()) {
      j["error"] = error_text;
      j["error_stage"] = stage;
    }
    std::ofstream(fs::path(out_dir) / "run_manifest.json") << j.dump(2) << "\n";
  }
};

json coef_json(double est, double se, double lo, double hi, double p) {
  return {{"estimate", est}, {"se", se}, {"ci_lo", lo}, {"ci_hi", hi}, {"p_value", p}};
}

json effect_json(const effect_estimate& e) {
  return {{"label", e.label},
          {"estimate", e.estimate},
          {"se", e.se},
          {"ci_lo", e.ci_lo},
          {"ci_hi", e.ci_hi},
          {"p_value", e.pvalue},
          {"score_residual", e.score_residual}};
}

json msm_json(const msm_fit& fit) {
  json j;
  j["n_total"] = fit.n_total;
  j["n_analysis"] = fit.n_analysis;
  j["h_weight_mode"] = fit.h_used == h_mode::unit ? "unit" : "treatment_prevalence";
  const char* names[4] = {"beta0", "beta1", "beta2", "beta3"};
  for (int k = 0; k < 4; ++k) {
    j["coefficients"][names[k]] =
        coef_json(fit.beta[k], fit.se[k], fit.ci_lo[k], fit.ci_hi[k], fit.pvalue[k]);
  }
  j["diagnostics"] = {
      {"epsilon", {fit.eps[0], fit.eps[1], fit.eps[2], fit.eps[3]}},
      {"g_min", fit.g_min},
      {"converged", fit.converged},
      {"max_abs_ic_mean", fit.ic.colwise().mean().cwiseAbs().maxCoeff()},
      {"blip_min", fit.blip_frame.minCoeff()},
      {"blip_max", fit.blip_frame.maxCoeff()},
  };
  return j;
}

int cmd_analyze(const std::string& data_path, const std::string& config_path,
                const std::string& out_dir, std::uint64_t seed_override, bool seed_given,
                bool with_marginals, bool with_linear_msm) {
  manifest man;
  man.command = "analyze";
  man.settings = {{"data", data_path}, {"config", config_path}, {"out", out_dir},
                  {"marginal_effects", with_marginals}, {"linear_msm", with_linear_msm}};
  std::string stage = "configuration";
  try {
    analysis_config cfg = load_config(config_path);
    if (seed_given) cfg.seed = seed_override;
    man.seed = cfg.seed;

    stage = "ingestion";
    trial_dataset data = load_csv(data_path, cfg);

    stage = "estimation";
    blip_estimate blip = fit_blip(data, cfg);
    msm_fit fit = tmle_msm(data, blip, cfg);

    json report = msm_json(fit);
    report["seed"] = cfg.seed;
    if (with_marginals) {
      report["marginal_effects"] = {
          {"stage1_risk_difference", effect_json(ate_tmle(data, cfg))},
          {"second_stage_mean_a2_1", effect_json(two_stage_mean_tmle(data, cfg, 1))},
          {"second_stage_mean_a2_0", effect_json(two_stage_mean_tmle(data, cfg, 0))},
          {"second_stage_risk_difference", effect_json(second_stage_rd_tmle(data, cfg))},
          {"benefit_minus_harm", effect_json(benefit_harm_contrast(data, cfg))},
      };
    }
    if (with_linear_msm) {
      linear_msm_fit lin = linear_msm_transformed_outcome(data, cfg);
      report["linear_msm"] = {
          {"beta0", coef_json(lin.beta[0], lin.se[0], lin.ci_lo[0], lin.ci_hi[0], lin.pvalue[0])},
          {"beta1", coef_json(lin.beta[1], lin.se[1], lin.ci_lo[1], lin.ci_hi[1], lin.pvalue[1])},
          {"n_analysis", lin.n_analysis}};
    }

    stage = "reporting";
    fs::create_directories(out_dir);
    const std::string report_path = (fs::path(out_dir) / "report.json").string();
    std::ofstream(report_path) << report.dump(2) << "\n";
    man.outputs.push_back(report_path);

    // Blip histogram data: one row per subject.
    const std::string blip_path = (fs::path(out_dir) / "blip_hist.csv").string();
    {
      std::ofstream f(blip_path);
      f.precision(17);
      f << "subject_index,blip\n";
      for (int i = 0; i < data.n(); ++i) {
        f << data.source_rows[static_cast<std::size_t>(i)] << "," << blip.values[i] << "\n";
      }
    }
    man.outputs.push_back(blip_path);

    // Fitted working-model curves over a blip grid.
    const std::string curve_path = (fs::path(out_dir) / "msm_curve.csv").string();
    {
      std::ofstream f(curve_path);
      f.precision(17);
      f << "blip,m_a0,m_a1\n";
      const double lo = fit.blip_frame.minCoeff(), hi = fit.blip_frame.maxCoeff();
      const int grid = 101;
      for (int k = 0; k < grid; ++k) {
        const double b = lo + (hi - lo) * k / (grid - 1);
        f << b << "," << msm_curve(fit.beta, 0, b) << "," << msm_curve(fit.beta, 1, b) << "\n";
      }
    }
    man.outputs.push_back(curve_path);

    man.write(out_dir, "ok");
    std::cout << "beta3 = " << fit.beta[3] << " (se " << fit.se[3] << ", 95% CI ["
              << fit.ci_lo[3] << ", " << fit.ci_hi[3] << "], p " << fit.pvalue[3] << ")\n";
    return 0;
  } catch (const error& e) {
    man.write(out_dir, "error", e.what(), stage);
    std::cerr << e.what() << "\n";
    return exit_code_for(e.code());
  } catch (const std::exception& e) {
    man.write(out_dir, "error", e.what(), stage);
    std::cerr << e.what() << "\n";
    return 3;
  }
}

int cmd_simulate(const std::string& scenario_name, int reps, int n, std::uint64_t seed,
                 const std::string& out_dir, int jobs, double alpha, bool null_y2, int n_truth,
                 int n_oracle) {
  manifest man;
  man.command = "simulate";
  man.seed = seed;
  man.settings = {{"scenario", scenario_name}, {"reps", reps},     {"n", n},
                  {"jobs", jobs},              {"alpha", alpha},   {"null_y2", null_y2},
                  {"n_truth", n_truth},        {"n_oracle", n_oracle}};
  std::string stage = "configuration";
  try {
    mc_config mc;
    mc.scen = parse_scenario(scenario_name);
    mc.reps = reps;
    mc.n = n;
    mc.seed = seed;
    mc.jobs = jobs;
    mc.alpha = alpha;
    mc.null_y2 = null_y2;
    mc.n_truth = n_truth;
    mc.n_oracle = n_oracle;
    mc.validate();

    stage = "simulation";
    mc_report report = run_monte_carlo(mc);

    stage = "reporting";
    write_mc_outputs(report, out_dir);
    for (const char* f : {"mc_report.json", "replicates.csv", "summary.csv"}) {
      man.outputs.push_back((fs::path(out_dir) / f).string());
    }
    man.write(out_dir, "ok");
    std::cout << scenario_name << ": bias(da) " << report.bias_da << ", var(fixed) "
              << report.variance_fixed << ", coverage(da) " << report.coverage_da
              << "%, power " << report.power << "% over " << report.n_ok << " replicates ("
              << report.elapsed_seconds << "s)\n";
    return 0;
  } catch (const error& e) {
    man.write(out_dir, "error", e.what(), stage);
    std::cerr << e.what() << "\n";
    return exit_code_for(e.code());
  } catch (const std::exception& e) {
    man.write(out_dir, "error", e.what(), stage);
    std::cerr << e.what() << "\n";
    return 3;
  }
}

int cmd_oracle(const std::string& scenario_name, int n_oracle, std::uint64_t seed,
               const std::string& out_dir) {
  manifest man;
  man.command = "oracle";
  man.seed = seed;
  man.settings = {{"scenario", scenario_name}, {"n_oracle", n_oracle}};
  try {
    const scenario s = parse_scenario(scenario_name);
    json j;
    j["scenario"] = scenario_name;
    if (s == scenario::sim1_dgp1 || s == scenario::sim1_dgp2) {
      const int q = s == scenario::sim1_dgp1 ? 1 : 2;
      const auto cells = sim1_oracle::blip_cells();
      std::cout << "blip cells (0,0) (1,0) (0,1) (1,1): " << cells[0] << " " << cells[1] << " "
                << cells[2] << " " << cells[3] << "\n";
      std::cout << "mean blip / stage-1 RD: " << sim1_oracle::mean_blip() << "\n";
      std::cout << "second-stage RD: " << sim1_oracle::second_stage_rd(q) << "\n";
      const auto [rd_pos, rd_neg] = sim1_oracle::conditional_rds(q);
      std::cout << "RD | blip>0: " << rd_pos << "   RD | blip<0: " << rd_neg << "\n";
      const Eigen::Vector4d beta = sim1_oracle::true_beta(q);
      std::cout << "true beta3 (B_n = B_0): " << beta[3] << "\n";
      j["blip_cells"] = {cells[0], cells[1], cells[2], cells[3]};
      j["mean_blip"] = sim1_oracle::mean_blip();
      j["second_stage_rd"] = sim1_oracle::second_stage_rd(q);
      j["rd_given_blip_pos"] = rd_pos;
      j["rd_given_blip_neg"] = rd_neg;
      j["true_beta3"] = beta[3];
    } else {
      const sim2_oracle_values v = sim2_oracles(n_oracle, seed);
      std::cout << "stage-1 RD: " << v.first_stage_rd << "\n";
      std::cout << "second-stage RD (a1=1): " << v.second_stage_rd << "\n";
      std::cout << "true beta3 (B_n = B_0): " << v.true_beta[3] << "\n";
      j["first_stage_rd"] = v.first_stage_rd;
      j["second_stage_rd"] = v.second_stage_rd;
      j["true_beta3"] = v.true_beta[3];
    }
    if (!out_dir.empty()) {
      fs::create_directories(out_dir);
      const std::string path = (fs::path(out_dir) / "oracle.json").string();
      std::ofstream(path) << j.dump(2) << "\n";
      man.outputs.push_back(path);
      man.write(out_dir, "ok");
    }
    return 0;
  } catch (const error& e) {
    if (!out_dir.empty()) man.write(out_dir, "error", e.what(), "oracle");
    std::cerr << e.what() << "\n";
    return exit_code_for(e.code());
  }
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"TMLE for effect modification of a second-stage treatment by an estimated "
               "first-stage blip, with a simulation harness"};
  app.require_subcommand(1);

  std::string data_path, config_path, out_dir = "blipmsm_out", scenario_name;
  std::uint64_t seed = 1;
  bool seed_given = false, with_marginals = false, with_linear = false, null_y2 = false;
  int reps = 1000, n = 1815, jobs = 0, n_truth = 200000, n_oracle = 1000000;
  double alpha = 0.05;

  auto* analyze = app.add_subcommand("analyze", "run the blip + MSM-TMLE pipeline on a CSV");
  analyze->add_option("--data", data_path, "trial data CSV")->required();
  analyze->add_option("--config", config_path, "analysis config JSON")->required();
  analyze->add_option("--out", out_dir, "output directory");
  auto* seed_opt = analyze->add_option("--seed", seed, "override the config seed");
  analyze->add_flag("--marginal-effects", with_marginals, "also estimate average effects");
  analyze->add_flag("--linear-msm", with_linear, "also fit the transformed-outcome linear MSM");
  analyze->add_option("--jobs", jobs, "parallelism degree (reserved)");

  auto* simulate = app.add_subcommand("simulate", "Monte Carlo performance study");
  simulate->add_option("--scenario", scenario_name, "sim1_dgp1 | sim1_dgp2 | sim2")->required();
  simulate->add_option("--reps", reps, "replicates");
  simulate->add_option("--n", n, "sample size per replicate");
  simulate->add_option("--seed", seed, "master seed");
  simulate->add_option("--out", out_dir, "output directory");
  simulate->add_option("--jobs", jobs, "worker threads (default: all cores)");
  simulate->add_option("--alpha", alpha, "test level");
  simulate->add_flag("--null-y2", null_y2, "replace Y(2) with fair coins");
  simulate->add_option("--n-truth", n_truth, "per-replicate truth sample (sim2)");
  simulate->add_option("--n-oracle", n_oracle, "fixed-truth oracle sample (sim2)");

  auto* oracle = app.add_subcommand("oracle", "print oracle constants for a scenario");
  oracle->add_option("--scenario", scenario_name, "sim1_v1 | sim1_v2 | sim2")->required();
  oracle->add_option("--n-oracle", n_oracle, "Monte Carlo size (sim2)");
  oracle->add_option("--seed", seed, "oracle seed");
  std::string oracle_out;
  oracle->add_option("--out", oracle_out, "optional output directory for oracle.json");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 2;
  }
  seed_given = seed_opt->count() > 0;

  if (analyze->parsed()) {
    return cmd_analyze(data_path, config_path, out_dir, seed, seed_given, with_marginals,
                       with_linear);
  }
  if (simulate->parsed()) {
    return cmd_simulate(scenario_name, reps, n, seed, out_dir, jobs, alpha, null_y2, n_truth,
                        n_oracle);
  }
  return cmd_oracle(scenario_name, n_oracle, seed, oracle_out);
}
