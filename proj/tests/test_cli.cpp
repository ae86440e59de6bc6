#include <doctest.h>

#include <json.hpp>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <unistd.h>

#include "blipmsm/simulation.hpp"
#include "blipmsm/trial_data.hpp"

using namespace blipmsm;
namespace fs = std::filesystem;
using nlohmann::json;

namespace {

int run_cli(const std::string& args) {
  const std::string cmd = std::string(BLIPMSM_CLI_PATH) + " " + args + " >/dev/null 2>&1";
  const int status = std::system(cmd.c_str());
  return WEXITSTATUS(status);
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

struct sandbox {
  fs::path dir;
  sandbox() {
    dir = fs::temp_directory_path() / ("blipmsm_cli_" + std::to_string(::getpid()));
    fs::create_directories(dir);
  }
  ~sandbox() { fs::remove_all(dir); }
};

void write_sim2_fixture(const fs::path& data_path, const fs::path& config_path,
                        const std::string& extra_config = "") {
  trial_dataset data = simulate_dgp2(1815, 4711);
  role_map roles;
  roles.baseline = {"l1", "l2", "l3"};
  roles.w1 = {"w1"};
  write_csv(data_path.string(), data, roles);

  std::ofstream(config_path) << R"({
    "roles": {"baseline": ["l1", "l2", "l3"], "w1": ["w1"]},
    "known_g": {"g1": 0.333333, "g2": {"1,1": 0.333333, "1,0": 0.5}},
    "second_stage_scope": "initiators",
    "seed": 5,
    "folds": 10,
    "blip_library": [
      {"learner": "mean"},
      {"learner": "logistic_interact", "covariate": 0},
      {"learner": "logistic_interact_all"},
      {"learner": "bagged_trees", "n_trees": 50}
    ],
    "q2_library": [{"learner": "logistic_main"}],
    "g2_covariates": ["y1"])" << extra_config
                              << "\n}\n";
}

}  // namespace

TEST_CASE("analyze produces a complete report on ADAPT-R-shaped data") {
  sandbox sb;
  const fs::path data = sb.dir / "trial.csv";
  const fs::path config = sb.dir / "config.json";
  const fs::path out = sb.dir / "out";
  write_sim2_fixture(data, config);

  const int rc = run_cli("analyze --data " + data.string() + " --config " + config.string() +
                         " --out " + out.string() + " --marginal-effects --linear-msm");
  REQUIRE(rc == 0);

  json report = json::parse(slurp(out / "report.json"));
  for (const char* k : {"beta0", "beta1", "beta2", "beta3"}) {
    CHECK(report["coefficients"].contains(k));
    for (const char* f : {"estimate", "se", "ci_lo", "ci_hi", "p_value"}) {
      CHECK(report["coefficients"][k].contains(f));
    }
  }
  CHECK(report["h_weight_mode"] == "unit");
  CHECK(report["diagnostics"]["max_abs_ic_mean"].get<double>() < 1e-6);
  CHECK(report.contains("marginal_effects"));
  CHECK(report.contains("linear_msm"));

  CHECK(fs::exists(out / "blip_hist.csv"));
  CHECK(fs::exists(out / "msm_curve.csv"));
  json man = json::parse(slurp(out / "run_manifest.json"));
  CHECK(man["status"] == "ok");
  CHECK(man["outputs"].size() == 3);

  SUBCASE("identical invocations reproduce identical numbers") {
    const fs::path out2 = sb.dir / "out2";
    REQUIRE(run_cli("analyze --data " + data.string() + " --config " + config.string() +
                    " --out " + out2.string()) == 0);
    json r2 = json::parse(slurp(out2 / "report.json"));
    CHECK(report["coefficients"] == r2["coefficients"]);
    CHECK(slurp(out / "blip_hist.csv") == slurp(out2 / "blip_hist.csv"));
  }
}

TEST_CASE("analyze records the stabilizing-weight mode") {
  sandbox sb;
  const fs::path data = sb.dir / "trial.csv";
  const fs::path config = sb.dir / "config.json";
  write_sim2_fixture(data, config, ",\n    \"h_weight_mode\": \"treatment_prevalence\"");
  const fs::path out = sb.dir / "out";
  REQUIRE(run_cli("analyze --data " + data.string() + " --config " + config.string() +
                  " --out " + out.string()) == 0);
  json report = json::parse(slurp(out / "report.json"));
  CHECK(report["h_weight_mode"] == "treatment_prevalence");
}

TEST_CASE("constant blip exits with the estimation code and message") {
  sandbox sb;
  const fs::path data = sb.dir / "trial.csv";
  const fs::path config = sb.dir / "config.json";
  const fs::path out = sb.dir / "out";
  write_sim2_fixture(data, config);
  // A mean-only library cannot vary with covariates: the blip is constant.
  std::ofstream(config) << R"({
    "roles": {"baseline": ["l1", "l2", "l3"], "w1": ["w1"]},
    "second_stage_scope": "initiators",
    "blip_library": [{"learner": "mean"}],
    "g2_covariates": ["y1"]
  })";
  const int rc = run_cli("analyze --data " + data.string() + " --config " + config.string() +
                         " --out " + out.string());
  CHECK(rc == 3);
  json man = json::parse(slurp(out / "run_manifest.json"));
  CHECK(man["status"] == "error");
  CHECK(man["error"].get<std::string>().find("DegenerateBlip") != std::string::npos);
}

TEST_CASE("missing data file exits with the I/O code and writes a manifest") {
  sandbox sb;
  const fs::path config = sb.dir / "config.json";
  std::ofstream(config) << R"({"roles": {"baseline": ["l1"]}})";
  const fs::path out = sb.dir / "out";
  const int rc = run_cli("analyze --data " + (sb.dir / "absent.csv").string() + " --config " +
                         config.string() + " --out " + out.string());
  CHECK(rc == 4);
  json man = json::parse(slurp(out / "run_manifest.json"));
  CHECK(man["status"] == "error");
  CHECK(man["error_stage"] == "ingestion");
}

TEST_CASE("simulate writes report files with a well-formed summary") {
  sandbox sb;
  const fs::path out = sb.dir / "mc";
  REQUIRE(run_cli("simulate --scenario sim1_dgp1 --reps 10 --n 500 --seed 3 --jobs 2 --out " +
                  out.string()) == 0);
  CHECK(fs::exists(out / "mc_report.json"));
  CHECK(fs::exists(out / "replicates.csv"));

  const std::string summary = slurp(out / "summary.csv");
  CHECK(summary.find("scenario,truth_reading,bias,variance,mse,coverage_pct,power_pct") == 0);
  CHECK(summary.find("sim1_dgp1,data_adaptive") != std::string::npos);
  CHECK(summary.find("sim1_dgp1,fixed_reference") != std::string::npos);

  json rep = json::parse(slurp(out / "mc_report.json"));
  CHECK(rep["n_ok"] == 10);
  CHECK(rep["failures"] == 0);

  SUBCASE("identical runs produce identical replicate files") {
    const fs::path out2 = sb.dir / "mc2";
    REQUIRE(run_cli("simulate --scenario sim1_dgp1 --reps 10 --n 500 --seed 3 --jobs 1 --out " +
                    out2.string()) == 0);
    CHECK(slurp(out / "replicates.csv") == slurp(out2 / "replicates.csv"));
  }
}

TEST_CASE("unknown scenario exits with the validation code") {
  sandbox sb;
  CHECK(run_cli("simulate --scenario sim9 --reps 4 --n 100 --out " +
                (sb.dir / "x").string()) == 2);
  CHECK(run_cli("oracle --scenario nope") == 2);
}

TEST_CASE("oracle emits a machine-readable file when asked") {
  sandbox sb;
  const fs::path out = sb.dir / "oracle";
  REQUIRE(run_cli("oracle --scenario sim1_v1 --out " + out.string()) == 0);
  json j = json::parse(slurp(out / "oracle.json"));
  CHECK(j["true_beta3"].get<double>() == doctest::Approx(-1.92).epsilon(0.03));
  CHECK(j["blip_cells"].size() == 4);
}
