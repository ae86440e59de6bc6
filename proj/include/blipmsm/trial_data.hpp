#pragma once

#include <Eigen/Dense>
#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "blipmsm/errors.hpp"
#include "blipmsm/learners.hpp"

namespace blipmsm {

// Two-stage sequentially randomized trial data. Treatment/outcome columns are
// strictly 0/1; a2 may carry the missing sentinel for subjects whose design
// cell is never re-randomized. Immutable after construction.
struct trial_dataset {
  static constexpr int a2_missing = -1;

  Eigen::MatrixXd baseline;  // n x p, L(0)
  Eigen::VectorXi a1;        // first-stage treatment
  Eigen::VectorXi y1;        // first-stage outcome (1 = success)
  Eigen::MatrixXd w1;        // n x q time-varying covariates (q may be 0)
  Eigen::VectorXi a2;        // second-stage treatment, or a2_missing
  Eigen::VectorXi y2;        // final outcome

  std::vector<std::string> baseline_names;
  std::vector<std::string> w1_names;
  // Original row indices; identity for freshly built data, preserved by subsetting.
  std::vector<int> source_rows;

  int n() const { return static_cast<int>(a1.size()); }
  int p() const { return static_cast<int>(baseline.cols()); }
  int q() const { return static_cast<int>(w1.cols()); }

  void validate() const;
};

enum class h_mode { unit, treatment_prevalence };
enum class stage2_scope { all, initiators };

// Column-role assignment for CSV ingestion.
struct role_map {
  std::string a1 = "a1", y1 = "y1", y2 = "y2";
  std::string a2 = "a2";  // may be empty for designs with no second stage
  std::vector<std::string> baseline;
  std::vector<std::string> w1;
};

struct analysis_config {
  role_map roles;

  // Design-stage randomization knowledge. known_g1 is P(A(1)=1) (stage-1
  // randomization is marginal here); known_g2 maps (a1,y1) cells to
  // P(A(2)=1 | A(1)=a1, Y(1)=y1) for the cells that are re-randomized.
  std::optional<double> known_g1;
  std::optional<std::map<std::pair<int, int>, double>> known_g2;

  h_mode h_weight_mode = h_mode::unit;
  double q_bound = 1e-4;
  std::uint64_t seed = 1;
  int folds = 10;

  stage2_scope scope = stage2_scope::initiators;

  std::vector<learner_spec> blip_library;  // default set in normalize()
  std::vector<learner_spec> q2_library;

  // Covariate names for the estimated second-stage treatment model; empty
  // means intercept-only. Ignored when known_g2 is given.
  std::vector<std::string> g2_covariates;

  // H(s) columns entering the second-stage outcome regression; empty means
  // all of H(s).
  std::vector<std::string> q2_covariates;

  // Optional precision covariates for the stage-1 average-effect TMLE.
  std::vector<std::string> adjust_covariates;

  void validate() const;
  // Fills defaulted libraries and checks invariants.
  void normalize();
};

// Parse a JSON config file; environment variables with the given prefix
// (e.g. BLIPMSM_SEED) override scalar keys.
analysis_config load_config(const std::string& path, const std::string& env_prefix = "BLIPMSM_");
analysis_config config_from_json_text(const std::string& text, const std::string& env_prefix = "");

trial_dataset load_csv(const std::string& path, const analysis_config& config);
void write_csv(const std::string& path, const trial_dataset& data, const role_map& roles);

// Rows with a1 = 1 only; original row indices kept as metadata.
trial_dataset subset_initiators(const trial_dataset& data);

// Deterministic k-fold assignment; sizes differ by at most one.
std::vector<int> make_folds(int n, int k, std::uint64_t seed);

}  // namespace blipmsm
