#include "blipmsm/cate.hpp"

#include "blipmsm/rng.hpp"

namespace blipmsm {

namespace {

Eigen::MatrixXd with_treatment(const Eigen::MatrixXd& history, double a) {
  Eigen::MatrixXd x(history.rows(), history.cols() + 1);
  x.col(0).setConstant(a);
  x.rightCols(history.cols()) = history;
  return x;
}

}  // namespace

Eigen::VectorXd blip_estimate::evaluate(const Eigen::MatrixXd& history) const {
  return model.predict(with_treatment(history, 1.0)) - model.predict(with_treatment(history, 0.0));
}

blip_estimate fit_blip(const trial_dataset& data, const analysis_config& config) {
  data.validate();
  const int n = data.n();

  int treated = 0;
  for (int i = 0; i < n; ++i) treated += data.a1[i];
  if (treated == 0 || treated == n) {
    throw error(errc::positivity_violation, "both first-stage arms must be represented");
  }

  learner_task task;
  task.features.resize(n, data.baseline.cols() + 1);
  for (int i = 0; i < n; ++i) task.features(i, 0) = data.a1[i];
  task.features.rightCols(data.baseline.cols()) = data.baseline;
  task.names.push_back("a1");
  for (const auto& name : data.baseline_names) task.names.push_back(name);
  task.treatment_col = 0;

  Eigen::VectorXd y = data.y1.cast<double>();
  Eigen::VectorXd w = Eigen::VectorXd::Ones(n);
  std::vector<int> folds = make_folds(n, config.folds, derive_seed(config.seed, 0, stream::folds));

  blip_estimate blip;
  blip.q_bound = config.q_bound;
  blip.model = fit_super_learner(task, y, w, config.blip_library, folds, config.q_bound,
                                 derive_seed(config.seed, 0, stream::analysis));
  blip.values = blip.model.predict(with_treatment(data.baseline, 1.0)) -
                blip.model.predict(with_treatment(data.baseline, 0.0));
  blip.history_cols = data.baseline_names;
  return blip;
}

double true_blip(dgp::dgp_id id, const Eigen::VectorXd& baseline) {
  switch (id) {
    case dgp::dgp_id::sim1:
      if (baseline.size() != 2) {
        throw error(errc::dimension_mismatch, "sim1 blip expects (L1, L2)");
      }
      return dgp::sim1::blip(baseline[0], baseline[1]);
    case dgp::dgp_id::sim2:
      if (baseline.size() != 3) {
        throw error(errc::dimension_mismatch, "sim2 blip expects (L1, L2, L3)");
      }
      return dgp::sim2::blip(baseline[0], baseline[1], baseline[2]);
  }
  throw error(errc::unknown_dgp, "unrecognized DGP identifier");
}

}  // namespace blipmsm
